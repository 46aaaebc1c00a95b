import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")

#: ``(criterion, passed, detail)`` tuples filled in by test_acceptance.py.
ACCEPTANCE_LINES = []


def pytest_configure(config):
    if "PERCEPTBIAS_CACHE_DIR" not in os.environ:
        cache = Path(config.rootpath) / ".pytest_cache" / "perceptbias-truth"
        os.environ["PERCEPTBIAS_CACHE_DIR"] = str(cache)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"{name}: {status} | {detail}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
