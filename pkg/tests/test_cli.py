import csv
import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from perceptbias.cli import RunManifest, main, run_pipeline
from perceptbias.records import read_panel_frame

from cli_helpers import GOLDEN


def _pipeline(out, *extra):
    assert main(["ingest", "--fixture", "--out-dir", str(out)]) == 0
    assert main(["link", "--input", str(out / "records.csv"), "--out-dir", str(out)]) == 0
    return out / "panels.csv"


@pytest.fixture(scope="module")
def fixture_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    return out, _pipeline(out)


def test_describe_matches_golden(fixture_run, capsys):
    out, panels = fixture_run
    assert main(["describe", "--input", str(panels), "--out-dir", str(out)]) == 0
    golden = (GOLDEN / "describe_fixture.txt").read_bytes()
    assert (out / "describe.txt").read_bytes() == golden
    assert capsys.readouterr().out.encode() == golden


def test_rerun_gives_identical_manifests(tmp_path):
    manifests = []
    for _ in range(2):
        _pipeline(tmp_path)
        run_pipeline(["describe", "--input", str(tmp_path / "panels.csv"), "--out-dir", str(tmp_path)])
        manifests.append(RunManifest.read(tmp_path / "manifest.json"))
    assert manifests[0].comparable() == manifests[1].comparable()
    m = manifests[0]
    assert m.version and m.timestamp and set(m.outputs) == {"describe.txt", "cohort_stats.json"}
    assert list(m.inputs.values())[0] != ""


def test_simulate_manifest_reproducible(tmp_path):
    argv = ["simulate", "--scenario", "null", "--n-drivers", "300", "--seed", "4", "--out-dir", str(tmp_path)]
    first = run_pipeline(argv)
    second = run_pipeline(argv)
    assert first.comparable() == second.comparable()
    assert first.seeds == [4] and "panels.csv" in first.outputs and "truth.json" in first.outputs
    other = run_pipeline(argv[:-3] + ["5", "--out-dir", str(tmp_path)])
    assert other.outputs["panels.csv"] != first.outputs["panels.csv"]


def test_unknown_subcommand_exits_nonzero():
    proc = subprocess.run([sys.executable, "-m", "perceptbias", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode != 0 and "invalid choice" in proc.stderr


@pytest.mark.parametrize("argv", [
    ["fit", "--input", "x.csv", "--seed", "3"],
    ["fit", "--input", "x.csv", "--controls", "none", "--controls", "officer"],
    ["describe"],
    ["link"],
])
def test_usage_errors_exit_two(argv, tmp_path, capsys):
    assert main(argv + ["--out-dir", str(tmp_path)]) == 2
    assert "usage:" in capsys.readouterr().err


def test_incompatible_state_is_usage_error(fixture_run, capsys):
    out, panels = fixture_run
    assert main(["fit", "--input", str(panels), "--state", "tx", "--outcome", "arrest",
                 "--out-dir", str(out)]) == 2
    assert main(["fit", "--input", str(panels), "--state", "co", "--controls", "duration",
                 "--out-dir", str(out)]) == 2


def test_missing_input_file_exits_one(tmp_path, capsys):
    assert main(["describe", "--input", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1


def test_bad_thread_setting(tmp_path, monkeypatch):
    monkeypatch.setenv("PERCEPTBIAS_THREADS", "zero")
    assert main(["simulate", "--n-drivers", "10", "--no-truth", "--out-dir", str(tmp_path)]) == 2
    monkeypatch.setenv("PERCEPTBIAS_THREADS", "1")
    assert main(["simulate", "--n-drivers", "10", "--no-truth", "--out-dir", str(tmp_path)]) == 0


def test_simulate_then_fit_with_plot_data(tmp_path, capsys):
    assert main(["simulate", "--scenario", "taste_discrimination", "--n-drivers", "3000", "--seed", "1",
                 "--out-dir", str(tmp_path)]) == 0
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["delta"] > 0
    frame = read_panel_frame(tmp_path / "panels.csv")
    assert frame["driver_id"].nunique() == 3000
    assert main(["fit", "--input", str(tmp_path / "panels.csv"), "--no-cohort", "--plot-data",
                 "--out-dir", str(tmp_path)]) == 0
    fitted = json.loads((tmp_path / "fit.json").read_text())
    with open(tmp_path / "plot_data.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    row = rows[0]
    assert set(row) == {"label", "states", "estimate", "ci_lo", "ci_hi", "n_obs"}
    assert float(row["estimate"]) == fitted["delta_hat"]
    assert float(row["ci_lo"]) < float(row["estimate"]) < float(row["ci_hi"])
    assert int(row["n_obs"]) == fitted["n_obs_used"] and row["states"] == "AZ"


def test_fit_arrest_restricts_states(fixture_run, capsys):
    out, panels = fixture_run
    assert main(["fit", "--input", str(panels), "--outcome", "arrest", "--no-cohort", "--plot-data", "arr.csv",
                 "--out-dir", str(out)]) == 0
    row = pd.read_csv(out / "arr.csv").iloc[0]
    assert row["states"] == "AZ+CO"


def test_report_on_simulated_data(tmp_path, capsys):
    assert main(["simulate", "--scenario", "null", "--n-drivers", "1500", "--seed", "2", "--no-truth",
                 "--out-dir", str(tmp_path)]) == 0
    assert main(["report", "--input", str(tmp_path / "panels.csv"), "--out-dir", str(tmp_path)]) == 0
    report = (tmp_path / "report.md").read_text()
    assert "## Descriptive statistics" in report and "## Arrest rate" in report
    plot = pd.read_csv(tmp_path / "plot_data.csv")
    assert list(plot.columns) == ["label", "states", "estimate", "ci_lo", "ci_hi", "n_obs"]
    assert len(plot) >= 12
    assert np.all(plot["ci_lo"] <= plot["estimate"]) and np.all(plot["estimate"] <= plot["ci_hi"])
    fits = json.loads((tmp_path / "fits.json").read_text())
    assert len(fits) == len(plot)
