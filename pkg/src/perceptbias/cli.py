"""Batch command-line interface: ingest, link, describe, fit, simulate, report.

Every subcommand writes into ``--out-dir`` and finishes by writing a
``manifest.json`` that records the command, input and output digests, config
hashes, seeds and package version. Intermediate stop tables use the canonical
panel format of :mod:`perceptbias.records`, so the output of ``link`` and of
``simulate`` can both be passed to ``describe``, ``fit`` and ``report``.

Set ``PERCEPTBIAS_THREADS`` to cap the number of BLAS/OpenMP threads (the
default leaves the machine's parallelism untouched).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import pandas as pd
from threadpoolctl import threadpool_limits

from . import __version__
from .cohorts import cohort_frames, descriptive_stats
from .design import ModelSpec
from .exceptions import PerceptBiasError
from .fitting import fit
from .ingest import StateConfig, apply_validity_filters, load_stops, write_rejections
from .linkage import link_drivers, remove_overmatched
from .records import STATES, read_panel_frame, read_records, write_panels, write_panel_frame, write_records
from .simulate import SimConfig, simulate_frame

log = logging.getLogger(__name__)

THREADS_ENV = "PERCEPTBIAS_THREADS"
SUBCOMMANDS = ("ingest", "link", "describe", "fit", "simulate", "report")

OUTCOME_FLAGS = {"search": "searched", "arrest": "arrested"}
ESTIMATOR_FLAGS = {"linear": "linear_fe", "feglm": "feglm_logit", "clogit": "conditional_logit"}
CONTROL_FLAGS = {"none": "none", "loctime": "location_time", "officer": "officer", "duration": "duration"}
ARREST_STATES = ("AZ", "CO")
DURATION_STATES = ("AZ",)

#: Control sets estimated by ``report`` for each outcome and estimator.
REPORT_CONTROL_SETS = (
    (),
    ("location_time",),
    ("officer",),
    ("location_time", "officer"),
)


class UsageError(Exception):
    """Flag combination that cannot be run."""


@dataclass
class RunManifest:
    """Provenance for one CLI invocation.

    Re-running with the same inputs and flags gives the same manifest apart
    from ``timestamp``.
    """

    command: list
    config_hashes: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    version: str = __version__
    seeds: list = field(default_factory=list)
    timestamp: str = ""
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        d = self.to_dict()
        d.pop("timestamp")
        return d

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _config_hash(config: StateConfig) -> str:
    payload = {
        "state": config.state, "columns": config.columns, "link_key": config.link_key,
        "race_map": config.race_map, "delimiter": config.delimiter,
        "date_formats": list(config.date_formats),
        "date_start": str(config.date_start), "date_end": str(config.date_end),
    }
    return _text_digest(json.dumps(payload, sort_keys=True))


def _states(flag: str) -> tuple:
    return STATES if flag == "all" else (flag.upper(),)


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def _write_json(path: Path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- stages -----------------------------------------------------------------


def _fixture_path(state: str) -> Path:
    return Path(str(resources.files("perceptbias.data").joinpath("fixture", f"{state.lower()}.csv")))


def cmd_ingest(args, manifest):
    states = _states(args.state)
    if args.fixture:
        inputs = {st: _fixture_path(st) for st in states}
    else:
        if not args.input:
            raise UsageError("ingest needs --input (or --fixture)")
        if len(args.input) != len(states):
            raise UsageError(f"--state {args.state} expects {len(states)} --input file(s), in AZ, CO, TX order")
        inputs = dict(zip(states, map(Path, args.input)))
    if args.config and len(states) != 1:
        raise UsageError("--config applies to a single --state")

    out = []
    all_records, report = [], {}
    for st, path in inputs.items():
        if not path.exists():
            raise FileNotFoundError(path)
        config = StateConfig.from_file(args.config) if args.config else StateConfig.bundled(st)
        manifest.config_hashes[st] = _config_hash(config)
        manifest.inputs[str(path)] = file_digest(path)
        records, rejections = load_stops(path, config)
        kept, filt = apply_validity_filters(records)
        out.append(args.out_dir / f"rejections_{st.lower()}.jsonl")
        write_rejections(rejections, out[-1])
        report[st] = {"n_rows": len(records) + len(rejections), "n_rejected": len(rejections),
                      **filt.to_dict()}
        all_records.extend(kept)
    out.append(args.out_dir / "records.csv")
    write_records(all_records, out[-1])
    out.append(_write_json(args.out_dir / "ingest_report.json", report))
    print(json.dumps(report, indent=2, sort_keys=True))
    return out


def cmd_link(args, manifest):
    if not args.input:
        raise UsageError("link needs --input records file(s)")
    records = []
    for path in map(Path, args.input):
        manifest.inputs[str(path)] = file_digest(path)
        records.extend(read_records(path))
    wanted = set(_states(args.state))
    panels, reports = [], {}
    for st in STATES:
        recs = [r for r in records if r.state == st]
        if st not in wanted or not recs:
            continue
        linked, rep = link_drivers(recs)
        kept, rep.n_removed_overmatch = remove_overmatched(linked, args.max_stops)
        panels.extend(kept)
        reports[st] = rep.to_dict()
    out = [args.out_dir / "panels.csv"]
    write_panels(panels, out[0])
    out.append(_write_json(args.out_dir / "linkage_report.json", reports))
    print(json.dumps(reports, indent=2, sort_keys=True))
    return out


def _load_panels(args, manifest) -> pd.DataFrame:
    if not args.input:
        raise UsageError(f"{args.command} needs --input panel file(s)")
    frames = []
    for path in map(Path, args.input):
        manifest.inputs[str(path)] = file_digest(path)
        frames.append(read_panel_frame(path))
    frame = pd.concat(frames, ignore_index=True)
    return frame.loc[frame["state"].isin(_states(args.state))].reset_index(drop=True)


def _cohort_options(args) -> dict:
    return {"exact": not args.superset, "allow_unknown": args.allow_unknown}


def cmd_describe(args, manifest):
    frame = _load_panels(args, manifest)
    stats = descriptive_stats(*cohort_frames(frame, **_cohort_options(args)))
    table = stats.to_table()
    out = [
        _write_text(args.out_dir / "describe.txt", table),
        _write_text(args.out_dir / "cohort_stats.json", stats.to_json() + "\n"),
    ]
    sys.stdout.write(table)
    return out


def _fit_states(states, outcome, controls, explicit):
    """States usable for an outcome/control combination; explicit conflicts are usage errors."""
    allowed = set(states)
    if outcome == "arrested":
        allowed &= set(ARREST_STATES)
    if "duration" in controls:
        allowed &= set(DURATION_STATES)
    if not allowed:
        raise UsageError(f"no state in {list(states)} records the data needed for "
                         f"outcome={outcome!r} with controls {sorted(controls)}")
    if explicit and allowed != set(states):
        raise UsageError(f"state {states[0]} cannot be used with outcome={outcome!r} "
                         f"and controls {sorted(controls)}")
    return tuple(s for s in STATES if s in allowed)


def _analysis_frame(frame, args):
    if args.no_cohort:
        return frame
    return cohort_frames(frame, **_cohort_options(args))[3]


def _plot_rows(results):
    return [{**r.plot_row(), "states": "+".join(st)} for st, r in results]


def _write_plot_data(path: Path, rows) -> Path:
    cols = ["label", "states", "estimate", "ci_lo", "ci_hi", "n_obs"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(row[k])) if k in ("estimate", "ci_lo", "ci_hi") else row[k])
                         for k in cols})
    return _write_text(path, buf.getvalue())


def _spec_from_args(args, controls):
    return ModelSpec(
        outcome=OUTCOME_FLAGS[args.outcome],
        controls=frozenset(controls),
        estimator=ESTIMATOR_FLAGS[args.estimator],
        vcov=args.vcov,
        fe_dof=args.fe_dof,
    )


def cmd_fit(args, manifest):
    controls = {CONTROL_FLAGS[c] for c in (args.controls or ["none"])} - {"none"}
    spec = _spec_from_args(args, controls)
    frame = _analysis_frame(_load_panels(args, manifest), args)
    states = _fit_states(_states(args.state), spec.outcome, controls, explicit=args.state != "all")
    frame = frame.loc[frame["state"].isin(states)]
    states = tuple(s for s in states if s in set(frame["state"]))
    result = fit(frame, spec)
    out = [
        _write_text(args.out_dir / "fit.json", result.to_json() + "\n"),
        _write_text(args.out_dir / "fit.txt", result.to_table()),
    ]
    if args.plot_data:
        out.append(_write_plot_data(args.out_dir / args.plot_data, _plot_rows([(states, result)])))
    sys.stdout.write(result.to_table())
    return out


def cmd_simulate(args, manifest):
    if args.config:
        manifest.inputs[str(args.config)] = file_digest(args.config)
        config = SimConfig.from_file(args.config)
    else:
        config = SimConfig.preset(args.scenario or "null")
    changes = {}
    if args.scenario and args.config and args.scenario != config.scenario:
        raise UsageError("--scenario conflicts with the scenario in --config")
    if args.n_drivers is not None:
        changes["n_drivers"] = args.n_drivers
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.state != "all":
        changes["state"] = args.state.upper()
    config = config.replace(**changes)
    config.validate()
    manifest.config_hashes["sim"] = config.model_hash()
    manifest.seeds.append(config.seed)

    frame, truth = simulate_frame(config, with_truth=not args.no_truth)
    out = [args.out_dir / "panels.csv"]
    write_panel_frame(frame, out[0])
    out.append(_write_json(args.out_dir / "sim_config.json", config.to_dict()))
    if truth is not None:
        out.append(_write_json(args.out_dir / "truth.json", truth.to_dict()))
        print(json.dumps(truth.to_dict(), indent=2, sort_keys=True))
    return out


def _report_battery(frame, states):
    """(section, states, spec) triples for the standard set of estimates."""
    present = tuple(s for s in STATES if s in set(frame["state"]) and s in states)
    battery = []
    for est, section in (("linear_fe", "search_rate"), ("feglm_logit", "search_rate_feglm"),
                         ("conditional_logit", "search_rate_clogit")):
        for ctrl in REPORT_CONTROL_SETS:
            battery.append((section, present, ModelSpec("searched", frozenset(ctrl), est)))
        if est == "linear_fe" and "AZ" in present:
            battery.append((section, ("AZ",), ModelSpec("searched", frozenset({"duration"}), est)))
    arrest_states = tuple(s for s in present if s in ARREST_STATES)
    if arrest_states:
        for ctrl in REPORT_CONTROL_SETS:
            battery.append(("arrest_rate", arrest_states, ModelSpec("arrested", frozenset(ctrl), "linear_fe")))
    return battery


SECTION_TITLES = {
    "search_rate": "Search rate, linear probability model",
    "arrest_rate": "Arrest rate, linear probability model",
    "search_rate_feglm": "Search rate, fixed-effects logit (log-odds)",
    "search_rate_clogit": "Search rate, conditional logit (log-odds)",
}


def cmd_report(args, manifest):
    frame = _load_panels(args, manifest)
    levels = cohort_frames(frame, **_cohort_options(args))
    stats = descriptive_stats(*levels)
    analysis = levels[3]
    states = _states(args.state)

    lines = ["# Perceived-race search disparities", "",
             f"perceptbias {__version__}; inputs: {', '.join(sorted(manifest.inputs))}", "",
             "## Descriptive statistics", "", "```", stats.to_table().rstrip("\n"), "```", ""]
    rows, fits, current = [], [], None
    for section, sts, spec in _report_battery(frame, states):
        if section != current:
            current = section
            lines += [f"## {SECTION_TITLES[section]}", "",
                      "| specification | states | estimate | 95% CI | p-value | N |",
                      "|---|---|---|---|---|---|"]
        sub = analysis.loc[analysis["state"].isin(sts)]
        try:
            res = fit(sub, spec)
        except PerceptBiasError as exc:
            log.warning("%s failed: %s", spec.label, exc)
            lines.append(f"| {spec.label} | {'+'.join(sts)} | failed: {exc} | | | |")
            continue
        scale = 100.0 if spec.estimator == "linear_fe" else 1.0
        unit = " pp" if scale == 100.0 else ""
        lines.append(
            f"| {spec.label} | {'+'.join(sts)} | {scale * res.delta_hat:.3f}{unit} | "
            f"({scale * res.ci95[0]:.3f}, {scale * res.ci95[1]:.3f}) | {res.p_value:.2g} | "
            f"{res.n_obs_used:,} |"
        )
        rows.extend(_plot_rows([(sts, res)]))
        fits.append({"states": list(sts), **res.to_dict()})
    lines.append("")
    out = [
        _write_text(args.out_dir / "report.md", "\n".join(lines)),
        _write_text(args.out_dir / "cohort_stats.json", stats.to_json() + "\n"),
        _write_json(args.out_dir / "fits.json", fits),
        _write_plot_data(args.out_dir / (args.plot_data or "plot_data.csv"), rows),
    ]
    print(f"wrote {out[0]}")
    return out


COMMANDS = {
    "ingest": cmd_ingest,
    "link": cmd_link,
    "describe": cmd_describe,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


# --- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perceptbias",
        description="Within-driver estimates of how perceived race affects police searches.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--state", choices=("az", "co", "tx", "all"), default="all")
    common.add_argument("--out-dir", type=Path, default=Path("."))
    common.add_argument("--seed", type=int, default=None)

    cohort = argparse.ArgumentParser(add_help=False)
    cohort.add_argument("--superset", action="store_true",
                        help="keep drivers seen as both white and Hispanic even if a third race "
                             "appears, trimming their other stops")
    cohort.add_argument("--allow-unknown", action="store_true",
                        help="ignore (and trim) unknown-race stops when forming the analysis sample")

    p = sub.add_parser("ingest", parents=[common], help="parse raw state files into stop records")
    p.add_argument("--input", nargs="+", help="raw files, one per state in AZ, CO, TX order")
    p.add_argument("--config", type=Path, help="state config YAML (defaults to the bundled one)")
    p.add_argument("--fixture", action="store_true", help="use the bundled example files")

    p = sub.add_parser("link", parents=[common], help="group stop records into driver panels")
    p.add_argument("--input", nargs="+", type=Path)
    p.add_argument("--max-stops", type=int, default=10)

    p = sub.add_parser("describe", parents=[common, cohort], help="nested cohort counts and rates")
    p.add_argument("--input", nargs="+", type=Path)

    p = sub.add_parser("fit", parents=[common, cohort], help="estimate the perceived-race effect")
    p.add_argument("--input", nargs="+", type=Path)
    p.add_argument("--outcome", choices=tuple(OUTCOME_FLAGS), default="search")
    p.add_argument("--estimator", choices=tuple(ESTIMATOR_FLAGS), default="linear")
    p.add_argument("--controls", choices=tuple(CONTROL_FLAGS), action="append")
    p.add_argument("--vcov", choices=("cluster", "classical", "model"), default=None)
    p.add_argument("--fe-dof", choices=("nonnested", "all"), default="nonnested")
    p.add_argument("--no-cohort", action="store_true", help="fit on the input rows as given")
    p.add_argument("--plot-data", nargs="?", const="plot_data.csv", default=None, metavar="FILE")

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic panels with known truth")
    p.add_argument("--config", type=Path, help="SimConfig YAML")
    p.add_argument("--scenario", choices=("null", "statistical_discrimination",
                                          "taste_discrimination", "officer_confound"))
    p.add_argument("--n-drivers", type=int, default=None)
    p.add_argument("--no-truth", action="store_true", help="skip the ground-truth computation")

    p = sub.add_parser("report", parents=[common, cohort], help="descriptive table plus estimate battery")
    p.add_argument("--input", nargs="+", type=Path)
    p.add_argument("--plot-data", nargs="?", const="plot_data.csv", default=None, metavar="FILE")
    return parser


def _validate(args):
    if args.command == "fit":
        controls = set(args.controls or [])
        if "none" in controls and len(controls) > 1:
            raise UsageError("--controls none cannot be combined with other controls")
    if args.seed is not None and args.command != "simulate":
        raise UsageError("--seed only applies to simulate")


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return threadpool_limits(limits=n)


def run_pipeline(argv=None) -> RunManifest:
    """Parse ``argv``, run one stage and return its manifest.

    Raises
    ------
    UsageError
        For flag combinations that cannot be run.
    PerceptBiasError
        Propagated from the stage that failed.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command=list(sys.argv[1:] if argv is None else argv))
    with _thread_limit():
        outputs = COMMANDS[args.command](args, manifest)
    manifest.outputs = {Path(p).name: file_digest(p) for p in outputs}
    manifest.timestamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    manifest.write(args.out_dir)
    return manifest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = sum(a.count("v") for a in argv if a.startswith("-") and set(a[1:]) == {"v"})
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run_pipeline(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"perceptbias: error: {exc}", file=sys.stderr)
        return 2
    except (PerceptBiasError, FileNotFoundError) as exc:
        print(f"perceptbias: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
