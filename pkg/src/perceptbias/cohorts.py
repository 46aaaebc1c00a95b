"""Nested analysis subsets and their descriptive statistics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .records import STATES, DriverPanel

LEVELS = (
    "Full dataset",
    "Multiply-stopped drivers",
    "Multiply-stopped drivers with inconsistently perceived race",
    "Drivers perceived as both white and Hispanic",
)
PARENT_LABELS = (
    None,
    "all drivers",
    "all multiply-stopped drivers",
    "all inconsistently-perceived drivers",
)
PARENT_STOP_LABELS = (
    None,
    "all stops",
    "all multiply-stopped driver stops",
    "all inconsistently-perceived driver stops",
)


def _known(races):
    return races - {"unknown"}


def filter_multiply_stopped(panels):
    """Keep panels with at least two stops."""
    return [p for p in panels if p.n_stops >= 2]


def filter_inconsistent(panels):
    """Keep panels with two or more distinct non-unknown perceived races."""
    return [p for p in panels if len(_known(p.races)) >= 2]


def filter_white_hispanic(panels, pair=("white", "hispanic"), exact=True, allow_unknown=False):
    """Keep drivers perceived as both members of ``pair``.

    Parameters
    ----------
    pair : tuple of str
        The two perceived-race categories compared.
    exact : bool
        If True a driver qualifies only when their set of perceived races is
        exactly ``pair``. If False, any driver seen as both qualifies and their
        panel is trimmed to the stops recorded as one of the pair.
    allow_unknown : bool
        If True, ``unknown`` stops are ignored when testing the set and trimmed
        from qualifying panels; otherwise they disqualify the panel under the
        exact rule.
    """
    target = frozenset(pair)
    out = []
    for p in panels:
        races = _known(p.races) if allow_unknown else p.races
        if exact:
            if races != target:
                continue
            if "unknown" in p.races:
                p = _trim(p, target)
        else:
            if not target <= races:
                continue
            if not p.races <= target:
                p = _trim(p, target)
        out.append(p)
    return out


def _trim(panel: DriverPanel, keep):
    stops = tuple(s for s in panel.stops if s.perceived_race in keep)
    return DriverPanel(driver_id=panel.driver_id, state=panel.state, stops=stops,
                       linkable=panel.linkable)


def build_cohorts(panels, exact=True, allow_unknown=False):
    """Return the four nested panel collections, from all drivers to the analysis sample."""
    full = list(panels)
    multi = filter_multiply_stopped(full)
    inconsistent = filter_inconsistent(multi)
    analysis = filter_white_hispanic(inconsistent, exact=exact, allow_unknown=allow_unknown)
    return full, multi, inconsistent, analysis


def analysis_sample(panels, exact=True, allow_unknown=False):
    return build_cohorts(panels, exact=exact, allow_unknown=allow_unknown)[-1]


@dataclass
class StateStats:
    n_drivers: list
    n_stops: list
    search_rate_hispanic: float
    search_rate_white: float
    pct_drivers: list = field(init=False)
    pct_stops: list = field(init=False)

    def __post_init__(self):
        self.pct_drivers = [_pct(self.n_drivers[k], self.n_drivers[k - 1]) for k in range(1, 4)]
        self.pct_stops = [_pct(self.n_stops[k], self.n_stops[k - 1]) for k in range(1, 4)]


def _pct(num, den):
    return 100.0 * num / den if den else float("nan")


def _rate(panels, race):
    n = searched = 0
    for p in panels:
        for s in p.stops:
            if s.perceived_race == race:
                n += 1
                searched += bool(s.searched)
    return searched / n if n else float("nan")


def _stats(levels):
    if isinstance(levels[0], pd.DataFrame):
        return _frame_stats(levels)
    return StateStats(
        n_drivers=[len(lv) for lv in levels],
        n_stops=[sum(p.n_stops for p in lv) for lv in levels],
        search_rate_hispanic=_rate(levels[3], "hispanic"),
        search_rate_white=_rate(levels[3], "white"),
    )


@dataclass
class CohortStats:
    by_state: dict
    overall: StateStats

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

        return {
            "levels": list(LEVELS),
            "by_state": {s: clean(asdict(v)) for s, v in self.by_state.items()},
            "overall": clean(asdict(self.overall)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Plain-text table with one column per state plus an overall column."""
        cols = list(self.by_state) + ["Overall"]
        stats = list(self.by_state.values()) + [self.overall]
        width = max(48, *(len(f"% of {lab}") for lab in PARENT_STOP_LABELS[1:]))
        cell = 12

        def line(label, values):
            return label.ljust(width) + "".join(v.rjust(cell) for v in values)

        def fmt_pct(x):
            return "n/a" if math.isnan(x) else f"{x:.1f}%"

        out = [line("", cols), "=" * (width + cell * len(cols))]
        for k, title in enumerate(LEVELS):
            out.append(title)
            out.append("-" * (width + cell * len(cols)))
            out.append(line("Drivers", [f"{s.n_drivers[k]:,}" for s in stats]))
            if k:
                out.append(line(f"% of {PARENT_LABELS[k]}", [fmt_pct(s.pct_drivers[k - 1]) for s in stats]))
            out.append(line("Stops", [f"{s.n_stops[k]:,}" for s in stats]))
            if k:
                out.append(line(f"% of {PARENT_STOP_LABELS[k]}", [fmt_pct(s.pct_stops[k - 1]) for s in stats]))
        out.append(line("Search rate when perceived as Hispanic",
                        [fmt_pct(100 * s.search_rate_hispanic) for s in stats]))
        out.append(line("Search rate when perceived as white",
                        [fmt_pct(100 * s.search_rate_white) for s in stats]))
        return "\n".join(out) + "\n"


def descriptive_stats(full, multi, inconsistent, analysis) -> CohortStats:
    """Counts, nesting percentages and search rates per state and overall."""
    if isinstance(full, pd.DataFrame):
        levels = (full, multi, inconsistent, analysis)
        present = sorted(full["state"].unique(), key=STATES.index)
        by_state = {st: _stats([lv[lv["state"] == st] for lv in levels]) for st in present}
        return CohortStats(by_state=by_state, overall=_stats(levels))
    levels = (list(full), list(multi), list(inconsistent), list(analysis))
    present = sorted({p.state for p in levels[0]}, key=STATES.index)
    by_state = {
        st: _stats([[p for p in lv if p.state == st] for lv in levels]) for st in present
    }
    return CohortStats(by_state=by_state, overall=_stats(levels))


def _frame_rate(frame, race):
    sel = frame["perceived_race"] == race
    return float(frame.loc[sel, "searched"].mean()) if sel.any() else float("nan")


def _frame_stats(levels):
    return StateStats(
        n_drivers=[int(lv["driver_id"].nunique()) for lv in levels],
        n_stops=[len(lv) for lv in levels],
        search_rate_hispanic=_frame_rate(levels[3], "hispanic"),
        search_rate_white=_frame_rate(levels[3], "white"),
    )


def cohort_frames(frame: pd.DataFrame, pair=("white", "hispanic"), exact=True, allow_unknown=False):
    """Vectorized :func:`build_cohorts` on a canonical stop frame.

    Returns the four nested frames with the same membership (and trimming)
    as the panel-based filters.
    """
    drv = frame["driver_id"].to_numpy()
    race = frame["perceived_race"].to_numpy()
    _, codes = np.unique(drv, return_inverse=True)
    n_drv = codes.max() + 1 if len(codes) else 0

    def per_driver(mask):
        return np.bincount(codes, weights=mask.astype(float), minlength=n_drv) > 0

    size = np.bincount(codes, minlength=n_drv)
    has = {c: per_driver(race == c) for c in set(race) | set(pair) | {"unknown"}}
    n_known = sum(v.astype(int) for c, v in has.items() if c != "unknown")
    in_pair = np.isin(race, pair)
    other_known = per_driver(~in_pair & (race != "unknown"))
    has_unknown = has["unknown"]
    has_both = has[pair[0]] & has[pair[1]]

    multi = size >= 2
    inconsistent = multi & (n_known >= 2)
    if exact:
        qualifies = inconsistent & has_both & ~other_known
        if not allow_unknown:
            qualifies &= ~has_unknown
        keep_row = qualifies[codes] & (in_pair if allow_unknown else True)
    else:
        qualifies = inconsistent & has_both
        keep_row = qualifies[codes] & in_pair
    return (
        frame,
        frame.loc[multi[codes]],
        frame.loc[inconsistent[codes]],
        frame.loc[np.asarray(keep_row, dtype=bool) & qualifies[codes]],
    )
