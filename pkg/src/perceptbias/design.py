"""Model specifications and design-matrix construction from stop panels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .absorb import demean
from .exceptions import SpecificationError
from .records import PanelsLike, panels_to_frame

OUTCOMES = ("searched", "arrested")
CONTROLS = ("location_time", "officer", "duration")
ESTIMATORS = ("linear_fe", "feglm_logit", "conditional_logit")
TREATMENT = "hispanic"
HOUR_BIN_WIDTH = 3


def hour_bin(hour):
    """Index of the three-hour bin containing ``hour`` (0 for [0, 3) ... 7 for [21, 24))."""
    return np.asarray(hour) // HOUR_BIN_WIDTH


@dataclass(frozen=True)
class ModelSpec:
    """What to estimate.

    Parameters
    ----------
    outcome : {'searched', 'arrested'}
    controls : iterable of {'location_time', 'officer', 'duration'}
        ``'none'`` entries are ignored.
    estimator : {'linear_fe', 'feglm_logit', 'conditional_logit'}
    absorb_officer : bool
        For ``linear_fe`` with officer controls, absorb officer identity as a
        second fixed effect instead of dummy-coding it. Other estimators
        always dummy-code it.
    cluster_dim : str
        Canonical column whose levels define clusters.
    vcov : {'cluster', 'classical', 'model'} or None
        None picks the estimator's default (clustered for the linear and
        FE-GLM fits, inverse information for the conditional logit).
    fe_dof : {'nonnested', 'all'}
        Whether fixed effects nested in the clusters count in the
        small-sample correction.
    """

    outcome: str = "searched"
    controls: frozenset = field(default_factory=frozenset)
    estimator: str = "linear_fe"
    absorb_officer: bool = True
    cluster_dim: str = "driver_id"
    vcov: object = None
    fe_dof: str = "nonnested"

    def __post_init__(self):
        controls = frozenset(c for c in self.controls if c != "none")
        object.__setattr__(self, "controls", controls)
        if self.outcome not in OUTCOMES:
            raise SpecificationError(f"outcome must be one of {OUTCOMES}")
        if self.estimator not in ESTIMATORS:
            raise SpecificationError(f"estimator must be one of {ESTIMATORS}")
        unknown = controls - set(CONTROLS)
        if unknown:
            raise SpecificationError(f"unknown controls {sorted(unknown)}")
        if self.fe_dof not in ("nonnested", "all"):
            raise SpecificationError("fe_dof must be 'nonnested' or 'all'")

    @property
    def officer_absorbed(self) -> bool:
        return "officer" in self.controls and self.absorb_officer and self.estimator == "linear_fe"

    @property
    def fe_dims(self) -> tuple:
        if self.estimator == "conditional_logit":
            return ()
        if self.officer_absorbed:
            return ("driver_id", "officer_id")
        return ("driver_id",)

    @property
    def cov_type(self) -> str:
        if self.vcov is not None:
            return self.vcov
        return "model" if self.estimator == "conditional_logit" else "cluster"

    @property
    def label(self) -> str:
        ctrl = "+".join(c for c in CONTROLS if c in self.controls) or "none"
        return f"{self.estimator}|{self.outcome}|{ctrl}"


@dataclass
class DesignMatrix:
    """Model-ready arrays; the treatment is column 0 of :attr:`matrix`."""

    y: np.ndarray
    r: np.ndarray
    X: np.ndarray
    control_names: list
    fe: dict
    clusters: np.ndarray
    driver_ids: np.ndarray
    stop_ids: np.ndarray
    n_missing_dropped: int
    spec: ModelSpec

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.r, self.X])

    @property
    def names(self) -> list:
        return [TREATMENT] + list(self.control_names)

    def fe_matrix(self):
        return [self.fe[d] for d in self.spec.fe_dims]

    def __len__(self):
        return len(self.y)


def _dummies(values, prefix):
    """Treatment-coded indicators, first sorted level as reference."""
    cat = pd.Categorical(values)
    levels = list(cat.categories)
    codes = cat.codes
    if len(levels) <= 1:
        return np.zeros((len(values), 0)), []
    mat = (codes[:, None] == np.arange(1, len(levels))[None, :]).astype(float)
    return mat, [f"{prefix}[{lv}]" for lv in levels[1:]]


def build_design(panels: PanelsLike, spec: ModelSpec = None) -> DesignMatrix:
    """Build outcome, treatment, controls and fixed-effect labels.

    Rows are put in (driver, date, stop) order so results do not depend on the
    input order. Rows missing any value needed by the active columns are
    dropped and counted.

    Raises
    ------
    SpecificationError
        Duration controls on non-AZ rows, or arrest outcome with TX rows.
    """
    spec = spec or ModelSpec()
    frame = panels_to_frame(panels)
    frame = frame.sort_values(["driver_id", "date", "stop_id"], kind="mergesort").reset_index(drop=True)
    states = set(frame["state"].unique())
    if spec.outcome == "arrested" and "TX" in states:
        raise SpecificationError("Texas does not provide arrest data; drop TX rows for arrest outcomes")
    if "duration" in spec.controls and states - {"AZ"}:
        raise SpecificationError("stop duration is only recorded for AZ; restrict to AZ rows")

    ok = frame[spec.outcome].notna().to_numpy()
    if "location_time" in spec.controls:
        ok &= frame["county"].notna().to_numpy() & frame["hour"].notna().to_numpy()
    if "officer" in spec.controls or spec.cluster_dim == "officer_id":
        ok &= frame["officer_id"].notna().to_numpy()
    if "duration" in spec.controls:
        ok &= frame["duration_minutes"].notna().to_numpy()
    n_missing = int((~ok).sum())
    f = frame.loc[ok].reset_index(drop=True)

    blocks, names = [], []

    def add(mat, labels):
        blocks.append(mat)
        names.extend(labels)

    if "location_time" in spec.controls:
        dates = pd.to_datetime(f["date"])
        add(*_dummies(f["county"].to_numpy(), "county"))
        add(*_dummies(dates.dt.year.to_numpy(), "year"))
        add(*_dummies(dates.dt.quarter.to_numpy(), "quarter"))
        add(*_dummies(dates.dt.weekday.to_numpy(), "weekday"))
        add(*_dummies(hour_bin(f["hour"].to_numpy().astype(int)), "hour_bin"))
    if "officer" in spec.controls and not spec.officer_absorbed:
        add(*_dummies(f["officer_id"].to_numpy(), "officer"))
    if "duration" in spec.controls:
        add(f["duration_minutes"].to_numpy(dtype=float)[:, None], ["duration_minutes"])
    X = np.hstack(blocks) if blocks else np.zeros((len(f), 0))

    fe = {"driver_id": f["driver_id"].to_numpy()}
    if spec.officer_absorbed:
        fe["officer_id"] = f["officer_id"].to_numpy()
    return DesignMatrix(
        y=f[spec.outcome].to_numpy(dtype=float),
        r=(f["perceived_race"] == TREATMENT).to_numpy(dtype=float),
        X=X,
        control_names=names,
        fe=fe,
        clusters=f[spec.cluster_dim].to_numpy(),
        driver_ids=f["driver_id"].to_numpy(),
        stop_ids=f["stop_id"].to_numpy(),
        n_missing_dropped=n_missing,
        spec=spec,
    )


def absorb_fixed_effects(design: DesignMatrix, tol=1e-10, max_iter=10_000) -> DesignMatrix:
    """Return a copy of ``design`` with y, r and X residualized on its fixed effects."""
    dims = design.fe_matrix()
    if not dims:
        raise SpecificationError("no fixed-effect dimension to absorb")
    stacked = np.column_stack([design.y, design.r, design.X])
    out, _ = demean(stacked, dims, tol=tol, max_iter=max_iter)
    return DesignMatrix(
        y=out[:, 0], r=out[:, 1], X=out[:, 2:], control_names=list(design.control_names),
        fe=dict(design.fe), clusters=design.clusters, driver_ids=design.driver_ids,
        stop_ids=design.stop_ids, n_missing_dropped=design.n_missing_dropped, spec=design.spec,
    )
