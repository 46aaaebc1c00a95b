"""Estimate the within-driver effect of being perceived as Hispanic."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .clogit import ConditionalLogit
from .design import ModelSpec, build_design
from .exceptions import EmptySampleError, IdentificationError, SpecificationError
from .feglm import FixedEffectsLogit
from .linear import LinearFixedEffects
from .records import PanelsLike

Z95 = 1.96


@dataclass
class FitResult:
    """Estimate of the treatment coefficient plus sample diagnostics.

    ``delta_hat`` is a probability difference for ``linear_fe`` (multiply by
    100 for percentage points, see :attr:`delta_pp`) and a log-odds
    coefficient for the logit families.
    """

    label: str
    estimator: str
    outcome: str
    controls: list
    vcov_type: str
    delta_hat: float
    se_delta: float
    ci95: tuple
    p_value: float
    beta_hat: dict
    n_obs_used: int
    n_drivers_used: int
    n_singletons_dropped: int = 0
    n_strata_dropped: int = 0
    n_separated_dropped: int = 0
    n_missing_dropped: int = 0
    collinear_dropped: list = field(default_factory=list)
    iterations: int = 0
    gradient_norm: float = 0.0
    converged: bool = True
    residuals: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    alpha: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def scale(self) -> str:
        return "probability" if self.estimator == "linear_fe" else "log-odds"

    @property
    def delta_pp(self) -> float:
        return 100.0 * self.delta_hat

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("residuals")
        d.pop("alpha")
        d["ci95"] = list(self.ci95)
        d["scale"] = self.scale
        return _finite(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Short human-readable summary."""
        if self.estimator == "linear_fe":
            est = f"{self.delta_pp:.3f} pp"
            ci = f"({100 * self.ci95[0]:.3f}, {100 * self.ci95[1]:.3f}) pp"
        else:
            est = f"{self.delta_hat:.4f} log-odds"
            ci = f"({self.ci95[0]:.4f}, {self.ci95[1]:.4f})"
        rows = [
            ("specification", self.label),
            ("estimate", est),
            ("std. error", f"{self.se_delta:.6g}"),
            ("95% CI", ci),
            ("p-value", f"{self.p_value:.3g}"),
            ("observations", f"{self.n_obs_used:,}"),
            ("drivers", f"{self.n_drivers_used:,}"),
            ("singletons dropped", str(self.n_singletons_dropped)),
            ("uninformative strata dropped", str(self.n_strata_dropped)),
            ("constant-outcome drivers dropped", str(self.n_separated_dropped)),
            ("rows with missing controls", str(self.n_missing_dropped)),
            ("collinear columns dropped", str(len(self.collinear_dropped))),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"

    def plot_row(self) -> dict:
        return {
            "label": self.label,
            "estimate": self.delta_hat,
            "ci_lo": self.ci95[0],
            "ci_hi": self.ci95[1],
            "n_obs": self.n_obs_used,
        }


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def _inference(coef, se):
    ci = (coef - Z95 * se, coef + Z95 * se)
    if se > 0 and np.isfinite(se):
        p = float(2 * norm.sf(abs(coef / se)))
    else:
        p = float("nan")
    return ci, p


def _assemble(spec, design, est, *, n_singletons=0, n_strata=0, n_separated=0, iterations=0,
              gradient_norm=0.0, n_drivers=0, return_residuals=False):
    names = design.names
    if not est.kept_[0]:
        raise IdentificationError("treatment collinear with fixed effects")
    delta = float(est.coef_[0])
    se = float(est.bse_[0])
    ci, p = _inference(delta, se)
    beta = {nm: float(c) for nm, c, k in zip(names[1:], est.coef_[1:], est.kept_[1:]) if k}
    dropped = [nm for nm, k in zip(names, est.kept_) if not k]
    return FitResult(
        label=spec.label,
        estimator=spec.estimator,
        outcome=spec.outcome,
        controls=sorted(spec.controls),
        vcov_type=spec.cov_type,
        delta_hat=delta,
        se_delta=se,
        ci95=ci,
        p_value=p,
        beta_hat=beta,
        n_obs_used=int(est.n_obs_),
        n_drivers_used=int(n_drivers),
        n_singletons_dropped=n_singletons,
        n_strata_dropped=n_strata,
        n_separated_dropped=n_separated,
        n_missing_dropped=design.n_missing_dropped,
        collinear_dropped=dropped,
        iterations=int(iterations),
        gradient_norm=float(gradient_norm),
        converged=True,
        residuals=est.resid_ if return_residuals else None,
        alpha=getattr(est, "alpha_", None) if return_residuals else None,
    )


def _design_for(panels, spec, estimator):
    spec = spec or ModelSpec(estimator=estimator)
    if spec.estimator != estimator:
        raise SpecificationError(f"spec.estimator is {spec.estimator!r}, expected {estimator!r}")
    design = build_design(panels, spec)
    if len(design) == 0:
        raise EmptySampleError("no usable rows")
    return spec, design


def fit_linear_fe(panels: PanelsLike, spec: ModelSpec = None, return_residuals=False) -> FitResult:
    """Linear probability model with driver (and optionally officer) fixed effects.

    Raises
    ------
    IdentificationError
        If perceived race never varies within a driver.
    EmptySampleError
    """
    spec, design = _design_for(panels, spec, "linear_fe")
    cov = {"cluster": "cluster", "classical": "classical", "model": "classical", "hc1": "hc1"}[spec.cov_type]
    est = LinearFixedEffects(cov_type=cov, fe_dof=spec.fe_dof)
    est.fit(design.matrix, design.y, groups=design.fe_matrix(), clusters=design.clusters)
    return _assemble(
        spec, design, est, n_singletons=est.n_singletons_, iterations=est.n_iter_,
        gradient_norm=est.grad_norm_, n_drivers=est.n_groups_, return_residuals=return_residuals,
    )


def fit_feglm_logit(panels: PanelsLike, spec: ModelSpec = None, return_residuals=False) -> FitResult:
    """Logit with absorbed driver intercepts (coefficient on the log-odds scale)."""
    spec, design = _design_for(panels, spec, "feglm_logit")
    est = FixedEffectsLogit(cov_type="model" if spec.cov_type in ("model", "classical") else "cluster",
                            fe_dof=spec.fe_dof)
    est.fit(design.matrix, design.y, groups=design.fe["driver_id"], clusters=design.clusters)
    return _assemble(
        spec, design, est, n_separated=est.n_separated_, iterations=est.n_iter_,
        gradient_norm=est.grad_norm_, n_drivers=est.n_groups_, return_residuals=return_residuals,
    )


def fit_conditional_logit(panels: PanelsLike, spec: ModelSpec = None, return_residuals=False) -> FitResult:
    """Conditional logit with one stratum per driver."""
    spec, design = _design_for(panels, spec, "conditional_logit")
    est = ConditionalLogit(cov_type="cluster" if spec.cov_type == "cluster" else "model")
    est.fit(design.matrix, design.y, groups=design.driver_ids, clusters=design.clusters,
            feature_names=design.names)
    return _assemble(
        spec, design, est, n_strata=est.n_strata_dropped_, iterations=est.n_iter_,
        gradient_norm=est.grad_norm_, n_drivers=est.n_strata_, return_residuals=return_residuals,
    )


FITTERS = {
    "linear_fe": fit_linear_fe,
    "feglm_logit": fit_feglm_logit,
    "conditional_logit": fit_conditional_logit,
}


def fit(panels: PanelsLike, spec: ModelSpec) -> FitResult:
    """Dispatch on ``spec.estimator``."""
    return FITTERS[spec.estimator](panels, spec)
