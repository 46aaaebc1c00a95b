"""Independent oracles and random data for the tests.

Nothing here calls the estimators under test: the least-squares oracle
builds explicit dummy matrices and the conditional-logit oracle enumerates
every subset of every stratum.
"""

from __future__ import annotations

import itertools

import numpy as np
import pandas as pd
from scipy.linalg import orth
from scipy.optimize import minimize
from scipy.special import logsumexp

from perceptbias.design import build_design
from perceptbias.records import PANEL_COLUMNS


def random_frame(rng, n_drivers=30, max_stops=6, state="AZ", p_hispanic=0.4, p_search=0.3,
                 n_counties=4, n_officers=6, races=("white", "hispanic")):
    """Canonical stop frame with random drivers, controls and outcomes."""
    rows = []
    for d in range(n_drivers):
        for t in range(int(rng.integers(1, max_stops + 1))):
            race = races[0] if rng.random() >= p_hispanic else races[1]
            if len(races) > 2 and rng.random() < 0.15:
                race = races[int(rng.integers(2, len(races)))]
            searched = float(rng.random() < p_search)
            rows.append({
                "driver_id": f"{state}{d:04d}",
                "linkable": True,
                "state": state,
                "stop_id": f"{state}{d:04d}-{t}",
                "date": pd.Timestamp("2011-01-01") + pd.Timedelta(days=int(rng.integers(0, 5 * 365))),
                "hour": float(rng.integers(0, 24)),
                "county": f"c{int(rng.integers(n_counties))}",
                "officer_id": f"o{int(rng.integers(n_officers))}",
                "perceived_race": race,
                "searched": searched,
                "arrested": float(searched and rng.random() < 0.5) if state != "TX" else np.nan,
                "duration_minutes": float(rng.exponential(15)) if state == "AZ" else np.nan,
            })
    return pd.DataFrame(rows, columns=list(PANEL_COLUMNS))


def _greedy_independent(base, cols, rel_tol=1e-8):
    """Gram-Schmidt scan of ``cols`` (in order) against ``base``; True where a column adds rank."""
    Q = orth(base) if base.shape[1] else np.zeros((base.shape[0], 0))
    keep = []
    for j in range(cols.shape[1]):
        v = cols[:, j].copy()
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            v -= Q @ (Q.T @ v)
        ok = norm0 > 0 and np.linalg.norm(v) > rel_tol * norm0
        keep.append(ok)
        if ok:
            Q = np.column_stack([Q, v / np.linalg.norm(v)])
    return np.array(keep, dtype=bool)


def dummy_ls(frame, spec):
    """Treatment coefficient from least squares with one dummy per fixed-effect level.

    Controls that are redundant given the fixed effects, the treatment and
    earlier controls are skipped (column order), mirroring the documented
    drop rule. Returns ``None`` when the treatment itself lies in the span of
    the fixed-effect dummies.
    """
    design = build_design(frame, spec)
    fe_blocks = []
    for dim in spec.fe_dims:
        labels = design.fe[dim]
        levels = np.unique(labels)
        fe_blocks.append((labels[:, None] == levels[None, :]).astype(float))
    F = np.hstack(fe_blocks)
    M = design.matrix
    keep = _greedy_independent(F, M)
    if not keep[0]:
        return None
    D = np.hstack([M[:, keep], F])
    coef, *_ = np.linalg.lstsq(D, design.y, rcond=None)
    return float(coef[0])


# --- conditional logit by enumeration ---------------------------------------


def _strata_index(strata):
    strata = np.asarray(strata)
    return [np.flatnonzero(strata == s) for s in np.unique(strata)]


def enum_loglik(theta, X, y, strata):
    """Conditional log-likelihood and score by listing every same-size subset."""
    theta = np.asarray(theta, dtype=float)
    ll = 0.0
    grad = np.zeros_like(theta)
    for rows in _strata_index(strata):
        k = int(y[rows].sum())
        if k == 0 or k == len(rows):
            continue
        subsets = list(itertools.combinations(rows, k))
        sums = np.array([X[list(s)].sum(axis=0) for s in subsets])
        scores = sums @ theta
        lse = logsumexp(scores)
        w = np.exp(scores - lse)
        observed = X[rows][y[rows] == 1].sum(axis=0)
        ll += observed @ theta - lse
        grad += observed - w @ sums
    return float(ll), grad


def enum_mle(X, y, strata, x0=None):
    """Maximizer of :func:`enum_loglik` by BFGS (independent of the Newton solver)."""
    x0 = np.zeros(X.shape[1]) if x0 is None else x0

    def f(t):
        ll, g = enum_loglik(t, X, y, strata)
        return -ll, -g

    res = minimize(f, x0, jac=True, method="BFGS", options={"gtol": 1e-11, "maxiter": 10_000})
    return res.x


def random_strata(rng, n_strata, max_size=8, n_features=2, theta=None):
    """Logit outcomes with stratum intercepts; every stratum has size 2..max_size."""
    theta = np.linspace(0.5, -0.5, n_features) if theta is None else np.asarray(theta)
    sizes = rng.integers(2, max_size + 1, n_strata)
    strata = np.repeat(np.arange(n_strata), sizes)
    X = rng.normal(size=(len(strata), n_features))
    alpha = rng.normal(size=n_strata)[strata]
    y = (rng.random(len(strata)) < 1 / (1 + np.exp(-(alpha + X @ theta)))).astype(float)
    return X, y, strata


def logit_panel_config(theta=0.5, n_drivers=2000, seed=0):
    """Threshold-model settings whose search log-odds are exactly ``alpha_i + theta * r``.

    With no officer or county terms, ``(p - t) / s`` is a driver constant plus
    ``-threshold_race / s`` times ``r``.
    """
    from perceptbias.simulate import SimConfig

    scale = 0.2
    return SimConfig.preset(
        "taste_discrimination",
        n_drivers=n_drivers,
        seed=seed,
        stops_pmf=(0.0, 0.0, 1.0),
        risk_intercept=0.0,
        threshold_intercept=0.55,
        threshold_race=-theta * scale,
        search_scale=scale,
    )
