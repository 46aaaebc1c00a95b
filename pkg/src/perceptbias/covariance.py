"""Sandwich and classical variance estimators."""

from __future__ import annotations

import warnings

import numpy as np

from .absorb import Groups
from .exceptions import InferenceError, VarianceWarning


def cluster_robust_vcov(scores, residuals, clusters, k_effective, bread=None):
    """Cluster-robust (sandwich) variance matrix.

    ``V = c * B (sum_g s_g s_g') B`` with ``s_g = X_g' e_g`` and the small
    sample factor ``c = G/(G-1) * (N-1)/(N-k_effective)``.

    Parameters
    ----------
    scores : ndarray of shape (N, k)
        Per-row regressors (or score directions for likelihood models).
    residuals : ndarray of shape (N,)
    clusters : array-like of shape (N,) or Groups
    k_effective : int
        Estimated columns plus absorbed fixed-effect degrees of freedom.
    bread : ndarray of shape (k, k), optional
        Defaults to ``(X'X)^-1`` built from ``scores``.

    Raises
    ------
    InferenceError
        With fewer than two clusters or no residual degrees of freedom.
    """
    X = np.asarray(scores, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    e = np.asarray(residuals, dtype=float)
    groups = clusters if isinstance(clusters, Groups) else Groups(np.asarray(clusters))
    n, k = X.shape
    G = groups.n_groups
    if G < 2:
        raise InferenceError(f"cluster-robust variance needs at least 2 clusters, got {G}")
    if n - k_effective <= 0:
        raise InferenceError(f"no residual degrees of freedom (N={n}, k={k_effective})")
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    S = groups.sums(X * e[:, None])
    meat = S.T @ S
    c = G / (G - 1) * (n - 1) / (n - k_effective)
    V = c * bread @ meat @ bread
    return (V + V.T) / 2


def classical_vcov(residuals, bread, k_effective):
    """Homoskedastic OLS variance ``s^2 (X'X)^-1`` with ``s^2 = e'e/(N-k)``."""
    e = np.asarray(residuals, dtype=float)
    dof = len(e) - k_effective
    if dof <= 0:
        raise InferenceError(f"no residual degrees of freedom (N={len(e)}, k={k_effective})")
    return float(e @ e) / dof * bread


def variance_or_nan(compute, k, *args):
    """Call a variance routine, degrading an :class:`InferenceError` to a NaN matrix.

    Estimators use this so that a well-defined coefficient (for example a
    sample with a single cluster) is still returned; a
    :class:`~perceptbias.exceptions.VarianceWarning` explains the NaN.
    """
    try:
        return compute(*args)
    except InferenceError as exc:
        warnings.warn(f"variance undefined ({exc}); standard errors set to NaN",
                      VarianceWarning, stacklevel=3)
        return np.full((k, k), np.nan)
