"""Linear regression with absorbed fixed effects and clustered inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .absorb import PROJ_MAX_ITER, PROJ_TOL, Groups, _as_groups, demean, fe_degrees_of_freedom
from .covariance import classical_vcov, cluster_robust_vcov, variance_or_nan
from .exceptions import ConvergenceError, EmptySampleError
from .linalg import COLLINEAR_TOL, independent_columns, inv_from_r, qr_solve

COV_TYPES = ("cluster", "classical", "hc1")
#: Pivot-to-norm ratio below which a kept column is re-tested after tighter projections.
REFINE_BELOW = 1e-6


class LinearFixedEffects(RegressorMixin, BaseEstimator):
    """Least squares on columns residualized against one or more fixed effects.

    The first fixed-effect dimension is the panel unit (driver): units with a
    single row are dropped before solving, and it is the default cluster.

    Parameters
    ----------
    cov_type : {'cluster', 'classical', 'hc1'}, default='cluster'
    drop_singletons : bool, default=True
    tol : float, default=1e-10
        Orthogonality tolerance for alternating projections.
    max_iter : int, default=10000
    collinear_tol : float, default=1e-10
        Relative pivot below which a column is treated as collinear.
    fe_dof : {'nonnested', 'all'}, default='nonnested'
        Whether fixed-effect dimensions nested in the cluster variable count
        toward the small-sample correction.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        NaN for columns dropped as collinear.
    vcov_ : ndarray of shape (n_features, n_features)
    bse_ : ndarray of shape (n_features,)
    kept_ : ndarray of bool
    resid_ : ndarray
        Within residuals for rows in ``sample_mask_``.
    fixed_effects_ : ndarray
        Combined absorbed component per used row.
    alpha_ : dict
        Unit intercepts (single-dimension fits only).
    """

    def __init__(self, cov_type="cluster", drop_singletons=True, tol=PROJ_TOL,
                 max_iter=PROJ_MAX_ITER, collinear_tol=COLLINEAR_TOL, fe_dof="nonnested"):
        self.cov_type = cov_type
        self.drop_singletons = drop_singletons
        self.tol = tol
        self.max_iter = max_iter
        self.collinear_tol = collinear_tol
        self.fe_dof = fe_dof

    def fit(self, X, y, *, groups, clusters=None):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_features=0)
        if self.cov_type not in COV_TYPES:
            raise ValueError(f"cov_type must be one of {COV_TYPES}")
        fe = _as_groups(groups)
        n = len(y)
        if any(len(g) != n for g in fe):
            raise ValueError("groups must have one label per row")
        cl_labels = fe[0].codes if clusters is None else np.asarray(clusters)

        mask = np.ones(n, dtype=bool)
        if self.drop_singletons:
            mask = fe[0].counts[fe[0].codes] > 1
        self.n_singletons_ = int(n - mask.sum())
        if not mask.any():
            raise EmptySampleError("no rows left after dropping singleton units")
        fe = [g.subset(mask) for g in fe]
        Xs, ys = X[mask], y[mask]
        clusters_ = Groups(cl_labels[mask])

        stacked = np.column_stack([ys, Xs])
        both, self.n_iter_ = demean(stacked, fe, tol=self.tol, max_iter=self.max_iter)
        keep = independent_columns(both[:, 1:], self.collinear_tol)
        if len(fe) > 1:
            both, keep = self._refine(stacked, both, keep, fe)
        yd, Xd = both[:, 0], both[:, 1:]
        Xk = Xd[:, keep]
        p = Xk.shape[1]
        if p:
            coef_k, R = qr_solve(Xk, yd)
            bread = inv_from_r(R)
        else:
            coef_k, bread = np.zeros(0), np.zeros((0, 0))
        resid = yd - Xk @ coef_k
        self.grad_norm_ = float(np.linalg.norm(Xk.T @ resid)) if p else 0.0

        self.dof_fe_ = fe_degrees_of_freedom(
            fe, clusters_ if self.cov_type == "cluster" else None,
            exclude_nested=self.fe_dof == "nonnested",
        )
        self.k_effective_ = p + self.dof_fe_
        if p:
            if self.cov_type == "cluster":
                vk = variance_or_nan(cluster_robust_vcov, p, Xk, resid, clusters_, self.k_effective_, bread)
            elif self.cov_type == "hc1":
                vk = variance_or_nan(cluster_robust_vcov, p, Xk, resid, np.arange(len(resid)),
                                     self.k_effective_, bread)
            else:
                vk = variance_or_nan(classical_vcov, p, resid, bread, self.k_effective_)
        else:
            vk = np.zeros((0, 0))

        k = X.shape[1]
        self.coef_ = np.full(k, np.nan)
        self.coef_[keep] = coef_k
        self.vcov_ = np.full((k, k), np.nan)
        self.vcov_[np.ix_(keep, keep)] = vk
        self.bse_ = np.sqrt(np.maximum(np.diag(self.vcov_), 0.0))
        self.kept_ = keep
        self.sample_mask_ = mask
        self.resid_ = resid
        self.n_obs_ = int(mask.sum())
        self.n_groups_ = fe[0].n_groups
        self.n_clusters_ = clusters_.n_groups
        self.n_features_in_ = k
        fitted_x = Xs[:, keep] @ coef_k
        self.fixed_effects_ = ys - fitted_x - resid
        if len(fe) == 1:
            self.alpha_ = dict(zip(fe[0].levels.tolist(), fe[0].means(ys - fitted_x)))
        else:
            self.alpha_ = None
        return self

    def _refine(self, stacked, both, keep, fe):
        """Re-check near-collinear columns with tighter projections.

        Alternating projections leave errors of order ``tol`` in each
        column, which is the same order as the collinearity cut, so a column
        exactly spanned by the fixed effects can survive with a pivot just
        above it. Kept columns whose pivot is tiny relative to their own norm
        are re-tested after projecting to ``tol * 1e-4``; if that does not
        converge they are dropped.
        """
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            return both, keep
        R = np.linalg.qr(both[:, 1:][:, idx], mode="r")
        norms = np.linalg.norm(stacked[:, 1:][:, idx], axis=0)
        rel = np.abs(np.diag(R))[: idx.size] / np.maximum(norms, np.finfo(float).tiny)
        suspect = rel < REFINE_BELOW
        if not suspect.any():
            return both, keep
        try:
            tight, n_iter = demean(stacked, fe, tol=self.tol * 1e-4, max_iter=self.max_iter)
        except ConvergenceError:
            keep = keep.copy()
            keep[idx[suspect]] = False
            return both, keep
        self.n_iter_ += n_iter
        return tight, independent_columns(tight[:, 1:], self.collinear_tol)

    def predict(self, X, groups):
        """Fitted values for units seen in ``fit`` (NaN for unseen units)."""
        check_is_fitted(self, "coef_")
        if self.alpha_ is None:
            raise NotImplementedError("prediction needs a single fixed-effect dimension")
        X = check_array(X, ensure_min_features=0)
        beta = np.where(self.kept_, self.coef_, 0.0)
        alpha = np.array([self.alpha_.get(g, np.nan) for g in np.asarray(groups).tolist()])
        return X @ beta + alpha
