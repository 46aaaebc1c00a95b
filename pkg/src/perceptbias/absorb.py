"""Absorb categorical fixed effects by (alternating) group-mean projection."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConvergenceError

PROJ_TOL = 1e-10
PROJ_MAX_ITER = 10_000


class Groups:
    """Integer codes for one categorical dimension with cached sort order.

    Group sums use a stable sort plus ``np.add.reduceat`` so the reduction
    order is fixed by the codes alone.
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        self.levels, codes = np.unique(labels, return_inverse=True)
        self.codes = codes.astype(np.intp).ravel()
        self.n_groups = len(self.levels)
        self.order = np.argsort(self.codes, kind="stable")
        self.counts = np.bincount(self.codes, minlength=self.n_groups)
        self.starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))

    def __len__(self):
        return len(self.codes)

    def sums(self, values):
        """Per-group sums of a 1-d or 2-d array (rows are observations)."""
        return np.add.reduceat(values[self.order], self.starts, axis=0)

    def means(self, values, weights=None):
        if weights is None:
            s = self.sums(values)
            denom = self.counts
        else:
            w = weights if values.ndim == 1 else weights[:, None]
            s = self.sums(values * w)
            denom = self.sums(weights)
        if values.ndim == 1:
            return s / denom
        return s / denom[:, None]

    def subset(self, mask) -> "Groups":
        return Groups(self.levels[self.codes[mask]])


def _as_groups(fe):
    if isinstance(fe, Groups):
        return [fe]
    if isinstance(fe, (list, tuple)) and fe and all(not isinstance(g, Groups) and np.ndim(g) == 0 for g in fe):
        return [Groups(np.asarray(fe))]
    if isinstance(fe, (list, tuple)):
        return [g if isinstance(g, Groups) else Groups(g) for g in fe]
    fe = np.asarray(fe)
    if fe.ndim == 1:
        return [Groups(fe)]
    return [Groups(fe[:, j]) for j in range(fe.shape[1])]


def demean(values, fe, weights=None, tol=PROJ_TOL, max_iter=PROJ_MAX_ITER):
    """Residualize ``values`` on one or more sets of categorical indicators.

    One dimension is an exact (weighted) group-mean subtraction. Several
    dimensions are swept in turn until every column's group sums, in every
    dimension, are below ``tol`` times the column norm.

    Parameters
    ----------
    values : ndarray of shape (n,) or (n, k)
    fe : array-like of shape (n,) or (n, d), or list of Groups
    weights : ndarray of shape (n,), optional
    tol : float
    max_iter : int

    Returns
    -------
    residuals : ndarray, same shape as ``values``
    n_iter : int

    Raises
    ------
    ConvergenceError
        If alternating projections hit ``max_iter``.
    """
    groups = _as_groups(fe)
    out = np.array(values, dtype=float, copy=True)
    squeeze = out.ndim == 1
    if squeeze:
        out = out[:, None]
    if len(groups) == 1:
        g = groups[0]
        out -= g.means(out, weights)[g.codes]
        return (out[:, 0] if squeeze else out), 1

    w = np.ones(len(out)) if weights is None else np.asarray(weights, dtype=float)
    orig_norm = np.sqrt((w[:, None] * out**2).sum(axis=0))
    residual = np.inf
    for it in range(1, max_iter + 1):
        for g in groups:
            out -= g.means(out, weights)[g.codes]
        cur_norm = np.sqrt((w[:, None] * out**2).sum(axis=0))
        # the last dimension was just projected out exactly
        worst = np.zeros(out.shape[1])
        for g in groups[:-1]:
            worst = np.maximum(worst, np.abs(g.sums(out * w[:, None])).max(axis=0))
        scale = np.maximum(cur_norm, np.finfo(float).tiny)
        rel = worst / scale
        negligible = cur_norm <= 1e-13 * np.maximum(orig_norm, np.finfo(float).tiny)
        rel[negligible] = 0.0
        residual = float(rel.max()) if rel.size else 0.0
        if residual <= tol:
            return (out[:, 0] if squeeze else out), it
    raise ConvergenceError(
        f"alternating projections did not converge in {max_iter} iterations",
        residual=residual,
    )


def _components(a: Groups, b: Groups) -> int:
    n = a.n_groups + b.n_groups
    graph = coo_matrix(
        (np.ones(len(a.codes)), (a.codes, b.codes + a.n_groups)), shape=(n, n)
    )
    return int(connected_components(graph, directed=False)[0])


def nested_within(inner: Groups, outer: Groups) -> bool:
    """True when every level of ``inner`` falls inside a single level of ``outer``."""
    first = np.full(inner.n_groups, -1)
    first[inner.codes] = outer.codes
    return bool(np.all(first[inner.codes] == outer.codes))


def fe_degrees_of_freedom(fe, clusters=None, exclude_nested=True):
    """Degrees of freedom absorbed by the fixed effects.

    Counts ``sum(levels) - (dims - 1)`` and subtracts further redundant
    levels found from the connected components of each pair of dimensions.
    With ``exclude_nested``, dimensions nested within the cluster variable
    are left out of the count.
    """
    groups = _as_groups(fe)
    if clusters is not None and exclude_nested:
        cl = clusters if isinstance(clusters, Groups) else Groups(clusters)
        groups = [g for g in groups if not nested_within(g, cl)]
    if not groups:
        return 0
    dof = sum(g.n_groups for g in groups)
    for k in range(1, len(groups)):
        dof -= max(_components(groups[j], groups[k]) for j in range(k))
    return dof


class FixedEffectAbsorber(TransformerMixin, BaseEstimator):
    """Residualize columns on categorical fixed effects.

    ``fit`` records the group structure; ``transform`` projects any matrix
    with the same rows onto the orthogonal complement of the indicator space.

    Parameters
    ----------
    tol : float, default=1e-10
        Relative orthogonality tolerance for alternating projections.
    max_iter : int, default=10000

    Attributes
    ----------
    groups_ : list of Groups
    n_iter_ : int
        Sweeps used by the last ``transform``.
    """

    def __init__(self, tol=PROJ_TOL, max_iter=PROJ_MAX_ITER):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None, *, groups, sample_weight=None):
        X = check_array(X, ensure_2d=False, ensure_all_finite=True)
        groups_ = _as_groups(groups)
        if any(len(g) != X.shape[0] for g in groups_):
            raise ValueError("groups must have one label per row of X")
        self.groups_ = groups_
        self.sample_weight_ = None if sample_weight is None else np.asarray(sample_weight, float)
        self.n_features_in_ = 1 if X.ndim == 1 else X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "groups_")
        X = check_array(X, ensure_2d=False, ensure_all_finite=True)
        if X.shape[0] != len(self.groups_[0]):
            raise ValueError("X has a different number of rows than the fitted groups")
        out, self.n_iter_ = demean(X, self.groups_, self.sample_weight_, self.tol, self.max_iter)
        return out

    def fit_transform(self, X, y=None, *, groups, sample_weight=None):
        return self.fit(X, groups=groups, sample_weight=sample_weight).transform(X)
