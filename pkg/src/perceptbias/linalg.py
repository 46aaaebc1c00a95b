"""Least-squares helpers with column-order collinearity detection."""

from __future__ import annotations

import numpy as np
import scipy.linalg

COLLINEAR_TOL = 1e-10


def independent_columns(X, tol=COLLINEAR_TOL):
    """Boolean mask of columns kept when scanning ``X`` left to right.

    A column is dropped when its triangular-factor pivot is below ``tol``
    times the largest pivot, i.e. it is (numerically) spanned by earlier
    kept columns. Earlier columns always win, so the drop order is the
    column order. The factorization is repeated on the survivors, dropping
    one column per pass, until nothing more is dropped.
    """
    X = np.asarray(X, dtype=float)
    keep = np.ones(X.shape[1], dtype=bool)
    if X.shape[1] == 0:
        return keep
    while True:
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            return keep
        R = np.linalg.qr(X[:, idx], mode="r")
        k = min(R.shape)
        diag = np.abs(np.diag(R)[:k])
        top = diag.max() if k else 0.0
        bad = diag <= tol * top if top > 0 else np.ones(k, dtype=bool)
        if bad.any():
            # pivots after a degenerate one are unreliable, so drop only the first
            keep[idx[np.argmax(bad)]] = False
            continue
        # the leading k columns are independent and span all n rows; the rest are redundant
        keep[idx[k:]] = False
        return keep


def qr_solve(X, y):
    """Solve ``min ||y - X b||`` for full-column-rank ``X``.

    Returns
    -------
    coef : ndarray
    R : ndarray
        Upper-triangular factor, for the bread ``(X'X)^-1 = R^-1 R^-T``.
    """
    Q, R = np.linalg.qr(X, mode="reduced")
    coef = scipy.linalg.solve_triangular(R, Q.T @ y, check_finite=False)
    return coef, R


def inv_from_r(R):
    """``(R'R)^{-1}`` from an upper-triangular ``R``."""
    Rinv = scipy.linalg.solve_triangular(R, np.eye(R.shape[0]), check_finite=False)
    return Rinv @ Rinv.T
