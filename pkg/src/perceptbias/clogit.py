"""Conditional (fixed-effects) logistic regression with exact stratum likelihoods.

Within a stratum of ``n`` rows and ``k`` successes the likelihood is the
probability of the observed success set among all size-``k`` subsets. The
denominator is the elementary symmetric polynomial of order ``k`` in
``exp(x_j' theta)``, computed by the usual one-element-at-a-time recursion.
Inclusion probabilities of single rows and row pairs come from the same
recursion with the relevant terms zeroed, giving the score and the exact
Hessian without materializing any subset.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_X_y

from .absorb import Groups, demean
from .covariance import cluster_robust_vcov, variance_or_nan
from .exceptions import ConvergenceError, EmptySampleError, SeparationError
from .linalg import COLLINEAR_TOL, independent_columns

CHUNK = 4096


def esp(e, k):
    """Elementary symmetric polynomials of orders ``0..k`` along the last axis.

    Parameters
    ----------
    e : ndarray of shape (..., n)
    k : int

    Returns
    -------
    ndarray of shape (..., k + 1)
    """
    out = np.zeros(e.shape[:-1] + (k + 1,))
    out[..., 0] = 1.0
    for t in range(e.shape[-1]):
        out[..., 1:] = out[..., 1:] + e[..., t, None] * out[..., :-1]
    return out


class _Block:
    """Strata sharing the same (size, successes), stacked for vectorized recursion."""

    def __init__(self, rows, n, k):
        self.rows = rows  # (G, n) indices into the estimation arrays
        self.n = n
        self.k = k
        self.pairs = np.array(list(combinations(range(n), 2)), dtype=np.intp).reshape(-1, 2)


def _stratum_blocks(strata: Groups, y):
    """Pack strata into :class:`_Block` objects; returns (blocks, successes per stratum)."""
    ordered = strata.order
    sizes = strata.counts
    succ = np.add.reduceat(y[ordered], strata.starts) if len(y) else np.zeros(0)
    succ = np.rint(succ).astype(int)
    by_shape: dict = {}
    for g in range(strata.n_groups):
        start = strata.starts[g]
        idx = ordered[start:start + sizes[g]]
        by_shape.setdefault((int(sizes[g]), int(succ[g])), []).append(idx)
    blocks = [
        _Block(np.vstack(v), n, k) for (n, k), v in sorted(by_shape.items())
    ]
    return blocks, succ


def _block_terms(block, X, y, theta, want_hess):
    """Log-likelihood, score, (negated) Hessian and fitted inclusion probabilities for one block."""
    n, k = block.n, block.k
    p = X.shape[1]
    ll = 0.0
    grad = np.zeros(p)
    info = np.zeros((p, p))
    pi_rows = []
    if k == 0 or k == n:
        return ll, grad, info, [(block.rows, y[block.rows])]
    for lo in range(0, len(block.rows), CHUNK):
        rows = block.rows[lo:lo + CHUNK]
        Xg = X[rows]  # (G, n, p)
        yg = y[rows]
        eta = Xg @ theta
        shift = eta.max(axis=1, keepdims=True)
        e = np.exp(eta - shift)
        denom = esp(e, k)[:, k]
        ll += float(np.sum((yg * eta).sum(axis=1) - k * shift[:, 0] - np.log(denom)))

        # single-row inclusion probabilities: e_j * ESP_{k-1}(e without j) / ESP_k(e)
        drop_one = np.broadcast_to(e[:, None, :], e.shape[:1] + (n, n)).copy()
        drop_one[:, np.arange(n), np.arange(n)] = 0.0
        pi = e * esp(drop_one, k - 1)[..., k - 1] / denom[:, None]
        grad += np.einsum("gjp,gj->p", Xg, yg - pi)
        pi_rows.append((rows, pi))

        if want_hess:
            cov = -pi[:, :, None] * pi[:, None, :]
            cov[:, np.arange(n), np.arange(n)] += pi
            if k >= 2 and len(block.pairs):
                a, b = block.pairs[:, 0], block.pairs[:, 1]
                drop_two = np.broadcast_to(e[:, None, :], e.shape[:1] + (len(a), n)).copy()
                drop_two[:, np.arange(len(a)), a] = 0.0
                drop_two[:, np.arange(len(a)), b] = 0.0
                pij = e[:, a] * e[:, b] * esp(drop_two, k - 2)[..., k - 2] / denom[:, None]
                cov[:, a, b] += pij
                cov[:, b, a] += pij
            cx = np.einsum("gjl,glq->gjq", cov, Xg)
            info += Xg.reshape(-1, p).T @ cx.reshape(-1, p)
    return ll, grad, info, pi_rows


class _Problem:
    def __init__(self, X, y, strata: Groups):
        self.X = X
        self.y = y
        self.blocks, self.successes = _stratum_blocks(strata, y)

    def evaluate(self, theta, want_hess=True):
        ll = 0.0
        grad = np.zeros(self.X.shape[1])
        info = np.zeros((self.X.shape[1],) * 2)
        fitted = np.zeros(len(self.y))
        for block in self.blocks:
            l, g, h, pis = _block_terms(block, self.X, self.y, theta, want_hess)
            ll += l
            grad += g
            info += h
            for rows, pi in pis:
                fitted[rows] = pi
        return ll, grad, info, fitted


def conditional_loglik(theta, X, y, strata):
    """Conditional log-likelihood, score and observed information.

    Strata whose outcomes are all equal contribute zero and may be included.

    Returns
    -------
    loglik : float
    score : ndarray of shape (p,)
    information : ndarray of shape (p, p)
        Negative Hessian of the log-likelihood.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = strata if isinstance(strata, Groups) else Groups(np.asarray(strata))
    ll, g, info, _ = _Problem(X, y, groups).evaluate(np.asarray(theta, dtype=float))
    return ll, g, info


class ConditionalLogit(BaseEstimator):
    """Logistic regression conditioned on the number of successes per stratum.

    Stratum intercepts drop out of the conditional likelihood, so nothing
    about them is estimated. Strata with no variation in the outcome are
    uninformative and removed.

    Parameters
    ----------
    tol : float, default=1e-10
        Newton stops when the score norm falls below ``tol``.
    max_iter : int, default=100
    separation_bound : float, default=20
        Any coefficient exceeding this magnitude (log-odds) is taken as
        evidence that no finite maximizer exists.
    cov_type : {'model', 'cluster'}, default='model'
        Inverse observed information, or a sandwich clustered on strata
        (or on ``clusters`` when given).
    collinear_tol : float, default=1e-10

    Attributes
    ----------
    coef_, vcov_, bse_ : ndarray
    loglike_ : float
    grad_norm_ : float
    n_strata_ : int
        Informative strata used.
    n_strata_dropped_ : int
    """

    def __init__(self, tol=1e-10, max_iter=100, separation_bound=20.0, cov_type="model",
                 collinear_tol=COLLINEAR_TOL):
        self.tol = tol
        self.max_iter = max_iter
        self.separation_bound = separation_bound
        self.cov_type = cov_type
        self.collinear_tol = collinear_tol

    def fit(self, X, y, *, groups, clusters=None, feature_names=None):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_features=1)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("ConditionalLogit needs a 0/1 outcome")
        strata = Groups(np.asarray(groups))
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        cl_labels = strata.codes if clusters is None else np.asarray(clusters)

        ybar = strata.means(y)
        informative = (ybar > 0) & (ybar < 1)
        self.n_strata_dropped_ = int((~informative).sum())
        mask = informative[strata.codes]
        if not mask.any():
            raise EmptySampleError("no stratum has both outcomes")
        strata = strata.subset(mask)
        Xs, ys = X[mask], y[mask]

        keep = independent_columns(demean(Xs, [strata])[0], self.collinear_tol)
        Xk = Xs[:, keep]
        kept_names = [nm for nm, kp in zip(names, keep) if kp]
        problem = _Problem(Xk, ys, strata)

        theta = np.zeros(Xk.shape[1])
        ll, grad, info, fitted = problem.evaluate(theta)
        converged = False
        path = [float(np.linalg.norm(grad))]
        for it in range(1, self.max_iter + 1):
            if np.linalg.norm(grad) < self.tol:
                converged = True
                it -= 1
                break
            try:
                step = np.linalg.solve(info, grad)
            except np.linalg.LinAlgError:
                step = np.full_like(grad, np.nan)
            if not np.all(np.isfinite(step)):
                raise SeparationError(
                    "singular information matrix; likely separation",
                    direction=dict(zip(kept_names, grad / np.linalg.norm(grad))),
                )
            t = 1.0
            while True:
                cand = theta + t * step
                ll_new, g_new, info_new, fit_new = problem.evaluate(cand)
                if ll_new >= ll - 1e-12 * max(1.0, abs(ll)) or t < 1e-8:
                    break
                t /= 2
            moved = np.max(np.abs(cand - theta))
            theta, ll, grad, info, fitted = cand, ll_new, g_new, info_new, fit_new
            path.append(float(np.linalg.norm(grad)))
            if np.max(np.abs(theta)) > self.separation_bound:
                raise SeparationError(
                    f"coefficients exceed {self.separation_bound} in log-odds; "
                    "the likelihood has no finite maximizer",
                    direction=dict(zip(kept_names, theta / np.linalg.norm(theta))),
                )
            if moved <= 1e-13 * (1 + np.max(np.abs(theta))):
                # floating-point floor: the Newton step no longer changes theta
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"Newton did not converge in {self.max_iter} iterations",
                residual=path[-1], trajectory=path,
            )

        bread = np.linalg.inv(info)
        if self.cov_type == "cluster":
            cl = Groups(cl_labels[mask])
            vk = variance_or_nan(cluster_robust_vcov, Xk.shape[1], Xk, ys - fitted, cl, Xk.shape[1], bread)
        elif self.cov_type == "model":
            vk = bread
        else:
            raise ValueError("cov_type must be 'model' or 'cluster'")

        k = X.shape[1]
        self.coef_ = np.full(k, np.nan)
        self.coef_[keep] = theta
        self.vcov_ = np.full((k, k), np.nan)
        self.vcov_[np.ix_(keep, keep)] = vk
        self.bse_ = np.sqrt(np.maximum(np.diag(self.vcov_), 0.0))
        self.kept_ = keep
        self.sample_mask_ = mask
        self.loglike_ = ll
        self.grad_norm_ = float(np.linalg.norm(grad))
        self.grad_path_ = path
        self.n_iter_ = it
        self.n_strata_ = strata.n_groups
        self.n_obs_ = int(mask.sum())
        self.resid_ = ys - fitted
        self.n_features_in_ = k
        return self
