"""Logit with absorbed unit intercepts, fitted by iteratively reweighted least squares."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .absorb import Groups, _as_groups, demean, fe_degrees_of_freedom
from .covariance import cluster_robust_vcov, variance_or_nan
from .exceptions import ConvergenceError, EmptySampleError
from .linalg import COLLINEAR_TOL, independent_columns, qr_solve

#: Floor on IRLS working weights so saturated fitted probabilities stay finite.
MIN_WEIGHT = 1e-10


def fe_logit_loglik(theta, X, y, codes):
    """Full log-likelihood in ``theta = [beta, alpha]`` (one intercept per code)."""
    k = X.shape[1]
    eta = X @ theta[:k] + theta[k:][codes]
    return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))


def fe_logit_score(theta, X, y, codes):
    """Gradient of :func:`fe_logit_loglik`."""
    k = X.shape[1]
    eta = X @ theta[:k] + theta[k:][codes]
    r = y - expit(eta)
    n_groups = len(theta) - k
    return np.concatenate([X.T @ r, np.bincount(codes, weights=r, minlength=n_groups)])


def _deviance(y, eta):
    return -2.0 * float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))


class FixedEffectsLogit(ClassifierMixin, BaseEstimator):
    """Binary logit with one intercept per unit, the intercepts absorbed.

    Each IRLS step forms the working response and weights, removes their
    weighted unit means, and solves the weighted least-squares problem for the
    slopes. Units whose outcome never varies carry no information (their
    intercept diverges) and are dropped first.

    Parameters
    ----------
    tol : float, default=1e-8
        Convergence when ``|dev - dev_old| / (0.1 + |dev|) < tol``.
    max_iter : int, default=200
    cov_type : {'cluster', 'model'}, default='cluster'
    collinear_tol : float, default=1e-10
    fe_dof : {'nonnested', 'all'}, default='nonnested'

    Attributes
    ----------
    coef_, vcov_, bse_ : ndarray
    n_separated_ : int
        Units dropped because every outcome was 0 or every outcome was 1.
    deviance_ : float
    deviance_path_ : list of float
    grad_norm_ : float
        Norm of the profile score at the solution.
    alpha_ : dict
    """

    def __init__(self, tol=1e-8, max_iter=200, cov_type="cluster",
                 collinear_tol=COLLINEAR_TOL, fe_dof="nonnested"):
        self.tol = tol
        self.max_iter = max_iter
        self.cov_type = cov_type
        self.collinear_tol = collinear_tol
        self.fe_dof = fe_dof

    def fit(self, X, y, *, groups, clusters=None):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_features=0)
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("FixedEffectsLogit needs a 0/1 outcome")
        fe = _as_groups(groups)
        if len(fe) != 1:
            raise ValueError("FixedEffectsLogit absorbs exactly one fixed-effect dimension")
        unit = fe[0]
        cl_labels = unit.codes if clusters is None else np.asarray(clusters)

        ybar = unit.means(y)
        informative = (ybar > 0) & (ybar < 1)
        self.n_separated_ = int((~informative).sum())
        mask = informative[unit.codes]
        if not mask.any():
            raise EmptySampleError("every unit has a constant outcome")
        unit = unit.subset(mask)
        Xs, ys = X[mask], y[mask]
        clusters_ = Groups(cl_labels[mask])

        keep = independent_columns(demean(Xs, [unit])[0], self.collinear_tol)
        Xk = Xs[:, keep]

        mu = (ys + 0.5) / 2.0
        eta = np.log(mu / (1 - mu))
        beta = np.zeros(Xk.shape[1])
        dev = _deviance(ys, eta)
        path = [dev]
        converged = False
        for it in range(1, self.max_iter + 1):
            w = np.maximum(mu * (1 - mu), MIN_WEIGHT)
            z = eta + (ys - mu) / w
            both = demean(np.column_stack([z, Xk]), [unit], weights=w)[0]
            zd, Xd = both[:, 0], both[:, 1:]
            sw = np.sqrt(w)
            if Xd.shape[1]:
                beta_new = qr_solve(Xd * sw[:, None], zd * sw)[0]
            else:
                beta_new = np.zeros(0)
            eta_new = z - (zd - Xd @ beta_new)
            dev_new = _deviance(ys, eta_new)
            halvings = 0
            while it > 1 and dev_new > dev * (1 + 1e-12) and halvings < 30:
                eta_new = (eta + eta_new) / 2
                beta_new = (beta + beta_new) / 2
                dev_new = _deviance(ys, eta_new)
                halvings += 1
            change = abs(dev_new - dev) / (0.1 + abs(dev_new))
            eta, beta, dev = eta_new, beta_new, dev_new
            mu = expit(eta)
            path.append(dev)
            if change < self.tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"IRLS did not converge in {self.max_iter} iterations", residual=change, trajectory=path
            )

        w = mu * (1 - mu)
        Xw = demean(Xk, [unit], weights=w)[0]
        info = Xw.T @ (Xw * w[:, None])
        bread = np.linalg.inv(info) if info.size else info
        resid = ys - mu
        k_eff = Xk.shape[1] + fe_degrees_of_freedom(
            [unit], clusters_ if self.cov_type == "cluster" else None,
            exclude_nested=self.fe_dof == "nonnested",
        )
        if self.cov_type == "cluster" and Xk.shape[1]:
            vk = variance_or_nan(cluster_robust_vcov, Xk.shape[1], Xw, resid, clusters_, k_eff, bread)
        else:
            vk = bread

        k = X.shape[1]
        self.coef_ = np.full(k, np.nan)
        self.coef_[keep] = beta
        self.vcov_ = np.full((k, k), np.nan)
        self.vcov_[np.ix_(keep, keep)] = vk
        self.bse_ = np.sqrt(np.maximum(np.diag(self.vcov_), 0.0))
        self.kept_ = keep
        self.sample_mask_ = mask
        self.n_iter_ = it
        self.deviance_ = dev
        self.deviance_path_ = path
        self.grad_norm_ = float(np.linalg.norm(Xk.T @ resid))
        self.n_obs_ = int(mask.sum())
        self.n_groups_ = unit.n_groups
        self.n_clusters_ = clusters_.n_groups
        self.k_effective_ = k_eff
        self.resid_ = resid
        self.alpha_ = dict(zip(unit.levels.tolist(), unit.means(eta - Xk @ beta)))
        self.n_features_in_ = k
        self.classes_ = np.array([0.0, 1.0])
        return self

    def decision_function(self, X, groups):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_min_features=0)
        beta = np.where(self.kept_, self.coef_, 0.0)
        alpha = np.array([self.alpha_.get(g, np.nan) for g in np.asarray(groups).tolist()])
        return X @ beta + alpha

    def predict_proba(self, X, groups):
        p = expit(self.decision_function(X, groups))
        return np.column_stack([1 - p, p])

    def predict(self, X, groups):
        return (self.decision_function(X, groups) > 0).astype(float)
