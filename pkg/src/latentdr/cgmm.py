"""Conditional Gaussian mixture of linear regressions.

All components share one noise variance. Prediction for a new covariate
vector weights the component regressions with the training responsibilities
of its nearest training row.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .em import EmTrace
from .regressors import as_design, nearest_rows, weighted_lstsq

SIGMA2_FLOOR = 1e-10
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class CgmmModel:
    weights: np.ndarray
    coefs: np.ndarray
    sigma2: float
    responsibilities: np.ndarray = None
    X: np.ndarray = None

    @property
    def K(self) -> int:
        return self.weights.size

    def permuted(self, order) -> "CgmmModel":
        order = np.asarray(order)
        resp = None if self.responsibilities is None else self.responsibilities[:, order]
        return CgmmModel(self.weights[order], self.coefs[order], self.sigma2, resp, self.X)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "coefs": self.coefs.tolist(),
            "sigma2": self.sigma2,
            "responsibilities": None if self.responsibilities is None else self.responsibilities.tolist(),
            "X": None if self.X is None else self.X.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "CgmmModel":
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
        return cls(arr(doc["weights"]), arr(doc["coefs"]), float(doc["sigma2"]),
                   arr(doc["responsibilities"]), arr(doc["X"]))


def _joint_log(weights, coefs, sigma2, X, y):
    """log(pi_k N(y_i | w_k.x_i, sigma2)), shape N x K."""
    resid = y[:, None] - X @ coefs.T
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] - 0.5 * (LOG_2PI + np.log(sigma2) + resid**2 / sigma2)


def _e_step(weights, coefs, sigma2, X, y):
    joint = _joint_log(weights, coefs, sigma2, X, y)
    norm = logsumexp(joint, axis=1)
    resp = np.exp(joint - norm[:, None])
    resp /= resp.sum(1, keepdims=True)
    return resp, float(norm.sum())


def cgmm_e_step(model: CgmmModel, X, y) -> np.ndarray:
    """Responsibilities, computed in log space."""
    X, y = as_design(X, y)
    if X.shape[1] != model.coefs.shape[1]:
        raise ValueError("covariate dimension does not match the model")
    return _e_step(model.weights, model.coefs, model.sigma2, X, y)[0]


def cgmm_m_step(resp, X, y):
    """(weights, coefs, sigma2) maximizing the expected complete
    log-likelihood for fixed responsibilities."""
    X, y = as_design(X, y)
    resp = np.asarray(resp, dtype=float)
    n = X.shape[0]
    weights = resp.sum(0) / n
    coefs = np.vstack([weighted_lstsq(X, y, resp[:, k])[0] for k in range(resp.shape[1])])
    resid = y[:, None] - X @ coefs.T
    sigma2 = max(float((resp * resid**2).sum() / n), SIGMA2_FLOOR)
    return weights, coefs, sigma2


def log_likelihood(model: CgmmModel, X, y) -> float:
    X, y = as_design(X, y)
    return _e_step(model.weights, model.coefs, model.sigma2, X, y)[1]


def expected_complete_loglik(model: CgmmModel, resp, X, y) -> float:
    X, y = as_design(X, y)
    joint = _joint_log(model.weights, model.coefs, model.sigma2, X, y)
    return float(np.sum(np.where(resp > 0, resp * joint, 0.0)))


def fit_cgmm(X, y, K: int = 2, seed: int = 0, tol: float = 1e-6, max_iter: int = 500):
    """EM for the mixture, started from perturbed least-squares weights.

    Each component starts at the OLS solution plus zero-mean Gaussian noise
    with per-coordinate scale ``0.1 * max(||w_ols||, s) / sqrt(d)``, where
    ``s`` is the OLS residual standard deviation; the floor keeps the
    perturbation alive when the pooled fit is near zero, as it is for two
    lines of opposite slope. The mixing weights
    start uniform and the variance at the OLS mean squared residual. The
    trace holds the data log-likelihood after every M-step; fitting stops
    once it rises by less than ``tol``.
    """
    X, y = as_design(X, y)
    if K < 1:
        raise ValueError("K must be >= 1")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    w_ols, _ = weighted_lstsq(X, y)
    sigma2 = max(float(np.mean((y - X @ w_ols) ** 2)), SIGMA2_FLOOR)
    scale = 0.1 * max(np.linalg.norm(w_ols), np.sqrt(sigma2)) / np.sqrt(d)
    coefs = w_ols[None, :] + rng.normal(0.0, 1.0, size=(K, d)) * scale
    weights = np.full(K, 1.0 / K)

    trace = EmTrace()
    resp, ll = _e_step(weights, coefs, sigma2, X, y)
    trace.values.append(ll)
    for _ in range(max_iter):
        weights, coefs, sigma2 = cgmm_m_step(resp, X, y)
        resp, ll = _e_step(weights, coefs, sigma2, X, y)
        trace.values.append(ll)
        if trace.values[-1] - trace.values[-2] < tol:
            trace.converged = True
            break
    return CgmmModel(weights, coefs, sigma2, resp, X), trace


def cgmm_predict(model: CgmmModel, x):
    """Component regressions mixed by the nearest training row's
    responsibilities (ties go to the lower row index)."""
    if model.X is None or model.X.shape[0] == 0:
        raise ValueError("model keeps no training rows")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.coefs.shape[1]:
        raise ValueError("covariate dimension does not match the model")
    j = nearest_rows(model.X, x, 1)[:, 0]
    out = np.einsum("nk,nk->n", model.responsibilities[j], x @ model.coefs.T)
    return float(out[0]) if single else out


class CGMM:
    def __init__(self, K=2, seed=0, tol=1e-6, max_iter=500):
        self.K, self.seed, self.tol, self.max_iter = K, seed, tol, max_iter
        self.model = None
        self.trace = None

    def fit(self, X, y):
        self.model, self.trace = fit_cgmm(X, y, self.K, self.seed, self.tol, self.max_iter)
        return self

    def predict(self, X):
        return cgmm_predict(self.model, np.atleast_2d(X))
