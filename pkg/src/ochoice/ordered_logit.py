"""Proportional-odds (ordered logit) model.

Latent index ``eta = beta . x`` (no intercept) and increasing cut points
``delta_1 < ... < delta_{K-1}``. Exceedance is ``P(y > k) = sigmoid(eta - delta_k)``
and ``P(y = k) = P(y > k-1) - P(y > k)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._numeric import log_sigmoid, logit, sigmoid, softplus, softplus_inverse
from .data import Dataset, DesignSpec, ScalingParams, design_matrix, standardize
from .errors import DataError, NumericalError

DIVERGENCE_LIMIT = 50.0
LL_RESOLUTION = 1e-10


def exceedance_prob(beta, x, delta):
    """P(U* > delta) = sigmoid(beta . x - delta)."""
    eta = np.dot(np.asarray(x, dtype=np.float64), np.asarray(beta, dtype=np.float64))
    return sigmoid(eta - delta)


def _check_deltas(deltas):
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size > 1 and not np.all(np.diff(deltas) > 0):
        raise DataError("thresholds must be strictly increasing")
    return deltas


def choice_probs(beta, deltas, x) -> np.ndarray:
    """Category probabilities for one row (K,) or many rows (N, K)."""
    deltas = _check_deltas(deltas)
    x = np.asarray(x, dtype=np.float64)
    eta = x @ np.asarray(beta, dtype=np.float64)
    return probs_from_index(eta, deltas)


def probs_from_index(eta, deltas) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    exceed = sigmoid(eta[..., None] - deltas)
    ones = np.ones(eta.shape + (1,))
    zeros = np.zeros(eta.shape + (1,))
    upper = np.concatenate([ones, exceed], axis=-1)
    lower = np.concatenate([exceed, zeros], axis=-1)
    return upper - lower


def log_odds_exceedance(beta, deltas, x) -> np.ndarray:
    """ln[P(y>k) / (1 - P(y>k))] for k = 1..K-1, i.e. ``eta - delta_k``."""
    eta = np.asarray(x, dtype=np.float64) @ np.asarray(beta, dtype=np.float64)
    return eta[..., None] - np.asarray(deltas, dtype=np.float64)


def _interval_terms(eta, deltas, y):
    """Per-observation pieces of ln P(y_n) with a = eta - delta_{y-1}, b = eta - delta_y.

    Returns (logp, r_a, r_b, s_a, s_b, has_lower, has_upper) where
    r_a = sigma'(a)/P, r_b = sigma'(b)/P, s_* = sigma(*). Open ends (a = +inf,
    b = -inf) are handled by masks so no infinities enter the arithmetic.
    """
    K = deltas.size + 1
    has_lower = y > 1          # finite delta_{y-1}
    has_upper = y < K          # finite delta_y
    d_ext = np.concatenate([[0.0], deltas, [0.0]])
    a = np.where(has_lower, eta - d_ext[y - 1], 0.0)
    b = np.where(has_upper, eta - d_ext[np.minimum(y, K)], 0.0)
    # ln P = ln sigma(a) + ln sigma(-b) + ln(1 - exp(b - a)); open ends drop terms
    logp = np.zeros_like(eta)
    logp += np.where(has_lower, log_sigmoid(a), 0.0)
    logp += np.where(has_upper, log_sigmoid(-b), 0.0)
    both = has_lower & has_upper
    gap = np.where(both, b - a, -1.0)
    logp += np.where(both, np.log(-np.expm1(np.minimum(gap, -1e-300))), 0.0)
    log_slope_a = log_sigmoid(a) + log_sigmoid(-a)
    log_slope_b = log_sigmoid(b) + log_sigmoid(-b)
    r_a = np.where(has_lower, np.exp(log_slope_a - logp), 0.0)
    r_b = np.where(has_upper, np.exp(log_slope_b - logp), 0.0)
    return logp, r_a, r_b, sigmoid(a), sigmoid(b), has_lower, has_upper


def log_likelihood(beta, deltas, X, y) -> float:
    deltas = np.asarray(deltas, dtype=np.float64)
    eta = X @ np.asarray(beta, dtype=np.float64)
    logp = _interval_terms(eta, deltas, np.asarray(y))[0]
    return float(np.sum(logp))


def log_likelihood_obs(beta, deltas, X, y) -> np.ndarray:
    eta = X @ np.asarray(beta, dtype=np.float64)
    return _interval_terms(eta, np.asarray(deltas, dtype=np.float64), np.asarray(y))[0]


def _one_hot_pair(y, K, has_lower, has_upper):
    """Index matrices mapping per-observation lower/upper cut derivatives to deltas."""
    n = y.size
    lo = np.zeros((n, K - 1))
    hi = np.zeros((n, K - 1))
    rows = np.arange(n)
    lo[rows[has_lower], y[has_lower] - 2] = 1.0
    hi[rows[has_upper], y[has_upper] - 1] = 1.0
    return lo, hi


def score_obs(beta, deltas, X, y) -> np.ndarray:
    """Per-observation gradient of ln P(y_n) w.r.t. (beta, deltas): shape (N, p + K - 1)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    y = np.asarray(y)
    K = deltas.size + 1
    eta = X @ np.asarray(beta, dtype=np.float64)
    _, r_a, r_b, _, _, has_lower, has_upper = _interval_terms(eta, deltas, y)
    lo, hi = _one_hot_pair(y, K, has_lower, has_upper)
    g_eta = r_a - r_b
    return np.hstack([X * g_eta[:, None], -r_a[:, None] * lo + r_b[:, None] * hi])


def gradient(beta, deltas, X, y) -> np.ndarray:
    """Gradient of the total log-likelihood w.r.t. (beta, deltas)."""
    return score_obs(beta, deltas, X, y).sum(axis=0)


def hessian(beta, deltas, X, y) -> np.ndarray:
    """Analytic Hessian of the total log-likelihood w.r.t. (beta, deltas)."""
    deltas = np.asarray(deltas, dtype=np.float64)
    y = np.asarray(y)
    K = deltas.size + 1
    eta = X @ np.asarray(beta, dtype=np.float64)
    _, r_a, r_b, s_a, s_b, has_lower, has_upper = _interval_terms(eta, deltas, y)
    f_aa = r_a * (1.0 - 2.0 * s_a) - r_a ** 2
    f_bb = -r_b * (1.0 - 2.0 * s_b) - r_b ** 2
    f_ab = r_a * r_b
    lo, hi = _one_hot_pair(y, K, has_lower, has_upper)

    h_ee = f_aa + 2.0 * f_ab + f_bb
    h_el = -(f_aa + f_ab)       # d2 / d eta d delta_{y-1}
    h_eh = -(f_ab + f_bb)       # d2 / d eta d delta_y
    H_bb = X.T @ (X * h_ee[:, None])
    H_bd = X.T @ (h_el[:, None] * lo + h_eh[:, None] * hi)
    H_dd = (lo.T @ (lo * f_aa[:, None]) + hi.T @ (hi * f_bb[:, None])
            + lo.T @ (hi * f_ab[:, None]) + hi.T @ (lo * f_ab[:, None]))
    return np.block([[H_bb, H_bd], [H_bd.T, H_dd]])


def deltas_from_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size == 0:
        return theta.copy()
    steps = np.concatenate([[theta[0]], softplus(theta[1:])])
    return np.cumsum(steps)


def theta_from_deltas(deltas) -> np.ndarray:
    deltas = _check_deltas(deltas)
    if deltas.size == 0:
        return deltas.copy()
    return np.concatenate([[deltas[0]], softplus_inverse(np.diff(deltas))])


def _theta_jacobian(theta) -> np.ndarray:
    """d delta / d theta: lower triangular, column 0 all ones, column j>0 sigma(theta_j)."""
    m = theta.size
    J = np.zeros((m, m))
    if m == 0:
        return J
    J[:, 0] = 1.0
    for j in range(1, m):
        J[j:, j] = sigmoid(theta[j])
    return J


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 2000
    gtol: float = 1e-6
    armijo: float = 1e-4
    max_backtracks: int = 60


@dataclass(frozen=True, eq=False)
class OrderedLogitFit:
    beta: np.ndarray
    deltas: np.ndarray
    log_likelihood: float
    n_params: int
    converged: bool
    iterations: int
    spec: DesignSpec
    feature_names: tuple[str, ...]
    K: int
    scaling: ScalingParams = field(default_factory=ScalingParams)
    n_observations: int = 0

    kind = "ordered"

    def design(self, ds: Dataset) -> np.ndarray:
        return design_matrix(self.scaling.apply(ds), self.spec)

    def index(self, ds: Dataset) -> np.ndarray:
        return self.design(ds) @ self.beta

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return probs_from_index(self.index(ds), self.deltas)

    def predict(self, ds: Dataset) -> np.ndarray:
        """Modal category (1-based)."""
        return np.argmax(self.predict_proba(ds), axis=1) + 1

    def log_likelihood_on(self, ds: Dataset) -> float:
        return log_likelihood(self.beta, self.deltas, self.design(ds), ds.labels)

    def parameter_names(self) -> list[str]:
        return list(self.spec.feature_columns) + [f"threshold{k}" for k in range(1, self.K)]

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.deltas])

    def proba_input_derivative(self, ds: Dataset, column: str) -> np.ndarray:
        """Analytic dP_n^j / d(raw column value), shape (N, K)."""
        j = self.spec.feature_columns.index(column)
        scale = 1.0
        if column in self.scaling.columns:
            scale = 1.0 / self.scaling.sds[self.scaling.columns.index(column)]
        eta = self.index(ds)
        slopes = np.exp(log_sigmoid(eta[:, None] - self.deltas) + log_sigmoid(self.deltas - eta[:, None]))
        zeros = np.zeros((eta.size, 1))
        d_exceed = np.hstack([zeros, slopes, zeros])
        return (d_exceed[:, :-1] - d_exceed[:, 1:]) * self.beta[j] * scale

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_names": list(self.feature_names),
            "K": self.K,
            "design": self.spec.to_dict(),
            "scaling": self.scaling.to_dict(),
            "beta": [float(v) for v in self.beta],
            "deltas": [float(v) for v in self.deltas],
            "log_likelihood": self.log_likelihood,
            "n_params": self.n_params,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_observations": self.n_observations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrderedLogitFit":
        return cls(
            beta=np.array(d["beta"], dtype=np.float64),
            deltas=np.array(d["deltas"], dtype=np.float64),
            log_likelihood=float(d["log_likelihood"]),
            n_params=int(d["n_params"]),
            converged=bool(d["converged"]),
            iterations=int(d["iterations"]),
            spec=DesignSpec.from_dict(d["design"]),
            feature_names=tuple(d["feature_names"]),
            K=int(d["K"]),
            scaling=ScalingParams.from_dict(d.get("scaling", {})),
            n_observations=int(d.get("n_observations", 0)),
        )


def intercept_only_deltas(y, K) -> np.ndarray:
    """Cut points reproducing the empirical category shares at beta = 0."""
    counts = np.bincount(np.asarray(y), minlength=K + 1)[1:]
    cum = np.cumsum(counts)[:-1] / counts.sum()
    return logit(cum)


def fit_ordered_logit(train: Dataset, spec: DesignSpec, opts: FitOptions | None = None) -> OrderedLogitFit:
    """Maximum-likelihood fit by Newton-preconditioned gradient ascent with backtracking.

    Thresholds are optimized through ``delta_1 = t_1, delta_k = delta_{k-1} + softplus(t_k)``
    so they stay strictly increasing. The search direction is the gradient
    preconditioned by the Gauss-Newton curvature ``J' (-H) J`` whenever that is
    positive definite, and the plain gradient otherwise.
    """
    opts = opts or FitOptions()
    spec.validate_for(train)
    train.require_all_categories()
    if train.K < 2:
        raise DataError("ordered logit needs K >= 2")
    scaled, scaling = standardize(train, spec)
    X = design_matrix(scaled, spec)
    y = scaled.labels
    K = train.K
    p = X.shape[1]

    beta = np.zeros(p)
    theta = theta_from_deltas(intercept_only_deltas(y, K))

    def objective(b, t):
        return log_likelihood(b, deltas_from_theta(t), X, y)

    ll = objective(beta, theta)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        deltas = deltas_from_theta(theta)
        g_nat = gradient(beta, deltas, X, y)
        J = _theta_jacobian(theta)
        g = np.concatenate([g_nat[:p], J.T @ g_nat[p:]])
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient", iteration=it)
        if np.max(np.abs(g)) < opts.gtol:
            converged = True
            it -= 1
            break
        H_nat = hessian(beta, deltas, X, y)
        T = np.eye(p + K - 1)
        T[p:, p:] = J
        info = -(T.T @ H_nat @ T)
        try:
            L = np.linalg.cholesky(info)
            direction = np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            direction = g
        slope = g @ direction
        if slope <= LL_RESOLUTION * max(1.0, abs(ll)):
            # the expected gain is below what the log-likelihood can resolve, so
            # judge a full Newton step by the gradient it leaves behind instead
            b_new, t_new = beta + direction[:p], theta + direction[p:]
            g_new = gradient(b_new, deltas_from_theta(t_new), X, y)
            g_new = np.concatenate([g_new[:p], _theta_jacobian(t_new).T @ g_new[p:]])
            if np.all(np.isfinite(g_new)) and np.max(np.abs(g_new)) < np.max(np.abs(g)):
                beta, theta, ll = b_new, t_new, objective(b_new, t_new)
                continue
            converged = bool(np.max(np.abs(g)) < 1e3 * opts.gtol)
            break
        step = 1.0
        for _ in range(opts.max_backtracks):
            b_new = beta + step * direction[:p]
            t_new = theta + step * direction[p:]
            ll_new = objective(b_new, t_new)
            if np.isfinite(ll_new) and ll_new >= ll + opts.armijo * step * slope:
                break
            step *= 0.5
        else:
            if np.max(np.abs(g)) < 1e3 * opts.gtol:
                # at numerical precision, no further ascent is representable
                converged = True
                break
            raise NumericalError("line search failed to increase the log-likelihood",
                                 iteration=it)
        if not np.isfinite(ll_new):
            raise NumericalError("non-finite log-likelihood", iteration=it)
        beta, theta, ll = b_new, t_new, ll_new
    if np.any(np.abs(beta) > DIVERGENCE_LIMIT):
        warnings.warn(
            f"|beta| exceeds {DIVERGENCE_LIMIT}: a feature may perfectly separate the "
            "top or bottom category", RuntimeWarning, stacklevel=2)

    return OrderedLogitFit(
        beta=beta, deltas=deltas_from_theta(theta), log_likelihood=float(ll),
        n_params=p + K - 1, converged=converged, iterations=it, spec=spec,
        feature_names=train.feature_names, K=K, scaling=scaling, n_observations=train.N,
    )
