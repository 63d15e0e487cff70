"""Synthetic ordered-choice data with known ground truth, and brute-force oracles."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._numeric import sigmoid
from .data import Dataset
from .discretize import TIE_RTOL, Breaks, assign_categories, category_summary
from .errors import DataError

HETEROGENEITY_KINDS = ("none", "interaction", "category_specific")
BRUTE_FORCE_LIMIT = 14


@dataclass(frozen=True)
class GenSpec:
    """Generative model U* = beta . x [+ sum gamma x_a x_b] + logistic noise.

    In ``category_specific`` mode each cut k is compared against its own index
    ``category_betas[k] . x + eta`` (one shared noise draw per row).
    """

    n_obs: int
    n_features: int
    beta_true: tuple[float, ...]
    deltas_true: tuple[float, ...]
    heterogeneity: str = "none"
    interaction_pairs: tuple[tuple[int, int], ...] = ()
    interaction_strengths: tuple[float, ...] = ()
    category_betas: tuple[tuple[float, ...], ...] = ()
    binary_features: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 1:
            raise DataError("n_obs must be >= 1")
        if len(self.beta_true) != self.n_features:
            raise DataError("beta_true must have n_features entries")
        d = np.asarray(self.deltas_true, dtype=float)
        if d.size < 1 or np.any(np.diff(d) <= 0):
            raise DataError("deltas_true must be non-empty and strictly increasing")
        if self.heterogeneity not in HETEROGENEITY_KINDS:
            raise DataError(f"heterogeneity must be one of {HETEROGENEITY_KINDS}")
        if len(self.interaction_pairs) != len(self.interaction_strengths):
            raise DataError("interaction pairs and strengths must align")
        for a, b in self.interaction_pairs:
            if not (0 <= a < self.n_features and 0 <= b < self.n_features):
                raise DataError(f"interaction pair ({a}, {b}) out of range")
        if self.heterogeneity == "category_specific":
            if len(self.category_betas) != d.size or any(len(r) != self.n_features for r in self.category_betas):
                raise DataError("category_betas must be (K-1) x n_features")
        for j in self.binary_features:
            if not 0 <= j < self.n_features:
                raise DataError(f"binary feature index {j} out of range")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "deltas_true", tuple(float(v) for v in self.deltas_true))
        object.__setattr__(self, "interaction_pairs", tuple((int(a), int(b)) for a, b in self.interaction_pairs))
        object.__setattr__(self, "interaction_strengths", tuple(float(g) for g in self.interaction_strengths))
        object.__setattr__(self, "category_betas", tuple(tuple(float(v) for v in r) for r in self.category_betas))
        object.__setattr__(self, "binary_features", tuple(int(j) for j in self.binary_features))

    @property
    def K(self) -> int:
        return len(self.deltas_true) + 1

    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"x{j + 1}" for j in range(self.n_features))

    def to_dict(self) -> dict:
        return {
            "n_obs": self.n_obs, "n_features": self.n_features,
            "beta_true": list(self.beta_true), "deltas_true": list(self.deltas_true),
            "heterogeneity": self.heterogeneity,
            "interaction_pairs": [list(p) for p in self.interaction_pairs],
            "interaction_strengths": list(self.interaction_strengths),
            "category_betas": [list(r) for r in self.category_betas],
            "binary_features": list(self.binary_features), "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        return cls(
            n_obs=int(d["n_obs"]), n_features=int(d["n_features"]),
            beta_true=tuple(d["beta_true"]), deltas_true=tuple(d["deltas_true"]),
            heterogeneity=d.get("heterogeneity", "none"),
            interaction_pairs=tuple(tuple(p) for p in d.get("interaction_pairs", ())),
            interaction_strengths=tuple(d.get("interaction_strengths", ())),
            category_betas=tuple(tuple(r) for r in d.get("category_betas", ())),
            binary_features=tuple(d.get("binary_features", ())),
            seed=int(d.get("seed", 0)),
        )


def _draw(spec: GenSpec):
    """Features and logistic noise, drawn in a fixed order from one seeded stream."""
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n_obs, spec.n_features))
    for j in spec.binary_features:
        X[:, j] = (rng.random(spec.n_obs) < 0.5).astype(float)
    u = rng.random(spec.n_obs)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    noise = np.log(u) - np.log1p(-u)           # inverse logistic CDF
    return X, noise


def latent_index(spec: GenSpec, X) -> np.ndarray:
    """Systematic part of U* (everything except the noise)."""
    X = np.asarray(X, dtype=float)
    eta = X @ np.asarray(spec.beta_true)
    if spec.heterogeneity == "interaction":
        for (a, b), g in zip(spec.interaction_pairs, spec.interaction_strengths):
            eta = eta + g * X[:, a] * X[:, b]
    return eta


def gen_ordered_logit(spec: GenSpec) -> Dataset:
    if spec.heterogeneity != "none":
        raise DataError("gen_ordered_logit needs heterogeneity='none'; use gen_heterogeneous")
    X, noise = _draw(spec)
    labels = assign_categories(latent_index(spec, X) + noise, spec.deltas_true)
    return Dataset(X, spec.feature_names(), labels, spec.K)


def gen_heterogeneous(spec: GenSpec) -> Dataset:
    if spec.heterogeneity == "none":
        raise DataError("gen_heterogeneous needs a heterogeneity mode")
    X, noise = _draw(spec)
    if spec.heterogeneity == "interaction":
        labels = assign_categories(latent_index(spec, X) + noise, spec.deltas_true)
    else:
        B = np.asarray(spec.category_betas)
        crossed = (X @ B.T + noise[:, None]) > np.asarray(spec.deltas_true)
        labels = 1 + crossed.sum(axis=1)
    return Dataset(X, spec.feature_names(), labels, spec.K)


def generate(spec: GenSpec) -> Dataset:
    return gen_ordered_logit(spec) if spec.heterogeneity == "none" else gen_heterogeneous(spec)


def true_choice_probs(spec: GenSpec, X) -> np.ndarray:
    """Exact P(y = k | x) under the generative model, shape (N, K)."""
    X = np.asarray(X, dtype=float)
    d = np.asarray(spec.deltas_true)
    if spec.heterogeneity == "category_specific":
        # y - 1 counts cuts with noise > delta_k - beta_k . x; sort those cut points
        cuts = np.sort(d - X @ np.asarray(spec.category_betas).T, axis=1)
    else:
        cuts = d - latent_index(spec, X)[:, None]
    cdf = sigmoid(cuts)
    ones = np.ones((X.shape[0], 1))
    zeros = np.zeros((X.shape[0], 1))
    return np.hstack([cdf, ones]) - np.hstack([zeros, cdf])


def bayes_accuracy(spec: GenSpec, X) -> float:
    """Expected accuracy of the Bayes classifier (mean of max_k P(k | x))."""
    return float(np.mean(np.max(true_choice_probs(spec, X), axis=1)))


# ----------------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------------

def _ssd(v) -> float:
    return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0


def brute_force_jenks(values, K: int) -> Breaks:
    """Exhaustive search over contiguous partitions, same tie-break as ``jenks_breaks``.

    Breaks are only allowed between distinct sorted values.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    n = x.size
    if n > BRUTE_FORCE_LIMIT:
        raise DataError(f"brute force is limited to n <= {BRUTE_FORCE_LIMIT}")
    if np.unique(x).size < K:
        raise DataError(f"need at least {K} distinct values")
    positions = [i for i in range(1, n) if x[i - 1] < x[i]]
    results = []
    for cuts in itertools.combinations(positions, K - 1):
        edges = (0,) + cuts + (n,)
        cost = sum(_ssd(x[edges[i]:edges[i + 1]]) for i in range(K))
        results.append((cost, tuple(float(x[c - 1]) for c in cuts)))
    best = min(c for c, _ in results)
    tol = TIE_RTOL * max(1.0, abs(best))
    cost, thresholds = min((r for r in results if r[0] <= best + tol), key=lambda r: r[1])
    out = category_summary(assign_categories(x, thresholds), thresholds,
                           lower_bound=float(x[0]), upper_bound=float(x[-1]))
    return Breaks(out.thresholds, out.lower_bound, out.upper_bound, out.category_counts,
                  out.category_shares, objective=cost)


def central_difference(func, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``func`` at vector ``x``, one coordinate at a time."""
    if not step > 0:
        raise DataError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty(flat.size)
    for i in range(flat.size):
        up = flat.copy()
        down = flat.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (func(up.reshape(x.shape)) - func(down.reshape(x.shape))) / (2.0 * step)
    return grad.reshape(x.shape)


def finite_diff_oracle(fit_or_params, data, target: str = "loss-gradient", step: float = 1e-6,
                       variable: str | None = None):
    """Numeric derivatives used to check the analytic paths.

    ``loss-gradient``: ``fit_or_params`` is a ReslogitParams and ``data`` an
    (X, y) pair; returns d loss / d theta in ``to_vector`` order.

    ``elasticity``: ``fit_or_params`` is a fitted model and ``data`` a Dataset;
    returns dP_n^j / d x_n (raw units) for ``variable``, shape (N, K), taking
    an absolute ``step`` on every row.
    """
    if not step > 0:
        raise DataError("step must be positive")
    if target == "loss-gradient":
        from .reslogit import loss
        params = fit_or_params
        X, y = data
        return central_difference(lambda v: loss(params.with_vector(v), X, y),
                                  params.to_vector(), step)
    if target == "elasticity":
        if variable is None:
            raise DataError("variable is required for the elasticity target")
        x = data.column(variable)
        up = fit_or_params.predict_proba(data.with_column(variable, x + step))
        down = fit_or_params.predict_proba(data.with_column(variable, x - step))
        return (up - down) / (2.0 * step)
    raise DataError(f"unknown target {target!r}")
