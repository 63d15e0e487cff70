"""Ordinal residual logit: residual utility layers feeding a rank-consistent binary head.

Forward pass for one observation with features x:

    V0      = beta . x repeated K times (generic) or (beta_1 . x, ..., beta_K . x)
    V_m     = V_{m-1} - softplus(W_m V_{m-1}),   m = 1..M
    z       = w . V_M
    P(y>k)  = sigmoid(z + b_k),                  k = 1..K-1

All K-1 classifiers share ``z``, so their ordering across k is fixed by the
biases alone and is the same for every observation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._numeric import log_sigmoid, logit, sigmoid, softplus
from .data import Dataset, DesignSpec, ScalingParams, design_matrix, standardize
from .errors import DataError, NumericalError

DEFAULT_ALPHA_GRID = tuple(round(0.30 + 0.05 * i, 2) for i in range(7))
EARLY_STOP_METRICS = ("mpe", "loss")
# per-observation train loss this many times its initial value counts as divergence
DIVERGENCE_FACTOR = 1e3


# ----------------------------------------------------------------------------
# parameters
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReslogitParams:
    """Trainable blocks plus the decision threshold.

    ``beta`` is (p,) in generic mode and (K, p) in alternative-specific mode;
    entries where ``beta_mask`` is False are fixed at zero and not trained.
    """

    beta: np.ndarray
    residual_weights: np.ndarray
    coral_weights: np.ndarray
    coral_biases: np.ndarray
    alpha: float = 0.5
    task_weights: np.ndarray | None = None
    beta_mask: np.ndarray | None = None

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        w = np.array(self.coral_weights, dtype=np.float64).ravel()
        K = w.size
        W = np.array(self.residual_weights, dtype=np.float64)
        if W.size == 0:
            W = W.reshape(0, K, K)
        b = np.array(self.coral_biases, dtype=np.float64).ravel()
        if K < 2 or b.size != K - 1:
            raise DataError(f"need K >= 2 coral weights and K-1 biases, got {K} and {b.size}")
        if W.ndim != 3 or W.shape[1:] != (K, K):
            raise DataError(f"residual weights must have shape (M, {K}, {K}), got {W.shape}")
        if beta.ndim == 2 and beta.shape[0] != K:
            raise DataError("alternative-specific beta must have K rows")
        if beta.ndim not in (1, 2):
            raise DataError("beta must be 1-d (generic) or 2-d (alternative-specific)")
        lam = np.ones(K - 1) if self.task_weights is None else np.array(self.task_weights, dtype=np.float64)
        if lam.shape != (K - 1,) or np.any(lam <= 0):
            raise DataError("task weights must be K-1 positive numbers")
        if not 0.0 < float(self.alpha) < 1.0:
            raise DataError("alpha must lie in (0, 1)")
        mask = self.beta_mask
        if beta.ndim == 2:
            mask = np.ones(beta.shape, dtype=bool) if mask is None else np.array(mask, dtype=bool)
            if mask.shape != beta.shape:
                raise DataError("beta_mask must match beta")
            beta = np.where(mask, beta, 0.0)
        else:
            mask = None
        for arr in (beta, W, w, b):
            if not np.all(np.isfinite(arr)):
                raise NumericalError("non-finite parameter value")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "residual_weights", W)
        object.__setattr__(self, "coral_weights", w)
        object.__setattr__(self, "coral_biases", b)
        object.__setattr__(self, "task_weights", lam)
        object.__setattr__(self, "beta_mask", mask)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def K(self) -> int:
        return self.coral_weights.size

    @property
    def M(self) -> int:
        return self.residual_weights.shape[0]

    @property
    def mode(self) -> str:
        return "generic" if self.beta.ndim == 1 else "alternative_specific"

    @property
    def n_beta(self) -> int:
        return self.beta.size if self.beta_mask is None else int(self.beta_mask.sum())

    @property
    def n_params(self) -> int:
        """Free beta entries + M K^2 residual weights + K head weights + K-1 biases."""
        K = self.K
        return self.n_beta + self.M * K * K + K + (K - 1)

    def beta_vector(self) -> np.ndarray:
        return self.beta.ravel() if self.beta_mask is None else self.beta[self.beta_mask]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta_vector(), self.residual_weights.ravel(),
                               self.coral_weights, self.coral_biases])

    def with_vector(self, vec) -> "ReslogitParams":
        beta, W, w, b = _unpack(vec, self)
        return replace(self, beta=beta, residual_weights=W, coral_weights=w, coral_biases=b)

    def parameter_names(self, feature_names) -> list[str]:
        K = self.K
        names = []
        if self.beta_mask is None:
            names += list(feature_names)
        else:
            for k in range(K):
                for j, f in enumerate(feature_names):
                    if self.beta_mask[k, j]:
                        names.append(f"{f}[{k + 1}]")
        for m in range(self.M):
            names += [f"W{m + 1}[{i + 1},{j + 1}]" for i in range(K) for j in range(K)]
        names += [f"w[{k + 1}]" for k in range(K)]
        names += [f"bias{k + 1}" for k in range(K - 1)]
        return names

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "beta_mask": None if self.beta_mask is None else self.beta_mask.tolist(),
            "residual_weights": self.residual_weights.tolist(),
            "coral_weights": self.coral_weights.tolist(),
            "coral_biases": self.coral_biases.tolist(),
            "alpha": self.alpha,
            "task_weights": self.task_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReslogitParams":
        K = len(d["coral_weights"])
        W = np.array(d["residual_weights"], dtype=np.float64).reshape(-1, K, K)
        return cls(beta=np.array(d["beta"]), residual_weights=W,
                   coral_weights=np.array(d["coral_weights"]),
                   coral_biases=np.array(d["coral_biases"]), alpha=d["alpha"],
                   task_weights=np.array(d["task_weights"]),
                   beta_mask=None if d.get("beta_mask") is None else np.array(d["beta_mask"], dtype=bool))


def _unpack(vec, template: ReslogitParams):
    vec = np.asarray(vec, dtype=np.float64)
    K, M = template.K, template.M
    nb = template.n_beta
    if vec.size != template.n_params:
        raise DataError(f"parameter vector has {vec.size} entries, expected {template.n_params}")
    if template.beta_mask is None:
        beta = vec[:nb].copy()
    else:
        beta = np.zeros(template.beta.shape)
        beta[template.beta_mask] = vec[:nb]
    pos = nb
    W = vec[pos:pos + M * K * K].reshape(M, K, K)
    pos += M * K * K
    w = vec[pos:pos + K]
    b = vec[pos + K:pos + 2 * K - 1]
    return beta, W, w, b


# ----------------------------------------------------------------------------
# forward pass
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Layer outputs V_0..V_M, the pre-activations W_m V_{m-1}, z and exceedance."""

    v_layers: list
    preactivations: list
    z: np.ndarray
    exceedance: np.ndarray
    logits: np.ndarray


def deterministic_utilities(beta, x, K: int | None = None, mask=None) -> np.ndarray:
    """V_0 for one row (K,) or a batch (N, K)."""
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if beta.ndim == 1:
        if K is None:
            raise DataError("K is required in generic mode")
        if x.shape[-1] != beta.size:
            raise DataError(f"feature dimension {x.shape[-1]} does not match beta {beta.size}")
        eta = x @ beta
        return np.repeat(eta[..., None], K, axis=-1)
    if x.shape[-1] != beta.shape[1]:
        raise DataError(f"feature dimension {x.shape[-1]} does not match beta {beta.shape[1]}")
    if mask is not None:
        beta = np.where(mask, beta, 0.0)
    return x @ beta.T


def forward_utilities(V0, residual_weights) -> list:
    """[V_0, V_1, ..., V_M] with V_m = V_{m-1} - softplus(W_m V_{m-1})."""
    layers = [np.asarray(V0, dtype=np.float64)]
    for W in residual_weights:
        layers.append(layers[-1] - softplus(layers[-1] @ np.asarray(W).T))
    return layers


def coral_exceedance(VM, w, b) -> np.ndarray:
    """P(y > r_k) = sigmoid(w . V_M + b_k) for k = 1..K-1."""
    z = np.asarray(VM, dtype=np.float64) @ np.asarray(w, dtype=np.float64)
    return sigmoid(np.asarray(z)[..., None] + np.asarray(b, dtype=np.float64))


def forward(params: ReslogitParams, X) -> ForwardTrace:
    X = np.asarray(X, dtype=np.float64)
    V = [deterministic_utilities(params.beta, X, params.K, params.beta_mask)]
    pre = []
    for W in params.residual_weights:
        a = V[-1] @ W.T
        pre.append(a)
        V.append(V[-1] - softplus(a))
    z = V[-1] @ params.coral_weights
    logits = z[..., None] + params.coral_biases
    return ForwardTrace(V, pre, z, sigmoid(logits), logits)


def choice_probs_from_exceedance(p, return_flags: bool = False):
    """P(y = r_k) = P(y > r_{k-1}) - P(y > r_k) with P(y > r_0) = 1, P(y > r_K) = 0.

    Non-increasing input yields a proper distribution directly. Otherwise the
    negative entries are clamped to zero and the row renormalized; with
    ``return_flags`` the per-row violation and failure masks are returned too.
    """
    p = np.asarray(p, dtype=np.float64)
    ones = np.ones(p.shape[:-1] + (1,))
    zeros = np.zeros(p.shape[:-1] + (1,))
    raw = np.concatenate([ones, p], axis=-1) - np.concatenate([p, zeros], axis=-1)
    violated = np.any(raw < 0, axis=-1)
    probs = raw
    failed = np.zeros(violated.shape, dtype=bool)
    if np.any(violated):
        clamped = np.maximum(raw, 0.0)
        total = clamped.sum(axis=-1, keepdims=True)
        failed = (total[..., 0] <= 0) & violated
        K = raw.shape[-1]
        safe = np.where(total > 0, total, 1.0)
        fixed = np.where(total > 0, clamped / safe, 1.0 / K)
        probs = np.where(violated[..., None], fixed, raw)
    if return_flags:
        return probs, violated, failed
    return probs


def predict_rank(p, alpha: float = 0.5):
    """1 + number of classifiers with P(y > r_k) strictly above alpha."""
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")
    p = np.asarray(p, dtype=np.float64)
    out = 1 + np.sum(p > alpha, axis=-1)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


# ----------------------------------------------------------------------------
# loss and gradients
# ----------------------------------------------------------------------------

def extended_labels(y, K: int) -> np.ndarray:
    """(N, K-1) binary labels I[y_n > r_k]."""
    y = np.asarray(y)
    return (y[..., None] > np.arange(1, K)).astype(np.float64)


def _loss_terms(logits, levels, lam):
    return -lam * (levels * log_sigmoid(logits) + (1.0 - levels) * log_sigmoid(-logits))


def loss(params: ReslogitParams, X, y) -> float:
    """Total weighted binary cross-entropy over observations and the K-1 tasks."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if y.size == 0:
        raise DataError("empty batch")
    tr = forward(params, X)
    per_obs = _loss_terms(tr.logits, extended_labels(y, params.K), params.task_weights).sum(axis=1)
    bad = np.flatnonzero(~np.isfinite(per_obs))
    if bad.size:
        raise NumericalError("non-finite loss", observation=int(bad[0]))
    return float(np.sum(per_obs))


def loss_obs(params: ReslogitParams, X, y) -> np.ndarray:
    tr = forward(params, np.atleast_2d(X))
    return _loss_terms(tr.logits, extended_labels(y, params.K), params.task_weights).sum(axis=1)


def _backward(params: ReslogitParams, X, y, per_observation=False, blocks="all"):
    """Reverse pass. Returns total gradients, or (N, n) per-observation rows."""
    tr = forward(params, X)
    K, M = params.K, params.M
    levels = extended_labels(y, K)
    d_logits = params.task_weights * (sigmoid(tr.logits) - levels)       # (N, K-1)
    dz = d_logits.sum(axis=1)                                              # (N,)
    dV = dz[:, None] * params.coral_weights[None, :]                        # (N, K)
    dA_layers = [None] * M
    for m in range(M - 1, -1, -1):
        dA = -dV * sigmoid(tr.preactivations[m])
        dA_layers[m] = dA
        dV = dV + dA @ params.residual_weights[m]
    dV0 = dV
    if params.beta_mask is None:
        beta_rows = X * dV0.sum(axis=1)[:, None]                            # (N, p)
    else:
        beta_rows = (dV0[:, :, None] * X[:, None, :])[:, params.beta_mask]  # (N, free)

    if per_observation:
        if blocks == "beta":
            return beta_rows
        parts = [beta_rows]
        for m in range(M):
            parts.append((dA_layers[m][:, :, None] * tr.v_layers[m][:, None, :]).reshape(len(X), -1))
        parts += [tr.v_layers[M] * dz[:, None], d_logits]
        return np.hstack(parts)

    g_beta = np.zeros(params.beta.shape)
    if params.beta_mask is None:
        g_beta = beta_rows.sum(axis=0)
    else:
        g_beta[params.beta_mask] = beta_rows.sum(axis=0)
    g_W = np.zeros((M, K, K))
    for m in range(M):
        g_W[m] = dA_layers[m].T @ tr.v_layers[m]
    g_w = tr.v_layers[M].T @ dz
    g_b = d_logits.sum(axis=0)
    return g_beta, g_W, g_w, g_b


def gradient(params: ReslogitParams, X, y) -> ReslogitParams:
    """Exact gradient of ``loss`` as a ReslogitParams-shaped structure."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g_beta, g_W, g_w, g_b = _backward(params, X, np.atleast_1d(y))
    return replace(params, beta=g_beta, residual_weights=g_W, coral_weights=g_w, coral_biases=g_b)


def gradient_vector(params: ReslogitParams, X, y) -> np.ndarray:
    """``gradient`` flattened in ``to_vector`` order (free beta entries only)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g_beta, g_W, g_w, g_b = _backward(params, X, np.atleast_1d(y))
    gb = g_beta.ravel() if params.beta_mask is None else g_beta[params.beta_mask]
    return np.concatenate([gb, g_W.ravel(), g_w, g_b])


def per_observation_gradients(params: ReslogitParams, X, y, blocks: str = "beta") -> np.ndarray:
    """Row n is the gradient of observation n's loss; ``blocks`` is 'beta' or 'all'."""
    if blocks not in ("beta", "all"):
        raise DataError("blocks must be 'beta' or 'all'")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _backward(params, X, np.atleast_1d(y), per_observation=True, blocks=blocks)


def input_derivative(params: ReslogitParams, X, column: int):
    """Forward-mode d(choice probabilities)/d x[:, column]; shape (N, K).

    Valid where the exceedance probabilities are non-increasing (no clamping).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    tr = forward(params, X)
    if params.beta_mask is None:
        dV = np.full((X.shape[0], params.K), params.beta[column])
    else:
        dV = np.broadcast_to(params.beta[:, column], (X.shape[0], params.K)).copy()
    for m, W in enumerate(params.residual_weights):
        dV = dV - sigmoid(tr.preactivations[m]) * (dV @ W.T)
    dz = dV @ params.coral_weights
    dp = sigmoid(tr.logits) * sigmoid(-tr.logits) * dz[:, None]
    zeros = np.zeros((X.shape[0], 1))
    return np.hstack([zeros, dp]) - np.hstack([dp, zeros])


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    layers: int = 16
    batch_size: int = 64
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    max_epochs: int = 500
    early_stop_patience: int = 10
    seed: int = 0
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    strict_biases: bool = False
    task_weights: tuple[float, ...] | None = None
    early_stop_metric: str = "mpe"

    def __post_init__(self):
        if self.early_stop_metric not in EARLY_STOP_METRICS:
            raise DataError(f"early_stop_metric must be one of {EARLY_STOP_METRICS}")
        if self.layers < 0:
            raise DataError("layers must be >= 0")
        for name in ("batch_size", "learning_rate", "rmsprop_decay", "rmsprop_epsilon",
                     "max_epochs", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        if not self.rmsprop_decay < 1:
            raise DataError("rmsprop_decay must be below 1")
        if self.early_stop_patience >= self.max_epochs:
            raise DataError("early_stop_patience must be smaller than max_epochs")
        grid = tuple(float(a) for a in self.alpha_grid)
        if not grid or any(not 0 < a < 1 for a in grid):
            raise DataError("alpha grid must be non-empty with values in (0, 1)")
        object.__setattr__(self, "alpha_grid", grid)
        if self.task_weights is not None:
            object.__setattr__(self, "task_weights", tuple(float(t) for t in self.task_weights))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_grid"] = list(self.alpha_grid)
        if self.task_weights is not None:
            d["task_weights"] = list(self.task_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "alpha_grid" in known:
            known["alpha_grid"] = tuple(known["alpha_grid"])
        return cls(**known)


def parse_alpha_grid(text: str) -> tuple[float, ...]:
    """'lo:hi:step' -> inclusive grid rounded to 10 decimals; a single value is allowed."""
    parts = [float(t) for t in text.split(":")]
    if len(parts) == 1:
        return (parts[0],)
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise DataError(f"alpha grid must be lo:hi:step, got {text!r}")
    lo, hi, step = parts
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + i * step, 10) for i in range(n))


def biases_from_offsets(theta) -> np.ndarray:
    """Strict mode: b_1 = t_1, b_k = b_{k-1} - softplus(t_k) (strictly decreasing)."""
    theta = np.asarray(theta, dtype=np.float64)
    return np.cumsum(np.concatenate([[theta[0]], -softplus(theta[1:])]))


def offsets_from_biases(b) -> np.ndarray:
    from ._numeric import softplus_inverse
    b = np.asarray(b, dtype=np.float64)
    gaps = -np.diff(b)
    if np.any(gaps <= 0):
        raise DataError("strict mode needs strictly decreasing biases")
    return np.concatenate([[b[0]], softplus_inverse(gaps)])


def _offset_chain(theta, g_b):
    """Gradient w.r.t. offsets given gradient w.r.t. biases."""
    tail = np.cumsum(g_b[::-1])[::-1]           # sum_{k >= j} g_b[k]
    out = np.empty_like(theta)
    out[0] = tail[0]
    out[1:] = -sigmoid(theta[1:]) * tail[1:]
    return out


@dataclass(frozen=True, eq=False)
class ReslogitFit:
    params: ReslogitParams
    spec: DesignSpec
    feature_names: tuple[str, ...]
    K: int
    scaling: ScalingParams = field(default_factory=ScalingParams)
    history: tuple = ()
    best_epoch: int = 0
    alpha_scores: tuple = ()
    config: TrainConfig = field(default_factory=TrainConfig)
    n_observations: int = 0

    kind = "reslogit"

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def design(self, ds: Dataset) -> np.ndarray:
        return design_matrix(self.scaling.apply(ds), self.spec)

    def exceedance(self, ds: Dataset) -> np.ndarray:
        return forward(self.params, self.design(ds)).exceedance

    def choice_probabilities(self, ds: Dataset):
        """(probs, n_violations): probabilities plus the count of clamped rows."""
        probs, violated, _ = choice_probs_from_exceedance(self.exceedance(ds), return_flags=True)
        return probs, int(violated.sum())

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return self.choice_probabilities(ds)[0]

    def predict(self, ds: Dataset, alpha: float | None = None) -> np.ndarray:
        return predict_rank(self.exceedance(ds), self.params.alpha if alpha is None else alpha)

    def loss_on(self, ds: Dataset) -> float:
        return loss(self.params, self.design(ds), ds.labels)

    def log_likelihood_on(self, ds: Dataset) -> float:
        probs = self.predict_proba(ds)
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(probs[np.arange(ds.N), ds.labels - 1])))

    def parameter_names(self) -> list[str]:
        return self.params.parameter_names(self.spec.feature_columns)

    def parameter_vector(self) -> np.ndarray:
        return self.params.to_vector()

    def with_alpha(self, alpha: float) -> "ReslogitFit":
        return replace(self, params=replace(self.params, alpha=alpha))

    def proba_input_derivative(self, ds: Dataset, column: str) -> np.ndarray:
        j = self.spec.feature_columns.index(column)
        scale = 1.0
        if column in self.scaling.columns:
            scale = 1.0 / self.scaling.sds[self.scaling.columns.index(column)]
        return input_derivative(self.params, self.design(ds), j) * scale

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_names": list(self.feature_names),
            "K": self.K,
            "design": self.spec.to_dict(),
            "scaling": self.scaling.to_dict(),
            "params": self.params.to_dict(),
            "n_params": self.n_params,
            "best_epoch": self.best_epoch,
            "history": list(self.history),
            "alpha_scores": [list(s) for s in self.alpha_scores],
            "config": self.config.to_dict(),
            "n_observations": self.n_observations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReslogitFit":
        return cls(
            params=ReslogitParams.from_dict(d["params"]),
            spec=DesignSpec.from_dict(d["design"]),
            feature_names=tuple(d["feature_names"]),
            K=int(d["K"]),
            scaling=ScalingParams.from_dict(d.get("scaling", {})),
            history=tuple(d.get("history", ())),
            best_epoch=int(d.get("best_epoch", 0)),
            alpha_scores=tuple(tuple(s) for s in d.get("alpha_scores", ())),
            config=TrainConfig.from_dict(d.get("config", {})),
            n_observations=int(d.get("n_observations", 0)),
        )


def init_params(X, y, K: int, spec: DesignSpec, config: TrainConfig, rng) -> ReslogitParams:
    """Linear warm start: W = 0, beta ~ U(-0.1, 0.1), w = 1/K.

    Biases are set so the initial exceedance probabilities, at the mean initial
    index, equal the empirical exceedance shares.
    """
    p = X.shape[1]
    M = config.layers
    if spec.coefficient_mode == "generic":
        beta = rng.uniform(-0.1, 0.1, size=p)
        mask = None
    else:
        beta = rng.uniform(-0.1, 0.1, size=(K, p))
        mask = spec.coefficient_mask(K)
    w = np.full(K, 1.0 / K)
    lam = None if config.task_weights is None else np.array(config.task_weights)
    shares = extended_labels(y, K).mean(axis=0)
    shares = np.clip(shares, 1e-6, 1 - 1e-6)
    base = ReslogitParams(beta, np.zeros((M, K, K)), w, np.zeros(K - 1), 0.5, lam, mask)
    z0 = float(np.mean(forward(base, X).z))
    return replace(base, coral_biases=logit(shares) - z0)


def fit(train: Dataset, val: Dataset, spec: DesignSpec, config: TrainConfig | None = None) -> ReslogitFit:
    """Minibatch RMSprop on the summed binary cross-entropy with early stopping.

    Each epoch is one seeded shuffle pass. Validation MPE at alpha = 0.5 is
    recorded after every epoch; training stops once it has not improved for
    ``early_stop_patience`` epochs and the best epoch's parameters are kept.
    Alpha is then chosen on the validation set from ``config.alpha_grid``.
    """
    config = config or TrainConfig()
    spec.validate_for(train)
    spec.validate_for(val)
    if train.K < 2:
        raise DataError("K must be at least 2")
    if val.K != train.K:
        raise DataError("train and validation disagree on K")
    if val.N == 0:
        raise DataError("empty validation set")
    train.require_all_categories()
    scaled, scaling = standardize(train, spec)
    X = design_matrix(scaled, spec)
    y = scaled.labels
    Xv = design_matrix(scaling.apply(val), spec)
    yv = val.labels
    K, n = train.K, train.N

    rng = np.random.default_rng(config.seed)
    params = init_params(X, y, K, spec, config, rng)
    vec = params.to_vector()
    if config.strict_biases:
        vec[-(K - 1):] = offsets_from_biases(params.coral_biases)

    def materialize(v):
        if config.strict_biases:
            v = v.copy()
            v[-(K - 1):] = biases_from_offsets(v[-(K - 1):])
        return params.with_vector(v)

    def validate(p):
        tr = forward(p, Xv)
        mpe = float(np.mean(predict_rank(tr.exceedance, 0.5) != yv))
        vloss = float(np.sum(_loss_terms(tr.logits, levels_v, p.task_weights))) / yv.size
        return mpe, vloss

    levels_v = extended_labels(yv, K)
    metric_pos = EARLY_STOP_METRICS.index(config.early_stop_metric)
    cache = np.zeros_like(vec)
    scores = validate(params)
    best_scores = scores
    best_vec = vec.copy()
    best_epoch = 0
    stale = 0
    initial_loss = loss(params, X, y) / n
    history = [{"epoch": 0, "train_loss": initial_loss,
                "val_mpe": scores[0], "val_loss": scores[1]}]
    decay, lr, eps = config.rmsprop_decay, config.learning_rate, config.rmsprop_epsilon

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                current = materialize(vec)
            except NumericalError:
                raise NumericalError("training diverged: non-finite parameters",
                                     epoch=epoch, batch=batch_no) from None
            with np.errstate(over="ignore", invalid="ignore"):
                g = gradient_vector(current, X[idx], y[idx]) / idx.size
            if config.strict_biases:
                g[-(K - 1):] = _offset_chain(vec[-(K - 1):], g[-(K - 1):])
            if not np.all(np.isfinite(g)):
                raise NumericalError("training diverged: non-finite gradient",
                                     epoch=epoch, batch=batch_no)
            cache = decay * cache + (1.0 - decay) * g * g
            vec = vec - lr * g / (np.sqrt(cache) + eps)
        try:
            current = materialize(vec)
            with np.errstate(over="ignore", invalid="ignore"):
                train_loss = loss(current, X, y) / n
        except NumericalError as exc:
            raise NumericalError("training diverged: non-finite loss", epoch=epoch,
                                 **exc.details) from None
        if not math.isfinite(train_loss):
            raise NumericalError("training diverged: non-finite loss", epoch=epoch)
        if train_loss > DIVERGENCE_FACTOR * initial_loss:
            raise NumericalError("training diverged: loss blew up", epoch=epoch,
                                 train_loss=train_loss, initial_loss=initial_loss)
        scores = validate(current)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_mpe": scores[0], "val_loss": scores[1]})
        if _improved(scores, best_scores, metric_pos):
            best_scores, best_vec, best_epoch, stale = scores, vec.copy(), epoch, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break

    result = ReslogitFit(
        params=materialize(best_vec), spec=spec, feature_names=train.feature_names, K=K,
        scaling=scaling, history=tuple(history), best_epoch=best_epoch,
        config=config, n_observations=n,
    )
    alpha, scores = select_alpha(result, val, config.alpha_grid, return_scores=True)
    return replace(result.with_alpha(alpha), alpha_scores=tuple(scores))


def _improved(scores, best, metric_pos) -> bool:
    """MPE improves when it drops, or ties while validation loss drops."""
    if metric_pos == 1:
        return scores[1] < best[1]
    return scores[0] < best[0] or (scores[0] == best[0] and scores[1] < best[1])


def select_alpha(fit: ReslogitFit, val: Dataset, alpha_grid=DEFAULT_ALPHA_GRID,
                 return_scores: bool = False):
    """Grid value with the lowest validation MPE; ties go to the smallest alpha."""
    grid = sorted(float(a) for a in alpha_grid)
    if not grid:
        raise DataError("alpha grid is empty")
    exceed = fit.exceedance(val)
    scores = []
    for a in grid:
        scores.append((a, float(np.mean(predict_rank(exceed, a) != val.labels))))
    best = min(scores, key=lambda s: (s[1], s[0]))[0]
    if return_scores:
        return best, scores
    return best
