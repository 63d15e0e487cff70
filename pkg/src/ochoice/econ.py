"""Post-estimation analysis shared by both model kinds.

Every function takes a fitted model exposing ``predict_proba(ds)`` and
``predict(ds)`` on raw (unscaled) data; counterfactual edits are applied to the
raw columns and the model re-applies its stored scaling.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DataError

MARKET_SHARE_MODES = ("hard", "soft")
MIN_PROBABILITY = 1e-12
RELATIVE_STEP = 1e-4
ZERO_STEP = 1e-6


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("OCHOICE_THREADS", "1")))
    except ValueError:
        return 1


def _check_column(fit, variable: str):
    if variable not in fit.spec.feature_columns:
        raise DataError(f"variable {variable!r} is not in the model design")


def _is_binary(x) -> bool:
    return bool(np.all((x == 0.0) | (x == 1.0)))


def market_share(fit, data: Dataset, mode: str = "hard") -> np.ndarray:
    """Hard: share of rows predicted in each category. Soft: mean predicted probability."""
    if mode not in MARKET_SHARE_MODES:
        raise DataError(f"mode must be one of {MARKET_SHARE_MODES}")
    if mode == "soft":
        return fit.predict_proba(data).mean(axis=0)
    pred = np.asarray(fit.predict(data))
    return np.bincount(pred, minlength=fit.K + 1)[1:] / pred.size


@dataclass(frozen=True)
class SubstitutionCurve:
    variable: str
    grid: tuple[float, ...]
    probabilities: np.ndarray              # (len(grid), K)
    crossings: tuple[tuple[int, int, float], ...] = ()

    def rows(self) -> list[list[float]]:
        return [[v] + [float(p) for p in row] for v, row in zip(self.grid, self.probabilities)]


def _crossings(grid, probs) -> tuple:
    """Grid locations where two category curves swap order (linear interpolation)."""
    out = []
    K = probs.shape[1]
    for i in range(K):
        for j in range(i + 1, K):
            d = probs[:, i] - probs[:, j]
            for s in range(len(grid) - 1):
                if d[s] == 0.0 and (s == 0 or d[s - 1] != 0.0):
                    if s > 0 and np.sign(d[s - 1]) != np.sign(d[s + 1]) and d[s + 1] != 0:
                        out.append((i + 1, j + 1, float(grid[s])))
                elif d[s] * d[s + 1] < 0:
                    frac = d[s] / (d[s] - d[s + 1])
                    out.append((i + 1, j + 1, float(grid[s] + frac * (grid[s + 1] - grid[s]))))
    return tuple(sorted(out, key=lambda c: (c[2], c[0], c[1])))


def substitution_curve(fit, data: Dataset, variable: str, grid) -> SubstitutionCurve:
    """Mean choice probabilities with ``variable`` set to each grid value for every row."""
    _check_column(fit, variable)
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise DataError("grid must be non-empty and finite")
    if np.any(np.diff(grid) < 0):
        raise DataError("grid must be sorted")

    def at(v):
        return fit.predict_proba(data.with_column(variable, np.full(data.N, v))).mean(axis=0)

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            probs = np.array(list(pool.map(at, grid)))
    else:
        probs = np.array([at(v) for v in grid])
    return SubstitutionCurve(variable, tuple(float(v) for v in grid), probs, _crossings(grid, probs))


@dataclass(frozen=True)
class Elasticity:
    variable: str
    aggregate: np.ndarray                  # (K,)
    disaggregate: np.ndarray               # (N, K); NaN where excluded
    excluded: tuple[int, ...] = ()         # per-category count of rows with P below MIN_PROBABILITY


def disaggregate_elasticity(fit, data: Dataset, variable: str) -> tuple[np.ndarray, np.ndarray]:
    """(dP/dx * x / P, P) per row and category by central differences on the raw column."""
    _check_column(fit, variable)
    x = data.column(variable)
    h = np.where(x == 0.0, ZERO_STEP, RELATIVE_STEP * np.abs(x))
    up = fit.predict_proba(data.with_column(variable, x + h))
    down = fit.predict_proba(data.with_column(variable, x - h))
    dP = (up - down) / (2.0 * h[:, None])
    P = fit.predict_proba(data)
    with np.errstate(divide="ignore", invalid="ignore"):
        E = dP * x[:, None] / P
    return E, P


def elasticity(fit, data: Dataset, variable: str) -> Elasticity:
    """Probability-weighted aggregate point elasticity per category.

    Rows whose probability for a category is below ``MIN_PROBABILITY`` are
    left out of that category's aggregate and counted in ``excluded``.
    """
    _check_column(fit, variable)
    if _is_binary(data.column(variable)):
        raise DataError(f"{variable!r} is binary; use binary_effect instead")
    E, P = disaggregate_elasticity(fit, data, variable)
    keep = P >= MIN_PROBABILITY
    E = np.where(keep, E, np.nan)
    num = np.where(keep, P * np.nan_to_num(E), 0.0).sum(axis=0)
    den = np.where(keep, P, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        agg = np.where(den > 0, num / den, np.nan)
    return Elasticity(variable, agg, E, tuple(int(c) for c in (~keep).sum(axis=0)))


def analytic_elasticity(fit, data: Dataset, variable: str) -> np.ndarray:
    """Disaggregate elasticities from the model's analytic input derivative."""
    dP = fit.proba_input_derivative(data, variable)
    P = fit.predict_proba(data)
    with np.errstate(divide="ignore", invalid="ignore"):
        return dP * data.column(variable)[:, None] / P


def expected_value(probs, representatives) -> np.ndarray | float:
    """sum_j C_j P_j for one distribution (K,) or many (N, K)."""
    probs = np.asarray(probs, dtype=np.float64)
    C = np.asarray(representatives, dtype=np.float64)
    if probs.shape[-1] != C.size:
        raise DataError(f"{probs.shape[-1]} probabilities but {C.size} representatives")
    out = probs @ C
    return float(out) if np.ndim(out) == 0 else out


def category_representatives(thresholds, lower_bound: float = 0.0,
                             top_rule: str = "half_width", top_value: float | None = None) -> np.ndarray:
    """Midpoint of each closed category; the open top category is extrapolated.

    ``half_width`` puts the top representative at
    ``delta_{K-1} + (delta_{K-1} - delta_{K-2}) / 2``, with the lower bound
    standing in for ``delta_0`` when K = 2. ``fixed`` uses ``top_value``.
    """
    t = np.asarray(thresholds, dtype=np.float64)
    if t.size == 0:
        raise DataError("need at least one threshold")
    edges = np.concatenate([[lower_bound], t])
    if np.any(np.diff(edges) <= 0):
        raise DataError("lower bound and thresholds must be strictly increasing")
    mids = (edges[:-1] + edges[1:]) / 2.0
    if top_rule == "half_width":
        top = edges[-1] + (edges[-1] - edges[-2]) / 2.0
    elif top_rule == "fixed":
        if top_value is None:
            raise DataError("top_value is required for the fixed rule")
        top = float(top_value)
    else:
        raise DataError(f"unknown top_rule {top_rule!r}")
    return np.concatenate([mids, [top]])


@dataclass(frozen=True)
class BinaryEffect:
    variable: str
    mean_change: np.ndarray                # (K,) over all rows
    mean_change_from_0: np.ndarray         # rows initially 0, flipped to 1
    mean_change_from_1: np.ndarray         # rows initially 1, flipped to 0
    n_from_0: int
    n_from_1: int
    expected_value_before: float | None = None
    expected_value_after: float | None = None

    @property
    def expected_value_delta(self) -> float | None:
        if self.expected_value_before is None:
            return None
        return self.expected_value_after - self.expected_value_before

    @property
    def expected_value_relative(self) -> float | None:
        if self.expected_value_before is None or self.expected_value_before == 0:
            return None
        return self.expected_value_delta / self.expected_value_before


def flip_binary(data: Dataset, variable: str) -> Dataset:
    x = data.column(variable)
    if not _is_binary(x):
        raise DataError(f"{variable!r} is not a 0/1 variable")
    return data.with_column(variable, 1.0 - x)


def binary_effect(fit, data: Dataset, variable: str, representatives=None) -> BinaryEffect:
    """Flip a 0/1 variable for every row and report mean probability changes.

    With ``representatives`` the mean expected value before and after the flip
    is reported as well.
    """
    _check_column(fit, variable)
    x = data.column(variable)
    flipped = flip_binary(data, variable)
    before = fit.predict_proba(data)
    after = fit.predict_proba(flipped)
    change = after - before
    K = before.shape[1]
    zero = x == 0.0

    def mean_rows(mask):
        return change[mask].mean(axis=0) if mask.any() else np.zeros(K)

    ev_before = ev_after = None
    if representatives is not None:
        ev_before = float(np.mean(expected_value(before, representatives)))
        ev_after = float(np.mean(expected_value(after, representatives)))
    return BinaryEffect(variable, change.mean(axis=0), mean_rows(zero), mean_rows(~zero),
                        int(zero.sum()), int((~zero).sum()), ev_before, ev_after)


@dataclass(frozen=True)
class EconReport:
    market_shares: dict = field(default_factory=dict)
    substitution_curves: tuple = ()
    elasticities: tuple = ()
    binary_effects: tuple = ()
    representatives: tuple[float, ...] | None = None
    representative_note: str = ""

    def to_dict(self) -> dict:
        return {
            "market_shares": {m: [float(v) for v in s] for m, s in self.market_shares.items()},
            "substitution_curves": [
                {"variable": c.variable, "grid": list(c.grid),
                 "probabilities": c.probabilities.tolist(),
                 "crossings": [{"categories": [i, j], "value": v} for i, j, v in c.crossings]}
                for c in self.substitution_curves],
            "elasticities": [
                {"variable": e.variable, "aggregate": [float(v) for v in e.aggregate],
                 "excluded_rows": list(e.excluded)} for e in self.elasticities],
            "binary_effects": [
                {"variable": b.variable, "mean_change": b.mean_change.tolist(),
                 "mean_change_from_0": b.mean_change_from_0.tolist(),
                 "mean_change_from_1": b.mean_change_from_1.tolist(),
                 "n_from_0": b.n_from_0, "n_from_1": b.n_from_1,
                 "expected_value_before": b.expected_value_before,
                 "expected_value_after": b.expected_value_after,
                 "expected_value_delta": b.expected_value_delta,
                 "expected_value_relative": b.expected_value_relative}
                for b in self.binary_effects],
            "representatives": None if self.representatives is None else list(self.representatives),
            "representative_note": self.representative_note,
        }
