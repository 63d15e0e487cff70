"""Fit diagnostics shared by both models: MPE, log-likelihood, AIC, t-statistics, reports."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ordered_logit as ol
from . import reslogit as rl
from .data import Dataset
from .errors import DataError

BHHH_CAVEAT = (
    "Standard errors use the outer product of per-observation gradients (BHHH) "
    "at the early-stopped solution; they are sensitive to batch size and stopping epoch."
)


def mpe(predicted, actual) -> float:
    """Share of rows where the predicted rank differs from the observed one."""
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise DataError("predicted and actual ranks must have equal length")
    if predicted.size == 0:
        raise DataError("mpe of empty input")
    return float(np.mean(predicted != actual))


def aic(log_likelihood: float, n_params: int) -> float:
    if n_params < 0:
        raise DataError("parameter count must be non-negative")
    return -2.0 * log_likelihood + 2.0 * n_params


def model_log_likelihood(fit, data: Dataset) -> float:
    """Sum of ln P(observed category).

    Returns -inf (with a RuntimeWarning) rather than raising when some observed
    category has zero probability after clamping.
    """
    if data.K != fit.K:
        raise DataError(f"data has K={data.K}, model has K={fit.K}")
    value = fit.log_likelihood_on(data)
    if value == -math.inf:
        warnings.warn("an observed category has zero predicted probability", RuntimeWarning,
                      stacklevel=2)
    return value


@dataclass(frozen=True)
class TStats:
    names: tuple[str, ...]
    values: tuple[float, ...]
    std_errors: tuple[float, ...]
    t: tuple[float, ...]
    undefined: tuple[bool, ...]
    method: str

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.t))


def _covariance(info: np.ndarray):
    """Inverse of an information matrix; rows/cols without information are undefined."""
    n = info.shape[0]
    cov = np.full((n, n), np.nan)
    usable = np.abs(np.diag(info)) > 0
    idx = np.flatnonzero(usable)
    if idx.size:
        sub = info[np.ix_(idx, idx)]
        try:
            # cholesky fails for singular or indefinite matrices
            np.linalg.cholesky(sub)
            inv = np.linalg.inv(sub)
            cov[np.ix_(idx, idx)] = inv
        except np.linalg.LinAlgError:
            usable[:] = False
    return cov, usable


def t_stats(fit, data: Dataset, *, full_matrix: bool = False) -> TStats:
    """t = estimate / standard error.

    Ordered logit: inverse of the negative observed Hessian of the
    log-likelihood, over all coefficients and thresholds. Residual logit: BHHH
    covariance for the beta block, built from the beta block of the gradient
    outer products (or taken from the full-parameter BHHH inverse when
    ``full_matrix``). Parameters fixed by exclusion have no row.
    """
    if fit.kind == "ordered":
        X = fit.design(data)
        info = -ol.hessian(fit.beta, fit.deltas, X, data.labels)
        values = fit.parameter_vector()
        names = fit.parameter_names()
        method = "observed_hessian"
        cov, ok = _covariance(info)
    else:
        X = fit.design(data)
        params = fit.params
        nb = params.n_beta
        blocks = "all" if full_matrix else "beta"
        G = rl.per_observation_gradients(params, X, data.labels, blocks=blocks)
        info = G.T @ G
        cov, ok = _covariance(info)
        cov, ok = cov[:nb, :nb], ok[:nb]
        values = params.beta_vector()
        names = fit.parameter_names()[:nb]
        method = "bhhh_full" if full_matrix else "bhhh"
    var = np.diag(cov)
    se = np.where(ok & (var > 0), np.sqrt(np.where(var > 0, var, 1.0)), np.nan)
    undefined = ~np.isfinite(se)
    t = np.where(undefined, np.nan, values / np.where(undefined, 1.0, se))
    return TStats(tuple(names), tuple(float(v) for v in values), tuple(float(s) for s in se),
                  tuple(float(v) for v in t), tuple(bool(u) for u in undefined), method)


@dataclass(frozen=True)
class FitReport:
    model_kind: str
    rows: tuple[tuple[str, float, float], ...]
    log_likelihood: float
    n_params: int
    validation_accuracy: float
    n_observations: int
    coral_loss: float | None = None
    extra_rows: tuple[tuple[str, float], ...] = ()
    caveat: str = ""
    violations: int = 0
    t_method: str = ""

    @property
    def aic(self) -> float:
        return aic(self.log_likelihood, self.n_params)

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "parameters": [{"name": n, "value": v, "t_stat": None if math.isnan(t) else t}
                           for n, v, t in self.rows],
            "other_parameters": [{"name": n, "value": v} for n, v in self.extra_rows],
            "log_likelihood": self.log_likelihood,
            "coral_loss": self.coral_loss,
            "n_params": self.n_params,
            "aic": self.aic,
            "validation_accuracy": self.validation_accuracy,
            "n_observations": self.n_observations,
            "t_method": self.t_method,
            "caveat": self.caveat,
            "violations": self.violations,
        }


def fit_report(fit, train: Dataset, val: Dataset, *, full_matrix: bool = False) -> FitReport:
    """Table-4/5 style summary: estimates with t-stats, LL on ``train``, validation accuracy."""
    ts = t_stats(fit, train, full_matrix=full_matrix)
    rows = tuple(zip(ts.names, ts.values, ts.t))
    ll = model_log_likelihood(fit, train)
    accuracy = 1.0 - mpe(fit.predict(val), val.labels)
    if fit.kind == "ordered":
        return FitReport("ordered", rows, ll, fit.n_params, accuracy, train.N,
                         t_method=ts.method)
    names = fit.parameter_names()
    vec = fit.parameter_vector()
    K = fit.K
    # biases are shown; residual and head weights are counted but not tabulated
    extra = tuple((names[i], float(vec[i])) for i in range(len(vec) - (K - 1), len(vec)))
    _, n_viol = fit.choice_probabilities(train)
    return FitReport("reslogit", rows, ll, fit.n_params, accuracy, train.N,
                     coral_loss=-fit.loss_on(train), extra_rows=extra, caveat=BHHH_CAVEAT,
                     violations=n_viol, t_method=ts.method)


def format_report(report: FitReport, *, absolute_ll: bool = False) -> str:
    """Plain-text coefficient table, t-stats in parentheses."""
    title = "Ordered Logit" if report.model_kind == "ordered" else "Ordinal-ResLogit"
    width = max([len(r[0]) for r in report.rows] + [len(n) for n, _ in report.extra_rows]
                + [len("Validation accuracy")]) + 2
    lines = [f"{'Variable':<{width}}{title}", "-" * (width + 24)]
    for name, value, t in report.rows:
        t_text = "(-)" if math.isnan(t) else f"({t:.3f})"
        lines.append(f"{name:<{width}}{value:>10.3f} {t_text}")
    for name, value in report.extra_rows:
        lines.append(f"{name:<{width}}{value:>10.3f}")
    ll = abs(report.log_likelihood) if absolute_ll else report.log_likelihood
    lines.append("-" * (width + 24))
    lines.append(f"{'No. observation':<{width}}{report.n_observations:>10,d}")
    lines.append(f"{'No. parameters':<{width}}{report.n_params:>10d}")
    lines.append(f"{'Log-likelihood':<{width}}{ll:>10.2f}")
    if report.coral_loss is not None:
        cl = abs(report.coral_loss) if absolute_ll else report.coral_loss
        lines.append(f"{'Binary log-lik.':<{width}}{cl:>10.2f}")
    lines.append(f"{'AIC':<{width}}{report.aic:>10.2f}")
    lines.append(f"{'Validation accuracy':<{width}}{100 * report.validation_accuracy:>9.2f}%")
    lines.append("t-stats are given in parentheses")
    if report.caveat:
        lines.append(report.caveat)
    if report.violations:
        lines.append(f"rank-consistency violations (clamped rows): {report.violations}")
    return "\n".join(lines) + "\n"
