"""Numerically stable scalar link functions shared by both models."""
import numpy as np
from scipy.special import expit, log_expit


def sigmoid(a):
    return expit(a)


def log_sigmoid(a):
    """ln σ(a), exact for large negative arguments (no log of an underflowed 0)."""
    return log_expit(a)


def softplus(a):
    a = np.asarray(a, dtype=np.float64)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def softplus_inverse(y):
    """Inverse of softplus for y > 0: ln(exp(y) - 1)."""
    y = np.asarray(y, dtype=np.float64)
    # for large y, ln(expm1(y)) = y + ln(1 - exp(-y))
    return np.where(y > 30.0, y + np.log1p(-np.exp(-np.minimum(y, 700.0))),
                    np.log(np.expm1(np.minimum(y, 30.0))))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def sigmoid_slope(a):
    """σ'(a) = σ(a)σ(−a), evaluated without cancellation."""
    return np.exp(log_expit(a) + log_expit(-a))
