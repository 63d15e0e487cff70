"""Jenks natural-breaks discretization of a continuous response into K ordered classes.

Classes are closed above: a value v belongs to class k when
``thresholds[k-2] < v <= thresholds[k-1]``. Breaks are only placed between
distinct values, so equal observations always share a class and the reported
thresholds are strictly increasing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

# Relative slack when comparing within-class SSD totals for ties.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class Breaks:
    thresholds: tuple[float, ...]
    lower_bound: float
    upper_bound: float
    category_counts: tuple[int, ...]
    category_shares: tuple[float, ...]
    objective: float = float("nan")

    @property
    def K(self) -> int:
        return len(self.category_counts)

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "category_counts": list(self.category_counts),
            "category_shares": list(self.category_shares),
            "objective": self.objective,
        }

    def summary_rows(self) -> list[dict]:
        """Table-3 style rows: category, interval, count, share."""
        edges = (self.lower_bound,) + self.thresholds + (self.upper_bound,)
        return [
            {"category": k + 1, "lower": edges[k], "upper": edges[k + 1],
             "count": self.category_counts[k], "share": self.category_shares[k]}
            for k in range(self.K)
        ]


def _weighted_ssd(prefix_w, prefix_s, prefix_q, i, j):
    """SSD of unique values i..j-1 (weighted by multiplicity); j may be an array."""
    w = prefix_w[j] - prefix_w[i]
    s = prefix_s[j] - prefix_s[i]
    q = prefix_q[j] - prefix_q[i]
    return np.maximum(q - s * s / w, 0.0)


def jenks_breaks(values, K: int) -> Breaks:
    """Optimal partition of ``values`` into K contiguous classes by within-class SSD.

    Among partitions whose objective ties (within ``TIE_RTOL``) the one with the
    lexicographically smallest thresholds wins. Runs a suffix dynamic program
    over distinct values, O(K u^2) with u the number of distinct values.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if K < 1:
        raise DataError("K must be at least 1")
    if not np.all(np.isfinite(x)):
        raise DataError("values must be finite")
    uniq, counts = np.unique(x, return_counts=True)
    u = uniq.size
    if u < K:
        raise DataError(f"need at least {K} distinct values, got {u}")

    # shift for conditioning of the prefix-sum variance formula
    centered = uniq - uniq.mean()
    prefix_w = np.concatenate([[0.0], np.cumsum(counts)])
    prefix_s = np.concatenate([[0.0], np.cumsum(counts * centered)])
    prefix_q = np.concatenate([[0.0], np.cumsum(counts * centered ** 2)])

    # best[k][i]: minimal SSD splitting unique values i..u-1 into k classes
    best = np.full((K + 1, u + 1), np.inf)
    idx = np.arange(u + 1)
    best[1, :u] = _weighted_ssd(prefix_w, prefix_s, prefix_q, idx[:u], u)
    for k in range(2, K + 1):
        for i in range(0, u - k + 1):
            # first class is i..j-1; remainder j..u-1 needs k-1 classes
            j = np.arange(i + 1, u - k + 2)
            best[k, i] = np.min(_weighted_ssd(prefix_w, prefix_s, prefix_q, i, j) + best[k - 1, j])

    total = best[K, 0]
    tol = TIE_RTOL * max(1.0, abs(total))
    cuts = []
    i = 0
    for k in range(K, 1, -1):
        j = np.arange(i + 1, u - k + 2)
        cand = _weighted_ssd(prefix_w, prefix_s, prefix_q, i, j) + best[k - 1, j]
        # smallest first break among (near-)optimal choices
        jj = int(j[np.flatnonzero(cand <= best[k, i] + tol)[0]])
        cuts.append(jj)
        i = jj
    thresholds = tuple(float(uniq[c - 1]) for c in cuts)
    labels = assign_categories(x, thresholds)
    out = category_summary(labels, thresholds, lower_bound=float(x[0]), upper_bound=float(x[-1]))
    return Breaks(out.thresholds, out.lower_bound, out.upper_bound, out.category_counts,
                  out.category_shares, objective=float(total))


def assign_categories(values, thresholds) -> np.ndarray:
    """Map each value to its 1-based class; boundary values go to the lower class."""
    t = np.asarray(thresholds, dtype=np.float64)
    if t.size > 1 and not np.all(np.diff(t) > 0):
        raise DataError("thresholds must be strictly increasing")
    v = np.asarray(values, dtype=np.float64)
    return np.searchsorted(t, v, side="left").astype(np.int64) + 1


def category_summary(labels, thresholds, *, lower_bound: float = float("nan"),
                     upper_bound: float = float("nan")) -> Breaks:
    labels = np.asarray(labels, dtype=np.int64)
    K = len(thresholds) + 1
    if labels.size and (labels.min() < 1 or labels.max() > K):
        raise DataError(f"labels must lie in 1..{K} for {K - 1} thresholds")
    counts = np.bincount(labels, minlength=K + 1)[1:]
    n = counts.sum()
    shares = counts / n if n else np.zeros(K)
    return Breaks(tuple(float(t) for t in thresholds), float(lower_bound), float(upper_bound),
                  tuple(int(c) for c in counts), tuple(float(s) for s in shares))
