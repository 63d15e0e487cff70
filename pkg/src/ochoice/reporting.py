"""Rendering of fit and analysis reports to JSON, CSV, text and SVG files."""
from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .econ import EconReport, SubstitutionCurve
from .errors import DataError
from .evaluation import FitReport, format_report

REPORT_FORMATS = ("json", "csv", "text", "svg")


def jsonable(obj):
    """Plain-Python copy of ``obj``; numpy scalars/arrays unwrapped, NaN/inf become None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indent, trailing newline."""
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path in the target directory; rename over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    with atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def write_json(path, obj):
    write_text(path, dumps(obj))


def write_table(path, header, rows):
    """CSV with a header row; an empty ``rows`` gives a header-only file."""
    with atomic_path(path) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow(["" if v is None else _cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ----------------------------------------------------------------------------
# tables
# ----------------------------------------------------------------------------

FIT_HEADER = ("parameter", "value", "t_stat")


def fit_table(report: FitReport):
    rows = [(n, v, None if math.isnan(t) else t) for n, v, t in report.rows]
    rows += [(n, v, None) for n, v in report.extra_rows]
    return FIT_HEADER, rows


def market_share_table(report: EconReport):
    modes = sorted(report.market_shares)
    K = len(next(iter(report.market_shares.values()))) if modes else 0
    rows = [(k + 1,) + tuple(float(report.market_shares[m][k]) for m in modes) for k in range(K)]
    return ("category",) + tuple(f"share_{m}" for m in modes), rows


def substitution_table(curve: SubstitutionCurve):
    K = curve.probabilities.shape[1]
    return (curve.variable,) + tuple(f"P{k + 1}" for k in range(K)), curve.rows()


ELASTICITY_HEADER = ("variable", "category", "elasticity", "excluded_rows")


def elasticity_table(report: EconReport):
    rows = []
    for e in report.elasticities:
        for k, v in enumerate(e.aggregate):
            rows.append((e.variable, k + 1, float(v), e.excluded[k] if e.excluded else 0))
    return ELASTICITY_HEADER, rows


BINARY_HEADER = ("variable", "category", "mean_change", "mean_change_from_0", "mean_change_from_1")


def binary_effect_table(report: EconReport):
    rows = []
    for b in report.binary_effects:
        for k in range(b.mean_change.size):
            rows.append((b.variable, k + 1, float(b.mean_change[k]),
                         float(b.mean_change_from_0[k]), float(b.mean_change_from_1[k])))
    return BINARY_HEADER, rows


# ----------------------------------------------------------------------------
# plots
# ----------------------------------------------------------------------------

def plot_curve(curve: SubstitutionCurve, path, category_names=None):
    """One line per category against the swept variable, saved as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    K = curve.probabilities.shape[1]
    names = category_names or [f"category {k + 1}" for k in range(K)]
    with matplotlib.rc_context({"svg.hashsalt": "ochoice", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for k in range(K):
            ax.plot(curve.grid, curve.probabilities[:, k], marker="o", markersize=3, label=names[k])
        ax.set_xlabel(curve.variable)
        ax.set_ylabel("mean choice probability")
        ax.set_ylim(0.0, 1.0)
        ax.legend()
        fig.tight_layout()
        with atomic_path(path) as tmp:
            fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def report(obj, fmt: str, path, *, absolute_ll: bool = False) -> list[Path]:
    """Write ``obj`` (a FitReport or EconReport) in ``fmt`` and return the files written.

    For an EconReport, ``path`` is a prefix: CSV gives one table per analysis
    and SVG one chart per substitution curve.
    """
    if fmt not in REPORT_FORMATS:
        raise DataError(f"format must be one of {REPORT_FORMATS}")
    path = Path(path)
    if isinstance(obj, FitReport):
        if fmt == "svg":
            raise DataError("svg output is only available for substitution curves")
        if fmt == "json":
            write_json(path, obj.to_dict())
        elif fmt == "text":
            write_text(path, format_report(obj, absolute_ll=absolute_ll))
        else:
            write_table(path, *fit_table(obj))
        return [path]
    if not isinstance(obj, EconReport):
        raise DataError(f"cannot report a {type(obj).__name__}")

    if fmt == "json":
        write_json(path, obj.to_dict())
        return [path]
    if fmt == "text":
        write_text(path, dumps(obj.to_dict()))
        return [path]

    def named(suffix, ext):
        return path.with_name(f"{path.name}_{suffix}.{ext}")

    out = []
    if fmt == "svg":
        if not obj.substitution_curves:
            raise DataError("svg output needs at least one substitution curve")
        for c in obj.substitution_curves:
            p = named(f"substitution_{c.variable}", "svg")
            plot_curve(c, p)
            out.append(p)
        return out
    if obj.market_shares:
        p = named("market_share", "csv")
        write_table(p, *market_share_table(obj))
        out.append(p)
    for c in obj.substitution_curves:
        p = named(f"substitution_{c.variable}", "csv")
        write_table(p, *substitution_table(c))
        out.append(p)
    p = named("elasticity", "csv")
    write_table(p, *elasticity_table(obj))
    out.append(p)
    if obj.binary_effects:
        p = named("binary_effect", "csv")
        write_table(p, *binary_effect_table(obj))
        out.append(p)
    return out
