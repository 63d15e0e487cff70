"""Command-line entry point: simulate, discretize, fit, evaluate, analyze.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure. Errors
are written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import econ
from . import ordered_logit as ol
from . import reslogit as rl
from .data import DesignSpec, load_csv, write_csv
from .discretize import assign_categories, jenks_breaks
from .errors import DataError, NumericalError
from .evaluation import fit_report
from .reporting import REPORT_FORMATS, atomic_path, report, write_json
from .synth import GenSpec, generate

SCHEMA_VERSION = 1

DEFAULTS = {
    "simulate": {"spec": None, "out": None, "seed": None, "label_column": "y"},
    "discretize": {"input": None, "column": None, "k": None, "out": None,
                   "label_column": "y"},
    "fit": {"model": None, "train": None, "val": None, "out": None, "label_column": "y",
            "k": None, "label_map": None, "lenient": False, "features": None,
            "coefficient_mode": "generic", "standardize": [], "exclude": [],
            "layers": 16, "batch_size": 64, "learning_rate": 1e-3, "max_epochs": 500,
            "patience": 10, "seed": 0, "alpha_grid": None, "strict_biases": False,
            "early_stop_metric": "mpe", "max_iter": 2000, "gtol": 1e-6},
    "evaluate": {"model": None, "train": None, "val": None, "out": None, "formats": "json,text",
                 "label_map": None, "lenient": False, "full_matrix": False,
                 "absolute_ll": False},
    "analyze": {"model": None, "data": None, "out": None, "formats": None, "label_map": None,
                "lenient": False, "market_share": None, "substitution": [], "elasticity": [],
                "binary_effect": [], "representatives": None, "breaks": None},
}
REQUIRED = {
    "simulate": ("spec", "out"),
    "discretize": ("input", "column", "k", "out"),
    "fit": ("model", "train", "out"),
    "evaluate": ("model", "train", "val", "out"),
    "analyze": ("model", "data", "out"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ochoice", description="Ordered-choice models: ordered logit and residual ordinal logit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        # defaults are None so that config-file values are only overridden by explicit flags
        sp.add_argument("--config", help="JSON file with option values; flags take precedence")
        sp.add_argument("--manifest", help="manifest path (default: next to the main output)")

    s = sub.add_parser("simulate", help="draw a synthetic dataset from a generator spec")
    common(s)
    s.add_argument("--spec", help="GenSpec JSON")
    s.add_argument("--out", help="output CSV")
    s.add_argument("--seed", type=int, help="override the spec seed")
    s.add_argument("--label-column")

    d = sub.add_parser("discretize", help="natural-breaks categories for one numeric column")
    common(d)
    d.add_argument("--input", help="CSV with a header row")
    d.add_argument("--column", help="column to discretize")
    d.add_argument("--k", type=int, help="number of categories")
    d.add_argument("--out", help="output prefix: PREFIX.json (breaks) and PREFIX.csv (labeled data)")
    d.add_argument("--label-column", help="name of the appended label column")

    f = sub.add_parser("fit", help="estimate a model")
    common(f)
    f.add_argument("--model", choices=("ordered", "reslogit"))
    f.add_argument("--train")
    f.add_argument("--val", help="validation CSV (required for reslogit)")
    f.add_argument("--out", help="model JSON")
    f.add_argument("--label-column")
    f.add_argument("--k", type=int, help="number of categories (default: inferred)")
    f.add_argument("--label-map", help="JSON object mapping label names to 1..K")
    f.add_argument("--lenient", action="store_true", default=None,
                   help="drop rows with missing values instead of failing")
    f.add_argument("--features", help="comma-separated feature columns (default: all)")
    f.add_argument("--coefficient-mode", choices=("generic", "alternative_specific"))
    f.add_argument("--standardize", action="append", metavar="COLUMN")
    f.add_argument("--exclude", action="append", metavar="COLUMN:CATEGORY")
    f.add_argument("--layers", type=int)
    f.add_argument("--batch-size", type=int)
    f.add_argument("--learning-rate", type=float)
    f.add_argument("--max-epochs", type=int)
    f.add_argument("--patience", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--alpha-grid", help="lo:hi:step")
    f.add_argument("--strict-biases", action="store_true", default=None)
    f.add_argument("--early-stop-metric", choices=rl.EARLY_STOP_METRICS)
    f.add_argument("--max-iter", type=int)
    f.add_argument("--gtol", type=float)

    e = sub.add_parser("evaluate", help="coefficient table, log-likelihood, AIC, accuracy")
    common(e)
    e.add_argument("--model")
    e.add_argument("--train", help="data for log-likelihood and t-statistics")
    e.add_argument("--val", help="data for validation accuracy")
    e.add_argument("--out", help="output prefix")
    e.add_argument("--formats", help=f"comma-separated subset of {','.join(REPORT_FORMATS)}")
    e.add_argument("--label-map")
    e.add_argument("--lenient", action="store_true", default=None)
    e.add_argument("--full-matrix", action="store_true", default=None,
                   help="reslogit: take beta SEs from the full-parameter BHHH inverse")
    e.add_argument("--absolute-ll", action="store_true", default=None)

    a = sub.add_parser("analyze", help="market shares, substitution curves, elasticities")
    # let grids such as -3:3:7 pass as values rather than flags
    a._negative_number_matcher = re.compile(r"^-\d*\.?\d+([eE][-+]?\d+)?(:-?\d*\.?\d+([eE][-+]?\d+)?)*$")
    common(a)
    a.add_argument("--model")
    a.add_argument("--data")
    a.add_argument("--out", help="output prefix")
    a.add_argument("--formats", help="comma-separated subset of json,csv,svg")
    a.add_argument("--label-map")
    a.add_argument("--lenient", action="store_true", default=None)
    a.add_argument("--market-share", nargs="?", const="hard", choices=econ.MARKET_SHARE_MODES)
    a.add_argument("--substitution", nargs=2, action="append", metavar=("VAR", "LO:HI:STEPS"))
    a.add_argument("--elasticity", action="append", metavar="VAR")
    a.add_argument("--binary-effect", action="append", metavar="VAR")
    a.add_argument("--representatives", help="comma-separated C_1..C_K")
    a.add_argument("--breaks", help="breaks JSON from discretize; builds representatives")
    return p


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise DataError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required options: " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("OCHOICE_THREADS", "1")))
    except ValueError:
        return 1


def _read_header(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise DataError(f"{path} is empty") from None


def infer_k(path, label_column: str, label_map=None) -> int:
    """Number of categories from the label map, or the largest integer label."""
    if label_map is not None:
        mapping = label_map if isinstance(label_map, dict) else json.loads(Path(label_map).read_text())
        return max(int(v) for v in mapping.values())
    header = _read_header(path)
    if label_column not in header:
        raise DataError(f"label column {label_column!r} not in header")
    pos = header.index(label_column)
    top = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row and len(row) > pos:
                try:
                    top = max(top, int(float(row[pos])))
                except ValueError:
                    continue
    if top < 2:
        raise DataError("cannot infer K (need integer labels with maximum >= 2); pass --k")
    return top


def model_to_dict(fit) -> dict:
    d = {"schema_version": SCHEMA_VERSION, "toolkit_version": __version__, **fit.to_dict()}
    if fit.kind == "reslogit":
        d["alpha"] = float(fit.params.alpha)
    return d


def load_model(path):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read model: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from None
    kind = d.get("kind")
    if kind == "ordered":
        return ol.OrderedLogitFit.from_dict(d)
    if kind == "reslogit":
        return rl.ReslogitFit.from_dict(d)
    raise DataError(f"unknown model kind {kind!r}")


def _load_for_model(path, fit, label_column, label_map, lenient):
    return load_csv(path, label_column, fit.K, label_map=label_map, strict=not lenient,
                    feature_columns=fit.spec.feature_columns)


def _parse_exclusion(text: str):
    col, sep, cat = str(text).rpartition(":")
    if not sep or not col:
        raise DataError(f"exclusion {text!r} must look like COLUMN:CATEGORY")
    try:
        return col, int(cat)
    except ValueError:
        raise DataError(f"exclusion category in {text!r} must be an integer") from None


def _parse_grid(text: str) -> np.ndarray:
    parts = str(text).split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise DataError(f"grid {text!r} must be lo:hi:steps") from None
    if len(parts) != 3 or steps < 1 or not lo <= hi:
        raise DataError(f"grid {text!r} must be lo:hi:steps with steps >= 1 and lo <= hi")
    return np.linspace(lo, hi, steps)


def _formats(text, allowed) -> list[str]:
    out = [f.strip() for f in str(text).split(",") if f.strip()]
    bad = [f for f in out if f not in allowed]
    if bad or not out:
        raise DataError(f"formats must be a non-empty subset of {allowed}")
    return out


# ----------------------------------------------------------------------------
# subcommands; each returns (outputs, input files, seed)
# ----------------------------------------------------------------------------

def cmd_simulate(cfg):
    try:
        spec_dict = json.loads(Path(cfg["spec"]).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read spec: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"spec is not valid JSON: {exc}") from None
    if cfg["seed"] is not None:
        spec_dict["seed"] = cfg["seed"]
    try:
        spec = GenSpec.from_dict(spec_dict)
    except (KeyError, TypeError) as exc:
        raise DataError(f"invalid generator spec: {exc}") from None
    ds = generate(spec)
    with atomic_path(cfg["out"]) as tmp:
        write_csv(ds, tmp, cfg["label_column"])
    return [Path(cfg["out"])], [cfg["spec"]], spec.seed


def cmd_discretize(cfg):
    header = _read_header(cfg["input"])
    col = cfg["column"]
    if col not in header:
        raise DataError(f"column {col!r} not in header")
    if cfg["label_column"] in header:
        raise DataError(f"label column {cfg['label_column']!r} already exists")
    pos = header.index(col)
    with open(cfg["input"], newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    rows = [r for r in rows if r]
    try:
        values = np.array([float(r[pos]) for r in rows])
    except ValueError as exc:
        raise DataError(f"column {col!r}: {exc}") from None
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise DataError(f"column {col!r} must be non-empty and finite")
    breaks = jenks_breaks(values, int(cfg["k"]))
    labels = assign_categories(values, breaks.thresholds)
    prefix = Path(cfg["out"])
    out_json = prefix.with_name(prefix.name + ".json")
    out_csv = prefix.with_name(prefix.name + ".csv")
    write_json(out_json, {**breaks.to_dict(), "column": col, "summary": breaks.summary_rows()})
    with atomic_path(out_csv) as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header + [cfg["label_column"]])
            for r, y in zip(rows, labels):
                w.writerow(r + [int(y)])
    return [out_json, out_csv], [cfg["input"]], None


def cmd_fit(cfg):
    label_map = cfg["label_map"]
    K = cfg["k"] or infer_k(cfg["train"], cfg["label_column"], label_map)
    features = None
    if cfg["features"]:
        features = cfg["features"] if isinstance(cfg["features"], list) else \
            [c.strip() for c in str(cfg["features"]).split(",") if c.strip()]
    strict = not cfg["lenient"]
    train = load_csv(cfg["train"], cfg["label_column"], K, label_map=label_map, strict=strict,
                     feature_columns=features)
    spec = DesignSpec(
        feature_columns=train.feature_names,
        label_column=cfg["label_column"],
        coefficient_mode=cfg["coefficient_mode"],
        standardize_columns=tuple(cfg["standardize"] or ()),
        exclusions=tuple(_parse_exclusion(x) for x in cfg["exclude"] or ()),
    )
    inputs = [cfg["train"]]
    if cfg["model"] == "ordered":
        if spec.coefficient_mode != "generic":
            raise DataError("the ordered model supports only generic coefficients")
        fit = ol.fit_ordered_logit(train, spec, ol.FitOptions(max_iter=cfg["max_iter"], gtol=cfg["gtol"]))
        seed = None
    else:
        if not cfg["val"]:
            raise DataError("--val is required for the reslogit model")
        val = load_csv(cfg["val"], cfg["label_column"], K, label_map=label_map, strict=strict,
                       feature_columns=train.feature_names)
        inputs.append(cfg["val"])
        grid = rl.parse_alpha_grid(cfg["alpha_grid"]) if cfg["alpha_grid"] else rl.DEFAULT_ALPHA_GRID
        config = rl.TrainConfig(
            layers=cfg["layers"], batch_size=cfg["batch_size"], learning_rate=cfg["learning_rate"],
            max_epochs=cfg["max_epochs"], early_stop_patience=cfg["patience"], seed=cfg["seed"],
            alpha_grid=grid, strict_biases=bool(cfg["strict_biases"]),
            early_stop_metric=cfg["early_stop_metric"])
        fit = rl.fit(train, val, spec, config)
        seed = config.seed
    if label_map is not None:
        inputs.append(label_map)
    out = Path(cfg["out"])
    d = model_to_dict(fit)
    if fit.kind == "reslogit":
        d["train_violations"] = int(fit.choice_probabilities(train)[1])
    write_json(out, d)
    return [out], inputs, seed


def cmd_evaluate(cfg):
    fit = load_model(cfg["model"])
    formats = _formats(cfg["formats"], REPORT_FORMATS)
    if "svg" in formats:
        raise DataError("svg output is only available for substitution curves (analyze)")
    train = _load_for_model(cfg["train"], fit, fit.spec.label_column, cfg["label_map"], cfg["lenient"])
    val = _load_for_model(cfg["val"], fit, fit.spec.label_column, cfg["label_map"], cfg["lenient"])
    rep = fit_report(fit, train, val, full_matrix=bool(cfg["full_matrix"]))
    prefix = Path(cfg["out"])
    ext = {"json": "json", "csv": "csv", "text": "txt"}
    outputs = []
    for fmt in formats:
        outputs += report(rep, fmt, prefix.with_name(f"{prefix.name}.{ext[fmt]}"),
                          absolute_ll=bool(cfg["absolute_ll"]))
    return outputs, [cfg["model"], cfg["train"], cfg["val"]], None


def _representatives(cfg, K):
    if cfg["representatives"] is not None and cfg["breaks"] is not None:
        raise DataError("give either --representatives or --breaks, not both")
    if cfg["representatives"] is not None:
        raw = cfg["representatives"]
        vals = raw if isinstance(raw, list) else [v for v in str(raw).split(",") if v.strip()]
        try:
            C = [float(v) for v in vals]
        except ValueError:
            raise DataError("representatives must be numbers") from None
        if len(C) != K:
            raise DataError(f"need {K} representatives, got {len(C)}")
        if np.any(np.diff(C) <= 0):
            raise DataError("representatives must be increasing")
        return tuple(C), "supplied by the caller"
    if cfg["breaks"] is not None:
        b = json.loads(Path(cfg["breaks"]).read_text(encoding="utf-8"))
        t = b["thresholds"]
        if len(t) != K - 1:
            raise DataError(f"breaks have {len(t) + 1} categories, model has {K}")
        C = econ.category_representatives(t, lower_bound=b["lower_bound"])
        return tuple(float(c) for c in C), (
            "interval midpoints; the open top category uses the last threshold plus half "
            "the preceding interval width (an assumption)")
    return None, ""


def cmd_analyze(cfg):
    fit = load_model(cfg["model"])
    data = _load_for_model(cfg["data"], fit, fit.spec.label_column, cfg["label_map"], cfg["lenient"])
    reps, note = _representatives(cfg, fit.K)
    shares = {}
    if cfg["market_share"]:
        shares[cfg["market_share"]] = econ.market_share(fit, data, cfg["market_share"])
    curves = tuple(econ.substitution_curve(fit, data, var, _parse_grid(g))
                   for var, g in cfg["substitution"] or ())
    elast = tuple(econ.elasticity(fit, data, v) for v in cfg["elasticity"] or ())
    binary = tuple(econ.binary_effect(fit, data, v, reps) for v in cfg["binary_effect"] or ())
    rep = econ.EconReport(shares, curves, elast, binary, reps, note)
    if cfg["formats"] is None:
        formats = ["json", "csv"] + (["svg"] if curves else [])
    else:
        formats = _formats(cfg["formats"], ("json", "csv", "svg"))
    prefix = Path(cfg["out"])
    outputs = []
    for fmt in formats:
        target = prefix.with_name(prefix.name + ".json") if fmt == "json" else prefix
        outputs += report(rep, fmt, target)
    inputs = [cfg["model"], cfg["data"]] + ([cfg["breaks"]] if cfg["breaks"] else [])
    return outputs, inputs, None


COMMANDS = {"simulate": cmd_simulate, "discretize": cmd_discretize, "fit": cmd_fit,
            "evaluate": cmd_evaluate, "analyze": cmd_analyze}


def _manifest_path(cfg, args, outputs) -> Path:
    if args.manifest:
        return Path(args.manifest)
    main = Path(cfg["out"])
    return main.with_name(main.name.removesuffix(".json").removesuffix(".csv") + ".manifest.json")


def _error(kind: str, message: str, **details) -> dict:
    return {"error": kind, "message": message, "details": details}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args.command, args)
    except UsageError as exc:
        print(json.dumps(_error("usage", str(exc))), file=sys.stderr)
        return 1
    except SystemExit as exc:          # --help / --version
        return int(exc.code or 0)
    except DataError as exc:
        print(json.dumps(_error("validation", str(exc))), file=sys.stderr)
        return 1

    start = time.perf_counter()
    try:
        outputs, inputs, seed = COMMANDS[args.command](cfg)
        manifest = _manifest_path(cfg, args, outputs)
        threads = _threads()
        write_json(manifest, {
            "subcommand": args.command,
            "config": cfg,
            "seed": seed,
            "toolkit_version": __version__,
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": [str(p) for p in outputs],
            "duration_seconds": round(time.perf_counter() - start, 6),
            "determinism": "sequential" if threads == 1 else f"threads={threads}",
            "threads": threads,
        })
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps(_error("usage", str(exc))), file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(json.dumps(_error("numerical", str(exc), **exc.details), default=str), file=sys.stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(json.dumps(_error("numerical", str(exc))), file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(json.dumps(_error("validation", str(exc))), file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
