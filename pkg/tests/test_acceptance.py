"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or as a script.
"""
import json
import time

import numpy as np
import pytest

from _factories import random_params
from ochoice import econ, evaluation
from ochoice import ordered_logit as ol
from ochoice import reslogit as rl
from ochoice.cli import run
from ochoice.data import Dataset, DesignSpec, split
from ochoice.discretize import jenks_breaks
from ochoice.synth import (GenSpec, bayes_accuracy, brute_force_jenks, finite_diff_oracle,
                           generate)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys, request):
    """Print one PASS/FAIL line for the criterion, then assert."""
    start = time.perf_counter()

    def report(number, title, ok, detail):
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail} "
                f"| {time.perf_counter() - start:.1f}s")
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def _gen(seed, n, beta=(1.0, -0.5, 0.5), deltas=(-1.0, 1.0), **kw):
    return GenSpec(n, len(beta), beta, deltas, seed=seed, **kw)


# 1 -------------------------------------------------------------------------

def test_aic_reproduction(verdict):
    checks = [
        (evaluation.aic(-1276.57, 165), 2883.14, 0.05),
        (evaluation.aic(-1193.68, 16), 2419.36, 1e-9),
        (evaluation.aic(-14483.3, 422), 29810.6, 1e-9),
        (evaluation.aic(-31169, 17), 62372.0, 0.0),
    ]
    ok = all(abs(got - want) <= tol for got, want, tol in checks)
    detail = ", ".join(f"{got:.4f} vs {want}" for got, want, _ in checks)
    verdict(1, "AIC reproduction", ok, detail)


# 2 -------------------------------------------------------------------------

def test_gradient_correctness(verdict):
    rng = np.random.default_rng(2024)
    grid = [(K, M, p, mode) for K in (2, 3, 5) for M in (0, 1, 3, 16) for p in (1, 7)
            for mode in ("generic", "alternative_specific")]
    configs = grid + [grid[i] for i in rng.integers(0, len(grid), 100 - len(grid))]
    worst, failures = 0.0, 0
    for K, M, p, mode in configs:
        mask = None
        if mode == "alternative_specific" and p > 1:
            mask = rng.random((K, p)) > 0.2
        params = random_params(rng, K, M, p, mode=mode, scale=0.4, mask=mask)
        X = rng.normal(size=(5, p))
        y = rng.integers(1, K + 1, size=5)
        g = rl.gradient_vector(params, X, y)
        fd = finite_diff_oracle(params, (X, y), target="loss-gradient", step=1e-6)
        rel = np.abs(g - fd) / np.maximum(1.0, np.abs(fd))
        worst = max(worst, float(rel.max()))
        failures += int(np.any(rel > 1e-6))
    verdict(2, "gradient vs central differences", failures == 0,
            f"{len(configs)} configs, {failures} failing, worst relative error {worst:.2e}")


# 3 -------------------------------------------------------------------------

def test_reduction_equivalence(verdict):
    gaps = []
    config = rl.TrainConfig(layers=0, early_stop_metric="loss")
    for seed in range(5):
        tr, va = split(generate(_gen(100 + seed, 10_000)), 0.7, seed)
        spec = DesignSpec(tr.feature_names)
        ll_ol = ol.fit_ordered_logit(tr, spec).log_likelihood_on(va) / va.N
        ll_rl = rl.fit(tr, va, spec, config).log_likelihood_on(va) / va.N
        gaps.append(abs(ll_rl - ll_ol) / abs(ll_ol))
    verdict(3, "M=0 reduction to ordered logit", max(gaps) <= 0.005,
            "relative gaps " + ", ".join(f"{100 * g:.3f}%" for g in gaps))


# 4 -------------------------------------------------------------------------

def test_parameter_recovery(verdict):
    beta_true = np.array([1.0, -0.5, 0.5])
    hits = 0
    for seed in range(20):
        ds = generate(_gen(400 + seed, 10_000, binary_features=(2,)))
        fit = ol.fit_ordered_logit(ds, DesignSpec(ds.feature_names))
        se = np.array(evaluation.t_stats(fit, ds).std_errors[:3])
        hits += int(np.all(np.abs(fit.beta - beta_true) <= 3 * se))
    verdict(4, "ordered-logit parameter recovery", hits >= 17, f"{hits}/20 replications within 3 SE")


# 5 -------------------------------------------------------------------------

def test_rank_consistency(verdict):
    rng = np.random.default_rng(5)
    violations = 0
    for i in range(1000):
        K = int(rng.integers(2, 7))
        mode = "generic" if i % 2 else "alternative_specific"
        params = random_params(rng, K, int(rng.integers(0, 5)), 3, mode=mode)
        p = rl.forward(params, rng.normal(size=3) * 2).exceedance
        b = params.coral_biases
        higher = b[:, None] > b[None, :]
        violations += int(np.any(higher & (p[:, None] < p[None, :])))
        order = np.argsort(-b, kind="stable")
        violations += int(np.any(np.diff(p[order]) > 0))

    trained = []
    for seed in range(5):
        tr, va = split(generate(_gen(500 + seed, 3000, deltas=(-1.5, 0.0, 1.5))), 0.7, seed)
        cfg = rl.TrainConfig(layers=4, seed=seed, max_epochs=60)
        trained.append(rl.fit(tr, va, DesignSpec(tr.feature_names), cfg).params.coral_biases)
    ordered = sum(bool(np.all(np.diff(b) <= 0)) for b in trained)
    verdict(5, "rank-consistency structure", violations == 0 and ordered == 5,
            f"{violations} violations in 1000 random pairs; {ordered}/5 trained bias vectors non-increasing")


# 6 -------------------------------------------------------------------------

def test_heterogeneity_advantage(verdict):
    acc_rl, acc_ol, bayes = [], [], []
    for seed in range(5):
        g = _gen(600 + seed, 20_000, heterogeneity="interaction",
                 interaction_pairs=((0, 1),), interaction_strengths=(2.0,))
        tr, va = split(generate(g), 0.7, seed)
        fit_ol = ol.fit_ordered_logit(tr, DesignSpec(tr.feature_names))
        spec = DesignSpec(tr.feature_names, coefficient_mode="alternative_specific")
        fit_rl = rl.fit(tr, va, spec, rl.TrainConfig(layers=16, seed=seed))
        acc_ol.append(float(np.mean(fit_ol.predict(va) == va.labels)))
        acc_rl.append(float(np.mean(fit_rl.predict(va) == va.labels)))
        bayes.append(bayes_accuracy(g, va.features))
    med_rl, med_ol = float(np.median(acc_rl)), float(np.median(acc_ol))
    below = all(a <= b and c <= b for a, b, c in zip(acc_rl, bayes, acc_ol))
    verdict(6, "heterogeneity advantage", med_rl > med_ol and below,
            f"median accuracy reslogit {med_rl:.4f} vs ordered {med_ol:.4f}; "
            f"Bayes {min(bayes):.4f}-{max(bayes):.4f}")


# 7 -------------------------------------------------------------------------

def test_jenks_exactness(verdict):
    rng = np.random.default_rng(7)
    done = mismatches = 0
    while done < 200:
        n = int(rng.integers(2, 13))
        K = int(rng.integers(2, 5))
        values = np.round(rng.gamma(2.0, 3.0, size=n), int(rng.integers(0, 3)))
        if np.unique(values).size < K:
            continue
        fast, slow = jenks_breaks(values, K), brute_force_jenks(values, K)
        same_obj = abs(fast.objective - slow.objective) <= 1e-9 * max(1.0, slow.objective)
        mismatches += int(fast.thresholds != slow.thresholds or not same_obj)
        done += 1
    verdict(7, "Jenks exactness", mismatches == 0, f"{done} instances, {mismatches} mismatches")


# 8 -------------------------------------------------------------------------

def test_probability_conservation(verdict):
    rng = np.random.default_rng(8)
    worst = 0.0
    for i in range(5000):
        K = int(rng.integers(2, 7))
        x = rng.normal(size=(1, 3)) * 3
        d = np.cumsum(rng.exponential(size=K - 1) + 1e-3) - K / 2
        worst = max(worst, abs(ol.choice_probs(rng.normal(size=3), d, x).sum() - 1))
        params = random_params(rng, K, int(rng.integers(0, 4)), 3, mode=("generic", "alternative_specific")[i % 2])
        probs = rl.choice_probs_from_exceedance(rl.forward(params, x).exceedance)
        worst = max(worst, abs(probs.sum() - 1))

    ds = generate(_gen(800, 2000, binary_features=(2,)))
    tr, va = split(ds, 0.7, 0)
    fits = [ol.fit_ordered_logit(tr, DesignSpec(tr.feature_names)),
            rl.fit(tr, va, DesignSpec(tr.feature_names), rl.TrainConfig(layers=2, max_epochs=20))]
    change = max(abs(econ.binary_effect(f, va, "x3").mean_change.sum()) for f in fits)
    verdict(8, "probability conservation", worst <= 1e-9 and change <= 1e-9,
            f"10000 evaluations, max |sum-1| {worst:.1e}; max |sum of binary changes| {change:.1e}")


# 9 -------------------------------------------------------------------------

def test_elasticity_closed_form(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        beta, delta, x = rng.normal(), rng.normal(), rng.uniform(-3, 3)
        fit = ol.OrderedLogitFit(np.array([beta]), np.array([delta]), 0.0, 2, True, 0,
                                 DesignSpec(("x",)), ("x",), 2)
        ds = Dataset(np.array([[x]]), ("x",), [1], 2)
        got = econ.elasticity(fit, ds, "x").aggregate[1]
        p = 1.0 / (1.0 + np.exp(-(beta * x - delta)))
        want = (1 - p) * beta * x
        worst = max(worst, abs(got - want) / abs(want))
    verdict(9, "elasticity closed form (K=2)", worst <= 1e-4, f"100 points, worst relative error {worst:.2e}")


# 10 ------------------------------------------------------------------------

def test_determinism(verdict, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "spec.json").write_text(json.dumps(_gen(10, 1500).to_dict()))
    assert run(["simulate", "--spec", "spec.json", "--out", "t.csv"]) == 0
    assert run(["simulate", "--spec", "spec.json", "--out", "v.csv", "--seed", "11"]) == 0
    base = ["fit", "--model", "reslogit", "--train", "t.csv", "--val", "v.csv", "--layers", "16",
            "--batch-size", "64", "--seed", "1", "--max-epochs", "40"]
    codes = [run(base + ["--out", name]) for name in ("m1.json", "m2.json")]
    manifests = [json.loads((tmp_path / f"m{i}.manifest.json").read_text()) for i in (1, 2)]
    for m in manifests:
        m.pop("duration_seconds")
        m.pop("outputs")
        m["config"].pop("out")
    same_manifest = manifests[0] == manifests[1]
    same_bytes = (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    verdict(10, "byte-identical models", codes == [0, 0] and same_manifest and same_bytes,
            f"exit codes {codes}, manifests equal {same_manifest}, model bytes equal {same_bytes}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
