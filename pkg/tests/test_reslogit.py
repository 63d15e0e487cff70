import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _factories import random_params
from ochoice import reslogit as rl
from ochoice.data import Dataset, DesignSpec, split
from ochoice.errors import DataError, NumericalError
from ochoice.synth import GenSpec, finite_diff_oracle, generate

LN2 = math.log(2.0)


def _params(K, M=0, p=1, **kw):
    return rl.ReslogitParams(np.zeros(p), np.zeros((M, K, K)), np.ones(K), np.zeros(K - 1), **kw)


class TestForwardPieces:
    def test_generic_utilities(self):
        np.testing.assert_allclose(rl.deterministic_utilities([1.5], [1.0], K=3), [1.5] * 3)

    def test_alternative_specific_utilities(self):
        beta = np.array([[0.2], [-0.1], [0.4]])
        np.testing.assert_allclose(rl.deterministic_utilities(beta, [1.0]), [0.2, -0.1, 0.4])

    def test_zero_input(self):
        np.testing.assert_array_equal(rl.deterministic_utilities([1.0, 2.0], [0.0, 0.0], K=3), 0.0)
        np.testing.assert_array_equal(rl.deterministic_utilities(np.ones((3, 2)), [0.0, 0.0]), 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            rl.deterministic_utilities([1.0, 2.0], [1.0], K=2)

    def test_zero_layer(self):
        layers = rl.forward_utilities(np.zeros(3), np.zeros((1, 3, 3)))
        np.testing.assert_allclose(layers[1], [-LN2] * 3)

    def test_identity_layer(self):
        layers = rl.forward_utilities(np.array([1.0, -1.0]), np.eye(2)[None])
        np.testing.assert_allclose(layers[1], [-0.31326169, -1.31326169], atol=1e-8)

    def test_no_layers(self):
        v0 = np.array([0.3, -2.0])
        layers = rl.forward_utilities(v0, np.zeros((0, 2, 2)))
        assert len(layers) == 1
        np.testing.assert_array_equal(layers[-1], v0)

    def test_coral_zero_index(self):
        np.testing.assert_allclose(rl.coral_exceedance(np.zeros(3), np.zeros(3), [1.0, 0.0]),
                                   [0.73105858, 0.5], atol=1e-8)

    def test_coral_closed_form(self):
        np.testing.assert_allclose(rl.coral_exceedance([1, 2, 3], [1, 1, 1], [-5, -7]),
                                   [0.73105858, 0.26894142], atol=1e-8)

    def test_coral_zero_weights(self):
        out = rl.coral_exceedance(np.random.default_rng(0).normal(size=(5, 3)), np.zeros(3), [0.2, -0.4])
        np.testing.assert_array_equal(out, np.broadcast_to(out[0], out.shape))


class TestChoiceProbs:
    def test_symmetric(self):
        np.testing.assert_allclose(rl.choice_probs_from_exceedance([0.73105858, 0.26894142]),
                                   [0.26894142, 0.46211716, 0.26894142], atol=1e-8)

    def test_boundary(self):
        np.testing.assert_allclose(rl.choice_probs_from_exceedance([0.5, 0.5]), [0.5, 0.0, 0.5])

    def test_clamped(self):
        probs, violated, failed = rl.choice_probs_from_exceedance([0.3, 0.6], return_flags=True)
        np.testing.assert_allclose(probs, [0.7 / 1.3, 0.0, 0.6 / 1.3])
        assert violated and not failed

    def test_rank_examples(self):
        assert rl.predict_rank([0.9, 0.6, 0.2], 0.5) == 3
        assert rl.predict_rank([0.45, 0.35], 0.4) == 2
        assert rl.predict_rank([0.1, 0.05], 0.5) == 1

    def test_rank_alpha_bounds(self):
        with pytest.raises(DataError):
            rl.predict_rank([0.5], 1.0)

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=6), st.floats(0.05, 0.95))
    @settings(max_examples=200)
    def test_rank_is_threshold_crossing(self, ps, alpha):
        p = np.sort(np.array(ps))[::-1]
        crossing = max([k + 1 for k in range(p.size) if p[k] > alpha], default=0) + 1
        assert rl.predict_rank(p, alpha) == crossing
        _, violated, _ = rl.choice_probs_from_exceedance(p, return_flags=True)
        assert not violated


class TestLoss:
    def test_top_rank_half(self):
        params = rl.ReslogitParams([0.0], np.zeros((0, 3, 3)), np.zeros(3), [0.0, 0.0])
        assert rl.loss(params, [[0.0]], [3]) == pytest.approx(2 * LN2, abs=1e-12)

    def test_middle_rank(self):
        params = rl.ReslogitParams([0.0], np.zeros((0, 3, 3)), np.zeros(3), [1.0, -1.0])
        assert rl.loss(params, [[0.0]], [2]) == pytest.approx(0.62652338, abs=1e-8)

    def test_perfect_limit(self):
        params = rl.ReslogitParams([0.0], np.zeros((0, 3, 3)), np.zeros(3), [60.0, -60.0])
        assert rl.loss(params, [[0.0]], [2]) < 1e-20

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, 4, 2, 3)
        X, y = rng.normal(size=(50, 3)), rng.integers(1, 5, 50)
        perm = rng.permutation(50)
        assert rl.loss(params, X[perm], y[perm]) == pytest.approx(rl.loss(params, X, y), rel=1e-12)

    def test_task_weights_scale_terms(self):
        rng = np.random.default_rng(4)
        params = random_params(rng, 3, 1, 2)
        X, y = rng.normal(size=(10, 2)), rng.integers(1, 4, 10)
        doubled = rl.ReslogitParams(params.beta, params.residual_weights, params.coral_weights,
                                    params.coral_biases, task_weights=[2.0, 2.0])
        assert rl.loss(doubled, X, y) == pytest.approx(2 * rl.loss(params, X, y), rel=1e-12)

    def test_task_weights_positive(self):
        with pytest.raises(DataError):
            rl.ReslogitParams([0.0], np.zeros((0, 2, 2)), np.ones(2), [0.0], task_weights=[0.0])

    def test_empty_batch(self):
        with pytest.raises(DataError):
            rl.loss(_params(2), np.zeros((0, 1)), np.zeros(0, dtype=int))


class TestGradient:
    def test_bias_closed_form(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, 4, 2, 3)
        X, y = rng.normal(size=(20, 3)), rng.integers(1, 5, 20)
        p = rl.forward(params, X).exceedance
        expected = (p - rl.extended_labels(y, 4)).sum(axis=0)
        np.testing.assert_allclose(rl.gradient(params, X, y).coral_biases, expected, atol=1e-12)

    def test_random_config_matches_fd(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, 4, 3, 7)
        X, y = rng.normal(size=(5, 7)), rng.integers(1, 5, 5)
        g = rl.gradient_vector(params, X, y)
        fd = finite_diff_oracle(params, (X, y), step=1e-6)
        assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(fd)))

    def test_alternative_specific_with_exclusion(self):
        rng = np.random.default_rng(7)
        mask = np.ones((3, 2), dtype=bool)
        mask[2, 1] = False
        params = random_params(rng, 3, 2, 2, mode="alternative_specific", mask=mask)
        X, y = rng.normal(size=(6, 2)), rng.integers(1, 4, 6)
        g = rl.gradient_vector(params, X, y)
        assert g.size == params.n_params == 5 + 18 + 3 + 2
        fd = finite_diff_oracle(params, (X, y), step=1e-6)
        assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(fd)))

    def test_no_layers_generic_reduction(self):
        # M = 0 generic: d loss / d beta = (sum w) * sum_n sum_k (p_nk - y_nk) x_n
        rng = np.random.default_rng(8)
        params = random_params(rng, 3, 0, 4)
        X, y = rng.normal(size=(30, 4)), rng.integers(1, 4, 30)
        p = rl.forward(params, X).exceedance
        resid = (p - rl.extended_labels(y, 3)).sum(axis=1)
        expected = params.coral_weights.sum() * (X.T @ resid)
        np.testing.assert_allclose(rl.gradient(params, X, y).beta, expected, atol=1e-10)

    def test_per_observation_sums_to_total(self):
        rng = np.random.default_rng(9)
        params = random_params(rng, 3, 2, 2)
        X, y = rng.normal(size=(15, 2)), rng.integers(1, 4, 15)
        G = rl.per_observation_gradients(params, X, y, blocks="all")
        np.testing.assert_allclose(G.sum(axis=0), rl.gradient_vector(params, X, y), atol=1e-10)
        Gb = rl.per_observation_gradients(params, X, y)
        np.testing.assert_allclose(Gb, G[:, :params.n_beta])

    def test_input_derivative_matches_fd(self):
        rng = np.random.default_rng(10)
        params = random_params(rng, 3, 2, 2, scale=0.3)
        params = rl.ReslogitParams(params.beta, params.residual_weights, params.coral_weights,
                                   np.array([1.0, -1.0]))
        X = rng.normal(size=(12, 2))
        h = 1e-6

        def probs(Z):
            return rl.choice_probs_from_exceedance(rl.forward(params, Z).exceedance)

        up, down = X.copy(), X.copy()
        up[:, 1] += h
        down[:, 1] -= h
        np.testing.assert_allclose(rl.input_derivative(params, X, 1),
                                   (probs(up) - probs(down)) / (2 * h), atol=1e-8)


class TestRankConsistency:
    def test_order_follows_biases(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            K = int(rng.integers(2, 6))
            params = random_params(rng, K, int(rng.integers(0, 4)), 3)
            p = rl.forward(params, rng.normal(size=(5, 3)) * 3).exceedance
            order = np.argsort(-params.coral_biases, kind="stable")
            for row in p:
                assert np.all(np.diff(row[order]) <= 0)


class TestParams:
    def test_parameter_count(self):
        params = _params(3, M=2, p=4)
        assert params.n_params == 4 + 2 * 9 + 3 + 2

    def test_vector_round_trip(self):
        rng = np.random.default_rng(12)
        params = random_params(rng, 3, 2, 2, mode="alternative_specific")
        back = params.with_vector(params.to_vector())
        np.testing.assert_array_equal(back.to_vector(), params.to_vector())

    def test_dict_round_trip(self):
        rng = np.random.default_rng(13)
        mask = np.array([[True, False], [True, True], [False, True]])
        params = random_params(rng, 3, 1, 2, mode="alternative_specific", mask=mask)
        back = rl.ReslogitParams.from_dict(params.to_dict())
        np.testing.assert_array_equal(back.to_vector(), params.to_vector())
        np.testing.assert_array_equal(back.beta_mask, mask)

    def test_names_align_with_vector(self):
        params = _params(3, M=1, p=2)
        assert len(params.parameter_names(("a", "b"))) == params.n_params

    def test_non_finite_rejected(self):
        with pytest.raises(NumericalError):
            rl.ReslogitParams([np.nan], np.zeros((0, 2, 2)), np.ones(2), [0.0])


class TestConfig:
    def test_defaults(self):
        cfg = rl.TrainConfig()
        assert (cfg.layers, cfg.batch_size, cfg.learning_rate) == (16, 64, 1e-3)
        assert cfg.alpha_grid == (0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6)

    def test_patience_below_max_epochs(self):
        with pytest.raises(DataError):
            rl.TrainConfig(max_epochs=5, early_stop_patience=5)

    def test_alpha_grid_parse(self):
        assert rl.parse_alpha_grid("0.3:0.6:0.1") == (0.3, 0.4, 0.5, 0.6)
        assert rl.parse_alpha_grid("0.4") == (0.4,)

    def test_strict_bias_chain(self):
        t = np.array([0.5, -1.0, 2.0])
        b = rl.biases_from_offsets(t)
        assert np.all(np.diff(b) < 0)
        np.testing.assert_allclose(rl.offsets_from_biases(b), t, atol=1e-12)


def _data(seed, n=1500, **kw):
    g = GenSpec(n, 2, (1.0, -0.5), (-1.0, 1.0), seed=seed, **kw)
    return split(generate(g), 0.7, seed)


class TestFit:
    def test_deterministic(self):
        tr, va = _data(1, n=600)
        cfg = rl.TrainConfig(layers=2, max_epochs=8, early_stop_patience=3, seed=4)
        a = rl.fit(tr, va, DesignSpec(("x1", "x2")), cfg)
        b = rl.fit(tr, va, DesignSpec(("x1", "x2")), cfg)
        np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())
        assert a.history == b.history

    def test_history_and_best_epoch(self):
        tr, va = _data(2, n=800)
        cfg = rl.TrainConfig(layers=1, max_epochs=40, early_stop_patience=4, seed=0)
        f = rl.fit(tr, va, DesignSpec(("x1", "x2")), cfg)
        mpes = [h["val_mpe"] for h in f.history]
        assert f.history[f.best_epoch]["val_mpe"] == min(mpes)
        assert len(f.history) <= f.best_epoch + cfg.early_stop_patience + 1
        assert f.params.alpha in cfg.alpha_grid

    def test_strict_biases_ordered(self):
        tr, va = _data(3, n=800)
        cfg = rl.TrainConfig(layers=1, max_epochs=10, early_stop_patience=3, strict_biases=True)
        f = rl.fit(tr, va, DesignSpec(("x1", "x2")), cfg)
        assert np.all(np.diff(f.params.coral_biases) < 0)

    def test_divergence_reports_epoch(self):
        tr, va = _data(4, n=600)
        cfg = rl.TrainConfig(layers=2, max_epochs=20, learning_rate=1e6)
        with pytest.raises(NumericalError) as exc:
            rl.fit(tr, va, DesignSpec(("x1", "x2")), cfg)
        assert "epoch" in exc.value.details

    def test_needs_two_categories(self):
        ds = Dataset(np.arange(20.0)[:, None], ("x",), np.ones(20, dtype=int), 1)
        with pytest.raises(DataError):
            rl.fit(ds, ds, DesignSpec(("x",)), rl.TrainConfig(layers=0, max_epochs=2, early_stop_patience=1))

    def test_json_round_trip(self):
        tr, va = _data(5, n=500)
        f = rl.fit(tr, va, DesignSpec(("x1", "x2")), rl.TrainConfig(layers=1, max_epochs=3, early_stop_patience=2))
        back = rl.ReslogitFit.from_dict(f.to_dict())
        np.testing.assert_array_equal(back.predict_proba(va), f.predict_proba(va))
        np.testing.assert_array_equal(back.predict(va), f.predict(va))


class TestSelectAlpha:
    def _fit_with_biases(self, b):
        params = rl.ReslogitParams([0.0], np.zeros((0, 3, 3)), np.zeros(3), b)
        return rl.ReslogitFit(params, DesignSpec(("x",)), ("x",), 3)

    def test_singleton(self):
        ds = Dataset(np.zeros((4, 1)), ("x",), [1, 2, 3, 1], 3)
        assert rl.select_alpha(self._fit_with_biases([0.0, -1.0]), ds, [0.5]) == 0.5

    def test_tie_goes_to_smallest(self):
        # exceedance probabilities sit in (0.41, 0.49): every grid value above 0.49 predicts rank 1
        b = np.log(np.array([0.48, 0.42]) / (1 - np.array([0.48, 0.42])))
        ds = Dataset(np.zeros((6, 1)), ("x",), [1, 1, 1, 1, 2, 3], 3)
        grid = [0.6, 0.5, 0.55, 0.3]
        best, scores = rl.select_alpha(self._fit_with_biases(b), ds, grid, return_scores=True)
        assert best == 0.5
        s = dict(scores)
        assert s[0.5] == s[0.55] == s[0.6] < s[0.3]
