import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedbound.model import (
    Dataset,
    finite_difference_gradient,
    gradient,
    init_params,
    loss,
    mlp_spec,
    param_dim,
    quadratic_spec,
    sgd_epoch,
    sgd_epoch_traced,
    softmax_spec,
)
from fedbound.rng import spawn_rng


def toy_dataset(seed=0, n=12, dim=4, classes=3):
    rng = spawn_rng("toy", seed)
    return Dataset(rng.uniform(0, 1, (n, dim)), rng.integers(0, classes, n), classes)


def dummy_dataset(dim=2):
    # Quadratic-kind calls ignore the contents; only nonemptiness matters.
    return Dataset(np.full((1, dim), 0.5), np.zeros(1, dtype=np.int64), 1)


class TestParamDim:
    def test_softmax_counts_weights_and_biases(self):
        assert param_dim(softmax_spec(4, 3)) == 15

    def test_mlp_counts_both_layers(self):
        assert param_dim(mlp_spec(2, 2, 3)) == 17

    def test_cifar_sized_softmax(self):
        assert param_dim(softmax_spec(3072, 10)) == 30730

    def test_quadratic_equals_diag_length(self):
        assert param_dim(quadratic_spec([1.0, 2.0, 3.0])) == 3


class TestInitParams:
    def test_deterministic_given_seed(self):
        spec = mlp_spec(5, 3, 4)
        np.testing.assert_array_equal(init_params(spec, 9), init_params(spec, 9))

    def test_different_seeds_differ(self):
        spec = softmax_spec(5, 3)
        assert np.any(init_params(spec, 1) != init_params(spec, 2))

    def test_zero_mean_at_large_dim(self):
        # 999 * 10 + 10 = 10000 entries, all at scale 1/sqrt(999).
        spec = softmax_spec(999, 10)
        params = init_params(spec, 3)
        assert params.size == 10_000
        stderr = (1.0 / math.sqrt(999)) / math.sqrt(params.size)
        assert abs(params.mean()) < 3 * stderr

    def test_layer_scales_follow_fan_in(self):
        spec = mlp_spec(100, 10, 50)
        params = init_params(spec, 4)
        first = params[: 50 * 100]
        second = params[50 * 100 + 50 : 50 * 100 + 50 + 10 * 50]
        assert first.std() == pytest.approx(1.0 / math.sqrt(100), rel=0.1)
        assert second.std() == pytest.approx(1.0 / math.sqrt(50), rel=0.1)


class TestLoss:
    def test_zero_params_give_log_k(self):
        data = toy_dataset(classes=3)
        spec = softmax_spec(4, 3)
        assert loss(spec, np.zeros(param_dim(spec)), data) == pytest.approx(
            math.log(3), abs=1e-12
        )

    def test_l2_penalty_adds_quadratic_term(self):
        data = toy_dataset()
        plain = softmax_spec(4, 3, l2=0.0)
        ridged = softmax_spec(4, 3, l2=0.5)
        params = init_params(plain, 5)
        expected = loss(plain, params, data) + 0.25 * float(params @ params)
        assert loss(ridged, params, data) == pytest.approx(expected, rel=1e-12)

    def test_loss_nonnegative(self):
        data = toy_dataset()
        spec = mlp_spec(4, 3, 5)
        for seed in range(10):
            assert loss(spec, init_params(spec, seed), data) >= 0.0

    def test_coercive_with_l2(self):
        data = toy_dataset()
        spec = softmax_spec(4, 3, l2=0.1)
        direction = init_params(spec, 1)
        direction /= np.linalg.norm(direction)
        values = [loss(spec, radius * direction, data) for radius in (10.0, 100.0, 1000.0)]
        assert values[0] < values[1] < values[2]
        # The l2 term alone must dominate at large radius.
        assert values[2] > 0.5 * 0.1 * 1000.0 ** 2 * 0.99

    def test_sgd_decreases_loss_on_separable_data(self):
        rng = spawn_rng("separable", 0)
        n = 40
        labels = np.arange(n) % 2
        feats = np.clip(0.25 + 0.5 * labels[:, None] + 0.05 * rng.standard_normal((n, 3)), 0, 1)
        data = Dataset(feats, labels, 2)
        spec = softmax_spec(3, 2)
        params = init_params(spec, 0)
        losses = [loss(spec, params, data)]
        for epoch in range(30):
            params = sgd_epoch(spec, params, data, lr=0.5, batch_size=n, rng_seed=epoch)
            losses.append(loss(spec, params, data))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert losses[-1] < losses[0]

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss(softmax_spec(4, 3), np.zeros(7), toy_dataset())

    def test_empty_dataset_rejected(self):
        spec = softmax_spec(4, 3)
        empty = Dataset(np.zeros((0, 4)), np.zeros(0, dtype=np.int64), 3)
        with pytest.raises(ValueError):
            loss(spec, np.zeros(param_dim(spec)), empty)


class TestGradient:
    def test_quadratic_identity_gradient_is_w(self):
        spec = quadratic_spec([1.0, 1.0, 1.0])
        w = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(gradient(spec, w, dummy_dataset(3)), w)

    @pytest.mark.parametrize("case", range(12))
    def test_matches_finite_differences(self, case):
        rng = spawn_rng("fd-cases", case)
        dim = int(rng.integers(2, 6))
        classes = int(rng.integers(2, 5))
        if case % 2:
            spec = mlp_spec(dim, classes, int(rng.integers(2, 5)), l2=float(rng.uniform(0, 0.3)))
        else:
            spec = softmax_spec(dim, classes, l2=float(rng.uniform(0, 0.3)))
        n = int(rng.integers(2, 9))
        data = Dataset(rng.uniform(0, 1, (n, dim)), rng.integers(0, classes, n), classes)
        params = init_params(spec, 100 + case)
        analytic = gradient(spec, params, data)
        numeric = finite_difference_gradient(spec, params, data)
        rel = np.abs(analytic - numeric).max() / max(np.abs(analytic).max(), 1e-8)
        assert rel <= 1e-5

    def test_gradient_small_at_converged_minimum(self):
        data = toy_dataset(n=30)
        spec = softmax_spec(4, 3, l2=0.05)
        params = init_params(spec, 2)
        for epoch in range(400):
            params = sgd_epoch(spec, params, data, lr=0.5, batch_size=30, rng_seed=epoch)
        assert np.linalg.norm(gradient(spec, params, data)) < 1e-3


class TestStrongConvexity:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_l2_softmax_lies_above_quadratic_lower_model(self, seed):
        lam = 0.2
        spec = softmax_spec(3, 3, l2=lam)
        data = toy_dataset(seed=1, dim=3)
        rng = spawn_rng("convexity", seed)
        u = rng.normal(0, 0.8, param_dim(spec))
        v = rng.normal(0, 0.8, param_dim(spec))
        lower = (
            loss(spec, v, data)
            + float((u - v) @ gradient(spec, v, data))
            + 0.5 * lam * float((u - v) @ (u - v))
        )
        assert loss(spec, u, data) >= lower - 1e-9


class TestSgdEpoch:
    def test_lr_zero_is_identity(self):
        data = toy_dataset()
        spec = softmax_spec(4, 3)
        params = init_params(spec, 7)
        np.testing.assert_array_equal(
            sgd_epoch(spec, params, data, lr=0.0, batch_size=4, rng_seed=1), params
        )

    def test_quadratic_full_batch_scales_by_one_minus_lr(self):
        spec = quadratic_spec([1.0, 1.0])
        data = dummy_dataset(2)
        w = np.array([2.0, -4.0])
        out = sgd_epoch(spec, w, data, lr=0.1, batch_size=len(data), rng_seed=0)
        np.testing.assert_allclose(out, 0.9 * w, rtol=1e-15)

    def test_reproducible_bit_for_bit(self):
        data = toy_dataset(n=20)
        spec = mlp_spec(4, 3, 5)
        params = init_params(spec, 3)
        a = sgd_epoch(spec, params, data, lr=0.1, batch_size=6, rng_seed=42)
        b = sgd_epoch(spec, params, data, lr=0.1, batch_size=6, rng_seed=42)
        np.testing.assert_array_equal(a, b)

    def test_input_untouched(self):
        data = toy_dataset()
        spec = softmax_spec(4, 3)
        params = init_params(spec, 1)
        before = params.copy()
        sgd_epoch(spec, params, data, lr=0.3, batch_size=4, rng_seed=0)
        np.testing.assert_array_equal(params, before)

    def test_trace_has_one_norm_per_step(self):
        data = toy_dataset(n=10)
        spec = softmax_spec(4, 3)
        _, norms = sgd_epoch_traced(spec, init_params(spec, 0), data, 0.1, 4, 0)
        assert len(norms) == 3  # ceil(10 / 4)
        assert all(n >= 0 for n in norms)

    def test_invalid_batch_rejected(self):
        data = toy_dataset(n=5)
        spec = softmax_spec(4, 3)
        with pytest.raises(ValueError):
            sgd_epoch(spec, init_params(spec, 0), data, 0.1, 6, 0)
        with pytest.raises(ValueError):
            sgd_epoch(spec, init_params(spec, 0), data, 0.1, 0, 0)

    def test_negative_lr_rejected(self):
        data = toy_dataset()
        spec = softmax_spec(4, 3)
        with pytest.raises(ValueError):
            sgd_epoch(spec, init_params(spec, 0), data, -0.1, 4, 0)


class TestDataset:
    def test_rejects_out_of_range_features(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[1.5, 0.0]]), np.array([0]), 2)

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[0.5, 0.5]]), np.array([2]), 2)

    def test_sample_roundtrip(self):
        data = toy_dataset()
        s = data.sample(3)
        np.testing.assert_array_equal(s.features, data.features[3])
        assert s.label == int(data.labels[3])
