import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_batch
from mistfed.errors import ConfigurationError, ProtocolError, UsageError
from mistfed.model import (
    MlpConfig,
    TrainHyper,
    fedprox_grad,
    fedprox_loss,
    forward,
    grad,
    init_params,
    local_train,
    loss,
    unpack,
)
from mistfed.numeric import RngStream, finite_diff_grad, relative_error


def test_param_count(small_mlp):
    assert small_mlp.num_params == 5 * 7 + 7 + 7 * 4 + 4 + 4 * 3 + 3


class TestForward:
    def test_zero_params_uniform(self):
        cfg = MlpConfig(4, (3,), 2, 0.0)
        np.testing.assert_array_equal(forward(np.zeros(cfg.num_params), cfg, np.ones(4)), [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_normalized(self, seed):
        gen = np.random.default_rng(seed)
        cfg = MlpConfig(6, (5, 4), 4, 0.1)
        p = gen.normal(scale=3.0, size=cfg.num_params)
        probs = forward(p, cfg, gen.normal(scale=5.0, size=(8, 6)))
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_single_affine_layer_by_hand(self):
        cfg = MlpConfig(2, (), 2, 0.0)
        w = np.array([[1.0, -1.0], [0.5, 2.0]])
        b = np.array([0.1, -0.2])
        p = np.concatenate([w.ravel(), b])
        z = np.array([0.3, -0.7])
        logits = z @ w + b
        expected = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(forward(p, cfg, z), expected, atol=1e-15)

    def test_dimension_mismatch(self, small_mlp):
        with pytest.raises(ConfigurationError):
            forward(np.zeros(small_mlp.num_params), small_mlp, np.zeros(4))
        with pytest.raises(ConfigurationError):
            forward(np.zeros(3), small_mlp, np.zeros(5))

    def test_unpack_views(self, small_mlp):
        p = np.arange(small_mlp.num_params, dtype=float)
        layers = unpack(p, small_mlp)
        assert [w.shape for w, _ in layers] == [(5, 7), (7, 4), (4, 3)]
        assert layers[0][0][0, 1] == 1.0 and layers[0][1][0] == 35.0


class TestLoss:
    def test_uniform_is_ln2(self):
        cfg = MlpConfig(3, (4,), 2, 0.0)
        z = np.random.default_rng(0).normal(size=(6, 3))
        assert loss(np.zeros(cfg.num_params), cfg, z, [0, 1, 1, 0, 1, 0]) == pytest.approx(np.log(2), abs=1e-15)

    def test_confident_correct_is_near_zero(self):
        cfg = MlpConfig(1, (), 2, 0.0)
        p = np.array([0.0, 0.0, -50.0, 50.0])  # logits (-50, 50) for every input
        assert loss(p, cfg, np.zeros((3, 1)), [1, 1, 1]) < 1e-40

    def test_matches_sum_and_divide(self, small_mlp, rng):
        p = rng.normal(size=small_mlp.num_params)
        z, y = random_batch(rng, small_mlp, 9)
        total = 0.0
        for zi, yi in zip(z, y):
            total += -np.log(forward(p, small_mlp, zi)[yi])
        assert loss(p, small_mlp, z, y) == pytest.approx(total / 9, abs=1e-12)

    def test_empty_batch(self, small_mlp):
        with pytest.raises(UsageError):
            loss(np.zeros(small_mlp.num_params), small_mlp, np.zeros((0, 5)), [])

    def test_label_range(self, small_mlp):
        with pytest.raises(UsageError):
            loss(np.zeros(small_mlp.num_params), small_mlp, np.zeros((1, 5)), [3])


class TestGrad:
    def test_matches_finite_differences(self, small_mlp, rng):
        for _ in range(5):
            p = rng.normal(size=small_mlp.num_params)
            z, y = random_batch(rng, small_mlp, 6)
            fd = finite_diff_grad(lambda w: loss(w, small_mlp, z, y), p, 1e-6)
            assert relative_error(grad(p, small_mlp, z, y), fd) < 1e-4

    def test_duplicated_batch_same_gradient(self, small_mlp, rng):
        p = rng.normal(size=small_mlp.num_params)
        z, y = random_batch(rng, small_mlp, 5)
        g1 = grad(p, small_mlp, z, y)
        g2 = grad(p, small_mlp, np.vstack([z, z]), np.r_[y, y])
        np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=1e-16)

    def test_stationary_point(self):
        # zero weights, balanced labels: softmax is uniform and class terms cancel
        cfg = MlpConfig(2, (3,), 2, 0.0)
        z = np.array([[1.0, 2.0], [1.0, 2.0]])
        g = grad(np.zeros(cfg.num_params), cfg, z, [0, 1])
        assert np.max(np.abs(g)) < 1e-15


class TestFedProx:
    def test_mu_zero_reduces_to_loss(self, small_mlp, rng):
        p, anchor = rng.normal(size=(2, small_mlp.num_params))
        z, y = random_batch(rng, small_mlp, 4)
        assert fedprox_loss(p, anchor, 0.0, small_mlp, z, y) == loss(p, small_mlp, z, y)
        assert np.array_equal(fedprox_grad(p, anchor, 0.0, small_mlp, z, y), grad(p, small_mlp, z, y))

    def test_equal_anchor_no_penalty(self, small_mlp, rng):
        p = rng.normal(size=small_mlp.num_params)
        z, y = random_batch(rng, small_mlp, 4)
        assert fedprox_loss(p, p.copy(), 5.0, small_mlp, z, y) == loss(p, small_mlp, z, y)

    def test_penalty_value(self):
        cfg = MlpConfig(1, (), 2, 0.0)
        z, y = np.zeros((2, 1)), [0, 1]
        p = np.zeros(4)
        anchor = p.copy()
        anchor[:2] = -1.0  # diff [1, 1, 0, 0]
        assert fedprox_loss(p, anchor, 0.01, cfg, z, y) - loss(p, cfg, z, y) == pytest.approx(0.01, abs=1e-15)

    def test_penalty_gradient_alone(self):
        cfg = MlpConfig(1, (), 2, 0.0)
        z, y = np.zeros((2, 1)), [0, 1]
        p = np.zeros(4)
        anchor = np.array([-1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(fedprox_grad(p, anchor, 0.01, cfg, z, y), [0.01, 0, 0, 0], atol=1e-17)

    def test_grad_matches_finite_differences(self, small_mlp, rng):
        p, anchor = rng.normal(size=(2, small_mlp.num_params))
        z, y = random_batch(rng, small_mlp, 6)
        fd = finite_diff_grad(lambda w: fedprox_loss(w, anchor, 0.3, small_mlp, z, y), p, 1e-6)
        assert relative_error(fedprox_grad(p, anchor, 0.3, small_mlp, z, y), fd) < 1e-4

    def test_length_mismatch(self, small_mlp):
        with pytest.raises(ConfigurationError):
            fedprox_loss(np.zeros(small_mlp.num_params), np.zeros(3), 0.1, small_mlp, np.zeros((1, 5)), [0])


class TestLocalTrain:
    def _data(self, cfg, n=40, seed=0):
        gen = np.random.default_rng(seed)
        y = np.arange(n) % cfg.num_classes
        z = gen.normal(size=(n, cfg.input_dim)) + y[:, None]
        return z, y

    def test_full_batch_gd_is_one_step(self, small_mlp):
        z, y = self._data(small_mlp)
        w0 = init_params(small_mlp, RngStream(3))
        hyper = TrainHyper(mu=0.0, local_epochs=1, batch_size=1000, learning_rate=0.05, optimizer="gd")
        upd = local_train(w0, w0, small_mlp, hyper, z, y, RngStream(4))
        np.testing.assert_allclose(upd.delta, -0.05 * grad(w0, small_mlp, z, y), rtol=1e-12, atol=1e-15)
        assert upd.num_samples == 40

    def test_nonzero_update(self, small_mlp):
        z, y = self._data(small_mlp)
        w0 = init_params(small_mlp, RngStream(3))
        upd = local_train(w0, w0, small_mlp, TrainHyper(local_epochs=1), z, y, RngStream(4))
        assert np.linalg.norm(upd.delta) > 0
        with pytest.raises(ConfigurationError):
            TrainHyper(local_epochs=0)

    def test_deterministic(self):
        cfg = MlpConfig(5, (7, 4), 3, 0.2)
        z, y = self._data(cfg)
        w0 = init_params(cfg, RngStream(3))
        a = local_train(w0, w0, cfg, TrainHyper(), z, y, RngStream(9, 1))
        b = local_train(w0, w0, cfg, TrainHyper(), z, y, RngStream(9, 1))
        assert np.array_equal(a.delta, b.delta) and a.local_loss_final == b.local_loss_final

    def test_delta_shrinks_with_mu(self):
        cfg = MlpConfig(5, (7, 4), 3, 0.1)
        z, y = self._data(cfg, 64)
        w0 = init_params(cfg, RngStream(3))
        norms = []
        for mu in (0.01, 1.0, 1e3, 1e6):
            upd = local_train(w0, w0, cfg, TrainHyper(mu=mu), z, y, RngStream(11))
            norms.append(np.linalg.norm(upd.delta))
        assert all(a >= b for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 1e-3

    def test_empty_data_is_protocol_error(self, small_mlp):
        w0 = np.zeros(small_mlp.num_params)
        with pytest.raises(ProtocolError):
            local_train(w0, w0, small_mlp, TrainHyper(), np.zeros((0, 5)), [], RngStream(0))


def test_gd_fixed_point_is_fedprox_stationary():
    # Long full-batch proximal GD must land where the FedProx gradient vanishes.
    cfg = MlpConfig(3, (), 2, 0.0)
    gen = np.random.default_rng(5)
    z = gen.normal(size=(30, 3))
    y = (z[:, 0] > 0).astype(int)
    anchor = gen.normal(scale=0.5, size=cfg.num_params)
    hyper = TrainHyper(mu=2.0, local_epochs=3000, batch_size=64, learning_rate=0.2, optimizer="gd")
    upd = local_train(anchor, anchor, cfg, hyper, z, y, RngStream(0))
    w = anchor + upd.delta
    assert np.linalg.norm(fedprox_grad(w, anchor, 2.0, cfg, z, y)) < 1e-10
