import numpy as np
import pytest

from mistfed.encoder import (
    EncoderParams,
    ModalitySpec,
    encode,
    finetune_encoder,
    pretrain_encoder,
    reconstruction_loss_grad,
)
from mistfed.errors import ConfigurationError, DataError, UsageError
from mistfed.numeric import RngStream, finite_diff_grad, relative_error


def _affine(w, b, activation="identity"):
    w = np.asarray(w, dtype=float)
    return EncoderParams("m", w.shape[0], w.shape[1], np.concatenate([w.ravel(), b]), activation)


class TestEncode:
    def test_identity_encoder(self):
        enc = _affine(np.eye(3), np.zeros(3))
        x = np.array([0.5, -2.0, 7.0])
        assert np.array_equal(encode(enc, x), x)

    def test_zero_input_gives_activation_of_bias(self):
        enc = _affine(np.ones((2, 3)), np.array([0.1, -0.4, 2.0]), "tanh")
        np.testing.assert_array_equal(encode(enc, np.zeros(2)), np.tanh([0.1, -0.4, 2.0]))

    def test_small_affine_by_hand(self):
        w = [[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]]
        enc = _affine(w, np.array([0.1, 0.2, 0.3]))
        x = np.array([2.0, -1.0])
        # x0*W[0] + x1*W[1] + b
        expected = [2.0 - 0.5 + 0.1, 4.0 + 0.0 + 0.2, -2.0 - 3.0 + 0.3]
        np.testing.assert_allclose(encode(enc, x), expected, atol=1e-12)

    def test_errors(self):
        enc = _affine(np.eye(2), np.zeros(2))
        with pytest.raises(ConfigurationError):
            encode(enc, np.zeros(3))
        with pytest.raises(DataError, match="sample 1"):
            encode(enc, np.array([[0.0, 0.0], [np.nan, 1.0]]))

    def test_common_output_dimension(self):
        rng = RngStream(0)
        encs = [
            pretrain_encoder(ModalitySpec(f"m{d}", d), rng.derive(d).generator.normal(size=(20, d)), 64, 2, rng.derive("e", d))
            for d in (3, 8, 16)
        ]
        outs = {encode(e, np.ones(e.raw_dim)).shape for e in encs}
        assert outs == {(64,)}


def test_reconstruction_gradient_matches_finite_differences():
    gen = np.random.default_rng(0)
    x = gen.normal(size=(7, 3))
    for activation in ("tanh", "identity"):
        theta = gen.normal(scale=0.5, size=3 * 4 + 4 + 4 * 3 + 3)
        _, g = reconstruction_loss_grad(theta, x, 4, activation)
        fd = finite_diff_grad(lambda t: reconstruction_loss_grad(t, x, 4, activation, need_grad=False)[0], theta, 1e-6)
        assert relative_error(g, fd) < 1e-6


class TestPretrain:
    def test_single_repeated_point_memorized(self):
        data = np.tile([0.3, -0.2, 0.5], (40, 1))
        enc = pretrain_encoder(ModalitySpec("m", 3), data, k=4, epochs=300, rng=RngStream(1))
        theta = np.concatenate([enc.weights, enc.decoder])
        assert reconstruction_loss_grad(theta, data, 4, "tanh", need_grad=False)[0] < 1e-4

    def test_linear_identity_reachable(self):
        data = RngStream(2).generator.normal(size=(200, 2))
        enc = pretrain_encoder(ModalitySpec("m", 2), data, k=2, epochs=300, rng=RngStream(3), activation="identity")
        theta = np.concatenate([enc.weights, enc.decoder])
        assert reconstruction_loss_grad(theta, data, 2, "identity", need_grad=False)[0] < 1e-3

    def test_exit_loss_not_above_entry(self):
        data = RngStream(4).generator.normal(size=(50, 5))
        for epochs in (0, 1, 5):
            rng = RngStream(9)
            enc = pretrain_encoder(ModalitySpec("m", 5), data, k=3, epochs=epochs, rng=rng)
            # Re-create the initial point by replaying the same stream.
            init = pretrain_encoder(ModalitySpec("m", 5), data, k=3, epochs=0, rng=RngStream(9))
            loss_in = reconstruction_loss_grad(np.concatenate([init.weights, init.decoder]), data, 3, need_grad=False)[0]
            loss_out = reconstruction_loss_grad(np.concatenate([enc.weights, enc.decoder]), data, 3, need_grad=False)[0]
            assert loss_out <= loss_in

    def test_empty_data(self):
        with pytest.raises(UsageError):
            pretrain_encoder(ModalitySpec("m", 2), np.empty((0, 2)), k=2)


class TestFinetune:
    @pytest.fixture
    def trained(self):
        data = RngStream(5).generator.normal(size=(60, 4))
        return pretrain_encoder(ModalitySpec("m", 4), data, k=6, epochs=200, rng=RngStream(6)), data

    def test_zero_steps_unchanged(self, trained):
        enc, data = trained
        assert finetune_encoder(enc, data, steps=0) is enc

    def test_loss_does_not_increase_on_pretraining_data(self, trained):
        enc, data = trained
        before = reconstruction_loss_grad(np.concatenate([enc.weights, enc.decoder]), data, 6, need_grad=False)[0]
        tuned = finetune_encoder(enc, data, steps=10)
        after = reconstruction_loss_grad(np.concatenate([tuned.weights, tuned.decoder]), data, 6, need_grad=False)[0]
        assert after <= before + 1e-9

    def test_shape_preserved(self, trained):
        enc, data = trained
        tuned = finetune_encoder(enc, data[:5], steps=10)
        assert encode(tuned, data[0]).shape == (6,)

    def test_empty_shots_warns(self, trained):
        enc, _ = trained
        with pytest.warns(UserWarning):
            assert finetune_encoder(enc, np.empty((0, 4)), steps=3) is enc
