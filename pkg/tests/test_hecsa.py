import unittest

import mock
import numpy as np

from hecsb.errors import ArgumentError, TrainingError
from hecsb.hecsa import HecsaModel, build_hecsa, default_frobenius_bound, \
    hecsa_from_state, hecsa_loss, hecsa_reconstruct, hecsa_state, \
    train_hecsa
from hecsb.nn import DenseLayer, Mlp
from tests.gradcheck import numeric_grad, relative_error


def _inverse_toy(sigma):
    W = np.array([[2.0, 1.0], [1.0, 3.0]])
    decoder = Mlp([DenseLayer(np.linalg.inv(W), np.zeros(2))])
    return HecsaModel(W, decoder, sigma, frobenius_bound=10.0)


class TestHecsaLoss(unittest.TestCase):
    def test_exact_inverse_has_zero_loss(self):
        model = _inverse_toy(0.0)
        batch = np.array([[0.2, 0.9], [0.5, 0.1]])
        loss, _ = hecsa_loss(model, batch, np.random.default_rng(0))
        assert loss < 1e-20

    def test_gradients(self):
        rng = np.random.default_rng(4)
        W = rng.standard_normal((1, 2))
        decoder = Mlp([DenseLayer(rng.standard_normal((2, 1)),
                                  rng.standard_normal(2))])
        model = HecsaModel(W, decoder, 0.1, frobenius_bound=5.0)
        batch = rng.random((3, 2))

        def loss():
            return hecsa_loss(model, batch, np.random.default_rng(7))[0]

        _, grads = hecsa_loss(model, batch, np.random.default_rng(7))
        params = model.parameters()
        assert sum(p.size for p in params.values()) == 6
        for name, param in params.items():
            assert relative_error(grads[name],
                                  numeric_grad(loss, param)) < 1e-4, name

    def test_more_noise_does_not_lower_expected_loss(self):
        batch = np.array([[0.3, 0.6], [0.8, 0.2]])

        def expected_loss(sigma):
            model = _inverse_toy(sigma)
            return np.mean([hecsa_loss(model, batch,
                                       np.random.default_rng(s))[0]
                            for s in range(100)])

        assert expected_loss(0.2) >= expected_loss(0.1)

    def test_empty_batch(self):
        with self.assertRaises(ArgumentError):
            hecsa_loss(_inverse_toy(0.1), np.zeros((0, 2)),
                       np.random.default_rng(0))


class TestHecsaTraining(unittest.TestCase):
    def setUp(self):
        self.images = np.random.default_rng(0).random((64, 8)).astype(
            np.float32)

    def test_frobenius_constraint_holds(self):
        model, history = train_hecsa(self.images, m=3, sigma=0.1, k=0.5,
                                     epochs=3, seed=1, batch_size=16,
                                     hidden=(8,))
        assert model.frobenius <= 0.5 + 1e-4
        assert len(history) == 3
        assert all(f <= 0.5 + 1e-4 for f in history.frobenius)

    def test_default_bound_is_gaussian_norm(self):
        model = build_hecsa(8, 3, seed=5, hidden=(4,))
        assert model.frobenius_bound == default_frobenius_bound(3, 8, 5)

    def test_needs_fewer_measurements_than_pixels(self):
        with self.assertRaises(ArgumentError):
            build_hecsa(4, 4)

    @mock.patch('hecsb.hecsa.hecsa_loss')
    def test_divergence(self, mock_loss):
        mock_loss.return_value = (float('nan'), {})
        with self.assertRaises(TrainingError):
            train_hecsa(self.images, m=3, epochs=1, hidden=(4,))

    def test_reconstruct(self):
        model = build_hecsa(8, 3, seed=2, hidden=(4,))
        y = np.array([0.3, -0.1, 0.2], dtype=np.float32)
        first = hecsa_reconstruct(model, y)
        assert np.array_equal(first, hecsa_reconstruct(model, y))
        zero = hecsa_reconstruct(model, np.zeros(3))
        assert np.all(np.isfinite(zero))
        assert zero.min() >= 0.0 and zero.max() <= 1.0

    def test_state_round_trip(self):
        model = build_hecsa(8, 3, seed=2, hidden=(4,))
        restored = hecsa_from_state(hecsa_state(model))
        assert np.array_equal(restored.W, model.W)
        y = np.array([0.5, 0.5, 0.5], dtype=np.float32)
        assert np.array_equal(hecsa_reconstruct(restored, y),
                              hecsa_reconstruct(model, y))
