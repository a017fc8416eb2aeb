import math
import unittest

import numpy as np

from hecsb.errors import ArgumentError, DimensionError, StateError, \
    TrainingError
from hecsb.models import Activation
from hecsb.nn import AdamState, DenseLayer, Mlp, accuracy, adam_step, \
    cross_entropy, kd_loss, kd_loss_with_grad, kl_divergence, softmax_tau
from tests.gradcheck import numeric_grad, relative_error


def _identity_layer(activation=Activation.IDENTITY):
    return DenseLayer(np.eye(2), np.zeros(2), activation)


class TestMlp(unittest.TestCase):
    def test_identity_forward(self):
        net = Mlp([_identity_layer()])
        assert np.array_equal(net.forward(np.array([1.0, 2.0])), [1.0, 2.0])

    def test_relu_forward(self):
        net = Mlp([_identity_layer(Activation.RELU)])
        assert np.array_equal(net.forward(np.array([-1.0, 3.0])), [0.0, 3.0])

    def test_hand_computed_two_layer_net(self):
        first = DenseLayer(np.array([[2.0], [-1.0]]), np.array([1.0, 0.5]),
                           Activation.RELU)
        second = DenseLayer(np.array([[3.0, 4.0]]), np.array([-2.0]))
        net = Mlp([first, second])
        # relu([3, -0.5]) = [3, 0]; 3 * 3 + 4 * 0 - 2 = 7
        assert net.forward(np.array([1.0]))[0] == 7.0

    def test_dimension_mismatch(self):
        net = Mlp([_identity_layer()])
        with self.assertRaises(DimensionError):
            net.forward(np.ones(3))

    def test_layer_chain_is_validated(self):
        with self.assertRaises(DimensionError):
            Mlp([DenseLayer(np.ones((3, 2)), np.zeros(3)),
                 DenseLayer(np.ones((2, 2)), np.zeros(2))])

    def test_backward_without_forward(self):
        net = Mlp([_identity_layer()])
        with self.assertRaises(StateError):
            net.backward(np.ones(2))

    def test_linear_gradient_is_outer_product(self):
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        net = Mlp([DenseLayer(w, np.zeros(2))])
        x = np.array([0.5, -1.0, 2.0])
        net.forward(x)
        grads, _ = net.backward(np.ones(2))
        assert np.allclose(grads['0.weight'], np.outer(np.ones(2), x))

    def test_relu_blocks_negative_units(self):
        net = Mlp([_identity_layer(Activation.RELU)])
        net.forward(np.array([-1.0, 2.0]))
        grads, dx = net.backward(np.ones(2))
        assert dx[0] == 0.0
        assert dx[1] == 1.0
        assert np.all(grads['0.weight'][0] == 0.0)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        net = Mlp.build([3, 2, 2], rng, dtype=np.float64)
        x = rng.standard_normal((4, 3))
        c = rng.standard_normal((4, 2))

        def loss():
            return float(np.sum(net.forward(x, cache=False) * c))

        net.forward(x)
        grads, _ = net.backward(c)
        params = net.parameters()
        assert sum(p.size for p in params.values()) <= 20
        for name, param in params.items():
            numeric = numeric_grad(loss, param)
            assert relative_error(grads[name], numeric) < 1e-4, name

    def test_state_dict_round_trip(self):
        net = Mlp.build([4, 3, 2], np.random.default_rng(0))
        restored = Mlp.from_state(net.state_dict('net.'), 'net.')
        x = np.random.default_rng(1).random((5, 4)).astype(np.float32)
        assert np.array_equal(net.predict(x), restored.predict(x))
        assert restored.layers[0].activation == Activation.RELU
        assert restored.layers[1].activation == Activation.IDENTITY


class TestAdam(unittest.TestCase):
    def test_zero_gradient_leaves_parameters(self):
        p = np.array([1.0, -2.0])
        adam_step({'p': p}, {'p': np.zeros(2)}, AdamState())
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        p = np.zeros(3)
        g = np.array([0.3, -2.0, 5.0])
        adam_step({'p': p}, {'p': g}, AdamState(lr=0.01))
        assert np.allclose(p, -0.01 * np.sign(g), rtol=1e-5)

    def test_second_moment_recurrence(self):
        p = np.zeros(1)
        state = AdamState()
        for _ in range(2):
            adam_step({'p': p}, {'p': np.array([0.5])}, state)
        expected = 0.999 * (0.001 * 0.25) + 0.001 * 0.25
        assert math.isclose(state.v['p'][0], expected, rel_tol=1e-12)
        assert state.step == 2

    def test_non_finite_gradient_names_parameter(self):
        p = np.zeros(2)
        with self.assertRaises(TrainingError) as ctx:
            adam_step({'layer.weight': p},
                      {'layer.weight': np.array([np.nan, 0.0])}, AdamState())
        assert 'layer.weight' in str(ctx.exception)
        assert np.array_equal(p, [0.0, 0.0])

    def test_unknown_parameter(self):
        with self.assertRaises(ArgumentError):
            adam_step({}, {'ghost': np.zeros(1)}, AdamState())


class TestLosses(unittest.TestCase):
    def test_softmax_closed_form(self):
        probs = softmax_tau(np.array([0.0, math.log(2.0)]))
        assert np.allclose(probs, [1.0 / 3.0, 2.0 / 3.0])

    def test_softmax_high_temperature_is_uniform(self):
        probs = softmax_tau(np.array([5.0, -3.0, 0.0, 9.0]), 1e6)
        assert np.all(np.abs(probs - 0.25) < 1e-4)

    def test_softmax_temperature_scaling(self):
        assert np.allclose(softmax_tau(np.array([0.0, 1.0]), 0.5),
                           softmax_tau(np.array([0.0, 2.0])))

    def test_softmax_ignores_constant_shift(self):
        logits = np.random.default_rng(2).standard_normal((3, 5))
        for tau in (0.5, 1.0, 4.0):
            assert np.allclose(softmax_tau(logits + 7.5, tau),
                               softmax_tau(logits, tau))
            assert np.allclose(softmax_tau(logits - 1e3, tau),
                               softmax_tau(logits, tau))

    def test_softmax_rejects_non_positive_temperature(self):
        with self.assertRaises(ArgumentError):
            softmax_tau(np.zeros(2), 0.0)

    def test_kl_identical_is_zero(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_kl_closed_form(self):
        assert math.isclose(kl_divergence([1.0, 0.0], [0.5, 0.5]),
                            math.log(2.0), rel_tol=1e-12)

    def test_kl_matches_direct_summation(self):
        rng = np.random.default_rng(11)
        p = rng.random(4)
        q = rng.random(4)
        p /= p.sum()
        q /= q.sum()
        expected = sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))
        assert abs(kl_divergence(p, q) - expected) < 1e-9

    def test_kl_length_mismatch(self):
        with self.assertRaises(ArgumentError):
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    def test_kd_alpha_zero_is_cross_entropy(self):
        s = np.array([[1.0, -0.5, 2.0]])
        t = np.array([[0.0, 3.0, 1.0]])
        assert math.isclose(kd_loss(s, t, [1], 0.0, 4.0),
                            cross_entropy(s, [1]), rel_tol=1e-12)

    def test_kd_alpha_one_identical_logits(self):
        s = np.array([[0.2, 0.7, -1.0]])
        assert abs(kd_loss(s, s.copy(), [0], 1.0, 4.0)) < 1e-12

    def test_kd_hand_computed(self):
        s, t = [1.0, 0.0], [0.0, 1.0]
        ce = math.log(1.0 + math.exp(-1.0))
        pt = [1.0 / (1.0 + math.exp(0.5)), 1.0 / (1.0 + math.exp(-0.5))]
        ps = [pt[1], pt[0]]
        kl = sum(a * math.log(a / b) for a, b in zip(pt, ps))
        expected = 0.5 * ce + 0.5 * 4.0 * kl
        assert abs(kd_loss(np.array([s]), np.array([t]), [0], 0.5, 2.0)
                   - expected) < 1e-6

    def test_kd_moves_monotonically_between_endpoints(self):
        rng = np.random.default_rng(8)
        s = rng.standard_normal((4, 3))
        t = rng.standard_normal((4, 3))
        labels = np.array([0, 1, 2, 1])
        tau = 2.0
        ce = cross_entropy(s, labels)
        soft = kd_loss(s, t, labels, 1.0, tau)
        losses = [kd_loss(s, t, labels, alpha, tau)
                  for alpha in np.linspace(0.0, 1.0, 11)]
        assert math.isclose(losses[0], ce, rel_tol=1e-9)
        assert math.isclose(losses[-1], soft, rel_tol=1e-9)
        steps = np.diff(losses)
        assert np.all(steps * np.sign(soft - ce) >= -1e-12)
        assert min(ce, soft) - 1e-12 <= min(losses)
        assert max(losses) <= max(ce, soft) + 1e-12

    def test_kd_rejects_bad_alpha(self):
        with self.assertRaises(ArgumentError):
            kd_loss(np.zeros((1, 2)), np.zeros((1, 2)), [0], 1.5, 1.0)

    def test_kd_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        s = rng.standard_normal((3, 4))
        t = rng.standard_normal((3, 4))
        labels = np.array([0, 3, 1])
        _, grad = kd_loss_with_grad(s, t, labels, 0.5, 2.0)
        numeric = numeric_grad(lambda: kd_loss(s, t, labels, 0.5, 2.0), s)
        assert relative_error(grad, numeric) < 1e-4

    def test_accuracy(self):
        logits = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7]])
        assert accuracy(logits, [1, 0, 0]) == 2.0 / 3.0
