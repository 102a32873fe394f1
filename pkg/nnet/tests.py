import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, ContractError, ShapeError
from utils.rng import make_generator
from . import autograd as ag
from .network import (
    VectorFieldParams, forward, forward_node, freeze, grad, init_params,
    time_embed, value_and_grad, zeros_like,
)
from .optim import AdamState, adam_step, init_adam


def linear_params(weight, bias=None, frequencies=(np.pi,)):
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.zeros(weight.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    return VectorFieldParams([weight], [bias], ['identity'], np.asarray(frequencies))


def mse_closure(x, t, y, target):
    def closure(p):
        diff = forward_node(p, x, t, y) - target
        return ag.mean(ag.total(ag.square(diff), axis=1))
    return closure


class TimeEmbedTests(SimpleTestCase):

    def test_zero_time(self):
        np.testing.assert_array_equal(time_embed(0.0, 4), [0.0, 1.0, 0.0, 1.0])

    def test_half_period_slot(self):
        out = time_embed(0.5, 2, frequencies=[2 * np.pi])
        self.assertLessEqual(abs(out[0]), 1e-12)

    def test_quarter_time_hand_values(self):
        out = time_embed(0.25, 4, frequencies=[2 * np.pi, 4 * np.pi])
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0, -1.0], atol=1e-12)

    def test_odd_width_rejected(self):
        with self.assertRaises(ConfigurationError):
            time_embed(0.1, 3)

    def test_vector_times(self):
        out = time_embed(np.array([0.0, 0.25]), 4, frequencies=[2 * np.pi, 4 * np.pi])
        self.assertEqual(out.shape, (2, 4))
        np.testing.assert_allclose(out[1], [1.0, 0.0, 0.0, -1.0], atol=1e-12)


class ForwardTests(SimpleTestCase):

    def setUp(self):
        self.params = init_params(make_generator(42, 'init'), hidden=(16, 16), time_dim=4, cond_dim=3)

    def test_zero_params_give_zero_velocity(self):
        out = forward(zeros_like(self.params), np.array([[0.3, -1.2], [2.0, 0.5]]), 0.7, y=1)
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_identity_layer(self):
        weight = np.zeros((2, 4))
        weight[0, 0] = weight[1, 1] = 1.0
        params = linear_params(weight)
        np.testing.assert_array_equal(forward(params, np.array([1.0, 2.0]), 0.4), [1.0, 2.0])

    def test_matches_scripted_matmul_oracle(self):
        p = self.params
        x, t, y = np.array([0.5, -0.5]), 0.3, 1
        h = np.concatenate([x, time_embed(t, 4, p.frequencies), p.cond_table[y]])
        for w, b, tag in zip(p.weights, p.biases, p.activations):
            h = w @ h + b
            if tag == 'gelu':
                h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h ** 3)))
        np.testing.assert_allclose(forward(p, x, t, y), h, rtol=1e-12, atol=1e-14)

    def test_shape_preserved_and_checked(self):
        x = np.ones((5, 2))
        self.assertEqual(forward(self.params, x, 0.1).shape, (5, 2))
        with self.assertRaises(ShapeError):
            forward(self.params, np.ones((5, 3)), 0.1)

    def test_deterministic_init(self):
        again = init_params(make_generator(42, 'init'), hidden=(16, 16), time_dim=4, cond_dim=3)
        for a, b in zip(self.params.tensors(), again.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_parameter_count(self):
        expected = (2 + 4 + 3) * 16 + 16 + 16 * 16 + 16 + 16 * 2 + 2 + 3 * 3
        self.assertEqual(self.params.parameter_count, expected)

    def test_frozen_copy_is_read_only(self):
        frozen = freeze(self.params)
        with self.assertRaises(ValueError):
            frozen.weights[0][0, 0] = 1.0


class GradTests(SimpleTestCase):

    def test_half_squared_norm(self):
        params = init_params(make_generator(1, 'init'), hidden=(4,), time_dim=2, cond_dim=2)

        def closure(p):
            return sum((ag.total(ag.square(t)) for t in p.tensors()), ag.as_node(0.0)) * 0.5

        for g, p in zip(grad(params, closure), params.tensors()):
            np.testing.assert_allclose(g, p, rtol=0, atol=1e-15)

    def test_chain_rule_by_hand(self):
        params = VectorFieldParams([np.array([[2.0]])], [np.zeros(1)], ['identity'], np.zeros(0))

        def closure(p):
            out = forward_node(p, np.array([1.0]), 0.0)
            return ag.total(ag.square(out - 1.0))

        grads = grad(params, closure)
        self.assertAlmostEqual(grads[0][0, 0], 2.0, places=14)

    def test_non_scalar_loss_rejected(self):
        params = init_params(make_generator(1, 'init'), hidden=(4,), time_dim=2, cond_dim=0)
        with self.assertRaises(ContractError):
            grad(params, lambda p: forward_node(p, np.ones((3, 2)), 0.5))

    def test_matches_central_differences(self):
        rng = make_generator(7, 'gradcheck')
        worst = 0.0
        for draw in range(100):
            activation = 'gelu' if draw % 2 else 'tanh'
            params = init_params(rng, hidden=(6, 5), time_dim=4, cond_dim=2, n_conditions=2, activation=activation)
            params = params.with_tensors([t + 0.1 * rng.standard_normal(t.shape) for t in params.tensors()])
            x = rng.standard_normal((4, 2))
            t = rng.uniform(size=4)
            y = rng.integers(0, 3, size=4)
            target = rng.standard_normal((4, 2))
            closure = mse_closure(x, t, y, target)
            analytic = grad(params, closure)

            h = 1e-5
            tensors = [np.array(t) for t in params.tensors()]
            for k, tensor in enumerate(tensors):
                numeric = np.zeros_like(tensor)
                for idx in np.ndindex(tensor.shape):
                    original = tensor[idx]
                    tensor[idx] = original + h
                    plus = closure(params.with_tensors(tensors)).item()
                    tensor[idx] = original - h
                    minus = closure(params.with_tensors(tensors)).item()
                    tensor[idx] = original
                    numeric[idx] = (plus - minus) / (2 * h)
                scale = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric)), 1e-4)
                worst = max(worst, float(np.max(np.abs(analytic[k] - numeric) / scale)))
        self.assertLess(worst, 1e-4)

    def test_value_and_grad_reports_loss(self):
        params = init_params(make_generator(3, 'init'), hidden=(4,), time_dim=2, cond_dim=0)
        x, target = np.ones((2, 2)), np.zeros((2, 2))
        loss, _ = value_and_grad(params, mse_closure(x, 0.2, None, target))
        expected = np.mean(np.sum(forward(params, x, 0.2) ** 2, axis=1))
        self.assertAlmostEqual(loss, expected, places=12)


class AdamTests(SimpleTestCase):

    def scalar_params(self, value):
        return VectorFieldParams([np.array([[value]])], [np.zeros(1)], ['identity'], np.zeros(0))

    def test_zero_gradients_leave_params(self):
        params = init_params(make_generator(5, 'init'), hidden=(4,), time_dim=2, cond_dim=2)
        state = init_adam(params, lr=0.1)
        zeros = [np.zeros(np.shape(t)) for t in params.tensors()]
        updated, state = adam_step(params, zeros, state)
        for a, b in zip(params.tensors(), updated.tensors()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(state.step, 1)

    def test_first_step_moves_by_lr(self):
        params = init_params(make_generator(5, 'init'), hidden=(4,), time_dim=2, cond_dim=0)
        state = init_adam(params, lr=0.1, eps=1e-12)
        ones = [np.ones(np.shape(t)) for t in params.tensors()]
        updated, _ = adam_step(params, ones, state)
        for a, b in zip(params.tensors(), updated.tensors()):
            np.testing.assert_allclose(b - a, -0.1, atol=1e-10)

    def test_two_steps_hand_executed(self):
        params = self.scalar_params(1.0)
        state = init_adam(params, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        params, state = adam_step(params, [np.array([[1.0]]), np.zeros(1)], state)
        # m = 0.1, v = 0.001, m_hat = 1, v_hat = 1
        self.assertAlmostEqual(params.weights[0][0, 0], 1.0 - 0.1 / (1.0 + 1e-8), places=12)
        params, state = adam_step(params, [np.array([[-1.0]]), np.zeros(1)], state)
        m = 0.9 * 0.1 - 0.1
        v = 0.999 * 0.001 + 0.001
        m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
        expected = 1.0 - 0.1 / (1.0 + 1e-8) - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
        self.assertAlmostEqual(params.weights[0][0, 0], expected, places=12)
        self.assertEqual(state.step, 2)

    def test_bad_hyper_parameters(self):
        with self.assertRaises(ConfigurationError):
            AdamState(m=[], v=[], lr=-1.0)

    def test_training_is_bit_reproducible(self):
        def run():
            rng = make_generator(11, 'init')
            params = init_params(rng, hidden=(8, 8), time_dim=4, cond_dim=0)
            state = init_adam(params, lr=1e-2)
            data = make_generator(11, 'data')
            for _ in range(5):
                x = data.standard_normal((8, 2))
                _, grads = value_and_grad(params, mse_closure(x, 0.5, None, np.zeros((8, 2))))
                params, state = adam_step(params, grads, state)
            return params

        for a, b in zip(run().tensors(), run().tensors()):
            np.testing.assert_array_equal(a, b)
