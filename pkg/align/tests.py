import math

import numpy as np
from django.test import SimpleTestCase, tag

from flow.samplers import SamplerKind, SamplerSpec
from flow.training import TrainSettings, train_flow
from nnet import autograd as ag
from nnet.network import freeze, init_params, value_and_grad
from nnet.optim import init_adam
from utils.exceptions import ConfigurationError, ContractError, DomainError, ShapeError
from utils.rng import RngStreams, make_generator
from .dpo import (
    DpoConfig, PreferencePair, dpo_grad_scale, dpo_inner_z, dpo_loss, dpo_train_step, dpo_value_and_grad,
    inner_z_node, preferred_fraction, synthesize_preference_pairs, train_dpo,
)
from .reflow import ReflowPair, Weighting, distill, distill_loss, generate_reflow_pairs, stack_pairs


def small_net(seed=0, **kwargs):
    options = dict(hidden=(16, 16), time_dim=4, cond_dim=2, n_conditions=2)
    options.update(kwargs)
    return init_params(make_generator(seed, 'init'), **options)


def two_gaussian_batches(streams, centre=2.0, spread=0.5):
    data, noise = streams.stream('data'), streams.stream('noise')

    def draw(n):
        signs = np.where(data.random(n) < 0.5, -1.0, 1.0)
        x1 = np.column_stack([signs * centre, np.zeros(n)]) + spread * data.standard_normal((n, 2))
        return noise.standard_normal((n, 2)), x1, None

    return draw


class ReflowPairTests(SimpleTestCase):

    def test_constant_teacher_single_step(self):
        v0 = np.array([0.5, -1.25])
        pairs = generate_reflow_pairs(lambda x, t, y: v0, 16, 1, None, make_generator(1, 'pairs'), data_dim=2)
        self.assertEqual(len(pairs), 16)
        for pair in pairs:
            np.testing.assert_array_equal(pair.x1_hat, pair.x0 + v0)
            self.assertEqual(pair.teacher_nfe, 1)

    def test_same_seed_same_pairs(self):
        teacher = small_net()
        a = generate_reflow_pairs(teacher, 8, 4, None, make_generator(5, 'pairs'), y=1)
        b = generate_reflow_pairs(teacher, 8, 4, None, make_generator(5, 'pairs'), y=1)
        for left, right in zip(a, b):
            np.testing.assert_array_equal(left.x0, right.x0)
            np.testing.assert_array_equal(left.x1_hat, right.x1_hat)
            self.assertEqual(left.y, 1)

    def test_invalid_pairs(self):
        with self.assertRaises(ContractError):
            generate_reflow_pairs(small_net(), 4, 0, None, make_generator(0, 'pairs'))
        with self.assertRaises(ContractError):
            ReflowPair(np.zeros(2), np.zeros(2), None, 0)
        with self.assertRaises(ShapeError):
            ReflowPair(np.zeros(2), np.zeros(3), None, 1)
        with self.assertRaises(ContractError):
            stack_pairs([])


class DistillLossTests(SimpleTestCase):

    def setUp(self):
        self.pairs = [
            ReflowPair(np.array([0.0, 0.0]), np.array([2.0, 0.0]), None, 50),
            ReflowPair(np.array([1.0, 0.0]), np.array([1.0, 2.0]), None, 50),
        ]

    def test_exact_student_has_zero_loss(self):
        x0, x1, _ = stack_pairs(self.pairs)
        for kind in SamplerKind.values:
            loss = distill_loss(lambda x, t, y: x1 - x0, self.pairs, SamplerSpec(kind), make_generator(0, 't'))
            self.assertEqual(loss, 0.0)

    def test_constant_teacher_is_already_straight(self):
        v0 = np.array([0.25, 0.75])
        teacher = lambda x, t, y: np.broadcast_to(v0, np.shape(x))
        pairs = generate_reflow_pairs(teacher, 32, 1, None, make_generator(2, 'pairs'), data_dim=2)
        loss = distill_loss(teacher, pairs, SamplerSpec(SamplerKind.U_SHAPED_CENTERED), make_generator(0, 't'))
        self.assertLess(loss, 1e-24)

    def test_hand_evaluated_pairs(self):
        # row errors at t = (0.5, 0.25) are 0 and 5 for u = 2x
        model = lambda x, t, y: 2.0 * x
        t = np.array([0.5, 0.25])
        self.assertAlmostEqual(distill_loss(model, self.pairs, SamplerSpec(), None, t=t), 2.5, places=14)
        weighted = distill_loss(model, self.pairs, SamplerSpec(), None, t=t, weighting=Weighting.INVERSE_SQUARE)
        self.assertAlmostEqual(weighted, (0.0 * 4.0 + 5.0 * 16.0) / 2.0, places=12)

    def test_inverse_square_clamps_small_times(self):
        model = lambda x, t, y: 2.0 * x
        loss = distill_loss(model, self.pairs[1:], SamplerSpec(), None, t=np.array([0.0]),
                            weighting=Weighting.INVERSE_SQUARE)
        # x_t = x0 = [1, 0], V = [2, 0], target [0, 2] -> error 8, weight 1e6
        self.assertAlmostEqual(loss, 8.0e6, delta=1e-3)

    def test_errors(self):
        with self.assertRaises(ContractError):
            distill_loss(lambda x, t, y: x, [], SamplerSpec(), make_generator(0, 't'))
        with self.assertRaises(ConfigurationError):
            distill_loss(lambda x, t, y: x, self.pairs, SamplerSpec(), None, t=0.5, weighting='cubic')


class DpoScalarTests(SimpleTestCase):

    def test_loss_at_zero(self):
        for beta in (0.5, 1.0, 5000.0):
            self.assertAlmostEqual(dpo_loss(0.0, beta), math.log(2.0), delta=1e-12)

    def test_loss_vanishes_for_large_margins(self):
        self.assertLess(dpo_loss(10.0, 1.0), 5e-5)
        z = np.linspace(-3, 3, 61)
        self.assertTrue(np.all(np.diff(dpo_loss(z, 2.0)) < 0))

    def test_beta_scales_z(self):
        for z in (-1.5, 0.3, 2.0):
            self.assertEqual(dpo_loss(z, 2.0 * 0.7), dpo_loss(2.0 * z, 0.7))

    def test_beta_monotonicity(self):
        self.assertLess(dpo_loss(0.5, 2.0), dpo_loss(0.5, 1.0))
        self.assertGreater(dpo_loss(-0.5, 2.0), dpo_loss(-0.5, 1.0))

    def test_grad_scale_values(self):
        self.assertEqual(dpo_grad_scale(0.0, 3.0), 1.5)
        self.assertAlmostEqual(dpo_grad_scale(-0.01, 5000.0), 5000.0, delta=1e-9)

    def test_grad_scale_matches_central_difference(self):
        h = 1e-6
        for beta in (0.5, 2.0, 5.0):
            for z in np.linspace(-3, 3, 25):
                numeric = (dpo_loss(z + h, beta) - dpo_loss(z - h, beta)) / (2 * h)
                self.assertAlmostEqual(abs(numeric), dpo_grad_scale(z, beta), delta=1e-8)

    def test_grad_scale_in_explosion_regime(self):
        # relative check where |dL/dz| is in the thousands
        h = 1e-9
        for z in (-3.0, -0.5, -0.01):
            numeric = (dpo_loss(z + h, 5000.0) - dpo_loss(z - h, 5000.0)) / (2 * h)
            self.assertAlmostEqual(abs(numeric) / dpo_grad_scale(z, 5000.0), 1.0, delta=1e-6)

    def test_non_positive_beta(self):
        with self.assertRaises(ConfigurationError):
            dpo_loss(0.1, 0.0)
        with self.assertRaises(ConfigurationError):
            dpo_grad_scale(0.1, -1.0)
        with self.assertRaises(ConfigurationError):
            DpoConfig(beta=0.0)


class InnerZTests(SimpleTestCase):

    def setUp(self):
        rng = make_generator(3, 'pairs')
        self.pair = PreferencePair(1, rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(2), 0.4)

    def test_identical_models_give_zero(self):
        theta = small_net(1)
        self.assertEqual(dpo_inner_z(theta, freeze(theta), self.pair), 0.0)

    def test_swapping_samples_negates(self):
        theta, ref = small_net(1), freeze(small_net(2))
        swapped = PreferencePair(1, self.pair.x_l, self.pair.x_w, self.pair.shared_noise, 0.4)
        self.assertEqual(dpo_inner_z(theta, ref, swapped), -dpo_inner_z(theta, ref, self.pair))

    def test_hand_evaluated_linear_models(self):
        # x_t = 0.5 x, target x; theta u = x gives s = 0.25 x^2, ref u = 0 gives s = x^2
        pair = PreferencePair(None, np.array([1.0]), np.array([2.0]), np.array([0.0]), 0.5)
        z = dpo_inner_z(lambda x, t, y: x, lambda x, t, y: np.zeros_like(x), pair)
        self.assertAlmostEqual(z, (1.0 - 0.25) - (4.0 - 1.0), places=14)

    def test_pair_validation(self):
        with self.assertRaises(DomainError):
            PreferencePair(0, np.zeros(2), np.zeros(2), np.zeros(2), 0.0)
        with self.assertRaises(DomainError):
            PreferencePair(0, np.zeros(2), np.zeros(2), np.zeros(2), 1.0)
        with self.assertRaises(ShapeError):
            PreferencePair(0, np.zeros(2), np.zeros(3), np.zeros(2), 0.5)


class DpoTrainStepTests(SimpleTestCase):

    def setUp(self):
        rng = make_generator(4, 'pairs')
        self.batch = [
            PreferencePair(0, rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(2), float(t))
            for t in (0.2, 0.5, 0.8)
        ]
        self.theta = small_net(7)
        self.ref = freeze(self.theta)

    def test_step_from_reference(self):
        cfg = DpoConfig(beta=0.5, lr=1e-4)
        theta, state, diagnostics = dpo_train_step(self.theta, self.ref, self.batch, cfg)
        self.assertAlmostEqual(diagnostics.loss, math.log(2.0), delta=1e-12)
        np.testing.assert_array_equal(diagnostics.z, np.zeros(3))
        np.testing.assert_allclose(diagnostics.grad_scale, 0.25)
        self.assertEqual(state.step, 1)
        after, _, _ = dpo_value_and_grad(theta, self.ref, self.batch, cfg.beta)
        self.assertLess(after, math.log(2.0))

    def test_gradient_is_half_beta_times_margin_gradient(self):
        beta = 2.0
        _, grads, _ = dpo_value_and_grad(self.theta, self.ref, self.batch, beta)
        _, z_grads = value_and_grad(self.theta, lambda v: ag.mean(inner_z_node(v, self.ref, self.batch)))
        for g, gz in zip(grads, z_grads):
            np.testing.assert_allclose(g, -0.5 * beta * gz, rtol=1e-12, atol=1e-15)

    def test_duplicate_pairs_match_double_weight(self):
        pair = self.batch[0]
        theta = small_net(8)
        _, doubled, _ = dpo_value_and_grad(theta, self.ref, [pair, pair], 0.5)
        _, weighted, _ = dpo_value_and_grad(theta, self.ref, [pair], 0.5, weights=[2.0])
        for a, b in zip(doubled, weighted):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_preconditions(self):
        cfg = DpoConfig()
        with self.assertRaises(ContractError):
            dpo_train_step(self.theta, self.ref, [], cfg)
        with self.assertRaises(ContractError):
            dpo_train_step(self.theta, self.theta, self.batch, cfg)

    def test_reference_untouched_by_training(self):
        cfg = DpoConfig(beta=0.5, lr=1e-2, reference=self.ref)
        before = [t.tobytes() for t in cfg.reference.tensors()]
        theta, state, history = train_dpo(self.theta, self.batch, cfg, 5, 2, make_generator(0, 'dpo'))
        self.assertEqual([t.tobytes() for t in cfg.reference.tensors()], before)
        self.assertEqual(len(history), 5)
        self.assertEqual(state.step, 5)

    def test_config_freezes_reference(self):
        cfg = DpoConfig(reference=small_net(3))
        self.assertTrue(all(not t.flags.writeable for t in cfg.reference.tensors()))


class PreferenceSynthesisTests(SimpleTestCase):

    def test_pairs_split_by_radius(self):
        still = lambda x, t, y: np.zeros_like(x)
        pairs = synthesize_preference_pairs(still, 20, [0.0, 0.0], 1.0, make_generator(6, 'pairs'),
                                            nfe=2, data_dim=2)
        self.assertEqual(len(pairs), 20)
        for pair in pairs:
            self.assertLessEqual(np.linalg.norm(pair.x_w), 1.0)
            self.assertGreater(np.linalg.norm(pair.x_l), 1.0)
            self.assertTrue(1e-3 <= pair.shared_t <= 1 - 1e-3)
            self.assertIsNone(pair.y)

    def test_network_uses_null_condition(self):
        model = small_net(2)
        pairs = synthesize_preference_pairs(model, 4, [0.0, 0.0], 0.8, make_generator(6, 'pairs'), nfe=3,
                                            pool_size=64)
        self.assertTrue(all(pair.y == model.null_condition for pair in pairs))

    def test_pool_without_rejected_samples(self):
        with self.assertRaises(ContractError):
            synthesize_preference_pairs(lambda x, t, y: -x, 4, [0.0, 0.0], 100.0,
                                        make_generator(0, 'pairs'), nfe=1, data_dim=2)

    def test_preferred_fraction(self):
        samples = np.array([[0.0, 0.0], [0.5, 0.5], [3.0, 0.0], [0.0, -1.0]])
        self.assertEqual(preferred_fraction(samples, [0.0, 0.0], 1.0), 0.75)


@tag('slow')
class ReflowEndToEndTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        streams = RngStreams(11)
        params = init_params(streams.stream('init'), hidden=(64, 64), time_dim=8, cond_dim=0)
        settings = TrainSettings(steps=2000, batch_size=256, lr=2e-3, cond_dropout=0.0, log_every=0)
        cls.teacher, _, _ = train_flow(params, two_gaussian_batches(streams), SamplerSpec(), settings, streams)
        cls.pairs = generate_reflow_pairs(cls.teacher, 1000, 50, None, streams.stream('pairs'))

    def test_pair_mean_matches_data(self):
        x1 = stack_pairs(self.pairs)[1]
        # data mean (0, 0); per-axis spread sqrt(2^2 + 0.5^2) and 0.5
        bound = 3.0 * np.array([math.sqrt(4.25), 0.5]) / math.sqrt(len(self.pairs))
        self.assertTrue(np.all(np.abs(x1.mean(axis=0)) <= bound))

    def test_distilled_student_is_straighter(self):
        streams = RngStreams(12)
        settings = TrainSettings(steps=500, batch_size=256, lr=1e-3, cond_dropout=0.0, log_every=0)
        student, _, _ = distill(self.teacher, self.pairs, settings, streams)
        t = make_generator(0, 'eval').random(len(self.pairs))
        teacher_loss = distill_loss(self.teacher, self.pairs, SamplerSpec(), None, t=t)
        student_loss = distill_loss(student, self.pairs, SamplerSpec(), None, t=t)
        self.assertLess(student_loss, teacher_loss)
