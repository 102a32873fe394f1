import numpy as np
from django.test import SimpleTestCase
from scipy import integrate, stats

from nnet.network import init_params
from utils.exceptions import ConfigurationError, ContractError, DomainError, ShapeError
from utils.rng import RngStreams, make_generator
from .losses import fm_loss
from .paths import interpolate, velocity_target
from .samplers import SamplerKind, SamplerSpec, cdf, density, inverse_cdf, sample_timesteps
from .sampling import euler_sample
from .schedules import GuidanceSpec, StepSchedule, cfg_scale, shift_time
from .training import TrainSettings, drop_conditions, train_flow


class PathTests(SimpleTestCase):

    def setUp(self):
        rng = make_generator(0, 'paths')
        self.x0 = rng.standard_normal((6, 3))
        self.x1 = rng.standard_normal((6, 3))

    def test_endpoints_exact(self):
        np.testing.assert_array_equal(interpolate(self.x0, self.x1, 0.0), self.x0)
        np.testing.assert_array_equal(interpolate(self.x0, self.x1, 1.0), self.x1)

    def test_quarter_point(self):
        np.testing.assert_array_equal(interpolate([0.0], [2.0], 0.25), [0.5])

    def test_time_outside_unit_interval(self):
        with self.assertRaises(DomainError):
            interpolate(self.x0, self.x1, 1.5)
        with self.assertRaises(DomainError):
            interpolate(self.x0, self.x1, -0.1)

    def test_swapped_endpoints_sum(self):
        for t in np.linspace(0, 1, 11):
            total = interpolate(self.x0, self.x1, t) + interpolate(self.x1, self.x0, t)
            np.testing.assert_allclose(total, self.x0 + self.x1, atol=1e-12)

    def test_slope_is_velocity_target(self):
        h = 1e-6
        for t in (0.1, 0.5, 0.9):
            slope = (interpolate(self.x0, self.x1, t + h) - interpolate(self.x0, self.x1, t - h)) / (2 * h)
            np.testing.assert_allclose(slope, velocity_target(self.x0, self.x1), atol=1e-6)

    def test_velocity_target(self):
        np.testing.assert_array_equal(velocity_target([1.0, 2.0], [3.0, 5.0]), [2.0, 3.0])
        np.testing.assert_array_equal(velocity_target(self.x0, self.x0), np.zeros_like(self.x0))
        np.testing.assert_array_equal(velocity_target(self.x0, self.x1), -velocity_target(self.x1, self.x0))
        with self.assertRaises(ShapeError):
            velocity_target([1.0], [1.0, 2.0])

    def test_per_row_times(self):
        out = interpolate(np.zeros((2, 2)), np.ones((2, 2)), np.array([0.25, 0.75]))
        np.testing.assert_array_equal(out, [[0.25, 0.25], [0.75, 0.75]])


class SamplerTests(SimpleTestCase):

    def test_densities_normalise(self):
        for kind in SamplerKind.values:
            for a in (0.5, 5.0):
                spec = SamplerSpec(kind, a)
                mass, _ = integrate.quad(lambda u: float(density(spec, u)), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
                self.assertAlmostEqual(mass, 1.0, delta=1e-9)

    def test_cdf_inverse_round_trip(self):
        p = np.linspace(0, 1, 101)
        for kind in SamplerKind.values:
            spec = SamplerSpec(kind, 5.0)
            np.testing.assert_allclose(cdf(spec, inverse_cdf(spec, p)), p, atol=1e-12)

    def test_uniform_passes_ks(self):
        draws = sample_timesteps(SamplerSpec(SamplerKind.UNIFORM), 10_000, make_generator(3, 'timesteps'))
        statistic = stats.kstest(draws, 'uniform').statistic
        # 1% critical value for n = 10^4
        self.assertLess(statistic, 1.63 / np.sqrt(10_000))

    def test_centered_median(self):
        spec = SamplerSpec(SamplerKind.U_SHAPED_CENTERED, 5.0)
        self.assertAlmostEqual(float(inverse_cdf(spec, 0.5)), 0.5, places=12)

    def test_centered_is_heavy_at_both_ends(self):
        spec = SamplerSpec(SamplerKind.U_SHAPED_CENTERED, 5.0)
        draws = sample_timesteps(spec, 100_000, make_generator(4, 'timesteps'))
        tails = np.mean((draws <= 0.1) | (draws >= 0.9))
        middle = np.mean((draws >= 0.45) & (draws <= 0.55))
        self.assertGreater(tails, middle)

    def test_draws_are_in_range_and_deterministic(self):
        spec = SamplerSpec(SamplerKind.U_SHAPED_LITERAL, 5.0)
        a = sample_timesteps(spec, 1000, make_generator(9, 'timesteps'))
        b = sample_timesteps(spec, 1000, make_generator(9, 'timesteps'))
        np.testing.assert_array_equal(a, b)
        self.assertTrue(np.all((a >= 0) & (a <= 1)))

    def test_bad_specs(self):
        with self.assertRaises(ConfigurationError):
            SamplerSpec(SamplerKind.UNIFORM, 0.0)
        with self.assertRaises(ConfigurationError):
            SamplerSpec('beta', 1.0)
        with self.assertRaises(ContractError):
            sample_timesteps(SamplerSpec(), 0, make_generator(0, 'x'))


class GuidanceScheduleTests(SimpleTestCase):

    def test_cfg_endpoints(self):
        for cfg_max in (1.5, 5.0, 7.5, 10.0):
            self.assertEqual(cfg_scale(0.0, cfg_max), cfg_max)
            self.assertEqual(cfg_scale(1.0 / 9.0, cfg_max), 1.0)
            self.assertEqual(cfg_scale(1.0, cfg_max), 1.0)

    def test_cfg_midway(self):
        self.assertAlmostEqual(float(cfg_scale(1.0 / 18.0, 7.5)), 4.25, places=12)

    def test_cfg_bounds(self):
        for t in np.linspace(0, 1, 101):
            value = cfg_scale(t, 6.0)
            self.assertTrue(1.0 <= value <= 6.0)

    def test_shifted_schedule_is_valid(self):
        for shift in (1.0, 1.5, 3.0, 10.0):
            schedule = StepSchedule.uniform(25, shift=shift)
            self.assertEqual(schedule.times[0], 0.0)
            self.assertEqual(schedule.times[-1], 1.0)
            self.assertTrue(np.all(np.diff(schedule.times) > 0))
        self.assertTrue(np.all(shift_time(np.linspace(0, 1, 11), 3.0) >= np.linspace(0, 1, 11)))

    def test_invalid_schedules(self):
        with self.assertRaises(ContractError):
            StepSchedule([0.0, 0.5, 0.5, 1.0])
        with self.assertRaises(ContractError):
            StepSchedule([0.1, 1.0])
        with self.assertRaises(ContractError):
            StepSchedule([0.0])
        with self.assertRaises(ConfigurationError):
            GuidanceSpec(cfg_max=0.5)


class EulerTests(SimpleTestCase):

    def test_constant_field_telescopes(self):
        v0 = np.array([0.25, 2.0])
        x0 = np.array([1.0, -0.5])
        for steps in (1, 2, 4, 8):
            out = euler_sample(lambda x, t, y: v0, x0, StepSchedule.uniform(steps))
            np.testing.assert_array_equal(out, x0 + v0)
        odd = StepSchedule([0.0, 0.1, 0.35, 0.8, 1.0])
        np.testing.assert_allclose(euler_sample(lambda x, t, y: v0, x0, odd), x0 + v0, atol=1e-15)

    def test_exponential_growth(self):
        field = lambda x, t, y: x
        err_1000 = abs(euler_sample(field, np.array([1.0]), StepSchedule.uniform(1000))[0] - np.e)
        err_2000 = abs(euler_sample(field, np.array([1.0]), StepSchedule.uniform(2000))[0] - np.e)
        self.assertLessEqual(err_1000, 3e-3)
        self.assertLess(err_2000, 0.6 * err_1000)

    def test_guidance_vanishes_when_branches_agree(self):
        field = lambda x, t, y: np.sin(x) + t
        x0 = make_generator(2, 'noise').standard_normal((10, 2))
        schedule = StepSchedule.uniform(20)
        plain = euler_sample(field, x0, schedule, y=1)
        guided = euler_sample(field, x0, schedule, guidance=GuidanceSpec(cfg_max=7.5, null_condition=2), y=1)
        np.testing.assert_array_equal(plain, guided)

    def test_guidance_blends_branches(self):
        field = lambda x, t, y: np.full_like(x, 1.0 if y == 0 else 0.0)
        out = euler_sample(field, np.zeros(1), StepSchedule.uniform(1), guidance=GuidanceSpec(4.0, null_condition=1), y=0)
        # single step at t = 0 uses cfg_max
        np.testing.assert_allclose(out, [4.0])

    def test_rejects_non_schedule(self):
        with self.assertRaises(ContractError):
            euler_sample(lambda x, t, y: x, np.zeros(2), [0.0, 1.0])

    def test_network_field_returns_path(self):
        params = init_params(make_generator(0, 'init'), hidden=(8,), time_dim=4, cond_dim=2)
        x, path = euler_sample(params, np.zeros((3, 2)), StepSchedule.uniform(5), y=0, return_path=True)
        self.assertEqual(len(path), 6)
        np.testing.assert_array_equal(path[-1], x)


class LossTests(SimpleTestCase):

    def setUp(self):
        rng = make_generator(5, 'data')
        self.x0 = rng.standard_normal((32, 2))
        self.x1 = rng.standard_normal((32, 2)) + 3.0
        self.batch = (self.x0, self.x1, None)

    def test_oracle_model_has_zero_loss(self):
        oracle = lambda x, t, y: self.x1 - self.x0
        self.assertEqual(fm_loss(oracle, self.batch, SamplerSpec(), make_generator(0, 't')), 0.0)

    def test_constant_offset(self):
        c = np.array([0.5, -2.0])
        model = lambda x, t, y: self.x1 - self.x0 + c
        loss = fm_loss(model, self.batch, SamplerSpec(), make_generator(0, 't'))
        self.assertAlmostEqual(loss, float(c @ c), places=12)

    def test_hand_evaluated_two_sample_batch(self):
        x0 = np.array([[0.0, 0.0], [1.0, 0.0]])
        x1 = np.array([[2.0, 0.0], [1.0, 2.0]])
        model = lambda x, t, y: 2.0 * x
        # row 0: x_t = [1, 0], u = [2, 0], V = [2, 0] -> 0
        # row 1: x_t = [1, 0.5], u = [2, 1], V = [0, 2] -> 4 + 1
        loss = fm_loss(model, (x0, x1, None), SamplerSpec(), None, t=np.array([0.5, 0.25]))
        self.assertAlmostEqual(loss, 2.5, places=14)

    def test_non_negative_and_deterministic(self):
        params = init_params(make_generator(1, 'init'), hidden=(8,), time_dim=4, cond_dim=0)
        a = fm_loss(params, self.batch, SamplerSpec(), make_generator(3, 't'))
        b = fm_loss(params, self.batch, SamplerSpec(), make_generator(3, 't'))
        self.assertEqual(a, b)
        self.assertGreaterEqual(a, 0.0)

    def test_empty_batch(self):
        with self.assertRaises(ContractError):
            fm_loss(lambda x, t, y: x, (np.zeros((0, 2)), np.zeros((0, 2)), None), SamplerSpec(), make_generator(0, 't'))


class TrainingTests(SimpleTestCase):

    def test_condition_dropout_uses_null_id(self):
        params = init_params(make_generator(0, 'init'), hidden=(4,), time_dim=2, cond_dim=2, n_conditions=2)
        y = drop_conditions(params, np.zeros(10_000, dtype=int), 0.1, make_generator(0, 'dropout'))
        share = np.mean(y == params.null_condition)
        self.assertGreater(share, 0.08)
        self.assertLess(share, 0.12)

    def test_short_run_reduces_loss(self):
        streams = RngStreams(0)
        params = init_params(streams.stream('init'), hidden=(32, 32), time_dim=4, cond_dim=0)
        data, noise = streams.stream('data'), streams.stream('noise')

        def draw(n):
            return noise.standard_normal((n, 2)), data.standard_normal((n, 2)) * 0.1 + 2.0, None

        settings = TrainSettings(steps=300, batch_size=64, lr=3e-3, cond_dropout=0.0, log_every=0)
        _, state, history = train_flow(params, draw, SamplerSpec(), settings, streams)
        self.assertEqual(state.step, 300)
        self.assertLess(np.mean(history[-50:]), np.mean(history[:50]))
