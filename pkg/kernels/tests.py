import itertools

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, ShapeError
from utils.rng import make_generator
from .attention import RopeSpec, qk_norm, rope1d, rope3d
from .conv import ConvKernel3D, causal_conv3d
from .selftest import CHECKS, run_selftests
from .shuffle import (
    dual_path_decode, dual_path_encode, grouped_channel_average, grouped_channel_repeat, latent_shape,
    pixel_shuffle3d, pixel_unshuffle3d,
)


class CausalConvTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(0, 'kernels')

    def test_identity_kernel(self):
        x = self.rng.standard_normal((2, 3, 4, 5, 5))
        np.testing.assert_array_equal(causal_conv3d(x, ConvKernel3D.identity(3)), x)

    def test_impulse_response_starts_at_impulse(self):
        x = np.zeros((1, 1, 8, 1, 1))
        x[0, 0, 5] = 1.0
        out = causal_conv3d(x, ConvKernel3D(np.ones((1, 1, 3, 1, 1))))
        np.testing.assert_array_equal(out[0, 0, :5].ravel(), np.zeros(5))
        self.assertTrue(np.all(out[0, 0, 5:].ravel() != 0.0))

    def test_two_tap_average(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 3, 1, 1)
        out = causal_conv3d(x, ConvKernel3D(np.full((1, 1, 2, 1, 1), 0.5)))
        np.testing.assert_array_equal(out.ravel(), [0.5, 1.5, 2.5])

    def test_matches_loop_oracle(self):
        kernel = ConvKernel3D.random(self.rng, 2, 3, size=(2, 3, 3))
        x = self.rng.standard_normal((1, 3, 4, 4, 5))
        padded = np.pad(x, ((0, 0), (0, 0), (1, 0), (1, 1), (1, 1)))
        expected = np.zeros((1, 2, 4, 4, 5))
        for o, t, h, w in itertools.product(range(2), range(4), range(4), range(5)):
            window = padded[0, :, t:t + 2, h:h + 3, w:w + 3]
            expected[0, o, t, h, w] = np.sum(window * kernel.weight[o]) + kernel.bias[o]
        np.testing.assert_allclose(causal_conv3d(x, kernel), expected, atol=1e-12)

    def test_earlier_frames_unaffected_by_perturbation(self):
        for frames, kt, st in itertools.product(range(1, 9), (1, 2, 3), (1, 2)):
            kernel = ConvKernel3D.random(self.rng, 2, 2, size=(kt, 1, 3), strides=(st, 1))
            x = self.rng.standard_normal((1, 2, frames, 2, 3))
            base = causal_conv3d(x, kernel)
            self.assertEqual(base.shape[2], -(-frames // st))
            for t_star, h, w in itertools.product(range(frames), range(2), range(3)):
                bumped = x.copy()
                bumped[0, 1, t_star, h, w] += 0.5
                out = causal_conv3d(bumped, kernel)
                np.testing.assert_array_equal(out[:, :, :t_star // st], base[:, :, :t_star // st])

    def test_strided_shape(self):
        kernel = ConvKernel3D.random(self.rng, 4, 2, strides=(2, 2))
        self.assertEqual(causal_conv3d(np.ones((1, 2, 5, 6, 7)), kernel).shape, (1, 4, 3, 3, 4))

    def test_invalid_inputs(self):
        with self.assertRaises(ShapeError):
            causal_conv3d(np.ones((1, 2, 3, 3, 3)), ConvKernel3D.identity(3))
        with self.assertRaises(ShapeError):
            ConvKernel3D(np.ones((1, 1, 1, 2, 3)))
        with self.assertRaises(ShapeError):
            causal_conv3d(np.ones((2, 3, 3, 3)), ConvKernel3D.identity(2))


class ShuffleTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(1, 'kernels')

    def test_unit_strides_are_identity(self):
        x = self.rng.standard_normal((1, 2, 3, 4, 5))
        np.testing.assert_array_equal(pixel_unshuffle3d(x, 1, 1), x)
        np.testing.assert_array_equal(pixel_shuffle3d(x, 1, 1), x)

    def test_channel_order(self):
        x = np.arange(8, dtype=float).reshape(1, 1, 2, 2, 2)
        out = pixel_unshuffle3d(x, 2, 2)
        self.assertEqual(out.shape, (1, 8, 1, 1, 1))
        # channel i_t * 4 + i_h * 2 + i_w holds x[i_t, i_h, i_w]
        np.testing.assert_array_equal(out.ravel(), np.arange(8))

    def test_multi_channel_order(self):
        x = self.rng.standard_normal((1, 3, 2, 4, 4))
        out = pixel_unshuffle3d(x, 2, 2)
        for c, it, ih, iw in itertools.product(range(3), range(2), range(2), range(2)):
            channel = c * 8 + it * 4 + ih * 2 + iw
            np.testing.assert_array_equal(out[0, channel], x[0, c, it::2, ih::2, iw::2])

    def test_round_trips(self):
        for st, ss in itertools.product((1, 2), repeat=2):
            x = self.rng.standard_normal((2, 3, 2 * st, 4 * ss, 2 * ss))
            np.testing.assert_array_equal(pixel_shuffle3d(pixel_unshuffle3d(x, st, ss), st, ss), x)
            y = self.rng.standard_normal((1, 8, 2, 3, 3))
            np.testing.assert_array_equal(pixel_unshuffle3d(pixel_shuffle3d(y, st, ss), st, ss), y)

    def test_divisibility(self):
        with self.assertRaises(ShapeError):
            pixel_unshuffle3d(np.ones((1, 1, 3, 2, 2)), 2, 2)
        with self.assertRaises(ShapeError):
            pixel_shuffle3d(np.ones((1, 6, 1, 1, 1)), 2, 2)


class GroupedChannelTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(2, 'kernels')

    def test_constant_channels(self):
        u = np.full((1, 8, 2, 2, 2), 1.7)
        np.testing.assert_array_equal(grouped_channel_average(u, 2), np.full((1, 2, 2, 2, 2), 1.7))

    def test_two_groups(self):
        u = np.array([1.0, 3.0]).reshape(1, 2, 1, 1, 1)
        self.assertEqual(grouped_channel_average(u, 1).item(), 2.0)

    def test_matches_loop(self):
        u = self.rng.standard_normal((2, 12, 2, 3, 3))
        expected = np.zeros((2, 3, 2, 3, 3))
        for k in range(4):
            expected += u[:, 3 * k:3 * (k + 1)]
        np.testing.assert_allclose(grouped_channel_average(u, 3), expected / 4, atol=1e-12)

    def test_repeat_order(self):
        z = np.array([5.0, 7.0]).reshape(1, 2, 1, 1, 1)
        out = grouped_channel_repeat(z, 3)
        self.assertEqual(out.shape, (1, 6, 1, 1, 1))
        np.testing.assert_array_equal(out.ravel(), [5.0, 7.0, 5.0, 7.0, 5.0, 7.0])
        np.testing.assert_array_equal(grouped_channel_repeat(z, 1), z)

    def test_average_of_repeat_is_identity(self):
        z = self.rng.standard_normal((1, 4, 2, 3, 3))
        np.testing.assert_array_equal(grouped_channel_average(grouped_channel_repeat(z, 8), 4), z)

    def test_average_of_repeat_is_exact_for_any_group_count(self):
        z = self.rng.standard_normal((1, 4, 2, 3, 3))
        for groups in (3, 5, 6, 7, 12):
            with self.subTest(groups=groups):
                np.testing.assert_array_equal(grouped_channel_average(grouped_channel_repeat(z, groups), 4), z)
        tenth = np.full((1, 1, 1, 1, 1), 0.1)
        self.assertEqual(grouped_channel_average(grouped_channel_repeat(tenth, 3), 1).item(), 0.1)

    def test_repeat_of_average_is_projection(self):
        u = self.rng.standard_normal((1, 8, 1, 2, 2))
        once = grouped_channel_repeat(grouped_channel_average(u, 2), 4)
        twice = grouped_channel_repeat(grouped_channel_average(once, 2), 4)
        np.testing.assert_array_equal(once, twice)

    def test_bad_groups(self):
        with self.assertRaises(ShapeError):
            grouped_channel_average(np.ones((1, 6, 1, 1, 1)), 4)
        with self.assertRaises(ShapeError):
            grouped_channel_repeat(np.ones((1, 2, 1, 1, 1)), 0)


class DualPathTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(3, 'kernels')
        self.x = self.rng.standard_normal((1, 2, 4, 4, 4))

    def test_zero_conv_leaves_shortcut(self):
        kernel = ConvKernel3D(np.zeros((1, 2, 3, 3, 3)))
        shortcut = grouped_channel_average(pixel_unshuffle3d(self.x, 2, 2), 8)
        np.testing.assert_array_equal(dual_path_encode(self.x, kernel, 8), shortcut)

    def test_constant_input(self):
        kernel = ConvKernel3D(np.zeros((1, 2, 3, 3, 3)))
        out = dual_path_encode(np.full((1, 2, 4, 4, 4), -0.75), kernel, 8)
        self.assertEqual(out.shape, (1, 8, 2, 2, 2))
        np.testing.assert_array_equal(out, np.full(out.shape, -0.75))

    def test_composition_oracle(self):
        kernel = ConvKernel3D.random(self.rng, 1, 2)
        learned = pixel_unshuffle3d(causal_conv3d(self.x, kernel), 2, 2)
        unshuffled = pixel_unshuffle3d(self.x, 2, 2)
        shortcut = (unshuffled[:, :8] + unshuffled[:, 8:]) / 2
        np.testing.assert_allclose(dual_path_encode(self.x, kernel, 8), learned + shortcut, atol=1e-12)

    def test_linear_without_bias(self):
        kernel = ConvKernel3D(self.rng.standard_normal((1, 2, 3, 3, 3)))
        y = self.rng.standard_normal(self.x.shape)
        lhs = dual_path_encode(0.3 * self.x - 2.0 * y, kernel, 8)
        rhs = 0.3 * dual_path_encode(self.x, kernel, 8) - 2.0 * dual_path_encode(y, kernel, 8)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_path_mismatch(self):
        with self.assertRaises(ShapeError):
            dual_path_encode(self.x, ConvKernel3D.random(self.rng, 2, 2), 8)
        with self.assertRaises(ShapeError):
            dual_path_encode(self.x, ConvKernel3D.random(self.rng, 1, 2, strides=(2, 1)), 8)

    def test_decode_mirrors_encode_shapes(self):
        z = self.rng.standard_normal((1, 8, 2, 2, 2))
        kernel = ConvKernel3D(np.zeros((16, 8, 3, 3, 3)))
        out = dual_path_decode(z, kernel, 2)
        self.assertEqual(out.shape, (1, 2, 4, 4, 4))
        np.testing.assert_array_equal(out, pixel_shuffle3d(grouped_channel_repeat(z, 2), 2, 2))


class LatentShapeTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(latent_shape(1, 256, 256), (1, 16, 16))
        self.assertEqual(latent_shape(204, 256, 256), (26, 16, 16))
        self.assertEqual(latent_shape(68, 192, 320), (9, 12, 20))

    def test_non_positive(self):
        with self.assertRaises(ShapeError):
            latent_shape(0, 16, 16)


class RopeTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(4, 'kernels')
        self.spec = RopeSpec(12, (4, 4, 4))

    def test_origin_is_identity(self):
        x = self.rng.standard_normal((5, 12))
        np.testing.assert_array_equal(rope3d(x, np.zeros((5, 3), dtype=int), self.spec), x)

    def test_norm_preserved(self):
        for _ in range(50):
            x = self.rng.standard_normal((3, 12))
            p = self.rng.integers(0, 100, (3, 3))
            np.testing.assert_allclose(np.linalg.norm(rope3d(x, p, self.spec), axis=1),
                                       np.linalg.norm(x, axis=1), atol=1e-9)

    def test_dot_products_depend_on_offsets(self):
        for _ in range(100):
            q, k = self.rng.standard_normal((2, 1, 12))
            f2, h, w = self.rng.integers(0, 50, 3)
            f1 = f2 + self.rng.integers(0, 50)
            lhs = rope3d(q, [[f1, h, w]], self.spec) @ rope3d(k, [[f2, h, w]], self.spec).T
            rhs = rope3d(q, [[f1 - f2, 0, 0]], self.spec) @ k.T
            self.assertAlmostEqual(lhs.item(), rhs.item(), delta=1e-9)

    def test_rope1d_pair_rotation(self):
        out = rope1d(np.array([[1.0, 0.0]]), [1])
        np.testing.assert_allclose(out, [[np.cos(1.0), np.sin(1.0)]], atol=1e-15)

    def test_spec_validation(self):
        with self.assertRaises(ConfigurationError):
            RopeSpec(12, (4, 4, 2))
        with self.assertRaises(ConfigurationError):
            RopeSpec(12, (3, 5, 4))
        self.assertEqual(sum(RopeSpec.for_head_dim(64).split), 64)
        with self.assertRaises(ShapeError):
            rope3d(np.ones((2, 10)), np.zeros((2, 3)), self.spec)
        with self.assertRaises(ShapeError):
            rope1d(np.ones((2, 4)), [0, -1])


class QkNormTests(SimpleTestCase):

    def setUp(self):
        self.rng = make_generator(5, 'kernels')

    def test_unit_rms_unchanged(self):
        q = self.rng.standard_normal((4, 8))
        q /= np.sqrt(np.mean(q * q, axis=-1, keepdims=True))
        qn, _ = qk_norm(q, q)
        np.testing.assert_allclose(qn, q, atol=1e-12)

    def test_scale_invariance(self):
        q, k = self.rng.standard_normal((2, 3, 2, 8))
        np.testing.assert_allclose(qk_norm(1000.0 * q, k)[0], qk_norm(q, k)[0], atol=1e-9)

    def test_per_head_gains(self):
        q = self.rng.standard_normal((5, 2, 8))
        qn, kn = qk_norm(q, q, gain_q=[2.0, 3.0], gain_k=[1.0, 1.0])
        np.testing.assert_allclose(qn[:, 0], 2.0 * kn[:, 0], atol=1e-12)
        np.testing.assert_allclose(qn[:, 1], 3.0 * kn[:, 1], atol=1e-12)

    def test_dot_product_bound(self):
        q, k = self.rng.standard_normal((2, 10_000, 8))
        qn, kn = qk_norm(q, k, 0.8, 1.25)
        self.assertTrue(np.all(np.abs(np.sum(qn * kn, axis=-1)) <= 8 * 0.8 * 1.25 + 1e-12))

    def test_zero_vector(self):
        qn, kn = qk_norm(np.zeros((2, 8)), np.ones((2, 8)))
        np.testing.assert_array_equal(qn, np.zeros((2, 8)))
        self.assertFalse(np.any(np.isnan(kn)))


class SelfTestRunnerTests(SimpleTestCase):

    def test_all_checks_pass(self):
        results = run_selftests(seed=0)
        self.assertEqual([r.name for r in results], list(CHECKS))
        for result in results:
            self.assertTrue(result.passed, f"{result.name}: {result.detail}")

    def test_failures_are_reported(self):
        def broken(rng):
            raise ValueError("bad kernel")

        results = run_selftests(checks={'ok': lambda rng: (True, 'fine'), 'broken': broken})
        self.assertEqual([r.passed for r in results], [True, False])
        self.assertIn('ValueError', results[1].detail)
