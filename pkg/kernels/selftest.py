"""
Property checks for the kernels, runnable outside the test suite.

Each check returns (passed, detail). `run_selftests` runs them on the shared
thread budget and returns results in a fixed order.
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from utils.rng import make_generator
from utils.tasks import run_parallel
from .attention import RopeSpec, qk_norm, rope3d
from .conv import ConvKernel3D, causal_conv3d
from .shuffle import (
    dual_path_encode, grouped_channel_average, grouped_channel_repeat, latent_shape, pixel_shuffle3d,
    pixel_unshuffle3d,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelfTestResult:
    name: str
    passed: bool
    detail: str


def check_causality(rng):
    for frames, kt, st in itertools.product((4, 8), (1, 2, 3), (1, 2)):
        kernel = ConvKernel3D.random(rng, 2, 2, size=(kt, 3, 3), strides=(st, 1))
        x = rng.standard_normal((1, 2, frames, 3, 3))
        base = causal_conv3d(x, kernel)
        for t_star in range(frames):
            bumped = x.copy()
            bumped[:, :, t_star] += 1.0
            diff = causal_conv3d(bumped, kernel) - base
            first_allowed = -(-t_star // st)
            if np.any(diff[:, :, :first_allowed] != 0.0):
                return False, f"T={frames} k_t={kt} s_t={st}: frame {t_star} leaks backwards"
    return True, "earlier frames bit-identical for every perturbed frame"


def check_shuffle_round_trip(rng):
    for st, sh in itertools.product((1, 2), repeat=2):
        x = rng.standard_normal((2, 3, 2 * st, 2 * sh, 2 * sh))
        if not np.array_equal(pixel_shuffle3d(pixel_unshuffle3d(x, st, sh), st, sh), x):
            return False, f"round trip failed for strides ({st}, {sh})"
    return True, "shuffle(unshuffle(x)) == x for strides in {1, 2}"


def check_average_repeat(rng):
    z = rng.standard_normal((1, 4, 2, 3, 3))
    for groups in (1, 2, 3, 4, 5, 6, 7, 8, 12):
        if not np.array_equal(grouped_channel_average(grouped_channel_repeat(z, groups), 4), z):
            return False, f"average(repeat(z, {groups})) != z"
    return True, "average(repeat(z, G)) == z for G in 1..8 and 12"


def check_dual_path_linearity(rng):
    kernel = ConvKernel3D(rng.standard_normal((1, 2, 3, 3, 3)))
    x, y = rng.standard_normal((2, 1, 2, 4, 4, 4))
    alpha, beta = 0.7, -1.3
    lhs = dual_path_encode(alpha * x + beta * y, kernel, 8)
    rhs = alpha * dual_path_encode(x, kernel, 8) + beta * dual_path_encode(y, kernel, 8)
    error = float(np.max(np.abs(lhs - rhs)))
    return error <= 1e-9, f"max linearity error {error:.2e}"


def check_rope(rng):
    spec = RopeSpec(12, (4, 4, 4))
    worst = 0.0
    for _ in range(100):
        q, k = rng.standard_normal((2, 1, 12))
        p1, p2 = rng.integers(0, 32, (2, 1, 3))
        shift = rng.integers(0, 32, (1, 3))
        dot = (rope3d(q, p1, spec) @ rope3d(k, p2, spec).T).item()
        shifted = (rope3d(q, p1 + shift, spec) @ rope3d(k, p2 + shift, spec).T).item()
        norm_gap = abs(np.linalg.norm(rope3d(q, p1, spec)) - np.linalg.norm(q))
        worst = max(worst, abs(dot - shifted), norm_gap)
    return worst <= 1e-9, f"max isometry / shift error {worst:.2e}"


def check_qk_norm(rng):
    q, k = rng.standard_normal((2, 10_000, 8)) * rng.uniform(0.01, 100.0, (2, 10_000, 1))
    qn, kn = qk_norm(q, k, 1.5, -0.5)
    bound = 8 * 1.5 * 0.5
    peak = float(np.max(np.abs(np.sum(qn * kn, axis=-1))))
    return peak <= bound + 1e-9, f"max |q'.k'| {peak:.4f} (bound {bound})"


def check_latent_shape(rng):
    cases = {(1, 256, 256): (1, 16, 16), (204, 256, 256): (26, 16, 16), (68, 192, 320): (9, 12, 20)}
    for dims, expected in cases.items():
        if latent_shape(*dims) != expected:
            return False, f"latent_shape{dims} = {latent_shape(*dims)}, expected {expected}"
    return True, "ceil(T/8), ceil(H/16), ceil(W/16)"


CHECKS = {
    'causal_conv3d causality': check_causality,
    'pixel shuffle round trip': check_shuffle_round_trip,
    'grouped average of repeat': check_average_repeat,
    'dual path linearity': check_dual_path_linearity,
    'rope3d isometry and shift': check_rope,
    'qk_norm dot-product bound': check_qk_norm,
    'latent shape': check_latent_shape,
}


def run_selftests(seed=0, checks=None):
    """
    Run every check with its own random stream.

    Returns:
        list of SelfTestResult in CHECKS order
    """
    checks = CHECKS if checks is None else checks

    def run_one(item):
        name, check = item
        try:
            passed, detail = check(make_generator(seed, f"selftest.{name}"))
        except Exception as e:
            logger.error(f"Self-test '{name}' raised: {str(e)}", exc_info=True)
            passed, detail = False, f"raised {type(e).__name__}: {e}"
        return SelfTestResult(name, bool(passed), detail)

    results = run_parallel(run_one, checks.items())
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} kernel self-test(s) failed: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} kernel self-tests passed")
    return results
