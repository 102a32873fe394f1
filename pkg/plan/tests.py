import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, ContractError
from utils.rng import make_generator
from .balance import coarse_batch_sizes, greedy_pad, hybrid_balance, normalize_alpha
from .buckets import AspectBucket, Bucket, bucketize
from .costs import (
    enumerate_strategies, estimate_mfu, flops_breakdown, flops_per_sample, memory_footprint, minimal_checkpointing,
    rank_strategies, token_count,
)
from .scenario import load_scenario, parse_scenario
from .specs import AccountingMode, ArchSpec, CostModel, ParallelismConfig, ResolutionSpec

PUBLISHED_TFLOPS = {
    (204, 256, 256): 1717.20,
    (204, 192, 320): 1592.61,
    (136, 256, 256): 1079.85,
    (136, 192, 320): 1004.89,
    (68, 256, 256): 509.31,
    (68, 192, 320): 475.87,
}

# Single-frame image row from the same table; the two-term model underestimates it.
IMAGE_TFLOPS = {(1, 256, 256): 44.99}


def compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


class TokenCountTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(token_count(ResolutionSpec(1, 256, 256)), 256)
        self.assertEqual(token_count(ResolutionSpec(204, 256, 256)), 6656)
        self.assertEqual(token_count(ResolutionSpec(136, 192, 320)), 4080)

    def test_monotone(self):
        for t, h, w in [(1, 16, 16), (9, 17, 33), (68, 192, 320)]:
            base = token_count(ResolutionSpec(t, h, w))
            self.assertGreaterEqual(token_count(ResolutionSpec(t + 1, h, w)), base)
            self.assertGreaterEqual(token_count(ResolutionSpec(t, h + 1, w)), base)
            self.assertGreaterEqual(token_count(ResolutionSpec(t, h, w + 1)), base)

    def test_invalid_resolution(self):
        with self.assertRaises(ConfigurationError):
            ResolutionSpec(0, 256, 256)


class FlopsTests(SimpleTestCase):

    def setUp(self):
        self.arch = ArchSpec()
        self.model = CostModel()

    def test_single_token_is_dense_term(self):
        self.assertAlmostEqual(flops_per_sample(self.arch, 1, self.model), 8 * 30e9 / 1e12, delta=1e-5)
        with self.assertRaises(ContractError):
            flops_per_sample(self.arch, 0, self.model)

    def test_doubling_tokens_quadruples_attention(self):
        for tokens in (256, 2304, 6656):
            _, single = flops_breakdown(self.arch, tokens)
            _, double = flops_breakdown(self.arch, 2 * tokens)
            self.assertEqual(double, 4 * single)

    def test_hand_evaluated_value(self):
        # 8 * 30e9 * 6656 + 16 * 48 * 6144 * 6656**2
        expected = (8 * 30e9 * 6656 + 16 * 48 * 6144 * 6656 ** 2) / 1e12
        self.assertAlmostEqual(flops_per_sample(self.arch, 6656, self.model), expected, places=6)

    def test_accounting_modes_scale_together(self):
        forward = flops_per_sample(self.arch, 4352, CostModel(accounting=AccountingMode.FORWARD))
        full = flops_per_sample(self.arch, 4352, CostModel(accounting=AccountingMode.FWD_BWD_RECOMPUTE))
        self.assertAlmostEqual(full / forward, 4.0, places=12)

    def test_published_ratios(self):
        anchor = (204, 256, 256)
        ours = {dims: flops_per_sample(self.arch, token_count(ResolutionSpec(*dims)), self.model)
                for dims in PUBLISHED_TFLOPS}
        for dims, published in PUBLISHED_TFLOPS.items():
            expected = PUBLISHED_TFLOPS[anchor] / published
            actual = ours[anchor] / ours[dims]
            self.assertLess(abs(actual / expected - 1.0), 0.15, dims)

    def test_image_row_deviation_is_pinned(self):
        anchor = (204, 256, 256)
        (dims, published), = IMAGE_TFLOPS.items()
        ours = (flops_per_sample(self.arch, token_count(ResolutionSpec(*anchor)), self.model)
                / flops_per_sample(self.arch, token_count(ResolutionSpec(*dims)), self.model))
        expected = PUBLISHED_TFLOPS[anchor] / published
        self.assertLess(ours, expected)
        self.assertAlmostEqual(ours / expected - 1.0, -0.2335, delta=0.005)

    def test_growth(self):
        values = [flops_per_sample(self.arch, n, self.model) for n in (1, 10, 100, 1000, 10_000)]
        self.assertTrue(all(a < b for a, b in zip(values, values[1:])))
        small = flops_breakdown(self.arch, 10 ** 3)
        large = flops_breakdown(self.arch, 10 ** 6)
        self.assertGreater(large[1] / sum(large), small[1] / sum(small))
        self.assertGreater(large[1] / sum(large), 0.9)


class MemoryTests(SimpleTestCase):

    def setUp(self):
        self.model = CostModel()

    def test_hand_evaluated_desk_config(self):
        arch = ArchSpec(layers=4, hidden=256, heads=4, head_dim=64, params=1e6)
        memory = memory_footprint(arch, ParallelismConfig(), 4096, self.model)
        self.assertAlmostEqual(memory.params, 1e6 * 2 / 1e9, places=15)
        self.assertAlmostEqual(memory.grads, 1e6 * 4 / 1e9, places=15)
        self.assertAlmostEqual(memory.optimizer, 1e6 * 12 / 1e9, places=15)
        self.assertAlmostEqual(memory.activations, 4 * (17 + 1) * 4096 * 256 * 2 / 1e9, places=15)
        self.assertAlmostEqual(memory.residual, 4 * 4096 * 256 * 2 / 1e9, places=15)

    def test_tensor_parallel_divides_params(self):
        arch = ArchSpec()
        one = memory_footprint(arch, ParallelismConfig(tp=1, world_size=8), 6656, self.model)
        eight = memory_footprint(arch, ParallelismConfig(tp=8, world_size=8), 6656, self.model)
        self.assertEqual(eight.params, one.params / 8)
        self.assertEqual(eight.grads, one.grads / 8)

    def test_optimizer_sharded_over_data_parallel(self):
        arch = ArchSpec()
        dp1 = memory_footprint(arch, ParallelismConfig(tp=8, world_size=8), 6656, self.model)
        dp4 = memory_footprint(arch, ParallelismConfig(tp=8, world_size=32), 6656, self.model)
        self.assertAlmostEqual(dp4.optimizer, dp1.optimizer / 4, places=12)
        self.assertEqual(dp4.params, dp1.params)

    def test_checkpointing(self):
        arch = ArchSpec()
        full = memory_footprint(arch, ParallelismConfig(tp=8, checkpointing=1.0, world_size=8), 6656, self.model)
        self.assertEqual(full.activations, full.residual)
        none = memory_footprint(arch, ParallelismConfig(tp=8, checkpointing=0.0, world_size=8), 6656, self.model)
        half = memory_footprint(arch, ParallelismConfig(tp=8, checkpointing=0.5, world_size=8), 6656, self.model)
        self.assertAlmostEqual(half.activations - half.residual, (none.activations - none.residual) / 2, places=9)

    def test_impossible_configs(self):
        with self.assertRaises(ConfigurationError):
            ParallelismConfig(tp=8, cp=2, world_size=8)
        with self.assertRaises(ConfigurationError):
            ParallelismConfig(tp=3, world_size=8)
        with self.assertRaises(ConfigurationError):
            ParallelismConfig(checkpointing=1.5)
        with self.assertRaises(ConfigurationError):
            ParallelismConfig(pp=1, vpp=2)

    def test_minimal_checkpointing_fits(self):
        arch = ArchSpec()
        tokens = 26 * 34 * 62
        par = ParallelismConfig(tp=8, world_size=32)
        fraction = minimal_checkpointing(arch, par, tokens, self.model)
        self.assertGreater(fraction, 0.0)
        self.assertAlmostEqual(fraction * 48, round(fraction * 48), places=9)

        def total(f):
            return memory_footprint(arch, ParallelismConfig(8, 1, 1, 1, f, 32), tokens, self.model).total

        self.assertLessEqual(total(fraction), 80.0)
        self.assertGreater(total(fraction - 1 / 48), 80.0)

    def test_infeasible_strategy(self):
        tiny = CostModel(device_memory_gb=1.0)
        self.assertIsNone(minimal_checkpointing(ArchSpec(), ParallelismConfig(tp=8, world_size=8), 6656, tiny))


class MfuTests(SimpleTestCase):

    def setUp(self):
        self.arch = ArchSpec()
        self.mix = [ResolutionSpec(204, 256, 256), ResolutionSpec(68, 192, 320)]

    def test_no_overheads_is_full_utilisation(self):
        model = CostModel(tp_seconds_per_gb=0.0, cp_seconds_per_gb=0.0)
        estimate = estimate_mfu(self.arch, ParallelismConfig(tp=8, cp=2, world_size=16), self.mix, model)
        self.assertAlmostEqual(estimate.mfu, 100.0, places=12)
        self.assertEqual(estimate.accounting, AccountingMode.FWD_BWD_RECOMPUTE)

    def test_checkpointing_lowers_mfu(self):
        model = CostModel()
        values = [
            estimate_mfu(self.arch, ParallelismConfig(8, 1, 2, 4, f, 32), self.mix, model).mfu
            for f in (0.0, 0.25, 0.5, 1.0)
        ]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_pipeline_bubble_shrinks_with_virtual_stages(self):
        model = CostModel(tp_seconds_per_gb=0.0, cp_seconds_per_gb=0.0)
        plain = estimate_mfu(self.arch, ParallelismConfig(8, 1, 4, 1, 0.0, 32), self.mix, model).mfu
        virtual = estimate_mfu(self.arch, ParallelismConfig(8, 1, 4, 12, 0.0, 32), self.mix, model).mfu
        self.assertLess(plain, virtual)

    def test_pure_context_parallel_ranks_below_mixed(self):
        scenario = load_scenario()
        model = CostModel(tp_seconds_per_gb=0.02, cp_seconds_per_gb=0.02)
        candidates = [ParallelismConfig(tp, cp, 1, 1, 0.5, 8) for tp, cp in ((1, 8), (2, 4), (4, 2))]
        ranked = rank_strategies(candidates, scenario.arch, scenario.videos, model)
        self.assertEqual((ranked[-1].config.tp, ranked[-1].config.cp), (1, 8))

    def test_ties_break_on_degrees(self):
        model = CostModel(tp_seconds_per_gb=0.0, cp_seconds_per_gb=0.0)
        candidates = [ParallelismConfig(tp, cp, 1, 1, 0.0, 8) for tp, cp in ((4, 2), (1, 8), (2, 1), (2, 4))]
        ranked = rank_strategies(candidates, self.arch, self.mix, model)
        self.assertEqual([r.config.sort_key for r in ranked],
                         [(1, 8, 1, 1), (2, 1, 1, 1), (2, 4, 1, 1), (4, 2, 1, 1)])

    def test_empty_candidates(self):
        with self.assertRaises(ContractError):
            rank_strategies([], self.arch, self.mix, CostModel())

    def test_enumeration_on_desk_scenario(self):
        scenario = load_scenario()
        candidates = enumerate_strategies(scenario.arch, scenario.world_size, scenario.videos, scenario.cost)
        self.assertTrue(candidates)
        tokens = max(token_count(r) for r in scenario.videos)
        for par in candidates:
            self.assertLessEqual(par.tp, 8)
            self.assertEqual(scenario.world_size % par.model_parallel, 0)
            memory = memory_footprint(scenario.arch, par, tokens, scenario.cost)
            self.assertLessEqual(memory.total, scenario.cost.device_memory_gb + 1e-9)
        ranked = rank_strategies(candidates, scenario.arch, scenario.videos, scenario.cost)
        mfus = [r.mfu for r in ranked]
        self.assertEqual(mfus, sorted(mfus, reverse=True))


class CoarseBatchTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(coarse_batch_sizes({'a': 5.0}, 5.0), {'a': 1})
        self.assertEqual(coarse_batch_sizes({'v68': 509.31}, 1717.20), {'v68': 3})
        self.assertEqual(coarse_batch_sizes({'a': 10.0, 'b': 3.0}, 100.0, 1.0), {'a': 10, 'b': 33})
        self.assertEqual(coarse_batch_sizes({'a': 10.0, 'b': 3.0}, 100.0, 2.0), {'a': 5, 'b': 16})

    def test_zero_batch(self):
        with self.assertRaises(ConfigurationError):
            coarse_batch_sizes({'a': 2.0}, 1.0)
        with self.assertRaises(ConfigurationError):
            coarse_batch_sizes({'a': 2.0}, 1.0, alpha=0.0)

    def test_normalised_alpha(self):
        choice = normalize_alpha({'a': 1.0, 'b': 2.0}, 2.0, 3)
        self.assertEqual(choice.batch_sizes, {'a': 2, 'b': 1})
        self.assertTrue(choice.exact)
        self.assertAlmostEqual(choice.alpha, 1.0)

    def test_normalised_alpha_without_exact_match(self):
        choice = normalize_alpha({'a': 1.0, 'b': 1.0}, 1.0, 3)
        self.assertEqual(choice.total, 2)
        self.assertFalse(choice.exact)
        with self.assertRaises(ConfigurationError):
            normalize_alpha({'a': 1.0, 'b': 1.0}, 1.0, 1)


class GreedyPadTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(greedy_pad([10, 12, 15], 0, 2).loads, [10, 12, 15])
        result = greedy_pad([10, 12, 15], 3, 2)
        self.assertEqual(result.counts, [2, 1, 0])
        self.assertEqual(result.loads, [14, 14, 15])

    def test_matches_brute_force(self):
        rng = make_generator(0, 'greedy')
        for batches in range(1, 7):
            for images in range(0, 9):
                for _ in range(3):
                    loads = [int(v) for v in rng.integers(0, 20, batches)]
                    cost = int(rng.integers(1, 6))
                    best = min(
                        max(load + cost * k for load, k in zip(loads, split))
                        for split in compositions(images, batches)
                    )
                    self.assertEqual(max(greedy_pad(loads, images, cost).loads), best)

    def test_spread_properties(self):
        rng = make_generator(1, 'greedy')
        for _ in range(200):
            loads = list(rng.uniform(0, 50, int(rng.integers(1, 9))))
            cost = float(rng.uniform(0.1, 10))
            images = int(rng.integers(0, 30))
            result = greedy_pad(loads, images, cost)
            spread = max(result.loads) - min(result.loads)
            self.assertLessEqual(spread, max(max(loads) - min(loads), cost) + 1e-9)
            self.assertLessEqual(max(result.loads), max(max(loads), min(result.loads) + cost) + 1e-9)
            self.assertEqual(sum(result.counts), images)
            if max(loads) - min(loads) >= cost:
                self.assertLessEqual(spread, max(loads) - min(loads) + 1e-9)

    def test_spread_can_grow_past_zero_start(self):
        result = greedy_pad([0.0, 0.0], 3, 10.0)
        self.assertEqual(result.loads, [20.0, 10.0])
        self.assertEqual(max(result.loads) - min(result.loads), 10.0)

    def test_negative_images(self):
        with self.assertRaises(ContractError):
            greedy_pad([1.0], -1, 1.0)


class HybridBalanceTests(SimpleTestCase):

    def test_balancing_never_worsens_imbalance(self):
        for seed in range(100):
            rng = make_generator(seed, 'balance')
            values = rng.uniform(1.0, 100.0, 3)
            picks = rng.integers(0, 3, int(rng.integers(2, 9)))
            if len(set(picks.tolist())) < 2:
                picks[0], picks[1] = 0, 1
            drawn = {f"r{i}": float(values[i]) for i in sorted(set(picks.tolist()))}
            f_target = max(drawn.values())
            f_min = min(drawn.values())
            sizes = coarse_batch_sizes(drawn, f_target)
            loads = [sizes[f"r{i}"] * values[i] for i in picks]
            cost = float(rng.uniform(0.0, f_target - f_min))
            padded = greedy_pad(loads, int(rng.integers(0, 12)), cost)
            unbalanced = max(values[i] for i in picks) / min(values[i] for i in picks)
            balanced = max(padded.loads) / min(padded.loads)
            self.assertLessEqual(balanced, unbalanced * (1 + 1e-8), seed)

    def test_desk_scenario_plan(self):
        scenario = load_scenario()
        flops = scenario.video_flops()
        self.assertNotIn('img_256x256', flops)
        weights = {res.label: res.weight for res in scenario.videos}
        plan = hybrid_balance(flops, weights, scenario.flops(scenario.image_resolution), make_generator(0, 'balance'),
                              ranks=8, cache_depth=4, image_ratio=0.1, alpha=1.0, target='v204_256x256')
        self.assertEqual(plan.batch_sizes['v68_256x256'], 3)
        self.assertEqual(plan.batch_sizes['v204_256x256'], 1)
        self.assertEqual(len(plan.loads), 32)
        videos = sum(plan.batch_sizes[name] for name in plan.assignments)
        self.assertEqual(plan.n_images, math.ceil(0.1 * videos))
        self.assertLessEqual(plan.imbalance, max(plan.coarse_loads) / min(plan.coarse_loads) + 1e-12)
        self.assertIn('batches', plan.as_dict())

    def test_normalised_plan(self):
        plan = hybrid_balance({'a': 1.0, 'b': 2.0}, {'a': 1, 'b': 1}, 0.5, make_generator(0, 'balance'),
                              ranks=2, cache_depth=2, global_batch=3)
        self.assertEqual(plan.batch_sizes, {'a': 2, 'b': 1})

    def test_bad_target(self):
        with self.assertRaises(ConfigurationError):
            hybrid_balance({'a': 1.0}, {'a': 1}, 0.5, make_generator(0, 'balance'), target='zzz')


class BucketTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(bucketize(204, 544, 992), Bucket(204, AspectBucket.LANDSCAPE))
        self.assertEqual(bucketize(68, 512, 512), Bucket(68, AspectBucket.SQUARE))
        self.assertEqual(bucketize(100, 992, 544), Bucket(68, AspectBucket.PORTRAIT))
        self.assertEqual(bucketize(67, 100, 100).length, 1)
        self.assertEqual(bucketize(500, 100, 100).length, 204)

    def test_tie_goes_to_square(self):
        self.assertEqual(bucketize(1, 3, 4).aspect, AspectBucket.SQUARE)
        self.assertEqual(bucketize(1, 4, 3).aspect, AspectBucket.SQUARE)

    def test_total(self):
        rng = make_generator(0, 'buckets')
        for frames, height, width in rng.integers(1, 2000, (500, 3)):
            bucket = bucketize(int(frames), int(height), int(width))
            self.assertIn(bucket.length, (1, 68, 136, 204))
            self.assertIn(bucket.aspect, AspectBucket.values)
        with self.assertRaises(ConfigurationError):
            bucketize(0, 1, 1)


class ScenarioTests(SimpleTestCase):

    def test_desk_scenario(self):
        scenario = load_scenario()
        self.assertEqual(scenario.world_size, 32)
        self.assertEqual(len(scenario.resolutions), 7)
        self.assertEqual(scenario.image_resolution.label, 'img_256x256')
        self.assertEqual(scenario.flops(scenario.resolution('v68_256x256')), 509.31)
        self.assertEqual(scenario.balance.alpha, 1.0)
        self.assertEqual(scenario.cost.accounting, AccountingMode.FWD_BWD_RECOMPUTE)

    def test_estimated_flops_when_missing(self):
        scenario = parse_scenario({
            'resolution.a.frames': '204', 'resolution.a.height': '256', 'resolution.a.width': '256',
        })
        expected = flops_per_sample(ArchSpec(), 6656, CostModel())
        self.assertEqual(scenario.flops(scenario.resolution('a')), expected)
        self.assertIsNone(scenario.image_resolution)

    def test_strict_keys(self):
        base = {'resolution.a.frames': '1', 'resolution.a.height': '16', 'resolution.a.width': '16'}
        for extra in ({'arch.depth': '3'}, {'network.layers': '3'}, {'resolution.a.fps': '24'},
                      {'arch.layers': 'many'}, {'arch.ffn': '1024'}):
            with self.assertRaises(ConfigurationError, msg=str(extra)):
                parse_scenario({**base, **extra})
        with self.assertRaises(ConfigurationError):
            parse_scenario({'resolution.a.frames': '1'})
        with self.assertRaises(ConfigurationError):
            parse_scenario({})

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'small.scenario')
            with open(path, 'w') as f:
                f.write("# small\ncluster.world_size=8\narch.layers=4\narch.hidden=256\narch.heads=4\n"
                        "arch.head_dim=64\narch.params=1e6\nresolution.img.frames=1\n"
                        "resolution.img.height=256\nresolution.img.width=256\n")
            scenario = load_scenario(path)
        self.assertEqual(scenario.arch.layers, 4)
        self.assertEqual(scenario.world_size, 8)
        self.assertEqual(token_count(scenario.resolutions[0]), 256)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_scenario('/nonexistent/desk.scenario')
