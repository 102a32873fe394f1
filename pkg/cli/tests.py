import json
import os
import struct
import tempfile
from io import StringIO

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from align.dpo import PreferencePair
from align.reflow import ReflowPair
from flow.losses import fm_loss
from flow.samplers import SamplerSpec
from nnet.network import init_params, zeros_like
from utils.csvio import read_csv
from utils.exceptions import ConfigurationError
from utils.rng import make_generator
from .checkpoint import (
    MAGIC, Checkpoint, CheckpointKind, HeaderError, MagicMismatchError, PayloadLengthError, ShapeMismatchError,
    VersionMismatchError, checkpoint_to_params, checkpoint_to_preference_pairs, checkpoint_to_reflow_pairs, decode,
    encode, load_checkpoint, params_to_checkpoint, preference_pairs_to_checkpoint, reflow_pairs_to_checkpoint,
    save_checkpoint,
)
from .config import DEFAULTS, RunConfig
from .datasets import ToyDataset, ToyGenerator
from .evaluation import energy_distance, mode_fraction, mode_fractions
from .reports import dumps, render_scatter, write_samples

TINY = [
    'net.hidden=16,16', 'net.time_dim=4', 'net.cond_dim=2', 'train.steps=20', 'train.batch_size=32',
    'train.log_every=0', 'sample.n=64', 'sample.nfe=4', 'data.n_truth=256',
]


def small_params(seed=0):
    return init_params(make_generator(seed, 'init'), hidden=(8, 8), time_dim=4, cond_dim=2, n_conditions=2)


def run(command, *args, **options):
    options.setdefault('verbosity', 0)
    out = StringIO()
    call_command(command, *args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


class RunConfigTests(SimpleTestCase):

    def test_defaults_are_printed(self):
        config = RunConfig.load(seed=3)
        lines = config.lines()
        self.assertEqual(len(lines), sum(len(section) for section in DEFAULTS.values()))
        self.assertIn('net.hidden=128,128,128', lines)
        self.assertEqual(config.as_dict()['seed'], 3)

    def test_file_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.cfg')
            with open(path, 'w') as f:
                f.write("# toy run\ntrain.steps=12\nnet.hidden=32,16\ndpo.target=1.5,-0.5\n")
            config = RunConfig.load(path, overrides=['train.steps=7', 'data.generator=ring'])
        self.assertEqual(config['train']['steps'], 7)
        self.assertEqual(config['net']['hidden'], (32, 16))
        self.assertEqual(config['dpo']['target'], (1.5, -0.5))
        self.assertEqual(config['data']['generator'], ToyGenerator.RING)
        self.assertEqual(DEFAULTS['train']['steps'], 4000)

    def test_strict_keys_and_types(self):
        for override in ('trian.steps=3', 'train.stpes=3', 'train.steps=many', 'data.generator=spiral',
                         'distill.weighting=cubic', 'nothing'):
            with self.assertRaises(ConfigurationError, msg=override):
                RunConfig.load(overrides=[override])
        with self.assertRaisesMessage(ConfigurationError, 'train.steps'):
            RunConfig.load(overrides=['train.steps=3.5'])
        with self.assertRaises(FileNotFoundError):
            RunConfig.load('/nonexistent/run.cfg')


class ToyDatasetTests(SimpleTestCase):

    def test_reproducible(self):
        for generator in ToyGenerator.values:
            dataset = ToyDataset(generator)
            a, ya = dataset.sample(100, make_generator(1, 'data'))
            b, yb = dataset.sample(100, make_generator(1, 'data'))
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(ya, yb)
            self.assertEqual(a.shape, (100, 2))
            self.assertTrue(np.all((ya >= 0) & (ya < dataset.n_conditions)))

    def test_mode_means(self):
        for generator in ToyGenerator.values:
            dataset = ToyDataset(generator, noise=0.0)
            x, y = dataset.sample(40_000, make_generator(2, 'data'))
            for label, center in enumerate(dataset.mode_centers()):
                np.testing.assert_allclose(x[y == label].mean(axis=0), center, atol=0.1)

    def test_fixed_labels(self):
        x, y = ToyDataset(std=0.2).sample(10, make_generator(0, 'data'), y=1)
        self.assertTrue(np.all(y == 1))
        self.assertTrue(np.all(ToyDataset().nearest_mode(x) == 1))

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            ToyDataset('spiral')
        with self.assertRaises(ConfigurationError):
            ToyDataset(std=0.0)


class EvaluationTests(SimpleTestCase):

    def test_energy_distance(self):
        rng = make_generator(0, 'eval')
        x = rng.standard_normal((300, 2))
        self.assertEqual(energy_distance(x, x), 0.0)
        near = energy_distance(x, x + 0.1)
        far = energy_distance(x, x + 1.0)
        self.assertGreater(near, 0.0)
        self.assertGreater(far, near)
        self.assertAlmostEqual(energy_distance(x, x + 1.0, chunk=7), far, places=10)

    def test_mode_fractions(self):
        dataset = ToyDataset(std=0.2)
        x, _ = dataset.sample(1000, make_generator(0, 'data'), y=0)
        self.assertEqual(mode_fractions(x, dataset), [1.0, 0.0])
        self.assertEqual(mode_fraction(np.array([[2.0, 0.0], [-2.0, 0.0]]), (2.0, 0.0), 1.0), 0.5)

    def test_zero_network_loss_matches_velocity_energy(self):
        dataset = ToyDataset()
        x1, y = dataset.sample(8192, make_generator(0, 'data'))
        x0 = make_generator(0, 'noise').standard_normal(x1.shape)
        params = zeros_like(small_params())
        loss = fm_loss(params, (x0, x1, y), SamplerSpec(), make_generator(0, 'timesteps'))
        # E||x1 - x0||^2 = (separation / 2)^2 + 2 std^2 + 2
        self.assertAlmostEqual(loss, 4.0 + 0.5 + 2.0, delta=0.2 * 6.5)


class CheckpointTests(SimpleTestCase):

    def test_params_round_trip(self):
        params = small_params(3)
        data = encode(params_to_checkpoint(params, seed=3, step=10, meta={'note': 'x'}))
        restored = decode(data)
        self.assertEqual(restored.seed, 3)
        self.assertEqual(restored.step, 10)
        self.assertEqual(restored.meta, {'note': 'x'})
        rebuilt = checkpoint_to_params(restored)
        for original, loaded in zip(params.tensors(), rebuilt.tensors()):
            np.testing.assert_array_equal(loaded, np.asarray(original, dtype=np.float32).astype(np.float64))
        self.assertEqual(encode(params_to_checkpoint(rebuilt, seed=3, step=10, meta={'note': 'x'})), data)

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(os.path.join(tmp, 'model.flwf'), params_to_checkpoint(small_params()))
            self.assertEqual(read_bytes(path)[:4], MAGIC)
            checkpoint = load_checkpoint(path, kind=CheckpointKind.PARAMS)
            self.assertEqual(checkpoint.kind, CheckpointKind.PARAMS)
            with self.assertRaises(HeaderError):
                load_checkpoint(path, kind=CheckpointKind.REFLOW_PAIRS)

    def test_pair_round_trips(self):
        reflow = [ReflowPair(np.array([0.5, 1.0]), np.array([2.0, -1.0]), None, 50) for _ in range(3)]
        restored = checkpoint_to_reflow_pairs(decode(encode(reflow_pairs_to_checkpoint(reflow))))
        self.assertEqual(len(restored), 3)
        np.testing.assert_array_equal(restored[0].x1_hat, [2.0, -1.0])
        self.assertIsNone(restored[0].y)
        self.assertEqual(restored[0].teacher_nfe, 50)

        prefs = [PreferencePair(1, np.ones(2), np.zeros(2), np.full(2, 0.5), 0.25)]
        restored = checkpoint_to_preference_pairs(decode(encode(preference_pairs_to_checkpoint(prefs))))
        self.assertEqual(restored[0].y, 1)
        self.assertEqual(restored[0].shared_t, 0.25)
        np.testing.assert_array_equal(restored[0].shared_noise, [0.5, 0.5])

    def test_corruption_matrix(self):
        data = encode(params_to_checkpoint(small_params()))
        flipped = bytes([data[0] ^ 0xFF]) + data[1:]
        with self.assertRaises(MagicMismatchError):
            decode(flipped)
        with self.assertRaises(VersionMismatchError):
            decode(data[:4] + struct.pack('<I', 2) + data[8:])
        with self.assertRaises(PayloadLengthError):
            decode(data[:-4])
        with self.assertRaises(PayloadLengthError):
            decode(data + b'\x00\x00\x00\x00')
        with self.assertRaises(HeaderError):
            decode(data[:6])
        garbage = b'{not json'
        with self.assertRaises(HeaderError):
            decode(MAGIC + struct.pack('<II', 1, len(garbage)) + garbage)
        header = json.dumps({'kind': 'params', 'names': ['w'], 'shapes': [[2, 2]], 'count': 5}).encode()
        with self.assertRaises(ShapeMismatchError):
            decode(MAGIC + struct.pack('<II', 1, len(header)) + header + b'\x00' * 20)

    def test_pair_checkpoints_missing_arrays(self):
        reflow = decode(encode(Checkpoint(CheckpointKind.REFLOW_PAIRS, {'x0': np.zeros((2, 2))})))
        with self.assertRaisesRegex(HeaderError, 'x1_hat'):
            checkpoint_to_reflow_pairs(reflow)
        prefs = decode(encode(Checkpoint(CheckpointKind.PREFERENCE_PAIRS, {
            'x_w': np.zeros((2, 2)), 'x_l': np.zeros((2, 2)), 'shared_t': np.zeros(2),
        })))
        with self.assertRaisesRegex(HeaderError, 'shared_noise'):
            checkpoint_to_preference_pairs(prefs)


class ReportTests(SimpleTestCase):

    def test_json_understands_numpy(self):
        document = json.loads(dumps({'a': np.float64(0.5), 'b': np.arange(3), 'c': np.int64(4), 'd': np.bool_(True)}))
        self.assertEqual(document, {'a': 0.5, 'b': [0, 1, 2], 'c': 4, 'd': True})

    def test_samples_csv_reads_back_exactly(self):
        samples = make_generator(0, 'csv').standard_normal((50, 2))
        labels = np.arange(50) % 2
        with tempfile.TemporaryDirectory() as tmp:
            path = write_samples(os.path.join(tmp, 'samples.csv'), samples, labels)
            header, rows = read_csv(path)
        self.assertEqual(header, ['x0', 'x1', 'y'])
        np.testing.assert_array_equal(np.array([[float(v) for v in row[:2]] for row in rows]), samples)
        self.assertEqual([int(row[2]) for row in rows], labels.tolist())

    def test_scatter_svg(self):
        svg = render_scatter(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]), labels=[0, 1, 1], title='demo',
                             reference=np.zeros((2, 2)))
        self.assertIn('version="1.1"', svg)
        self.assertEqual(svg.count('<circle'), 5)
        self.assertIn('demo', svg)


class CommandTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def train(self, name, seed=5, extra=()):
        out = self.path(name)
        run('train_fm', seed=seed, out=out, set=TINY + list(extra))
        return out

    def test_train_fm_is_deterministic(self):
        first, second = self.train('a'), self.train('b')
        for name in ('model.flwf', 'losses.csv', 'samples.csv', 'samples.svg', 'summary.json', 'config.json'):
            self.assertEqual(read_bytes(os.path.join(first, name)), read_bytes(os.path.join(second, name)), name)
        other = self.train('c', seed=6)
        self.assertNotEqual(read_bytes(os.path.join(first, 'model.flwf')), read_bytes(os.path.join(other, 'model.flwf')))

        summary = read_json(os.path.join(first, 'summary.json'))
        self.assertEqual(summary['steps'], 20)
        self.assertGreaterEqual(summary['energy_distance'], 0.0)
        header, rows = read_csv(os.path.join(first, 'losses.csv'))
        self.assertEqual(header, ['step', 'loss'])
        self.assertEqual(len(rows), 20)
        self.assertEqual(read_json(os.path.join(first, 'config.json'))['train']['steps'], 20)

    def test_sample_constant_field_single_step(self):
        params = small_params()
        params.weights[-1] = np.zeros_like(params.weights[-1])
        params.biases[-1] = np.array([1.5, -0.25])
        checkpoint = save_checkpoint(self.path('constant.flwf'), params_to_checkpoint(params))
        run('sample', checkpoint, seed=7, out=self.path('s'), nfe=1, n=16)

        noise = make_generator(7, 'noise').standard_normal((16, 2))
        header, rows = read_csv(self.path('s', 'samples.csv'))
        self.assertEqual(header, ['x0', 'x1'])
        np.testing.assert_array_equal(np.array([[float(v) for v in row] for row in rows]), noise + [1.5, -0.25])

    def test_sample_with_guidance(self):
        out = self.train('model')
        run('sample', os.path.join(out, 'model.flwf'), out=self.path('g'), condition=1, cfg_max=5.0, n=32)
        header, rows = read_csv(self.path('g', 'samples.csv'))
        self.assertEqual(header, ['x0', 'x1', 'y'])
        self.assertTrue(all(row[2] == '1' for row in rows))
        self.assertIn('mode_fractions', read_json(self.path('g', 'summary.json')))

    def test_distill_and_dpo_outputs(self):
        model = os.path.join(self.train('model'), 'model.flwf')
        run('distill', model, out=self.path('d'), set=TINY + ['distill.pairs=64', 'distill.steps=10',
                                                              'distill.teacher_nfe=8', 'distill.batch_size=16'])
        pairs = checkpoint_to_reflow_pairs(load_checkpoint(self.path('d', 'pairs.flwf'), CheckpointKind.REFLOW_PAIRS))
        self.assertEqual(len(pairs), 64)
        self.assertEqual(pairs[0].teacher_nfe, 8)
        student = checkpoint_to_params(load_checkpoint(self.path('d', 'student.flwf')))
        self.assertEqual(student.parameter_count, checkpoint_to_params(load_checkpoint(model)).parameter_count)
        self.assertIn('student_energy_distance', read_json(self.path('d', 'summary.json')))

        run('dpo', model, out=self.path('p'), set=TINY + ['dpo.pairs=32', 'dpo.steps=5', 'dpo.batch_size=8',
                                                          'dpo.nfe=4', 'dpo.eval_samples=64', 'dpo.radius=2.5'])
        summary = read_json(self.path('p', 'summary.json'))
        self.assertEqual(summary['pairs'], 32)
        header, rows = read_csv(self.path('p', 'dpo.csv'))
        self.assertEqual(header, ['step', 'loss', 'mean_z'])
        self.assertEqual(len(rows), 5)
        prefs = checkpoint_to_preference_pairs(load_checkpoint(self.path('p', 'preferences.flwf')))
        self.assertEqual(len(prefs), 32)

    def test_plan(self):
        output = run('plan', out=self.path('plan'), top=3)
        self.assertIn('fwd_bwd_recompute', output)
        header, rows = read_csv(self.path('plan', 'strategies.csv'))
        self.assertEqual(header, ['tp', 'cp', 'pp', 'vpp', 'ckpt', 'mem_gb', 'mfu'])
        mfus = [float(row[-1]) for row in rows]
        self.assertEqual(mfus, sorted(mfus, reverse=True))
        document = read_json(self.path('plan', 'strategies.json'))
        self.assertEqual(document['accounting'], 'fwd_bwd_recompute')
        _, flops = read_csv(self.path('plan', 'flops.csv'))
        self.assertEqual({row[0]: row[4] for row in flops}['v204_256x256'], '6656')

    def test_balance_on_desk_scenario(self):
        run('balance', out=self.path('balance'), seed=1)
        document = read_json(self.path('balance', 'plan.json'))
        self.assertEqual(document['batch_sizes']['v68_256x256'], 3)
        self.assertEqual(document['batch_sizes']['v204_256x256'], 1)
        self.assertEqual(len(document['batches']), 32)
        self.assertEqual(document['accounting'], 'fwd_bwd_recompute')
        run('balance', out=self.path('balance2'), seed=1)
        self.assertEqual(read_bytes(self.path('balance', 'plan.json')), read_bytes(self.path('balance2', 'plan.json')))

    def test_dynamics_recovers_planted_labels(self):
        x = np.arange(6)
        rows = {
            'falls': 3.0 - 0.2 * x, 'rises': 1.0 + 0.2 * x, 'flat_high': np.full(6, 4.0), 'flat_low': np.full(6, 0.5),
        }
        path = self.path('losses.csv')
        with open(path, 'w') as f:
            f.write('unit_id,' + ','.join(f"ck{i}" for i in range(6)) + '\n')
            for unit, losses in rows.items():
                f.write(unit + ',' + ','.join(repr(float(v)) for v in losses) + '\n')
        run('dynamics', out=self.path('dyn'), input=path)
        summary = read_json(self.path('dyn', 'summary.json'))
        self.assertEqual(summary['categories'], {
            'falls': 'H->L', 'rises': 'L->H', 'flat_high': 'H->H', 'flat_low': 'L->L',
        })
        header, _ = read_csv(self.path('dyn', 'trends.csv'))
        self.assertEqual(header, ['unit_id', 'a', 'b', 'delta_l', 'category', 'fluctuation', 'tier'])
        self.assertTrue(os.path.exists(self.path('dyn', 'report.html')))

    def test_kernels_selftest(self):
        output = run('kernels_selftest', out=self.path('k'))
        self.assertIn('PASS', output)
        self.assertNotIn('FAIL', output)
        self.assertEqual(read_json(self.path('k', 'summary.json'))['failed'], [])


class ExitCodeTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def write(self, name, data):
        mode = 'wb' if isinstance(data, bytes) else 'w'
        with open(self.path(name), mode) as f:
            f.write(data)
        return self.path(name)

    def assertExit(self, code, command, *args, **options):
        with self.assertRaises(CommandError) as ctx:
            run(command, *args, out=self.path('out'), **options)
        self.assertEqual(ctx.exception.returncode, code)

    def test_validation_errors_exit_1(self):
        self.assertExit(1, 'train_fm', set=['train.stpes=3'])
        self.assertExit(1, 'train_fm', set=['train.steps=abc'])
        self.assertExit(1, 'train_fm', set=['data.generator=spiral'])
        self.assertExit(1, 'dynamics')
        self.assertExit(1, 'dynamics', input=self.write('bad.csv', 'unit_id,ck0,ck1\na,1,x\n'))
        self.assertExit(1, 'plan', scenario=self.write('bad.scenario', 'arch.depth=3\n'))
        self.assertExit(1, 'balance', ranks=0)

    def test_io_errors_exit_2(self):
        self.assertExit(2, 'train_fm', config=self.path('missing.cfg'))
        self.assertExit(2, 'sample', self.path('missing.flwf'))
        self.assertExit(2, 'dynamics', input=self.path('missing.csv'))
        self.assertExit(2, 'plan', scenario=self.path('missing.scenario'))

    def test_corrupt_checkpoints_exit_2(self):
        data = encode(params_to_checkpoint(small_params()))
        corrupt = {
            'magic.flwf': bytes([data[0] ^ 0xFF]) + data[1:],
            'version.flwf': data[:4] + struct.pack('<I', 9) + data[8:],
            'truncated.flwf': data[:-4],
            'tiny.flwf': data[:3],
            'pairs.flwf': encode(reflow_pairs_to_checkpoint([ReflowPair(np.zeros(2), np.ones(2), None, 1)])),
        }
        for name, blob in corrupt.items():
            self.assertExit(2, 'sample', self.write(name, blob))


@tag('slow')
class AcceptanceTests(SimpleTestCase):
    """End-to-end thresholds on the two-Gaussian toy task."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.model_dir = os.path.join(cls.tmp.name, 'model')
        run('train_fm', seed=0, out=cls.model_dir, set=['net.cond_dim=0', 'train.steps=4000'])
        cls.model = os.path.join(cls.model_dir, 'model.flwf')

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_flow_matching_energy_distance(self):
        summary = read_json(os.path.join(self.model_dir, 'summary.json'))
        self.assertLess(summary['energy_distance'], 0.05)
        self.assertLess(summary['final_loss'], summary['initial_loss'])

    def test_few_step_student(self):
        out = os.path.join(self.tmp.name, 'distill')
        run('distill', self.model, seed=0, out=out, set=['net.cond_dim=0', 'distill.pairs=4000', 'distill.steps=3000'])
        summary = read_json(os.path.join(out, 'summary.json'))
        self.assertEqual(summary['student_nfe'], 5)
        self.assertLessEqual(summary['student_energy_distance'], 1.5 * summary['teacher_energy_distance'])

    def test_dpo_raises_preferred_fraction(self):
        out = os.path.join(self.tmp.name, 'dpo')
        run('dpo', self.model, seed=0, out=out)
        summary = read_json(os.path.join(out, 'summary.json'))
        self.assertGreaterEqual(summary['gain'], 0.20)
