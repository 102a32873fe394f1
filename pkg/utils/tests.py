import os
import tempfile

import numpy as np
from django.test import SimpleTestCase, override_settings

from .csvio import read_csv, write_csv
from .exceptions import ConfigurationError
from .keyvalue import coerce, parse_assignment, read_key_values
from .numerics import pairwise_sum
from .rng import RngStreams, make_generator
from .tasks import run_parallel, thread_budget


class RngTests(SimpleTestCase):

    def test_streams_are_independent_of_request_order(self):
        a = RngStreams(11)
        first = a.stream('data').standard_normal(4)
        a.stream('noise').standard_normal(100)
        b = RngStreams(11)
        b.stream('noise')
        np.testing.assert_array_equal(b.stream('data').standard_normal(4), first)

    def test_stream_advances_but_fresh_restarts(self):
        streams = RngStreams(3)
        one = streams.stream('eval').random()
        two = streams.stream('eval').random()
        self.assertNotEqual(one, two)
        self.assertEqual(streams.fresh('eval').random(), one)
        self.assertEqual(make_generator(3, 'eval').random(), one)

    def test_purpose_and_seed_matter(self):
        self.assertNotEqual(make_generator(0, 'data').random(), make_generator(0, 'noise').random())
        self.assertNotEqual(make_generator(0, 'data').random(), make_generator(1, 'data').random())

    def test_negative_seed(self):
        with self.assertRaises(ValueError):
            RngStreams(-1)


class PairwiseSumTests(SimpleTestCase):

    def test_power_of_two_copies_are_exact(self):
        value = np.array([0.1, 1e-17, 3.3])
        self.assertTrue(np.array_equal(pairwise_sum([value] * 8), value * 8))

    def test_fixed_grouping(self):
        terms = [np.array([1e16]), np.array([1.0]), np.array([-1e16]), np.array([1.0])]
        # (1e16 + 1) + (-1e16 + 1) rounds both pairs
        self.assertEqual(pairwise_sum(terms)[0], 0.0)
        self.assertEqual(pairwise_sum([np.ones(2)] * 3).tolist(), [3.0, 3.0])

    def test_empty(self):
        with self.assertRaises(ValueError):
            pairwise_sum([])


class RunParallelTests(SimpleTestCase):

    @override_settings(FLOWFORGE_THREADS=4)
    def test_results_keep_input_order(self):
        def square(x):
            return x * x

        self.assertEqual(run_parallel(square, range(20), max_workers=4), [x * x for x in range(20)])
        self.assertEqual(thread_budget(16), 4)
        self.assertEqual(thread_budget(0), 1)

    @override_settings(FLOWFORGE_THREADS=1)
    def test_serial_budget(self):
        self.assertEqual(run_parallel(lambda x: x + 1, [1, 2, 3], max_workers=8), [2, 3, 4])

    @override_settings(FLOWFORGE_THREADS=2)
    def test_errors_propagate(self):
        def fail(x):
            raise RuntimeError(f"bad {x}")

        with self.assertRaises(RuntimeError):
            with self.assertLogs('utils.tasks', level='ERROR'):
                run_parallel(fail, [1, 2])


class KeyValueTests(SimpleTestCase):

    def test_read_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.cfg')
            with open(path, 'w') as f:
                f.write("# comment\ntrain.steps=12\n\nnet.hidden=32,16\n")
            self.assertEqual(read_key_values(path), {'train.steps': '12', 'net.hidden': '32,16'})
            with open(path, 'w') as f:
                f.write("train.steps\n")
            with self.assertRaises(ConfigurationError):
                read_key_values(path)
        with self.assertRaises(FileNotFoundError):
            read_key_values(os.path.join(tmp, 'missing.cfg'))

    def test_parse_assignment(self):
        self.assertEqual(parse_assignment(' train.steps = 7 '), ('train.steps', '7'))
        self.assertEqual(parse_assignment('dpo.target=1,2'), ('dpo.target', '1,2'))
        for text in ('steps=7', 'train.steps', ''):
            with self.assertRaises(ConfigurationError, msg=text):
                parse_assignment(text)

    def test_coerce(self):
        self.assertIs(coerce('yes', False, 'k'), True)
        self.assertIs(coerce('0', True, 'k'), False)
        self.assertEqual(coerce('12', 3, 'k'), 12)
        self.assertEqual(coerce('1e-3', 0.5, 'k'), 0.001)
        self.assertEqual(coerce('64, 32', (128,), 'k'), (64, 32))
        self.assertEqual(coerce('2,-0.5', (2.0, 0.0), 'k'), (2.0, -0.5))
        self.assertIsNone(coerce('none', None, 'k'))
        self.assertEqual(coerce('ring', 'two_gaussians', 'k'), 'ring')
        self.assertEqual(coerce(5, 1.0, 'k'), 5)
        for raw, like in (('maybe', True), ('1.5', 1), ('x', 1.0), ('1,a', (1,))):
            with self.assertRaisesMessage(ConfigurationError, 'train.steps'):
                coerce(raw, like, 'train.steps')


class CsvTests(SimpleTestCase):

    def test_values_read_back(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(os.path.join(tmp, 'a.csv'), ['name', 'x', 'n', 'ok'],
                             [['a,b', 0.1, np.int64(3), True], ['c', np.float64(1e-300), 0, np.bool_(False)]])
            with open(path, 'rb') as f:
                self.assertTrue(f.read().endswith(b'\r\n'))
            header, rows = read_csv(path)
        self.assertEqual(header, ['name', 'x', 'n', 'ok'])
        self.assertEqual(rows, [['a,b', '0.1', '3', 'true'], ['c', '1e-300', '0', 'false']])

    def test_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            empty = os.path.join(tmp, 'empty.csv')
            open(empty, 'w').close()
            with self.assertRaises(ConfigurationError):
                read_csv(empty)
            ragged = os.path.join(tmp, 'ragged.csv')
            with open(ragged, 'w') as f:
                f.write('a,b\n1\n')
            with self.assertRaises(ConfigurationError):
                read_csv(ragged)
