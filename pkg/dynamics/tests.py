import itertools
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from utils.exceptions import ConfigurationError, ContractError, DomainError, ShapeError
from utils.rng import make_generator
from .reports import read_loss_csv, render_report, write_report
from .trends import (
    Category, LossTrajectory, TrendFit, classify, classify_corpus, excess_loss_scores, fit_loss_trend,
    fluctuation_score, selection_tiers, significant_fluctuations,
)


def sse(losses, slope, intercept):
    x = np.arange(len(losses))
    return float(np.sum((np.asarray(losses) - (slope * x + intercept)) ** 2))


def planted_corpus():
    """One line per category, every delta at least 0.3 away from the thresholds."""
    x = np.arange(6)
    return [
        LossTrajectory('falls', 3.0 - 0.2 * x),        # delta -1.0
        LossTrajectory('rises', 1.0 + 0.2 * x),        # delta +1.0
        LossTrajectory('flat_high', np.full(6, 4.0)),
        LossTrajectory('flat_low', np.full(6, 0.5)),
    ]


class TrendFitTests(SimpleTestCase):

    def test_examples(self):
        fit = fit_loss_trend(LossTrajectory('c', [1, 1, 1]))
        self.assertAlmostEqual(fit.slope, 0.0, places=12)
        self.assertAlmostEqual(fit.intercept, 1.0, places=12)
        self.assertAlmostEqual(fit.delta_l, 0.0, places=12)

        fit = fit_loss_trend(LossTrajectory('line', [3, 2, 1]))
        self.assertAlmostEqual(fit.slope, -1.0, places=12)
        self.assertAlmostEqual(fit.intercept, 3.0, places=12)
        self.assertAlmostEqual(fit.delta_l, -2.0, places=12)
        self.assertAlmostEqual(fit.l_end, 1.0, places=12)

        fit = fit_loss_trend(LossTrajectory('hand', [2.0, 1.5, 1.6, 1.0]))
        self.assertAlmostEqual(fit.slope, -0.29, delta=1e-9)
        self.assertAlmostEqual(fit.intercept, 1.96, delta=1e-9)
        self.assertAlmostEqual(fit.l_start, 1.96, delta=1e-9)

    def test_least_squares_optimality(self):
        rng = make_generator(0, 'trends')
        for _ in range(50):
            losses = rng.uniform(0.0, 5.0, int(rng.integers(2, 20)))
            fit = fit_loss_trend(LossTrajectory('u', losses))
            best = sse(losses, fit.slope, fit.intercept)
            for da, db in itertools.product((-1e-3, 0.0, 1e-3), repeat=2):
                if da or db:
                    self.assertLessEqual(best, sse(losses, fit.slope + da, fit.intercept + db) + 1e-12)

    def test_affine_response(self):
        rng = make_generator(1, 'trends')
        for _ in range(20):
            losses = rng.uniform(0.0, 5.0, 10)
            base = fit_loss_trend(LossTrajectory('u', losses))
            shifted = fit_loss_trend(LossTrajectory('u', losses + 2.5))
            self.assertAlmostEqual(shifted.slope, base.slope, delta=1e-12)
            self.assertAlmostEqual(shifted.delta_l, base.delta_l, delta=1e-12)
            self.assertAlmostEqual(shifted.intercept, base.intercept + 2.5, delta=1e-12)

    def test_invalid_trajectories(self):
        with self.assertRaises(ContractError):
            LossTrajectory('short', [1.0])
        with self.assertRaises(DomainError):
            LossTrajectory('negative', [1.0, -0.1])
        with self.assertRaises(DomainError):
            LossTrajectory('nan', [1.0, np.nan])


class ClassifyTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(classify(-0.5, 1.0, 1.0), Category.HL)
        self.assertEqual(classify(0.5, 1.0, 1.0), Category.LH)
        self.assertEqual(classify(0.0, 0.8, 1.0), Category.LL)
        self.assertEqual(classify(0.2, 1.5, 1.0), Category.HH)
        self.assertEqual(classify(-0.2, 0.5, 1.0), Category.LL)
        self.assertEqual(classify(0.1, 1.0, 1.0), Category.LL)

    def test_configurable_threshold(self):
        self.assertEqual(classify(0.3, 0.5, 1.0, threshold=0.5), Category.LL)
        self.assertEqual(classify(0.6, 0.5, 1.0, threshold=0.5), Category.LH)

    def test_exhaustive_sweep(self):
        rng = make_generator(2, 'classify')
        deltas = np.concatenate([rng.uniform(-1, 1, 100_000), [-0.2, 0.2, 0.0]])
        finals = rng.uniform(0, 2, deltas.size)
        for delta, final in zip(deltas[:2000], finals[:2000]):
            self.assertIn(classify(delta, final, 1.0), Category.values)
        labels = np.array([classify(d, f, 1.0) for d, f in zip(deltas, finals)])
        middle = (deltas >= -0.2) & (deltas <= 0.2)
        self.assertTrue(np.all(labels[deltas < -0.2] == Category.HL))
        self.assertTrue(np.all(labels[deltas > 0.2] == Category.LH))
        self.assertTrue(np.all(labels[middle & (finals <= 1.0)] == Category.LL))
        self.assertTrue(np.all(labels[middle & (finals > 1.0)] == Category.HH))


class CorpusTests(SimpleTestCase):

    def test_planted_labels_recovered(self):
        analysis = classify_corpus(planted_corpus())
        self.assertEqual(analysis.by_unit(), {
            'falls': Category.HL, 'rises': Category.LH, 'flat_high': Category.HH, 'flat_low': Category.LL,
        })
        self.assertEqual(analysis.l_mean, (2.0 + 2.0 + 4.0 + 0.5) / 4)

    def test_single_constant_trajectory(self):
        analysis = classify_corpus([LossTrajectory('only', [1.3, 1.3, 1.3])])
        self.assertEqual(analysis.categories, [Category.LL])

    def test_frequencies_total(self):
        rng = make_generator(3, 'corpus')
        corpus = [LossTrajectory(str(i), rng.uniform(0, 3, 8)) for i in range(200)]
        analysis = classify_corpus(corpus)
        self.assertEqual(sum(analysis.frequencies.values()), 200)
        self.assertEqual(set(analysis.frequencies), set(Category.values))

    def test_matches_single_fits(self):
        rng = make_generator(4, 'corpus')
        corpus = [LossTrajectory(str(i), rng.uniform(0, 3, 5)) for i in range(10)]
        analysis = classify_corpus(corpus)
        for traj, fit, fluctuation in zip(corpus, analysis.fits, analysis.fluctuations):
            single = fit_loss_trend(traj)
            self.assertAlmostEqual(fit.slope, single.slope, places=12)
            self.assertAlmostEqual(fluctuation, fluctuation_score(traj, single), places=12)

    def test_ragged_corpus(self):
        with self.assertRaises(ContractError):
            classify_corpus([LossTrajectory('a', [1, 2]), LossTrajectory('b', [1, 2, 3])])
        with self.assertRaises(ContractError):
            classify_corpus([])


class FluctuationTests(SimpleTestCase):

    def score(self, losses):
        traj = LossTrajectory('u', losses)
        return fluctuation_score(traj, fit_loss_trend(traj))

    def test_examples(self):
        self.assertAlmostEqual(self.score([3, 2, 1]), 0.0, places=12)
        # OLS fit of [1, 2, 1, 2] is 0.2 x + 1.2; residuals -0.2, 0.6, -0.6, 0.2
        self.assertAlmostEqual(self.score([1, 2, 1, 2]), np.sqrt(0.8 / 4), places=12)
        self.assertGreater(self.score([1, 2, 1, 2]), self.score([1, 1.1, 1, 1.1]))

    def test_scale_covariance(self):
        losses = np.array([0.3, 1.7, 0.9, 2.2, 1.1])
        self.assertAlmostEqual(self.score(3.0 * losses), 3.0 * self.score(losses), places=12)

    def test_significant_fluctuations(self):
        scores = np.arange(100, dtype=np.float64)
        threshold, mask = significant_fluctuations(scores)
        self.assertAlmostEqual(threshold, 94.05)
        self.assertEqual(list(np.flatnonzero(mask)), list(range(95, 100)))
        _, none = significant_fluctuations(np.zeros(10))
        self.assertFalse(none.any())


class SelectionTierTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(sorted(selection_tiers([5.0, 1.0, 3.0, 2.0, 4.0])), [1, 2, 3, 4, 5])
        self.assertEqual(list(selection_tiers([5.0, 1.0, 3.0])[:1]), [1])
        self.assertTrue(np.all(selection_tiers(np.full(7, 0.4)) == 5))
        tiers = selection_tiers(np.arange(1, 101, dtype=np.float64))
        self.assertTrue(np.all(tiers[80:] == 1))
        self.assertTrue(np.all(tiers[:80] > 1))
        self.assertEqual(np.bincount(tiers, minlength=6)[1:].tolist(), [20, 20, 20, 20, 20])

    def test_permutation_equivariant(self):
        rng = make_generator(5, 'tiers')
        scores = rng.normal(size=37)
        order = rng.permutation(37)
        np.testing.assert_array_equal(selection_tiers(scores)[order], selection_tiers(scores[order]))

    def test_empty(self):
        with self.assertRaises(ContractError):
            selection_tiers([])


class ExcessLossTests(SimpleTestCase):

    def test_examples(self):
        np.testing.assert_array_equal(excess_loss_scores([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])
        np.testing.assert_array_equal(excess_loss_scores([2.0, 1.0], [1.0, 1.0]), [1.0, 0.0])
        a, b = np.array([0.3, 1.2, 2.0]), np.array([1.0, 0.1, 2.5])
        np.testing.assert_array_equal(excess_loss_scores(a, b), -excess_loss_scores(b, a))

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            excess_loss_scores([1.0, 2.0], [1.0])


class ReportTests(SimpleTestCase):

    def write(self, directory, text):
        path = os.path.join(directory, 'losses.csv')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_read_and_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = self.write(tmp, "unit_id,ck0,ck1,ck2\na,3,2,1\nb,1,1.5,2\n")
            corpus = read_loss_csv(path)
            self.assertEqual([t.unit_id for t in corpus], ['a', 'b'])
            analysis = classify_corpus(corpus)
            scores = excess_loss_scores([t.final for t in corpus], [analysis.l_mean] * 2)
            tiers = selection_tiers(scores)
            threshold, flagged = significant_fluctuations(analysis.fluctuations)
            csv_path, html_path = write_report(tmp, analysis, tiers, scores, flagged, threshold, 'excess loss')
            with open(csv_path) as f:
                lines = f.read().splitlines()
            with open(html_path) as f:
                html = f.read()
        self.assertEqual(lines[0], 'unit_id,a,b,delta_l,category,fluctuation,tier')
        self.assertTrue(lines[1].startswith('a,-1.0,3.0,-2.0,H->L,'))
        self.assertIn('H→L', html)
        self.assertIn('<svg', html)

    def test_bad_inputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            for text in ("id,ck0,ck1\na,1,2\n", "unit_id,ck0\na,1\n", "unit_id,ck0,ck1\na,1,x\n",
                         "unit_id,ck0,ck1\na,1\n", "unit_id,ck0,ck1\n"):
                with self.assertRaises(ConfigurationError, msg=text):
                    read_loss_csv(self.write(tmp, text))
            with self.assertRaises(DomainError):
                read_loss_csv(self.write(tmp, "unit_id,ck0,ck1\na,1,-2\n"))
        with self.assertRaises(FileNotFoundError):
            read_loss_csv('/nonexistent/losses.csv')

    def test_render_lists_flagged_units(self):
        analysis = classify_corpus(planted_corpus())
        tiers = selection_tiers([1.0, 2.0, 3.0, 4.0])
        html = render_report(analysis, tiers, [1.0, 2.0, 3.0, 4.0], [True, False, False, False], 0.5, 'excess loss')
        self.assertIn('<li>falls', html)
        self.assertNotIn('None.', html)
