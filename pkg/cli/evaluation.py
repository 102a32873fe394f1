"""Sample-quality metrics against fresh draws of the toy truth distribution."""
import logging

import numpy as np
from scipy.spatial.distance import cdist

from align.dpo import preferred_fraction
from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

CHUNK = 512


def mean_pairwise_distance(a, b, chunk=CHUNK):
    """Mean Euclidean distance over all pairs (a_i, b_j), computed block by block."""
    total = 0.0
    for start in range(0, a.shape[0], chunk):
        total += float(np.sum(cdist(a[start:start + chunk], b)))
    return total / (a.shape[0] * b.shape[0])


def energy_distance(x, y, chunk=CHUNK):
    """
    Squared energy distance 2 E|X - Y| - E|X - X'| - E|Y - Y'| between two samples.

    The within-sample terms include the zero diagonal, so the estimate is the
    energy distance between the two empirical measures and is never negative.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1] or not x.shape[0] or not y.shape[0]:
        raise ShapeError(f"Cannot compare samples of shapes {x.shape} and {y.shape}")
    value = 2.0 * mean_pairwise_distance(x, y, chunk) - mean_pairwise_distance(x, x, chunk) \
        - mean_pairwise_distance(y, y, chunk)
    return max(value, 0.0)


def mode_fraction(samples, center, radius):
    """Share of samples within `radius` of `center`."""
    return preferred_fraction(samples, center, radius)


def mode_fractions(samples, dataset):
    """Share of samples whose nearest mode centre is each of the dataset's modes."""
    nearest = dataset.nearest_mode(samples)
    counts = np.bincount(nearest, minlength=dataset.n_conditions)
    return (counts / max(len(nearest), 1)).tolist()


def sample_quality(samples, dataset, rng, n_truth):
    """Energy distance to `n_truth` fresh truth samples plus the per-mode shares."""
    truth, _ = dataset.sample(n_truth, rng)
    metrics = {
        'energy_distance': energy_distance(samples, truth),
        'mode_fractions': mode_fractions(samples, dataset),
        'n_truth': n_truth,
    }
    logger.info(f"Energy distance to {n_truth} truth samples: {metrics['energy_distance']:.5f}")
    return metrics
