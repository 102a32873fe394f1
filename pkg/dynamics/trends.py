"""
Loss-trajectory analysis: linear trend fits, four-way classification,
fluctuation mining and selection tiers.

A trajectory is the loss of one unit (token or sample) at checkpoints
x_i = 0..n. The fitted line gives L_start = b and L_end = a * n + b, so the
change over training is delta_l = a * n.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from django.db import models

from utils.exceptions import ContractError, DomainError, ShapeError

logger = logging.getLogger(__name__)

DELTA_THRESHOLD = 0.2
FLUCTUATION_PERCENTILE = 95.0
TIER_CUTS = (0.2, 0.4, 0.6, 0.8)
TIER_COUNT = len(TIER_CUTS) + 1


class Category(models.TextChoices):
    HH = 'H->H', 'H→H'
    LH = 'L->H', 'L→H'
    HL = 'H->L', 'H→L'
    LL = 'L->L', 'L→L'


@dataclass(frozen=True)
class LossTrajectory:
    unit_id: str
    losses: np.ndarray

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=np.float64)
        if losses.ndim != 1:
            raise ShapeError(f"Trajectory {self.unit_id} must be a vector, got shape {losses.shape}")
        if losses.size < 2:
            raise ContractError(f"Trajectory {self.unit_id} needs at least 2 checkpoints, got {losses.size}")
        if not np.all(np.isfinite(losses)) or np.any(losses < 0):
            raise DomainError(f"Trajectory {self.unit_id} has negative or non-finite losses")
        object.__setattr__(self, 'losses', losses)

    @property
    def n(self):
        """Index of the last checkpoint."""
        return self.losses.size - 1

    @property
    def final(self):
        return float(self.losses[-1])


@dataclass(frozen=True)
class TrendFit:
    slope: float
    intercept: float
    n: int
    residual_variance: float

    @property
    def delta_l(self):
        return self.slope * self.n

    @property
    def l_start(self):
        return self.intercept

    @property
    def l_end(self):
        return self.slope * self.n + self.intercept


def _fit_rows(losses):
    """Closed-form OLS of every row of `losses` against x = 0..n."""
    x = np.arange(losses.shape[1], dtype=np.float64)
    x_c = x - x.mean()
    y_mean = losses.mean(axis=1)
    slope = (losses - y_mean[:, None]) @ x_c / (x_c @ x_c)
    intercept = y_mean - slope * x.mean()
    residual = losses - (slope[:, None] * x + intercept[:, None])
    return slope, intercept, np.mean(residual ** 2, axis=1)


def fit_loss_trend(traj):
    """
    Least-squares line through a trajectory.

    Args:
        traj (LossTrajectory): At least two checkpoints

    Returns:
        TrendFit
    """
    slope, intercept, variance = _fit_rows(traj.losses[None, :])
    return TrendFit(float(slope[0]), float(intercept[0]), traj.n, float(variance[0]))


def classify(delta_l, l_n, l_mean, threshold=DELTA_THRESHOLD):
    """
    delta_l < -threshold is H->L, delta_l > threshold is L->H; in between
    (bounds inclusive) the final loss against the corpus mean splits L->L
    (l_n <= l_mean) from H->H.
    """
    if delta_l < -threshold:
        return Category.HL
    if delta_l > threshold:
        return Category.LH
    if l_n <= l_mean:
        return Category.LL
    return Category.HH


@dataclass
class CorpusAnalysis:
    unit_ids: List[str]
    fits: List[TrendFit]
    categories: List[str]
    fluctuations: np.ndarray
    l_mean: float
    threshold: float
    frequencies: Dict[str, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.unit_ids)

    def by_unit(self):
        return dict(zip(self.unit_ids, self.categories))


def stack_trajectories(trajectories):
    """(units, checkpoints) array; ragged corpora are rejected."""
    if not trajectories:
        raise ContractError("Corpus is empty")
    lengths = {traj.losses.size for traj in trajectories}
    if len(lengths) != 1:
        raise ContractError(f"Trajectories have different lengths: {sorted(lengths)}")
    return np.stack([traj.losses for traj in trajectories])


def classify_corpus(trajectories, threshold=DELTA_THRESHOLD):
    """
    Fit and classify every trajectory of a corpus.

    L_mean is the mean loss at the last checkpoint over the corpus and is
    computed before any unit is classified.

    Returns:
        CorpusAnalysis: categories in input order plus the frequency table
    """
    losses = stack_trajectories(trajectories)
    l_mean = float(np.mean(losses[:, -1]))
    slope, intercept, variance = _fit_rows(losses)
    n = losses.shape[1] - 1

    fits = [TrendFit(float(a), float(b), n, float(v)) for a, b, v in zip(slope, intercept, variance)]
    categories = [
        classify(fit.delta_l, float(final), l_mean, threshold).value
        for fit, final in zip(fits, losses[:, -1])
    ]
    counts = Counter(categories)
    frequencies = {category: counts.get(category, 0) for category in Category.values}
    logger.info(f"Classified {len(fits)} trajectories (L_mean={l_mean:.4f}): "
                + ", ".join(f"{Category(c).label} {count}" for c, count in frequencies.items()))
    return CorpusAnalysis(
        unit_ids=[traj.unit_id for traj in trajectories],
        fits=fits,
        categories=categories,
        fluctuations=np.sqrt(variance),
        l_mean=l_mean,
        threshold=threshold,
        frequencies=frequencies,
    )


def fluctuation_score(traj, fit):
    """Root-mean-square residual of `traj` around `fit`."""
    x = np.arange(traj.losses.size, dtype=np.float64)
    residual = traj.losses - (fit.slope * x + fit.intercept)
    return float(np.sqrt(np.mean(residual ** 2)))


def significant_fluctuations(scores, percentile=FLUCTUATION_PERCENTILE):
    """
    Units whose fluctuation is strictly above the corpus percentile.

    Returns:
        tuple: (threshold, boolean mask)
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractError("No fluctuation scores")
    threshold = float(np.percentile(scores, percentile))
    return threshold, scores > threshold


def selection_tiers(scores):
    """
    Quintile tiers 1..5 from the empirical 20/40/60/80% quantiles.

    Tier 1 holds the highest scores. A score equal to a cut point stays in
    the tier below it, so a constant score vector lands entirely in tier 5.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ContractError("Selection tiers need a non-empty score vector")
    cuts = np.quantile(scores, TIER_CUTS)
    above = np.searchsorted(cuts, scores, side='left')
    return (TIER_COUNT - above).astype(np.int64)


def excess_loss_scores(current_losses, reference_losses):
    """current - reference, per unit."""
    current = np.asarray(current_losses, dtype=np.float64)
    reference = np.asarray(reference_losses, dtype=np.float64)
    if current.shape != reference.shape:
        raise ShapeError(f"Loss vectors differ in shape: {current.shape} vs {reference.shape}")
    return current - reference
