"""
Two-dimensional toy distributions standing in for video latents.

Every generator has labelled modes, so the same dataset drives conditional
training, classifier-free guidance and preference synthesis.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.db import models

from utils.exceptions import ConfigurationError, ContractError

logger = logging.getLogger(__name__)


class ToyGenerator(models.TextChoices):
    TWO_GAUSSIANS = 'two_gaussians', 'Two Gaussians'
    TWO_MOONS = 'two_moons', 'Two moons'
    RING = 'ring', 'Ring of Gaussians'


@dataclass(frozen=True)
class ToyDataset:
    """
    Args:
        generator (str): ToyGenerator tag
        separation (float): Distance between the two Gaussian means
        std (float): Per-mode standard deviation (Gaussian and ring modes)
        modes (int): Number of ring modes
        radius (float): Ring radius, and the scale of the moons
        noise (float): Isotropic noise added to moon points
    """
    generator: str = ToyGenerator.TWO_GAUSSIANS
    separation: float = 4.0
    std: float = 0.5
    modes: int = 8
    radius: float = 4.0
    noise: float = 0.1

    dim = 2

    def __post_init__(self):
        if self.generator not in ToyGenerator.values:
            raise ConfigurationError(f"Unknown data.generator '{self.generator}'")
        if not self.std > 0 or not self.radius > 0 or not self.separation > 0 or self.noise < 0:
            raise ConfigurationError("data.std, data.radius and data.separation must be positive, data.noise >= 0")
        if self.generator == ToyGenerator.RING and self.modes < 2:
            raise ConfigurationError(f"data.modes must be at least 2, got {self.modes}")

    @property
    def n_conditions(self):
        return self.modes if self.generator == ToyGenerator.RING else 2

    def mode_centers(self):
        """(n_conditions, 2) array of mode centres."""
        if self.generator == ToyGenerator.TWO_GAUSSIANS:
            half = self.separation / 2.0
            return np.array([[-half, 0.0], [half, 0.0]])
        if self.generator == ToyGenerator.RING:
            angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
            return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        # Mean of each half-circle arc
        arc = 2.0 / np.pi
        return 0.5 * self.radius * np.array([[0.0, arc], [1.0, 0.5 - arc]])

    def sample(self, n, rng, y=None):
        """
        Draw `n` points; labels are drawn uniformly unless `y` fixes them.

        Returns:
            tuple: (x of shape (n, 2), integer labels of shape (n,))
        """
        if n < 1:
            raise ContractError(f"Need at least one sample, got {n}")
        if y is None:
            labels = rng.integers(0, self.n_conditions, size=n)
        else:
            labels = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,)).copy()
            if np.any(labels < 0) or np.any(labels >= self.n_conditions):
                raise ContractError(f"Labels must lie in [0, {self.n_conditions})")

        if self.generator == ToyGenerator.TWO_MOONS:
            theta = np.pi * rng.random(n)
            upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
            points = np.where(labels[:, None] == 0, upper, lower)
            x = 0.5 * self.radius * points + self.noise * rng.standard_normal((n, 2))
        else:
            x = self.mode_centers()[labels] + self.std * rng.standard_normal((n, 2))
        return x, labels

    def nearest_mode(self, x):
        distances = np.linalg.norm(np.asarray(x)[:, None, :] - self.mode_centers()[None], axis=2)
        return np.argmin(distances, axis=1)

    def describe(self):
        return {
            'generator': self.generator,
            'separation': self.separation,
            'std': self.std,
            'modes': self.modes,
            'radius': self.radius,
            'noise': self.noise,
        }


def dataset_from_section(section):
    """ToyDataset from the `data` config section (extra keys such as n_truth are ignored)."""
    return ToyDataset(**{k: section[k] for k in ('generator', 'separation', 'std', 'modes', 'radius', 'noise')})
