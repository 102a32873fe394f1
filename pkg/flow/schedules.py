import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.exceptions import ConfigurationError, ContractError

logger = logging.getLogger(__name__)


def cfg_scale(t, cfg_max):
    """Linear diminishing guidance: max(cfg_max - 9 t (cfg_max - 1), 1)."""
    return np.maximum(cfg_max - 9.0 * t * (cfg_max - 1.0), 1.0)


def shift_time(t, shift):
    """t' = s t / (1 + (s - 1) t); monotone on [0, 1] with both endpoints fixed."""
    t = np.asarray(t, dtype=np.float64)
    return shift * t / (1.0 + (shift - 1.0) * t)


@dataclass(frozen=True)
class GuidanceSpec:
    cfg_max: float = 5.0
    shift: float = 1.0
    null_condition: Optional[int] = None

    def __post_init__(self):
        if not self.cfg_max >= 1.0:
            raise ConfigurationError(f"cfg_max must be >= 1, got {self.cfg_max}")
        if not self.shift >= 1.0:
            raise ConfigurationError(f"Time shift must be >= 1, got {self.shift}")

    def scale(self, t):
        return float(cfg_scale(t, self.cfg_max))


class StepSchedule:
    """Strictly increasing timesteps with t_0 = 0 and t_n = 1 exactly."""

    def __init__(self, times):
        times = np.array(times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ContractError("A schedule needs at least two timesteps")
        if times[0] != 0.0 or times[-1] != 1.0:
            raise ContractError(f"Schedule must start at 0 and end at 1, got {times[0]} .. {times[-1]}")
        if np.any(np.diff(times) <= 0.0):
            raise ContractError("Schedule timesteps must be strictly increasing")
        times.setflags(write=False)
        self.times = times

    @classmethod
    def uniform(cls, steps, shift=1.0):
        """`steps` equal Euler steps, optionally warped by the time shift."""
        if steps < 1:
            raise ContractError(f"Need at least one step, got {steps}")
        if shift < 1.0:
            raise ConfigurationError(f"Time shift must be >= 1, got {shift}")
        grid = np.arange(steps + 1, dtype=np.float64) / steps
        if shift != 1.0:
            grid = shift_time(grid, shift)
            grid[0], grid[-1] = 0.0, 1.0
        return cls(grid)

    @classmethod
    def from_times(cls, times):
        return cls(times)

    @property
    def steps(self):
        return self.times.size - 1

    def __len__(self):
        return self.steps

    def __iter__(self):
        """Yields (t_i, dt_i) for every Euler step."""
        for i in range(self.steps):
            yield self.times[i], self.times[i + 1] - self.times[i]

    def __repr__(self):
        return f"StepSchedule(steps={self.steps})"
