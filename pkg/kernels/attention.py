"""Positional rotation and query/key normalisation applied before attention."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from utils.exceptions import ConfigurationError, ShapeError

DEFAULT_ROPE_BASE = 10000.0


@dataclass(frozen=True)
class RopeSpec:
    head_dim: int
    split: Tuple[int, int, int]
    base: float = DEFAULT_ROPE_BASE

    def __post_init__(self):
        if len(self.split) != 3 or any(part < 0 or part % 2 for part in self.split):
            raise ConfigurationError(f"RoPE split must be three non-negative even widths, got {self.split}")
        if sum(self.split) != self.head_dim:
            raise ConfigurationError(f"RoPE split {self.split} does not add up to head_dim {self.head_dim}")
        if not self.base > 1.0:
            raise ConfigurationError(f"RoPE base must exceed 1, got {self.base}")

    @classmethod
    def for_head_dim(cls, head_dim, base=DEFAULT_ROPE_BASE):
        """Frames get the remainder; height and width get equal even shares."""
        spatial = 2 * (head_dim // 6)
        return cls(head_dim, (head_dim - 2 * spatial, spatial, spatial), base)


def rope_angles(width, base=DEFAULT_ROPE_BASE):
    """Per-pair rotation rates base**(-2i/width) for i = 0..width/2-1."""
    if width % 2:
        raise ConfigurationError(f"RoPE width must be even, got {width}")
    return base ** (-np.arange(0, width, 2, dtype=np.float64) / width)


def rope1d(x, positions, base=DEFAULT_ROPE_BASE):
    """
    Rotate channel pairs (2i, 2i+1) of every token by position * rate_i.

    Args:
        x (array): (..., tokens, width)
        positions (array): (tokens,) non-negative integers
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions)
    if x.ndim < 2 or positions.shape != (x.shape[-2],):
        raise ShapeError(f"Positions {positions.shape} do not match tokens of {x.shape}")
    if np.any(positions < 0) or not np.all(np.equal(np.mod(positions, 1), 0)):
        raise ShapeError("RoPE positions must be non-negative integers")
    width = x.shape[-1]
    if width == 0:
        return x.copy()
    phase = positions.astype(np.float64)[:, None] * rope_angles(width, base)
    cos, sin = np.cos(phase), np.sin(phase)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def rope3d(x, positions, spec):
    """
    Split channels into (frame, height, width) groups and rotate each group by its own axis.

    Args:
        x (array): (..., tokens, head_dim)
        positions (array): (tokens, 3) integer (f, h, w) coordinates
        spec (RopeSpec): Channel split and base
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions)
    if x.shape[-1] != spec.head_dim:
        raise ShapeError(f"Head dim {x.shape[-1]} does not match RoPE spec {spec.head_dim}")
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeError(f"3D RoPE positions must have shape (tokens, 3), got {positions.shape}")
    edges = np.cumsum((0,) + tuple(spec.split))
    parts = [
        rope1d(x[..., edges[axis]:edges[axis + 1]], positions[:, axis], spec.base)
        for axis in range(3)
    ]
    return np.concatenate(parts, axis=-1)


def rms_normalize(x, gain=1.0):
    """x / rms(x) * gain over the last axis; all-zero vectors stay zero."""
    x = np.asarray(x, dtype=np.float64)
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True))
    safe = np.where(rms > 0.0, rms, 1.0)
    return np.where(rms > 0.0, x / safe, 0.0) * gain


def qk_norm(q, k, gain_q=1.0, gain_k=1.0):
    """
    RMS-normalise queries and keys per head, then scale by per-head gains.

    Args:
        q, k (array): (..., heads, head_dim) or (..., head_dim)
        gain_q, gain_k: Scalars or (heads,) arrays

    Returns:
        tuple: (q', k')
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"Query head dim {q.shape[-1]} differs from key head dim {k.shape[-1]}")
    gain_q = np.asarray(gain_q, dtype=np.float64)[..., None]
    gain_k = np.asarray(gain_k, dtype=np.float64)[..., None]
    return rms_normalize(q, gain_q), rms_normalize(k, gain_k)
