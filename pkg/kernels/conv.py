"""
Causal 3D convolution over (B, C, T, H, W) video tensors.

The time axis is padded with k_t - 1 zero frames on the left only, so output
frame t sees input frames <= t. Height and width use symmetric "same"
padding. Strides are applied after padding by slicing the window grid.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.exceptions import ShapeError


def as_video(x, name='x'):
    """Validate and return a rank-5 float64 tensor (B, C, T, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 5 or min(x.shape) < 1:
        raise ShapeError(f"{name} must have shape (B, C, T, H, W) with positive dims, got {x.shape}")
    return x


@dataclass(frozen=True)
class ConvKernel3D:
    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    temporal_stride: int = 1
    spatial_stride: int = 1

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        if weight.ndim != 5:
            raise ShapeError(f"Kernel must have shape (C_out, C_in, k_t, k_h, k_w), got {weight.shape}")
        _, _, kt, kh, kw = weight.shape
        if kt < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"Kernel needs k_t >= 1 and odd spatial sizes, got {(kt, kh, kw)}")
        if self.temporal_stride < 1 or self.spatial_stride < 1:
            raise ShapeError(f"Strides must be positive, got ({self.temporal_stride}, {self.spatial_stride})")
        bias = np.zeros(weight.shape[0]) if self.bias is None else np.asarray(self.bias, dtype=np.float64)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"Bias of shape {bias.shape} does not match {weight.shape[0]} output channels")
        object.__setattr__(self, 'weight', weight)
        object.__setattr__(self, 'bias', bias)

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def size(self):
        return self.weight.shape[2:]

    @classmethod
    def identity(cls, channels):
        weight = np.zeros((channels, channels, 1, 1, 1))
        weight[np.arange(channels), np.arange(channels)] = 1.0
        return cls(weight)

    @classmethod
    def random(cls, rng, out_channels, in_channels, size=(3, 3, 3), strides=(1, 1)):
        weight = rng.standard_normal((out_channels, in_channels) + tuple(size))
        return cls(weight, rng.standard_normal(out_channels), *strides)


def causal_conv3d(x, kernel):
    """
    Args:
        x (array): Video tensor (B, C_in, T, H, W)
        kernel (ConvKernel3D): Weights, bias and strides

    Returns:
        array: (B, C_out, ceil(T / s_t), ceil(H / s_s), ceil(W / s_s))
    """
    x = as_video(x)
    if x.shape[1] != kernel.in_channels:
        raise ShapeError(f"Input has {x.shape[1]} channels, kernel expects {kernel.in_channels}")
    kt, kh, kw = kernel.size
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (0, 0), (kt - 1, 0), (ph, ph), (pw, pw)))

    windows = sliding_window_view(padded, (kt, kh, kw), axis=(2, 3, 4))
    st, ss = kernel.temporal_stride, kernel.spatial_stride
    windows = windows[:, :, ::st, ::ss, ::ss]
    # unoptimised einsum: one fixed reduction order per output element
    out = np.einsum('bcthwijk,ocijk->bothw', windows, kernel.weight)
    return out + kernel.bias[None, :, None, None, None]
