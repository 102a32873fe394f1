"""
3D pixel (un)shuffle and the dual-path latent fusion built on it.

Unshuffle moves each s_t x s_s x s_s block of a (B, C, T, H, W) tensor into
channels. Channel c of the input becomes channels
c * (s_t * s_s**2) + i_t * s_s**2 + i_h * s_s + i_w of the output, where
(i_t, i_h, i_w) is the offset inside the block. Shuffle is the exact inverse.
"""
import logging
import math

import numpy as np

from utils.exceptions import ShapeError
from utils.numerics import pairwise_sum
from .conv import as_video, causal_conv3d

logger = logging.getLogger(__name__)

TEMPORAL_COMPRESSION = 8
SPATIAL_COMPRESSION = 16


def pixel_unshuffle3d(x, temporal_stride, spatial_stride):
    x = as_video(x)
    st, ss = temporal_stride, spatial_stride
    b, c, t, h, w = x.shape
    if st < 1 or ss < 1 or t % st or h % ss or w % ss:
        raise ShapeError(f"Shape {(t, h, w)} is not divisible by strides ({st}, {ss}, {ss})")
    out = x.reshape(b, c, t // st, st, h // ss, ss, w // ss, ss)
    out = out.transpose(0, 1, 3, 5, 7, 2, 4, 6)
    return out.reshape(b, c * st * ss * ss, t // st, h // ss, w // ss)


def pixel_shuffle3d(x, temporal_stride, spatial_stride):
    x = as_video(x)
    st, ss = temporal_stride, spatial_stride
    b, c, t, h, w = x.shape
    block = st * ss * ss
    if st < 1 or ss < 1 or c % block:
        raise ShapeError(f"{c} channels are not divisible by the block size {block}")
    out = x.reshape(b, c // block, st, ss, ss, t, h, w)
    out = out.transpose(0, 1, 5, 2, 6, 3, 7, 4)
    return out.reshape(b, c // block, t * st, h * ss, w * ss)


def grouped_channel_average(u, latent_channels):
    """
    Mean over the G contiguous groups of `latent_channels` channels.

    Computed as the first group plus the mean offset of every group from it
    (a fixed pairwise tree), so averaging G identical groups is exact for any G.
    """
    u = as_video(u, 'u')
    channels = u.shape[1]
    if latent_channels < 1 or channels % latent_channels:
        raise ShapeError(f"{channels} channels do not split into groups of {latent_channels}")
    groups = channels // latent_channels
    blocks = [u[:, k * latent_channels:(k + 1) * latent_channels] for k in range(groups)]
    first = blocks[0]
    return first + pairwise_sum([block - first for block in blocks]) / groups


def grouped_channel_repeat(z, groups):
    """Tile the channels `groups` times: channel k * C_z + c holds z[:, c]."""
    z = as_video(z, 'z')
    if groups < 1:
        raise ShapeError(f"Group count must be >= 1, got {groups}")
    return np.tile(z, (1, groups, 1, 1, 1))


def _check_paths(learned, shortcut):
    if learned.shape != shortcut.shape:
        raise ShapeError(f"Conv path {learned.shape} and shortcut path {shortcut.shape} do not line up")


def dual_path_encode(x, kernel, latent_channels, temporal_stride=2, spatial_stride=2):
    """
    Z = U(conv(x)) + grouped_channel_average(U(x), C_z).

    The conv path needs C_out * s_t * s_s**2 == C_z; the shortcut averages
    G = C_in * s_t * s_s**2 / C_z groups.
    """
    x = as_video(x)
    learned = pixel_unshuffle3d(causal_conv3d(x, kernel), temporal_stride, spatial_stride)
    shortcut = grouped_channel_average(pixel_unshuffle3d(x, temporal_stride, spatial_stride), latent_channels)
    _check_paths(learned, shortcut)
    return learned + shortcut


def dual_path_decode(z, kernel, groups, temporal_stride=2, spatial_stride=2):
    """
    Decoder mirror: P(conv(z)) + P(grouped_channel_repeat(z, G)).

    The conv must emit G * C_z channels so both paths shuffle to the same shape.
    """
    z = as_video(z, 'z')
    learned = pixel_shuffle3d(causal_conv3d(z, kernel), temporal_stride, spatial_stride)
    shortcut = pixel_shuffle3d(grouped_channel_repeat(z, groups), temporal_stride, spatial_stride)
    _check_paths(learned, shortcut)
    return learned + shortcut


def latent_shape(frames, height, width):
    """(ceil(T/8), ceil(H/16), ceil(W/16)) for the 16x16x8 video autoencoder."""
    if min(frames, height, width) < 1:
        raise ShapeError(f"Video dimensions must be positive, got {(frames, height, width)}")
    return (
        math.ceil(frames / TEMPORAL_COMPRESSION),
        math.ceil(height / SPATIAL_COMPRESSION),
        math.ceil(width / SPATIAL_COMPRESSION),
    )
