"""
FLWF container for parameters and pair datasets.

Layout: magic b"FLWF", u32 format version, u32 header length, UTF-8 JSON
header, then a little-endian float32 payload holding every array in the
header's `names` order. Header keys: kind, arch, names, shapes, count, seed,
step, meta. No timestamps are stored, so equal runs write equal bytes.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from django.db import models

from align.dpo import PreferencePair
from align.reflow import ReflowPair
from nnet.network import VectorFieldParams
from utils.exceptions import FlowforgeError

logger = logging.getLogger(__name__)

MAGIC = b'FLWF'
VERSION = 1
PREFIX = struct.Struct('<4sII')
PAYLOAD_DTYPE = np.dtype('<f4')


class CheckpointError(FlowforgeError):
    """Unreadable or inconsistent checkpoint file."""


class MagicMismatchError(CheckpointError):
    """File does not start with the FLWF magic bytes."""


class VersionMismatchError(CheckpointError):
    """File was written by an unsupported format version."""


class HeaderError(CheckpointError):
    """Header is truncated, not valid JSON or missing keys."""


class PayloadLengthError(CheckpointError):
    """Payload holds a different number of bytes than the header declares."""


class ShapeMismatchError(CheckpointError):
    """Declared shapes do not add up to the declared element count."""


class CheckpointKind(models.TextChoices):
    PARAMS = 'params', 'Velocity network parameters'
    REFLOW_PAIRS = 'reflow_pairs', 'Reflow distillation pairs'
    PREFERENCE_PAIRS = 'preference_pairs', 'Preference pairs'


@dataclass
class Checkpoint:
    kind: str
    arrays: Dict[str, np.ndarray]
    arch: Optional[dict] = None
    seed: int = 0
    step: int = 0
    meta: dict = field(default_factory=dict)

    def header(self):
        names = list(self.arrays)
        shapes = [list(np.shape(self.arrays[name])) for name in names]
        return {
            'kind': self.kind,
            'arch': self.arch,
            'names': names,
            'shapes': shapes,
            'count': int(sum(np.prod(shape, dtype=np.int64) for shape in shapes)),
            'seed': self.seed,
            'step': self.step,
            'meta': self.meta,
        }


def encode(checkpoint):
    header = json.dumps(checkpoint.header(), sort_keys=True, separators=(',', ':')).encode('utf-8')
    payload = b''.join(
        np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes() for array in checkpoint.arrays.values()
    )
    return PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def decode(data, source='<bytes>'):
    """
    Parse FLWF bytes.

    Raises:
        MagicMismatchError, VersionMismatchError, HeaderError,
        ShapeMismatchError, PayloadLengthError
    """
    if len(data) < PREFIX.size:
        raise HeaderError(f"{source}: file is shorter than the {PREFIX.size}-byte prefix")
    magic, version, header_len = PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise MagicMismatchError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, this build reads {VERSION}")
    end = PREFIX.size + header_len
    if len(data) < end:
        raise HeaderError(f"{source}: header declares {header_len} bytes, file ends first")
    try:
        header = json.loads(data[PREFIX.size:end].decode('utf-8'))
        names, shapes, count = header['names'], header['shapes'], int(header['count'])
        kind = header['kind']
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise HeaderError(f"{source}: unreadable header ({e})")
    if len(names) != len(shapes):
        raise ShapeMismatchError(f"{source}: {len(names)} names but {len(shapes)} shapes")
    sizes = [int(np.prod(shape, dtype=np.int64)) for shape in shapes]
    if sum(sizes) != count:
        raise ShapeMismatchError(f"{source}: shapes hold {sum(sizes)} values, header declares {count}")
    payload = data[end:]
    if len(payload) != count * PAYLOAD_DTYPE.itemsize:
        raise PayloadLengthError(
            f"{source}: payload has {len(payload)} bytes, expected {count * PAYLOAD_DTYPE.itemsize}"
        )

    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
    arrays, offset = {}, 0
    for name, shape, size in zip(names, shapes, sizes):
        arrays[name] = values[offset:offset + size].astype(np.float64).reshape(shape)
        offset += size
    return Checkpoint(kind, arrays, header.get('arch'), header.get('seed', 0), header.get('step', 0),
                      header.get('meta') or {})


def save_checkpoint(path, checkpoint):
    with open(path, 'wb') as f:
        f.write(encode(checkpoint))
    logger.info(f"Saved {checkpoint.kind} checkpoint with {len(checkpoint.arrays)} arrays to {path}")
    return path


def load_checkpoint(path, kind=None):
    """
    Read a checkpoint, optionally insisting on its kind.

    Raises:
        FileNotFoundError: If `path` does not exist
        CheckpointError: On any malformed content, or a kind other than `kind`
    """
    with open(path, 'rb') as f:
        data = f.read()
    checkpoint = decode(data, source=str(path))
    if kind is not None and checkpoint.kind != kind:
        raise HeaderError(f"{path}: holds {checkpoint.kind}, expected {kind}")
    logger.debug(f"Loaded {checkpoint.kind} checkpoint from {path}")
    return checkpoint


def params_to_checkpoint(params, seed=0, step=0, meta=None):
    arrays = {name: np.asarray(t, dtype=np.float64) for name, t in zip(params.tensor_names(), params.tensors())}
    return Checkpoint(CheckpointKind.PARAMS, arrays, params.architecture(), seed, step, dict(meta or {}))


def checkpoint_to_params(checkpoint):
    """
    Rebuild VectorFieldParams from a `params` checkpoint.

    Raises:
        HeaderError: If the architecture does not match the stored arrays
    """
    if checkpoint.kind != CheckpointKind.PARAMS or not checkpoint.arch:
        raise HeaderError(f"Checkpoint of kind {checkpoint.kind} holds no network parameters")
    arch, arrays = checkpoint.arch, checkpoint.arrays
    try:
        layers = len(arch['layer_shapes'])
        weights = [arrays[f"layers.{i}.weight"] for i in range(layers)]
        biases = [arrays[f"layers.{i}.bias"] for i in range(layers)]
        cond_table = arrays['cond_table'] if arch.get('cond_shape') else None
        return VectorFieldParams(weights, biases, list(arch['activations']),
                                 np.asarray(arch['frequencies'], dtype=np.float64), cond_table)
    except KeyError as e:
        raise HeaderError(f"Checkpoint is missing array {e}")
    except ValueError as e:
        raise HeaderError(f"Checkpoint architecture is inconsistent: {e}")


def _labels(values):
    if all(v is None for v in values):
        return None
    return np.asarray(values, dtype=np.float64)


def reflow_pairs_to_checkpoint(pairs, seed=0, meta=None):
    arrays = {
        'x0': np.stack([p.x0 for p in pairs]),
        'x1_hat': np.stack([p.x1_hat for p in pairs]),
    }
    labels = _labels([p.y for p in pairs])
    if labels is not None:
        arrays['y'] = labels
    meta = {'teacher_nfe': pairs[0].teacher_nfe, **(meta or {})}
    return Checkpoint(CheckpointKind.REFLOW_PAIRS, arrays, None, seed, len(pairs), meta)


def checkpoint_to_reflow_pairs(checkpoint):
    arrays, nfe = checkpoint.arrays, int(checkpoint.meta.get('teacher_nfe', 1))
    labels = arrays.get('y')
    try:
        return [
            ReflowPair(arrays['x0'][i], arrays['x1_hat'][i], None if labels is None else int(labels[i]), nfe)
            for i in range(arrays['x0'].shape[0])
        ]
    except KeyError as e:
        raise HeaderError(f"Checkpoint is missing array {e}")


def preference_pairs_to_checkpoint(pairs, seed=0, meta=None):
    arrays = {
        'x_w': np.stack([p.x_w for p in pairs]),
        'x_l': np.stack([p.x_l for p in pairs]),
        'shared_noise': np.stack([p.shared_noise for p in pairs]),
        'shared_t': np.array([p.shared_t for p in pairs]),
    }
    labels = _labels([p.y for p in pairs])
    if labels is not None:
        arrays['y'] = labels
    return Checkpoint(CheckpointKind.PREFERENCE_PAIRS, arrays, None, seed, len(pairs), dict(meta or {}))


def checkpoint_to_preference_pairs(checkpoint):
    arrays = checkpoint.arrays
    labels = arrays.get('y')
    try:
        return [
            PreferencePair(None if labels is None else int(labels[i]), arrays['x_w'][i], arrays['x_l'][i],
                           arrays['shared_noise'][i], float(arrays['shared_t'][i]))
            for i in range(arrays['x_w'].shape[0])
        ]
    except KeyError as e:
        raise HeaderError(f"Checkpoint is missing array {e}")
