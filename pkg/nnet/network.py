"""
The velocity network u(x_t, y, t; theta).

A dense feed-forward net over the concatenated input
[x, time_embed(t), cond_embed(y)]. Parameters are plain float64 arrays
(weights shaped (out, in)), or autograd leaves while a gradient is taken.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from django.db import models

from utils.exceptions import ConfigurationError, ShapeError
from . import autograd as ag

logger = logging.getLogger(__name__)


class Activation(models.TextChoices):
    GELU = 'gelu', 'GELU (tanh approximation)'
    TANH = 'tanh', 'tanh'
    IDENTITY = 'identity', 'Identity'


def _shape(tensor):
    return tensor.value.shape if isinstance(tensor, ag.Node) else np.shape(tensor)


def _array(tensor):
    return tensor.value if isinstance(tensor, ag.Node) else np.asarray(tensor)


def default_frequencies(count):
    """pi * 2**k for k = 0..count-1; the lowest frequency keeps t -> features injective on [0, 1]."""
    return np.pi * 2.0 ** np.arange(count, dtype=np.float64)


@dataclass
class VectorFieldParams:
    weights: List
    biases: List
    activations: List[str]
    frequencies: np.ndarray
    cond_table: Optional[object] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ConfigurationError("weights, biases and activations must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            ws, bs = _shape(w), _shape(b)
            if len(ws) != 2 or bs != (ws[0],):
                raise ShapeError(f"Layer {i}: weight {ws} and bias {bs} do not match")
            if i > 0 and ws[1] != _shape(self.weights[i - 1])[0]:
                raise ShapeError(f"Layer {i} expects {ws[1]} inputs, previous layer emits {_shape(self.weights[i - 1])[0]}")
        for tag in self.activations:
            if tag not in Activation.values:
                raise ConfigurationError(f"Unknown activation '{tag}'")
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        if self.frequencies.ndim != 1 or np.any(np.diff(self.frequencies) <= 0):
            raise ConfigurationError("Frequency table must be a strictly increasing vector")
        if self.input_dim != self.data_dim + self.time_dim + self.cond_dim:
            raise ShapeError(
                f"Input width {self.input_dim} != data {self.data_dim} + time {self.time_dim} + condition {self.cond_dim}"
            )
        if self.data_dim <= 0:
            raise ShapeError("Network has no room for data dimensions")

    @property
    def input_dim(self):
        return _shape(self.weights[0])[1]

    @property
    def output_dim(self):
        return _shape(self.weights[-1])[0]

    @property
    def time_dim(self):
        return 2 * len(self.frequencies)

    @property
    def cond_dim(self):
        return 0 if self.cond_table is None else _shape(self.cond_table)[1]

    @property
    def data_dim(self):
        return self.output_dim

    @property
    def n_conditions(self):
        """Number of real condition ids; the null condition sits after them."""
        return 0 if self.cond_table is None else _shape(self.cond_table)[0] - 1

    @property
    def null_condition(self):
        return self.n_conditions

    @property
    def parameter_count(self):
        return int(sum(np.prod(_shape(t)) for t in self.tensors()))

    def tensors(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        if self.cond_table is not None:
            out.append(self.cond_table)
        return out

    def tensor_names(self):
        names = []
        for i in range(len(self.weights)):
            names.extend([f"layers.{i}.weight", f"layers.{i}.bias"])
        if self.cond_table is not None:
            names.append("cond_table")
        return names

    def with_tensors(self, tensors):
        """Same architecture, new tensors in `tensors()` order."""
        tensors = list(tensors)
        expected = len(self.tensors())
        if len(tensors) != expected:
            raise ShapeError(f"Expected {expected} tensors, got {len(tensors)}")
        n = len(self.weights)
        return replace(
            self,
            weights=tensors[0:2 * n:2],
            biases=tensors[1:2 * n:2],
            cond_table=tensors[2 * n] if self.cond_table is not None else None,
            meta=dict(self.meta),
        )

    def copy(self):
        return self.with_tensors([np.array(_array(t), dtype=np.float64) for t in self.tensors()])

    def as_variables(self):
        return self.with_tensors([ag.leaf(_array(t)) for t in self.tensors()])

    def architecture(self):
        """JSON-friendly description used by checkpoints."""
        return {
            'layer_shapes': [list(_shape(w)) for w in self.weights],
            'activations': list(self.activations),
            'frequencies': [float(f) for f in self.frequencies],
            'cond_shape': list(_shape(self.cond_table)) if self.cond_table is not None else None,
        }


def count_parameters(params):
    return params.parameter_count


def freeze(params):
    """Deep copy whose arrays are read-only; used for reference models."""
    frozen = params.copy()
    for tensor in frozen.tensors():
        tensor.setflags(write=False)
    return frozen


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(rng, data_dim=2, hidden=(128, 128, 128), time_dim=16, cond_dim=8,
                n_conditions=2, activation=Activation.GELU, frequencies=None):
    """
    Build a freshly initialised velocity network.

    Args:
        rng (numpy.random.Generator): The "init" stream
        data_dim (int): Width of x and of the predicted velocity
        hidden (tuple): Hidden layer widths
        time_dim (int): Width of the sinusoidal time embedding (even)
        cond_dim (int): Width of the learned condition embedding (0 disables conditioning)
        n_conditions (int): Number of real condition ids; one extra null row is added
        activation (str): Hidden activation tag
        frequencies (array, optional): Custom time-embedding frequency table

    Returns:
        VectorFieldParams
    """
    if time_dim <= 0 or time_dim % 2:
        raise ConfigurationError(f"time_dim must be a positive even number, got {time_dim}")
    if frequencies is None:
        frequencies = default_frequencies(time_dim // 2)
    elif len(frequencies) * 2 != time_dim:
        raise ConfigurationError("Frequency table must hold time_dim / 2 entries")

    widths = [data_dim + time_dim + cond_dim] + list(hidden) + [data_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(glorot_uniform(rng, fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    activations = [str(activation)] * len(hidden) + [Activation.IDENTITY.value]

    cond_table = None
    if cond_dim > 0:
        cond_table = glorot_uniform(rng, n_conditions + 1, cond_dim)

    params = VectorFieldParams(weights, biases, activations, np.asarray(frequencies, dtype=np.float64), cond_table)
    logger.debug(f"Initialised velocity network {widths} with {params.parameter_count} parameters")
    return params


def zeros_like(params):
    return params.with_tensors([np.zeros(_shape(t)) for t in params.tensors()])


def time_embed(t, dim, frequencies=None):
    """
    Interleaved [sin(f_0 t), cos(f_0 t), sin(f_1 t), cos(f_1 t), ...].

    `t` may be a scalar (returns shape (dim,)) or a vector (returns (n, dim)).
    """
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"Time embedding width must be a positive even number, got {dim}")
    if frequencies is None:
        frequencies = default_frequencies(dim // 2)
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if frequencies.shape != (dim // 2,):
        raise ConfigurationError(f"Frequency table of length {frequencies.shape} does not fit dim {dim}")
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ConfigurationError("Time must be finite")
    phase = t[..., None] * frequencies
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(phase)
    out[..., 1::2] = np.cos(phase)
    return out


def _condition_ids(params, y, n):
    if y is None:
        ids = np.full(n, params.null_condition, dtype=np.int64)
    else:
        ids = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    if np.any(ids < 0) or np.any(ids > params.null_condition):
        raise ShapeError(f"Condition ids must lie in [0, {params.null_condition}]")
    return ids


def forward_node(params, x, t, y=None):
    """
    Graph-building forward pass.

    Args:
        params (VectorFieldParams): Arrays or autograd leaves
        x (array): Shape (n, data_dim) or (data_dim,)
        t (float or array): Scalar or per-row times
        y (int or array, optional): Condition ids; None selects the null condition

    Returns:
        Node of shape (n, data_dim)
    """
    x = np.asarray(x, dtype=np.float64)
    rows = x.reshape(1, -1) if x.ndim == 1 else x
    if rows.ndim != 2 or rows.shape[1] != params.data_dim:
        raise ShapeError(f"Input of shape {x.shape} does not match data width {params.data_dim}")
    n = rows.shape[0]

    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    parts = [ag.as_node(rows)]
    if params.time_dim:
        parts.append(ag.as_node(time_embed(t, params.time_dim, params.frequencies)))
    if params.cond_table is not None:
        parts.append(ag.take_rows(params.cond_table, _condition_ids(params, y, n)))

    h = ag.concat(parts, axis=1)
    for w, b, tag in zip(params.weights, params.biases, params.activations):
        h = ag.matmul(h, ag.transpose(w)) + b
        h = ag.ACTIVATIONS[tag](h)
    return h


def forward(params, x, t, y=None):
    """Predicted velocity, same shape as `x`."""
    x = np.asarray(x, dtype=np.float64)
    out = forward_node(params, x, t, y).value
    return out.reshape(x.shape)


def value_and_grad(params, loss_closure):
    """
    Evaluate `loss_closure(variables)` and its exact gradient.

    Returns:
        tuple: (loss value, list of gradient arrays in `params.tensors()` order)
    """
    variables = params.as_variables()
    loss = loss_closure(variables)
    ag.backward(loss)
    grads = []
    for var in variables.tensors():
        grads.append(np.zeros(var.shape) if var.grad is None else var.grad)
    return loss.item(), grads


def grad(params, loss_closure):
    """Reverse-mode gradient of a scalar loss, congruent to `params.tensors()`."""
    return value_and_grad(params, loss_closure)[1]
