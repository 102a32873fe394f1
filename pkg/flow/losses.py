"""
Flow-matching regression objective.

The loss is the batch mean of ||u(X_t, y, t) - (X_1 - X_0)||^2 (squared norm
summed over data dimensions). Models are VectorFieldParams (arrays or autograd
leaves) or plain callables, which is how oracle models are plugged in.
"""
import numpy as np

from nnet import autograd as ag
from nnet.network import VectorFieldParams, forward_node
from utils.exceptions import ContractError, ShapeError
from .paths import interpolate, velocity_target
from .samplers import sample_timesteps


def predicted_velocity_node(model, x_t, t, y):
    if isinstance(model, VectorFieldParams):
        return forward_node(model, x_t, t, y)
    return ag.as_node(np.asarray(model(x_t, t, y), dtype=np.float64).reshape(x_t.shape))


def _batch(batch):
    x0, x1, y = batch
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ContractError("Flow-matching loss needs a non-empty batch")
    if x0.shape != x1.shape:
        raise ShapeError(f"Noise {x0.shape} and data {x1.shape} batches differ")
    return x0, x1, y


def regression_node(model, x0, x1, y, t, weights=None):
    """Weighted batch mean of squared velocity errors at the given per-row times."""
    x_t = interpolate(x0, x1, t)
    err = predicted_velocity_node(model, x_t, t, y) - velocity_target(x0, x1)
    per_row = ag.total(ag.square(err), axis=1)
    if weights is not None:
        per_row = per_row * np.asarray(weights, dtype=np.float64)
    return ag.mean(per_row)


def fm_loss_node(model, batch, sampler, rng, t=None):
    """Graph-building flow-matching loss; `t` overrides the sampler draws."""
    x0, x1, y = _batch(batch)
    if t is None:
        t = sample_timesteps(sampler, x0.shape[0], rng)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],))
    return regression_node(model, x0, x1, y, t)


def fm_loss(model, batch, sampler, rng, t=None):
    """
    Mean over the batch of ||u(X_t, y, t) - V_t||^2 with per-sample t.

    Args:
        model: VectorFieldParams or callable (x, t, y) -> velocity
        batch (tuple): (x0, x1, y) with x0/x1 shaped (n, d); y may be None
        sampler (SamplerSpec): Timestep distribution
        rng (numpy.random.Generator): The "timesteps" stream
        t (array, optional): Explicit per-sample times

    Returns:
        float
    """
    return fm_loss_node(model, batch, sampler, rng, t=t).item()
