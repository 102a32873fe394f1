import logging
from dataclasses import dataclass

import numpy as np

from nnet.network import value_and_grad
from nnet.optim import adam_step, init_adam
from utils.exceptions import ConfigurationError
from .losses import regression_node
from .samplers import sample_timesteps

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 4000
    batch_size: int = 256
    lr: float = 1e-3
    cond_dropout: float = 0.1
    log_every: int = 500

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError(f"Invalid training length steps={self.steps} batch_size={self.batch_size}")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigurationError(f"cond_dropout must lie in [0, 1), got {self.cond_dropout}")


def drop_conditions(params, y, probability, rng):
    """Replace condition ids by the null id with the given probability (trains the CFG branch)."""
    if y is None or params.cond_table is None or probability <= 0.0:
        return y
    y = np.array(y, dtype=np.int64)
    mask = rng.random(y.shape[0]) < probability
    y[mask] = params.null_condition
    return y


def train_flow(params, draw_batch, sampler, settings, streams, weight_fn=None):
    """
    Adam training on the flow-matching objective.

    Shared by base training (pairs of noise and data) and reflow distillation
    (pairs of noise and teacher samples).

    Args:
        params (VectorFieldParams): Starting parameters
        draw_batch: Callable n -> (x0, x1, y)
        sampler (SamplerSpec): Timestep distribution
        settings (TrainSettings): Loop length, batch size, learning rate, dropout
        streams (RngStreams): Run streams; uses "timesteps" and "dropout"
        weight_fn: Optional per-sample loss weight as a function of t

    Returns:
        tuple: (trained params, AdamState, list of per-step losses)
    """
    state = init_adam(params, lr=settings.lr)
    timesteps = streams.stream('timesteps')
    dropout = streams.stream('dropout')
    history = []

    logger.info(f"Training {params.parameter_count} parameters for {settings.steps} steps (sampler {sampler.kind})")
    for step in range(settings.steps):
        x0, x1, y = draw_batch(settings.batch_size)
        y = drop_conditions(params, y, settings.cond_dropout, dropout)
        t = sample_timesteps(sampler, x0.shape[0], timesteps)
        weights = None if weight_fn is None else weight_fn(t)

        loss, grads = value_and_grad(params, lambda p: regression_node(p, x0, x1, y, t, weights))
        params, state = adam_step(params, grads, state)
        history.append(loss)

        if settings.log_every and (step + 1) % settings.log_every == 0:
            recent = np.mean(history[-settings.log_every:])
            logger.info(f"step {step + 1}/{settings.steps} loss {recent:.5f}")

    return params, state, history
