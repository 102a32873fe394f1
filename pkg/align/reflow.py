"""
2-rectified-flow self-distillation.

The base model generates (noise, sample) pairs with many Euler steps; a
student is then trained with the flow-matching objective on those fixed
pairs so that its trajectories become straight enough for few-step sampling.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.db import models

from flow.losses import regression_node
from flow.samplers import SamplerSpec, SamplerKind, sample_timesteps
from flow.sampling import euler_sample
from flow.schedules import StepSchedule
from flow.training import train_flow
from nnet.network import VectorFieldParams
from utils.exceptions import ConfigurationError, ContractError, ShapeError

logger = logging.getLogger(__name__)

MIN_WEIGHT_TIME = 1e-3


class Weighting(models.TextChoices):
    SAMPLER = 'sampler', 'Emphasis through the timestep sampler'
    INVERSE_SQUARE = 'inverse_square', 'Explicit 1/t^2 weight'


@dataclass(frozen=True)
class ReflowPair:
    x0: np.ndarray
    x1_hat: np.ndarray
    y: Optional[int]
    teacher_nfe: int

    def __post_init__(self):
        if np.shape(self.x0) != np.shape(self.x1_hat):
            raise ShapeError(f"Noise {np.shape(self.x0)} and teacher sample {np.shape(self.x1_hat)} differ")
        if self.teacher_nfe < 1:
            raise ContractError(f"teacher_nfe must be >= 1, got {self.teacher_nfe}")


def generate_reflow_pairs(teacher, n, nfe, guidance, rng, y=None, data_dim=None):
    """
    Draw noise and integrate the teacher to produce distillation pairs.

    Args:
        teacher: VectorFieldParams or callable velocity field
        n (int): Number of pairs
        nfe (int): Euler steps for the teacher
        guidance (GuidanceSpec, optional): CFG used while generating; its shift warps the grid
        rng (numpy.random.Generator): The "pairs" stream
        y (int or array, optional): Condition per pair
        data_dim (int, optional): Required when `teacher` is a plain callable

    Returns:
        list of ReflowPair
    """
    if nfe < 1:
        raise ContractError(f"Teacher needs at least one function evaluation, got nfe={nfe}")
    if isinstance(teacher, VectorFieldParams):
        data_dim = teacher.data_dim
    elif data_dim is None:
        raise ContractError("data_dim is required for callable teachers")

    x0 = rng.standard_normal((n, data_dim))
    labels = None if y is None else np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    schedule = StepSchedule.uniform(nfe, shift=guidance.shift if guidance is not None else 1.0)
    x1 = euler_sample(teacher, x0, schedule, guidance=guidance, y=labels)

    logger.info(f"Generated {n} reflow pairs with {nfe} teacher steps")
    return [
        ReflowPair(x0[i], x1[i], None if labels is None else int(labels[i]), nfe)
        for i in range(n)
    ]


def stack_pairs(pairs):
    """(x0, x1_hat, y) arrays; y is None when no pair carries a condition."""
    if not pairs:
        raise ContractError("No reflow pairs given")
    x0 = np.stack([p.x0 for p in pairs])
    x1 = np.stack([p.x1_hat for p in pairs])
    labels = [p.y for p in pairs]
    if all(label is None for label in labels):
        return x0, x1, None
    if any(label is None for label in labels):
        raise ContractError("Reflow pairs mix conditioned and unconditioned samples")
    return x0, x1, np.asarray(labels, dtype=np.int64)


def time_weights(t, weighting):
    if weighting == Weighting.SAMPLER:
        return None
    if weighting == Weighting.INVERSE_SQUARE:
        return 1.0 / np.maximum(np.asarray(t, dtype=np.float64), MIN_WEIGHT_TIME) ** 2
    raise ConfigurationError(f"Unknown distillation weighting '{weighting}'")


def distill_loss(student, pairs, sampler, rng, t=None, weighting=Weighting.SAMPLER):
    """
    Flow-matching loss of `student` over reflow pairs.

    Args:
        student: VectorFieldParams or callable velocity field
        pairs (list): ReflowPair items, non-empty
        sampler (SamplerSpec): Timestep distribution (U-shaped by default in the distill command)
        rng (numpy.random.Generator): The "timesteps" stream
        t (array, optional): Explicit per-pair times
        weighting (str): "sampler" or "inverse_square"

    Returns:
        float
    """
    x0, x1, y = stack_pairs(pairs)
    if t is None:
        t = sample_timesteps(sampler, x0.shape[0], rng)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],))
    return regression_node(student, x0, x1, y, t, time_weights(t, weighting)).item()


def distill(teacher, pairs, settings, streams, sampler=None, weighting=Weighting.SAMPLER):
    """
    Train a student initialised from the teacher on fixed reflow pairs.

    Returns:
        tuple: (student params, AdamState, per-step losses)
    """
    if weighting not in Weighting.values:
        raise ConfigurationError(f"Unknown distillation weighting '{weighting}'")
    if sampler is None:
        sampler = SamplerSpec(SamplerKind.U_SHAPED_CENTERED)
    x0, x1, y = stack_pairs(pairs)
    picker = streams.stream('pairs')

    def draw_batch(size):
        idx = picker.integers(0, x0.shape[0], size=size)
        return x0[idx], x1[idx], None if y is None else y[idx]

    weight_fn = None if weighting == Weighting.SAMPLER else (lambda t: time_weights(t, weighting))
    logger.info(f"Distilling on {len(pairs)} pairs, weighting {weighting}")
    return train_flow(teacher.copy(), draw_batch, sampler, settings, streams, weight_fn=weight_fn)
