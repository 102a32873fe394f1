import logging
from dataclasses import dataclass, replace
from typing import List

import numpy as np

from utils.exceptions import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamState:
    """First/second moments congruent to the parameter tensors, plus hyper-parameters."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ConfigurationError("Adam step counter cannot be negative")
        if self.lr < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps < 0:
            raise ConfigurationError(
                f"Invalid Adam hyper-parameters lr={self.lr} beta1={self.beta1} beta2={self.beta2} eps={self.eps}"
            )


def init_adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = [np.zeros(np.shape(t)) for t in params.tensors()]
    return AdamState(m=zeros, v=[z.copy() for z in zeros], step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state):
    """
    One bias-corrected Adam update.

    Args:
        params (VectorFieldParams): Current parameters (not modified)
        grads (list): Gradients in `params.tensors()` order
        state (AdamState): Optimizer state (not modified)

    Returns:
        tuple: (updated params, updated state)
    """
    tensors = params.tensors()
    if len(grads) != len(tensors) or len(state.m) != len(tensors):
        raise ShapeError(f"{len(tensors)} parameter tensors, {len(grads)} gradients, {len(state.m)} moments")

    step = state.step + 1
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_tensors, new_m, new_v = [], [], []
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p) or m.shape != g.shape:
            raise ShapeError(f"Gradient {g.shape} does not match parameter {np.shape(p)}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_tensors.append(np.asarray(p) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)

    return params.with_tensors(new_tensors), replace(state, m=new_m, v=new_v, step=step)
