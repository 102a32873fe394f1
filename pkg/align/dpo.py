"""
Flow-matching preference optimisation against a frozen reference model.

Per-sample likelihood ratios are not available for a velocity field, so each
ratio is replaced by a difference of velocity-fit errors at a shared
(noise, t): s_m(x) = ||u_m(x_t, y, t) - (x - noise)||^2 with
x_t = (1 - t) noise + t x. For a pair (x_w, x_l),

    z = [s_ref(x_w) - s_theta(x_w)] - [s_ref(x_l) - s_theta(x_l)]
    L = -log sigmoid(beta z)

and |dL/dz| = beta (1 - sigmoid(beta z)) grows with beta when z < 0.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit

from flow.losses import predicted_velocity_node
from flow.paths import interpolate, velocity_target
from flow.sampling import euler_sample
from flow.schedules import StepSchedule
from nnet import autograd as ag
from nnet.network import VectorFieldParams, freeze, value_and_grad
from nnet.optim import adam_step, init_adam
from utils.exceptions import ConfigurationError, ContractError, DomainError, ShapeError

logger = logging.getLogger(__name__)

SHARED_T_MARGIN = 1e-3


@dataclass(frozen=True)
class PreferencePair:
    y: Optional[int]
    x_w: np.ndarray
    x_l: np.ndarray
    shared_noise: np.ndarray
    shared_t: float

    def __post_init__(self):
        shapes = {np.shape(self.x_w), np.shape(self.x_l), np.shape(self.shared_noise)}
        if len(shapes) != 1:
            raise ShapeError(f"Preference pair tensors differ in shape: {sorted(shapes)}")
        if not 0.0 < self.shared_t < 1.0:
            raise DomainError(f"shared_t must lie strictly inside (0, 1), got {self.shared_t}")


def is_frozen(params):
    return all(not np.asarray(t).flags.writeable for t in params.tensors())


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.5
    lr: float = 1e-3
    reference: Optional[VectorFieldParams] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"DPO beta must be positive, got {self.beta}")
        if not self.lr > 0:
            raise ConfigurationError(f"DPO learning rate must be positive, got {self.lr}")
        if self.reference is not None and not is_frozen(self.reference):
            object.__setattr__(self, 'reference', freeze(self.reference))


@dataclass
class DpoDiagnostics:
    loss: float
    z: np.ndarray
    grad_scale: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def mean_z(self):
        return float(np.mean(self.z))


def _stack(batch):
    if not batch:
        raise ContractError("DPO needs a non-empty batch of preference pairs")
    noise = np.stack([np.asarray(p.shared_noise, dtype=np.float64).reshape(-1) for p in batch])
    x_w = np.stack([np.asarray(p.x_w, dtype=np.float64).reshape(-1) for p in batch])
    x_l = np.stack([np.asarray(p.x_l, dtype=np.float64).reshape(-1) for p in batch])
    t = np.array([p.shared_t for p in batch], dtype=np.float64)
    labels = [p.y for p in batch]
    y = None if all(label is None for label in labels) else np.asarray(labels, dtype=np.int64)
    return noise, x_w, x_l, y, t


def _fit_errors(model, noise, x, y, t):
    x_t = interpolate(noise, x, t)
    err = predicted_velocity_node(model, x_t, t, y) - velocity_target(noise, x)
    return ag.total(ag.square(err), axis=1)


def inner_z_node(theta, ref, batch):
    """Per-pair z as a graph node (gradients flow through `theta` only)."""
    noise, x_w, x_l, y, t = _stack(batch)
    ref_w = _fit_errors(ref, noise, x_w, y, t).value
    ref_l = _fit_errors(ref, noise, x_l, y, t).value
    margin_w = ref_w - _fit_errors(theta, noise, x_w, y, t)
    margin_l = ref_l - _fit_errors(theta, noise, x_l, y, t)
    return margin_w - margin_l


def dpo_inner_z(theta, ref, pair):
    """z for a single pair; positive when theta fits x_w better than x_l relative to ref."""
    return inner_z_node(theta, ref, [pair]).item()


def _check_beta(beta):
    if not beta > 0:
        raise ConfigurationError(f"DPO beta must be positive, got {beta}")


def dpo_loss(z, beta):
    """-log sigmoid(beta z); equals log 2 at z = 0."""
    _check_beta(beta)
    out = -log_expit(beta * np.asarray(z, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def dpo_grad_scale(z, beta):
    """|dL/dz| = beta (1 - sigmoid(beta z))."""
    _check_beta(beta)
    out = beta * expit(-beta * np.asarray(z, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def dpo_value_and_grad(theta, ref, batch, beta, weights=None):
    """
    Weighted mean DPO loss over a batch and its gradient with respect to theta.

    Returns:
        tuple: (loss, gradients in theta.tensors() order, z per pair)
    """
    _check_beta(beta)
    if not batch:
        raise ContractError("DPO needs a non-empty batch of preference pairs")
    weights = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(batch),) or np.any(weights < 0) or not weights.sum() > 0:
        raise ContractError("Pair weights must be non-negative, one per pair, with a positive sum")
    captured = {}

    def closure(variables):
        z = inner_z_node(variables, ref, batch)
        captured['z'] = z.value.copy()
        per_pair = ag.softplus(z * (-beta))
        return ag.total(per_pair * weights) * (1.0 / weights.sum())

    loss, grads = value_and_grad(theta, closure)
    return loss, grads, captured['z']


def dpo_train_step(theta, ref, batch, cfg, state=None, weights=None):
    """
    One Adam step on the mean DPO loss.

    Args:
        theta (VectorFieldParams): Policy parameters
        ref (VectorFieldParams): Frozen reference snapshot (never modified)
        batch (list): PreferencePair items
        cfg (DpoConfig): beta and learning rate
        state (AdamState, optional): Optimizer state carried across steps

    Returns:
        tuple: (updated theta, AdamState, DpoDiagnostics)
    """
    if not is_frozen(ref):
        raise ContractError("The DPO reference model must be frozen")
    if state is None:
        state = init_adam(theta, lr=cfg.lr)
    loss, grads, z = dpo_value_and_grad(theta, ref, batch, cfg.beta, weights)
    theta, state = adam_step(theta, grads, state)
    scale = dpo_grad_scale(z, cfg.beta)
    logger.debug(f"DPO step {state.step}: loss {loss:.6f} mean z {np.mean(z):.6f} max |dL/dz| {np.max(scale):.4f}")
    return theta, state, DpoDiagnostics(loss=loss, z=z, grad_scale=np.atleast_1d(scale))


def train_dpo(theta, pairs, cfg, steps, batch_size, rng, log_every=0):
    """
    Minibatch DPO against `cfg.reference`.

    Returns:
        tuple: (theta, AdamState, list of DpoDiagnostics)
    """
    if cfg.reference is None:
        raise ConfigurationError("DpoConfig.reference is required for training")
    if not pairs:
        raise ContractError("No preference pairs to train on")
    state = init_adam(theta, lr=cfg.lr)
    history = []
    logger.info(f"DPO on {len(pairs)} pairs for {steps} steps (beta {cfg.beta}, lr {cfg.lr})")
    for step in range(steps):
        idx = rng.integers(0, len(pairs), size=min(batch_size, len(pairs)))
        theta, state, diagnostics = dpo_train_step(theta, cfg.reference, [pairs[i] for i in idx], cfg, state)
        history.append(diagnostics)
        if log_every and (step + 1) % log_every == 0:
            recent = np.mean([d.loss for d in history[-log_every:]])
            logger.info(f"step {step + 1}/{steps} dpo loss {recent:.5f}")
    return theta, state, history


def within_radius(samples, target, radius):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    return np.linalg.norm(samples - np.asarray(target, dtype=np.float64), axis=1) <= radius


def preferred_fraction(samples, target, radius):
    """Share of samples within `radius` of the target mode."""
    return float(np.mean(within_radius(samples, target, radius)))


def synthesize_preference_pairs(model, n, target, radius, rng, nfe=20, guidance=None, y=None,
                                pool_size=None, data_dim=None):
    """
    Build preference pairs from the model's own samples.

    Samples landing within `radius` of `target` are preferred, all others are
    not. Each pair gets a fresh shared noise and a shared t in
    [1e-3, 1 - 1e-3]. Unconditioned models are sampled with the null condition.

    Raises:
        ContractError: If the sample pool holds no preferred or no non-preferred draws
    """
    if isinstance(model, VectorFieldParams):
        data_dim = model.data_dim
        if y is None and model.cond_table is not None:
            y = model.null_condition
    elif data_dim is None:
        raise ContractError("data_dim is required for callable models")
    pool_size = pool_size or 4 * n

    noise = rng.standard_normal((pool_size, data_dim))
    pool = euler_sample(model, noise, StepSchedule.uniform(nfe), guidance=guidance, y=y)
    near = within_radius(pool, target, radius)
    preferred, rejected = np.flatnonzero(near), np.flatnonzero(~near)
    if preferred.size == 0 or rejected.size == 0:
        raise ContractError(
            f"Sample pool of {pool_size} has {preferred.size} preferred and {rejected.size} non-preferred draws"
        )
    logger.info(f"Preference pool: {preferred.size}/{pool_size} samples near the target mode")

    w_idx = rng.choice(preferred, size=n)
    l_idx = rng.choice(rejected, size=n)
    shared_noise = rng.standard_normal((n, data_dim))
    shared_t = np.clip(rng.random(n), SHARED_T_MARGIN, 1.0 - SHARED_T_MARGIN)
    label = None if y is None else int(y)
    return [
        PreferencePair(label, pool[w], pool[l], shared_noise[i], float(shared_t[i]))
        for i, (w, l) in enumerate(zip(w_idx, l_idx))
    ]
