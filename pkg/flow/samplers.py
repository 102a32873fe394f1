"""
Timestep distributions on [0, 1].

uniform            p(u) = 1
u_shaped_centered  p(u) ∝ cosh(a (2u - 1))     (symmetric, heavy at both ends)
u_shaped_literal   p(u) ∝ exp(a u) + exp(-a u) (as written; increasing on [0, 1])

All draws are by inverse CDF from a uniform stream, so a draw depends only on
the generator state.
"""
from dataclasses import dataclass

import numpy as np
from django.db import models

from utils.exceptions import ConfigurationError, ContractError


class SamplerKind(models.TextChoices):
    UNIFORM = 'uniform', 'Uniform'
    U_SHAPED_CENTERED = 'u_shaped_centered', 'U-shaped, centered cosh'
    U_SHAPED_LITERAL = 'u_shaped_literal', 'U-shaped, literal exp(au) + exp(-au)'


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = SamplerKind.UNIFORM
    a: float = 5.0

    def __post_init__(self):
        if self.kind not in SamplerKind.values:
            raise ConfigurationError(f"Unknown sampler kind '{self.kind}'")
        if not self.a > 0:
            raise ConfigurationError(f"Sampler sharpness a must be positive, got {self.a}")


def density(spec, u):
    u = np.asarray(u, dtype=np.float64)
    a = spec.a
    if spec.kind == SamplerKind.UNIFORM:
        return np.ones_like(u)
    if spec.kind == SamplerKind.U_SHAPED_CENTERED:
        # ∫_0^1 cosh(a(2u-1)) du = sinh(a) / a
        return a * np.cosh(a * (2.0 * u - 1.0)) / np.sinh(a)
    return a * np.cosh(a * u) / np.sinh(a)


def cdf(spec, u):
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
    a = spec.a
    if spec.kind == SamplerKind.UNIFORM:
        return u
    if spec.kind == SamplerKind.U_SHAPED_CENTERED:
        return (np.sinh(a * (2.0 * u - 1.0)) + np.sinh(a)) / (2.0 * np.sinh(a))
    return np.sinh(a * u) / np.sinh(a)


def inverse_cdf(spec, p):
    p = np.asarray(p, dtype=np.float64)
    a = spec.a
    if spec.kind == SamplerKind.UNIFORM:
        u = p
    elif spec.kind == SamplerKind.U_SHAPED_CENTERED:
        u = 0.5 * (np.arcsinh(2.0 * np.sinh(a) * p - np.sinh(a)) / a + 1.0)
    else:
        u = np.arcsinh(p * np.sinh(a)) / a
    return np.clip(u, 0.0, 1.0)


def sample_timesteps(spec, n, rng):
    """n i.i.d. timesteps in [0, 1] drawn by inverse CDF."""
    if n < 1:
        raise ContractError(f"Need at least one timestep, got n={n}")
    return inverse_cdf(spec, rng.random(n))
