"""Value types for the planner: resolutions, architecture, parallelism and cost constants."""
from dataclasses import dataclass
from typing import Optional

from django.db import models

from utils.exceptions import ConfigurationError

GB = 1e9
TERA = 1e12


class AccountingMode(models.TextChoices):
    FORWARD = 'forward', 'Forward only'
    FWD_BWD = 'fwd_bwd', 'Forward and backward'
    FWD_BWD_RECOMPUTE = 'fwd_bwd_recompute', 'Forward, backward and full recompute'


# (a, b) in a * N * tokens + b * L * d * tokens**2
ACCOUNTING_COEFFICIENTS = {
    AccountingMode.FORWARD: (2.0, 4.0),
    AccountingMode.FWD_BWD: (6.0, 12.0),
    AccountingMode.FWD_BWD_RECOMPUTE: (8.0, 16.0),
}


@dataclass(frozen=True)
class ResolutionSpec:
    frames: int
    height: int
    width: int
    name: Optional[str] = None
    weight: float = 1.0
    flops: Optional[float] = None

    def __post_init__(self):
        if min(self.frames, self.height, self.width) < 1:
            raise ConfigurationError(f"Resolution dims must be positive, got {self.dims}")
        if self.weight < 0:
            raise ConfigurationError(f"Resolution weight must be non-negative, got {self.weight}")
        if self.flops is not None and not self.flops > 0:
            raise ConfigurationError(f"Resolution FLOPs must be positive, got {self.flops}")

    @property
    def dims(self):
        return (self.frames, self.height, self.width)

    @property
    def label(self):
        return self.name or f"{self.frames}x{self.height}x{self.width}"


@dataclass(frozen=True)
class ArchSpec:
    """Defaults describe the 30B-parameter video DiT."""
    layers: int = 48
    hidden: int = 6144
    heads: int = 48
    head_dim: int = 128
    params: float = 30e9

    def __post_init__(self):
        if self.hidden != self.heads * self.head_dim:
            raise ConfigurationError(
                f"hidden ({self.hidden}) must equal heads x head_dim ({self.heads} x {self.head_dim})"
            )
        if min(self.layers, self.heads, self.head_dim) < 1 or not self.params > 0:
            raise ConfigurationError("Layers, heads, head_dim and params must be positive")


@dataclass(frozen=True)
class ParallelismConfig:
    tp: int = 1
    cp: int = 1
    pp: int = 1
    vpp: int = 1
    checkpointing: float = 0.0
    world_size: int = 1

    def __post_init__(self):
        if min(self.tp, self.cp, self.pp, self.vpp, self.world_size) < 1:
            raise ConfigurationError(f"Parallel degrees must be positive: {self}")
        if not 0.0 <= self.checkpointing <= 1.0:
            raise ConfigurationError(f"Checkpointing fraction must lie in [0, 1], got {self.checkpointing}")
        if self.pp == 1 and self.vpp != 1:
            raise ConfigurationError("Virtual pipeline stages need pp > 1")
        if self.world_size % self.model_parallel:
            raise ConfigurationError(
                f"tp x cp x pp = {self.model_parallel} does not divide the world size {self.world_size}"
            )

    @property
    def model_parallel(self):
        return self.tp * self.cp * self.pp

    @property
    def dp(self):
        return self.world_size // self.model_parallel

    @property
    def sort_key(self):
        return (self.tp, self.cp, self.pp, self.vpp)


@dataclass(frozen=True)
class CostModel:
    """
    Byte sizes, hardware constants and communication knobs for the estimator.

    The per-GB communication times are calibration knobs. Setting both to
    zero removes every communication stall.
    """
    accounting: str = AccountingMode.FWD_BWD_RECOMPUTE
    bytes_param: float = 2.0
    bytes_grad: float = 4.0
    bytes_optimizer: float = 12.0
    bytes_activation: float = 2.0
    activation_coeff: float = 17.0
    device_memory_gb: float = 80.0
    peak_tflops: float = 989.0
    tp_seconds_per_gb: float = 1.0 / 300.0
    cp_seconds_per_gb: float = 1.0 / 50.0
    bubble_weight: float = 1.0
    microbatches: int = 8
    max_tp: int = 8

    def __post_init__(self):
        if self.accounting not in AccountingMode.values:
            raise ConfigurationError(f"Unknown accounting mode '{self.accounting}'")
        positive = ('bytes_param', 'bytes_grad', 'bytes_optimizer', 'bytes_activation', 'activation_coeff',
                    'device_memory_gb', 'peak_tflops', 'microbatches', 'max_tp')
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"cost.{name} must be positive, got {getattr(self, name)}")
        for name in ('tp_seconds_per_gb', 'cp_seconds_per_gb', 'bubble_weight'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"cost.{name} must be non-negative, got {getattr(self, name)}")

    @property
    def coefficients(self):
        return ACCOUNTING_COEFFICIENTS[AccountingMode(self.accounting)]
