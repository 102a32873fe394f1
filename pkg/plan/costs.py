"""
Token, FLOPs, memory and MFU estimates for a video DiT under TP/CP/PP/VPP.

Every estimate names its accounting mode, since the per-sample FLOPs depend
on whether backward and recompute passes are counted.
"""
import logging
import math
from dataclasses import dataclass

from kernels.shuffle import latent_shape
from utils.exceptions import ContractError
from utils.tasks import run_parallel
from .specs import ACCOUNTING_COEFFICIENTS, GB, TERA, AccountingMode, ParallelismConfig

logger = logging.getLogger(__name__)


def token_count(res):
    """Latent tokens ceil(T/8) * ceil(H/16) * ceil(W/16); no extra patchify."""
    frames, height, width = latent_shape(*res.dims)
    return frames * height * width


def flops_breakdown(arch, tokens, accounting=AccountingMode.FWD_BWD_RECOMPUTE):
    """(dense, attention) TFLOPs: a * N * tokens and b * L * d * tokens**2."""
    if tokens < 1:
        raise ContractError(f"FLOPs need at least one token, got {tokens}")
    a, b = ACCOUNTING_COEFFICIENTS[AccountingMode(accounting)]
    dense = a * arch.params * tokens / TERA
    attention = b * arch.layers * arch.hidden * float(tokens) ** 2 / TERA
    return dense, attention


def flops_per_sample(arch, tokens, model):
    """TFLOPs per sample under `model.accounting`."""
    dense, attention = flops_breakdown(arch, tokens, model.accounting)
    return dense + attention


@dataclass(frozen=True)
class MemoryBreakdown:
    params: float
    grads: float
    optimizer: float
    activations: float
    residual: float

    @property
    def total(self):
        return self.params + self.grads + self.optimizer + self.activations

    def as_dict(self):
        return {
            'params': self.params,
            'grads': self.grads,
            'optimizer': self.optimizer,
            'activations': self.activations,
            'total': self.total,
        }


def memory_footprint(arch, par, tokens, model):
    """
    Per-device memory in GB.

    params and grads are sharded over tp x pp, optimizer states additionally
    over dp (Zero1). Activations per stage layer are
    ((1 - f) * activation_coeff + 1) * tokens * d * bytes / (tp * cp), the
    "+ 1" being the layer input kept for recompute.
    """
    shard = par.tp * par.pp
    params = arch.params * model.bytes_param / shard / GB
    grads = arch.params * model.bytes_grad / shard / GB
    optimizer = arch.params * model.bytes_optimizer / (shard * par.dp) / GB

    per_layer = tokens * arch.hidden * model.bytes_activation / (par.tp * par.cp)
    stage_layers = arch.layers / par.pp
    residual = stage_layers * per_layer / GB
    kept = (1.0 - par.checkpointing) * model.activation_coeff
    activations = stage_layers * (kept + 1.0) * per_layer / GB
    return MemoryBreakdown(params, grads, optimizer, activations, residual)


def minimal_checkpointing(arch, par, tokens, model):
    """
    Smallest layer-granular checkpointing fraction that fits device memory.

    Returns:
        float or None: None when even full checkpointing does not fit
    """
    bare = memory_footprint(arch, _with_fraction(par, 0.0), tokens, model)
    available = model.device_memory_gb - (bare.params + bare.grads + bare.optimizer)
    if bare.residual > available:
        return None
    if bare.activations <= available:
        return 0.0
    exact = (bare.activations - available) / (bare.activations - bare.residual)
    layers = math.ceil(exact * arch.layers - 1e-9)
    return min(layers, arch.layers) / arch.layers


def _with_fraction(par, fraction):
    return ParallelismConfig(par.tp, par.cp, par.pp, par.vpp, fraction, par.world_size)


def communication_bytes(arch, par, tokens, model):
    """
    Per-device bytes moved per sample: (tensor parallel, context parallel).

    TP: eight sequence-parallel collectives per layer over the local sequence.
    CP: key/value gathers in forward and backward over the local heads.
    """
    stage_layers = arch.layers / par.pp
    elements = tokens * arch.hidden * model.bytes_activation
    tp_bytes = 8.0 * stage_layers * elements / par.cp * (par.tp - 1) / par.tp
    cp_bytes = 6.0 * stage_layers * elements * (par.cp - 1) / (par.cp * par.tp)
    return tp_bytes, cp_bytes


@dataclass(frozen=True)
class StrategyEstimate:
    config: ParallelismConfig
    memory: MemoryBreakdown
    mfu: float
    useful_tflops: float
    recompute_tflops: float
    stall_tflops: float
    accounting: str

    @property
    def sort_key(self):
        return (-self.mfu,) + self.config.sort_key

    def as_row(self):
        return {
            'tp': self.config.tp,
            'cp': self.config.cp,
            'pp': self.config.pp,
            'vpp': self.config.vpp,
            'ckpt': self.config.checkpointing,
            'mem_gb': self.memory.total,
            'mfu': self.mfu,
        }


def _weighted(mix):
    if not mix:
        raise ContractError("Resolution mix is empty")
    total = sum(res.weight for res in mix)
    if not total > 0:
        raise ContractError("Resolution weights sum to zero")
    return [(res, res.weight / total) for res in mix]


def estimate_mfu(arch, par, mix, model):
    """
    Model FLOPs utilisation in percent for one strategy.

    useful / (useful + recompute + bubble + communication stall), all per
    device, with the stall converted to FLOPs at peak throughput.
    """
    useful = recompute = stall = bubble = 0.0
    bubble_share = model.bubble_weight * (par.pp - 1) / (par.vpp * model.microbatches)
    for res, weight in _weighted(mix):
        tokens = token_count(res)
        dense, attention = flops_breakdown(arch, tokens, AccountingMode.FWD_BWD)
        fwd_dense, fwd_attention = flops_breakdown(arch, tokens, AccountingMode.FORWARD)
        sample_useful = (dense + attention) / par.model_parallel
        sample_recompute = par.checkpointing * (fwd_dense + fwd_attention) / par.model_parallel
        tp_bytes, cp_bytes = communication_bytes(arch, par, tokens, model)
        seconds = tp_bytes / GB * model.tp_seconds_per_gb + cp_bytes / GB * model.cp_seconds_per_gb

        useful += weight * sample_useful
        recompute += weight * sample_recompute
        bubble += weight * bubble_share * (sample_useful + sample_recompute)
        stall += weight * seconds * model.peak_tflops

    mfu = 100.0 * useful / (useful + recompute + bubble + stall)
    memory = memory_footprint(arch, par, max(token_count(res) for res in mix), model)
    logger.debug(f"tp={par.tp} cp={par.cp} pp={par.pp} vpp={par.vpp} ckpt={par.checkpointing:.4f}: "
                 f"MFU {mfu:.2f}% ({model.accounting} accounting)")
    return StrategyEstimate(par, memory, mfu, useful, recompute, stall, model.accounting)


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def enumerate_strategies(arch, world_size, mix, model):
    """
    Every TP/CP/PP/VPP split of `world_size` that fits device memory.

    TP is limited to `model.max_tp` and must divide the head count; PP and
    PP x VPP must divide the layer count. Each candidate carries its minimal
    checkpointing fraction.
    """
    tokens = max(token_count(res) for res in mix)
    candidates = []
    for tp in _divisors(world_size):
        if tp > model.max_tp or arch.heads % tp:
            continue
        for cp in _divisors(world_size // tp):
            for pp in _divisors(world_size // (tp * cp)):
                if arch.layers % pp:
                    continue
                vpps = [1] if pp == 1 else _divisors(arch.layers // pp)
                for vpp in vpps:
                    par = ParallelismConfig(tp, cp, pp, vpp, 0.0, world_size)
                    fraction = minimal_checkpointing(arch, par, tokens, model)
                    if fraction is None:
                        continue
                    candidates.append(_with_fraction(par, fraction))
    logger.info(f"{len(candidates)} feasible strategies for world size {world_size}")
    return candidates


def rank_strategies(candidates, arch, mix, model):
    """
    Estimate and sort strategies: highest MFU first, ties by (tp, cp, pp, vpp).

    Raises:
        ContractError: If there are no candidates
    """
    if not candidates:
        raise ContractError("No candidate strategies to rank")
    estimates = run_parallel(lambda par: estimate_mfu(arch, par, mix, model), candidates)
    ranked = sorted(estimates, key=lambda estimate: estimate.sort_key)
    best = ranked[0]
    logger.info(f"Best strategy tp={best.config.tp} cp={best.config.cp} pp={best.config.pp} "
                f"vpp={best.config.vpp}: MFU {best.mfu:.2f}% ({model.accounting} accounting)")
    return ranked
