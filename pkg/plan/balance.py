"""
Hybrid-grained data-parallel load balancing.

Coarse stage: per-resolution batch sizes B_r = floor(F_target / (alpha F_r))
bring every batch close to the target FLOPs. Fine stage: over a cache of
batches, image samples (a fixed share of the cached videos) are handed one at
a time to the batch with the smallest current FLOPs.
"""
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from utils.exceptions import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

# Quotients this close to an integer are treated as that integer
FLOOR_TOLERANCE = 1e-9


def _floor(quotient):
    return math.floor(quotient * (1.0 + FLOOR_TOLERANCE))


def coarse_batch_sizes(flops, f_target, alpha=1.0):
    """
    Args:
        flops (dict): Resolution name -> FLOPs per sample F_r
        f_target (float): Target FLOPs per batch
        alpha (float): Normalisation factor

    Returns:
        dict: Resolution name -> B_r

    Raises:
        ConfigurationError: On non-positive inputs or when some B_r is 0
    """
    if not alpha > 0 or not f_target > 0:
        raise ConfigurationError(f"alpha and F_target must be positive, got alpha={alpha} F_target={f_target}")
    sizes = {}
    for name, f_r in flops.items():
        if not f_r > 0:
            raise ConfigurationError(f"FLOPs for resolution {name} must be positive, got {f_r}")
        sizes[name] = _floor(f_target / (alpha * f_r))
    empty = [name for name, size in sizes.items() if size < 1]
    if empty:
        raise ConfigurationError(
            f"alpha={alpha} gives zero batch size for {', '.join(empty)}; lower alpha or raise F_target"
        )
    return sizes


@dataclass(frozen=True)
class AlphaChoice:
    alpha: float
    batch_sizes: Dict[str, int]
    target: int

    @property
    def total(self):
        return sum(self.batch_sizes.values())

    @property
    def exact(self):
        return self.total == self.target


def normalize_alpha(flops, f_target, global_batch):
    """
    Smallest alpha whose batch sizes sum to at most `global_batch`.

    The batch sizes only change at alpha = F_target / (k F_r), so those
    breakpoints are the candidates; each one stands for the whole interval
    of alphas sharing its batch sizes.
    """
    if global_batch < len(flops):
        raise ConfigurationError(
            f"Global batch {global_batch} cannot give each of {len(flops)} resolutions a batch"
        )
    largest = max(flops.values())
    ceiling = f_target / largest
    candidates = sorted({
        f_target / (k * f_r)
        for f_r in flops.values()
        for k in range(1, global_batch + 1)
        if f_target / (k * f_r) <= ceiling * (1.0 + FLOOR_TOLERANCE)
    })
    for alpha in candidates:
        sizes = coarse_batch_sizes(flops, f_target, alpha)
        if sum(sizes.values()) <= global_batch:
            choice = AlphaChoice(alpha, sizes, global_batch)
            if not choice.exact:
                logger.warning(f"No alpha reaches global batch {global_batch} exactly; using {choice.total}")
            return choice
    raise ConfigurationError(f"No alpha keeps every batch non-empty within global batch {global_batch}")


@dataclass(frozen=True)
class PadResult:
    loads: List[float]
    counts: List[int]


def greedy_pad(batch_loads, n_images, image_flops):
    """
    Place identical image items one by one on the currently lightest batch.

    Ties go to the lowest batch index.
    """
    if n_images < 0:
        raise ContractError(f"Image count must be non-negative, got {n_images}")
    if image_flops < 0:
        raise ContractError(f"Image FLOPs must be non-negative, got {image_flops}")
    loads = [float(load) for load in batch_loads]
    counts = [0] * len(loads)
    if n_images and not loads:
        raise ContractError("Cannot pad an empty list of batches")

    heap = [(load, i) for i, load in enumerate(loads)]
    heapq.heapify(heap)
    for _ in range(n_images):
        load, i = heapq.heappop(heap)
        loads[i] = load + image_flops
        counts[i] += 1
        heapq.heappush(heap, (loads[i], i))
    return PadResult(loads, counts)


@dataclass
class BatchPlan:
    alpha: float
    batch_sizes: Dict[str, int]
    assignments: List[str]
    coarse_loads: List[float]
    loads: List[float]
    image_counts: List[int]
    image_flops: float
    target: str
    accounting: str
    meta: dict = field(default_factory=dict)

    @property
    def n_images(self):
        return sum(self.image_counts)

    @property
    def imbalance(self):
        """max / min FLOPs over the cached batches after padding."""
        return max(self.loads) / min(self.loads)

    def as_dict(self):
        return {
            'alpha': self.alpha,
            'accounting': self.accounting,
            'target': self.target,
            'batch_sizes': self.batch_sizes,
            'image_flops': self.image_flops,
            'n_images': self.n_images,
            'batches': [
                {'resolution': name, 'coarse_flops': coarse, 'flops': load, 'images': images}
                for name, coarse, load, images in zip(
                    self.assignments, self.coarse_loads, self.loads, self.image_counts)
            ],
            'imbalance': self.imbalance,
            'meta': self.meta,
        }


def hybrid_balance(flops, weights, image_flops, rng, ranks=8, cache_depth=4, image_ratio=0.1,
                   alpha=None, global_batch=None, target=None, accounting=''):
    """
    Plan one cache of `cache_depth` steps over `ranks` data-parallel ranks.

    Args:
        flops (dict): Video resolution name -> F_r
        weights (dict): Resolution name -> sampling weight of the data mix
        image_flops (float): FLOPs of one image sample
        rng (numpy.random.Generator): Draws the resolution of every cached batch
        alpha (float, optional): Fixed normalisation; otherwise chosen from `global_batch`, or 1
        global_batch (int, optional): Target for the sum of B_r
        target (str, optional): Resolution whose single sample defines F_target (default: largest F_r)

    Returns:
        BatchPlan
    """
    if not flops:
        raise ContractError("No video resolutions to balance")
    if ranks < 1 or cache_depth < 1 or image_ratio < 0:
        raise ConfigurationError(f"Invalid cache: ranks={ranks} cache_depth={cache_depth} image_ratio={image_ratio}")
    target = target or max(flops, key=flops.get)
    if target not in flops:
        raise ConfigurationError(f"Target resolution '{target}' is not among {sorted(flops)}")
    f_target = flops[target]

    if alpha is None and global_batch:
        choice = normalize_alpha(flops, f_target, global_batch)
        alpha, sizes = choice.alpha, choice.batch_sizes
    else:
        alpha = 1.0 if alpha is None else alpha
        sizes = coarse_batch_sizes(flops, f_target, alpha)

    names = list(flops)
    p = np.array([weights.get(name, 0.0) for name in names], dtype=np.float64)
    if np.any(p < 0) or not p.sum() > 0:
        raise ConfigurationError("Resolution weights must be non-negative with a positive sum")
    picks = rng.choice(len(names), size=ranks * cache_depth, p=p / p.sum())
    assignments = [names[i] for i in picks]
    coarse = [sizes[name] * flops[name] for name in assignments]

    videos = sum(sizes[name] for name in assignments)
    n_images = math.ceil(image_ratio * videos)
    padded = greedy_pad(coarse, n_images, image_flops)
    logger.info(f"alpha={alpha:.6g}: {videos} videos and {n_images} images over {len(coarse)} batches, "
                f"max/min FLOPs {max(coarse) / min(coarse):.3f} -> {max(padded.loads) / min(padded.loads):.3f}")
    return BatchPlan(alpha, sizes, assignments, coarse, padded.loads, padded.counts, image_flops, target,
                     accounting, meta={'ranks': ranks, 'cache_depth': cache_depth, 'image_ratio': image_ratio})
