"""Config sections turned into networks, samplers, guidance and sample draws."""
import logging

import numpy as np

from flow.samplers import SamplerSpec
from flow.sampling import euler_sample
from flow.schedules import GuidanceSpec, StepSchedule
from nnet.network import init_params
from utils.exceptions import ConfigurationError
from .checkpoint import CheckpointKind, checkpoint_to_params, load_checkpoint
from .datasets import ToyDataset, dataset_from_section

logger = logging.getLogger(__name__)


def build_network(config, dataset, rng):
    net = config['net']
    return init_params(
        rng,
        data_dim=dataset.dim,
        hidden=tuple(net['hidden']),
        time_dim=net['time_dim'],
        cond_dim=net['cond_dim'],
        n_conditions=dataset.n_conditions,
        activation=net['activation'],
    )


def train_sampler(config):
    return SamplerSpec(config['train']['sampler'], config['train']['sampler_a'])


def distill_sampler(config):
    return SamplerSpec(config['sampler']['kind'], config['sampler']['a'])


def guidance_spec(config):
    """GuidanceSpec from the `guidance` section; None when cfg_max is 1 (no guidance)."""
    section = config['guidance']
    if section['cfg_max'] == 1.0:
        return None
    return GuidanceSpec(cfg_max=section['cfg_max'], shift=section['shift'])


def load_params(path):
    """(VectorFieldParams, checkpoint meta) from a params checkpoint."""
    checkpoint = load_checkpoint(path, kind=CheckpointKind.PARAMS)
    return checkpoint_to_params(checkpoint), checkpoint.meta


def dataset_for(config, meta):
    """The dataset recorded in a checkpoint, else the run config's `data` section."""
    if meta.get('data'):
        return ToyDataset(**meta['data'])
    return dataset_from_section(config['data'])


def draw_samples(params, config, rng, n=None, nfe=None):
    """
    Euler samples from `params` with the `sample` and `guidance` sections.

    `sample.condition = -1` samples the null condition without guidance.

    Returns:
        tuple: (samples, labels or None)
    """
    section = config['sample']
    n = section['n'] if n is None else n
    nfe = section['nfe'] if nfe is None else nfe
    if n < 1 or nfe < 1:
        raise ConfigurationError(f"sample.n and sample.nfe must be positive, got {n} and {nfe}")
    condition = section['condition']
    if condition >= params.n_conditions:
        raise ConfigurationError(f"sample.condition {condition} exceeds the network's {params.n_conditions} conditions")

    x0 = rng.standard_normal((n, params.data_dim))
    shift = config['guidance']['shift']
    if condition < 0:
        x = euler_sample(params, x0, StepSchedule.uniform(nfe, shift=shift))
        return x, None
    labels = np.full(n, condition, dtype=np.int64)
    x = euler_sample(params, x0, StepSchedule.uniform(nfe, shift=shift), guidance=guidance_spec(config), y=labels)
    return x, labels
