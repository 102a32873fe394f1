"""
Run configuration.

Defaults live in DEFAULTS, one mapping per section. A config file holds flat
`section.key=value` lines and `--set section.key=value` overrides are applied
on top; values take the type of their default.
"""
import copy
import logging

from align.reflow import Weighting
from flow.samplers import SamplerKind
from nnet.network import Activation
from utils.exceptions import ConfigurationError
from utils.keyvalue import coerce, parse_assignment, read_key_values
from .datasets import ToyGenerator

logger = logging.getLogger(__name__)

DEFAULTS = {
    'data': {
        'generator': ToyGenerator.TWO_GAUSSIANS.value,
        'separation': 4.0,
        'std': 0.5,
        'modes': 8,
        'radius': 4.0,
        'noise': 0.1,
        'n_truth': 10000,
    },
    'net': {
        'hidden': (128, 128, 128),
        'time_dim': 16,
        'cond_dim': 8,
        'activation': Activation.GELU.value,
    },
    'optim': {
        'lr': 1e-3,
    },
    'train': {
        'steps': 4000,
        'batch_size': 256,
        'cond_dropout': 0.1,
        'log_every': 500,
        'sampler': SamplerKind.UNIFORM.value,
        'sampler_a': 5.0,
    },
    'sampler': {
        'kind': SamplerKind.U_SHAPED_CENTERED.value,
        'a': 5.0,
    },
    'guidance': {
        'cfg_max': 1.0,
        'shift': 1.0,
    },
    'sample': {
        'n': 2000,
        'nfe': 50,
        'condition': -1,
    },
    'distill': {
        'pairs': 1000,
        'teacher_nfe': 50,
        'student_nfe': 5,
        'steps': 2000,
        'batch_size': 256,
        'lr': 1e-3,
        'weighting': Weighting.SAMPLER.value,
    },
    'dpo': {
        'beta': 0.5,
        'lr': 1e-3,
        'steps': 500,
        'batch_size': 64,
        'pairs': 512,
        'target': (2.0, 0.0),
        'radius': 1.5,
        'nfe': 20,
        'eval_samples': 2000,
    },
    'dynamics': {
        'input': '',
        'reference': '',
        'threshold': 0.2,
        'percentile': 95.0,
    },
}

CHOICES = {
    'data.generator': ToyGenerator.values,
    'net.activation': Activation.values,
    'train.sampler': SamplerKind.values,
    'sampler.kind': SamplerKind.values,
    'distill.weighting': Weighting.values,
}


class RunConfig:
    """
    Effective configuration of one command run.

    Attributes:
        sections (dict): section -> {key: typed value}, defaults included
        seed (int): Run seed shared by every RNG stream
    """

    def __init__(self, sections=None, seed=0, source=''):
        self.sections = copy.deepcopy(DEFAULTS) if sections is None else sections
        self.seed = int(seed)
        self.source = source
        if self.seed < 0:
            raise ConfigurationError(f"Seed must be non-negative, got {self.seed}")

    @classmethod
    def load(cls, path=None, overrides=(), seed=0):
        """
        Defaults, then the file at `path`, then `overrides`.

        Raises:
            FileNotFoundError: If `path` does not exist
            ConfigurationError: On unknown keys or values of the wrong type
        """
        config = cls(seed=seed, source=path or '')
        if path:
            for key, raw in read_key_values(path).items():
                config.set(key, raw)
        for text in overrides or ():
            config.set(*parse_assignment(text))
        return config

    def set(self, key, raw):
        section, _, name = key.partition('.')
        if section not in self.sections:
            raise ConfigurationError(f"Unknown config section '{section}' in '{key}'")
        if name not in self.sections[section]:
            raise ConfigurationError(f"Unknown config key '{key}'")
        value = coerce(raw, DEFAULTS[section][name], key)
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigurationError(f"Invalid value for {key}: '{value}' (choose from {', '.join(CHOICES[key])})")
        self.sections[section][name] = value

    def __getitem__(self, section):
        return self.sections[section]

    def as_dict(self):
        return {'seed': self.seed, **copy.deepcopy(self.sections)}

    def lines(self):
        """Every effective `section.key=value`, defaults included."""
        return [
            f"{section}.{name}={_show(value)}"
            for section, values in self.sections.items()
            for name, value in values.items()
        ]

    def log(self):
        logger.info(f"Effective config (seed {self.seed}{', from ' + self.source if self.source else ''}):")
        for line in self.lines():
            logger.info(f"  {line}")


def _show(value):
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    return str(value)
