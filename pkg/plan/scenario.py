"""
Planner scenario files.

Flat `section.key=value` lines with sections `arch`, `cluster`, `cost`,
`balance` and one `resolution.<name>` block per resolution:

    arch.layers=48
    cluster.world_size=32
    cost.accounting=fwd_bwd_recompute
    resolution.v204_256.frames=204
    resolution.v204_256.height=256
    resolution.v204_256.width=256
    resolution.v204_256.flops=1717.20
    balance.alpha=1
"""
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

from utils.exceptions import ConfigurationError
from utils.keyvalue import coerce, read_key_values
from .costs import flops_per_sample, token_count
from .specs import ArchSpec, CostModel, ResolutionSpec

logger = logging.getLogger(__name__)

DESK_SCENARIO = os.path.join(os.path.dirname(__file__), 'scenarios', 'desk.scenario')


@dataclass(frozen=True)
class BalanceSettings:
    alpha: Optional[float] = None
    global_batch: int = 0
    ranks: int = 8
    cache_depth: int = 4
    image_ratio: float = 0.1
    target: str = ''
    image: str = ''


CLUSTER_DEFAULTS = {'world_size': 32}
RESOLUTION_DEFAULTS = {'frames': 1, 'height': 1, 'width': 1, 'weight': 1.0, 'flops': 0.0}


@dataclass
class Scenario:
    arch: ArchSpec
    cost: CostModel
    world_size: int
    resolutions: List[ResolutionSpec]
    balance: BalanceSettings = field(default_factory=BalanceSettings)
    source: str = ''

    def resolution(self, name):
        for res in self.resolutions:
            if res.label == name:
                return res
        raise ConfigurationError(f"Scenario has no resolution '{name}'")

    @property
    def image_resolution(self):
        """The balance.image row, or the first single-frame resolution."""
        if self.balance.image:
            return self.resolution(self.balance.image)
        for res in self.resolutions:
            if res.frames == 1:
                return res
        return None

    @property
    def videos(self):
        image = self.image_resolution
        return [res for res in self.resolutions if image is None or res.label != image.label]

    def flops(self, res):
        """Scenario-given FLOPs per sample, or the cost model's estimate."""
        if res.flops is not None:
            return res.flops
        return flops_per_sample(self.arch, token_count(res), self.cost)

    def video_flops(self):
        return {res.label: self.flops(res) for res in self.videos}

    def describe(self):
        return {
            'source': self.source,
            'world_size': self.world_size,
            'arch': {f.name: getattr(self.arch, f.name) for f in fields(self.arch)},
            'cost': {f.name: getattr(self.cost, f.name) for f in fields(self.cost)},
            'resolutions': [
                {'name': r.label, 'frames': r.frames, 'height': r.height, 'width': r.width,
                 'weight': r.weight, 'flops': self.flops(r), 'tokens': token_count(r)}
                for r in self.resolutions
            ],
            'balance': {f.name: getattr(self.balance, f.name) for f in fields(self.balance)},
        }


def _section(values, prefix, defaults):
    out = {}
    for key, raw in values.items():
        name = key[len(prefix):]
        if name not in defaults:
            raise ConfigurationError(f"Unknown scenario key '{key}'")
        out[name] = coerce(raw, defaults[name], key)
    return out


def _defaults(cls):
    return {f.name: f.default for f in fields(cls)}


def parse_scenario(values, source=''):
    """
    Build a Scenario from raw key-value pairs.

    Raises:
        ConfigurationError: On unknown sections or keys, bad values, or no resolutions
    """
    grouped: Dict[str, Dict[str, str]] = {}
    for key, raw in values.items():
        section = key.split('.', 1)[0]
        if section == 'resolution':
            parts = key.split('.')
            if len(parts) != 3:
                raise ConfigurationError(f"Resolution keys look like resolution.<name>.<field>, got '{key}'")
            section = f"resolution.{parts[1]}"
        elif section not in ('arch', 'cluster', 'cost', 'balance'):
            raise ConfigurationError(f"Unknown scenario section in '{key}'")
        grouped.setdefault(section, {})[key] = raw

    arch = ArchSpec(**_section(grouped.get('arch', {}), 'arch.', _defaults(ArchSpec)))
    cost = CostModel(**_section(grouped.get('cost', {}), 'cost.', _defaults(CostModel)))
    cluster = {**CLUSTER_DEFAULTS, **_section(grouped.get('cluster', {}), 'cluster.', CLUSTER_DEFAULTS)}
    balance_defaults = _defaults(BalanceSettings)
    balance_defaults['alpha'] = 1.0
    balance = BalanceSettings(**_section(grouped.get('balance', {}), 'balance.', balance_defaults))

    resolutions = []
    for section in [s for s in grouped if s.startswith('resolution.')]:
        name = section.split('.', 1)[1]
        spec = _section(grouped[section], f"{section}.", RESOLUTION_DEFAULTS)
        missing = {'frames', 'height', 'width'} - set(spec)
        if missing:
            raise ConfigurationError(f"{section} is missing {', '.join(sorted(missing))}")
        flops = spec.pop('flops', None) or None
        resolutions.append(ResolutionSpec(name=name, flops=flops, **spec))
    if not resolutions:
        raise ConfigurationError("Scenario lists no resolutions")

    scenario = Scenario(arch, cost, cluster['world_size'], resolutions, balance, source)
    logger.debug(f"Scenario {source or '<inline>'}: {len(resolutions)} resolutions, world size {scenario.world_size}")
    return scenario


def load_scenario(path=None):
    """Read a scenario file; the bundled desk scenario when `path` is None."""
    path = path or DESK_SCENARIO
    return parse_scenario(read_key_values(path), source=os.path.basename(path))
