import logging
import os

from cli.base import FlowforgeCommand
from cli.reports import format_table, write_json
from plan.balance import hybrid_balance
from plan.scenario import load_scenario
from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Plan hybrid-grained load balancing for one batch cache of a scenario'
    output_name = 'balance'

    def add_command_arguments(self, parser):
        parser.add_argument('--scenario', help='Scenario file (default: the bundled desk scenario)')
        parser.add_argument('--alpha', type=float, help='Fixed normalisation factor')
        parser.add_argument('--global-batch', type=int, help='Choose alpha so the batch sizes sum to this')
        parser.add_argument('--target', help='Resolution defining F_target')
        parser.add_argument('--ranks', type=int, help='Data-parallel ranks')
        parser.add_argument('--cache-depth', type=int, help='Steps held in the batch cache')
        parser.add_argument('--image-ratio', type=float, help='Images per cached video')

    def run(self, config, out_dir, options):
        scenario = load_scenario(options.get('scenario'))
        settings = scenario.balance

        def pick(name, default):
            return default if options.get(name) is None else options[name]

        global_batch = pick('global_batch', settings.global_batch)
        alpha = options.get('alpha')
        if alpha is None and options.get('global_batch') is None:
            alpha = settings.alpha
        image_ratio = pick('image_ratio', settings.image_ratio)

        image = scenario.image_resolution
        if image is None and image_ratio > 0:
            raise ConfigurationError("Scenario has no image resolution to pad with; set balance.image_ratio=0")
        image_flops = scenario.flops(image) if image is not None else 0.0

        plan = hybrid_balance(
            scenario.video_flops(),
            {res.label: res.weight for res in scenario.videos},
            image_flops,
            self.streams(config).stream('balance'),
            ranks=pick('ranks', settings.ranks),
            cache_depth=pick('cache_depth', settings.cache_depth),
            image_ratio=image_ratio,
            alpha=alpha,
            global_batch=global_batch or None,
            target=pick('target', settings.target) or None,
            accounting=scenario.cost.accounting,
        )
        document = {'scenario': scenario.source, **plan.as_dict()}
        write_json(os.path.join(out_dir, 'plan.json'), document)

        self.stdout.write(f"alpha {plan.alpha:.6g} ({plan.accounting} accounting), target {plan.target}")
        self.stdout.write(format_table(('resolution', 'B_r', 'TFLOPs/batch'), [
            [name, size, size * scenario.flops(scenario.resolution(name))] for name, size in plan.batch_sizes.items()
        ]))
        coarse = max(plan.coarse_loads) / min(plan.coarse_loads)
        self.stdout.write(f"max/min batch FLOPs {coarse:.4f} -> {plan.imbalance:.4f} with {plan.n_images} images")
        return {'alpha': plan.alpha, 'batch_sizes': plan.batch_sizes, 'imbalance': plan.imbalance,
                'coarse_imbalance': coarse, 'n_images': plan.n_images}
