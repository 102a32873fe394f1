import logging
import os

from cli.base import FlowforgeCommand
from cli.reports import format_table, write_json
from plan.costs import enumerate_strategies, rank_strategies, token_count
from plan.scenario import load_scenario
from utils.csvio import write_csv

logger = logging.getLogger(__name__)

STRATEGY_HEADER = ('tp', 'cp', 'pp', 'vpp', 'ckpt', 'mem_gb', 'mfu')


class Command(FlowforgeCommand):
    help = 'Rank TP/CP/PP/VPP strategies for a planner scenario by estimated MFU'
    output_name = 'plan'

    def add_command_arguments(self, parser):
        parser.add_argument('--scenario', help='Scenario file (default: the bundled desk scenario)')
        parser.add_argument('--top', type=int, default=10, help='Strategies to print (default: 10)')

    def run(self, config, out_dir, options):
        scenario = load_scenario(options.get('scenario'))
        mix = scenario.videos
        candidates = enumerate_strategies(scenario.arch, scenario.world_size, mix, scenario.cost)
        ranked = rank_strategies(candidates, scenario.arch, mix, scenario.cost)
        rows = [estimate.as_row() for estimate in ranked]

        write_csv(os.path.join(out_dir, 'strategies.csv'), STRATEGY_HEADER,
                  ([row[key] for key in STRATEGY_HEADER] for row in rows))
        write_csv(
            os.path.join(out_dir, 'flops.csv'),
            ('resolution', 'frames', 'height', 'width', 'tokens', 'tflops'),
            ([r.label, r.frames, r.height, r.width, token_count(r), scenario.flops(r)] for r in scenario.resolutions),
        )
        write_json(os.path.join(out_dir, 'strategies.json'), {
            'accounting': scenario.cost.accounting,
            'scenario': scenario.describe(),
            'strategies': rows,
        })

        self.stdout.write(f"FLOPs accounting: {scenario.cost.accounting}")
        self.stdout.write(format_table(STRATEGY_HEADER, [[row[key] for key in STRATEGY_HEADER]
                                                         for row in rows[:options['top']]]))
        return {'accounting': scenario.cost.accounting, 'candidates': len(rows), 'best': rows[0]}
