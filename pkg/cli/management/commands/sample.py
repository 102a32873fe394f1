import logging
import os

from cli.base import FlowforgeCommand
from cli.builders import dataset_for, draw_samples, load_params
from cli.evaluation import mode_fractions
from cli.reports import write_samples, write_scatter

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Draw Euler samples from a trained checkpoint'
    output_name = 'sample'

    def add_command_arguments(self, parser):
        parser.add_argument('checkpoint', help='Path to a params checkpoint')
        parser.add_argument('--nfe', type=int, help='Euler steps (overrides sample.nfe)')
        parser.add_argument('--n', type=int, help='Number of samples (overrides sample.n)')
        parser.add_argument('--cfg-max', type=float, help='Guidance scale at t=0 (overrides guidance.cfg_max)')
        parser.add_argument('--shift', type=float, help='Time shift (overrides guidance.shift)')
        parser.add_argument('--condition', type=int, help='Condition id, -1 for the null condition')

    def overrides(self, options):
        flags = {
            'nfe': 'sample.nfe',
            'n': 'sample.n',
            'cfg_max': 'guidance.cfg_max',
            'shift': 'guidance.shift',
            'condition': 'sample.condition',
        }
        return [f"{key}={options[name]}" for name, key in flags.items() if options.get(name) is not None]

    def run(self, config, out_dir, options):
        params, meta = load_params(options['checkpoint'])
        streams = self.streams(config)
        samples, labels = draw_samples(params, config, streams.stream('noise'))

        write_samples(os.path.join(out_dir, 'samples.csv'), samples, labels)
        write_scatter(os.path.join(out_dir, 'samples.svg'), samples, labels,
                      title=f"{config['sample']['nfe']}-step Euler samples")
        summary = {
            'checkpoint': os.path.basename(options['checkpoint']),
            'n': samples.shape[0],
            'nfe': config['sample']['nfe'],
        }
        if meta.get('data'):
            summary['mode_fractions'] = mode_fractions(samples, dataset_for(config, meta))
        return summary
