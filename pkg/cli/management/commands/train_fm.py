import logging
import os

import numpy as np

from cli.base import FlowforgeCommand
from cli.builders import build_network, draw_samples, train_sampler
from cli.checkpoint import params_to_checkpoint, save_checkpoint
from cli.datasets import dataset_from_section
from cli.evaluation import sample_quality
from cli.reports import write_losses, write_samples, write_scatter
from flow.training import TrainSettings, train_flow

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Train a flow-matching velocity network on a toy dataset'
    output_name = 'train_fm'

    def add_command_arguments(self, parser):
        parser.add_argument('--steps', type=int, help='Training steps (overrides train.steps)')

    def overrides(self, options):
        if options.get('steps') is not None:
            return [f"train.steps={options['steps']}"]
        return []

    def run(self, config, out_dir, options):
        dataset = dataset_from_section(config['data'])
        streams = self.streams(config)
        params = build_network(config, dataset, streams.stream('init'))

        data_rng, noise_rng = streams.stream('data'), streams.stream('noise')

        def draw_batch(size):
            x1, y = dataset.sample(size, data_rng)
            return noise_rng.standard_normal(x1.shape), x1, y

        train = config['train']
        settings = TrainSettings(
            steps=train['steps'],
            batch_size=train['batch_size'],
            lr=config['optim']['lr'],
            cond_dropout=train['cond_dropout'],
            log_every=train['log_every'],
        )
        params, _, losses = train_flow(params, draw_batch, train_sampler(config), settings, streams)

        meta = {'command': 'train_fm', 'data': dataset.describe()}
        save_checkpoint(os.path.join(out_dir, 'model.flwf'),
                        params_to_checkpoint(params, seed=config.seed, step=settings.steps, meta=meta))
        write_losses(os.path.join(out_dir, 'losses.csv'), losses)

        samples, labels = draw_samples(params, config, streams.stream('sample'))
        write_samples(os.path.join(out_dir, 'samples.csv'), samples, labels)
        quality = sample_quality(samples, dataset, streams.stream('truth'), config['data']['n_truth'])
        truth, _ = dataset.sample(samples.shape[0], streams.stream('truth.plot'))
        write_scatter(os.path.join(out_dir, 'samples.svg'), samples, labels, title='Euler samples', reference=truth)

        summary = {
            'parameters': params.parameter_count,
            'steps': settings.steps,
            'initial_loss': losses[0] if losses else None,
            'final_loss': float(np.mean(losses[-100:])) if losses else None,
            **quality,
        }
        self.stdout.write(f"energy distance {quality['energy_distance']:.5f} after {settings.steps} steps")
        return summary
