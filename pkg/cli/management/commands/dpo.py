import logging
import os

from align.dpo import DpoConfig, preferred_fraction, synthesize_preference_pairs, train_dpo
from cli.base import FlowforgeCommand
from cli.builders import load_params
from cli.checkpoint import params_to_checkpoint, preference_pairs_to_checkpoint, save_checkpoint
from cli.reports import write_losses, write_scatter
from flow.sampling import euler_sample
from flow.schedules import StepSchedule
from utils.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Preference-tune a trained model towards a target mode with DPO'
    output_name = 'dpo'

    def add_command_arguments(self, parser):
        parser.add_argument('base', help='Path to the base params checkpoint')
        parser.add_argument('--beta', type=float, help='DPO beta (overrides dpo.beta)')
        parser.add_argument('--steps', type=int, help='DPO steps (overrides dpo.steps)')

    def overrides(self, options):
        flags = {'beta': 'dpo.beta', 'steps': 'dpo.steps'}
        return [f"{key}={options[name]}" for name, key in flags.items() if options.get(name) is not None]

    def run(self, config, out_dir, options):
        base, meta = load_params(options['base'])
        section = config['dpo']
        target = section['target']
        if len(target) != base.data_dim:
            raise ConfigurationError(f"dpo.target needs {base.data_dim} coordinates, got {len(target)}")
        streams = self.streams(config)

        pairs = synthesize_preference_pairs(base, section['pairs'], target, section['radius'],
                                            streams.stream('preferences'), nfe=section['nfe'])
        cfg = DpoConfig(beta=section['beta'], lr=section['lr'], reference=base)
        tuned, _, history = train_dpo(base.copy(), pairs, cfg, section['steps'], section['batch_size'],
                                      streams.stream('dpo'), log_every=config['train']['log_every'])

        meta = {**meta, 'command': 'dpo', 'base': os.path.basename(options['base']), 'beta': section['beta']}
        save_checkpoint(os.path.join(out_dir, 'tuned.flwf'),
                        params_to_checkpoint(tuned, seed=config.seed, step=section['steps'], meta=meta))
        save_checkpoint(os.path.join(out_dir, 'preferences.flwf'),
                        preference_pairs_to_checkpoint(pairs, seed=config.seed, meta={'target': list(target)}))
        write_losses(os.path.join(out_dir, 'dpo.csv'), [d.loss for d in history],
                     extra={'mean_z': [d.mean_z for d in history]})

        # Both models integrate the same noise
        noise = streams.fresh('eval').standard_normal((section['eval_samples'], base.data_dim))
        schedule = StepSchedule.uniform(section['nfe'])
        before = euler_sample(base, noise, schedule)
        after = euler_sample(tuned, noise, schedule)
        write_scatter(os.path.join(out_dir, 'tuned.svg'), after, title='After DPO', reference=before)

        summary = {
            'pairs': len(pairs),
            'steps': section['steps'],
            'beta': section['beta'],
            'base_preferred_fraction': preferred_fraction(before, target, section['radius']),
            'tuned_preferred_fraction': preferred_fraction(after, target, section['radius']),
            'final_loss': history[-1].loss if history else None,
        }
        summary['gain'] = summary['tuned_preferred_fraction'] - summary['base_preferred_fraction']
        self.stdout.write(
            f"preferred fraction {summary['base_preferred_fraction']:.3f} -> {summary['tuned_preferred_fraction']:.3f}"
        )
        return summary
