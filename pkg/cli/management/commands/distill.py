import logging
import os

from align.reflow import distill, generate_reflow_pairs
from cli.base import FlowforgeCommand
from cli.builders import dataset_for, distill_sampler, guidance_spec, load_params
from cli.checkpoint import params_to_checkpoint, reflow_pairs_to_checkpoint, save_checkpoint
from cli.evaluation import energy_distance
from cli.reports import write_losses, write_scatter
from flow.sampling import euler_sample
from flow.schedules import StepSchedule
from flow.training import TrainSettings

logger = logging.getLogger(__name__)


class Command(FlowforgeCommand):
    help = 'Self-distil a trained teacher into a few-step student (reflow)'
    output_name = 'distill'

    def add_command_arguments(self, parser):
        parser.add_argument('teacher', help='Path to the teacher params checkpoint')
        parser.add_argument('--steps', type=int, help='Student training steps (overrides distill.steps)')

    def overrides(self, options):
        if options.get('steps') is not None:
            return [f"distill.steps={options['steps']}"]
        return []

    def run(self, config, out_dir, options):
        teacher, meta = load_params(options['teacher'])
        dataset = dataset_for(config, meta)
        section = config['distill']
        streams = self.streams(config)

        pairs = generate_reflow_pairs(teacher, section['pairs'], section['teacher_nfe'], guidance_spec(config),
                                      streams.stream('reflow'))
        settings = TrainSettings(
            steps=section['steps'],
            batch_size=section['batch_size'],
            lr=section['lr'],
            cond_dropout=0.0,
            log_every=config['train']['log_every'],
        )
        student, _, losses = distill(teacher, pairs, settings, streams, sampler=distill_sampler(config),
                                     weighting=section['weighting'])

        meta = {
            'command': 'distill',
            'data': dataset.describe(),
            'teacher': os.path.basename(options['teacher']),
            'teacher_nfe': section['teacher_nfe'],
        }
        save_checkpoint(os.path.join(out_dir, 'student.flwf'),
                        params_to_checkpoint(student, seed=config.seed, step=settings.steps, meta=meta))
        save_checkpoint(os.path.join(out_dir, 'pairs.flwf'), reflow_pairs_to_checkpoint(pairs, seed=config.seed))
        write_losses(os.path.join(out_dir, 'losses.csv'), losses)

        # Teacher and student integrate the same noise
        noise = streams.fresh('eval').standard_normal((config['sample']['n'], teacher.data_dim))
        truth, _ = dataset.sample(config['data']['n_truth'], streams.stream('truth'))
        few = StepSchedule.uniform(section['student_nfe'])
        teacher_many = euler_sample(teacher, noise, StepSchedule.uniform(section['teacher_nfe']))
        teacher_few = euler_sample(teacher, noise, few)
        student_few = euler_sample(student, noise, few)
        write_scatter(os.path.join(out_dir, 'student.svg'), student_few,
                      title=f"Student, {section['student_nfe']} steps", reference=truth[:noise.shape[0]])

        summary = {
            'pairs': len(pairs),
            'teacher_nfe': section['teacher_nfe'],
            'student_nfe': section['student_nfe'],
            'teacher_energy_distance': energy_distance(teacher_many, truth),
            'teacher_few_step_energy_distance': energy_distance(teacher_few, truth),
            'student_energy_distance': energy_distance(student_few, truth),
            'final_loss': losses[-1] if losses else None,
        }
        self.stdout.write(
            f"energy distance: teacher@{section['teacher_nfe']} {summary['teacher_energy_distance']:.5f}, "
            f"teacher@{section['student_nfe']} {summary['teacher_few_step_energy_distance']:.5f}, "
            f"student@{section['student_nfe']} {summary['student_energy_distance']:.5f}"
        )
        return summary
