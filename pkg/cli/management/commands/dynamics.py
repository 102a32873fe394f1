import logging
import os

from cli.base import FlowforgeCommand
from dynamics.reports import read_loss_csv, write_report
from dynamics.trends import classify_corpus, excess_loss_scores, selection_tiers, significant_fluctuations
from utils.exceptions import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

REFERENCE_LABEL = 'final loss minus reference final loss (stand-in selection score)'
MEAN_LABEL = 'final loss minus corpus L_mean (stand-in selection score)'


class Command(FlowforgeCommand):
    help = 'Fit, classify and report per-unit loss trajectories'
    output_name = 'dynamics'

    def add_command_arguments(self, parser):
        parser.add_argument('--input', help='Loss CSV with header unit_id,ck0,ck1,... (overrides dynamics.input)')
        parser.add_argument('--reference', help='Reference-model loss CSV with the same units')

    def overrides(self, options):
        flags = {'input': 'dynamics.input', 'reference': 'dynamics.reference'}
        return [f"{key}={options[name]}" for name, key in flags.items() if options.get(name)]

    def run(self, config, out_dir, options):
        section = config['dynamics']
        if not section['input']:
            raise ConfigurationError("dynamics.input is required")
        corpus = read_loss_csv(section['input'])
        analysis = classify_corpus(corpus, threshold=section['threshold'])
        finals = [traj.final for traj in corpus]

        if section['reference']:
            reference = {traj.unit_id: traj.final for traj in read_loss_csv(section['reference'])}
            missing = [unit for unit in analysis.unit_ids if unit not in reference]
            if missing:
                raise ContractError(f"Reference losses lack {len(missing)} units, e.g. {missing[0]}")
            scores = excess_loss_scores(finals, [reference[unit] for unit in analysis.unit_ids])
            label = REFERENCE_LABEL
        else:
            scores = excess_loss_scores(finals, [analysis.l_mean] * len(finals))
            label = MEAN_LABEL

        tiers = selection_tiers(scores)
        threshold, flagged = significant_fluctuations(analysis.fluctuations, section['percentile'])
        write_report(out_dir, analysis, tiers, scores, flagged, threshold, label)

        for category, count in analysis.frequencies.items():
            self.stdout.write(f"{category}: {count}")
        return {
            'units': len(analysis),
            'l_mean': analysis.l_mean,
            'frequencies': analysis.frequencies,
            'categories': analysis.by_unit(),
            'fluctuation_threshold': threshold,
            'fluctuating': [unit for unit, hit in zip(analysis.unit_ids, flagged) if hit],
            'score': label,
        }
