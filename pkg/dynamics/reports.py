"""
Loss-trajectory ingest and report output.

Input is a CSV with header `unit_id,ck0,ck1,...`, one trajectory per row.
"""
import logging
import os

import numpy as np
from django.template.loader import render_to_string

from utils.csvio import read_csv, write_csv
from utils.exceptions import ConfigurationError
from .trends import TIER_COUNT, Category, LossTrajectory

logger = logging.getLogger(__name__)

# Tier 1 (highest preference) deep blue through tier 5 dark orange
TIER_PALETTE = ('#08519c', '#6baed6', '#d9d9d9', '#fd8d3c', '#a63603')

TREND_HEADER = ('unit_id', 'a', 'b', 'delta_l', 'category', 'fluctuation', 'tier')


def read_loss_csv(path):
    """
    Returns:
        list: LossTrajectory per row, in file order

    Raises:
        FileNotFoundError: If `path` does not exist
        ConfigurationError: On a bad header or unparsable losses
    """
    header, rows = read_csv(path)
    expected = ['unit_id'] + [f"ck{i}" for i in range(len(header) - 1)]
    if header != expected or len(header) < 3:
        raise ConfigurationError(f"{path}: header must be unit_id,ck0,ck1,... with at least two checkpoints")
    trajectories = []
    for line, row in enumerate(rows, start=2):
        try:
            losses = np.array([float(cell) for cell in row[1:]])
        except ValueError:
            raise ConfigurationError(f"{path}:{line}: losses must be numbers")
        trajectories.append(LossTrajectory(row[0], losses))
    if not trajectories:
        raise ConfigurationError(f"{path} holds no trajectories")
    logger.info(f"Read {len(trajectories)} trajectories with {len(header) - 1} checkpoints from {path}")
    return trajectories


def trend_rows(analysis, tiers):
    for unit, fit, category, fluctuation, tier in zip(
            analysis.unit_ids, analysis.fits, analysis.categories, analysis.fluctuations, tiers):
        yield unit, fit.slope, fit.intercept, fit.delta_l, category, fluctuation, int(tier)


def write_trend_csv(path, analysis, tiers):
    return write_csv(path, TREND_HEADER, trend_rows(analysis, tiers))


def render_report(analysis, tiers, scores, flagged, fluctuation_threshold, score_label):
    """HTML page with the frequency table, the tier-coloured unit strip and the fluctuating units."""
    units = [
        {
            'id': unit,
            'category': Category(category).label,
            'tier': int(tier),
            'color': TIER_PALETTE[int(tier) - 1],
            'score': float(score),
            'x': 12 * i,
        }
        for i, (unit, category, tier, score) in enumerate(zip(analysis.unit_ids, analysis.categories, tiers, scores))
    ]
    context = {
        'count': len(analysis),
        'l_mean': analysis.l_mean,
        'threshold': analysis.threshold,
        'frequencies': [
            {'label': Category(value).label, 'count': count} for value, count in analysis.frequencies.items()
        ],
        'tiers': [{'tier': t + 1, 'color': TIER_PALETTE[t]} for t in range(TIER_COUNT)],
        'units': units,
        'strip_width': max(12 * len(units), 12),
        'flagged': [
            {'id': unit, 'fluctuation': float(value)}
            for unit, value, hit in zip(analysis.unit_ids, analysis.fluctuations, flagged) if hit
        ],
        'fluctuation_threshold': fluctuation_threshold,
        'score_label': score_label,
    }
    return render_to_string('dynamics/report.html', context)


def write_report(out_dir, analysis, tiers, scores, flagged, fluctuation_threshold, score_label):
    """Write trends.csv and report.html into `out_dir`; returns both paths."""
    csv_path = write_trend_csv(os.path.join(out_dir, 'trends.csv'), analysis, tiers)
    html_path = os.path.join(out_dir, 'report.html')
    with open(html_path, 'w', encoding='utf-8') as f:
        f.write(render_report(analysis, tiers, scores, flagged, fluctuation_threshold, score_label))
    logger.info(f"Dynamics report written to {html_path}")
    return csv_path, html_path
