"""
Run outputs: CSV tables, JSON documents and SVG scatter plots.

SVGs are rendered from the `cli/scatter.svg` template; nothing here needs a
plotting library.
"""
import json
import logging

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder
from django.template.loader import render_to_string

from utils.csvio import write_csv

logger = logging.getLogger(__name__)

PLOT_SIZE = 480
PLOT_MARGIN = 40
TICKS = 5
LABEL_COLORS = ('#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')


class FlowforgeJSONEncoder(DjangoJSONEncoder):
    """DjangoJSONEncoder that also understands numpy scalars and arrays."""

    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.bool_):
            return bool(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.floating):
            return float(o)
        return super().default(o)


def dumps(data):
    return json.dumps(data, cls=FlowforgeJSONEncoder, sort_keys=True, indent=2, ensure_ascii=False) + '\n'


def write_json(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dumps(data))
    logger.debug(f"Wrote {path}")
    return path


def write_losses(path, losses, extra=None):
    """step,loss[,extra columns...] with one row per optimisation step."""
    extra = extra or {}
    header = ['step', 'loss'] + list(extra)
    rows = (
        [step, loss] + [extra[name][step] for name in extra]
        for step, loss in enumerate(losses)
    )
    return write_csv(path, header, rows)


def write_samples(path, samples, labels=None):
    samples = np.asarray(samples, dtype=np.float64)
    header = [f"x{i}" for i in range(samples.shape[1])]
    if labels is None:
        return write_csv(path, header, samples.tolist())
    labels = np.broadcast_to(np.asarray(labels), (samples.shape[0],))
    return write_csv(path, header + ['y'], ([*row, int(label)] for row, label in zip(samples.tolist(), labels)))


def _ticks(low, high):
    return [low + (high - low) * i / (TICKS - 1) for i in range(TICKS)]


def render_scatter(samples, labels=None, title='', reference=None):
    """
    SVG 1.1 scatter of 2-D samples, optionally over grey reference points.

    Points are coloured by label when labels are given.
    """
    samples = np.asarray(samples, dtype=np.float64)
    layers = [samples] if reference is None else [samples, np.asarray(reference, dtype=np.float64)]
    stacked = np.concatenate(layers)
    low, high = stacked.min(axis=0), stacked.max(axis=0)
    span = np.where(high > low, high - low, 1.0)
    low, high = low - 0.05 * span, high + 0.05 * span
    inner = PLOT_SIZE - 2 * PLOT_MARGIN

    def project(points):
        px = PLOT_MARGIN + (points[:, 0] - low[0]) / (high[0] - low[0]) * inner
        py = PLOT_SIZE - PLOT_MARGIN - (points[:, 1] - low[1]) / (high[1] - low[1]) * inner
        return np.round(px, 2), np.round(py, 2)

    if labels is None:
        colors = [LABEL_COLORS[0]] * samples.shape[0]
    else:
        colors = [LABEL_COLORS[int(label) % len(LABEL_COLORS)] for label in np.broadcast_to(labels, samples.shape[:1])]
    px, py = project(samples)
    points = [{'x': x, 'y': y, 'color': c} for x, y, c in zip(px.tolist(), py.tolist(), colors)]
    background = []
    if reference is not None:
        rx, ry = project(layers[1])
        background = [{'x': x, 'y': y} for x, y in zip(rx.tolist(), ry.tolist())]

    axis = PLOT_SIZE - PLOT_MARGIN
    x_ticks = [{'pos': round(PLOT_MARGIN + i * inner / (TICKS - 1), 2), 'label': f"{v:.2f}"}
               for i, v in enumerate(_ticks(low[0], high[0]))]
    y_ticks = [{'pos': round(axis - i * inner / (TICKS - 1), 2), 'label': f"{v:.2f}"}
               for i, v in enumerate(_ticks(low[1], high[1]))]
    context = {
        'size': PLOT_SIZE,
        'margin': PLOT_MARGIN,
        'axis': axis,
        'title': title,
        'points': points,
        'background': background,
        'x_ticks': x_ticks,
        'y_ticks': y_ticks,
    }
    return render_to_string('cli/scatter.svg', context)


def write_scatter(path, samples, labels=None, title='', reference=None):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(render_scatter(samples, labels, title, reference))
    return path


def format_table(header, rows):
    """Fixed-width text table for command output."""
    cells = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ['  '.join(value.rjust(width) for value, width in zip(row, widths)) for row in cells]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(lines)


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return f"{value:.4f}"
    return str(value)
