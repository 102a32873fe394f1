"""RFC-4180 CSV helpers; floats are written with repr so they read back exactly."""
import csv
import logging

import numpy as np

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return '' if value is None else str(value)


def write_csv(path, header, rows):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\r\n')
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([format_value(value) for value in row])
            count += 1
    logger.debug(f"Wrote {count} rows to {path}")
    return path


def read_csv(path):
    """
    Returns:
        tuple: (header, list of rows), all cells as strings

    Raises:
        ConfigurationError: If the file is empty or rows are ragged
    """
    with open(path, newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    header, body = rows[0], [row for row in rows[1:] if row]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ConfigurationError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
    return header, body
