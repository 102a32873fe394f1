"""
Flat `section.key=value` files, read with python-dotenv.

Run configs and planner scenarios share this format:

    # comment
    train.steps=4000
    resolution.r540.frames=204
"""
import logging
import os

from dotenv import dotenv_values

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

TRUE_WORDS = {'1', 'true', 'yes', 'on'}
FALSE_WORDS = {'0', 'false', 'no', 'off'}


def read_key_values(path):
    """
    Read a key-value file into a plain dict.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigurationError: If a line has no value
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"No such config file: {path}")
    values = dotenv_values(path, interpolate=False)
    missing = [key for key, value in values.items() if value is None]
    if missing:
        raise ConfigurationError(f"{path}: keys without a value: {', '.join(missing)}")
    logger.debug(f"Read {len(values)} keys from {path}")
    return dict(values)


def parse_assignment(text):
    """'section.key=value' -> ('section.key', 'value')."""
    key, sep, value = text.partition('=')
    key = key.strip()
    if not sep or '.' not in key:
        raise ConfigurationError(f"Expected section.key=value, got '{text}'")
    return key, value.strip()


def coerce(raw, like, field):
    """
    Convert a raw string to the type of `like`.

    Raises:
        ConfigurationError: Naming `field` when the value does not parse
    """
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(like, bool):
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, (tuple, list)):
            items = [item.strip() for item in text.split(',') if item.strip()]
            element = like[0] if like else ''
            return tuple(coerce(item, element, field) for item in items)
        if like is None and text.lower() in ('', 'none', 'null'):
            return None
    except ValueError:
        raise ConfigurationError(f"Invalid value for {field}: '{raw}'")
    return text
