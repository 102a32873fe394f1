"""Duration and aspect-ratio buckets for variable-size video batches."""
import math
from dataclasses import dataclass

from django.db import models

from utils.exceptions import ConfigurationError

LENGTH_BUCKETS = (1, 68, 136, 204)


class AspectBucket(models.TextChoices):
    LANDSCAPE = 'landscape', 'Landscape (H:W = 9:16)'
    PORTRAIT = 'portrait', 'Portrait (H:W = 16:9)'
    SQUARE = 'square', 'Square (H:W = 1:1)'


ASPECT_TARGETS = {
    AspectBucket.SQUARE: 1.0,
    AspectBucket.LANDSCAPE: 9.0 / 16.0,
    AspectBucket.PORTRAIT: 16.0 / 9.0,
}

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Bucket:
    length: int
    aspect: str


def length_bucket(frames):
    """Largest bucket not above `frames`; anything under 68 frames is treated as an image."""
    return max(bucket for bucket in LENGTH_BUCKETS if bucket <= frames)


def aspect_bucket(height, width):
    """Target ratio closest in log space; near-ties resolve to square."""
    log_ratio = math.log(height / width)
    distances = {name: abs(log_ratio - math.log(target)) for name, target in ASPECT_TARGETS.items()}
    best = min(distances.values())
    if distances[AspectBucket.SQUARE] - best <= TIE_TOLERANCE:
        return AspectBucket.SQUARE.value
    return min(distances, key=distances.get).value


def bucketize(frames, height, width):
    if min(frames, height, width) < 1:
        raise ConfigurationError(f"Video dimensions must be positive, got {(frames, height, width)}")
    return Bucket(length_bucket(frames), aspect_bucket(height, width))
