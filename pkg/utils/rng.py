"""
Splittable, counter-based random streams.

Every consumer asks for a stream by purpose name ("init", "data", "timesteps",
"noise", ...). Streams are derived from the run seed and a stable hash of the
purpose, so adding a new consumer never shifts the draws of an existing one.
"""
import zlib

import numpy as np


def purpose_key(purpose):
    """Stable 32-bit key for a stream purpose name."""
    return zlib.crc32(purpose.encode('utf-8')) & 0xFFFFFFFF


def make_generator(seed, purpose):
    """
    Build a Philox-backed generator for one purpose.

    Args:
        seed (int): Non-negative 64-bit run seed
        purpose (str): Stream name

    Returns:
        numpy.random.Generator
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(purpose_key(purpose),))
    return np.random.Generator(np.random.Philox(sequence))


class RngStreams:
    """
    Lazily created named generators sharing one run seed.

    Asking twice for the same purpose returns the same generator object, so a
    stream keeps advancing across calls within a run.
    """

    def __init__(self, seed):
        if int(seed) < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self._streams = {}

    def stream(self, purpose):
        if purpose not in self._streams:
            self._streams[purpose] = make_generator(self.seed, purpose)
        return self._streams[purpose]

    def fresh(self, purpose):
        """A new generator for `purpose`, starting from the beginning of the stream."""
        return make_generator(self.seed, purpose)

    def __repr__(self):
        return f"RngStreams(seed={self.seed}, streams={sorted(self._streams)})"
