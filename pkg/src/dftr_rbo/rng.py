"""Labelled random streams derived from one base seed.

Each component (Monte Carlo sampling, trust-region ball points, subproblem
multi-starts, ...) draws from its own stream so that changing how one
component consumes randomness never perturbs another.
"""

import zlib

import numpy as np

SAMPLING = "sampling"
BALL_POINTS = "ball-points"
MULTI_START = "multi-start"
COMMON_NUMBERS = "common-random-numbers"


def _label_key(label):
    return zlib.crc32(label.encode("utf-8"))


def stream(seed, label, *extra):
    """Return a generator for ``(seed, label, *extra)``.

    ``extra`` integers distinguish repeated uses of one label (for example a
    repetition index).
    """
    key = (_label_key(label),) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


class SeedStreams:
    """Lazily created, cached generators keyed by label."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._cache = {}

    def __getitem__(self, label):
        if label not in self._cache:
            self._cache[label] = stream(self.seed, label)
        return self._cache[label]

    def child_seed(self, label):
        """A fresh integer seed derived from ``label``, for sub-runs that need their own streams."""
        return int(stream(self.seed, label).integers(0, 2**63 - 1))


def as_streams(rng):
    """Accept a :class:`SeedStreams`, an int seed, or ``None``."""
    if isinstance(rng, SeedStreams):
        return rng
    if rng is None:
        return SeedStreams(0)
    if isinstance(rng, (int, np.integer)):
        return SeedStreams(int(rng))
    raise TypeError(f"expected SeedStreams or int seed, got {type(rng).__name__}")
