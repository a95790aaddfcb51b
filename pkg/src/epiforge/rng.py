"""Seeded random streams.

All randomness in the package derives from a single integer seed. Two kinds
of generators are provided:

* :func:`make_rng` returns a :class:`numpy.random.Generator` (PCG64) whose
  seed is the splitmix64 expansion of ``(seed, *keys)``. Different key
  tuples give statistically independent streams, so the network builder,
  parameter sampler and simulator never share one.
* :func:`hash_uniform` is a counter-based generator: a uniform in [0, 1) is
  a pure function of ``(seed, stream, *counters)``. The simulator uses it so
  that a transmission trial on a given (day, source, target) always sees the
  same draw, independent of evaluation order or of how many other trials
  happened that day.

Both are bit-reproducible across platforms (only 64-bit integer arithmetic
and PCG64 are involved).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# stream identifiers
NETWORK = 1
SEEDING = 2
TRANSMIT = 3
DURATION_E = 4
DURATION_I = 5
VACCINE = 6
PARAMS = 7
CURVE = 8
TRAIN = 9
INIT = 10
DROPOUT = 11
REPLICATE = 12


def splitmix64(x: int) -> int:
    """One splitmix64 output step for the state ``x``."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def mix_seed(seed: int, *keys: int) -> int:
    """Fold ``keys`` into ``seed`` and return a 64-bit derived seed."""
    h = splitmix64(int(seed) & _MASK)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(seed, *keys)))


def _splitmix_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, stream: int, *counters) -> np.ndarray:
    """Uniform draws in [0, 1) keyed by ``(seed, stream, *counters)``.

    ``counters`` are broadcast against each other; each may be a scalar or an
    integer array.
    """
    base = np.uint64(mix_seed(seed, stream))
    arrays = np.broadcast_arrays(*[np.asarray(c, dtype=np.int64) for c in counters])
    h = np.full(arrays[0].shape, base, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for c in arrays:
            h = _splitmix_array(h ^ c.astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
