"""Counter-based random streams.

Every random draw in the package comes from a generator keyed by a tuple of
non-negative integers, e.g. ``(seed, trial, iteration, worker)``. Philox is a
counter-based bit generator, so streams for different keys are independent
and a given key always reproduces the same draws regardless of the order in
which trials/workers are executed.
"""

import numpy as np


def stream(seed, *counters):
    """Return a Philox-backed generator for the key ``(seed, *counters)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(c) for c in counters]
    if any(c < 0 for c in key):
        raise ValueError("stream counters must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def as_generator(rng, seed=0):
    """Coerce ``None``/int/Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(seed)
    return stream(rng)
