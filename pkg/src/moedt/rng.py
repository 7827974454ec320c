"""Deterministic random streams.

All randomness in the package flows through counter-based Philox generators
keyed by an integer tuple (seed, purpose..., counter...). Streams for distinct
keys are independent, and the same key always reproduces the same draws, which
is what makes whole pipeline runs byte-identical across reruns.

Purpose tags are small module-level ints rather than strings so keys stay
plain integer tuples.
"""
from __future__ import annotations

import numpy as np

# purpose tags; values are arbitrary but frozen (changing them changes streams)
INIT = 1
DATA = 2
BATCH = 3
DROPOUT = 4
PROMPT = 5
EVAL = 6
GROUPING = 7
SUBSET = 8
TASK_GRADS = 9
RESET = 10


def stream(*key: int) -> np.random.Generator:
    """Independent Generator for an integer key tuple."""
    for part in key:
        if not isinstance(part, (int, np.integer)):
            raise TypeError(f"rng key parts must be ints, got {part!r}")
    seq = np.random.SeedSequence([int(k) for k in key])
    return np.random.Generator(np.random.Philox(seq))
