"""Deterministic random-number streams.

All randomness in the package flows through counter-based Philox generators
derived from a single user-facing 64-bit seed.  A stream is addressed by a
tuple of small non-negative integers (its *path*); the same (seed, path)
always yields the same generator, and distinct paths yield statistically
independent streams.  Dataset generation uses the convention

    (domain_tag, record_index, batch_index)

so individual records and batches are reproducible in isolation, which is
what makes parallel generation byte-identical to the serial one.
"""

from __future__ import annotations

import numpy as np

# Domain tags for the first path component.  Keep values stable: they are
# part of the reproducibility contract of stored datasets and checkpoints.
SAMPLING = 1
INIT = 2
SHUFFLE = 3
SPLITS = 4
BASELINE = 5


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, path)``."""
    if any(p < 0 for p in path):
        raise ValueError(f"stream path must be non-negative, got {path}")
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *path: int) -> int:
    """Collapse (seed, path) to a plain 64-bit seed for APIs that take one."""
    if any(p < 0 for p in path):
        raise ValueError(f"stream path must be non-negative, got {path}")
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])
