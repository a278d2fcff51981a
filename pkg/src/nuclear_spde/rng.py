"""Per-path random streams from a counter-based generator.

Every path owns a disjoint block of the Philox counter space, addressed by
``(path_index, stream)``.  Results therefore do not depend on the order in
which paths are simulated or on how they are split between workers.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

WIENER = 0
JUMPS = 1
INITIAL = 2

_MAX_SEED = 2 ** 64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


@lru_cache(maxsize=64)
def _philox_key(seed: int) -> int:
    lo, hi = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return int(lo) | (int(hi) << 64)


def path_generator(seed: int, path_index: int, stream: int = WIENER) -> np.random.Generator:
    """Generator for one (path, stream) cell of the counter space."""
    key = _philox_key(check_seed(seed))
    return np.random.Generator(
        np.random.Philox(key=key, counter=[0, 0, int(path_index), int(stream)]))
