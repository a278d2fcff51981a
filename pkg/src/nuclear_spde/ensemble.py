"""Chunked, order-independent Monte-Carlo ensembles."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .noise import LevySpec, NoiseIncrements, check_grid, sample_levy
from .rng import check_seed


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``n_paths`` paths of one noise model, simulated in fixed-size chunks.

    Chunk boundaries depend only on ``chunk_size``, never on ``workers``, and
    results are concatenated in path order, so every reduction is bitwise
    reproducible whatever the worker count.
    """

    spec: LevySpec
    grid: np.ndarray
    seed: int
    n_paths: int
    chunk_size: int = 4096
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "grid", check_grid(self.grid))
        check_seed(self.seed)
        if self.n_paths < 1:
            raise ValueError("ensemble needs at least one path")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be >= 1")

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def blocks(self):
        return [(lo, min(self.chunk_size, self.n_paths - lo))
                for lo in range(0, self.n_paths, self.chunk_size)]

    def sample(self, first: int, count: int) -> NoiseIncrements:
        return sample_levy(self.spec, self.grid, self.seed, count, first)

    def map(self, fn):
        """Apply ``fn(increments)`` per chunk; concatenate along axis 0.

        ``fn`` may return an array or a tuple of arrays with one row per path.
        """
        def job(block):
            return fn(self.sample(*block))

        if self.workers == 1:
            parts = [job(b) for b in self.blocks()]
        else:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(job, self.blocks()))
        if isinstance(parts[0], tuple):
            return tuple(np.concatenate(col) for col in zip(*parts))
        return np.concatenate(parts)


def as_chunks(source):
    """Iterate a map over either an Ensemble or a single NoiseIncrements."""
    if isinstance(source, Ensemble):
        return source.map
    if isinstance(source, NoiseIncrements):
        return lambda fn: fn(source)
    raise TypeError(f"expected Ensemble or NoiseIncrements, got {type(source).__name__}")


def mean_and_se(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty ensemble")
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("inf")
    return m, se
