"""Uniform time grids and reproducible Brownian paths.

Every path is generated from its own counter-based Philox stream keyed by
``(seed, path_index)``, so a path never depends on which other paths were
drawn, in what order, or on how many worker threads were used.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

# Paths per work unit. Fixed so batching never depends on the worker count.
BATCH_SIZE = 4096

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization ``t_i = i*T/N`` of ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"step count N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.T / self.N
        t[-1] = self.T
        return t

    def node(self, i: int) -> float:
        if not 0 <= i <= self.N:
            raise IndexError(f"node index {i} outside 0..{self.N}")
        return self.T if i == self.N else i * self.T / self.N

    def __len__(self):
        return self.N + 1


def make_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


@dataclass(frozen=True)
class BrownianPath:
    """Brownian values on a grid.

    ``values`` has shape ``(N+1, d)`` for a single path or ``(P, N+1, d)``
    for a batch; in the batch case ``path_index`` is an integer array.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: int
    path_index: int | np.ndarray = 0

    @property
    def d(self) -> int:
        return self.values.shape[-1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    @property
    def is_batch(self) -> bool:
        return self.values.ndim == 3

    def __neg__(self):
        return BrownianPath(self.grid, -self.values, self.seed, self.path_index)


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based generator for one path: Philox keyed by (seed, index)."""
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    key = np.array([int(seed) & _MASK64, int(path_index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_dim(d):
    if int(d) != d or d < 1:
        raise ValueError(f"dimension d must be a positive integer, got {d}")
    return int(d)


def _path_values(grid: TimeGrid, d: int, seed: int, path_index: int) -> np.ndarray:
    z = path_generator(seed, path_index).standard_normal((grid.N, d))
    out = np.zeros((grid.N + 1, d))
    np.cumsum(z * np.sqrt(grid.dt), axis=0, out=out[1:])
    return out


def sample_brownian(grid: TimeGrid, d: int, seed: int, path_index: int = 0) -> BrownianPath:
    """Sample one d-dimensional Brownian path on ``grid``."""
    d = _check_dim(d)
    return BrownianPath(grid, _path_values(grid, d, seed, int(path_index)), int(seed), int(path_index))


def sample_brownian_batch(grid: TimeGrid, d: int, seed: int,
                          path_indices: Sequence[int] | np.ndarray) -> BrownianPath:
    """Sample the paths ``path_indices`` as one ``(P, N+1, d)`` batch.

    Row ``p`` is bit-identical to ``sample_brownian(grid, d, seed, path_indices[p])``.
    """
    d = _check_dim(d)
    idx = np.asarray(path_indices, dtype=np.int64).ravel()
    z = np.empty((idx.size, grid.N, d))
    for p, k in enumerate(idx):
        z[p] = path_generator(seed, int(k)).standard_normal((grid.N, d))
    out = np.zeros((idx.size, grid.N + 1, d))
    np.cumsum(z * np.sqrt(grid.dt), axis=1, out=out[:, 1:])
    return BrownianPath(grid, out, int(seed), idx)


def zero_path(grid: TimeGrid, d: int) -> BrownianPath:
    """The identically zero path (noise switched off)."""
    return BrownianPath(grid, np.zeros((grid.N + 1, _check_dim(d))), 0, 0)


def n_workers() -> int:
    """Worker count from ``SVDE_THREADS`` (unset or 0 means one per CPU)."""
    raw = os.environ.get("SVDE_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("SVDE_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def batch_ranges(n_paths: int, batch_size: int = BATCH_SIZE) -> list[range]:
    return [range(a, min(a + batch_size, n_paths)) for a in range(0, n_paths, batch_size)]


def map_path_batches(fn: Callable[[range], np.ndarray], n_paths: int,
                     batch_size: int = BATCH_SIZE, workers: int | None = None) -> np.ndarray:
    """Apply ``fn`` to consecutive path-index ranges and concatenate in order.

    ``fn`` must be pure in its range. The result is identical for any
    ``workers`` since batch boundaries and the concatenation order are fixed.
    """
    ranges = batch_ranges(n_paths, batch_size)
    workers = n_workers() if workers is None else workers
    if workers <= 1 or len(ranges) == 1:
        parts = [fn(r) for r in ranges]
    else:
        with ThreadPoolExecutor(max_workers=min(workers, len(ranges))) as pool:
            parts = list(pool.map(fn, ranges))
    return np.concatenate(parts, axis=0)
