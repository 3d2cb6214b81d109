"""Pathwise Euler and Picard schemes for ``X_t = x + int_0^t b(t,s,X_s) ds + B_t``.

The Volterra integral is discretized with the left-point rule, so ``X(i)``
depends only on ``B(0..i)``. All solvers accept single paths ``(N+1, d)`` or
batches ``(P, N+1, d)`` and vectorize across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_noise import BrownianPath, TimeGrid, map_path_batches, sample_brownian_batch, zero_path
from .kernel import KernelSeries, VolterraAccumulator, eval_kernel


class PicardConvergenceError(RuntimeError):
    """Picard iteration did not reach ``tol`` within ``max_iters``."""

    def __init__(self, iterations: int, last_change: float):
        super().__init__(
            f"Picard iteration not converged after {iterations} iterations "
            f"(last sup-change {last_change:.3e}); T may be too large or the field non-Lipschitz")
        self.iterations = iterations
        self.last_change = last_change


@dataclass(frozen=True)
class SolutionPath:
    grid: TimeGrid
    values: np.ndarray
    x: np.ndarray
    iterations: int | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1, :]


def _check(K: KernelSeries, x, B: BrownianPath, grid: TimeGrid | None):
    grid = B.grid if grid is None else grid
    if B.grid.N != grid.N or B.grid.T != grid.T:
        raise ValueError("Brownian path lives on a different grid")
    d = B.d
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"initial value has shape {x.shape}, expected ({d},)")
    if B.values.shape[-2] != grid.N + 1:
        raise ValueError("Brownian values do not cover the grid")
    return grid, x


def solve_euler(K: KernelSeries, x, B: BrownianPath, grid: TimeGrid | None = None,
                method: str = "auto") -> SolutionPath:
    """Explicit Euler scheme

    ``X(i+1) = x + sum_{j<=i} b(t_{i+1}, t_j, X(j)) dt + B(i+1)``.

    ``method="auto"`` uses the binomial accumulator (O(N M^2)) for
    well-conditioned profiles and the lag convolution otherwise;
    ``"naive"`` forces the O(N^2) lag convolution for every term.
    """
    grid, x = _check(K, x, B, grid)
    Bv = B.values
    X = np.empty(Bv.shape)
    X[..., 0, :] = x + Bv[..., 0, :]
    if not K.terms:
        X[..., 1:, :] = x + Bv[..., 1:, :]
        return SolutionPath(grid, X, x)
    t = grid.nodes
    shape = Bv.shape[:-2] + Bv.shape[-1:]
    acc = VolterraAccumulator(K.groups, grid, method)
    for i in range(grid.N):
        Xi = X[..., i, :]
        acc.push(i, [g.base.evaluate(t[i], Xi) for g in K.groups])
        X[..., i + 1, :] = x + acc.query(i + 1, shape) + Bv[..., i + 1, :]
    return SolutionPath(grid, X, x)


def solve_euler_reference(K: KernelSeries, x, B: BrownianPath,
                          grid: TimeGrid | None = None) -> SolutionPath:
    """Direct double loop over ``eval_kernel``; O(N^2 M), for cross-checks only."""
    grid, x = _check(K, x, B, grid)
    t = grid.nodes
    Bv = B.values
    X = np.empty(Bv.shape)
    X[..., 0, :] = x + Bv[..., 0, :]
    for i in range(grid.N):
        drift = np.zeros(Bv.shape[:-2] + Bv.shape[-1:])
        for j in range(i + 1):
            drift = drift + eval_kernel(K, t[i + 1], t[j], X[..., j, :]) * grid.dt
        X[..., i + 1, :] = x + drift + Bv[..., i + 1, :]
    return SolutionPath(grid, X, x)


def solve_deterministic(K: KernelSeries, x, grid: TimeGrid, method: str = "auto") -> SolutionPath:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return solve_euler(K, x, zero_path(grid, x.size), grid, method)


def volterra_drift(K: KernelSeries, X: np.ndarray, grid: TimeGrid, method: str = "auto") -> np.ndarray:
    """``sum_{j<i} b(t_i, t_j, X(j)) dt`` at every node for a given path."""
    X = np.asarray(X, dtype=float)
    out = np.zeros(X.shape)
    if not K.terms:
        return out
    t = grid.nodes
    shape = X.shape[:-2] + X.shape[-1:]
    acc = VolterraAccumulator(K.groups, grid, method)
    for i in range(grid.N):
        acc.push(i, [g.base.evaluate(t[i], X[..., i, :]) for g in K.groups])
        out[..., i + 1, :] = acc.query(i + 1, shape)
    return out


def picard_solve(K: KernelSeries, x, B: BrownianPath, grid: TimeGrid | None = None,
                 max_iters: int = 200, tol: float = 1e-12, method: str = "auto") -> SolutionPath:
    """Fixed-point iteration started from the drift-free path ``x + B``.

    Raises
    ------
    PicardConvergenceError
        When the sup-norm change is still above ``tol`` after ``max_iters``.
    """
    grid, x = _check(K, x, B, grid)
    X = x + B.values
    change = np.inf
    for k in range(1, max_iters + 1):
        new = x + volterra_drift(K, X, grid, method) + B.values
        change = float(np.max(np.abs(new - X))) if new.size else 0.0
        if not np.isfinite(change):
            raise PicardConvergenceError(k, change)
        X = new
        if change <= tol:
            return SolutionPath(grid, X, x, iterations=k)
    raise PicardConvergenceError(max_iters, change)


def euler_states(K: KernelSeries, x, grid: TimeGrid, n_paths: int, seed: int,
                 t_index: int | None = None, method: str = "auto") -> np.ndarray:
    """Euler states ``X(t_index)`` for paths ``0..n_paths-1``, shape ``(n_paths, d)``.

    Paths are solved in fixed-size batches; row ``k`` uses Brownian path ``k``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t_index = grid.N if t_index is None else int(t_index)

    def run(r):
        B = sample_brownian_batch(grid, x.size, seed, r)
        return solve_euler(K, x, B, grid, method).values[:, t_index, :]

    return map_path_batches(run, n_paths)


def euler_estimator(K: KernelSeries, x, phi, t_index: int, grid: TimeGrid, n_paths: int,
                    seed: int, method: str = "auto") -> tuple[float, float]:
    """Plain Monte Carlo mean of ``phi(X(t_index))`` with its standard error."""
    from .girsanov import phi_preset

    if n_paths < 2:
        raise ValueError("need at least 2 paths")
    phi = phi_preset(phi) if isinstance(phi, str) else phi
    vals = phi(euler_states(K, x, grid, n_paths, seed, t_index, method))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n_paths))
