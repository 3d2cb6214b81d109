"""Girsanov-weighted weak solutions.

The two-time drift collapses to a one-time process
``C(t) = sum_m m! I^m[g_m(., W)](t)`` whose running integral reproduces
``int_0^t b(t, s, W_s) ds``. Reweighting pure Brownian paths ``W = x + B`` by
the Doleans-Dade exponential of ``C`` yields expectations under the law of the
solution without ever solving the Volterra equation, which makes the weighted
estimator an oracle independent of the Euler solver.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid_noise import BrownianPath, TimeGrid, map_path_batches, sample_brownian_batch
from .kernel import KernelSeries, iterated_integral

# ESS below this fraction of n triggers a WeightDegeneracyWarning.
ESS_WARN_FRACTION = 0.1


class WeightDegeneracyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DriftFunctional:
    grid: TimeGrid
    values: np.ndarray


@dataclass(frozen=True)
class WeightedSample:
    terminal_state: np.ndarray
    log_weight: float
    path_index: int

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


# ---------------------------------------------------------------- test functions

def _first(y):
    return np.asarray(y, dtype=float)[..., 0]


PHI_PRESETS: dict[str, Callable[..., Callable]] = {
    "id": lambda: _first,
    "square": lambda: lambda y: np.sum(np.asarray(y, dtype=float) ** 2, axis=-1),
    "sin": lambda: lambda y: np.sin(_first(y)),
    "indicator_le": lambda a=0.0: lambda y: (_first(y) <= a).astype(float),
    "bounded_id": lambda a=1.0: lambda y: np.clip(_first(y), -a, a),
}


def phi_preset(name: str) -> Callable[[np.ndarray], np.ndarray]:
    """Test function by name, e.g. ``"square"`` or ``"indicator_le(0.5)"``.

    Scalar functions act on the first component; ``square`` is ``|y|^2``.
    """
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\(\s*([^)]*)\s*\))?\s*", name)
    if not m or m.group(1) not in PHI_PRESETS:
        raise ValueError(f"unknown test function {name!r}; known: {sorted(PHI_PRESETS)}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return PHI_PRESETS[m.group(1)](*args)


# ---------------------------------------------------------------- drift functional

def drift_functional(K: KernelSeries, W: np.ndarray, grid: TimeGrid) -> DriftFunctional:
    """Collapsed drift ``C(i)`` along the state path ``W`` (shape ``(..., N+1, d)``).

    Well-conditioned groups use repeated left-point integration with the
    ``m!`` Cauchy factor. Groups whose monomial form would amplify rounding
    (``Profile.float_ok`` false) use the equivalent
    ``c_0 g(t) + int_0^t P'(t-s) g(s) ds`` with exactly evaluated lags.
    """
    W = np.asarray(W, dtype=float)
    if W.shape[-2] != grid.N + 1:
        raise ValueError("state path does not match the grid")
    t = grid.nodes
    C = np.zeros(W.shape)
    for g in K.groups:
        gv = np.stack([g.base.evaluate(t[i], W[..., i, :]) for i in range(grid.N + 1)], axis=-2)
        prof = g.profile
        if not prof.float_ok:
            C += float(prof.dense[0]) * gv
            lag = prof.derivative().at_lags(grid).copy()
            lag[0] = 0.0
            flat = np.moveaxis(gv, -2, 0).reshape(grid.N + 1, -1)
            conv = np.stack([np.convolve(flat[:, c], lag)[: grid.N + 1] for c in range(flat.shape[1])],
                            axis=1) * grid.dt
            C += np.moveaxis(conv.reshape((grid.N + 1,) + gv.shape[:-2] + gv.shape[-1:]), 0, -2)
            continue
        level = gv
        done = 0
        for m, c in sorted(zip(prof.powers, prof.coefs)):
            level = iterated_integral(level, int(m) - done, grid, axis=-2)
            done = int(m)
            C += float(c) * math.factorial(int(m)) * level
    return DriftFunctional(grid, C)


def log_weight(C: DriftFunctional, B: BrownianPath, upto: int | None = None):
    """Left-point Ito log-weight over ``[0, t_upto]``.

    ``sum_i <C(i), B(i+1) - B(i)> - 1/2 sum_i |C(i)|^2 dt``; returns a float
    for a single path and an array for a batch.
    """
    n = C.grid.N if upto is None else int(upto)
    if not 0 <= n <= C.grid.N:
        raise ValueError("upto outside the grid")
    if B.values.shape[-2] != C.values.shape[-2]:
        raise ValueError("drift functional and Brownian path use different grids")
    dB = np.diff(B.values[..., : n + 1, :], axis=-2)
    Cn = C.values[..., :n, :]
    lw = np.sum(Cn * dB, axis=(-2, -1)) - 0.5 * np.sum(Cn * Cn, axis=(-2, -1)) * C.grid.dt
    return float(lw) if np.ndim(lw) == 0 else lw


def girsanov_batch(K: KernelSeries, x, grid: TimeGrid, seed: int, paths: range,
                   t_index: int, weight_index: int | None = None):
    """States ``x + B(t_index)`` and log-weights for one range of path indices."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    B = sample_brownian_batch(grid, x.size, seed, paths)
    W = x + B.values
    C = drift_functional(K, W, grid)
    lw = log_weight(C, B, t_index if weight_index is None else weight_index)
    return W[:, t_index, :], np.atleast_1d(lw)


def _check_paths(n_paths, t_index, grid):
    if n_paths < 2:
        raise ValueError("need at least 2 paths")
    if not 0 <= t_index <= grid.N:
        raise ValueError("t_index outside the grid")


def weighted_samples(K: KernelSeries, x, t_index: int, grid: TimeGrid, n_paths: int,
                     seed: int, weight_index: int | None = None) -> list[WeightedSample]:
    _check_paths(n_paths, t_index, grid)
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def run(r):
        states, lw = girsanov_batch(K, x, grid, seed, r, t_index, weight_index)
        return np.concatenate([states, lw[:, None]], axis=1)

    out = map_path_batches(run, n_paths)
    return [WeightedSample(row[:-1].copy(), float(row[-1]), k) for k, row in enumerate(out)]


def weak_estimator(K: KernelSeries, x, phi, t_index: int, grid: TimeGrid, n_paths: int,
                   seed: int, weight_index: int | None = None) -> tuple[float, float]:
    """Monte Carlo ``E[phi(x + B_t) * weight]`` and its standard error.

    ``weight_index`` defaults to ``t_index``; a later index gives the
    full-horizon variant whose expectation is the same.
    """
    _check_paths(n_paths, t_index, grid)
    phi = phi_preset(phi) if isinstance(phi, str) else phi
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def run(r):
        states, lw = girsanov_batch(K, x, grid, seed, r, t_index, weight_index)
        return phi(states) * np.exp(lw)

    vals = map_path_batches(run, n_paths)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(n_paths))


def weight_diagnostics(samples: Sequence[WeightedSample] | np.ndarray) -> dict[str, float]:
    """Mean, variance and effective sample size ``(sum w)^2 / sum w^2``.

    Accepts ``WeightedSample`` objects or an array of log-weights.
    """
    if len(samples) == 0:
        raise ValueError("no samples")
    if isinstance(samples, np.ndarray):
        lw = samples.astype(float).ravel()
    else:
        lw = np.array([s.log_weight for s in samples])
    n = lw.size
    # ESS is scale invariant, so shift by the max before exponentiating.
    w_rel = np.exp(lw - lw.max())
    ess = float(w_rel.sum() ** 2 / np.sum(w_rel ** 2))
    w = np.exp(lw)
    out = {
        "mean_weight": float(w.mean()),
        "weight_variance": float(w.var(ddof=1)) if n > 1 else 0.0,
        "effective_sample_size": ess,
        "mean_weight_se": float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
    }
    if ess < ESS_WARN_FRACTION * n:
        warnings.warn(f"effective sample size {ess:.1f} below {ESS_WARN_FRACTION:g}*n; "
                      "horizon may be too long for the weighted representation",
                      WeightDegeneracyWarning, stacklevel=2)
    return out
