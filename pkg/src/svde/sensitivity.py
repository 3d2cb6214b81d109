"""Malliavin and flow derivatives of the Euler solution, plus the Monte Carlo
statistics behind the relative-compactness hypotheses (L2 bound, derivative
bound, Hölder continuity of ``u -> D_u X_t``).

Both derivatives solve the same linear Volterra recursion

    D(t_{i+1}) = M0 + sum_{u <= j <= i} Db(t_{i+1}, t_j, X(j)) D(t_j) dt,

started at ``u`` (Malliavin) or at 0 (flow) with ``M0 = I_d``. For the flow
derivative this is exactly the derivative of the discrete Euler map with
respect to ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid_noise import TimeGrid, map_path_batches, sample_brownian_batch
from .kernel import KernelSeries, VolterraAccumulator
from .solver import SolutionPath, solve_euler


@dataclass(frozen=True)
class DerivativeField:
    """Derivative matrices ``M(u, t)``.

    ``values`` has shape ``(..., U, T, d, d)`` where axis ``U`` follows
    ``u_indices`` and axis ``T`` follows ``t_indices``. Entries with
    ``t < u`` are zero (undefined).
    """

    grid: TimeGrid
    kind: str
    u_indices: np.ndarray
    t_indices: np.ndarray
    values: np.ndarray

    def sequence(self, u_index: int) -> np.ndarray:
        """Matrices for ``t >= u`` (requires every t index to be kept)."""
        k = int(np.flatnonzero(self.u_indices == u_index)[0])
        keep = self.t_indices >= u_index
        return self.values[..., k, keep, :, :]


def _jacobians(K: KernelSeries, s: float, x: np.ndarray) -> list[np.ndarray]:
    return [g.base.gradient(s, x) for g in K.groups]


def derivative_recursion(K: KernelSeries, X: np.ndarray, grid: TimeGrid,
                         u_indices: Sequence[int], t_indices: Sequence[int] | None = None,
                         init=None, method: str = "auto") -> np.ndarray:
    """Solve the linear Volterra recursion for every start index in ``u_indices``.

    ``X`` is a path ``(N+1, d)`` or batch ``(P, N+1, d)``. Returns shape
    ``(..., U, len(t_indices), d, d)``; ``init`` is the ``d x d`` start matrix
    (identity by default).
    """
    if not K.has_gradients:
        missing = [f.name for _, f in K.terms if not f.has_gradient]
        raise ValueError(f"fields without gradient: {missing}; mollify them first")
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    u = np.asarray(u_indices, dtype=int).ravel()
    if u.size == 0 or u.min() < 0 or u.max() > grid.N:
        raise ValueError("u indices outside the grid")
    t_keep = np.arange(grid.N + 1) if t_indices is None else np.asarray(t_indices, dtype=int).ravel()
    M0 = np.eye(d) if init is None else np.asarray(init, dtype=float).reshape(d, d)
    batch = X.shape[:-2]
    state_shape = batch + (u.size, d, d)
    out = np.zeros(batch + (u.size, t_keep.size, d, d))
    pos = {int(ti): k for k, ti in enumerate(t_keep)}

    def store(i, D):
        k = pos.get(i)
        if k is not None:
            out[..., k, :, :] = np.where((u <= i)[:, None, None], D, 0.0)

    D = np.broadcast_to(M0, state_shape).copy()
    store(0, D)
    if not K.terms:
        for i in range(1, grid.N + 1):
            store(i, D)
        return out
    t = grid.nodes
    acc = VolterraAccumulator(K.groups, grid, method)
    for i in range(grid.N):
        active = (u <= i)[:, None, None]
        Xi = X[..., i, :]
        vals = [np.where(active, J[..., None, :, :] @ D, 0.0) for J in _jacobians(K, t[i], Xi)]
        acc.push(i, vals)
        D = M0 + acc.query(i + 1, state_shape)
        store(i + 1, D)
    return out


def _path_values(X) -> tuple[np.ndarray, TimeGrid]:
    if isinstance(X, SolutionPath):
        return X.values, X.grid
    raise TypeError("expected a SolutionPath")


def malliavin_derivative(K: KernelSeries, X: SolutionPath, u_index: int,
                         method: str = "auto") -> np.ndarray:
    """``D_u X_t`` for ``t >= t_u``; shape ``(..., N+1-u, d, d)``."""
    vals, grid = _path_values(X)
    if not 0 <= u_index <= grid.N:
        raise ValueError("u_index outside the grid")
    t_idx = np.arange(u_index, grid.N + 1)
    return derivative_recursion(K, vals, grid, [u_index], t_idx, method=method)[..., 0, :, :, :]


def malliavin_field(K: KernelSeries, X: SolutionPath, u_indices: Sequence[int] | None = None,
                    t_indices: Sequence[int] | None = None, method: str = "auto") -> DerivativeField:
    vals, grid = _path_values(X)
    u = np.arange(grid.N + 1) if u_indices is None else np.asarray(u_indices, dtype=int)
    t = np.arange(grid.N + 1) if t_indices is None else np.asarray(t_indices, dtype=int)
    return DerivativeField(grid, "malliavin", u, t,
                           derivative_recursion(K, vals, grid, u, t, method=method))


def flow_derivative(K: KernelSeries, X: SolutionPath, init=None, method: str = "auto") -> np.ndarray:
    """``dX_t/dx`` along the path; shape ``(..., N+1, d, d)``."""
    vals, grid = _path_values(X)
    return derivative_recursion(K, vals, grid, [0], None, init, method)[..., 0, :, :, :]


def flow_field(K: KernelSeries, X: SolutionPath, method: str = "auto") -> DerivativeField:
    vals, grid = _path_values(X)
    return DerivativeField(grid, "flow", np.array([0]), np.arange(grid.N + 1),
                           derivative_recursion(K, vals, grid, [0], None, method=method))


# ---------------------------------------------------------------- statistics

def _terminal_derivatives(K, x, grid, n_paths, seed, u, t_index, method="auto"):
    """Per-path ``X(t_index)`` and ``D_u X(t_index)`` for each ``u``.

    Returns ``states (n, d)`` and ``derivs (n, U, d, d)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size

    def run(r):
        B = sample_brownian_batch(grid, d, seed, r)
        X = solve_euler(K, x, B, grid, method).values
        Dm = derivative_recursion(K, X, grid, u, [t_index], method=method)[:, :, 0]
        return np.concatenate([X[:, t_index, :], Dm.reshape(len(r), -1)], axis=1)

    flat = map_path_batches(run, n_paths)
    return flat[:, :d], flat[:, d:].reshape(n_paths, len(u), d, d)


def _slope(logx: np.ndarray, logy: np.ndarray) -> np.ndarray:
    """Least-squares slope along the last axis."""
    xc = logx - logx.mean()
    return ((logy - logy.mean(axis=-1, keepdims=True)) @ xc) / (xc @ xc)


@dataclass(frozen=True)
class HolderResult:
    slope: float
    lags: np.ndarray
    l2_differences: np.ndarray
    zero_difference: bool
    ci_low: float = math.nan
    ci_high: float = math.nan
    slope_se: float = math.nan

    @property
    def positive(self) -> bool:
        return bool(self.ci_low > 0)


def holder_from_samples(sq_diffs: np.ndarray, lags: np.ndarray, seed: int = 0,
                        n_boot: int = 200, level: float = 0.95) -> HolderResult:
    """Slope of log L2-difference against log lag, with a path bootstrap.

    ``sq_diffs`` holds squared norms ``|D_r X - D_v X|^2`` with shape
    ``(n_paths, n_pairs)``.
    """
    lags = np.asarray(lags, dtype=float)
    l2 = np.sqrt(sq_diffs.mean(axis=0))
    if np.any(l2 == 0):
        return HolderResult(math.nan, lags, l2, True)
    logx = np.log(lags)
    slope = float(_slope(logx, np.log(l2)))
    n = sq_diffs.shape[0]
    rng = np.random.default_rng([seed, 0xB007])
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=n_boot)
    boot_l2 = np.sqrt(counts @ sq_diffs / n)
    with np.errstate(divide="ignore"):
        boot = _slope(logx, np.log(boot_l2))
    boot = boot[np.isfinite(boot)]
    a = (1 - level) / 2
    lo, hi = np.quantile(boot, [a, 1 - a])
    return HolderResult(slope, lags, l2, False, float(lo), float(hi), float(boot.std(ddof=1)))


def holder_statistic(K: KernelSeries, x, grid: TimeGrid, n_paths: int, seed: int,
                     u_pairs: Sequence[tuple[int, int]], t_index: int | None = None,
                     n_boot: int = 200, method: str = "auto") -> HolderResult:
    """Empirical Hölder slope of ``u -> D_u X_t`` in L2 over paths."""
    pairs = [(int(r), int(v)) for r, v in u_pairs]
    if len(pairs) < 2:
        raise ValueError("need at least 2 index pairs")
    if any(r == v for r, v in pairs):
        raise ValueError("pairs need r != v")
    t_index = grid.N if t_index is None else int(t_index)
    u = np.unique(np.array(pairs).ravel())
    if u.max() > t_index:
        raise ValueError("pair indices must not exceed t_index")
    _, D = _terminal_derivatives(K, x, grid, n_paths, seed, u, t_index, method)
    where = {int(ui): k for k, ui in enumerate(u)}
    sq = np.stack([np.sum((D[:, where[r]] - D[:, where[v]]) ** 2, axis=(-2, -1)) for r, v in pairs],
                  axis=1)
    lags = np.array([abs(r - v) * grid.dt for r, v in pairs])
    return holder_from_samples(sq, lags, seed, n_boot)


def dyadic_pairs(grid: TimeGrid, exponents=range(2, 7), t_index: int | None = None):
    """Pairs centred in ``[0, t]`` with ``|r - v| = 2**-k * T`` (needs ``2**k | N``)."""
    t_index = grid.N if t_index is None else t_index
    mid = t_index // 2
    pairs = []
    for k in exponents:
        lag = grid.N // 2 ** k
        if lag * 2 ** k != grid.N or lag == 0:
            raise ValueError(f"N={grid.N} is not divisible by 2**{k}")
        pairs.append((mid + lag - lag // 2, mid - lag // 2))
    return pairs


@dataclass(frozen=True)
class LevelStatistics:
    """Monte Carlo summary of one approximation level."""

    level: float
    l2: float
    l2_se: float
    derivative_sup: float
    derivative_sup_se: float
    holder: HolderResult
    derivative_l2_by_u: np.ndarray = field(repr=False, default=None)


def level_statistics(K: KernelSeries, x, grid: TimeGrid, n_paths: int, seed: int,
                     level: float = 0, u_pairs=None, t_index: int | None = None,
                     u_stride: int | None = None, n_boot: int = 200,
                     method: str = "auto") -> LevelStatistics:
    """L2 norm of ``X_t``, sup over u of ``||D_u X_t||_L2``, and Hölder slope."""
    t_index = grid.N if t_index is None else int(t_index)
    u_pairs = dyadic_pairs(grid, t_index=t_index) if u_pairs is None else u_pairs
    stride = u_stride or max(1, t_index // 16)
    sup_u = np.arange(0, t_index + 1, stride)
    u = np.unique(np.concatenate([sup_u, np.array(u_pairs).ravel()]))
    states, D = _terminal_derivatives(K, x, grid, n_paths, seed, u, t_index, method)
    n = n_paths
    x2 = np.sum(states ** 2, axis=-1)
    l2 = math.sqrt(x2.mean())
    l2_se = float(x2.std(ddof=1) / math.sqrt(n) / (2 * l2)) if l2 > 0 else 0.0
    d2 = np.sum(D ** 2, axis=(-2, -1))
    d_l2 = np.sqrt(d2.mean(axis=0))
    k = int(np.argmax(d_l2[np.isin(u, sup_u)]))
    k = int(np.flatnonzero(np.isin(u, sup_u))[k])
    d_se = float(d2[:, k].std(ddof=1) / math.sqrt(n) / (2 * d_l2[k])) if d_l2[k] > 0 else 0.0
    where = {int(ui): j for j, ui in enumerate(u)}
    sq = np.stack([np.sum((D[:, where[r]] - D[:, where[v]]) ** 2, axis=(-2, -1))
                   for r, v in u_pairs], axis=1)
    lags = np.array([abs(r - v) * grid.dt for r, v in u_pairs])
    holder = holder_from_samples(sq, lags, seed, n_boot)
    return LevelStatistics(level, l2, l2_se, float(d_l2[k]), d_se, holder, d_l2)


@dataclass(frozen=True)
class CompactnessReport:
    sup_L2: float
    sup_L2_se: float
    sup_derivative_L2: float
    sup_derivative_L2_se: float
    holder_slope: float
    holder_slope_se: float
    growth_z: dict
    levels: tuple

    def bounded(self, z: float = 1.645) -> bool:
        """No norm keeps growing at the finest level and the smallest Hölder
        slope stays positive, both at one-sided 95% confidence by default.

        A NaN slope means zero differences, which is trivially Hölder.
        """
        if any(v > z for v in self.growth_z.values()):
            return False
        return math.isnan(self.holder_slope) or self.holder_slope - z * self.holder_slope_se > 0


def _growth_z(levels, values, ses) -> float:
    """z-score of the increase between the two finest levels.

    A bounded sequence may still rise towards its limit, so only growth that
    persists at the finest level counts; an exact increase with zero SE is +inf.
    """
    if len(levels) < 2:
        return 0.0
    order = np.argsort(np.asarray(levels, dtype=float), kind="stable")
    a, b = order[-2], order[-1]
    diff = float(values[b] - values[a])
    se = math.hypot(ses[a], ses[b])
    if se == 0:
        return math.copysign(math.inf, diff) if diff else 0.0
    return diff / se


def compactness_hypothesis_check(levels: Sequence[LevelStatistics]) -> CompactnessReport:
    """Suprema over approximation levels of the three compactness statistics.

    The Hölder entry is the smallest slope over levels (the hypothesis needs a
    uniform positive exponent).
    """
    if len(levels) == 0:
        raise ValueError("no levels")
    i = int(np.argmax([s.l2 for s in levels]))
    j = int(np.argmax([s.derivative_sup for s in levels]))
    slopes = [s.holder.slope for s in levels]
    if all(math.isnan(v) for v in slopes):
        k, hs, hse = 0, math.nan, math.nan
    else:
        k = int(np.nanargmin(slopes))
        hs, hse = slopes[k], levels[k].holder.slope_se
    lv = [s.level for s in levels]
    growth = {
        "sup_L2": _growth_z(lv, [s.l2 for s in levels], [s.l2_se for s in levels]),
        "sup_derivative_L2": _growth_z(lv, [s.derivative_sup for s in levels],
                                       [s.derivative_sup_se for s in levels]),
    }
    return CompactnessReport(levels[i].l2, levels[i].l2_se, levels[j].derivative_sup,
                             levels[j].derivative_sup_se, hs, hse, growth, tuple(levels))
