"""Spatial mollification of singular coefficient fields and the weak-convergence
study of the resulting approximating solutions.

The mollified value at ``x`` is a normalized bump-weighted average of the
base field over a fixed lattice of nodes with spacing ``2 / (n * quad_points)``:

    g_n(s, x) = sum_z rho(n (x - z)) g(s, z) / sum_z rho(n (x - z)),

``rho(y) = exp(-1 / (1 - |y|^2))`` on the unit ball. Because the nodes do not
move with ``x``, ``g_n`` is smooth in ``x`` and its gradient below is exact.
It is a convex combination, so the sup bound never grows, and a symmetric
lattice makes odd fields vanish exactly at the origin.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .girsanov import phi_preset, weak_estimator
from .grid_noise import TimeGrid
from .kernel import CoefficientField, KernelSeries
from .solver import euler_estimator

MAX_DIM = 3
# Smooth cutoff: 1 on |x| <= CUTOFF_RADIUS, 0 beyond CUTOFF_RADIUS + 1.
CUTOFF_RADIUS = 10.0


def _smooth_step(u):
    """C-infinity step: 1 for u <= 0, 0 for u >= 1, with derivative."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
        b = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        da = np.where(u < 1, -a / np.where(u < 1, (1 - u) ** 2, 1.0), 0.0)
        db = np.where(u > 0, b / np.where(u > 0, u ** 2, 1.0), 0.0)
    s = a + b
    return a / s, (da * s - a * (da + db)) / s ** 2


def _cutoff(x, radius):
    r = np.linalg.norm(x, axis=-1)
    val, dval = _smooth_step(r - radius)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r[..., None] > 0, x / r[..., None], 0.0)
    return val, dval[..., None] * unit


class MollifiedField(CoefficientField):
    """Bump-mollified ``base`` at level ``n`` (radius ``1/n``); always has a gradient."""

    def __init__(self, base: CoefficientField, n: int, quad_points: int = 16, d: int = 1,
                 cutoff_radius: float | None = CUTOFF_RADIUS):
        if n < 1 or int(n) != n:
            raise ValueError("level n must be a positive integer")
        if quad_points < 2:
            raise ValueError("quad_points must be >= 2")
        if not 1 <= d <= MAX_DIM:
            raise ValueError(f"mollification is tensorized; needs 1 <= d <= {MAX_DIM}, got {d}")
        self.base_field = base
        self.level = int(n)
        self.quad_points = int(quad_points)
        self.d = int(d)
        self.cutoff_radius = cutoff_radius
        self.h = 2.0 / (self.level * self.quad_points)
        half = self.quad_points // 2 + 2
        self._offsets = np.array(list(itertools.product(range(-half, half + 1), repeat=self.d)), dtype=float)
        super().__init__(self._evaluate, base.sup_bound, self._gradient,
                         name=f"mollified[{base.name}, n={self.level}]",
                         depends_on_x=base.depends_on_x)

    def _weights(self, x):
        if x.shape[-1] != self.d:
            raise ValueError(f"field built for d={self.d}, got points of dimension {x.shape[-1]}")
        # nodes z = h * (floor(x/h) + offset); shape (..., Q, d)
        z = self.h * (np.floor(x / self.h)[..., None, :] + self._offsets)
        y = self.level * (x[..., None, :] - z)
        r2 = np.sum(y * y, axis=-1)
        inside = r2 < 1.0
        den = np.where(inside, 1.0 - r2, 1.0)
        w = np.where(inside, np.exp(-1.0 / den), 0.0)
        # d w / d x = w * (-2 y / (1 - r^2)^2) * n
        dw = np.where(inside[..., None], w[..., None] * (-2.0 * y / den[..., None] ** 2) * self.level, 0.0)
        return z, w, dw

    def _base_at(self, s, z):
        flat = z.reshape(-1, self.d)
        return self.base_field.evaluate(s, flat).reshape(z.shape)

    def _smooth(self, s, x):
        z, w, dw = self._weights(x)
        gz = self._base_at(s, z)
        W = w.sum(axis=-1)
        val = np.einsum("...q,...qa->...a", w, gz) / W[..., None]
        dW = dw.sum(axis=-2)
        num_grad = np.einsum("...qb,...qa->...ab", dw, gz)
        grad = (num_grad - val[..., :, None] * dW[..., None, :]) / W[..., None, None]
        return val, grad

    def _evaluate(self, s, x):
        val, _ = self._smooth(s, x)
        if self.cutoff_radius is None:
            return val
        chi, _ = _cutoff(x, self.cutoff_radius)
        return chi[..., None] * val

    def _gradient(self, s, x):
        val, grad = self._smooth(s, x)
        if self.cutoff_radius is None:
            return grad
        chi, dchi = _cutoff(x, self.cutoff_radius)
        return chi[..., None, None] * grad + val[..., :, None] * dchi[..., None, :]


def mollify_field(g: CoefficientField, n: int, quad_points: int = 16, d: int = 1) -> MollifiedField:
    return MollifiedField(g, n, quad_points, d)


def mollify_kernel(K: KernelSeries, n: int, quad_points: int = 16, d: int = 1) -> KernelSeries:
    """Mollify every field of ``K`` that lacks a gradient; smooth ones are kept."""
    return K.map_fields(lambda f: f if f.has_gradient else MollifiedField(f, n, quad_points, d))


def unmollify_kernel(K: KernelSeries) -> KernelSeries:
    return K.map_fields(lambda f: f.base_field if isinstance(f, MollifiedField) else f)


def _level_of(K: KernelSeries):
    for g in K.groups:
        if isinstance(g.base, MollifiedField):
            return g.base.level
    return None


@dataclass(frozen=True)
class WeakConvergenceTable:
    levels: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    reference: float
    reference_se: float

    def rows(self):
        out = [(lv, float(e), float(s)) for lv, e, s in zip(self.levels, self.estimates, self.std_errors)]
        out.append(("reference", self.reference, self.reference_se))
        return out

    def combined_se(self, k: int) -> float:
        return float(np.hypot(self.std_errors[k], self.reference_se))

    def final_within(self, z: float = 3.0) -> bool:
        """Last level within ``z`` combined SE of the reference."""
        return abs(self.estimates[-1] - self.reference) <= z * self.combined_se(-1)

    def trend_ok(self, z: float = 3.0) -> bool:
        """``|est(last) - ref| <= |est(first) - ref| + z * combined SE``."""
        first = abs(self.estimates[0] - self.reference)
        last = abs(self.estimates[-1] - self.reference)
        return last <= first + z * self.combined_se(-1)


def weak_convergence_study(K_levels: Sequence[KernelSeries], x, phi, t_index: int,
                           grid: TimeGrid, n_paths: int, seed: int,
                           reference: KernelSeries | None = None,
                           levels: Sequence | None = None) -> WeakConvergenceTable:
    """Euler estimates of ``E[phi(X_t^n)]`` per level with common random numbers,
    plus the weighted (Girsanov) estimate for the unmollified drift.
    """
    if len(K_levels) == 0:
        raise ValueError("no levels")
    phi = phi_preset(phi) if isinstance(phi, str) else phi
    if reference is None:
        reference = unmollify_kernel(K_levels[-1])
    if levels is None:
        levels = tuple(_level_of(K) or k for k, K in enumerate(K_levels))
    est, se = zip(*(euler_estimator(K, x, phi, t_index, grid, n_paths, seed) for K in K_levels))
    ref, ref_se = weak_estimator(reference, x, phi, t_index, grid, n_paths, seed)
    return WeakConvergenceTable(tuple(levels), np.array(est), np.array(se), ref, ref_se)
