"""Power-series Volterra kernels ``b(t, s, x) = sum_m (t - s)**m * g_m(s, x)``.

Coefficient fields are vectorized: ``evaluate(s, x)`` takes a scalar time and
an array ``x`` of shape ``(..., d)`` and returns shape ``(..., d)``;
``gradient(s, x)`` returns the spatial Jacobian with shape ``(..., d, d)``.

Terms that are scalar multiples of one shared base field form a *group*.
All downstream drift accumulation works per group on the scalar time profile
``P(r) = sum_m c_m r**m``, so the base field is evaluated once per node
regardless of how many powers multiply it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .grid_noise import TimeGrid

Coef = float | Fraction

# Profiles whose monomial form may amplify rounding beyond this factor are
# evaluated exactly and accumulated by lag convolution instead of binomially.
FLOAT_AMPLIFICATION_LIMIT = 1e8


class CoefficientField:
    """A bounded (or declared-unbounded) coefficient field ``g(s, x)``.

    Parameters
    ----------
    func : callable
        ``func(s, x) -> array`` with the same trailing shape ``(..., d)`` as ``x``.
    sup_bound : float
        Declared upper bound for the sup norm; ``np.inf`` when unbounded.
    gradient : callable, optional
        ``gradient(s, x) -> array (..., d, d)``, Jacobian in ``x``.
    name : str, optional
    depends_on_x : bool
        False for fields constant in space (enables shift-equivariance checks).
    """

    def __init__(self, func: Callable, sup_bound: float,
                 gradient: Callable | None = None, name: str = "field",
                 depends_on_x: bool = True):
        if not sup_bound >= 0:
            raise ValueError("sup_bound must be nonnegative")
        self._func = func
        self._grad = gradient
        self.sup_bound = float(sup_bound)
        self.name = name
        self.depends_on_x = depends_on_x

    def evaluate(self, s: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._func(s, x), x.shape)

    def gradient(self, s: float, x) -> np.ndarray:
        if self._grad is None:
            raise ValueError(f"field {self.name!r} has no gradient; mollify it first")
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._grad(s, x), x.shape + x.shape[-1:])

    @property
    def has_gradient(self) -> bool:
        return self._grad is not None

    @property
    def base(self) -> "CoefficientField":
        return self

    @property
    def coef(self) -> Coef:
        return 1.0

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class ScaledField(CoefficientField):
    """``coef * base``. The coefficient may be an exact ``Fraction``."""

    def __init__(self, coef: Coef, base: CoefficientField):
        if isinstance(base, ScaledField):
            coef, base = coef * base.coef, base.base
        self._coef = coef
        self._base = base
        super().__init__(
            lambda s, x: float(coef) * base.evaluate(s, x),
            abs(float(coef)) * base.sup_bound if base.sup_bound > 0 else 0.0,
            (lambda s, x: float(coef) * base.gradient(s, x)) if base.has_gradient else None,
            name=f"{float(coef):.6g}*{base.name}",
            depends_on_x=base.depends_on_x,
        )

    @property
    def base(self) -> CoefficientField:
        return self._base

    @property
    def coef(self) -> Coef:
        return self._coef


# ---------------------------------------------------------------- field presets

def constant_field(c) -> CoefficientField:
    c_arr = np.atleast_1d(np.asarray(c, dtype=float))
    return CoefficientField(
        lambda s, x: np.broadcast_to(c_arr, x.shape),
        float(np.max(np.abs(c_arr))),
        lambda s, x: np.zeros(x.shape + x.shape[-1:]),
        name=f"constant({','.join(f'{v:g}' for v in c_arr)})",
        depends_on_x=False,
    )


def linear_field(lam: float = 1.0) -> CoefficientField:
    """``g(s, x) = lam * x``. Unbounded, so the declared bound is infinite."""
    def grad(s, x):
        return lam * np.broadcast_to(np.eye(x.shape[-1]), x.shape + x.shape[-1:])
    return CoefficientField(lambda s, x: lam * x, np.inf if lam else 0.0, grad,
                            name=f"linear_x({lam:g})")


def _diag(v):
    return v[..., :, None] * np.eye(v.shape[-1])


def cos_field(scale: float = 1.0) -> CoefficientField:
    return CoefficientField(lambda s, x: scale * np.cos(x), abs(scale),
                            lambda s, x: _diag(-scale * np.sin(x)), name="cos_x")


def sin_field(scale: float = 1.0) -> CoefficientField:
    return CoefficientField(lambda s, x: scale * np.sin(x), abs(scale),
                            lambda s, x: _diag(scale * np.cos(x)), name="sin_x")


def sign_field(scale: float = 1.0) -> CoefficientField:
    """Componentwise ``sign(x)``: bounded, discontinuous, no gradient."""
    return CoefficientField(lambda s, x: scale * np.sign(x), abs(scale), None, name="sign_x")


FIELD_PRESETS = {
    "constant": lambda c=1.0, **_: constant_field(c),
    "linear_x": lambda lam=1.0, **_: linear_field(lam),
    "cos_x": lambda scale=1.0, **_: cos_field(scale),
    "sin_x": lambda scale=1.0, **_: sin_field(scale),
    "sign_x": lambda scale=1.0, **_: sign_field(scale),
}


def field_preset(name: str, **params) -> CoefficientField:
    try:
        return FIELD_PRESETS[name](**params)
    except KeyError:
        raise ValueError(f"unknown field preset {name!r}; known: {sorted(FIELD_PRESETS)}") from None


# ---------------------------------------------------------------- profiles

class Profile:
    """Scalar polynomial ``P(r) = sum c_m r**m`` multiplying one base field.

    Exact (``Fraction``) coefficients are evaluated in integer arithmetic;
    their monomial form can be too ill-conditioned for floating point.
    """

    def __init__(self, powers: Sequence[int], coefs: Sequence[Coef], horizon: float = 1.0):
        self.powers = np.asarray(powers, dtype=int)
        self.coefs = list(coefs)
        self.horizon = float(horizon)
        self.exact = any(isinstance(c, Fraction) for c in self.coefs)
        self.degree = int(self.powers.max()) if len(self.powers) else 0
        dense: list[Coef] = [0] * (self.degree + 1)
        for m, c in zip(self.powers, self.coefs):
            dense[m] = c
        if self.exact:
            fr = [Fraction(c) for c in dense]
            self._den = math.lcm(*(c.denominator for c in fr))
            self._num = [c.numerator * (self._den // c.denominator) for c in fr]
        self.dense = np.array([float(c) for c in dense])
        # sum |c_m| T^m bounds the rounding amplification of monomial evaluation
        self.amplification = float(np.sum(np.abs(self.dense) * max(self.horizon, 1.0) ** np.arange(self.degree + 1)))
        self.float_ok = not self.exact or self.amplification < FLOAT_AMPLIFICATION_LIMIT
        self._lag_cache: dict[tuple[int, float], np.ndarray] = {}

    def exact_value(self, r) -> Fraction:
        """``P(r)`` in exact rational arithmetic (``r`` taken as its exact binary value)."""
        if not self.exact:
            raise ValueError("profile has floating-point coefficients")
        p, q = Fraction(r).as_integer_ratio()
        n = self.degree
        acc = 0
        for k in range(n, -1, -1):
            acc = acc * p + self._num[k] * q ** (n - k)
        return Fraction(acc, self._den * q ** n)

    def _exact_one(self, r: float) -> float:
        p, q = float(r).as_integer_ratio()
        e = q.bit_length() - 1
        n = self.degree
        acc = 0
        for k in range(n, -1, -1):
            acc = acc * p + (self._num[k] << (e * (n - k)))
        return float(Fraction(acc, self._den << (e * n)))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if not self.float_ok:
            return np.vectorize(self._exact_one, otypes=[float])(r)
        return np.polynomial.polynomial.polyval(r, self.dense)

    def derivative(self) -> "Profile":
        keep = self.powers > 0
        return Profile(self.powers[keep] - 1,
                       [c * int(m) for c, m, k in zip(self.coefs, self.powers, keep) if k], self.horizon)

    def at_lags(self, grid: TimeGrid) -> np.ndarray:
        """``P(k*dt)`` for ``k = 0..N``; memoized per grid."""
        key = (grid.N, grid.T)
        out = self._lag_cache.get(key)
        if out is None:
            out = self(np.arange(grid.N + 1) * grid.dt)
            self._lag_cache[key] = out
        return out

    def abs_sum(self) -> float:
        return float(sum(abs(Fraction(c)) if isinstance(c, Fraction) else abs(c) for c in self.coefs))


@dataclass(frozen=True)
class Group:
    base: CoefficientField
    profile: Profile


# ---------------------------------------------------------------- kernel series

class KernelSeries:
    """Ordered power-series kernel with strictly increasing exponents."""

    def __init__(self, terms: Sequence[tuple[int, CoefficientField]], T: float):
        terms = tuple((int(m), f) for m, f in terms)
        ms = [m for m, _ in terms]
        if any(m < 0 for m in ms):
            raise ValueError("exponents must be nonnegative")
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"exponents must be strictly increasing, got {ms}")
        if not T > 0:
            raise ValueError("horizon T must be positive")
        self.terms = terms
        self.T = float(T)

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return f"KernelSeries({[(m, f.name) for m, f in self.terms]}, T={self.T:g})"

    @property
    def max_exponent(self) -> int:
        return self.terms[-1][0] if self.terms else 0

    @cached_property
    def groups(self) -> list[Group]:
        by_base: dict[int, tuple[CoefficientField, list, list]] = {}
        for m, f in self.terms:
            entry = by_base.setdefault(id(f.base), (f.base, [], []))
            entry[1].append(m)
            entry[2].append(f.coef)
        return [Group(b, Profile(ms, cs, self.T)) for b, ms, cs in by_base.values()]

    @property
    def has_gradients(self) -> bool:
        return all(f.has_gradient for _, f in self.terms)

    @property
    def depends_on_x(self) -> bool:
        return any(f.depends_on_x for _, f in self.terms)

    def partial_tail_sums(self) -> np.ndarray:
        """Running sums of ``T**m * sup_bound_m`` over the term list."""
        vals = [self.T ** m * f.sup_bound if f.sup_bound else 0.0 for m, f in self.terms]
        return np.cumsum(vals) if vals else np.zeros(0)

    def tail_bound(self) -> float:
        s = self.partial_tail_sums()
        return float(s[-1]) if s.size else 0.0

    def map_fields(self, fn: Callable[[CoefficientField], CoefficientField]) -> "KernelSeries":
        """Apply ``fn`` to each distinct base field, keeping coefficients."""
        cache: dict[int, CoefficientField] = {}
        terms = []
        for m, f in self.terms:
            nb = cache.setdefault(id(f.base), fn(f.base))
            terms.append((m, nb if f is f.base else ScaledField(f.coef, nb)))
        return KernelSeries(terms, self.T)


def eval_kernel(K: KernelSeries, t: float, s: float, x) -> np.ndarray:
    """``b(t, s, x) = sum_m (t - s)**m g_m(s, x)``."""
    if s > t:
        raise ValueError(f"kernel needs s <= t, got s={s}, t={t}")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for g in K.groups:
        out = out + float(g.profile(t - s)) * g.base.evaluate(s, x)
    return out


def eval_kernel_jacobian(K: KernelSeries, t: float, s: float, x) -> np.ndarray:
    """Spatial Jacobian ``Db(t, s, x) = sum_m (t - s)**m Dg_m(s, x)``."""
    if s > t:
        raise ValueError(f"kernel needs s <= t, got s={s}, t={t}")
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + x.shape[-1:])
    for g in K.groups:
        out = out + float(g.profile(t - s)) * g.base.gradient(s, x)
    return out


def sin_kernel(g: CoefficientField, K_max: int, T: float = 1.0) -> KernelSeries:
    """Taylor truncation of ``sin(t - s) * g(s, x)`` with ``K_max + 1`` odd terms."""
    if K_max < 0:
        raise ValueError("K_max must be >= 0")
    terms = [(2 * k + 1, ScaledField(Fraction((-1) ** k, math.factorial(2 * k + 1)), g))
             for k in range(K_max + 1)]
    return KernelSeries(terms, T)


def fractional_coefficients(alpha: float, n_max: int) -> list[Fraction]:
    """Monomial coefficients of ``sum_{n<=n_max} binom(alpha, n) (r - 1)**n``.

    ``alpha`` enters through its shortest decimal repr, so -0.4 is -2/5.
    """
    a = Fraction(repr(float(alpha)))
    binom_a = [Fraction(1)]
    for n in range(n_max):
        binom_a.append(binom_a[-1] * (a - n) / (n + 1))
    return [sum((binom_a[n] * math.comb(n, k) * (-1) ** (n - k) for n in range(k, n_max + 1)),
                Fraction(0))
            for k in range(n_max + 1)]


def fractional_kernel(alpha: float, g: CoefficientField, n_max: int, T: float = 1.0) -> KernelSeries:
    """Polynomial approximation of ``(t - s)**alpha * g(s, x)`` for ``0 < t - s < 2``.

    The truncated series stays finite as ``t - s -> 0`` where the true power
    diverges; near zero it is bounded by ``sum |c_k|``.
    """
    if not -0.5 < alpha < 0:
        raise ValueError(f"alpha must lie in (-1/2, 0), got {alpha}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if not T < 2:
        raise ValueError(f"the expansion about t - s = 1 needs T < 2, got {T}")
    coefs = fractional_coefficients(alpha, n_max)
    return KernelSeries([(k, ScaledField(c, g)) for k, c in enumerate(coefs) if c != 0], T)


# ---------------------------------------------------------------- repeated integration

def iterated_integral(samples, k: int, grid: TimeGrid, axis: int = 0) -> np.ndarray:
    """k-fold running left-point integral ``I^k[f]`` on the grid (``I^0 = f``)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    out = np.asarray(samples, dtype=float)
    if out.shape[axis] != grid.N + 1:
        raise ValueError("samples do not match the grid")
    for _ in range(k):
        out = np.moveaxis(out, axis, 0)
        acc = np.zeros_like(out)
        np.cumsum(out[:-1] * grid.dt, axis=0, out=acc[1:])
        out = np.moveaxis(acc, 0, axis)
    return out


def convolution_integral(samples, k: int, grid: TimeGrid) -> np.ndarray:
    """Left-point ``sum_{j<i} (t_i - t_j)**k f(t_j) dt`` at every node."""
    f = np.asarray(samples, dtype=float)
    flat = f.reshape(grid.N + 1, -1)
    lags = (np.arange(grid.N + 1) * grid.dt) ** k
    lags[0] = 0.0
    out = np.stack([np.convolve(flat[:, c], lags)[: grid.N + 1] for c in range(flat.shape[1])], axis=1)
    return (out * grid.dt).reshape(f.shape)


def _poly_cauchy_residual(f: Polynomial, k: int, grid: TimeGrid) -> float:
    s = Polynomial([0, 1])
    lhs = Polynomial([0])
    for j in range(k + 1):
        lhs = lhs + math.comb(k, j) * (-1) ** j * s ** (k - j) * (s ** j * f).integ(lbnd=0)
    rhs = math.factorial(k) * f.integ(k + 1, lbnd=0)
    t = grid.nodes
    return float(np.max(np.abs(lhs(t) - rhs(t))))


def cauchy_check(f, k: int, grid: TimeGrid, quadrature: str = "left") -> float:
    """Max node residual of ``int_0^t (t-s)^k f ds = k! I^{k+1}[f](t)``.

    Parameters
    ----------
    f : callable, array or numpy Polynomial
        Callable of time, or samples on the grid (shape ``(N+1,)`` or
        ``(N+1, d)``). ``quadrature="exact"`` requires a ``Polynomial``.
    quadrature : {"left", "exact"}
        ``"left"`` uses left-point sums on both sides (residual is O(dt));
        ``"exact"`` integrates a polynomial in closed form on both sides.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if quadrature == "exact":
        if not isinstance(f, Polynomial):
            raise ValueError("exact quadrature needs a numpy Polynomial")
        return _poly_cauchy_residual(f, k, grid)
    if quadrature != "left":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    samples = f(grid.nodes) if callable(f) else np.asarray(f, dtype=float)
    lhs = convolution_integral(samples, k, grid)
    rhs = math.factorial(k) * iterated_integral(samples, k + 1, grid)
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------- drift accumulation

class VolterraAccumulator:
    """Running ``sum_{j pushed} sum_g P_g(t_i - t_j) v_g(j) dt`` on a uniform grid.

    Callers push per-group values ``v_g(j)`` node by node and query at any
    later node. Two strategies per group:

    ``binomial``
        Expands ``(t_i - t_j)**m`` in powers of ``t_i`` and ``t_j`` and keeps
        accumulators ``sum_j t_j**k v(j) dt``; O(degree) per query.
    ``lag``
        Stores the history and convolves with the lag table ``P(k*dt)``;
        O(i) per query. Used for ill-conditioned exact profiles and as the
        naive O(N^2) reference.
    """

    def __init__(self, groups: Sequence[Group], grid: TimeGrid, method: str = "auto"):
        if method not in ("auto", "binomial", "naive"):
            raise ValueError(f"unknown method {method!r}")
        self.grid = grid
        self.groups = list(groups)
        self.strategy = []
        t = grid.nodes
        self._tpow = []
        self._weights = []
        self._lags = []
        for g in self.groups:
            use_lag = method == "naive" or (method == "auto" and not g.profile.float_ok)
            self.strategy.append("lag" if use_lag else "binomial")
            if use_lag:
                self._lags.append(g.profile.at_lags(grid))
                self._tpow.append(None)
                self._weights.append(None)
                continue
            deg = g.profile.degree
            tpow = t[:, None] ** np.arange(deg + 1)
            # weights[i, k] = (-1)^k sum_{m>=k} c_m C(m,k) t_i^(m-k)
            w = np.zeros((grid.N + 1, deg + 1))
            for m, c in zip(g.profile.powers, g.profile.coefs):
                c = float(c)
                for kk in range(m + 1):
                    w[:, kk] += c * math.comb(m, kk) * (-1) ** kk * tpow[:, m - kk]
            self._tpow.append(tpow)
            self._weights.append(w)
            self._lags.append(None)
        self._acc: list = [None] * len(self.groups)
        self._hist: list = [None] * len(self.groups)
        self._count = 0

    def push(self, j: int, values: Sequence[np.ndarray]):
        """Add node ``j``'s per-group values. Nodes must be pushed in order."""
        if j != self._count:
            raise ValueError(f"expected node {self._count}, got {j}")
        dt = self.grid.dt
        for gi, v in enumerate(values):
            v = np.asarray(v, dtype=float)
            if self.strategy[gi] == "lag":
                if self._hist[gi] is None:
                    self._hist[gi] = np.empty((self.grid.N + 1,) + v.shape)
                self._hist[gi][j] = v
            else:
                tp = self._tpow[gi][j]
                contrib = (tp * dt).reshape((-1,) + (1,) * v.ndim) * v
                if self._acc[gi] is None:
                    self._acc[gi] = contrib
                else:
                    self._acc[gi] += contrib
        self._count += 1

    def query(self, i: int, shape=None) -> np.ndarray:
        """Accumulated drift at node ``i`` from all pushed nodes (all ``< i``)."""
        if self._count > i:
            raise ValueError("query node must follow every pushed node")
        out = None
        dt = self.grid.dt
        for gi in range(len(self.groups)):
            if self.strategy[gi] == "lag":
                if self._hist[gi] is None:
                    continue
                n = self._count
                lag = self._lags[gi][i - np.arange(n)]
                term = np.tensordot(lag, self._hist[gi][:n], axes=(0, 0)) * dt
            else:
                if self._acc[gi] is None:
                    continue
                term = np.tensordot(self._weights[gi][i], self._acc[gi], axes=(0, 0))
            out = term if out is None else out + term
        if out is None:
            return np.zeros(shape) if shape is not None else 0.0
        return out
