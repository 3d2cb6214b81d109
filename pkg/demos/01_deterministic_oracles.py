"""
Deterministic Volterra equations with known solutions
=====================================================

With the noise switched off the scheme solves an ordinary Volterra integral
equation. Two kernels have closed-form solutions:

* b(t, s, x) = (t - s) x  gives  X(t) = x cosh(t)
* b(t, s, x) = x          gives  X(t) = x exp(t)

Both errors should halve when the grid is refined by a factor two.
"""

import math

from svde.grid_noise import make_grid
from svde.kernel import KernelSeries, linear_field
from svde.solver import solve_deterministic

ramp = KernelSeries([(1, linear_field(1.0))], T=1.0)
flat = KernelSeries([(0, linear_field(1.0))], T=1.0)

print(f"{'N':>7} {'cosh error':>12} {'exp error':>12}")
for N in (1000, 2000, 4000, 8000):
    grid = make_grid(1.0, N)
    e_cosh = abs(solve_deterministic(ramp, [1.0], grid).terminal[0] - math.cosh(1.0))
    e_exp = abs(solve_deterministic(flat, [1.0], grid).terminal[0] - math.e)
    print(f"{N:>7} {e_cosh:12.3e} {e_exp:12.3e}")

# The repeated-integration identity behind the weighted estimator:
# int_0^t (t-s)^k f(s) ds = k! I^{k+1}[f](t), checked with the same left-point rule.
from svde.kernel import cauchy_check

for N in (1000, 2000, 4000):
    print("cauchy residual, f(s)=s, k=2, N =", N, ":", f"{cauchy_check(lambda s: s, 2, make_grid(1.0, N)):.3e}")
