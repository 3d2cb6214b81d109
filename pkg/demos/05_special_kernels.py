"""
Kernels given as power series
=============================

sin(t - s) g(x) is a power series in (t - s) with odd exponents; eight terms
already reach float64 resolution on [0, 1]. A truncated binomial expansion
around 1 approximates the singular (t - s)^alpha away from the origin. Its
monomial coefficients are astronomically large and alternate in sign, so the
library evaluates them in exact rational arithmetic.
"""

import numpy as np

from svde.kernel import constant_field, fractional_kernel, sin_kernel

r = np.linspace(0.0, 1.0, 11)
sk = sin_kernel(constant_field(1.0), K_max=8).groups[0].profile
print("sin series, max |error| on [0, 1]:", np.max(np.abs(sk(r) - np.sin(r))))

alpha = -0.4
prof = fractional_kernel(alpha, constant_field(1.0), n_max=200, T=1.9).groups[0].profile
print(f"largest monomial coefficient ~ {max(abs(float(c)) for c in prof.coefs):.1e}")
for y in (0.05, 0.2, 0.5, 1.0, 1.5, 1.8):
    print(f"t-s = {y:4.2f}: series {prof(y):9.5f}   (t-s)^alpha {y ** alpha:9.5f}")
