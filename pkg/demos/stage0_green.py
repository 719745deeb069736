"""Stage-0 Green's function on a non-resonant interval.

With a slowly rotating frequency the phases theta + n*omega stay far from
+-theta0 on a long interval, and the Neumann series bounds for T^{-1} can be
compared with the exact inverse.  Run with ``python3 demos/stage0_green.py``.
"""
import math

import numpy as np

from qplab.core import ModelParams, assemble_T, cube
from qplab.green import check_zero_good, delta0, fit_decay, gamma0, invert, neumann_certificate

eps = 1e-4
omega = 1.0 / (1000.0 + (math.sqrt(5) - 1) / 2)
model = ModelParams(eps=eps, omega=(omega,), theta=0.0, energy=-1.99)
region = cube(20, d=1)
T = assemble_T(region, model)

print(f"delta0 = {delta0(eps):.4f}, gamma0 = {gamma0(eps):.4f}")
print("0-good:", check_zero_good(region, model).is_good)

G = invert(T)
cert = neumann_certificate(T, G=G)
print(f"||G|| = {G.op_norm:.4f}  (bound {cert.norm_bound:.4f})")
print(f"smallest log-slack of |G(x,y)| against exp(-gamma0 |x-y|): {cert.decay_margin:.3f}")

fit = fit_decay(G, threshold_radius=2)
print(f"measured decay rate {fit.rate:.3f} vs gamma0 {gamma0(eps):.3f}")

# decay of the first row, one line per distance
row = np.abs(G.entries[0])
for dist in (0, 1, 2, 5, 10):
    print(f"  |G(-20, {-20 + dist:>3})| = {row[dist]:.3e}")
