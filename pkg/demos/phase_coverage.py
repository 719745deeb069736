"""How much of the circle survives the phase condition for the golden frequency.

A phase theta is admissible on [R_min, R_max] if ||2 theta + n omega|| exceeds
exp(-|n|^tau1) for every R_min <= |n| <= R_max.  The forbidden arcs around
-n omega have total length far above one once small |n| are included, and for
the golden mean they leave nothing.  Starting the range later frees a
positive measure of phases.
"""
import numpy as np

from qplab.diophantine import GOLDEN, admissible_phase_intervals, verify_phase_condition

tau1, R_max = 0.3, 1000
for R_min in (5, 50, 200, 400, 600, 800):
    iv = admissible_phase_intervals((GOLDEN,), tau1, R_min, R_max)
    measure = float(np.sum(iv[:, 1] - iv[:, 0])) if len(iv) else 0.0
    print(f"R_min={R_min:4d}: {len(iv):4d} intervals, admissible measure {measure:.3f}")

iv = admissible_phase_intervals((GOLDEN,), tau1, 600, R_max)
a, b = max(iv, key=lambda ab: ab[1] - ab[0])
theta = 0.5 * (a + b)
print(f"widest interval midpoint theta={theta:.10f}")
print("  passes on [600, 1000]:", verify_phase_condition(theta, (GOLDEN,), tau1, 600, R_max).passed)
print("  passes on [5, 1000]:  ", verify_phase_condition(theta, (GOLDEN,), tau1, 5, R_max).passed)
