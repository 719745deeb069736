"""Two stages of the multi-scale induction on a one-dimensional window.

The phase is put on a resonance (theta = Re theta0), so site 0 is singular at
stage 0 and a stage-1 block must be built around it.  The script prints the
scale schedule, the case taken at each transition, the tracked theta_s and
the invariant checks, then samples 1-good regions and compares their Green's
function with the a-priori bounds.
"""
import numpy as np

from qplab.core import ModelParams, cube
from qplab.diophantine import GOLDEN
from qplab.msa import ScaleParams, check_bounds, run_msa, sample_good_regions

eps, E = 1e-40, 0.02127892446046209
model = ModelParams(eps=eps, omega=(GOLDEN,), theta=float(np.arccos(E) / (2 * np.pi)), energy=E)
params = ScaleParams(eps=eps, c=1.03, N1=4, tilde_exp=1.0)
run = run_msa(model, params, cube(3000, d=1), stages=2)

for lvl in run.schedule.levels:
    print(f"s={lvl.s}: N={lvl.N:.4g}  log delta={lvl.log_delta:.4g}")
for st in run.history:
    print(f"stage {st.s}: |Q|={len(st.Q)}  theta={complex(st.theta_s):.15g}  cases={st.case_history}")

print(f"invariants: {len(run.invariants)} checks, {len(run.invariants.failures)} failures")
print(f"det band: constant {run.band.constant:.3g}, passed={run.band.passed}")

rng = np.random.default_rng(0)
for region in sample_good_regions(run.history[:2], 5, rng):
    b = check_bounds(region, run.history[:2])
    print(f"  {len(region):4d} sites: log-norm margin {b.norm_margin:8.2f}, decay margin {b.decay_margin:8.2f}")
