"""Gyroscope nutation: check the restraint function, then steer to the origin.

    python3 demos/gyroscope.py [x1 x2]

Takes about a minute.
"""
import sys

import numpy as np

from minrestraint.feedback import build_kl_envelope, check_gac_bound, cost_check, synthesize
from minrestraint.scenario import load_builtin
from minrestraint.verifier import verify_mrf

sc = load_builtin("gyroscope")
z = np.array([float(v) for v in sys.argv[1:3]]) if len(sys.argv) > 2 else np.array([0.5, 0.0])

# sampled Hamiltonian margins on 8 nested level bands
rep = verify_mrf(sc.problem, sc.candidate, sc.sampling, sc.budget)
print(f"verdict {rep.verdict} at p0 = {sc.candidate.p0}")
print("      r      gamma      N")
for r, g, n in zip(rep.r_grid, rep.gamma, rep.N):
    print(f"{r:9.3g} {g:10.4g} {n:6.0f}")
if rep.verdict != "verified":
    sys.exit(rep.reason)

tr = synthesize(sc.problem, sc.candidate, z, rep, sc.step, sc.budget, stop_frac=sc.stop_frac)
env = build_kl_envelope(sc.problem, sc.candidate, tr.gamma, sc.sampling, sc.step.eps)
gac = check_gac_bound(tr, env)
s = tr.summary()

print(f"\nfrom z = {z.tolist()}: {s['status']}, {s['cells']} hold cells, "
      f"{s['refinements']} rate-table cuts")
print(f"distance {s['d_initial']:.4g} -> {s['d_final']:.3g} in original time {s['t_final']:.3g}")
print(f"cost {s['total_cost']:.5g} (bound W(z)/p0 = {s['cost_bound']:.5g})")
ci = cost_check(tr, sc.problem)
print(f"rescaled vs original cost: {ci.rescaled_cost:.6g} / {ci.original_cost:.6g}")
print(f"certificates hold: {s['certificates_ok']}, KL bound holds: {gac.ok}")

# a coarse look at the trajectory, one line per stage
print("\n  stage        t     x1        x2        W")
for k, i in enumerate(tr.stage_index[::4]):
    print(f"{4 * k + 1:7d} {tr.t[i]:8.3f} {tr.y[i, 0]:9.3g} {tr.y[i, 1]:9.3g} {tr.W[i]:9.3g}")
