"""A planar system whose top-degree part is useless but whose diagonal part is not.

The maximal-degree subsystem only pushes outward, yet the diagonal
subsystem with lambda = (1/2, 1/2) is stabilizable with W = |x|^2.
Verifying W there carries over to the full system at p0 / sqrt(2).
"""
import math

import numpy as np

from minrestraint.hamiltonian import truncated_hamiltonian
from minrestraint.polysys import (DiagonalSpec, check_hyp_Adiag, diagonal_subsystem,
                                  maximal_subsystem, transfer_check, with_dynamics)
from minrestraint.scenario import load_builtin, poly_text

sc = load_builtin("diag-example")
pd = sc.poly
print(poly_text(sc.poly_texts))

mx = with_dynamics(sc.problem, maximal_subsystem(pd))
spec = DiagonalSpec((0.5, 0.5))
dg = with_dynamics(sc.problem, diagonal_subsystem(pd, spec))

# top-degree part: <2x, f> >= 0 whatever the control
x = np.array([0.6, 0.8])
for N in (1, 10, 100, 1000):
    h = truncated_hamiltonian(mx, x, 0.5, 2 * x, N, sc.budget)
    print(f"max subsystem, N = {N:5d}: H = {h.value:.4g}")

rep = check_hyp_Adiag(sc.problem.cost, pd.degree, math.sqrt(2), pd.m, sc.sampling.box)
print(f"\ncost hypothesis with M0 = sqrt 2: ok = {rep.ok}, worst ratio {rep.worst:.4g}")

tr = transfer_check(sc.problem, dg, sc.candidate, 0.5, math.sqrt(2), sc.sampling, sc.budget)
print(f"diagonal subsystem at p0 = {tr.p0_sub}: {tr.sub_verdict}")
print(f"full system at p0 = {tr.p0_full:.4g}: {tr.full_verdict}")
print(f"pointwise: {tr.pointwise_checked} certified states, {tr.pointwise_violations} lost")
