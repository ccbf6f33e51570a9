"""Convexified velocities of a near-control-affine system, written out explicitly.

For f = u1 u2^3 f_a + u1 u3^5 f_b + u2^3 u3^5 f_c on R^4 the affine
velocity f_b + f_c is an average of two honest velocities.
"""
import numpy as np

from minrestraint.polysys import affine_field, classify_near_affine, hull_witness
from minrestraint.scenario import load_builtin

sc = load_builtin("remark44-system")
pd = sc.poly
nas = classify_near_affine(pd)
print(f"K = {nas.K}, dbar = {nas.dbar}, M = {nas.M}")

x = np.array([1.0, 2.0, 3.0, 4.0])
w = np.array([0.0, 1.0, 1.0])
target = affine_field(nas, pd)(x, w)

for reduced, split in ((True, "last"), (False, "equal")):
    hw = hull_witness(nas, pd, x, w, reduced=reduced, split=split)
    print(f"\nreduced={reduced}, split={split}: {len(hw.pairs)} controls")
    for weight, u in hw.pairs:
        print(f"  {weight:.4f} x f(x, {np.round(u, 6).tolist()})")
    print(f"  residual {hw.residual(pd, x, target):.2e}")

# with bounded controls the affine box shrinks to rbar
for r in (1.0, 2.0):
    rb = nas.rbar(r)
    hw = hull_witness(nas, pd, x, np.full(3, rb), r)
    print(f"\nr = {r}: rbar = {rb:.4g}, max |u| = {np.abs(hw.controls).max():.4g}, "
          f"residual {hw.residual(pd, x, affine_field(nas, pd)(x, np.full(3, rb))):.2e}")
