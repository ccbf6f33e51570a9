import itertools

import numpy as np
import pytest

from minrestraint.model import MrfCandidate
from minrestraint.polynomial import MultiIndex
from minrestraint.polysys import (DiagonalSpec, NotNearAffine, affine_field, check_hyp_Adiag,
                                  check_hyp_Amax, classify_near_affine, diagonal_subsystem,
                                  diagonal_witness, hull_witness, maximal_subsystem,
                                  scaling_transfer_check, sign_set, transfer_check,
                                  with_dynamics)
from minrestraint.scenario import load_builtin, scenario_from_dict
from minrestraint.verifier import LevelSampling


def poly(n, m, drift, terms, cost="0", **extra):
    d = {"n": n, "m": m, "polynomial": {"drift": drift,
                                        "terms": [{"alpha": a, "field": f} for a, f in terms]},
         "cost": cost}
    d.update(extra)
    return scenario_from_dict(d)


@pytest.mark.parametrize("k", range(1, 7))
@pytest.mark.parametrize("s", (1, -1))
def test_sign_set(k, s):
    out = sign_set(k, s)
    assert len(out) == 2 ** (k - 1) == len(set(out))
    assert all(np.prod(t) == s and len(t) == k for t in out)


def test_sign_set_validation():
    with pytest.raises(ValueError):
        sign_set(0, 1)
    with pytest.raises(ValueError):
        sign_set(2, 0)


def test_classify_driftless_quartic_system():
    sc = load_builtin("remark44-system")
    nas = classify_near_affine(sc.poly)
    assert nas.K == (1, 3, 5) and nas.dbar == 2 and nas.M == 3
    assert nas.rbar(np.inf) == np.inf
    assert nas.rbar(2.0) == pytest.approx(2.0 / 3)  # min of r^(jK) is r^1 = 2


def test_classify_rejects_even_exponent():
    sc = poly(1, 1, ["0"], [([2], ["1"])])
    with pytest.raises(NotNearAffine) as ei:
        classify_near_affine(sc.poly)
    assert ei.value.term == MultiIndex((2,))


def test_classify_rejects_mixed_exponents():
    sc = poly(1, 1, ["0"], [([1], ["1"]), ([3], ["x1"])])
    with pytest.raises(NotNearAffine):
        classify_near_affine(sc.poly)


def test_affine_field_matches_manual():
    sc = load_builtin("remark44-system")
    nas = classify_near_affine(sc.poly)
    fa = affine_field(nas, sc.poly)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.array([0.5, -1.0, 2.0])
    # active order: (1,3,0), (1,0,5), (0,3,5)
    manual = 0.5 * np.array([1, 0, 2, 0]) - 1.0 * np.array([0, 1, -1, 0]) + 2.0 * np.array([0, 0, 0, 1])
    np.testing.assert_allclose(fa(x, w), manual)
    with pytest.raises(ValueError):
        fa(x, w[:2])


def test_hull_witness_zero():
    sc = load_builtin("remark44-system")
    nas = classify_near_affine(sc.poly)
    hw = hull_witness(nas, sc.poly, [1, 2, 3, 4], np.zeros(3))
    assert hw.pairs == [(1.0, (0.0, 0.0, 0.0))]


def test_hull_witness_driftless_reduced():
    sc = load_builtin("remark44-system")
    nas = classify_near_affine(sc.poly)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.array([0.0, 1.0, 1.0])
    hw = hull_witness(nas, sc.poly, x, w, reduced=True, split="last")
    assert sorted(hw.weights) == [0.5, 0.5]
    assert hw.residual(sc.poly, x, affine_field(nas, sc.poly)(x, w)) < 1e-12
    assert np.any(np.isclose(np.abs(hw.controls), 2 ** 0.2))


def _random_near_affine(rng, n, m):
    K = [int(rng.choice([1, 3, 5])) for _ in range(m)]
    supports = [s for k in range(1, m + 1) for s in itertools.combinations(range(m), k)]
    chosen = [supports[i] for i in rng.choice(len(supports), size=min(4, len(supports)),
                                              replace=False)]
    lin = lambda: [" + ".join(f"{rng.normal():.6f}*x{j + 1}" for j in range(n))
                   + f" + {rng.normal():.6f}" for _ in range(n)]
    terms = [([K[i] if i in s else 0 for i in range(m)], lin()) for s in chosen]
    return poly(n, m, lin(), terms)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("r", (1.0, 2.0, np.inf))
def test_hull_witness_random_systems(seed, r):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    sc = _random_near_affine(rng, n, m)
    nas = classify_near_affine(sc.poly)
    x = rng.normal(size=n)
    rb = nas.rbar(r)
    w = rng.uniform(-1, 1, nas.M) * (rb if np.isfinite(rb) else 5.0)
    hw = hull_witness(nas, sc.poly, x, w, r)
    assert np.all(hw.weights > 0) and hw.weights.sum() == pytest.approx(1.0)
    assert np.all(np.abs(hw.controls) <= r)
    target = affine_field(nas, sc.poly)(x, w)
    assert hw.residual(sc.poly, x, target) < 1e-9 * max(1.0, np.abs(target).max())


def test_hull_witness_rejects_large_w():
    sc = load_builtin("remark44-system")
    nas = classify_near_affine(sc.poly)
    with pytest.raises(ValueError):
        hull_witness(nas, sc.poly, np.ones(4), np.array([1.0, 0, 0]), r=1.0)


def test_maximal_subsystem_diag():
    pd = load_builtin("diag-example").poly
    mx = maximal_subsystem(pd)
    assert list(mx.terms) == [MultiIndex((2, 2))]
    x = np.array([[0.3, -0.7]])
    u = np.array([[1.5, 2.0]])
    np.testing.assert_allclose(mx(x, u), x + 1.5 ** 2 * 2.0 ** 2 * 3 * x)


def test_maximal_subsystem_homogeneous_is_identity():
    sc = poly(2, 1, ["x2", "0"], [([3], ["0", "1"])])
    assert list(maximal_subsystem(sc.poly).terms) == list(sc.poly.terms)


def test_diagonal_subsystem_coefficients():
    pd = load_builtin("diag-example").poly
    dg = diagonal_subsystem(pd, DiagonalSpec((0.5, 0.5)))
    assert set(dg.terms) == {MultiIndex((2, 0)), MultiIndex((0, 2))}
    x = np.array([1.0, 2.0])
    np.testing.assert_allclose(dg.field((2, 0))(x), [-np.sqrt(0.5), 0.0])
    zero = diagonal_subsystem(pd, DiagonalSpec((0.0, 0.0)))
    assert not zero.terms


def test_diagonal_subsystem_top_pure_term_kept_at_zero_lambda():
    sc = poly(1, 2, ["0"], [([2, 0], ["1"]), ([0, 1], ["x1"])])
    dg = diagonal_subsystem(sc.poly, DiagonalSpec((0.0, 0.0)))
    assert MultiIndex((2, 0)) in dg.terms and MultiIndex((0, 1)) not in dg.terms


@pytest.mark.parametrize("seed", range(5))
def test_diagonal_witness_membership(seed):
    rng = np.random.default_rng(seed)
    pd = load_builtin("diag-example").poly
    lam = rng.dirichlet(np.ones(3))[1:]
    spec = DiagonalSpec(tuple(lam))
    dg = diagonal_subsystem(pd, spec)
    x = rng.uniform(0.1, 2, 2)
    u = rng.normal(size=2) * 3
    hw = diagonal_witness(pd, spec, u)
    assert hw.weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(hw.combination(pd, x), dg(x, u), rtol=1e-12, atol=1e-12)


def test_diagonal_spec_validation():
    with pytest.raises(ValueError):
        DiagonalSpec((0.7, 0.7))
    with pytest.raises(ValueError):
        DiagonalSpec((-0.1, 0.5))
    assert DiagonalSpec((0.25, 0.25)).lam0 == 0.5


BOX = ([-2.0, -2.0], [2.0, 2.0])


def test_hyp_Amax_quadratic_passes():
    M0 = lambda x: np.sum(x ** 2, axis=-1)
    M1 = lambda x, u: np.sum(x ** 2, axis=-1) * np.sum(u ** 2, axis=-1)
    rep = check_hyp_Amax(M0, M1, 2, 2, BOX)
    assert rep.ok and rep.worst <= 1e-9


def test_hyp_Amax_superhomogeneous_fails():
    M0 = lambda x: np.zeros(len(x))
    M1 = lambda x, u: np.linalg.norm(u, axis=-1) ** 3
    rep = check_hyp_Amax(M0, M1, 2, 2, BOX)
    assert not rep.ok and rep.worst > 0


def test_hyp_Amax_nonzero_at_origin_fails():
    M0 = lambda x: np.zeros(len(x))
    M1 = lambda x, u: 1.0 + np.sum(u ** 2, axis=-1)
    rep = check_hyp_Amax(M0, M1, 2, 2, BOX)
    assert not rep.detail["M1_zero_at_origin"] and not rep.ok


def test_hyp_Adiag_quadratic_control_cost():
    l = lambda x, u: np.sum(u ** 2, axis=-1)
    rep = check_hyp_Adiag(l, 2, np.sqrt(2), 2, BOX)
    assert rep.ok and rep.worst == pytest.approx(1.0)


def test_hyp_Adiag_zero_cost_with_zero_constant():
    rep = check_hyp_Adiag(lambda x, u: np.zeros(len(x)), 2, 0.0, 2, BOX)
    assert rep.ok and rep.worst == 0.0


def test_hyp_Adiag_state_weighted():
    l = lambda x, u: np.sum(x ** 2, axis=-1) * np.sum(u ** 2, axis=-1)
    assert check_hyp_Adiag(l, 2, 1.0, 2, BOX).ok


def test_hyp_Adiag_quartic_cost_fails():
    l = lambda x, u: np.sum(u ** 4, axis=-1)
    rep = check_hyp_Adiag(l, 2, np.sqrt(2), 2, BOX, samples=2000)
    assert not rep.ok and rep.worst > np.sqrt(2)
    with pytest.raises(ValueError):
        check_hyp_Adiag(l, 2, -1.0, 2, BOX)


def _stable_poly():
    return poly(2, 1, ["-x1", "-x2"], [([1], ["x2", "-x1"])], cost="u1^2",
                candidate={"W": "x1^2 + x2^2", "p0": 0.5},
                sampling={"sigma": 1.0, "box": {"lower": [-1.5, -1.5], "upper": [1.5, 1.5]},
                          "bands": 4, "samples": 200})


def test_transfer_identical_systems():
    sc = _stable_poly()
    rep = transfer_check(sc.problem, sc.problem, sc.candidate, 0.5, 1.0, sc.sampling,
                         kind="max")
    assert rep.sub_verdict == rep.full_verdict == "verified"
    assert rep.implication_holds and rep.pointwise_checked == 800
    with pytest.raises(ValueError):
        transfer_check(sc.problem, sc.problem, sc.candidate, 0.5, 1.0, sc.sampling, kind="x")


def test_transfer_diag_scales_p0():
    sc = _stable_poly()
    rep = transfer_check(sc.problem, sc.problem, sc.candidate, 0.5, 2.0, sc.sampling)
    assert rep.p0_full == 0.25
    rep0 = transfer_check(sc.problem, sc.problem, sc.candidate, 0.5, 0.0, sc.sampling)
    assert rep0.p0_full == 0.5


def test_bounded_controls_break_max_transfer():
    # x' = u^3 x is stabilised by u = -1, but with U = [-1, 1] the u^2 x term cancels it
    sc = load_builtin("remark48-counterexample")
    mx = with_dynamics(sc.problem, maximal_subsystem(sc.poly))
    rep = transfer_check(sc.problem, mx, sc.candidate, 1.0, 1.0, sc.sampling, kind="max")
    assert rep.sub_verdict == "verified" and rep.full_verdict == "violated"
    assert not rep.implication_holds and rep.pointwise_violations > 0


def test_scaling_transfer_on_homogeneous_system():
    sc = poly(2, 2, ["x1", "x2"],
              [([1, 0], ["1", "0"]), ([0, 1], ["0", "1"]),
               ([2, 0], ["-x1", "-x2"]), ([0, 2], ["-x1", "-x2"])],
              cost="(x1^2 + x2^2)*(1 + u1^2 + u2^2)",
              candidate={"W": "x1^2 + x2^2", "p0": 0.5},
              sampling={"sigma": 2.0, "box": {"lower": [-2, -2], "upper": [2, 2]},
                        "bands": 3, "samples": 40})
    mx = with_dynamics(sc.problem, maximal_subsystem(sc.poly))
    rep = scaling_transfer_check(sc.problem, mx, sc.candidate, sc.sampling)
    assert rep.checked > 0 and rep.ok
