import numpy as np
import pytest

from minrestraint.model import (ControlProblem, ControlSet, MrfCandidate, StateSpace,
                                expr_field, expr_scalar, point_target)
from minrestraint.scenario import load_builtin
from minrestraint.verifier import (LevelSampling, check_positive_definite_proper,
                                   check_remark_A_prime, sample_levels, verify_mrf)


def stable_problem(n=2):
    f = expr_field([f"-x{i + 1}" for i in range(n)], n, 1)
    return ControlProblem(StateSpace(n), point_target(np.zeros(n)), ControlSet(1), f,
                          expr_scalar("0", n, 1))


def sq_norm(x):
    return np.sum(np.asarray(x) ** 2, axis=-1)


def sq_norm_grad(x):
    return 2 * np.asarray(x)[None]


SAMPLING = LevelSampling(1.0, ([-2, -2], [2, 2]), bands=6, samples=400, seed=3)


def test_sampling_validation():
    with pytest.raises(ValueError):
        LevelSampling(1.0, ([0, 0], [0, 1]))
    with pytest.raises(ValueError):
        LevelSampling(1.0, ([0], [1]), r_grid=(5.0,))
    with pytest.raises(ValueError):
        LevelSampling(2.0, ([0], [1]), W0=1.0)
    s = LevelSampling(1.0, ([0], [1]), r_grid=(0.1, 0.5))
    assert s.r_grid == (0.5, 0.1) and s.bands == 2


def test_sample_levels_inside_band():
    rng = np.random.default_rng(0)
    prob = stable_problem()
    for r in (1.0, 1e-3, 1e-6):
        xs = sample_levels(prob, sq_norm, SAMPLING, r, rng, 300)
        assert len(xs) == 300
        w = sq_norm(xs)
        assert np.all((w >= r) & (w <= 2 * SAMPLING.sigma))


def test_stable_linear_gamma_oracle():
    cand = MrfCandidate(sq_norm, 0.5, gradient_oracle=sq_norm_grad)
    rep = verify_mrf(stable_problem(), cand, SAMPLING)
    assert rep.verdict == "verified"
    # rescaled: Hbar = -2|x|^2 / (1 + |x|), increasing in W, so inf over W >= r is at W = r
    for r, g in zip(rep.r_grid, rep.gamma):
        exact = 2 * r / (1 + np.sqrt(r))
        assert exact * (1 - 1e-9) <= g <= exact * 1.15
    assert all(a >= b for a, b in zip(rep.gamma, rep.gamma[1:]))
    assert all(a <= b for a, b in zip(rep.N, rep.N[1:]))


def test_fd_gradients_agree_with_oracle():
    a = verify_mrf(stable_problem(), MrfCandidate(sq_norm, 0.5, gradient_oracle=sq_norm_grad),
                   SAMPLING)
    b = verify_mrf(stable_problem(), MrfCandidate(sq_norm, 0.5), SAMPLING)
    np.testing.assert_allclose(a.gamma, b.gamma, rtol=1e-5)


def test_unstable_is_violated():
    f = expr_field(["x1", "x2"], 2, 1)
    prob = ControlProblem(StateSpace(2), point_target([0, 0]), ControlSet(1), f,
                          expr_scalar("0", 2, 1))
    rep = verify_mrf(prob, MrfCandidate(sq_norm, 0.5), SAMPLING)
    assert rep.verdict == "violated"
    assert rep.witness["H_rescaled"] > 0


def test_counterexample_violated_with_positive_witness():
    sc = load_builtin("remark48-counterexample")
    rep = verify_mrf(sc.problem, sc.candidate, sc.sampling, sc.budget)
    assert rep.verdict == "violated"
    x = rep.witness["x"][0]
    assert x > 0
    # the drift at the witness never points inward for |u| <= 1
    u = np.linspace(-1, 1, 201)[:, None]
    f = sc.problem.dynamics(np.array([x]), u)
    assert np.all(f[:, 0] >= 0)


def test_empty_band_inconclusive():
    # the box sits entirely above W = 2 sigma
    s = LevelSampling(1.0, ([3, 3], [4, 4]), bands=4, samples=100)
    rep = verify_mrf(stable_problem(), MrfCandidate(sq_norm, 0.5), s)
    assert rep.verdict == "inconclusive"


def test_report_serialisation_is_plain():
    rep = verify_mrf(stable_problem(), MrfCandidate(sq_norm, 0.5), SAMPLING)
    d = rep.to_dict()
    assert d["verdict"] == "verified"
    assert "sample_points" not in d
    assert isinstance(d["gamma"][0], float)


def test_pd_proper_passes_for_norm():
    rep = check_positive_definite_proper(MrfCandidate(sq_norm, 0.5), SAMPLING, stable_problem())
    assert rep.ok


def test_properness_fails_for_slab():
    W = lambda x: np.asarray(x)[..., 0] ** 2
    rep = check_positive_definite_proper(MrfCandidate(W, 0.5), SAMPLING, stable_problem())
    assert not rep.proper_proxy and not rep.ok
    assert not rep.positive_on_samples or rep.escaped


def test_gyroscope_boundary_blowup():
    sc = load_builtin("gyroscope")
    rep = check_positive_definite_proper(sc.candidate, sc.sampling, sc.problem)
    assert rep.boundary_value and rep.ok
    x1 = np.pi / 2 - 1e-3 * np.array([0.1, 0.5, 1.0])
    x = np.stack([x1, np.zeros(3)], axis=1)
    assert np.all(sc.candidate.W(x) > 1e3)


def test_control_growth_affine_bounded():
    f = expr_field(["-x1 + u1", "-x2 + 2*u1"], 2, 1)
    prob = ControlProblem(StateSpace(2), point_target([0, 0]), ControlSet(1), f,
                          expr_scalar("0", 2, 1))
    rep = check_remark_A_prime(prob, lambda x: np.sqrt(5.0), SAMPLING)
    assert rep.ok and rep.evaluated > 0


def test_control_growth_gyroscope_bounded_controls():
    sc = load_builtin("gyroscope")
    R = 10.0
    rep = check_remark_A_prime(sc.problem, lambda x: R * (1 + abs(np.sin(x[0]))), sc.sampling,
                               u_radius=R, samples=500)
    assert rep.ok


def test_control_growth_exponential_finite():
    f = expr_field(["exp(u1^2)*x1"], 1, 1)
    prob = ControlProblem(StateSpace(1), point_target([0.0]), ControlSet(1), f,
                          expr_scalar("0", 1, 1))
    s = LevelSampling(1.0, ([-1], [1]), samples=500)
    rep = check_remark_A_prime(prob, lambda x: 1.0, s, u_radius=1e3)
    assert np.isfinite(rep.worst_ratio)
    assert rep.skipped > 0  # exp(u^2) overflows for large |u|
