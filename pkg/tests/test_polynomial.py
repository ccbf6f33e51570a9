import itertools

import numpy as np
import pytest

from minrestraint.polynomial import MultiIndex, PolyDynamics, eval_poly, graded_lex_key
from minrestraint.scenario import load_builtin


def test_multi_index_properties():
    a = MultiIndex((1, 0, 5))
    assert a.degree == 6 and a.c == 2 and a.support == (0, 2)
    assert a.monomial(np.array([2.0, 7.0, -1.0])) == -2.0
    with pytest.raises(ValueError):
        MultiIndex((-1, 2))


def test_graded_lex_order():
    idx = [MultiIndex(e) for e in [(0, 2), (2, 0), (1, 1), (1, 0), (0, 1), (2, 2)]]
    ordered = sorted(idx, key=graded_lex_key)
    assert [i.exponents for i in ordered] == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 2)]


def test_gyroscope_drift_value():
    pd = load_builtin("gyroscope").poly
    np.testing.assert_allclose(pd(np.array([0.0, 1.0]), np.zeros(2)), [1.0, 0.0])


def test_zero_fields():
    zero = lambda x: np.zeros_like(x)
    pd = PolyDynamics(2, 2, zero, {(1, 0): zero, (1, 2): zero})
    rng = np.random.default_rng(0)
    assert not np.any(pd(rng.normal(size=(5, 2)), rng.normal(size=(5, 2))))


def test_against_nested_loops():
    rng = np.random.default_rng(5)
    n, m = 3, 2
    mats = {}
    for e in [(1, 0), (0, 3), (2, 1), (1, 1), (0, 1)]:
        mats[e] = rng.normal(size=(n, n))
    A0 = rng.normal(size=(n, n))
    terms = {e: (lambda A: (lambda x: x @ A.T))(A) for e, A in mats.items()}
    pd = PolyDynamics(n, m, lambda x: x @ A0.T, terms)
    xs = rng.normal(size=(1000, n))
    us = rng.normal(size=(1000, m))
    got = eval_poly(pd, xs, us)
    for k in range(0, 1000, 97):
        x, u = xs[k], us[k]
        want = A0 @ x
        for e, A in mats.items():
            mono = 1.0
            for i, a in enumerate(e):
                for _ in range(a):
                    mono *= u[i]
            want = want + mono * (A @ x)
        np.testing.assert_allclose(got[k], want, rtol=1e-12, atol=1e-12)


def test_rejects_constant_term_and_bad_shapes():
    f = lambda x: x
    with pytest.raises(ValueError):
        PolyDynamics(1, 1, f, {(0,): f})
    with pytest.raises(ValueError):
        PolyDynamics(1, 2, f, {(1,): f})
    pd = PolyDynamics(1, 1, f, {(1,): f})
    with pytest.raises(ValueError):
        eval_poly(pd, np.zeros(2), np.zeros(1))


def test_degree():
    f = lambda x: x
    pd = PolyDynamics(1, 2, f, {e: f for e in itertools.product(range(3), repeat=2) if sum(e)})
    assert pd.degree == 4
