"""Control-polynomial systems: near-affine structure, hull witnesses, weak subsystems.

A near-control-affine system uses, for each control coordinate ``u_i``,
only the exponents ``0`` and one fixed odd ``K_i``.  Its convexified
velocity set contains an affine family ``f0 + sum_alpha w_alpha f_alpha``
with independent ``w``; :func:`hull_witness` produces the explicit convex
combination of actual velocities realising any such affine velocity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import MinimizeBudget, hamiltonian_batch, minimize_controls
from .model import ControlProblem, ControlSet
from .polynomial import MultiIndex, PolyDynamics, eval_poly
from .verifier import sample_levels, verify_mrf

__all__ = [
    "NotNearAffine",
    "NearAffineStructure",
    "classify_near_affine",
    "affine_field",
    "sign_set",
    "HullWitness",
    "hull_witness",
    "maximal_subsystem",
    "DiagonalSpec",
    "diagonal_subsystem",
    "diagonal_witness",
    "HypothesisReport",
    "check_hyp_Amax",
    "check_hyp_Adiag",
    "TransferReport",
    "transfer_check",
    "ScalingReport",
    "scaling_transfer_check",
    "sup_cost",
    "with_dynamics",
    "K_SCHEDULE",
]

K_SCHEDULE = tuple(2 ** j for j in range(11))


class NotNearAffine(ValueError):
    """Classification rejected; ``term`` is the offending multi-index."""

    def __init__(self, message, term):
        super().__init__(message)
        self.term = term


@dataclass(frozen=True)
class NearAffineStructure:
    K: tuple
    dbar: int
    active: tuple  # multi-indices, graded-lexicographic order

    @property
    def M(self):
        return len(self.active)

    @property
    def m(self):
        return len(self.K)

    def rbar(self, r):
        """Half-width of the affine control box for ``U_r = [-r, r]^m``."""
        if not np.isfinite(r) or self.M == 0:
            return np.inf
        powers = [r ** (j * k) for k in self.K for j in (1, self.dbar)]
        return min(powers) / self.M

    def to_dict(self):
        return {"K": list(self.K), "dbar": self.dbar, "M": self.M,
                "active": [list(a.exponents) for a in self.active]}


def classify_near_affine(pd):
    """Infer ``K`` and ``dbar``; raise :class:`NotNearAffine` naming the offending term."""
    K = [None] * pd.m
    for alpha in pd.terms:
        for i, a in enumerate(alpha.exponents):
            if a == 0:
                continue
            if a % 2 == 0:
                raise NotNearAffine(f"term {alpha}: exponent {a} of u{i + 1} is even", alpha)
            if K[i] is None:
                K[i] = a
            elif K[i] != a:
                raise NotNearAffine(
                    f"term {alpha}: u{i + 1} has exponent {a} but another term uses {K[i]}", alpha)
    K = tuple(1 if k is None else k for k in K)
    dbar = max((a.c for a in pd.terms), default=1)
    return NearAffineStructure(K, dbar, tuple(pd.terms))


def affine_field(nas, pd):
    """``(x, w) -> f0(x) + sum_k w_k f_{alpha_k}(x)`` with ``w`` of length ``M``."""
    fields = [pd.terms[a] for a in nas.active]

    def f_aff(x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != len(fields):
            raise ValueError(f"affine control must have {len(fields)} entries")
        shape = np.broadcast_shapes(x.shape[:-1], w.shape[:-1])
        out = np.broadcast_to(np.asarray(pd.drift(x), dtype=float), shape + (pd.n,)).copy()
        for k, fld in enumerate(fields):
            out = out + w[..., k, None] * np.asarray(fld(x), dtype=float)
        return out

    return f_aff


def sign_set(k, s):
    """All ``k``-tuples over ``{-1, 1}`` with product ``s``; ``2^(k-1)`` of them."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if s not in (1, -1):
        raise ValueError("s must be +1 or -1")
    return [t for t in itertools.product((1, -1), repeat=k) if np.prod(t) == s]


@dataclass
class HullWitness:
    pairs: list  # [(weight, control tuple)]

    @property
    def weights(self):
        return np.array([w for w, _ in self.pairs])

    @property
    def controls(self):
        return np.array([u for _, u in self.pairs], dtype=float)

    def combination(self, f, x):
        """``sum weight * f(x, control)`` for a dynamics callable ``f``."""
        x = np.asarray(x, dtype=float)
        return np.sum(self.weights[:, None] * np.asarray(f(x[None], self.controls)), axis=0)

    def residual(self, f, x, target):
        return float(np.max(np.abs(self.combination(f, x) - np.asarray(target, dtype=float))))

    def to_dict(self):
        return {"pairs": [{"weight": float(w), "control": [float(v) for v in u]}
                          for w, u in self.pairs]}


def _magnitudes(a, support, K, split):
    """Per-coordinate magnitudes of the original controls for coefficient ``a``."""
    k = len(support)
    if split == "equal":
        reduced = [abs(a) ** (1.0 / k)] * k
    elif split == "last":
        reduced = [1.0] * (k - 1) + [abs(a)]
    else:
        raise ValueError(f"unknown split {split!r}")
    # undo the K-th-root reduction: u_i^{K_i} carries the reduced magnitude
    return [rm ** (1.0 / K[i]) for rm, i in zip(reduced, support)]


def hull_witness(nas, pd, x, w, r=np.inf, reduced=False, split="equal"):
    """Explicit convex combination of ``f(x, U_r)`` equal to the affine velocity at ``w``.

    Each active ``alpha`` with ``c(alpha) = k`` receives the coefficient
    ``M w_alpha`` and the ``2^(k-1)`` sign patterns of product ``sign(w_alpha)``,
    each with weight ``1 / (M 2^(k-1))``; identical controls are merged.

    ``reduced=True`` spreads the weight only over the nonzero entries of ``w``
    and uses a single sign pattern for a term when no other term of the
    system lives on a strict subset of its support (the averaging is only
    needed to cancel such lower terms).
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (nas.M,):
        raise ValueError(f"affine control must have shape ({nas.M},)")
    if np.isfinite(r):
        rb = nas.rbar(r)
        if np.any(np.abs(w) > rb * (1 + 1e-12)):
            raise ValueError(f"|w| exceeds rbar = {rb:.6g} for r = {r}")
    m = nas.m
    idx = [k for k in range(nas.M) if (w[k] != 0 or not reduced)]
    if nas.M == 0 or not np.any(w != 0):
        return HullWitness([(1.0, tuple([0.0] * m))])
    Mp = len(idx)
    acc = {}

    def add(weight, u):
        key = tuple(float(v) for v in u)
        acc[key] = acc.get(key, 0.0) + weight

    supports = [set(a.support) for a in pd.terms]
    for k in idx:
        alpha = nas.active[k]
        a = Mp * w[k]
        if a == 0:
            add(1.0 / Mp, [0.0] * m)
            continue
        support = alpha.support
        mags = _magnitudes(a, support, nas.K, split)
        sgn = 1 if a > 0 else -1
        needs_avg = any(sp < set(support) and sp for sp in supports)
        if reduced and not needs_avg:
            patterns = [tuple([1] * (len(support) - 1) + [sgn])]
        else:
            patterns = sign_set(len(support), sgn)
        for s in patterns:
            u = [0.0] * m
            for sj, mag, i in zip(s, mags, support):
                u[i] = sj * mag
            if np.isfinite(r):
                u = [float(np.clip(v, -r, r)) for v in u]
            add(1.0 / (Mp * len(patterns)), u)
    return HullWitness([(wt, u) for u, wt in acc.items()])


def maximal_subsystem(pd):
    """Drift plus the terms of top degree only."""
    d = pd.degree
    return pd.with_terms({a: f for a, f in pd.terms.items() if a.degree == d})


@dataclass(frozen=True)
class DiagonalSpec:
    lam: tuple
    d: int = None

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        if any(v < 0 for v in lam) or sum(lam) > 1 + 1e-12:
            raise ValueError("lambda must lie in the simplex: entries >= 0 with sum <= 1")
        object.__setattr__(self, "lam", lam)

    @property
    def lam0(self):
        return max(0.0, 1.0 - sum(self.lam))


def _scaled(fld, c):
    def g(x):
        return c * np.asarray(fld(x), dtype=float)

    return g


def diagonal_subsystem(pd, spec):
    """The ``lambda``-diagonal field as a polynomial system.

    Only pure terms ``u_i^j f_{j e_i}`` survive, with coefficient
    ``lambda_i^((d - j) / d)`` (taking ``0^0 = 1``, so top-degree pure terms
    keep coefficient 1 even when ``lambda_i = 0``).
    """
    if len(spec.lam) != pd.m:
        raise ValueError(f"lambda needs {pd.m} entries")
    d = spec.d or pd.degree
    terms = {}
    for alpha, fld in pd.terms.items():
        if alpha.c != 1:
            continue
        i = alpha.support[0]
        j = alpha.exponents[i]
        coeff = 1.0 if j == d else spec.lam[i] ** ((d - j) / d)
        if coeff != 0:
            terms[alpha] = _scaled(fld, coeff)
    return pd.with_terms(terms)


def diagonal_witness(pd, spec, u):
    """Weights ``lambda_i`` on controls ``lambda_i^(-1/d) u_i e_i`` (and ``lambda_0`` on 0)."""
    d = spec.d or pd.degree
    u = np.asarray(u, dtype=float)
    pairs = []
    if spec.lam0 > 0:
        pairs.append((spec.lam0, tuple([0.0] * pd.m)))
    for i, li in enumerate(spec.lam):
        if li == 0:
            continue
        v = [0.0] * pd.m
        v[i] = li ** (-1.0 / d) * u[i]
        pairs.append((li, tuple(v)))
    return HullWitness(pairs)


@dataclass
class HypothesisReport:
    ok: bool
    worst: float
    worst_at: dict = field(default_factory=dict)
    samples: int = 0
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"ok": self.ok, "worst": self.worst, "worst_at": self.worst_at,
                "samples": self.samples, "detail": self.detail}


def _draw(rng, box, count, m, u_scale):
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    x = lo + rng.uniform(size=(count, len(lo))) * (hi - lo)
    dirs = rng.standard_normal((count, m))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    mags = np.exp(rng.uniform(np.log(1e-3), np.log(u_scale), count))
    return x, dirs * mags[:, None]


def check_hyp_Amax(M0, M1, d, m, box, samples=1000, seed=0, u_scale=10.0, k_max=1e3):
    """Sample ``M1(x, 0) = 0``, nonnegativity and ``M1(x, k u) <= k^d M1(x, u)`` for ``k >= 1``.

    ``worst`` is the largest relative excess ``(M1(x,ku) - k^d M1(x,u)) / max(1, k^d M1(x,u))``.
    """
    rng = np.random.default_rng(seed)
    x, u = _draw(rng, box, samples, m, u_scale)
    k = np.exp(rng.uniform(0.0, np.log(k_max), samples))
    m0 = np.asarray(M0(x), dtype=float)
    m1 = np.asarray(M1(x, u), dtype=float)
    m1k = np.asarray(M1(x, k[:, None] * u), dtype=float)
    m1z = np.asarray(M1(x, np.zeros_like(u)), dtype=float)
    bound = k ** d * m1
    excess = (m1k - bound) / np.maximum(1.0, bound)
    i = int(np.argmax(excess))
    zero_ok = bool(np.all(np.abs(m1z) <= 1e-12))
    nonneg = bool(np.all(m0 >= 0) and np.all(m1 >= 0) and np.all(m1k >= 0))
    worst = float(excess[i])
    ok = zero_ok and nonneg and worst <= 1e-9
    return HypothesisReport(ok, worst, {"x": x[i].tolist(), "u": u[i].tolist(), "k": float(k[i])},
                            samples, {"M1_zero_at_origin": zero_ok, "nonnegative": nonneg})


def check_hyp_Adiag(l, d, M0, m, box, samples=10000, seed=0, u_scale=10.0):
    """Worst ratio ``(l(x,0) + sum_i lambda_i l(x, u_i lambda_i^(-1/d) e_i)) / l(x,u)`` against ``M0``.

    ``lambda`` is drawn from the interior of the simplex.  Where ``l(x, u) = 0``
    the ratio is 0 if the left side vanishes too and ``inf`` otherwise.
    """
    if M0 < 0:
        raise ValueError("M0 must be nonnegative")
    rng = np.random.default_rng(seed)
    x, u = _draw(rng, box, samples, m, u_scale)
    lam = rng.dirichlet(np.ones(m + 1), samples)[:, 1:]
    lhs = np.asarray(l(x, np.zeros_like(u)), dtype=float)
    for i in range(m):
        v = np.zeros_like(u)
        v[:, i] = u[:, i] * lam[:, i] ** (-1.0 / d)
        lhs = lhs + lam[:, i] * np.asarray(l(x, v), dtype=float)
    rhs = np.asarray(l(x, u), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0),
                         np.where(np.abs(lhs) <= 1e-300, 0.0, np.inf))
    i = int(np.argmax(ratio))
    worst = float(ratio[i])
    return HypothesisReport(worst <= M0 * (1 + 1e-9) + 1e-15, worst,
                            {"x": x[i].tolist(), "u": u[i].tolist(), "lambda": lam[i].tolist()},
                            samples, {"M0": float(M0)})


def with_dynamics(problem, dynamics, name=None):
    """Same state space, target, control set and cost; new dynamics."""
    return ControlProblem(problem.state_space, problem.target, problem.control_set, dynamics,
                          problem.cost, name if name is not None else problem.name)


@dataclass
class TransferReport:
    kind: str
    p0_sub: float
    p0_full: float
    sub_verdict: str
    full_verdict: str
    pointwise_checked: int
    pointwise_violations: int
    witnesses: list
    sub: dict
    full: dict

    @property
    def implication_holds(self):
        verdict_ok = self.sub_verdict != "verified" or self.full_verdict == "verified"
        return verdict_ok and self.pointwise_violations == 0

    def to_dict(self):
        return {"kind": self.kind, "p0_sub": self.p0_sub, "p0_full": self.p0_full,
                "sub_verdict": self.sub_verdict, "full_verdict": self.full_verdict,
                "implication_holds": self.implication_holds,
                "pointwise_checked": self.pointwise_checked,
                "pointwise_violations": self.pointwise_violations,
                "witnesses": self.witnesses[:5], "sub": self.sub, "full": self.full}


def transfer_check(problem_full, problem_sub, candidate, p0_sub, M0, sampling,
                   budget=MinimizeBudget(), kind="diag", tol=1e-9):
    """Verify the candidate on the subsystem and on the full system side by side.

    ``kind='max'`` keeps ``p0``; ``kind='diag'`` uses ``p0 / M0`` (or ``p0``
    itself when ``M0 = 0``).  Both runs use the same seed, so they see the
    same sample states, and the implication is also checked pointwise: every
    sample certified for the subsystem must be certified for the full system.
    """
    if kind not in ("max", "diag"):
        raise ValueError("kind must be 'max' or 'diag'")
    p0_full = p0_sub if kind == "max" or M0 == 0 else p0_sub / M0
    sub = verify_mrf(problem_sub, candidate.with_p0(p0_sub), sampling, budget, check_pd=False)
    full = verify_mrf(problem_full, candidate.with_p0(p0_full), sampling, budget, check_pd=False)
    a, b = sub.sample_margins, full.sample_margins
    witnesses = []
    checked = violations = 0
    if a is not None and b is not None and len(a) == len(b):
        good = a > tol
        checked = int(good.sum())
        bad = np.flatnonzero(good & ~(b > 0))
        violations = len(bad)
        witnesses = [{"x": sub.sample_points[i].tolist(), "margin_sub": float(a[i]),
                      "margin_full": float(b[i])} for i in bad[:5]]
    return TransferReport(kind, float(p0_sub), float(p0_full), sub.verdict, full.verdict,
                          checked, violations, witnesses, sub.to_dict(), full.to_dict())


@dataclass
class ScalingReport:
    checked: int
    passed: int
    failures: list

    @property
    def ok(self):
        return self.passed == self.checked

    def to_dict(self):
        return {"ok": self.ok, "checked": self.checked, "passed": self.passed,
                "failures": self.failures[:5]}


def scaling_transfer_check(problem_full, problem_max, candidate, sampling,
                           budget=MinimizeBudget(), ks=K_SCHEDULE, margin=1e-9):
    """Where the top-degree Hamiltonian is negative, scaling its minimiser by some ``k`` works for the full system.

    For every sampled ``(x, p)`` with ``H_max(x, p0, p) < -margin`` and
    minimiser ``u``, checks that ``<p, f(x, k u)> + p0 l(x, k u) < 0`` for some
    ``k`` in ``ks``.
    """
    rng = np.random.default_rng(sampling.seed)
    xs = []
    for r in sampling.r_grid:
        xs.append(sample_levels(problem_max, candidate.W, sampling, r, rng, sampling.samples))
    X = np.concatenate(xs)
    grads = candidate.gradients_batch(X)
    owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(grads)])
    P = np.concatenate(grads)
    res = hamiltonian_batch(problem_max, X[owner], candidate.p0, P, budget)
    neg = res.values < -margin
    checked = int(neg.sum())
    passed = 0
    failures = []
    for k_idx in np.flatnonzero(neg):
        x, p, u = X[owner[k_idx]], P[k_idx], res.controls[k_idx]
        ok = False
        for k in ks:
            l, f = problem_full.cost_dynamics(x, k * u)
            if float(np.dot(p, f) + candidate.p0 * l) < 0:
                ok = True
                break
        if ok:
            passed += 1
        else:
            failures.append({"x": x.tolist(), "p": p.tolist(), "u": u.tolist()})
    return ScalingReport(checked, passed, failures)


def sup_cost(l, x, control_set, budget=MinimizeBudget()):
    """``sup_{u in U_r} l(x, u)`` by the same lattice-plus-refinement search (finite ``r`` only)."""
    if not control_set.bounded:
        raise ValueError("the supremum over an unbounded control set must be supplied analytically")
    x = np.asarray(x, dtype=float)

    def objective(sel, u):
        return -np.asarray(l(x, u), dtype=float)

    res = minimize_controls(objective, control_set, 1, budget)
    return float(-res.values[0])
