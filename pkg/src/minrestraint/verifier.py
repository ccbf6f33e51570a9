"""Sampled verification of the minimum-restraint inequality on level bands.

All Hamiltonian values are computed for the rescaled problem, so they are
finite and share the sign of the original ones.  The tables ``gamma`` and
``N`` are estimates at sampled points only: ``gamma`` is a lower estimate of
the decrease rate on ``{W >= r}``, ``N`` a control radius that achieved it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import EvaluationError
from .hamiltonian import MinimizeBudget, hamiltonian_batch
from .rescale import RescaledProblem, rescale

__all__ = [
    "LevelSampling",
    "VerificationReport",
    "verify_mrf",
    "PdProperReport",
    "check_positive_definite_proper",
    "RemarkAPrimeReport",
    "check_remark_A_prime",
    "sample_levels",
    "safe_values",
    "VIOLATION_TOL",
]

VIOLATION_TOL = 1e-9
DISCARD_W = 1e-12
CERTIFICATE_NOTE = ("gamma and N are sampled estimates: certificates hold at the sampled "
                    "points only, not on the whole level set")


@dataclass(frozen=True)
class LevelSampling:
    sigma: float
    box: tuple  # (lower, upper) sequences
    bands: int = 8
    samples: int = 2000
    seed: int = 0
    r_grid: tuple = None
    W0: float = np.inf

    def __post_init__(self):
        if not self.sigma > 0 or not self.sigma < self.W0:
            raise ValueError("need 0 < sigma < W0")
        if self.samples < 1 or self.bands < 1:
            raise ValueError("need at least one band and one sample")
        lo, hi = (tuple(float(v) for v in b) for b in self.box)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("bounding box needs lower < upper in every coordinate")
        object.__setattr__(self, "box", (lo, hi))
        if self.r_grid is None:
            grid = tuple(float(v) for v in self.sigma * np.geomspace(1.0, 1e-3, self.bands))
        else:
            grid = tuple(sorted((float(v) for v in self.r_grid), reverse=True))
        if any(not 0 < r <= 2 * self.sigma for r in grid):
            raise ValueError("r grid must lie in ]0, 2 sigma]")
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError("r grid must be strictly decreasing")
        object.__setattr__(self, "r_grid", grid)
        object.__setattr__(self, "bands", len(grid))


def safe_values(fn, xs):
    """Evaluate ``fn`` on rows of ``xs``; rows where evaluation fails become NaN."""
    xs = np.asarray(xs, dtype=float)
    try:
        return np.asarray(fn(xs), dtype=float)
    except (EvaluationError, FloatingPointError):
        out = np.full(len(xs), np.nan)
        for i, x in enumerate(xs):
            try:
                out[i] = float(fn(x[None])[0])
            except (EvaluationError, FloatingPointError):
                pass
        return out


def _anchor(problem, box):
    lo, hi = (np.asarray(b) for b in box)
    return np.clip(np.asarray(problem.target.anchor, dtype=float), lo, hi)


def sample_levels(problem, W, sampling, r, rng, count, max_rounds=200):
    """Rejection-sample ``count`` states with ``W`` in ``[r, 2 sigma]``.

    Each coordinate of the box shrinks towards the target anchor by its own
    log-uniform factor, so small sublevel sets are hit in every direction.
    """
    lo, hi = (np.asarray(b) for b in sampling.box)
    anchor = _anchor(problem, sampling.box)
    n = len(lo)
    top = 2 * sampling.sigma
    lam_min = min(1.0, 0.5 * np.sqrt(r / top))
    found = []
    total = 0
    for _ in range(max_rounds):
        batch = max(64, 4 * count)
        # independent factors per coordinate, so thin directions are reached at every scale
        lam = np.exp(rng.uniform(np.log(lam_min), 0.0, (batch, n)))
        pts = lo + rng.uniform(size=(batch, n)) * (hi - lo)
        x = anchor + lam * (pts - anchor)
        ok = problem.state_space.contains(x) & ~problem.target.contains(x)
        x = x[ok]
        w = safe_values(W, x)
        keep = np.isfinite(w) & (w >= r) & (w <= top) & (w > DISCARD_W)
        found.append(x[keep])
        total += int(keep.sum())
        if total >= count:
            break
    if not found:
        return np.empty((0, n))
    return np.concatenate(found)[:count]


@dataclass
class VerificationReport:
    verdict: str
    p0: float
    sigma: float
    r_grid: list
    gamma: list
    N: list
    band_counts: list
    band_worst: list  # per band: {margin, x, p, u}
    witness: dict = None
    reason: str = ""
    pd_proper: dict = None
    samples: int = 0
    note: str = CERTIFICATE_NOTE
    # per-sample data kept in memory only
    sample_points: np.ndarray = field(default=None, repr=False, compare=False)
    sample_margins: np.ndarray = field(default=None, repr=False, compare=False)

    def gamma_at(self, r):
        """Lower-interpolated ``gamma`` (nondecreasing, zero below the grid)."""
        rs = np.asarray(self.r_grid[::-1])
        gs = np.asarray(self.gamma[::-1])
        return float(np.interp(r, np.concatenate([[0.0], rs]), np.concatenate([[0.0], gs])))

    def N_at(self, r):
        rs = np.asarray(self.r_grid[::-1])
        ns = np.asarray(self.N[::-1])
        i = np.searchsorted(rs, r, side="right") - 1
        return float(ns[max(i, 0)])

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "p0": float(self.p0),
            "sigma": float(self.sigma),
            "r_grid": [float(v) for v in self.r_grid],
            "gamma": [float(v) for v in self.gamma],
            "N": [float(v) for v in self.N],
            "band_counts": [int(v) for v in self.band_counts],
            "band_worst": self.band_worst,
            "witness": self.witness,
            "reason": self.reason,
            "pd_proper": self.pd_proper,
            "samples": int(self.samples),
            "note": self.note,
        }


def _stage_radius(control_set, R):
    if np.isfinite(R):
        return float(R)
    if control_set.m == 0:
        return 0.0
    if control_set.kind == "ball":
        return float(control_set.radius)
    return float(control_set.radius * np.sqrt(control_set.m))


def verify_mrf(problem, candidate, sampling, budget=MinimizeBudget(), check_pd=True):
    """Sample ``{W in [r, 2 sigma]}`` for each ``r`` of the grid and test ``max_p Hbar < 0``."""
    if candidate.p0 < 0:
        raise ValueError("p0 must be nonnegative")
    base = problem.base if isinstance(problem, RescaledProblem) else problem
    bar = rescale(base)
    rng = np.random.default_rng(sampling.seed)
    draws = []
    counts = []
    for r in sampling.r_grid:
        xs = sample_levels(base, candidate.W, sampling, r, rng, sampling.samples)
        draws.append(xs)
        counts.append(len(xs))
    X = np.concatenate(draws) if draws else np.empty((0, base.n))
    pd = check_positive_definite_proper(candidate, sampling, base).to_dict() if check_pd else None
    empty = [r for r, c in zip(sampling.r_grid, counts) if c == 0]
    nbands = len(sampling.r_grid)
    if len(X) == 0:
        return VerificationReport("inconclusive", candidate.p0, sampling.sigma,
                                  list(sampling.r_grid), [0.0] * nbands, [0.0] * nbands,
                                  counts, [None] * nbands,
                                  reason="no samples in any level band; check the bounding box",
                                  pd_proper=pd)

    Wx = np.asarray(candidate.W(X), dtype=float)
    grads = candidate.gradients_batch(X)
    owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(grads)])
    P = np.concatenate(grads)
    if not np.all(np.isfinite(P)):
        raise EvaluationError("gradient oracle returned a non-finite covector")
    res = hamiltonian_batch(bar, X[owner], candidate.p0, P, budget, detect_divergence=False)

    # per-sample worst covector
    worst_pair = np.full(len(X), -1)
    worst_val = np.full(len(X), -np.inf)
    for k, i in enumerate(owner):
        if res.values[k] > worst_val[i]:
            worst_val[i] = res.values[k]
            worst_pair[i] = k
    margin = -worst_val
    stage_max = np.full((len(X), res.stage_values.shape[1]), -np.inf)
    np.maximum.at(stage_max, owner, res.stage_values)
    radii = np.array([_stage_radius(base.control_set, R) for R in res.stage_radii])

    gamma, nhat, worst = [], [], []
    for r in sampling.r_grid:
        sel = np.flatnonzero(Wx >= r)
        if len(sel) == 0:
            gamma.append(gamma[-1] if gamma else 0.0)
            nhat.append(nhat[-1] if nhat else 0.0)
            worst.append(None)
            continue
        i = sel[np.argmin(margin[sel])]
        g = float(margin[i])
        gamma.append(g)
        k = worst_pair[i]
        worst.append({"margin": g, "x": X[i].tolist(), "p": P[k].tolist(),
                      "u": res.controls[k].tolist(), "W": float(Wx[i])})
        # smallest stage radius at which every covector already reaches the band margin
        ok = stage_max[sel] <= -g + 1e-15
        first = np.where(ok.any(axis=1), np.argmax(ok, axis=1), len(radii) - 1)
        nhat.append(float(radii[first].max()))
    # envelopes: gamma nondecreasing in r, N nonincreasing in r (grid is decreasing in r)
    for j in range(len(gamma) - 2, -1, -1):
        gamma[j] = max(gamma[j], gamma[j + 1])
    for j in range(1, len(nhat)):
        nhat[j] = max(nhat[j], nhat[j - 1])

    report = VerificationReport("verified", candidate.p0, sampling.sigma, list(sampling.r_grid),
                                gamma, nhat, counts, worst, pd_proper=pd, samples=len(X),
                                sample_points=X, sample_margins=margin)
    bad = np.flatnonzero(worst_val >= -VIOLATION_TOL)
    if len(bad):
        i = bad[np.argmax(worst_val[bad])]
        k = worst_pair[i]
        u = res.controls[k]
        l, f = base.cost_dynamics(X[i], u)
        raw = float(np.dot(P[k], f) + candidate.p0 * l)
        report.verdict = "violated"
        report.witness = {"x": X[i].tolist(), "p": P[k].tolist(), "u": u.tolist(),
                          "H_rescaled": float(worst_val[i]), "integrand": raw,
                          "W": float(Wx[i])}
        report.reason = f"{len(bad)} sampled state(s) without a certified negative Hamiltonian"
    elif empty:
        report.verdict = "inconclusive"
        report.reason = f"empty level band(s) for r = {empty}; check the bounding box"
    elif pd is not None and not pd["ok"]:
        report.verdict = "inconclusive"
        report.reason = "Hamiltonian negative on samples but W failed the definiteness/properness checks"
    return report


@dataclass
class PdProperReport:
    positive_on_samples: bool
    zero_on_boundary: bool
    proper_proxy: bool
    boundary_value: bool
    min_W_outside: float
    max_W_on_boundary: float
    escaped: list = field(default_factory=list)
    boundary_failures: list = field(default_factory=list)

    @property
    def ok(self):
        return (self.positive_on_samples and self.zero_on_boundary and self.proper_proxy
                and self.boundary_value)

    def to_dict(self):
        return {
            "ok": self.ok,
            "positive_on_samples": self.positive_on_samples,
            "zero_on_boundary": self.zero_on_boundary,
            "proper_proxy": self.proper_proxy,
            "boundary_value": self.boundary_value,
            "min_W_outside": float(self.min_W_outside),
            "max_W_on_boundary": float(self.max_W_on_boundary),
            "escaped": self.escaped[:5],
            "boundary_failures": self.boundary_failures[:5],
        }


def check_positive_definite_proper(candidate, sampling, problem, count=4000, enlarge=4.0,
                                   boundary_gap=1e-3, boundary_tol=1e-6):
    """Positive definiteness, properness proxy and boundary behaviour of ``W`` on samples."""
    rng = np.random.default_rng(sampling.seed + 7919)
    lo, hi = (np.asarray(b) for b in sampling.box)
    n = len(lo)
    anchor = _anchor(problem, sampling.box)
    ss = problem.state_space
    W = candidate.W

    x = lo + rng.uniform(size=(count, n)) * (hi - lo)
    x = x[ss.contains(x) & ~problem.target.contains(x)]
    w = safe_values(W, x)
    pos = w[np.isfinite(w)]
    min_out = float(pos.min()) if len(pos) else np.inf
    positive = bool(len(pos) == 0 or min_out > 0)

    bpts = problem.target.boundary(rng, 64)
    wb = np.abs(safe_values(W, bpts))
    max_b = float(np.nanmax(wb)) if len(wb) else 0.0
    zero_b = bool(np.all(wb <= boundary_tol))

    # enlarge the box where the state space is unbounded, up to the state space otherwise
    slo = np.asarray(ss.lower)
    shi = np.asarray(ss.upper)
    big_lo = np.where(np.isfinite(slo), slo, anchor + enlarge * (lo - anchor))
    big_hi = np.where(np.isfinite(shi), shi, anchor + enlarge * (hi - anchor))
    y = big_lo + rng.uniform(size=(count, n)) * (big_hi - big_lo)
    y = y[ss.contains(y) & ~problem.target.contains(y)]
    wy = safe_values(W, y)
    inside_level = np.isfinite(wy) & (wy <= 2 * sampling.sigma)
    outside_box = np.any((y < lo) | (y > hi), axis=-1)
    escaped = y[inside_level & outside_box]

    failures = []
    if ss.bounded:
        z = lo + rng.uniform(size=(count, n)) * (hi - lo)
        z = np.clip(z, np.maximum(slo, -1e300), np.minimum(shi, 1e300))
        for j in range(n):
            for bound, side in ((slo[j], 1.0), (shi[j], -1.0)):
                if not np.isfinite(bound):
                    continue
                zz = z[:64].copy()
                zz[:, j] = bound + side * rng.uniform(1e-9, boundary_gap, len(zz))
                zz = zz[ss.contains(zz)]
                wz = safe_values(W, zz)
                if np.isfinite(sampling.W0):
                    bad = ~(wz >= sampling.W0 * (1 - 1e-2))
                else:
                    bad = ~(wz > 1e3)
                failures.extend(zz[bad].tolist())
    return PdProperReport(positive, zero_b, len(escaped) == 0, not failures, min_out, max_b,
                          escaped.tolist(), failures)


@dataclass
class RemarkAPrimeReport:
    worst_ratio: float
    worst_x: list
    worst_u: list
    evaluated: int
    skipped: int

    @property
    def ok(self):
        return self.worst_ratio <= 1.0 + 1e-6

    def to_dict(self):
        return {"ok": self.ok, "worst_ratio": self.worst_ratio, "worst_x": self.worst_x,
                "worst_u": self.worst_u, "evaluated": self.evaluated, "skipped": self.skipped}


def scaled_u_jacobian_norm(problem, x, u, h=1e-6):
    """Spectral norm of ``D_u (l, f)`` divided by ``(1 + |(l, f)|)^2`` at batched ``(x, u)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    m = u.shape[-1]

    def lf(uu):
        with np.errstate(over="ignore", invalid="ignore"):
            l, f = problem.cost_dynamics(x, uu)
        return np.concatenate([l[..., None], f], axis=-1)

    base = lf(u)
    step = h * np.maximum(1.0, np.abs(u))
    cols = []
    for i in range(m):
        e = np.zeros(m)
        e[i] = 1.0
        cols.append((lf(u + step[:, i:i + 1] * e) - lf(u - step[:, i:i + 1] * e))
                    / (2 * step[:, i:i + 1]))
    J = np.stack(cols, axis=-1)  # (B, 1+n, m)
    finite = np.all(np.isfinite(J), axis=(-2, -1)) & np.all(np.isfinite(base), axis=-1)
    norms = np.full(len(J), np.nan)
    if finite.any():
        norms[finite] = np.linalg.norm(J[finite], ord=2, axis=(-2, -1))
    scale = np.full(len(J), np.nan)
    scale[finite] = (1.0 + np.linalg.norm(base[finite], axis=-1)) ** 2
    return norms / scale


def check_remark_A_prime(problem, eta, sampling, u_radius=10.0, samples=None):
    """Worst ratio of the scaled control Jacobian of ``(l, f)`` against ``eta(x)``.

    States come from the sampling box, controls from ``|u| <= u_radius`` with
    log-uniform magnitudes.  Points where ``(l, f)`` overflows are skipped.
    """
    rng = np.random.default_rng(sampling.seed + 104729)
    count = samples or sampling.samples
    lo, hi = (np.asarray(b) for b in sampling.box)
    n, m = problem.n, problem.m
    x = lo + rng.uniform(size=(count, n)) * (hi - lo)
    x = x[problem.state_space.contains(x) & ~problem.target.contains(x)]
    dirs = rng.standard_normal((len(x), m))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-300)
    mags = np.exp(rng.uniform(np.log(1e-3), np.log(u_radius), len(x)))
    u = dirs * mags[:, None]
    ratios = np.full(len(x), np.nan)
    for i in range(len(x)):
        try:
            val = scaled_u_jacobian_norm(problem, x[i], u[i])[0]
            ratios[i] = val / float(np.asarray(eta(x[i])))
        except (EvaluationError, FloatingPointError, ZeroDivisionError):
            continue
    ok = np.isfinite(ratios)
    if not ok.any():
        return RemarkAPrimeReport(np.nan, [], [], 0, len(x))
    k = int(np.nanargmax(np.where(ok, ratios, -np.inf)))
    return RemarkAPrimeReport(float(ratios[k]), x[k].tolist(), u[k].tolist(), int(ok.sum()),
                              int((~ok).sum()))
