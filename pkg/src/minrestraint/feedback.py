"""Sample-and-hold feedback synthesis with per-cell decrease certificates.

Each hold cell starts at a node ``y0`` with ``w0 = W(y0)``.  A control is
chosen with integrand below ``-gamma(w0)``; it is held while the rescaled
dynamics is integrated, and the cell is accepted only if at every mesh point

    W(y(s)) - w0 + p0 * (cost(s) - cost0) <= -gamma(w0) / (eps + 1) * (s - s0)

Otherwise the cell length is halved and the cell re-run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .expr import EvaluationError
from .hamiltonian import MinimizeBudget, minimize_controls
from .rescale import RescaledProblem, cost_invariance_check, rescale, time_maps
from .verifier import safe_values

__all__ = [
    "AdaptiveGamma",
    "StepBudget",
    "Selection",
    "Trajectory",
    "KLEnvelope",
    "FeedbackGamma",
    "NoControlFound",
    "StepFloorReached",
    "StageTimeout",
    "feedback_gamma",
    "feedback_select",
    "sample_hold_stage",
    "synthesize",
    "build_kl_envelope",
    "GacReport",
    "check_gac_bound",
    "write_trajectory_csv",
    "CSV_COLUMNS",
    "cost_check",
]


class NoControlFound(RuntimeError):
    """No control certifies the required margin; carries the offending state."""

    def __init__(self, x, best, required):
        super().__init__(f"no control found at x={np.asarray(x).tolist()}: best integrand "
                         f"{best:.6g}, required < {-required:.6g}")
        self.x = np.asarray(x).tolist()
        self.best = float(best)
        self.required = float(required)


class StepFloorReached(RuntimeError):
    pass


class StageTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class StepBudget:
    eps: float = 1.0
    delta: float = 0.25
    floor: float = 1e-6
    substeps: int = 16
    safety: float = 0.5
    M: float = 1.0  # bound on |fbar|; 1 for every rescaled problem
    time_cap_factor: float = 1e3
    cert_tol: float = 1e-9
    max_cells: int = 100_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.delta > self.floor > 0:
            raise ValueError("need delta > floor > 0")
        if self.delta > 0.5:
            raise ValueError("hold cells longer than 1/2 void the KL estimate")
        if not 0 < self.M <= 1:
            raise ValueError("M must lie in ]0, 1]")
        if self.substeps < 1 or not 0 < self.safety <= 1:
            raise ValueError("substeps >= 1 and safety in ]0, 1] required")


@dataclass(frozen=True)
class FeedbackGamma:
    """Continuous, strictly increasing decrease rate built from sampled ``gamma`` nodes."""

    r: tuple  # ascending, starts at 0
    g: tuple

    def __call__(self, w):
        return np.interp(w, self.r, self.g)  # flat above the top node

    def tilde(self, w):
        """``min(w, gamma(w))`` extended linearly above the top node (for inversion)."""
        w = np.asarray(w, dtype=float)
        r_top, g_top = self.r[-1], self.g[-1]
        slope = g_top / r_top
        g = np.where(w <= r_top, np.interp(w, self.r, self.g), g_top + slope * (w - r_top))
        return np.minimum(w, g)

    def lowered(self, w, cap):
        """Copy with every node up to the first one at or above ``w`` capped at ``cap``."""
        r = np.asarray(self.r)
        g = np.asarray(self.g).copy()
        k = min(int(np.searchsorted(r, w)), len(r) - 1)
        g[1:k + 1] = np.minimum(g[1:k + 1], cap)
        for j in range(len(g) - 2, 0, -1):
            g[j] = min(g[j], g[j + 1] * (1 - 1e-9))
        return FeedbackGamma(self.r, tuple(g))


class AdaptiveGamma:
    """Rate table that is lowered in place when a visited state shows a thinner margin.

    Sampled rates can overshoot the true margin in thin regions of small
    level sets.  Lowering keeps ``gamma(w) <= safety * margin(x)`` at every
    state where a margin was measured; cells run before a cut met a stronger
    inequality, so the final table covers the whole trajectory.
    """

    def __init__(self, table, safety, limit=500):
        self.table = table
        self.safety = safety
        self.limit = limit
        self.events = []

    def __call__(self, w):
        return self.table(w)

    def observe(self, x, w, margin):
        """Cut the table below ``safety * margin`` at ``w``; True when it was lowered."""
        cap = self.safety * margin
        if not margin > 0 or cap >= self.table(w) or len(self.events) >= self.limit:
            return False
        self.table = self.table.lowered(w, cap)
        self.events.append({"x": np.asarray(x, dtype=float).tolist(), "W": float(w),
                            "margin": float(margin), "gamma": float(cap)})
        return True


def feedback_gamma(report, safety=0.5):
    """Lagged-linear lower interpolation of the verifier's ``gamma`` table, times ``safety``.

    At node ``r_j`` the value of the next lower node is used, so that every
    ``w`` in ``[r_{j+1}, r_j]`` gets a rate not above the sampled rate on
    ``{W >= r_{j+1}}``.  Below the lowest node the rate decays linearly to 0.
    """
    r = np.asarray(report.r_grid, dtype=float)[::-1]
    gam = np.asarray(report.gamma, dtype=float)[::-1]
    if np.any(gam <= 0):
        raise ValueError("gamma table is not positive; the candidate was not verified")
    lagged = np.concatenate([[gam[0] / 2], gam[:-1]])
    g = safety * lagged
    # strictly increasing: shave lower nodes (conservative)
    for j in range(len(g) - 2, -1, -1):
        g[j] = min(g[j], g[j + 1] * (1 - 1e-9))
    return FeedbackGamma(tuple(np.concatenate([[0.0], r])), tuple(np.concatenate([[0.0], g])))


@dataclass
class Selection:
    u: np.ndarray
    value: float  # max over certified covectors of the rescaled integrand
    radius: float
    widened: bool
    fallback: bool
    margin: float = None  # -min over the first radius, when the minimiser ran there


def _integrand_max(bar, x, p0, P):
    x = np.asarray(x, dtype=float)

    def objective(sel, u):
        l, f = bar.cost_dynamics(x, u)
        vals = [p0 * l + np.sum(f * p, axis=-1) for p in P]
        return np.max(vals, axis=0)

    return objective


def feedback_select(problem, candidate, x, N, gamma, budget=MinimizeBudget(), max_radius=None,
                    hint=None):
    """A control in ``U ∩ B(0, N)`` whose rescaled integrand is below ``-gamma``.

    The control is certified against every covector of the oracle when
    possible; otherwise against the first one (``fallback``).  The radius
    widens along the schedule when ``N`` is not enough (``widened``).

    Small controls are preferred: ``u = 0``, then ``hint`` (typically the
    previous cell's control), then the minimiser on each inner radius of the
    schedule are taken as soon as they clear ``-2 gamma``; large controls
    make the rescaled state move fast and force short hold cells.
    """
    bar = problem if isinstance(problem, RescaledProblem) else rescale(problem)
    P = candidate.gradients(x)
    cs = bar.control_set
    zero = np.zeros(cs.m)
    sched = [float(N)] + [R for R in budget.radius_schedule if R > N]
    top = max(sched)
    sched += [10 * top, 100 * top]
    if max_radius is not None:
        sched = [R for R in sched if R <= max_radius] or [float(max_radius)]
    best = np.inf
    for covs, fallback in ((P, False), (P[:1], True)):
        obj = _integrand_max(bar, x, candidate.p0, covs)
        v0 = float(obj(None, zero[None, None, :])[0, 0])
        if v0 < -2 * gamma:
            return Selection(zero, v0, 0.0, False, fallback)
        if hint is not None and cs.contains(hint) and np.linalg.norm(hint) <= N:
            hint = np.asarray(hint, dtype=float)
            vh = float(obj(None, hint[None, None, :])[0, 0])
            if vh < -2 * gamma:
                return Selection(hint, vh, float(N), False, fallback)
        for k, R in enumerate(sched):
            res = minimize_controls(obj, cs, 1, budget, radius=R)
            vals = res.stage_values[0]
            if k == 0:
                good = np.flatnonzero(vals < -gamma)
                if len(good):
                    j = good[0]
                    return Selection(res.stage_controls[0, j], float(vals[j]),
                                     float(res.stage_radii[j]), False, fallback,
                                     None if fallback else -float(res.values[0]))
            v = float(res.values[0])
            best = min(best, v)
            if v < -gamma:
                return Selection(res.controls[0], v, R, k > 0, fallback)
            if cs.bounded:
                break
    raise NoControlFound(x, best, gamma)


def _rk4(bar, y, c, u, h):
    def rhs(yy):
        l, f = bar.cost_dynamics(yy, u)
        return f, float(l)

    k1, q1 = rhs(y)
    k2, q2 = rhs(y + 0.5 * h * k1)
    k3, q3 = rhs(y + 0.5 * h * k2)
    k4, q4 = rhs(y + h * k3)
    return (y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4),
            c + h / 6 * (q1 + 2 * q2 + 2 * q3 + q4))


def _W1(W, y):
    return float(np.asarray(W(np.asarray(y, dtype=float)[None]))[0])


@dataclass
class _Segment:
    s: list = field(default_factory=list)
    y: list = field(default_factory=list)
    v: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    W: list = field(default_factory=list)
    lhs: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    cells: list = field(default_factory=list)  # (start index, end index, lhs, rhs)
    widenings: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    rejections: int = 0


def _run_cell(bar, candidate, y0, c0, s0, w0, u, delta, gam, mu_hat, sigma, sb):
    """Integrate one hold cell; return mesh points or ``None`` when the cell is rejected."""
    W = candidate.W
    ss = bar.state_space
    h = delta / sb.substeps
    ys, cs_, ws, ss_ = [], [], [], []
    y, c = y0, c0
    rate = gam / (sb.eps + 1)
    for k in range(1, sb.substeps + 1):
        try:
            y_new, c_new = _rk4(bar, y, c, u, h)
            if not (np.all(np.isfinite(y_new)) and ss.contains(y_new)):
                return None
            w_new = _W1(W, y_new)
        except EvaluationError:
            return None
        s_new = s0 + k * h
        if not np.isfinite(w_new) or w_new > 2 * sigma:
            return None
        if w_new <= mu_hat:
            # locate the level crossing inside this substep
            def phi(hh):
                return _W1(W, _rk4(bar, y, c, u, hh)[0]) - mu_hat
            try:
                hh = brentq(phi, 0.0, h, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            except (ValueError, EvaluationError):
                hh = h
            y_new, c_new = _rk4(bar, y, c, u, hh)
            w_new = _W1(W, y_new)
            s_new = s0 + (k - 1) * h + hh
            lhs = w_new - w0 + candidate.p0 * (c_new - c0)
            if lhs > -rate * (s_new - s0) + sb.cert_tol:
                return None
            ys.append(y_new), cs_.append(c_new), ws.append(w_new), ss_.append(s_new)
            return ys, cs_, ws, ss_, True
        lhs = w_new - w0 + candidate.p0 * (c_new - c0)
        if lhs > -rate * (s_new - s0) + sb.cert_tol:
            return None
        ys.append(y_new), cs_.append(c_new), ws.append(w_new), ss_.append(s_new)
        y, c = y_new, c_new
    return ys, cs_, ws, ss_, False


def sample_hold_stage(problem, candidate, x0, mu_bar, mu_hat, gamma_fn, N, sigma,
                      step=StepBudget(), budget=MinimizeBudget(), s0=0.0, cost0=0.0):
    """Drive ``W`` from ``mu_bar`` down to ``mu_hat`` by held controls.

    ``gamma_fn`` maps a level to the required decrease rate; an
    :class:`AdaptiveGamma` is also told every margin the minimiser measures.
    ``N`` is the control radius (a number or a function of the level).
    Returns a segment whose first point is ``x0``.
    """
    bar = problem if isinstance(problem, RescaledProblem) else rescale(problem)
    x0 = np.asarray(x0, dtype=float)
    w_start = _W1(candidate.W, x0)
    if abs(w_start - mu_bar) > 1e-9 * max(1.0, abs(mu_bar)):
        raise ValueError(f"W(x0) = {w_start} does not match the band top {mu_bar}")
    if not 0 < mu_hat <= mu_bar:
        raise ValueError("need 0 < mu_hat <= mu_bar")
    seg = _Segment()
    seg.s.append(s0), seg.y.append(x0), seg.cost.append(cost0), seg.W.append(w_start)
    seg.lhs.append(0.0), seg.rhs.append(0.0)
    if mu_hat >= mu_bar:
        return seg
    adaptive = hasattr(gamma_fn, "observe")

    def time_cap():
        g_low = float(gamma_fn(mu_hat / 4))
        if not g_low > 0:
            raise ValueError("decrease rate vanishes inside the band")
        return step.time_cap_factor * (step.eps + 1) * mu_bar / g_low

    cap = time_cap()
    y, c, s, w = x0, cost0, s0, w_start
    delta = step.delta
    for _ in range(step.max_cells):
        if s - s0 > cap:
            raise StageTimeout(f"stage [{mu_hat:.3g}, {mu_bar:.3g}] exceeded time cap {cap:.3g}")
        gam = float(gamma_fn(w))
        radius = N(w) if callable(N) else N
        while True:
            try:
                sel = feedback_select(bar, candidate, y, radius, gam, budget,
                                      hint=seg.v[-1] if seg.v else None)
            except NoControlFound as exc:
                if adaptive and gamma_fn.observe(y, w, -exc.best):
                    gam, cap = float(gamma_fn(w)), time_cap()
                    continue
                raise
            break
        if adaptive and sel.margin is not None and gamma_fn.observe(y, w, sel.margin):
            gam, cap = float(gamma_fn(w)), time_cap()
        if sel.widened:
            seg.widenings.append({"x": y.tolist(), "N": float(radius), "used": sel.radius})
        if sel.fallback:
            seg.fallbacks.append({"x": y.tolist()})
        clean = True
        while True:
            out = _run_cell(bar, candidate, y, c, s, w, sel.u, delta, gam, mu_hat, sigma, step)
            if out is not None:
                break
            clean = False
            seg.rejections += 1
            delta /= 2
            if delta < step.floor:
                raise StepFloorReached(f"cell length fell below {step.floor} at x={y.tolist()}")
        ys, cs_, ws, ss_, done = out
        start = len(seg.s) - 1
        rate = gam / (step.eps + 1)
        for yy, cc, ww, sv in zip(ys, cs_, ws, ss_):
            seg.s.append(sv), seg.y.append(yy), seg.cost.append(cc), seg.W.append(ww)
            seg.lhs.append(ww - w + candidate.p0 * (cc - c))
            seg.rhs.append(-rate * (sv - s))
            seg.v.append(sel.u)
        seg.cells.append((start, len(seg.s) - 1, seg.lhs[-1], seg.rhs[-1]))
        used = ss_[-1] - s
        y, c, s, w = ys[-1], cs_[-1], ss_[-1], ws[-1]
        if done:
            return seg
        if clean:
            delta = min(step.delta, 2 * max(used, delta))
    raise StageTimeout("too many cells in one stage")


@dataclass
class Trajectory:
    s: np.ndarray
    y: np.ndarray
    v: np.ndarray  # v[i] is held on [s[i], s[i+1]]
    cost: np.ndarray
    W: np.ndarray
    cert_lhs: np.ndarray
    cert_rhs: np.ndarray
    cells: list
    stage_index: list  # mesh indices where a stage ends
    levels: list  # mu_k reached at those indices
    t: np.ndarray
    d: np.ndarray
    p0: float
    eps: float
    status: str = "complete"
    message: str = ""
    widenings: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    rejections: int = 0
    gamma: FeedbackGamma = None
    refinements: list = field(default_factory=list)  # rate-table cuts made during synthesis

    @property
    def total_cost(self):
        return float(self.cost[-1] - self.cost[0]) if len(self.cost) else 0.0

    @property
    def empty(self):
        return len(self.s) <= 1

    def certificates_ok(self, tol=1e-9):
        return bool(np.all(self.cert_lhs <= self.cert_rhs + tol))

    def summary(self):
        W0 = float(self.W[0]) if len(self.W) else 0.0
        return {
            "status": self.status,
            "message": self.message,
            "points": int(len(self.s)),
            "cells": len(self.cells),
            "rejections": int(self.rejections),
            "W_initial": W0,
            "W_final": float(self.W[-1]) if len(self.W) else 0.0,
            "d_initial": float(self.d[0]) if len(self.d) else 0.0,
            "d_final": float(self.d[-1]) if len(self.d) else 0.0,
            "s_final": float(self.s[-1]) if len(self.s) else 0.0,
            "t_final": float(self.t[-1]) if len(self.t) else 0.0,
            "total_cost": self.total_cost,
            "cost_bound": W0 / self.p0 if self.p0 > 0 else None,
            "certificates_ok": self.certificates_ok(),
            "stages": len(self.levels),
            "widenings": len(self.widenings),
            "fallbacks": len(self.fallbacks),
            "refinements": len(self.refinements),
        }


def synthesize(problem, candidate, z, report, step=StepBudget(), budget=MinimizeBudget(),
               nu=None, stop_frac=1e-3, max_stages=200, max_refinements=500):
    """Concatenate sample-and-hold stages for the bands ``[nu_k W(z), nu_{k-1} W(z)]``.

    ``report`` is a verification report supplying ``sigma`` and the
    ``gamma``/``N`` tables.  Stops once ``W <= stop_frac * W(z)``.  Stage
    failures end the run with ``status`` set to ``inconclusive`` or
    ``failed``; the partial trajectory is kept.

    The rate table is an :class:`AdaptiveGamma` allowed ``max_refinements``
    cuts; the trajectory keeps the final table and the list of cuts.
    """
    base = problem.base if isinstance(problem, RescaledProblem) else problem
    bar = rescale(base)
    z = np.asarray(z, dtype=float)
    Wz = _W1(candidate.W, z) if not base.target.contains(z) else 0.0
    sigma = report.sigma
    if Wz > sigma * (1 + 1e-12):
        raise ValueError(f"W(z) = {Wz} exceeds sigma = {sigma}")
    gfn = AdaptiveGamma(feedback_gamma(report, step.safety), step.safety, max_refinements)
    nu = nu or (lambda k: 2.0 ** (-k))
    stop = stop_frac * Wz
    segs = []
    status, message = "complete", ""
    s, c, y, mu_prev = 0.0, 0.0, z, Wz
    if Wz > 0 and Wz > stop:
        for k in range(1, max_stages + 1):
            mu = max(nu(k) * Wz, stop)
            try:
                seg = sample_hold_stage(bar, candidate, y, mu_prev, mu, gfn, report.N_at,
                                        sigma, step, budget, s, c)
            except StageTimeout as exc:
                status, message = "inconclusive", str(exc)
                break
            except (StepFloorReached, NoControlFound) as exc:
                status, message = "failed", str(exc)
                break
            segs.append((seg, mu))
            s, c, y = seg.s[-1], seg.cost[-1], seg.y[-1]
            mu_prev = seg.W[-1]
            if mu_prev <= stop * (1 + 1e-9):
                break
    tr = _assemble(base, candidate, z, Wz, segs, step, gfn.table, status, message)
    tr.refinements = gfn.events
    return tr


def _assemble(base, candidate, z, Wz, segs, step, gfn, status, message):
    n, m = base.n, base.m
    s, y, v, cost, W, lhs, rhs = [0.0], [z], [], [0.0], [Wz], [0.0], [0.0]
    cells, stage_index, levels, widen, fb = [], [], [], [], []
    rejections = 0
    for seg, mu in segs:
        off = len(s) - 1
        s += seg.s[1:]
        y += seg.y[1:]
        v += seg.v
        cost += seg.cost[1:]
        W += seg.W[1:]
        lhs += seg.lhs[1:]
        rhs += seg.rhs[1:]
        cells += [(a + off, b + off, l_, r_) for a, b, l_, r_ in seg.cells]
        stage_index.append(len(s) - 1)
        levels.append(float(mu))
        widen += seg.widenings
        fb += seg.fallbacks
        rejections += seg.rejections
    s = np.array(s)
    y = np.array(y).reshape(-1, n)
    v = np.array(v).reshape(-1, m)
    if len(s) > 1:
        t = time_maps(base, s, y, v).t
    else:
        t = s.copy()
    d = np.asarray(base.target.distance(y), dtype=float)
    return Trajectory(s, y, v, np.array(cost), np.array(W), np.array(lhs), np.array(rhs),
                      cells, stage_index, levels, t, d, candidate.p0, step.eps, status, message,
                      widen, fb, rejections, gfn)


@dataclass
class KLEnvelope:
    sm_r: np.ndarray  # sigma_minus nodes: level -> distance
    sm_v: np.ndarray
    sp_r: np.ndarray  # sigma_plus nodes
    sp_v: np.ndarray
    gamma: FeedbackGamma
    eps: float
    sp_exponent: float  # power-law exponent used below the lowest sigma_plus node

    def sigma_minus(self, r):
        r = np.asarray(r, dtype=float)
        top_r, top_v = self.sm_r[-1], self.sm_v[-1]
        return np.where(r <= top_r, np.interp(r, self.sm_r, self.sm_v), top_v * r / top_r)

    def sigma_minus_inv(self, d):
        d = np.asarray(d, dtype=float)
        top_r, top_v = self.sm_r[-1], self.sm_v[-1]
        return np.where(d <= top_v, np.interp(d, self.sm_v, self.sm_r), top_r * d / top_v)

    def sigma_plus(self, r):
        r = np.asarray(r, dtype=float)
        lo_r, lo_v = self.sp_r[1], self.sp_v[1]
        top_r, top_v = self.sp_r[-1], self.sp_v[-1]
        below = lo_v * (np.maximum(r, 0) / lo_r) ** self.sp_exponent
        mid = np.interp(r, self.sp_r, self.sp_v)
        return np.where(r < lo_r, below, np.where(r <= top_r, mid, top_v * r / top_r))

    def gamma_tilde_inv(self, y):
        """Inverse of ``min(r, gamma(r))`` by bisection on its monotone table."""
        y = np.asarray(y, dtype=float)
        grid = np.concatenate([np.asarray(self.gamma.r), np.asarray(self.gamma.r[-1]) * np.geomspace(1.01, 1e6, 400)])
        vals = self.gamma.tilde(grid)
        top_r, top_v = grid[-1], vals[-1]
        return np.where(y <= top_v, np.interp(y, vals, grid), top_r * y / top_v)

    def beta(self, r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        arg = self.sigma_minus_inv(r) * 2 * (self.eps + 1) / (self.eps + 1 + t)
        return self.sigma_plus(self.gamma_tilde_inv(arg))


def _strict_up(v):
    """Make a nondecreasing table strictly increasing by lifting later entries."""
    v = np.array(v, dtype=float)
    for i in range(1, len(v)):
        if v[i] <= v[i - 1]:
            v[i] = v[i - 1] * (1 + 1e-12) + 1e-300
    return v


def _strict_down(v):
    """Make it strictly increasing by lowering earlier entries (conservative lower bound)."""
    v = np.array(v, dtype=float)
    for i in range(len(v) - 2, -1, -1):
        if v[i] >= v[i + 1]:
            v[i] = v[i + 1] * (1 - 1e-12)
    return v


def build_kl_envelope(problem, candidate, gamma, sampling, eps, count=40000, nodes=240,
                      depth=1e-12):
    """Tabulate ``sigma_-``, ``sigma^+`` from samples and assemble ``beta``.

    ``gamma`` is the rate actually used by the feedback (a
    :class:`FeedbackGamma` or a verification report).  Level nodes are
    geometric in ``[depth * 2 sigma, 2 sigma]``; each node borrows the
    sample statistics of its outer neighbour, which keeps both tables on
    the conservative side of the sampling error.
    """
    if not isinstance(gamma, FeedbackGamma):
        gamma = feedback_gamma(gamma)
    base = problem.base if isinstance(problem, RescaledProblem) else problem
    rng = np.random.default_rng(sampling.seed + 15485863)
    lo, hi = (np.asarray(b) for b in sampling.box)
    n = len(lo)
    anchor = np.clip(np.asarray(base.target.anchor, dtype=float), lo, hi)
    lam = np.exp(rng.uniform(np.log(np.sqrt(depth)), 0.0, count))
    x = anchor + lam[:, None] * (lo + rng.uniform(size=(count, n)) * (hi - lo) - anchor)
    x = x[base.state_space.contains(x)]
    w = safe_values(candidate.W, x)
    d = np.asarray(base.target.distance(x), dtype=float)
    top = 2 * sampling.sigma
    ok = np.isfinite(w) & (w <= top)
    w, d = w[ok], d[ok]
    if len(w) == 0:
        raise ValueError("no samples in the sublevel set {W <= 2 sigma}")
    order = np.argsort(w)
    w, d = w[order], d[order]
    r = np.geomspace(depth * top, top, nodes)
    # min d over W >= r (suffix minimum), max d over W <= r (prefix maximum)
    suffix_min = np.minimum.accumulate(d[::-1])[::-1]
    prefix_max = np.maximum.accumulate(d)
    i_ge = np.searchsorted(w, r, side="left")
    i_le = np.searchsorted(w, r, side="right") - 1
    mind = np.where(i_ge < len(w), suffix_min[np.minimum(i_ge, len(w) - 1)], np.inf)
    maxd = np.where(i_le >= 0, prefix_max[np.maximum(i_le, 0)], 0.0)
    # borrow outer neighbours
    mind_lag = np.concatenate([[mind[0]], mind[:-1]])
    mind_lag = np.minimum(mind_lag, mind)
    maxd_lead = np.concatenate([maxd[1:], [maxd[-1]]])
    sm = np.minimum(r, mind_lag)
    sm = _strict_down(np.minimum.accumulate(sm[::-1])[::-1])
    pos = maxd_lead > 0
    sp_r, sp_v = r[pos], _strict_up(np.maximum.accumulate(maxd_lead[pos]))
    if len(sp_r) < 2:
        raise ValueError("too few samples to tabulate sigma_plus")
    k = min(len(sp_r) - 1, max(1, nodes // 24))
    expo = float(np.log(sp_v[k] / sp_v[0]) / np.log(sp_r[k] / sp_r[0]))
    expo = float(np.clip(expo, 0.05, 1.0))
    return KLEnvelope(np.concatenate([[0.0], r]), np.concatenate([[0.0], sm]),
                      np.concatenate([[0.0], sp_r]), np.concatenate([[0.0], sp_v]),
                      gamma, float(eps), expo)


@dataclass
class GacReport:
    ok_s: bool
    ok_t: bool
    worst_slack_s: float
    worst_slack_t: float
    samples: int

    @property
    def ok(self):
        return self.ok_s and self.ok_t

    def to_dict(self):
        return {"ok": self.ok, "ok_s": self.ok_s, "ok_t": self.ok_t,
                "worst_slack_s": self.worst_slack_s, "worst_slack_t": self.worst_slack_t,
                "samples": self.samples}


def check_gac_bound(trajectory, envelope):
    """Check ``d(y(s)) <= beta(d(z), s)`` and ``d(x(t)) <= beta(d(z), t)`` at every sample."""
    if trajectory.empty:
        return GacReport(True, True, np.inf, np.inf, len(trajectory.s))
    dz = trajectory.d[0]
    slack_s = envelope.beta(dz, trajectory.s) - trajectory.d
    slack_t = envelope.beta(dz, trajectory.t) - trajectory.d
    return GacReport(bool(np.all(slack_s >= 0)), bool(np.all(slack_t >= 0)),
                     float(slack_s.min()), float(slack_t.min()), len(trajectory.s))


CSV_COLUMNS = ("s", "t", "x_*", "u_*", "W", "cumulative_cost", "cert_lhs", "cert_rhs",
               "beta_bound", "d_target", "stage_boundary")


def write_trajectory_csv(trajectory, path, envelope=None):
    """One row per mesh point; ``u`` is the control held from that point (last row repeats)."""
    tr = trajectory
    n = tr.y.shape[1]
    m = tr.v.shape[1] if tr.v.ndim == 2 else 0
    header = (["s", "t"] + [f"x_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
              + ["W", "cumulative_cost", "cert_lhs", "cert_rhs", "beta_bound", "d_target",
                 "stage_boundary"])
    beta = (envelope.beta(tr.d[0], tr.s) if envelope is not None and len(tr.s)
            else np.full(len(tr.s), np.nan))
    ends = set(tr.stage_index)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(len(tr.s)):
            if len(tr.v):
                u = tr.v[min(i, len(tr.v) - 1)]
            else:
                u = np.zeros(m)
            row = ([tr.s[i], tr.t[i]] + list(tr.y[i]) + list(u)
                   + [tr.W[i], tr.cost[i], tr.cert_lhs[i], tr.cert_rhs[i], beta[i], tr.d[i],
                      int(i in ends)])
            wr.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])
    return header


def cost_check(trajectory, problem):
    """Rescaled against original cost along a synthesized trajectory."""
    return cost_invariance_check(problem, trajectory.s, trajectory.y, trajectory.v)
