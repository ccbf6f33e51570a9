"""Infimal Hamiltonians by lattice search plus coordinate-descent refinement.

    H(x, p0, p) = inf_{u in U} <p, f(x, u)> + p0 * l(x, u)

The minimiser is deterministic: a lattice of ``grid_points`` per control
coordinate is scanned on each radius of the schedule, and the best point is
polished by a shrinking-step coordinate search.  On unbounded control sets a
running minimum below ``divergence_threshold`` is reported as ``-inf`` together
with the control that certifies it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expr import EvaluationError
from .rescale import rescale

__all__ = [
    "MinimizeBudget",
    "HamiltonianValue",
    "BatchMinimum",
    "minimize_controls",
    "integrand",
    "hamiltonian",
    "hamiltonian_batch",
    "truncated_hamiltonian",
    "hamiltonian_over_set",
    "SignEquivalenceReport",
    "sign_equivalence_check",
]


@dataclass(frozen=True)
class MinimizeBudget:
    grid_points: int = 33
    refine_iterations: int = 50
    radius_schedule: tuple = (1.0, 10.0, 100.0, 1000.0)
    divergence_threshold: float = -1e6
    max_grid: int = 20000
    chunk_evals: int = 400_000

    def __post_init__(self):
        if self.grid_points < 2 or self.refine_iterations < 0 or self.max_grid < 2:
            raise ValueError("grid and refinement counts must be positive")
        sched = tuple(float(r) for r in self.radius_schedule)
        if not sched or any(r <= 0 for r in sched) or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("radius schedule must be positive and strictly increasing")
        object.__setattr__(self, "radius_schedule", sched)


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    minimizer: np.ndarray
    certified_below: float

    @property
    def diverged(self):
        return self.value == -np.inf


@dataclass
class BatchMinimum:
    values: np.ndarray  # (B,)
    controls: np.ndarray  # (B, m)
    stage_values: np.ndarray  # (B, S) running minimum after each stage
    stage_radii: np.ndarray  # (S,)
    diverged: np.ndarray  # (B,) bool
    stage_controls: np.ndarray = None  # (B, S, m) best control after each stage


def _points_per_dim(m, budget):
    p = budget.grid_points
    if m and p ** m > budget.max_grid:
        p = max(3, int(budget.max_grid ** (1.0 / m)))
    if p % 2 == 0:
        p -= 1  # odd counts keep u = 0 on the lattice
    return max(p, 3)


def _lattice(m, extent, p):
    if m == 0:
        return np.zeros((1, 0))
    axis = np.linspace(-extent, extent, p)
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def _stages(control_set, budget, radius):
    """Radii of the nested feasible sets ``U ∩ B(0, R)`` scanned in turn."""
    if control_set.m == 0:
        return [0.0]
    if control_set.bounded:
        return [min(radius, np.inf)]
    sched = [r for r in budget.radius_schedule if r < radius]
    if np.isfinite(radius):
        sched.append(float(radius))
    return sched


def minimize_controls(objective, control_set, count, budget=MinimizeBudget(),
                      radius=np.inf, detect_divergence=False):
    """Minimise ``objective(sel, u)`` over ``U ∩ B(0, radius)`` for ``count`` problems at once.

    ``objective`` receives an index array ``sel`` selecting problems of the
    batch and controls ``u`` of shape ``(len(sel), G, m)``; it returns values
    of shape ``(len(sel), G)``.
    """
    m = control_set.m
    stages = _stages(control_set, budget, radius)
    p = _points_per_dim(m, budget)
    best_val = np.full(count, np.inf)
    best_u = np.zeros((count, m))
    stage_vals = np.full((count, len(stages)), np.nan)
    stage_u = np.zeros((count, len(stages), m))
    diverged = np.zeros(count, dtype=bool)
    active = np.arange(count)

    for s, R in enumerate(stages):
        if len(active) == 0:
            stage_vals[:, s] = best_val
            stage_u[:, s] = best_u
            continue
        extent = min(R, control_set.radius)
        if m and not np.isfinite(extent):
            extent = budget.radius_schedule[-1]
        grid = control_set.project(_lattice(m, extent, p), R)
        G = len(grid)
        rows = max(1, budget.chunk_evals // G)
        for start in range(0, len(active), rows):
            sel = active[start:start + rows]
            vals = np.asarray(objective(sel, np.broadcast_to(grid, (len(sel), G, m))), float)
            if not np.all(np.isfinite(vals)):
                raise EvaluationError("objective is not finite on the control lattice")
            j = np.argmin(vals, axis=1)
            v = vals[np.arange(len(sel)), j]
            better = v < best_val[sel]
            best_val[sel[better]] = v[better]
            best_u[sel[better]] = grid[j[better]]
        if m and budget.refine_iterations:
            spacing = 2 * extent / (p - 1)
            _refine(objective, control_set, R, active, best_val, best_u, spacing, budget)
        if detect_divergence and not control_set.bounded:
            hit = best_val[active] < budget.divergence_threshold
            diverged[active[hit]] = True
            active = active[~hit]
        stage_vals[:, s] = best_val
        stage_u[:, s] = best_u
    return BatchMinimum(best_val, best_u, stage_vals, np.array(stages), diverged, stage_u)


def _refine(objective, control_set, R, active, best_val, best_u, spacing, budget):
    m = best_u.shape[1]
    step = np.full(len(active), spacing)
    u = best_u[active].copy()
    val = best_val[active].copy()
    idx = np.arange(len(active))
    for _ in range(budget.refine_iterations):
        improved = np.zeros(len(active), dtype=bool)
        for i in range(m):
            cand = np.repeat(u[:, None, :], 2, axis=1)
            cand[:, 0, i] += step
            cand[:, 1, i] -= step
            cand = control_set.project(cand, R)
            vals = np.asarray(objective(active, cand), float)
            vals = np.where(np.isfinite(vals), vals, np.inf)
            j = np.argmin(vals, axis=1)
            v = vals[idx, j]
            better = v < val
            u[better] = cand[idx[better], j[better]]
            val[better] = v[better]
            improved |= better
        step = np.where(improved, step, 0.5 * step)
    best_u[active] = u
    best_val[active] = val


def integrand(problem, xs, p0, ps):
    """Objective ``(sel, u) -> <p, f(x, u)> + p0 l(x, u)`` over a batch of ``(x, p0, p)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ps = np.atleast_2d(np.asarray(ps, dtype=float))
    p0s = np.broadcast_to(np.asarray(p0, dtype=float), (len(xs),))

    def objective(sel, u):
        l, f = problem.cost_dynamics(xs[sel][:, None, :], u)
        out = p0s[sel][:, None] * l
        for k in range(f.shape[-1]):
            out = out + f[..., k] * ps[sel][:, None, k]
        return out

    return objective


def hamiltonian_batch(problem, xs, p0, ps, budget=MinimizeBudget(), radius=np.inf,
                      detect_divergence=True):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    obj = integrand(problem, xs, p0, ps)
    return minimize_controls(obj, problem.control_set, len(xs), budget, radius, detect_divergence)


def _single(res):
    u = res.controls[0]
    v = float(res.values[0])
    return HamiltonianValue(-np.inf if res.diverged[0] else v, u, v)


def hamiltonian(problem, x, p0, p, budget=MinimizeBudget()):
    """Infimal Hamiltonian at one ``(x, p0, p)``; ``value`` is ``-inf`` when divergence is detected."""
    return _single(hamiltonian_batch(problem, [x], p0, [p], budget))


def truncated_hamiltonian(problem, x, p0, p, N, budget=MinimizeBudget()):
    """Minimum over ``U ∩ B(0, N)``; always finite."""
    if not N > 0:
        raise ValueError("truncation radius must be positive")
    return _single(hamiltonian_batch(problem, [x], p0, [p], budget, radius=N,
                                     detect_divergence=False))


def hamiltonian_over_set(problem, x, p0, covectors, budget=MinimizeBudget()):
    """Largest Hamiltonian value over a set of covectors (negative iff negative for all)."""
    P = np.atleast_2d(np.asarray(covectors, dtype=float))
    xs = np.repeat(np.asarray(x, float)[None], len(P), axis=0)
    res = hamiltonian_batch(problem, xs, p0, P, budget)
    vals = np.where(res.diverged, -np.inf, res.values)
    k = int(np.argmax(vals))
    return HamiltonianValue(float(vals[k]), res.controls[k], float(res.values[k]))


@dataclass
class SignEquivalenceReport:
    samples: int
    disagreements: list = field(default_factory=list)
    dead_band: int = 0
    failures: int = 0

    @property
    def ok(self):
        return not self.disagreements

    def to_dict(self):
        return {
            "samples": self.samples,
            "disagreements": self.disagreements,
            "dead_band": self.dead_band,
            "failures": self.failures,
        }


def sign_equivalence_check(problem, samples, seed, budget=MinimizeBudget(), box=None,
                           p0_max=2.0, tol=1e-6):
    """Compare signs of the original and rescaled Hamiltonians at random ``(x, p0, p)``.

    ``box`` is ``(lower, upper)`` for drawing states; points in the target or
    outside the state space are redrawn.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, float) for b in box)
    n = problem.n
    xs = np.empty((0, n))
    while len(xs) < samples:
        cand = rng.uniform(lo, hi, size=(2 * samples, n))
        ok = problem.state_space.contains(cand) & ~problem.target.contains(cand)
        xs = np.concatenate([xs, cand[ok]])
    xs = xs[:samples]
    p0s = rng.uniform(0.0, p0_max, size=samples)
    ps = rng.standard_normal((samples, n))
    bar = rescale(problem)
    report = SignEquivalenceReport(samples)
    raw_v, bar_v, ok = _paired_values(problem, bar, xs, p0s, ps, budget)
    report.failures = int(np.sum(~ok))
    for i in np.flatnonzero(ok):
        a, b = raw_v[i], bar_v[i]
        if abs(a) <= tol or abs(b) <= tol:
            report.dead_band += 1
            continue
        if (a < 0) != (b < 0):
            report.disagreements.append({
                "x": xs[i].tolist(), "p0": float(p0s[i]), "p": ps[i].tolist(),
                "H": float(a), "H_rescaled": float(b),
            })
    return report


def _paired_values(problem, bar, xs, p0s, ps, budget):
    try:
        raw = hamiltonian_batch(problem, xs, p0s, ps, budget)
        res = hamiltonian_batch(bar, xs, p0s, ps, budget)
        raw_v = np.where(raw.diverged, -np.inf, raw.values)
        return raw_v, res.values, np.ones(len(xs), dtype=bool)
    except EvaluationError:
        pass
    raw_v = np.zeros(len(xs))
    bar_v = np.zeros(len(xs))
    ok = np.ones(len(xs), dtype=bool)
    for i in range(len(xs)):
        try:
            raw_v[i] = hamiltonian(problem, xs[i], p0s[i], ps[i], budget).value
            bar_v[i] = hamiltonian(bar, xs[i], p0s[i], ps[i], budget).value
        except EvaluationError:
            ok[i] = False
    return raw_v, bar_v, ok
