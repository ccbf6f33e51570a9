"""State spaces, targets, control sets, control problems and MRF candidates.

Every callable in this module follows one broadcasting convention: states
have shape ``(..., n)``, controls ``(..., m)``, and leading dimensions
broadcast against each other.  Dynamics return ``(..., n)``; costs and
candidate functions return ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import EvaluationError, compile_expr, compile_exprs, parse_expr

__all__ = [
    "StateSpace",
    "Target",
    "ControlSet",
    "ControlProblem",
    "MrfCandidate",
    "point_target",
    "expr_field",
    "expr_scalar",
    "limiting_gradient_fd",
    "limiting_gradients_fd_batch",
    "FD_STEP",
    "FD_PERTURBATIONS",
    "FD_MERGE_TOL",
]

FD_STEP = 1e-5
FD_PERTURBATIONS = 8
FD_MERGE_TOL = 1e-4


@dataclass(frozen=True)
class StateSpace:
    """All of R^n or an open box with per-coordinate (possibly infinite) bounds."""

    n: int
    lower: tuple = None
    upper: tuple = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be positive")
        lo = (-np.inf,) * self.n if self.lower is None else tuple(float(v) for v in self.lower)
        hi = (np.inf,) * self.n if self.upper is None else tuple(float(v) for v in self.upper)
        if len(lo) != self.n or len(hi) != self.n:
            raise ValueError("bounds must have one entry per coordinate")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("lower bound must be below upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def bounded(self):
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x > np.asarray(self.lower)) & (x < np.asarray(self.upper)), axis=-1)


@dataclass(frozen=True)
class Target:
    """Closed target described through its Euclidean distance function.

    ``anchor`` is a reference point on the target used to centre sampling
    boxes and to produce boundary samples.
    """

    distance: Callable
    anchor: tuple
    boundary_samples: Optional[Callable] = None
    tol: float = 0.0

    def contains(self, x):
        return np.asarray(self.distance(x)) <= self.tol

    def boundary(self, rng, k):
        if self.boundary_samples is not None:
            return np.asarray(self.boundary_samples(rng, k), dtype=float)
        return np.tile(np.asarray(self.anchor, dtype=float), (1, 1))


def point_target(point):
    """Target ``{c}``; its distance is the Euclidean norm of ``x - c``."""
    c = np.asarray(point, dtype=float)

    def distance(x):
        return np.linalg.norm(np.asarray(x, dtype=float) - c, axis=-1)

    return Target(distance=distance, anchor=tuple(c.tolist()))


@dataclass(frozen=True)
class ControlSet:
    """Box ``[-r, r]^m`` (``r`` may be infinite), Euclidean ball, or all of R^m."""

    m: int
    kind: str = "all"
    radius: float = np.inf

    def __post_init__(self):
        if self.kind not in ("box", "ball", "all"):
            raise ValueError(f"unknown control set kind {self.kind!r}")
        if self.m < 0:
            raise ValueError("control dimension must be nonnegative")
        if self.kind == "all":
            object.__setattr__(self, "radius", np.inf)
        elif not self.radius > 0:
            raise ValueError("control set radius must be positive")

    @property
    def bounded(self):
        return self.m == 0 or np.isfinite(self.radius)

    def contains(self, u, tol=1e-12):
        u = np.asarray(u, dtype=float)
        if self.kind == "ball":
            return np.linalg.norm(u, axis=-1) <= self.radius + tol
        return np.all(np.abs(u) <= self.radius + tol, axis=-1)

    def project(self, u, radius=np.inf):
        """Map ``u`` into ``U ∩ B(0, radius)`` (clip to the box, then shrink radially)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "box" and np.isfinite(self.radius):
            u = np.clip(u, -self.radius, self.radius)
        cap = min(radius, self.radius) if self.kind == "ball" else radius
        if np.isfinite(cap):
            norm = np.linalg.norm(u, axis=-1, keepdims=True)
            scale = np.where(norm > cap, cap / np.where(norm > 0, norm, 1.0), 1.0)
            u = u * scale
        return u


@dataclass(frozen=True)
class ControlProblem:
    """The triple (running cost, dynamics, target) on a state space with controls in U."""

    state_space: StateSpace
    target: Target
    control_set: ControlSet
    dynamics: Callable
    cost: Callable
    name: str = ""

    @property
    def n(self):
        return self.state_space.n

    @property
    def m(self):
        return self.control_set.m

    def cost_dynamics(self, x, u):
        """Return ``(l, f)`` evaluated together at broadcast ``(x, u)``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1] != self.n or u.shape[-1] != self.m:
            raise ValueError(
                f"dimension mismatch: expected x[..., {self.n}] and u[..., {self.m}]")
        f = np.asarray(self.dynamics(x, u), dtype=float)
        l = np.asarray(self.cost(x, u), dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return np.broadcast_to(l, shape), np.broadcast_to(f, shape + (self.n,))

    def check_cost_nonnegative(self, xs, us):
        l, _ = self.cost_dynamics(xs, us)
        return bool(np.all(l >= 0))


@dataclass(frozen=True)
class MrfCandidate:
    """A candidate minimum restraint function ``W`` with its limiting-gradient oracle.

    ``gradient_oracle(x)`` returns an array of covectors with shape ``(k, n)``.
    When omitted, :func:`limiting_gradient_fd` with the module defaults is used.
    """

    W: Callable
    p0: float
    W0: float = np.inf
    gradient_oracle: Optional[Callable] = None
    name: str = ""

    def __post_init__(self):
        if self.p0 < 0:
            raise ValueError("p0 must be nonnegative")

    def gradients(self, x):
        if self.gradient_oracle is not None:
            return np.atleast_2d(np.asarray(self.gradient_oracle(np.asarray(x, float)), float))
        return limiting_gradient_fd(self.W, x)

    def gradients_batch(self, xs):
        """Covector sets for each row of ``xs`` (list of ``(k_i, n)`` arrays)."""
        xs = np.asarray(xs, dtype=float)
        if self.gradient_oracle is not None:
            return [self.gradients(x) for x in xs]
        return limiting_gradients_fd_batch(self.W, xs)

    def with_p0(self, p0):
        return MrfCandidate(self.W, p0, self.W0, self.gradient_oracle, self.name)


def expr_field(texts, n, m):
    """Vector field ``(x, u) -> (..., n)`` from a list of expression strings."""
    trees = [parse_expr(t, n, m) for t in texts]
    if len(trees) != n:
        raise ValueError(f"expected {n} field components, got {len(trees)}")
    fn = compile_exprs(trees)

    def field_(x, u):
        return fn(x, u)

    field_.trees = trees
    return field_


def expr_scalar(text, n, m):
    tree = parse_expr(text, n, m)

    scalar = compile_expr(tree)

    scalar.tree = tree
    return scalar


_DIRECTIONS = {}


def _perturbation_directions(n, k):
    """Fixed unit directions: the signed axes first, then seeded random ones."""
    key = (n, k)
    if key not in _DIRECTIONS:
        axes = np.concatenate([np.eye(n), -np.eye(n)])
        dirs = list(axes[:k])
        if k > len(dirs):
            rng = np.random.default_rng(20240611 + n)
            extra = rng.standard_normal((k - len(dirs), n))
            extra /= np.linalg.norm(extra, axis=1, keepdims=True)
            dirs.extend(extra)
        _DIRECTIONS[key] = np.array(dirs[:k])
    return _DIRECTIONS[key]


def _merge(grads, tol):
    reps = []
    for g in grads:
        if not any(np.linalg.norm(g - r) <= tol * max(1.0, np.linalg.norm(r)) for r in reps):
            reps.append(g)
    return np.array(reps)


def limiting_gradients_fd_batch(W, xs, h=FD_STEP, k=FD_PERTURBATIONS, tol=FD_MERGE_TOL):
    """Vectorised :func:`limiting_gradient_fd` over the rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if not h > 0 or k < 1:
        raise ValueError("need h > 0 and k >= 1")
    B, n = xs.shape
    dirs = _perturbation_directions(n, k)
    # base points: x itself, then x + (h/2) d_i
    pts = np.concatenate([xs[:, None, :], xs[:, None, :] + 0.5 * h * dirs[None]], axis=1)
    step = h * 1e-2
    eye = np.eye(n) * step
    plus = pts[:, :, None, :] + eye
    minus = pts[:, :, None, :] - eye
    try:
        wp = np.asarray(W(plus), dtype=float)
        wm = np.asarray(W(minus), dtype=float)
        w0 = np.asarray(W(pts), dtype=float)[..., None]
    except EvaluationError as exc:
        raise EvaluationError(f"W failed on a finite-difference stencil: {exc}") from exc
    if not (np.all(np.isfinite(wp)) and np.all(np.isfinite(wm))):
        raise EvaluationError("W is not finite on a finite-difference stencil")
    central = (wp - wm) / (2 * step)
    fwd = (wp - w0) / step
    bwd = (w0 - wm) / step
    # one-sided slopes disagree -> the stencil straddles a kink; not a differentiability point
    scale = np.maximum(1.0, np.abs(central))
    smooth = np.all(np.abs(fwd - bwd) <= tol * scale, axis=-1)
    out = []
    for b in range(B):
        keep = central[b][smooth[b]]
        if len(keep) == 0:
            keep = central[b]
        out.append(_merge(keep, tol))
    return out


def limiting_gradient_fd(W, x, h=FD_STEP, k=FD_PERTURBATIONS, tol=FD_MERGE_TOL):
    """Finite-difference surrogate for the set of limiting gradients of ``W`` at ``x``.

    Central-difference gradients are taken at ``x`` and at ``k`` points at
    distance ``h/2`` around it; stencils whose one-sided slopes disagree are
    discarded as non-differentiability points, and gradients within ``tol``
    (relative) of an earlier one are merged.  Returns an array ``(k', n)``.
    """
    return limiting_gradients_fd_batch(W, np.asarray(x, dtype=float)[None, :], h, k, tol)[0]
