"""State-based time rescaling of a cost/dynamics pair.

    (lbar, fbar) = (l, f) / (1 + |(l, f)|)

Trajectories of the rescaled problem run on a clock ``s``; the original
clock is recovered by ``dt/ds = 1 / (1 + |(l, f)|) = 1 - |(lbar, fbar)|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RescaledProblem",
    "rescale",
    "rescale_pair",
    "TimeMaps",
    "time_maps",
    "CostInvariance",
    "cost_invariance_check",
]


def rescale_pair(l, f):
    """Apply the rescaling to arrays ``l`` (shape ``(...)``) and ``f`` (shape ``(..., n)``)."""
    l = np.asarray(l, dtype=float)
    f = np.asarray(f, dtype=float)
    norm = np.sqrt(l ** 2 + np.sum(f ** 2, axis=-1))
    scale = 1.0 / (1.0 + norm)
    return l * scale, f * scale[..., None]


class RescaledProblem:
    """Rescaled view of a :class:`~minrestraint.model.ControlProblem`.

    Exposes the same interface (``state_space``, ``target``, ``control_set``,
    ``cost_dynamics``, ``dynamics``, ``cost``) so it can be handed to every
    routine that accepts a problem.
    """

    def __init__(self, base):
        if isinstance(base, RescaledProblem):
            base = base.base
        self.base = base
        self.state_space = base.state_space
        self.target = base.target
        self.control_set = base.control_set
        self.name = f"{base.name} (rescaled)" if base.name else "rescaled"

    @property
    def n(self):
        return self.base.n

    @property
    def m(self):
        return self.base.m

    def cost_dynamics(self, x, u):
        return rescale_pair(*self.base.cost_dynamics(x, u))

    def dynamics(self, x, u):
        return self.cost_dynamics(x, u)[1]

    def cost(self, x, u):
        return self.cost_dynamics(x, u)[0]

    def clock_rate(self, x, u):
        """``dt/ds`` at ``(x, u)``: ``1 / (1 + |(l, f)|)``."""
        l, f = self.base.cost_dynamics(x, u)
        return 1.0 / (1.0 + np.sqrt(l ** 2 + np.sum(f ** 2, axis=-1)))


def rescale(problem):
    return RescaledProblem(problem)


@dataclass
class TimeMaps:
    s: np.ndarray
    t: np.ndarray
    max_rate_variation: float  # largest relative change of dt/ds across one step

    def s_of_t(self, t):
        """Inverse clock by monotone piecewise-linear interpolation."""
        return np.interp(t, self.t, self.s)

    def t_of_s(self, s):
        return np.interp(s, self.s, self.t)


def _interval_rates(problem, states, controls):
    """``dt/ds`` at both ends of every interval, holding that interval's control."""
    base = problem.base if isinstance(problem, RescaledProblem) else problem
    bar = RescaledProblem(base)
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    left = bar.clock_rate(states[:-1], controls)
    right = bar.clock_rate(states[1:], controls)
    return left, right


def time_maps(problem, s, states, controls):
    """Original-clock times ``t(s)`` for a rescaled trajectory.

    ``states`` has one row per mesh point ``s[i]``; ``controls[i]`` is held on
    ``[s[i], s[i+1]]`` (so there is one control fewer than states).
    """
    s = np.asarray(s, dtype=float)
    if len(s) == 0:
        return TimeMaps(s, s.copy(), 0.0)
    if len(controls) != len(s) - 1:
        raise ValueError("need one control per mesh interval")
    if len(s) == 1:
        return TimeMaps(s, s.copy(), 0.0)
    ds = np.diff(s)
    if np.any(ds <= 0):
        raise ValueError("s mesh must be strictly increasing")
    left, right = _interval_rates(problem, states, controls)
    dt = 0.5 * ds * (left + right)
    t = np.concatenate([[s[0]], s[0] + np.cumsum(dt)])
    if np.any(np.diff(t) <= 0):
        raise ValueError("t(s) is not strictly increasing; the trajectory mesh is too coarse")
    var = float(np.max(np.abs(right - left) / np.minimum(left, right)))
    return TimeMaps(s, t, var)


@dataclass
class CostInvariance:
    rescaled_cost: float
    original_cost: float

    @property
    def relative_difference(self):
        scale = max(abs(self.rescaled_cost), abs(self.original_cost))
        if scale == 0:
            return 0.0
        return abs(self.rescaled_cost - self.original_cost) / scale

    def to_dict(self):
        return {
            "rescaled_cost": self.rescaled_cost,
            "original_cost": self.original_cost,
            "relative_difference": self.relative_difference,
        }


def cost_invariance_check(problem, s, states, controls, maps=None):
    """Trapezoidal ``∫ lbar ds`` against ``∫ l dt`` on the reparameterised mesh."""
    base = problem.base if isinstance(problem, RescaledProblem) else problem
    s = np.asarray(s, dtype=float)
    if len(s) < 2:
        return CostInvariance(0.0, 0.0)
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    maps = maps or time_maps(base, s, states, controls)
    bar = RescaledProblem(base)
    lb_left = bar.cost(states[:-1], controls)
    lb_right = bar.cost(states[1:], controls)
    l_left = base.cost_dynamics(states[:-1], controls)[0]
    l_right = base.cost_dynamics(states[1:], controls)[0]
    rescaled = float(np.sum(0.5 * np.diff(s) * (lb_left + lb_right)))
    original = float(np.sum(0.5 * np.diff(maps.t) * (l_left + l_right)))
    return CostInvariance(rescaled, original)
