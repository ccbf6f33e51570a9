"""Scenario files (YAML) and the builtin scenario registry.

Schema (unknown keys are rejected at every level)::

    name: str
    n: int
    m: int
    state_space: {lower: [...], upper: [...]}          # optional, .inf allowed
    target: {point: [...]}                              # optional, default origin
    control_set: {kind: all | box | ball, radius: float}
    dynamics: [expr, ...]                               # or the polynomial block
    polynomial:
      drift: [expr, ...]
      terms: [{alpha: [a1, ..., am], field: [expr, ...]}, ...]
    cost: expr                                          # default "0"
    candidate: {W: expr | builtin: name, p0: float, W0: float}
    sampling: {sigma, box: {lower, upper}, bands, samples, seed, depth, r_grid}
    budget: {grid_points, refine_iterations, radius_schedule, divergence_threshold, max_grid}
    feedback: {eps, delta, floor, substeps, safety, stop_frac, time_cap_factor}

Expressions in ``dynamics`` and ``cost`` may use ``x1..xn`` and ``u1..um``;
polynomial coefficient fields and ``W`` use states only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .expr import compile_exprs, parse_expr
from .feedback import StepBudget
from .hamiltonian import MinimizeBudget
from .model import (ControlProblem, ControlSet, MrfCandidate, StateSpace, expr_field,
                    expr_scalar, point_target)
from .polynomial import MultiIndex, PolyDynamics
from .verifier import LevelSampling

__all__ = [
    "ScenarioError",
    "Scenario",
    "scenario_from_dict",
    "load_scenario",
    "dump_scenario",
    "builtin_dict",
    "load_builtin",
    "BUILTINS",
    "BUILTIN_CANDIDATES",
    "gyroscope_W",
    "gyroscope_gradients",
    "poly_text",
]


class ScenarioError(ValueError):
    pass


_TOP = {"name", "n", "m", "state_space", "target", "control_set", "dynamics", "polynomial",
        "cost", "candidate", "sampling", "budget", "feedback"}
_SECTIONS = {
    "state_space": {"lower", "upper"},
    "target": {"point"},
    "control_set": {"kind", "radius"},
    "polynomial": {"drift", "terms"},
    "candidate": {"W", "builtin", "p0", "W0"},
    "sampling": {"sigma", "box", "bands", "samples", "seed", "depth", "r_grid"},
    "budget": {"grid_points", "refine_iterations", "radius_schedule", "divergence_threshold",
               "max_grid"},
    "feedback": {"eps", "delta", "floor", "substeps", "safety", "stop_frac", "time_cap_factor"},
}


# -- gyroscope candidate ------------------------------------------------------

_H = math.sqrt(3) / 2


def _gyro_parts(x):
    x = np.asarray(x, dtype=float)
    a = np.tan(x[..., 0])
    b = x[..., 1]
    q = a * b - _H * (a * a - b * b)
    return a, b, q


def gyroscope_W(x):
    """``W1 (2 - |W2|)`` in closed form: ``2(a^2 + b^2) - |ab - (sqrt3/2)(a^2 - b^2)|``, ``a = tan x1``.

    The sine of twice the angle reduces to ``(ab - (sqrt3/2)(a^2 - b^2)) / (a^2 + b^2)``,
    which also vanishes on the line where the angle formula is undefined.
    """
    a, b, q = _gyro_parts(x)
    return 2.0 * (a * a + b * b) - np.abs(q)


def gyroscope_gradients(x, tol=1e-12):
    """Gradient(s) of :func:`gyroscope_W`; both one-sided pieces where ``q = 0``."""
    a, b, q = (float(v) for v in _gyro_parts(x))
    da = 1.0 + a * a
    if abs(q) > tol * max(1.0, a * a + b * b):
        signs = (1.0 if q > 0 else -1.0,)
    else:
        signs = (1.0, -1.0)
    out = []
    for s in signs:
        ga = 4 * a - s * (b - 2 * _H * a)
        gb = 4 * b - s * (a + 2 * _H * b)
        out.append((ga * da, gb))
    return np.array(out)


BUILTIN_CANDIDATES = {
    "gyroscope": (gyroscope_W, gyroscope_gradients),
}


# -- scenario object ----------------------------------------------------------

@dataclass
class Scenario:
    name: str
    problem: ControlProblem
    candidate: MrfCandidate = None
    poly: PolyDynamics = None
    poly_texts: dict = None  # {"drift": [...], "terms": {MultiIndex: [...]}}
    sampling: LevelSampling = None
    budget: MinimizeBudget = field(default_factory=MinimizeBudget)
    step: StepBudget = field(default_factory=StepBudget)
    stop_frac: float = 1e-3
    depth: float = 1e-3
    data: dict = None

    def with_sampling(self, **changes):
        """Copy with sampling fields changed; the r grid is regenerated unless given."""
        if self.sampling is None:
            raise ScenarioError("scenario has no sampling block")
        s = self.sampling
        depth = changes.pop("depth", self.depth)
        params = dict(sigma=s.sigma, box=s.box, bands=s.bands, samples=s.samples, seed=s.seed,
                      W0=s.W0)
        params.update(changes)
        if "r_grid" not in changes:
            params["r_grid"] = _grid(params["sigma"], params["bands"], depth)
        return replace(self, sampling=LevelSampling(**params), depth=depth)


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ScenarioError(f"unknown key(s) in {where}: {sorted(extra)}")


def _floats(seq, where, length=None):
    try:
        vals = [float(v) for v in seq]
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where} must be a list of numbers") from exc
    if length is not None and len(vals) != length:
        raise ScenarioError(f"{where} needs {length} entries, got {len(vals)}")
    return vals


def _texts(seq, where, length):
    if not isinstance(seq, list) or not all(isinstance(t, (str, int, float)) for t in seq):
        raise ScenarioError(f"{where} must be a list of expressions")
    if len(seq) != length:
        raise ScenarioError(f"{where} needs {length} components, got {len(seq)}")
    return [str(t) for t in seq]


def _grid(sigma, bands, depth):
    if not 0 < depth < 1:
        raise ScenarioError("sampling.depth must lie in ]0, 1[")
    return tuple(float(v) for v in sigma * np.geomspace(1.0, depth, bands))


def _state_field(texts, n):
    fn = compile_exprs([parse_expr(t, n, 0) for t in texts])

    def f(x):
        return fn(x)

    f.texts = list(texts)
    return f


def _build_poly(block, n, m):
    _check_keys(block, _SECTIONS["polynomial"], "polynomial")
    drift_t = _texts(block.get("drift", ["0"] * n), "polynomial.drift", n)
    terms, texts = {}, {}
    for k, term in enumerate(block.get("terms", [])):
        _check_keys(term, {"alpha", "field"}, f"polynomial.terms[{k}]")
        if "alpha" not in term or "field" not in term:
            raise ScenarioError(f"polynomial.terms[{k}] needs alpha and field")
        alpha = MultiIndex(tuple(int(a) for a in term["alpha"]))
        if alpha.m != m:
            raise ScenarioError(f"polynomial.terms[{k}].alpha needs {m} entries")
        if alpha in terms:
            raise ScenarioError(f"duplicate multi-index {alpha}")
        t = _texts(term["field"], f"polynomial.terms[{k}].field", n)
        terms[alpha] = _state_field(t, n)
        texts[alpha] = t
    pd = PolyDynamics(n, m, _state_field(drift_t, n), terms)
    return pd, {"drift": drift_t, "terms": texts}


def scenario_from_dict(d):
    """Build a :class:`Scenario` from a parsed scenario mapping."""
    _check_keys(d, _TOP, "scenario")
    try:
        n, m = int(d["n"]), int(d["m"])
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc.args[0]!r}") from exc
    name = str(d.get("name", ""))
    try:
        ss = d.get("state_space") or {}
        _check_keys(ss, _SECTIONS["state_space"], "state_space")
        lower = _floats(ss["lower"], "state_space.lower", n) if "lower" in ss else None
        upper = _floats(ss["upper"], "state_space.upper", n) if "upper" in ss else None
        state_space = StateSpace(n, lower, upper)

        tg = d.get("target") or {}
        _check_keys(tg, _SECTIONS["target"], "target")
        target = point_target(_floats(tg.get("point", [0.0] * n), "target.point", n))

        cs = d.get("control_set") or {}
        _check_keys(cs, _SECTIONS["control_set"], "control_set")
        control_set = ControlSet(m, str(cs.get("kind", "all")), float(cs.get("radius", np.inf)))

        if ("dynamics" in d) == ("polynomial" in d):
            raise ScenarioError("give exactly one of 'dynamics' and 'polynomial'")
        poly = poly_texts = None
        if "polynomial" in d:
            poly, poly_texts = _build_poly(d["polynomial"], n, m)
            dynamics = poly
        else:
            dynamics = expr_field(_texts(d["dynamics"], "dynamics", n), n, m)
        cost = expr_scalar(str(d.get("cost", "0")), n, m)
        problem = ControlProblem(state_space, target, control_set, dynamics, cost, name)

        candidate = None
        if "candidate" in d:
            cd = d["candidate"]
            _check_keys(cd, _SECTIONS["candidate"], "candidate")
            if ("W" in cd) == ("builtin" in cd):
                raise ScenarioError("candidate needs exactly one of 'W' and 'builtin'")
            if "builtin" in cd:
                key = str(cd["builtin"])
                if key not in BUILTIN_CANDIDATES:
                    raise ScenarioError(f"unknown builtin candidate {key!r}; "
                                        f"known: {sorted(BUILTIN_CANDIDATES)}")
                W, oracle = BUILTIN_CANDIDATES[key]
            else:
                W, oracle = expr_scalar(str(cd["W"]), n, 0), None
            candidate = MrfCandidate(W, float(cd.get("p0", 0.0)), float(cd.get("W0", np.inf)),
                                     oracle, str(cd.get("W", cd.get("builtin"))))

        depth = 1e-3
        sampling = None
        if "sampling" in d:
            sd = d["sampling"]
            _check_keys(sd, _SECTIONS["sampling"], "sampling")
            box = sd.get("box") or {}
            _check_keys(box, {"lower", "upper"}, "sampling.box")
            sigma = float(sd["sigma"])
            bands = int(sd.get("bands", 8))
            depth = float(sd.get("depth", 1e-3))
            grid = (_floats(sd["r_grid"], "sampling.r_grid") if "r_grid" in sd
                    else _grid(sigma, bands, depth))
            sampling = LevelSampling(
                sigma, (_floats(box["lower"], "sampling.box.lower", n),
                        _floats(box["upper"], "sampling.box.upper", n)),
                bands, int(sd.get("samples", 2000)), int(sd.get("seed", 0)), tuple(grid),
                candidate.W0 if candidate else np.inf)

        bd = d.get("budget") or {}
        _check_keys(bd, _SECTIONS["budget"], "budget")
        if "radius_schedule" in bd:
            bd = dict(bd, radius_schedule=tuple(_floats(bd["radius_schedule"],
                                                        "budget.radius_schedule")))
        budget = MinimizeBudget(**bd)

        fd = dict(d.get("feedback") or {})
        _check_keys(fd, _SECTIONS["feedback"], "feedback")
        stop_frac = float(fd.pop("stop_frac", 1e-3))
        step = StepBudget(**fd)
    except KeyError as exc:
        raise ScenarioError(f"missing required key {exc.args[0]!r}") from exc
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    return Scenario(name, problem, candidate, poly, poly_texts, sampling, budget, step,
                    stop_frac, depth, d)


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ScenarioError(f"{path} does not contain a scenario mapping")
    return scenario_from_dict(d)


def dump_scenario(d, path=None):
    text = yaml.safe_dump(d, sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def poly_text(texts, scale=None):
    """Human-readable ``f0 + sum u^alpha f_alpha`` listing from stored expression texts."""
    lines = [f"f0 = [{', '.join(texts['drift'])}]"]
    for alpha, t in texts["terms"].items():
        c = "" if scale is None else f"{scale[alpha]!r} * "
        lines.append(f"{alpha}: {c}[{', '.join(t)}]")
    return "\n".join(lines)


# -- builtins -----------------------------------------------------------------

def _num(v):
    return repr(float(v))


def gyroscope(I=1.0, Mgz=1.0):
    """Gyroscope nutation with precession/spin velocities as controls."""
    p0 = 0.9 * min(1.0 / I, 8 * math.sqrt(3) / 3)
    return {
        "name": "gyroscope",
        "n": 2, "m": 2,
        "state_space": {"lower": [-math.pi / 2, -math.inf], "upper": [math.pi / 2, math.inf]},
        "target": {"point": [0.0, 0.0]},
        "control_set": {"kind": "all"},
        "polynomial": {
            "drift": [f"x2/{_num(I)}", f"{_num(Mgz)}*sin(x1)"],
            "terms": [{"alpha": [1, 1], "field": ["0", f"-{_num(I)}*sin(x1)"]}],
        },
        "cost": "x2^2",
        "candidate": {"builtin": "gyroscope", "p0": p0, "W0": math.inf},
        "sampling": {"sigma": 10.0, "box": {"lower": [-1.4, -10.0], "upper": [1.4, 10.0]},
                     "bands": 8, "samples": 2000, "seed": 0, "depth": 1e-6},
        "feedback": {"eps": 1.0, "delta": 0.25, "stop_frac": 5e-5},
    }


def diag_example(p0_sub=0.5):
    """Planar system whose top-degree subsystem is useless but a diagonal one works."""
    return {
        "name": "diag-example",
        "n": 2, "m": 2,
        "target": {"point": [0.0, 0.0]},
        "control_set": {"kind": "all"},
        "polynomial": {
            "drift": ["x1", "x2"],
            "terms": [
                {"alpha": [1, 1], "field": ["1/sqrt(x1^2+x2^2)", "1"]},
                {"alpha": [2, 0], "field": ["-1", "0"]},
                {"alpha": [0, 2], "field": ["0", "-1"]},
                {"alpha": [2, 2], "field": ["3*x1", "3*x2"]},
            ],
        },
        "cost": "(x1^2+x2^2)*(u1^2+u2^2)",
        "candidate": {"W": "x1^2+x2^2", "p0": p0_sub / math.sqrt(2), "W0": math.inf},
        "sampling": {"sigma": 2.0, "box": {"lower": [0.0, 0.0], "upper": [2.0, 2.0]},
                     "bands": 8, "samples": 2000, "seed": 0, "depth": 1e-4},
        "feedback": {"eps": 1.0, "delta": 0.25, "stop_frac": 1e-3},
    }


def remark48_counterexample():
    """Scalar system driven away from the origin by every control in [-1, 1]."""
    return {
        "name": "remark48-counterexample",
        "n": 1, "m": 1,
        "target": {"point": [0.0]},
        "control_set": {"kind": "box", "radius": 1.0},
        "polynomial": {
            "drift": ["0"],
            "terms": [{"alpha": [2], "field": ["x1"]}, {"alpha": [3], "field": ["x1"]}],
        },
        "cost": "0",
        "candidate": {"W": "x1^2", "p0": 1.0, "W0": math.inf},
        "sampling": {"sigma": 1.0, "box": {"lower": [0.0], "upper": [2.0]},
                     "bands": 8, "samples": 2000, "seed": 0},
    }


def remark44_system():
    """Driftless near-control-affine system in R^4 with K = (1, 3, 5)."""
    return {
        "name": "remark44-system",
        "n": 4, "m": 3,
        "target": {"point": [0.0, 0.0, 0.0, 0.0]},
        "control_set": {"kind": "all"},
        "polynomial": {
            "drift": ["0", "0", "0", "0"],
            "terms": [
                {"alpha": [1, 3, 0], "field": ["1", "0", "x2", "0"]},
                {"alpha": [1, 0, 5], "field": ["0", "1", "-x1", "0"]},
                {"alpha": [0, 3, 5], "field": ["0", "0", "0", "1"]},
            ],
        },
        "cost": "0",
    }


BUILTINS = {
    "gyroscope": gyroscope,
    "diag-example": diag_example,
    "remark48-counterexample": remark48_counterexample,
    "remark44-system": remark44_system,
}


def builtin_dict(name, **params):
    if name not in BUILTINS:
        raise ScenarioError(f"unknown builtin {name!r}; known: {sorted(BUILTINS)}")
    return BUILTINS[name](**params)


def load_builtin(name, **params):
    return scenario_from_dict(builtin_dict(name, **params))
