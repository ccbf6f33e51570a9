"""Command-line front end.

    minrestraint verify   --builtin gyroscope --p0 0.9
    minrestraint simulate --builtin gyroscope --from 0.5,0 --out traj.csv
    minrestraint poly classify --builtin remark44-system
    minrestraint poly witness --builtin remark44-system --at 1,2,3,4 --w 0,1,1 --reduced --split last
    minrestraint export --builtin diag-example --out diag.yaml

Exit codes: 0 verified / success, 1 violated / failure (a witness is
printed), 2 inconclusive, 3 usage or load error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .feedback import build_kl_envelope, check_gac_bound, cost_check, synthesize, \
    write_trajectory_csv
from .polysys import (DiagonalSpec, NotNearAffine, check_hyp_Adiag, check_hyp_Amax,
                      classify_near_affine, diagonal_subsystem, hull_witness, affine_field,
                      maximal_subsystem)
from .scenario import BUILTINS, ScenarioError, builtin_dict, dump_scenario, load_scenario, \
    scenario_from_dict
from .verifier import verify_mrf

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 3
VERDICT_EXIT = {"verified": EXIT_OK, "violated": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    """Canonical JSON used for every report (sorted keys, so reruns are byte-identical)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _vector(text, name):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers, got {text!r}")


def _params(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"--param {key} needs a number")
    return out


def load(args):
    """Scenario from ``--builtin`` or ``--scenario``, with command-line overrides applied."""
    if (args.builtin is None) == (args.scenario is None):
        raise UsageError("give exactly one of --builtin and --scenario")
    if args.builtin is not None:
        try:
            sc = scenario_from_dict(builtin_dict(args.builtin, **_params(args.param)))
        except TypeError as exc:
            raise UsageError(f"bad builtin parameter: {exc}")
    else:
        if args.param:
            raise UsageError("--param only applies to builtins")
        sc = load_scenario(args.scenario)
    changes = {k: getattr(args, k) for k in ("seed", "samples", "bands", "sigma")
               if getattr(args, k) is not None}
    if changes:
        sc = sc.with_sampling(**changes)
    if args.p0 is not None:
        if sc.candidate is None:
            raise UsageError("--p0 given but the scenario has no candidate")
        sc = replace(sc, candidate=sc.candidate.with_p0(args.p0))
    step = {k: getattr(args, k) for k in ("eps", "delta") if getattr(args, k) is not None}
    if step:
        sc = replace(sc, step=replace(sc.step, **step))
    if args.stop_frac is not None:
        sc = replace(sc, stop_frac=args.stop_frac)
    return sc


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _verify(sc):
    if sc.candidate is None:
        raise UsageError("scenario has no candidate W")
    if sc.sampling is None:
        raise UsageError("scenario has no sampling block")
    return verify_mrf(sc.problem, sc.candidate, sc.sampling, sc.budget)


def report_text(rep):
    lines = [f"verdict: {rep.verdict}", f"p0: {rep.p0!r}", f"sigma: {rep.sigma!r}",
             f"samples: {rep.samples}", "band  r  gamma  N  count"]
    for j, r in enumerate(rep.r_grid):
        lines.append(f"{j}  {r:.6g}  {rep.gamma[j]:.6g}  {rep.N[j]:.6g}  {rep.band_counts[j]}")
    if rep.reason:
        lines.append(f"reason: {rep.reason}")
    if rep.witness:
        lines.append("witness: " + json.dumps(_jsonable(rep.witness), sort_keys=True))
    return "\n".join(lines) + "\n"


def cmd_verify(args):
    sc = load(args)
    rep = _verify(sc)
    sys.stdout.write(report_text(rep))
    if args.out:
        _emit(dumps(rep.to_dict()), args.out)
    return VERDICT_EXIT[rep.verdict]


def cmd_simulate(args):
    sc = load(args)
    z = np.array(_vector(args.start, "--from"))
    if len(z) != sc.problem.n:
        raise UsageError(f"--from needs {sc.problem.n} coordinates")
    rep = _verify(sc)
    if rep.verdict != "verified" and not args.force:
        sys.stdout.write(report_text(rep))
        sys.stderr.write("candidate not verified; use --force to simulate anyway\n")
        return VERDICT_EXIT[rep.verdict]
    try:
        tr = synthesize(sc.problem, sc.candidate, z, rep, sc.step, sc.budget,
                        stop_frac=sc.stop_frac)
    except ValueError as exc:
        sys.stderr.write(f"cannot synthesize: {exc}\n")
        return EXIT_FAIL
    summary = tr.summary()
    summary["verdict"] = rep.verdict
    summary["final_band"] = tr.levels[-1] if tr.levels else None
    summary["refinements"] = len(tr.refinements)
    envelope = None
    if not tr.empty:
        envelope = build_kl_envelope(sc.problem, sc.candidate, tr.gamma, sc.sampling,
                                     sc.step.eps)
        gac = check_gac_bound(tr, envelope)
        summary["beta"] = gac.to_dict()
        summary["cost_invariance"] = cost_check(tr, sc.problem).to_dict()
    else:
        summary["beta"] = None
        summary["cost_invariance"] = None
    bound = summary["cost_bound"]
    summary["cost_within_bound"] = bound is None or tr.total_cost <= bound * (1 + 1e-12)
    if args.out:
        write_trajectory_csv(tr, args.out, envelope)
    sys.stdout.write(dumps(summary))
    if tr.status == "complete":
        return EXIT_OK
    return EXIT_INCONCLUSIVE if tr.status == "inconclusive" else EXIT_FAIL


def _poly(sc):
    if sc.poly is None:
        raise UsageError("scenario has no polynomial block")
    return sc.poly


def _term_lines(texts, terms, scale=None):
    lines = [f"f0 = [{', '.join(texts['drift'])}]"]
    for alpha in terms:
        c = "" if scale is None else f"{scale[alpha]!r} * "
        lines.append(f"u^{alpha}: {c}[{', '.join(texts['terms'][alpha])}]")
    return lines


def cmd_poly(args):
    sc = load(args)
    pd = _poly(sc)
    action = args.action
    if action in ("classify", "affine", "witness"):
        try:
            nas = classify_near_affine(pd)
        except NotNearAffine as exc:
            sys.stdout.write(dumps({"near_affine": False, "reason": str(exc),
                                    "term": list(exc.term.exponents)}))
            return EXIT_FAIL
    if action == "classify":
        _emit(dumps(dict(nas.to_dict(), near_affine=True)), args.out)
        return EXIT_OK
    if action == "affine":
        lines = [f"f0 = [{', '.join(sc.poly_texts['drift'])}]"]
        for k, alpha in enumerate(nas.active):
            lines.append(f"w{k + 1} (u^{alpha}): [{', '.join(sc.poly_texts['terms'][alpha])}]")
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK
    if action == "witness":
        if args.at is None or args.w is None:
            raise UsageError("witness needs --at and --w")
        x = np.array(_vector(args.at, "--at"))
        w = np.array(_vector(args.w, "--w"))
        if len(x) != pd.n:
            raise UsageError(f"--at needs {pd.n} coordinates")
        try:
            hw = hull_witness(nas, pd, x, w, args.r, reduced=args.reduced, split=args.split)
        except ValueError as exc:
            raise UsageError(str(exc))
        target = affine_field(nas, pd)(x, w)
        out = dict(hw.to_dict(), x=x, w=w, target=target,
                   combination=hw.combination(pd, x), residual=hw.residual(pd, x, target),
                   weights_sum=float(hw.weights.sum()))
        _emit(dumps(out), args.out)
        return EXIT_OK
    if action == "subsystem":
        if args.kind == "max":
            sub = maximal_subsystem(pd)
            lines = _term_lines(sc.poly_texts, sub.terms)
        else:
            if args.lam is None:
                raise UsageError("--kind diag needs --lam")
            lam = _vector(args.lam, "--lam")
            try:
                spec = DiagonalSpec(lam)
                sub = diagonal_subsystem(pd, spec)
            except ValueError as exc:
                raise UsageError(str(exc))
            d = pd.degree
            scale = {a: (1.0 if a.degree == d else spec.lam[a.support[0]] ** ((d - a.degree) / d))
                     for a in sub.terms}
            lines = _term_lines(sc.poly_texts, sub.terms, scale)
        _emit("\n".join(lines) + "\n", args.out)
        return EXIT_OK
    if action == "hypcheck":
        if sc.sampling is None:
            raise UsageError("hypcheck needs a sampling box")
        l = sc.problem.cost
        d = pd.degree
        box = sc.sampling.box
        seed = sc.sampling.seed
        if args.kind == "max":
            def M0(x):
                return l(x, np.zeros(x.shape[:-1] + (pd.m,)))

            def M1(x, u):
                return l(x, u) - M0(x)

            rep = check_hyp_Amax(M0, M1, d, pd.m, box, seed=seed)
        else:
            M0 = args.M0 if args.M0 is not None else float(np.sqrt(pd.m))
            rep = check_hyp_Adiag(l, d, M0, pd.m, box, seed=seed)
        _emit(dumps(dict(rep.to_dict(), kind=args.kind, d=d)), args.out)
        return EXIT_OK if rep.ok else EXIT_FAIL
    raise UsageError(f"unknown poly action {action!r}")


def cmd_export(args):
    if args.builtin is None:
        raise UsageError("export needs --builtin")
    d = builtin_dict(args.builtin, **_params(args.param))
    _emit(dump_scenario(d), args.out)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("scenario")
    src.add_argument("--builtin", choices=sorted(BUILTINS))
    src.add_argument("--scenario", metavar="FILE", help="YAML scenario file")
    src.add_argument("--param", action="append", metavar="KEY=VALUE",
                     help="builtin parameter, e.g. I=2 for the gyroscope")
    ov = common.add_argument_group("overrides")
    ov.add_argument("--seed", type=int)
    ov.add_argument("--samples", type=int)
    ov.add_argument("--bands", type=int)
    ov.add_argument("--sigma", type=float)
    ov.add_argument("--p0", type=float)
    ov.add_argument("--eps", type=float)
    ov.add_argument("--delta", type=float)
    ov.add_argument("--stop-frac", dest="stop_frac", type=float)
    ov.add_argument("--out", metavar="FILE")

    p = _Parser(prog="minrestraint", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", parents=[common], help="sample the MRF conditions")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="sample-and-hold feedback run")
    s.add_argument("--from", dest="start", required=True, metavar="Z",
                   help="initial state, comma separated")
    s.add_argument("--force", action="store_true", help="simulate even when not verified")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("poly", parents=[common], help="control-polynomial structure")
    q.add_argument("action", choices=["classify", "affine", "witness", "subsystem", "hypcheck"])
    q.add_argument("--at", metavar="X")
    q.add_argument("--w", metavar="W")
    q.add_argument("--r", type=float, default=np.inf, help="control box half-width")
    q.add_argument("--reduced", action="store_true")
    q.add_argument("--split", choices=["equal", "last"], default="equal")
    q.add_argument("--kind", choices=["max", "diag"], default="max")
    q.add_argument("--lam", metavar="L1,...,Lm")
    q.add_argument("--M0", type=float)
    q.set_defaults(func=cmd_poly)

    e = sub.add_parser("export", parents=[common], help="write a builtin as a scenario file")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ScenarioError, OSError) as exc:
        sys.stderr.write(f"minrestraint: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
