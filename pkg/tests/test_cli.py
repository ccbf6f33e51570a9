import csv
import json

import pytest

from minrestraint.cli import dumps, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_verify_diag_verified(capsys, tmp_path):
    path = tmp_path / "r.json"
    code, out, _ = run(capsys, "verify", "--builtin", "diag-example", "--samples", "200",
                       "--out", str(path))
    assert code == 0 and out.startswith("verdict: verified")
    rep = json.loads(path.read_text())
    assert rep["verdict"] == "verified" and len(rep["gamma"]) == 8


def test_verify_counterexample_violated(capsys):
    code, out, _ = run(capsys, "verify", "--builtin", "remark48-counterexample",
                       "--samples", "200")
    assert code == 1
    witness = json.loads(out.split("witness: ", 1)[1])
    assert witness["x"][0] > 0


def test_verify_inconclusive(capsys):
    code, _, _ = run(capsys, "verify", "--builtin", "diag-example", "--samples", "200",
                     "--sigma", "1e-9")
    assert code == 2


@pytest.mark.parametrize("argv", [
    ["verify"],
    ["verify", "--builtin", "nope"],
    ["verify", "--builtin", "diag-example", "--scenario", "x.yaml"],
    ["verify", "--scenario", "/nonexistent/file.yaml"],
    ["verify", "--builtin", "remark44-system"],
    ["verify", "--builtin", "gyroscope", "--param", "I"],
    ["poly", "witness", "--builtin", "remark44-system"],
    ["simulate", "--builtin", "diag-example", "--from", "1,2,3"],
    ["frobnicate"],
])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as ei:
        raise SystemExit(main(argv))
    assert ei.value.code == 3


def test_poly_classify(capsys):
    code, out, _ = run(capsys, "poly", "classify", "--builtin", "remark44-system")
    d = json.loads(out)
    assert code == 0 and d["K"] == [1, 3, 5] and d["dbar"] == 2 and d["M"] == 3


def test_poly_classify_rejects(capsys):
    code, out, _ = run(capsys, "poly", "classify", "--builtin", "diag-example")
    d = json.loads(out)
    assert code == 1 and not d["near_affine"] and d["term"] == [2, 0]


def test_poly_witness(capsys):
    code, out, _ = run(capsys, "poly", "witness", "--builtin", "remark44-system",
                       "--at", "1,2,3,4", "--w", "0,1,1", "--reduced", "--split", "last")
    d = json.loads(out)
    assert code == 0 and d["residual"] < 1e-12
    assert [p["weight"] for p in d["pairs"]] == [0.5, 0.5]


def test_poly_affine(capsys):
    code, out, _ = run(capsys, "poly", "affine", "--builtin", "remark44-system")
    assert code == 0 and out.splitlines()[1] == "w1 (u^(1,3,0)): [1, 0, x2, 0]"


def test_poly_subsystems(capsys):
    code, out, _ = run(capsys, "poly", "subsystem", "--builtin", "diag-example")
    assert code == 0 and out.splitlines() == ["f0 = [x1, x2]", "u^(2,2): [3*x1, 3*x2]"]
    code, out, _ = run(capsys, "poly", "subsystem", "--builtin", "diag-example", "--kind",
                       "diag", "--lam", "0.5,0.5")
    assert code == 0 and out.count("0.7071067811865476 *") == 2


def test_poly_hypcheck(capsys):
    code, out, _ = run(capsys, "poly", "hypcheck", "--builtin", "diag-example")
    assert code == 0 and json.loads(out)["ok"]
    code, out, _ = run(capsys, "poly", "hypcheck", "--builtin", "diag-example", "--kind", "diag")
    assert code == 0 and json.loads(out)["worst"] <= 2 ** 0.5


def test_simulate_diag(capsys, tmp_path):
    path = tmp_path / "t.csv"
    code, out, _ = run(capsys, "simulate", "--builtin", "diag-example", "--from", "1,1",
                       "--samples", "300", "--out", str(path))
    d = json.loads(out)
    assert code == 0 and d["status"] == "complete"
    assert d["cost_within_bound"] and d["beta"]["ok"] and d["certificates_ok"]
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["s", "t", "x_1", "x_2"] and len(rows) == d["points"] + 1


def test_simulate_from_target(capsys):
    code, out, _ = run(capsys, "simulate", "--builtin", "diag-example", "--from", "0,0",
                       "--samples", "200")
    d = json.loads(out)
    assert code == 0 and d["points"] == 1 and d["total_cost"] == 0.0


def test_simulate_refuses_unverified(capsys):
    code, _, err = run(capsys, "simulate", "--builtin", "remark48-counterexample",
                       "--from", "1", "--samples", "200")
    assert code == 1 and "--force" in err


def test_export_reload_is_deterministic(capsys, tmp_path):
    yml = tmp_path / "diag.yaml"
    assert run(capsys, "export", "--builtin", "diag-example", "--out", str(yml))[0] == 0
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "verify", "--builtin", "diag-example", "--samples", "200", "--out", str(a))
    run(capsys, "verify", "--scenario", str(yml), "--samples", "200", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_dumps_canonical():
    import numpy as np
    assert dumps({"b": np.float64(1.5), "a": np.arange(2)}) == \
        '{\n  "a": [\n    0,\n    1\n  ],\n  "b": 1.5\n}\n'
