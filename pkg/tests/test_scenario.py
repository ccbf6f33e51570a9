import math

import numpy as np
import pytest
import yaml

from minrestraint.scenario import (BUILTINS, ScenarioError, builtin_dict, dump_scenario,
                                   gyroscope_W, load_builtin, load_scenario, poly_text,
                                   scenario_from_dict)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_load(name):
    sc = load_builtin(name)
    assert sc.name == name
    x = np.zeros((1, sc.problem.n))
    u = np.zeros((1, sc.problem.m))
    assert sc.problem.dynamics(x + 0.1, u).shape == (1, sc.problem.n)


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_export_round_trip(tmp_path, name):
    d = builtin_dict(name)
    path = tmp_path / f"{name}.yaml"
    dump_scenario(d, path)
    again = load_scenario(path)
    assert yaml.safe_load(dump_scenario(again.data)) == yaml.safe_load(path.read_text())
    if again.sampling is not None:
        assert again.sampling == load_builtin(name).sampling


def test_gyroscope_parameters():
    sc = load_builtin("gyroscope", I=2.0)
    assert sc.candidate.p0 == pytest.approx(0.9 * 0.5)
    assert sc.candidate.W is gyroscope_W
    assert sc.sampling.r_grid[-1] == pytest.approx(1e-6 * 10.0)
    with pytest.raises(TypeError):
        builtin_dict("gyroscope", J=1.0)


def test_infinite_bounds_survive_yaml(tmp_path):
    path = tmp_path / "g.yaml"
    dump_scenario(builtin_dict("gyroscope"), path)
    sc = load_scenario(path)
    assert sc.problem.state_space.lower[1] == -math.inf


def test_unknown_builtin():
    with pytest.raises(ScenarioError):
        builtin_dict("nope")


BASE = {"n": 1, "m": 1, "dynamics": ["-x1 + u1"]}


@pytest.mark.parametrize("bad", [
    dict(BASE, extra=1),
    dict(BASE, control_set={"kind": "box", "size": 1}),
    dict(BASE, candidate={"W": "x1^2", "builtin": "gyroscope"}),
    dict(BASE, candidate={"builtin": "missing"}),
    dict(BASE, polynomial={"drift": ["0"], "terms": []}),
    dict(BASE, dynamics=["x1", "x1"]),
    dict(BASE, dynamics=["x3"]),
    {"n": 1, "dynamics": ["x1"]},
    dict(BASE, candidate={"W": "x1^2", "p0": -1}),
    dict(BASE, feedback={"delta": 2.0}),
])
def test_invalid_scenarios_rejected(bad):
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)


def test_duplicate_multi_index():
    d = {"n": 1, "m": 1, "polynomial": {"drift": ["0"], "terms": [
        {"alpha": [1], "field": ["1"]}, {"alpha": [1], "field": ["x1"]}]}}
    with pytest.raises(ScenarioError, match="duplicate"):
        scenario_from_dict(d)


def test_yaml_syntax_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("n: [1, 2\n")
    with pytest.raises(ScenarioError, match="cannot parse"):
        load_scenario(path)
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ScenarioError):
        load_scenario(path)


def test_poly_text_listing():
    sc = load_builtin("remark44-system")
    text = poly_text(sc.poly_texts)
    assert text.splitlines()[0] == "f0 = [0, 0, 0, 0]"
    assert "(1,3,0): [1, 0, x2, 0]" in text


def test_with_sampling_regenerates_grid():
    sc = load_builtin("diag-example")
    sc2 = sc.with_sampling(bands=3)
    assert len(sc2.sampling.r_grid) == 3 and sc2.sampling.sigma == sc.sampling.sigma
