import json

import numpy as np
import pytest

from osgoodflow.errors import ScenarioError, ValidationError
from osgoodflow.measures import atomic_tv_distance, tv_norm
from osgoodflow.scenario import load_scenario, parse_scenario
from osgoodflow.stability import load_twin

from conftest import SCENARIOS, lipschitz_doc


@pytest.mark.parametrize("path", sorted(p for p in SCENARIOS.glob("*.json") if not p.name.startswith("twin")),
                         ids=lambda p: p.name)
def test_bundled_scenarios_load(path):
    s = load_scenario(path)
    assert s.k == len(s.velocity.presets)


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("twin*.json")), ids=lambda p: p.name)
def test_bundled_twins_load(path):
    tw = load_twin(path)
    assert tw.a.k == tw.b.k


def test_recipes_deterministic():
    a = parse_scenario(lipschitz_doc())
    b = parse_scenario(lipschitz_doc())
    c = parse_scenario(lipschitz_doc(seed=8))
    assert atomic_tv_distance(a.initial, b.initial) == 0.0
    assert not np.array_equal(a.initial.positions[0], c.initial.positions[0])
    assert tv_norm(a.initial)[0] == pytest.approx([1.0, 1.0])


def test_canonical_roundtrip():
    s = parse_scenario(lipschitz_doc())
    doc = json.loads(json.dumps(s.to_dict()))
    t = parse_scenario(doc)
    assert atomic_tv_distance(s.initial, t.initial) == 0.0
    assert t.to_dict() == s.to_dict()


def test_all_violations_collected():
    doc = lipschitz_doc()
    doc["velocity"]["sup_bound"] = 0.1
    doc["initial"] = {"atoms": [{"species": 0, "pos": [0.0], "w": -1.0}]}
    with pytest.raises(ValidationError) as exc:
        parse_scenario(doc)
    names = " ".join(exc.value.violations)
    assert "nonnegativity" in names


def test_sup_violation_detected():
    doc = lipschitz_doc()
    doc["velocity"]["sup_bound"] = 0.1
    with pytest.raises(ValidationError) as exc:
        parse_scenario(doc)
    assert any(v.startswith("sup-bound") for v in exc.value.violations)


@pytest.mark.parametrize("mutate,err", [
    (lambda d: d.update(T=-1.0), ValidationError),
    (lambda d: d.update(schema=7), ScenarioError),
    (lambda d: d["kernels"].update(family="sinc"), ScenarioError),
    (lambda d: d["velocity"]["presets"][0].update(family="vortex"), ScenarioError),
    (lambda d: d.pop("kernels"), ScenarioError),
    (lambda d: d["velocity"]["presets"].pop(), ValidationError),
    (lambda d: d["velocity"].update(modulus={"family": "power", "alpha": 2.0}), ScenarioError),
])
def test_invalid_documents(mutate, err):
    doc = lipschitz_doc()
    mutate(doc)
    with pytest.raises(err):
        parse_scenario(doc)


def test_parse_error_location(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"T": 1,\n "d": }')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(p)


def test_lattice_recipe():
    doc = lipschitz_doc(k=1)
    doc["initial"] = {"recipes": [{"density": "lattice", "n": 4, "box": [[0, 1]]}]}
    s = parse_scenario(doc)
    assert s.initial.positions[0].ravel().tolist() == [0.125, 0.375, 0.625, 0.875]


def test_natural_modulus_defaulted():
    doc = lipschitz_doc()
    del doc["velocity"]["modulus"]
    s = parse_scenario(doc)
    assert s.omega_V.family == "linear"
    assert s.omega_eta.family == "linear" and s.omega_eta.scale == pytest.approx(2.0)
