import math

import numpy as np
import pytest

from osgoodflow.errors import DomainError, IntegrationError, LookupFailure, TemporalDomainError
from osgoodflow.flow import convergence_study, flow_map_eval, integrate, step_count
from osgoodflow.scenario import parse_scenario

from conftest import atoms_doc, lipschitz_doc


def self_interaction(w=0.7, h=1.3):
    """V = u with an even kernel: a lone atom moves at constant speed w eta(0)."""
    vel = {"family": "linear_u", "params": {"A": [[1.0]]}, "sup_bound": w * h,
           "modulus": {"family": "linear", "scale": 1.0}}
    ker = {"family": "gaussian", "params": {"height": h, "sigma": 0.5}}
    return parse_scenario(atoms_doc([0.0], [w], velocity=vel, kernels=ker))


@pytest.mark.parametrize("scheme", ["euler", "rk2", "rk4"])
def test_constant_field_exact(scheme):
    vel = {"family": "constant", "params": {"c": [0.1]}}
    s = parse_scenario(atoms_doc([0.0, 2.0], [0.5, 0.5], velocity=vel, T=1.0))
    tr = integrate(s, 0.001, scheme)
    assert tr.positions[0][-1, :, 0].tolist() == [0.1, 2.1]


def test_single_atom_closed_form():
    s = self_interaction()
    tr = integrate(s, 1e-3, "rk4")
    expect = tr.times * 0.7 * 1.3
    assert np.allclose(tr.positions[0][:, 0, 0], expect, rtol=1e-6, atol=1e-15)


def test_mass_constant(lipschitz_scenario):
    tr = integrate(lipschitz_scenario, 0.05, "rk4")
    assert tr.mass_constant()
    assert tr.tv_norms().shape == (21, 2)


def test_step_count():
    assert step_count(1.0, 0.1) == 10
    with pytest.raises(DomainError):
        step_count(1.0, 0.3)
    with pytest.raises(DomainError):
        step_count(1.0, 2.0)
    with pytest.raises(DomainError):
        step_count(1.0, 0.0)


def test_invalid_scheme_and_coupling(lipschitz_scenario):
    with pytest.raises(DomainError):
        integrate(lipschitz_scenario, 0.1, "leapfrog")
    with pytest.raises(DomainError):
        integrate(lipschitz_scenario, 0.1, coupling="lagged")


@pytest.mark.parametrize("scheme,order", [("euler", 1), ("rk2", 2), ("rk4", 4)])
def test_convergence_orders(lipschitz_scenario, scheme, order):
    rep = convergence_study(lipschitz_scenario, scheme, [0.1, 0.05, 0.025, 0.0125])
    assert rep.converging
    assert rep.orders[-1] == pytest.approx(order, abs=0.3)


def test_convergence_ladder_checks(lipschitz_scenario):
    with pytest.raises(DomainError):
        convergence_study(lipschitz_scenario, "rk4", [0.1, 0.05])
    with pytest.raises(DomainError):
        convergence_study(lipschitz_scenario, "rk4", [0.1, 0.05, 0.02])


def test_tracers_and_lookup(lipschitz_scenario):
    s = lipschitz_scenario
    atom = s.initial.positions[0][3]
    tr = integrate(s, 0.1, "rk4", tracers=[[0.123], atom])
    # a tracer on an atom shares its trajectory bit-exactly
    assert np.array_equal(tr.tracers[0][:, 1], tr.positions[0][:, 3])
    assert np.array_equal(flow_map_eval(tr, 0, 0.5, atom), tr.positions[0][5, 3])
    assert flow_map_eval(tr, 1, 1.0, [0.123]).shape == (1,)
    with pytest.raises(LookupFailure):
        flow_map_eval(tr, 0, 0.5, [0.77777])
    with pytest.raises(TemporalDomainError):
        flow_map_eval(tr, 0, 0.55, atom)


def test_tracers_do_not_affect_atoms(lipschitz_scenario):
    a = integrate(lipschitz_scenario, 0.1, "rk4")
    b = integrate(lipschitz_scenario, 0.1, "rk4", tracers=np.linspace(-2, 2, 9)[:, None])
    for i in range(2):
        assert np.array_equal(a.positions[i], b.positions[i])


def test_tracer_matches_atom_of_zero_weight():
    # a tracer is a massless particle: it follows the same ODE as an atom of weight 0
    vel = {"family": "attract_repel", "params": {"coef": [1.0]}, "sup_bound": 1.0,
           "modulus": {"family": "linear", "scale": 2.0}}
    base = parse_scenario(atoms_doc([-0.5, 0.4], [0.6, 0.4], velocity=vel))
    ghost = parse_scenario(atoms_doc([-0.5, 0.4, 0.1], [0.6, 0.4, 0.0], velocity=vel))
    a = integrate(base, 0.01, "rk4", tracers=[[0.1]])
    b = integrate(ghost, 0.01, "rk4")
    assert np.allclose(a.tracers[0][:, 0], b.positions[0][:, 2], atol=1e-14)


def test_frozen_coupling_differs_but_converges(lipschitz_scenario):
    st = integrate(lipschitz_scenario, 0.01, "rk2", coupling="stage")
    fr = integrate(lipschitz_scenario, 0.01, "rk2", coupling="frozen")
    gap = np.abs(st.positions[0][-1] - fr.positions[0][-1]).max()
    assert 0 < gap < 1e-2


def test_nonfinite_field_raises(monkeypatch, lipschitz_scenario):
    pre = lipschitz_scenario.velocity.presets[0]
    monkeypatch.setattr(type(pre), "__call__", lambda self, t, x, u: np.full((len(x), 1), np.nan))
    with pytest.raises(IntegrationError) as exc:
        integrate(lipschitz_scenario, 0.1)
    assert exc.value.t == 0.0 and exc.value.species == 0


def test_csv_export(lipschitz_scenario):
    tr = integrate(lipschitz_scenario, 0.25, "euler", tracers=[[0.0]])
    text = tr.to_csv(every=2)
    rows = text.strip().splitlines()
    assert rows[0] == "t,species,id,kind,x_1,w"
    assert len(rows) == 1 + 3 * (32 + 2)
    assert float(rows[1].split(",")[0]) == 0.0
