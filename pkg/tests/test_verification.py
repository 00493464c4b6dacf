import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osgoodflow.errors import DomainError, ResolutionError
from osgoodflow.flow import integrate
from osgoodflow.scenario import parse_scenario
from osgoodflow.verification import (
    Cutoff,
    MollifiedScenario,
    SpaceBump,
    TestFunction,
    TimeBump,
    mass_identity_check,
    mollifier_nodes,
    mollify_sweep,
    standard_test_functions,
    weak_residual,
)

from conftest import atoms_doc


def test_bump_derivatives_match_finite_differences():
    tb = TimeBump(0.5, 0.3)
    t = np.linspace(0.25, 0.75, 11)
    fd = (tb.value(t + 1e-6) - tb.value(t - 1e-6)) / 2e-6
    assert np.allclose(tb.deriv(t), fd, atol=1e-6)
    sb = SpaceBump((0.1, -0.2), 0.8)
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (20, 2))
    e = np.eye(2) * 1e-6
    fd = np.stack([(sb.value(x + e[c]) - sb.value(x - e[c])) / 2e-6 for c in range(2)], axis=1)
    assert np.allclose(sb.grad(x), fd, atol=1e-6)


def test_space_bump_grad_sup_attained():
    sb = SpaceBump((0.0,), 2.0)
    r = np.linspace(0, 2, 200001)[:, None]
    assert np.abs(sb.grad(r)).max() == pytest.approx(sb.grad_sup, rel=1e-8)


@given(st.floats(0.2, 3.0))
@settings(max_examples=20, deadline=None)
def test_cutoff_gradient_bound(R):
    c = Cutoff(R)
    r = np.linspace(0, 3 * R, 5001)[:, None]
    assert np.all(np.abs(c.grad(r)) <= 2.0 / R)
    assert c.value(np.array([[0.5 * R]]))[0] == 1.0 and c.value(np.array([[2.0 * R]]))[0] == 0.0


def test_support_check():
    phi = TestFunction.bump(0.9, 0.2, (0.0,), 1.0)
    with pytest.raises(DomainError):
        phi.check_support(1.0)


def test_zero_test_function():
    phi = TestFunction()
    assert phi(0.0, np.zeros((3, 1))).tolist() == [0.0, 0.0, 0.0]


def test_stationary_residual_vanishes():
    vel = {"family": "constant", "params": {"c": [0.0]}}
    s = parse_scenario(atoms_doc([-0.3, 0.2, 0.5], [0.2, 0.3, 0.5], velocity=vel))
    tr = integrate(s, 0.05)
    for phi in standard_test_functions(1.0, 1):
        assert abs(weak_residual(tr, phi)[0]) <= 1e-14


def test_translation_residual_small():
    vel = {"family": "constant", "params": {"c": [0.3]}}
    s = parse_scenario(atoms_doc([-0.3, 0.2], [0.5, 0.5], velocity=vel))
    phi = standard_test_functions(1.0, 1)[1]
    r = [abs(weak_residual(integrate(s, h), phi)[0]) for h in (0.05, 0.025)]
    assert r[1] < r[0] and r[1] < 1e-4


def test_residual_resolution_guard():
    vel = {"family": "constant", "params": {"c": [0.0]}}
    s = parse_scenario(atoms_doc([0.0], [1.0], velocity=vel))
    with pytest.raises(ResolutionError):
        weak_residual(integrate(s, 0.5), TestFunction.bump(0.5, 0.4, (0.0,), 1.0))


def test_mass_identity(lipschitz_scenario):
    tr = integrate(lipschitz_scenario, 0.02)
    rep = mass_identity_check(tr, [0.5, 1.0, 2.0])
    assert rep.structural and rep.passed
    assert rep.max_identity_residual < 1e-3
    for rung in rep.rungs:
        assert rung.defect <= rung.budget + 1e-8


def test_mollifier_nodes():
    off, c = mollifier_nodes(2, 0.1, 5)
    assert c.sum() == pytest.approx(1.0)
    assert np.all(c > 0) and np.abs(off).max() < 0.1
    # symmetric node set: zero first moment
    assert np.allclose(c @ off, 0.0, atol=1e-15)


def test_mollified_zero_width_is_base(lipschitz_scenario):
    assert MollifiedScenario(lipschitz_scenario, 0.0).scenario() is lipschitz_scenario


def test_mollified_linear_field_unchanged():
    # a symmetric mollifier leaves affine fields untouched
    vel = {"family": "linear_u", "params": {"A": [[1.0]]}, "sup_bound": 2.0,
           "modulus": {"family": "linear", "scale": 1.0}}
    s = parse_scenario(atoms_doc([0.0], [1.0], velocity=vel))
    m = MollifiedScenario(s, 0.1).scenario()
    x, u = np.array([[0.3]]), np.array([[0.4]])
    assert m.velocity(0, 0.0, x, u)[0, 0] == pytest.approx(0.4, abs=1e-15)


def test_mollify_sweep_cap(lipschitz_scenario):
    phis = standard_test_functions(1.0, 1, (-1.2, 1.2))
    rep = mollify_sweep(lipschitz_scenario, [0.2, 0.1], phis[:1], 0.05)
    assert rep.within_cap
    assert len(rep.cauchy[0][0]) == 1
    with pytest.raises(DomainError):
        mollify_sweep(lipschitz_scenario, [0.1, 0.2], phis, 0.05)
