import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from osgoodflow.errors import ScenarioError, ValidationError
from osgoodflow.measures import (
    DiscreteMeasureVec,
    Kernel,
    KernelVec,
    atomic_tv_distance,
    convolve,
    convolve_at,
    pushforward,
    tv_norm,
)

FAMILIES = [
    Kernel("hat", height=1.5, width=0.7),
    Kernel("gaussian", height=1.0, sigma=0.4),
    Kernel("bump", height=2.0, radius=0.9),
    Kernel("odd_gauss", height=1.0, sigma=0.5),
    Kernel("loglip", height=1.0),
    Kernel("cusp", height=1.0, width=0.5),
    Kernel("zero"),
]


def test_construction_validation():
    with pytest.raises(ValidationError) as exc:
        DiscreteMeasureVec([[[0.0]]], [[-1.0]])
    assert "nonnegativity" in str(exc.value)
    with pytest.raises(ValidationError):
        DiscreteMeasureVec([[[0.0], [1.0]]], [[1.0]])
    with pytest.raises(ValidationError):
        DiscreteMeasureVec([[[np.nan]]], [[1.0]])
    m = DiscreteMeasureVec([[[0.0]]], [[1.0]])
    with pytest.raises(ValueError):
        m.positions[0][0, 0] = 3.0


def test_empty_species_allowed():
    m = DiscreteMeasureVec([np.zeros((0, 2)), [[1.0, 2.0]]], [[], [0.5]], d=2)
    per, total = tv_norm(m)
    assert per.tolist() == [0.0, 0.5] and total == 0.5


def test_atoms_roundtrip():
    atoms = [{"species": 1, "pos": [0.5], "w": 0.25}, {"species": 0, "pos": [-1.0], "w": 1.0}]
    m = DiscreteMeasureVec.from_atoms(atoms, 2, 1)
    back = DiscreteMeasureVec.from_atoms(m.to_atoms(), 2, 1)
    assert atomic_tv_distance(m, back) == 0.0
    with pytest.raises(ValidationError):
        DiscreteMeasureVec.from_atoms([{"species": 3, "pos": [0.0], "w": 1}], 2, 1)


@pytest.mark.parametrize("ker", FAMILIES, ids=lambda k: k.family)
@pytest.mark.parametrize("d", [1, 2, 3])
def test_compiled_matches_numpy(ker, d):
    rng = np.random.default_rng(d)
    P = rng.uniform(-1, 1, size=(40, d))
    X = rng.uniform(-1, 1, size=(60, d))
    w = rng.uniform(0, 1, size=60)
    a = ker.pair_sum(P, X, w, backend="numba")
    b = ker.pair_sum(P, X, w, backend="numpy")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("ker", FAMILIES, ids=lambda k: k.family)
def test_declared_data_hold(ker):
    kv = KernelVec.uniform(ker, 1)
    assert kv.validate(2, box=[[-2, 2], [-2, 2]]) == []
    z = np.random.default_rng(0).uniform(-2, 2, size=(2000, 2))
    assert np.all(np.abs(ker(z)) <= ker.sup() + 1e-12)


def test_kernel_oracles():
    assert Kernel("hat", height=2.0, width=1.0)([[0.5]])[0] == pytest.approx(1.0)
    assert Kernel("gaussian", height=1.0, sigma=1.0)([[1.0]])[0] == pytest.approx(math.exp(-0.5))
    og = Kernel("odd_gauss", height=1.0, sigma=1.0)
    assert og([[1.0]])[0] == pytest.approx(math.exp(-0.5))
    assert og([[-1.0]])[0] == pytest.approx(-math.exp(-0.5))
    assert Kernel("loglip", height=1.0)([[0.0]])[0] == 1.0
    assert Kernel("loglip", height=1.0)([[1.0]])[0] == 0.0


def test_kernel_errors():
    with pytest.raises(ScenarioError):
        Kernel("sinc", height=1.0)
    with pytest.raises(ScenarioError):
        Kernel("hat", height=1.0)
    with pytest.raises(ScenarioError):
        Kernel("hat", height=1.0, width=1.0, extra=2)
    with pytest.raises(ScenarioError):
        Kernel("gaussian", height=1.0, sigma=0.0)


def test_convolve_single_atom():
    ker = Kernel("gaussian", height=1.0, sigma=1.0)
    kv = KernelVec.uniform(ker, 2)
    m = DiscreteMeasureVec([[[0.0]], [[1.0]]], [[2.0], [3.0]])
    u = convolve_at(m, kv, 0, [0.0])
    assert u == pytest.approx([2.0, 3.0 * math.exp(-0.5)])
    assert convolve(m, kv, 1, [[0.0], [1.0]]).shape == (2, 2)


@given(hnp.arrays(float, (12, 2), elements=st.floats(-3, 3)), hnp.arrays(float, 12, elements=st.floats(0, 2)),
       st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_convolution_translation_invariance(pos, w, cx, cy):
    ker = Kernel("bump", height=1.0, radius=1.0)
    kv = KernelVec.uniform(ker, 1)
    m = DiscreteMeasureVec([pos], [w])
    shift = np.array([cx, cy])
    pts = np.array([[0.1, 0.2], [1.0, -1.0]])
    u0 = convolve(m, kv, 0, pts)
    u1 = convolve(pushforward(m, lambda p: p + shift), kv, 0, pts + shift)
    assert np.allclose(u0, u1, atol=1e-12)


@given(hnp.arrays(float, 10, elements=st.floats(0, 1)))
@settings(max_examples=50, deadline=None)
def test_pushforward_preserves_mass(w):
    m = DiscreteMeasureVec([np.linspace(0, 1, 10)[:, None]], [w])
    img = pushforward(m, lambda p: np.sin(5 * p) ** 3)
    assert tv_norm(img)[0].tolist() == tv_norm(m)[0].tolist()


def test_tv_distance_oracles():
    a = DiscreteMeasureVec([[[0.0], [1.0]]], [[1.0, 2.0]])
    b = DiscreteMeasureVec([[[0.0], [2.0]]], [[0.5, 2.0]])
    assert atomic_tv_distance(a, b) == pytest.approx(0.5 + 2.0 + 2.0)
    # coincident atoms merge first
    c = DiscreteMeasureVec([[[0.0], [0.0]]], [[0.25, 0.25]])
    d = DiscreteMeasureVec([[[0.0]]], [[0.5]])
    assert atomic_tv_distance(c, d) == 0.0
    # near atoms pair up within match_tol
    e = DiscreteMeasureVec([[[1e-9]]], [[0.5]])
    assert atomic_tv_distance(d, e) == 1.0
    assert atomic_tv_distance(d, e, match_tol=1e-6) == 0.0


@given(hnp.arrays(float, 6, elements=st.floats(0, 1)), hnp.arrays(float, 6, elements=st.floats(0, 1)),
       hnp.arrays(float, 6, elements=st.floats(0, 1)))
@settings(max_examples=60, deadline=None)
def test_tv_metric_axioms(w1, w2, w3):
    pos = np.arange(6.0)[:, None]
    m1, m2, m3 = (DiscreteMeasureVec([pos], [w]) for w in (w1, w2, w3))
    d12 = atomic_tv_distance(m1, m2)
    assert d12 == pytest.approx(atomic_tv_distance(m2, m1))
    assert atomic_tv_distance(m1, m1) == 0.0
    assert d12 <= atomic_tv_distance(m1, m3) + atomic_tv_distance(m3, m2) + 1e-12
    assert d12 == pytest.approx(float(np.abs(w1 - w2).sum()))


def test_union_adds_mass():
    a = DiscreteMeasureVec([[[0.0]]], [[1.0]])
    b = DiscreteMeasureVec([[[1.0]]], [[2.0]])
    assert tv_norm(a.union(b))[1] == 3.0
    with pytest.raises(ValidationError):
        a.union(DiscreteMeasureVec([[[0.0, 0.0]]], [[1.0]]))
