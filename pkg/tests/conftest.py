"""Shared scenario builders."""

from pathlib import Path

import numpy as np
import pytest

from osgoodflow.scenario import parse_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def lipschitz_doc(n=16, k=2, T=1.0, seed=7, mass=1.0):
    """Two-species (or one-species) 1D linear_u scenario with an odd Gaussian kernel."""
    A = [[[-1.0, 0.5]], [[0.5, -1.0]]] if k == 2 else [[[-1.0]]]
    boxes = [[[-1.0, 0.5]], [[-0.5, 1.0]]]
    return {
        "T": T, "d": 1, "k": k,
        "velocity": {"presets": [{"family": "linear_u", "params": {"A": A[i], "sat": 2.0}} for i in range(k)],
                     "sup_bound": 2.0, "modulus": {"family": "linear", "scale": 1.0}},
        "kernels": {"family": "odd_gauss", "params": {"height": 1.0, "sigma": 0.5}},
        "initial": {"seed": seed, "recipes": [
            {"species": i, "density": "uniform", "n": n, "box": boxes[i], "mass": mass} for i in range(k)]},
    }


def atoms_doc(positions, weights, velocity=None, kernels=None, T=1.0, d=1):
    """One-species scenario from explicit atoms."""
    velocity = velocity or {"family": "attract_repel", "params": {"coef": [1.0], "gain": 1.0},
                            "sup_bound": 1.0, "modulus": {"family": "linear", "scale": 1.0}}
    kernels = kernels or {"family": "odd_gauss", "params": {"height": 1.0, "sigma": 0.5}}
    atoms = [{"species": 0, "pos": list(np.atleast_1d(p)), "w": float(w)} for p, w in zip(positions, weights)]
    return {"T": T, "d": d, "k": 1, "velocity": velocity, "kernels": kernels, "initial": {"atoms": atoms}}


@pytest.fixture(scope="session")
def lipschitz_scenario():
    return parse_scenario(lipschitz_doc())


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
