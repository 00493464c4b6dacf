"""Particle integration of the coupled characteristic system.

Mass carriers move under the field generated by their own empirical measure;
tracers are advected by the same per-species field and carry no mass.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, LookupFailure, TemporalDomainError
from .measures import DiscreteMeasureVec, tv_norm
from .scenario import ScenarioSpec

# Butcher tableaux (A, b, c); the weights b sum to the denominator in _B_DENOM.
SCHEMES = {
    "euler": (np.zeros((1, 1)), (1.0,), (0.0,)),
    "rk2": (np.array([[0.0, 0.0], [0.5, 0.0]]), (0.0, 1.0), (0.0, 0.5)),
    "rk4": (
        np.array([[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1.0, 0]], dtype=float),
        (1.0, 2.0, 2.0, 1.0),
        (0.0, 0.5, 0.5, 1.0),
    ),
}
_B_DENOM = {"euler": 1.0, "rk2": 1.0, "rk4": 6.0}


@dataclass(eq=False)
class FlowTrajectory:
    """Positions of atoms and tracers on a uniform time grid.

    ``positions[i]`` has shape ``(N+1, n_i, d)`` and ``tracers[i]`` shape
    ``(N+1, m_i, d)``; ``weights`` is shared with the initial measure.
    """

    times: np.ndarray
    positions: list
    weights: tuple
    tracers: list
    scenario: ScenarioSpec
    scheme: str
    dt: float
    coupling: str = "stage"
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.positions)

    @property
    def d(self):
        return self.scenario.d

    @property
    def steps(self):
        return len(self.times) - 1

    def index_of(self, t, tol=1e-12):
        n = int(round(t / self.dt))
        if 0 <= n <= self.steps and abs(self.times[n] - t) <= tol:
            return n
        return None

    def snapshot(self, n) -> DiscreteMeasureVec:
        return self.scenario.initial.with_positions([p[n] for p in self.positions])

    def tracer_init(self, i):
        return self.tracers[i][0]

    def tv_norms(self):
        """``(N+1, k)`` array of per-species masses, read off every snapshot."""
        return np.array([tv_norm(self.snapshot(n))[0] for n in range(self.steps + 1)])

    def mass_constant(self):
        """True when every snapshot's per-species mass equals the initial one bit-exactly."""
        tv = self.tv_norms()
        return bool(np.all(tv == tv[0]))

    def to_csv(self, fh=None, every=1):
        """Write rows ``t, species, id, kind, x_1..x_d, w``; returns the text if ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "species", "id", "kind"] + [f"x_{c + 1}" for c in range(self.d)] + ["w"])
        for n in range(0, self.steps + 1, every):
            t = repr(float(self.times[n]))
            for i in range(self.k):
                for a, (p, wt) in enumerate(zip(self.positions[i][n], self.weights[i])):
                    w.writerow([t, i, a, "atom"] + [repr(float(x)) for x in p] + [repr(float(wt))])
                for a, p in enumerate(self.tracers[i][n]):
                    w.writerow([t, i, a, "tracer"] + [repr(float(x)) for x in p] + ["0.0"])
        if fh is None:
            return out.getvalue()
        return None


def _normalize_tracers(tracers, k, d):
    if tracers is None:
        return [np.zeros((0, d)) for _ in range(k)]
    try:
        arr = np.asarray(tracers, dtype=float)
    except ValueError:
        arr = None
    if arr is not None and arr.ndim <= 2:
        arr = arr.reshape(-1, d)
        return [arr.copy() for _ in range(k)]
    if len(tracers) != k:
        raise DomainError(f"tracers: expected one array per species (k = {k})")
    return [np.asarray(t, dtype=float).reshape(-1, d) for t in tracers]


def _alias(atoms, tracers):
    """Split tracers into those coinciding with an atom (index) and the rest."""
    lookup = {p.tobytes(): a for a, p in enumerate(atoms)}
    idx = np.array([lookup.get(p.tobytes(), -1) for p in tracers], dtype=int)
    return idx


def _field_velocity(s: ScenarioSpec, t, carriers, evals, weights, backend):
    """Per-species velocities at ``evals[i]`` for the measure with atoms ``carriers``."""
    out = []
    kv = s.kernels
    for i in range(s.k):
        pts = evals[i]
        if len(pts) == 0:
            out.append(np.zeros((0, s.d)))
            continue
        u = np.zeros((len(pts), s.k))
        row = kv.entries[i]
        for j in range(s.k):
            if len(weights[j]):
                u[:, j] = row[j].pair_sum(pts, carriers[j], weights[j], backend)
        v = s.velocity(i, t, pts, u)
        if not np.all(np.isfinite(v)):
            bad = int(np.argmax(~np.all(np.isfinite(v), axis=1)))
            raise IntegrationError(f"non-finite field for species {i} at t = {t}, x = {pts[bad].tolist()}",
                                   t=t, species=i, x=pts[bad].copy())
        out.append(v)
    return out


def step_count(T, dt):
    if not (dt > 0 and dt <= T * (1 + 1e-12)):
        raise DomainError(f"time step must lie in (0, T], got dt = {dt} with T = {T}")
    N = int(round(T / dt))
    if abs(N * dt - T) > 1e-12:
        raise DomainError(f"dt = {dt} does not divide T = {T} within 1e-12")
    return N


def integrate(s: ScenarioSpec, dt: float, scheme: str = "rk4", tracers=None, coupling: str = "stage",
              backend: str = "numba") -> FlowTrajectory:
    """Fixed-step Runge-Kutta integration of atoms and tracers.

    Parameters
    ----------
    s : ScenarioSpec
    dt : float
        Step; must divide ``T`` within 1e-12.  The grid is ``t_n = n T / N``.
    scheme : {"euler", "rk2", "rk4"}
    tracers : array or list of arrays, optional
        One ``(m, d)`` array registered for every species, or one per species.
    coupling : {"stage", "frozen"}
        "stage" rebuilds the empirical measure from stage positions at every
        Runge-Kutta stage; "frozen" keeps the step-start measure for all stages.

    Notes
    -----
    Positions are accumulated with Kahan compensation, so a constant field is
    integrated to the exact final position.  Tracers that coincide with an atom
    of their species share that atom's trajectory.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}; expected one of {sorted(SCHEMES)}")
    if coupling not in ("stage", "frozen"):
        raise DomainError(f"unknown coupling {coupling!r}")
    N = step_count(s.T, dt)
    h = s.T / N
    A, b, c = SCHEMES[scheme]
    denom = _B_DENOM[scheme]
    k, d = s.k, s.d
    m0 = s.initial
    weights = m0.weights
    tr = _normalize_tracers(tracers, k, d)
    alias = [_alias(m0.positions[i], tr[i]) for i in range(k)]
    free = [np.flatnonzero(al < 0) for al in alias]
    n_atoms = [len(w) for w in weights]

    times = np.arange(N + 1) * h
    times[-1] = s.T
    P = [np.empty((N + 1, n_atoms[i], d)) for i in range(k)]
    Q = [np.empty((N + 1, len(tr[i]), d)) for i in range(k)]

    # state per species: atoms stacked on top of free tracers
    x = [np.vstack([m0.positions[i], tr[i][free[i]]]) for i in range(k)]
    comp = [np.zeros_like(xi) for xi in x]

    def record(n):
        for i in range(k):
            P[i][n] = x[i][: n_atoms[i]]
            Q[i][n][free[i]] = x[i][n_atoms[i]:]
            al = alias[i]
            hit = al >= 0
            if hit.any():
                Q[i][n][hit] = x[i][al[hit]]

    record(0)
    stages = len(b)
    for n in range(N):
        t0 = times[n]
        ks = []
        for st in range(stages):
            if st == 0:
                y = x
            else:
                y = [x[i] + h * sum(A[st, j] * ks[j][i] for j in range(st) if A[st, j] != 0.0)
                     for i in range(k)]
            carriers = [y[i][: n_atoms[i]] for i in range(k)] if coupling == "stage" or st == 0 \
                else [x[i][: n_atoms[i]] for i in range(k)]
            ks.append(_field_velocity(s, t0 + c[st] * h, carriers, y, weights, backend))
        for i in range(k):
            # k_1 + sum_s b_s (k_s - k_1) / denom: exact when all stages agree, as sum(b) == denom
            incr = ks[0][i] + sum(b[st] * (ks[st][i] - ks[0][i]) for st in range(1, stages) if b[st] != 0.0) / denom
            # Kahan-compensated x += h * incr
            yk = h * incr - comp[i]
            tk = x[i] + yk
            comp[i] = (tk - x[i]) - yk
            x[i] = tk
        record(n + 1)

    return FlowTrajectory(times=times, positions=P, weights=weights, tracers=Q, scenario=s,
                          scheme=scheme, dt=h, coupling=coupling,
                          meta={"steps": N, "backend": backend, "aliased_tracers": [int((a >= 0).sum()) for a in alias]})


def flow_map_eval(traj: FlowTrajectory, species: int, t: float, x0, tol: float = 0.0):
    """``X^i(t, x0)`` for a registered initial point ``x0`` (atom or tracer)."""
    n = traj.index_of(t)
    if n is None:
        raise TemporalDomainError(f"t = {t} is not a grid time")
    x0 = np.asarray(x0, dtype=float).reshape(traj.d)
    for store, init in ((traj.positions[species], traj.positions[species][0]),
                        (traj.tracers[species], traj.tracers[species][0])):
        if len(init):
            dist = np.abs(init - x0).max(axis=1)
            hit = np.flatnonzero(dist <= tol)
            if len(hit):
                return store[n, hit[0]].copy()
    raise LookupFailure(f"point {x0.tolist()} is not registered for species {species}")


@dataclass
class ConvergenceReport:
    scheme: str
    steps: list
    differences: list
    orders: list
    converging: bool

    def to_dict(self):
        return dict(self.__dict__)


def convergence_study(s: ScenarioSpec, scheme: str, steps, coupling: str = "stage") -> ConvergenceReport:
    """Max-over-atoms position differences between consecutive refinements of a geometric ladder.

    Differences are taken at the grid times of the coarsest step.  The empirical
    order is ``log(D_j / D_{j+1}) / log(dt_j / dt_{j+1})``; a ladder whose
    differences do not decrease is flagged as not converging.
    """
    steps = [float(h) for h in steps]
    if len(steps) < 3:
        raise DomainError("convergence_study needs at least 3 step sizes")
    ratios = [steps[j] / steps[j + 1] for j in range(len(steps) - 1)]
    if any(r <= 1 for r in ratios) or max(ratios) - min(ratios) > 1e-9 * max(ratios):
        raise DomainError("steps must form a decreasing geometric ladder")
    trajs = [integrate(s, h, scheme, coupling=coupling) for h in steps]
    coarse = trajs[0].times
    diffs = []
    for ta, tb in zip(trajs[:-1], trajs[1:]):
        ia = [ta.index_of(t) for t in coarse]
        ib = [tb.index_of(t) for t in coarse]
        dmax = 0.0
        for i in range(s.k):
            if ta.positions[i].shape[1]:
                delta = np.linalg.norm(ta.positions[i][ia] - tb.positions[i][ib], axis=2)
                dmax = max(dmax, float(delta.max()))
        diffs.append(dmax)
    orders = []
    for j in range(len(diffs) - 1):
        if diffs[j] > 0 and diffs[j + 1] > 0:
            orders.append(math.log(diffs[j] / diffs[j + 1]) / math.log(ratios[j]))
        else:
            orders.append(math.inf if diffs[j] > 0 else float("nan"))
    converging = all(diffs[j + 1] < diffs[j] or diffs[j] == 0.0 for j in range(len(diffs) - 1))
    return ConvergenceReport(scheme, steps, diffs, orders, converging)
