"""Twin-scenario stability certificates.

Two scenarios ``A = (V, eta, rho_bar)`` and ``B = (U, nu, sigma_bar)`` are
integrated on one registered point cloud.  The discrepancy functional
``Q_zeta(t) = sum_i mean_mu |X^i(t, .) - Y^i(t, .)|`` with
``mu = |rho_bar| + |sigma_bar| + zeta dx`` is compared with the Bihari-LaSalle
bound driven by the perturbation budget ``M``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationRefused, DomainError, RegistrationError, ValidationError
from .fields import sup_distance_fields, sup_distance_kernels
from .flow import FlowTrajectory, integrate
from .measures import atomic_tv_distance, convolve, tv_norm
from .moduli import ComposedModulus, bihari_bound, check_osgood
from .scenario import ScenarioSpec, parse_scenario


@dataclass(frozen=True, eq=False)
class TwinSpec:
    """Scenarios A and B with shared ``(T, d, k)`` and moduli, plus the tracer-cloud layout.

    Parameters
    ----------
    box : sequence of (lo, hi)
        Region of the grid realizing the ``zeta dx`` part of ``mu``; also the
        default box for sup-norm distances.
    resolution : int
        Grid cells per axis.
    zeta : {"bump", "uniform"}
        Density of the grid part; discretely normalized to unit mass.
    coarse : bool
        Declares the cloud coarse, so the sup-level comparison is informative only.
    """

    a: ScenarioSpec
    b: ScenarioSpec
    box: tuple
    resolution: int = 16
    zeta: str = "bump"
    coarse: bool = True
    check: bool = True

    def __post_init__(self):
        a, b = self.a, self.b
        problems = []
        if (a.T, a.d, a.k) != (b.T, b.d, b.k):
            problems.append(f"shape: twins differ in (T, d, k): {(a.T, a.d, a.k)} vs {(b.T, b.d, b.k)}")
        if a.omega_V.to_dict() != b.omega_V.to_dict():
            problems.append("shared-modulus: omega_V differs between the twins")
        if a.omega_eta.to_dict() != b.omega_eta.to_dict():
            problems.append("shared-modulus: omega_eta differs between the twins")
        if self.resolution < 1:
            problems.append("cloud: resolution must be >= 1")
        if self.zeta not in ("bump", "uniform"):
            problems.append(f"cloud: unknown zeta {self.zeta!r}")
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if box.shape[0] != a.d or np.any(box[:, 1] <= box[:, 0]):
            problems.append("cloud: box must list d nonempty intervals")
        if problems:
            raise ValidationError(problems)
        object.__setattr__(self, "box", tuple(map(tuple, box.tolist())))
        if self.check:
            for name, s in (("A", a), ("B", b)):
                problems += [f"{name} {v}" for v in s.velocity.validate(T=s.T)]
                problems += [f"{name} {v}" for v in s.kernels.validate(s.d)]
            if problems:
                raise ValidationError(problems)

    @property
    def lam(self):
        return tv_norm(self.a.initial)[1] + tv_norm(self.b.initial)[1] + 1.0

    def cloud(self):
        """Registered points and unnormalized ``mu`` weights.

        Returns ``(points, weights, grid_mask, coarse_mask)``; ``coarse_mask``
        selects atoms plus every other grid node per axis.
        """
        cache = getattr(self, "_cloud", None)
        if cache is not None:
            return cache
        d = self.a.d
        box = np.asarray(self.box)
        m = self.resolution
        axes = [lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in box]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        idx = np.stack(np.meshgrid(*[np.arange(m)] * d, indexing="ij"), axis=-1).reshape(-1, d)
        if self.zeta == "bump":
            xi = (grid - box[:, 0]) / (box[:, 1] - box[:, 0]) * 2 - 1
            z = np.prod((1 - xi**2) ** 2, axis=1)
        else:
            z = np.ones(len(grid))
        z = z / z.sum()
        order, weight, is_grid, keep = {}, [], [], []
        pts = []

        def add(p, w, g, k):
            key = p.tobytes()
            if key in order:
                j = order[key]
                weight[j] += w
                keep[j] = keep[j] or k
                return
            order[key] = len(pts)
            pts.append(p)
            weight.append(w)
            is_grid.append(g)
            keep.append(k)

        for meas in (self.a.initial, self.b.initial):
            for P, W in zip(meas.positions, meas.weights):
                for p, w in zip(P, W):
                    add(np.array(p, dtype=float), float(w), False, True)
        for p, w, ix in zip(grid, z, idx):
            add(p, float(w), True, bool(np.all(ix % 2 == 0)))
        out = (np.array(pts).reshape(-1, d), np.array(weight), np.array(is_grid), np.array(keep))
        object.__setattr__(self, "_cloud", out)
        return out


def load_twin(path_or_doc) -> TwinSpec:
    """Twin document: ``{"schema": 1, "a": <scenario>, "b": <scenario>, "cloud": {...}}``.

    A missing ``b`` means an identical twin.
    """
    doc = path_or_doc
    if not isinstance(doc, dict):
        with open(path_or_doc) as fh:
            doc = json.load(fh)
    a = parse_scenario(doc["a"])
    b = parse_scenario(doc["b"]) if doc.get("b") is not None else a
    cl = doc.get("cloud", {})
    box = cl.get("box", [[-2.0, 2.0]] * a.d)
    return TwinSpec(a, b, box, resolution=int(cl.get("resolution", 16)), zeta=cl.get("zeta", "bump"),
                    coarse=bool(cl.get("coarse", True)), check=False)


def run_twins(tw: TwinSpec, dt: float, scheme: str = "rk4", coupling: str = "stage"):
    """Integrate both scenarios with the cloud registered for every species in both runs."""
    pts = tw.cloud()[0]
    A = integrate(tw.a, dt, scheme, tracers=pts, coupling=coupling)
    B = A if tw.b is tw.a else integrate(tw.b, dt, scheme, tracers=pts, coupling=coupling)
    return A, B


def _check_registration(A: FlowTrajectory, B: FlowTrajectory):
    if A.scheme != B.scheme or A.dt != B.dt or not np.array_equal(A.times, B.times):
        raise RegistrationError("twin trajectories must share scheme and time grid")
    if A.k != B.k:
        raise RegistrationError("twin trajectories differ in species count")
    for i in range(A.k):
        if not np.array_equal(A.tracers[i][0], B.tracers[i][0]):
            raise RegistrationError(f"registered points differ for species {i}")


def q_zeta(A: FlowTrajectory, B: FlowTrajectory, mu) -> np.ndarray:
    """``Q_zeta`` on the grid; ``mu`` holds the weights of the registered points."""
    _check_registration(A, B)
    mu = np.asarray(mu, dtype=float)
    if len(mu) != A.tracers[0].shape[1]:
        raise RegistrationError("mu weights do not match the registered points")
    mu = mu / mu.sum()
    Q = np.zeros(len(A.times))
    for i in range(A.k):
        Q += np.linalg.norm(A.tracers[i] - B.tracers[i], axis=2) @ mu
    return Q


def flow_sup_distance(A: FlowTrajectory, B: FlowTrajectory, mask=None) -> np.ndarray:
    """``max_{p, i} |X^i(t, p) - Y^i(t, p)|`` over registered points (optionally a subset)."""
    _check_registration(A, B)
    out = np.zeros(len(A.times))
    for i in range(A.k):
        diff = np.linalg.norm(A.tracers[i] - B.tracers[i], axis=2)
        if mask is not None:
            diff = diff[:, mask]
        if diff.shape[1]:
            out = np.maximum(out, diff.max(axis=1))
    return out


@dataclass
class Budget:
    tv: float
    field: dict
    kernel: dict
    eps: float
    lam: float
    eta_sup: float
    M_terms: list
    M: float

    def to_dict(self):
        return dict(self.__dict__)


def perturbation_budget(tw: TwinSpec, box=None, n: int = 4096, u_radius: float | None = None,
                        seed: int = 0) -> Budget:
    """``eps``, ``lambda`` and ``M = w_V(|eta| tv) + w_V(lambda |eta - nu|) + |V - U|``."""
    a, b = tw.a, tw.b
    box = tw.box if box is None else box
    tv = atomic_tv_distance(a.initial, b.initial)
    if u_radius is None:
        u_radius = max(tv_norm(a.initial)[1] * a.kernels.sup_bound, tv_norm(b.initial)[1] * b.kernels.sup_bound)
    if b.velocity is a.velocity:
        fd = {"value": 0.0, "exact": True, "samples": 0, "box": [list(r) for r in box]}
    else:
        fd = sup_distance_fields(a.velocity, b.velocity, box, n=n, u_radius=u_radius, T=a.T, seed=seed).to_dict()
    if b.kernels is a.kernels:
        kd = {"value": 0.0, "exact": True, "samples": 0, "box": [list(r) for r in box]}
    else:
        kd = sup_distance_kernels(a.kernels, b.kernels, box, n=n, seed=seed).to_dict()
    fd["u_radius"] = u_radius
    lam = tw.lam
    wV = a.omega_V
    eta = a.kernels.sup_bound
    terms = [wV.value(eta * tv), wV.value(lam * kd["value"]), fd["value"]]
    return Budget(tv, fd, kd, tv + fd["value"] + kd["value"], lam, eta, terms, math.fsum(terms))


# -- four-term audit -----------------------------------------------------------

def _time_lipschitz(s: ScenarioSpec):
    best = 0.0
    for p in s.velocity.presets:
        if getattr(p, "family", "") == "time_mod":
            best = max(best, 2 * math.pi * abs(p._amp * p._freq) * p._base.sup())
    return best


def step_slack(tw: TwinSpec, h: float) -> float:
    """Bound on the drift of the Q_zeta integrand within one step, summed over species.

    Every field value moves by at most ``w_V(h |V| + 2 lam w_eta(h |V|)) + h L_t``
    between a grid time and a stage of the following step, for both twins.
    """
    vmax = max(tw.a.velocity.sup_bound, tw.b.velocity.sup_bound)
    r = h * vmax
    lam = tw.lam
    drift = tw.a.omega_V.value(r + 2 * lam * tw.a.omega_eta.value(r))
    drift += h * max(_time_lipschitz(tw.a), _time_lipschitz(tw.b))
    return 2.0 * tw.a.k * drift


def four_terms(tw: TwinSpec, A: FlowTrajectory, B: FlowTrajectory, mu, n: int) -> np.ndarray:
    """``(k, 4)`` array of the terms (1)_i..(4)_i at grid index ``n``."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / mu.sum()
    t = A.times[n]
    rho, sigma = A.snapshot(n), B.snapshot(n)
    V, U = tw.a.velocity, tw.b.velocity
    eta, nu = tw.a.kernels, tw.b.kernels
    out = np.zeros((A.k, 4))
    for i in range(A.k):
        X = A.tracers[i][n]
        Y = B.tracers[i][n]
        rX = convolve(rho, eta, i, X)
        rY = convolve(rho, eta, i, Y)
        sY = convolve(sigma, eta, i, Y)
        sYn = convolve(sigma, nu, i, Y)
        v1 = V(i, t, X, rX)
        v2 = V(i, t, Y, rY)
        v3 = V(i, t, Y, sY)
        v4 = V(i, t, Y, sYn)
        u4 = U(i, t, Y, sYn)
        for c, (p, q) in enumerate(((v1, v2), (v2, v3), (v3, v4), (v4, u4))):
            out[i, c] = float(np.linalg.norm(p - q, axis=1) @ mu)
    return out


@dataclass
class AuditReport:
    times: list
    q_prime: list
    terms: list          # per audited step: (k, 4) nested lists
    term_sums: list
    slack: float
    slack_bound: float
    a_min: float | None
    passed_at: dict = field(default_factory=dict)

    def passes(self, a):
        return all(qp <= a * s + self.slack for qp, s in zip(self.q_prime, self.term_sums))

    def to_dict(self):
        return {"check": "four_term_audit", **self.__dict__}


def _smallest_power_of_two(ok, cap=2**30):
    a = 1.0
    while a <= cap:
        if ok(a):
            return a
        a *= 2
    return None


def four_term_audit(tw: TwinSpec, A: FlowTrajectory, B: FlowTrajectory, mu, stride: int = 1) -> AuditReport:
    """Check ``Q'_n <= a sum_i [(1)+(2)+(3)+(4)]_i(t_n) + slack`` on audited steps.

    ``Q'_n`` is the forward difference over ``[t_n, t_{n+1}]`` and the terms
    are evaluated at ``t_n``.  The slack is the largest observed change of the
    term sum across one audited step, which is proportional to the step for
    Lipschitz data; the modulus-based worst case of :func:`step_slack` is
    reported as ``slack_bound``.  ``a_min`` is the smallest power of two (at
    least 1) for which every audited step passes.
    """
    Q = q_zeta(A, B, mu)
    h = A.dt
    idx = list(range(0, A.steps, max(1, int(stride))))
    qp, terms, sums, drift = [], [], [], 0.0
    for n in idx:
        tm = four_terms(tw, A, B, mu, n)
        nxt = float(four_terms(tw, A, B, mu, n + 1).sum())
        terms.append(tm.tolist())
        sums.append(float(tm.sum()))
        drift = max(drift, abs(nxt - sums[-1]))
        qp.append(float((Q[n + 1] - Q[n]) / h))
    rep = AuditReport([float(A.times[n]) for n in idx], qp, terms, sums, drift, step_slack(tw, h), None)
    rep.a_min = _smallest_power_of_two(rep.passes)
    rep.passed_at = {str(a): rep.passes(a) for a in (1.0, 2.0, 4.0)}
    return rep


def calibrate_a(Q, times, composite: ComposedModulus, M: float):
    """Smallest power of two ``a >= 1`` with ``Q'_n <= a (w(Q_n) + M)`` on every step.

    The explicit (left-point) form makes the discrete comparison with the
    convex Bihari solution rigorous: ``Q_n <= B(t_n)`` follows by induction.
    """
    Q = np.asarray(Q, dtype=float)
    dq = np.diff(Q) / np.diff(times)
    rhs = np.array([composite.value(q) for q in Q[:-1]]) + M

    def ok(a):
        return bool(np.all(dq <= a * rhs))

    return _smallest_power_of_two(ok)


# -- certificate -------------------------------------------------------------------

@dataclass
class StabilityReport:
    budget: Budget
    lam: float
    osgood: dict
    a: float
    a_source: str
    a_audit: float | None
    a_bihari: float | None
    a_theory: float
    omega: float
    omega_theory: float
    sup_Q: float
    sup_flow: float
    cloud_points: int
    cloud_resolution: int
    cloud_refinement_delta: float
    coarse: bool
    q_lipschitz: float
    q_lipschitz_bound: float
    q_level_pass: bool
    sup_level_pass: bool
    times: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    sup_dist: np.ndarray = field(repr=False)
    omega_running: np.ndarray = field(repr=False)
    audit: AuditReport | None = field(default=None, repr=False)

    @property
    def verdict(self):
        ok = self.q_level_pass and (self.coarse or self.sup_level_pass)
        return "PASS" if ok else "FAIL"

    def to_dict(self):
        out = {
            "check": "stability_certificate",
            "verdict": self.verdict,
            "epsilon": {"tv": self.budget.tv, "field": self.budget.field, "kernel": self.budget.kernel,
                        "total": self.budget.eps},
            "lambda": self.lam,
            "M": self.budget.M,
            "M_terms": self.budget.M_terms,
            "eta_sup": self.budget.eta_sup,
            "osgood": self.osgood,
            "a": self.a,
            "a_source": self.a_source,
            "a_audit": self.a_audit,
            "a_bihari": self.a_bihari,
            "a_theory": self.a_theory,
            "omega": self.omega,
            "omega_theory": self.omega_theory,
            "q_level": {"observed_sup_Q": self.sup_Q, "certified": self.omega, "passed": self.q_level_pass},
            "sup_level": {"observed": self.sup_flow, "certified": self.omega, "passed": self.sup_level_pass,
                          "hard_check": not self.coarse},
            "q_lipschitz": {"observed": self.q_lipschitz, "bound": self.q_lipschitz_bound},
            "cloud": {"points": self.cloud_points, "resolution": self.cloud_resolution,
                      "refinement_delta": self.cloud_refinement_delta, "coarse": self.coarse},
            "caveat": "sup-norm distances are estimated on a bounded box and the flow sup on a finite "
                      "cloud; both are lower estimates of the global quantities.",
        }
        if self.audit is not None:
            out["audit"] = {"a_min": self.audit.a_min, "slack": self.audit.slack,
                            "slack_bound": self.audit.slack_bound,
                            "steps": len(self.audit.q_prime), "passed_at": self.audit.passed_at}
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "Q_zeta", "sup_dist", "Omega_running"])
        for row in zip(self.times, self.Q, self.sup_dist, self.omega_running):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def certify(tw: TwinSpec, dt: float, scheme: str = "rk4", a="auto", twins=None, budget: Budget | None = None,
            audit_stride: int = 1, audit: bool | None = None, coupling: str = "stage") -> StabilityReport:
    """Run (or reuse) the twins and compare ``sup_t Q_zeta`` with ``Omega = B(T)``.

    ``a = "auto"`` calibrates the absorbed constant on this twin as the larger
    of the four-term audit constant and the smallest power of two satisfying
    the Bihari premise along the observed ``Q_zeta``; a number freezes it.
    """
    budget = perturbation_budget(tw) if budget is None else budget
    lam = budget.lam
    comp = ComposedModulus(tw.a.omega_V, tw.a.omega_eta, lam)
    verdict = check_osgood(comp)
    if not verdict.is_osgood:
        raise CertificationRefused(
            f"composite modulus w_V(r + {lam:g} w_eta(r)) fails the Osgood test; no stability modulus exists")
    if twins is None:
        A, B = run_twins(tw, dt, scheme, coupling)
    else:
        A, B = twins
        if A.scheme != scheme or abs(A.dt - dt) > 1e-12 or B.scheme != scheme:
            raise RegistrationError("supplied twins were integrated with a different scheme or step")
    pts, mu, is_grid, keep = tw.cloud()
    Q = q_zeta(A, B, mu)
    sup = flow_sup_distance(A, B)
    sup_coarse = flow_sup_distance(A, B, mask=keep)
    M = budget.M
    do_audit = (a == "auto") if audit is None else audit
    rep_audit = four_term_audit(tw, A, B, mu, stride=audit_stride) if do_audit else None
    a_bih = calibrate_a(Q, A.times, comp, M)
    if a == "auto":
        cands = [a_bih] + ([] if rep_audit is None else [rep_audit.a_min])
        if any(x is None for x in cands):
            raise CertificationRefused("no power of two up to 2^30 calibrates the absorbed constant")
        a_used = max(cands)
        source = "calibrated"
    else:
        a_used = float(a)
        if not a_used > 0:
            raise DomainError("absorbed constant a must be positive")
        source = "frozen"
    a_theory = 2.0 * tw.a.k
    omega = bihari_bound(comp, a_used, M, tw.a.T)
    omega_th = bihari_bound(comp, a_theory, M, tw.a.T)
    running = np.array([bihari_bound(comp, a_used, M, float(t)) for t in A.times])
    sup_Q = float(Q.max())
    sup_flow = float(sup.max())
    qlip = float(np.max(np.abs(np.diff(Q)) / np.diff(A.times))) if A.steps else 0.0
    qlip_bound = tw.a.k * (tw.a.velocity.sup_bound + tw.b.velocity.sup_bound)
    return StabilityReport(
        budget=budget, lam=lam, osgood={k: v for k, v in verdict.to_dict().items() if k not in ("shell_integrals", "partial_sums")},
        a=a_used, a_source=source, a_audit=None if rep_audit is None else rep_audit.a_min, a_bihari=a_bih,
        a_theory=a_theory, omega=omega, omega_theory=omega_th, sup_Q=sup_Q, sup_flow=sup_flow,
        cloud_points=len(pts), cloud_resolution=tw.resolution,
        cloud_refinement_delta=float(np.max(sup - sup_coarse)), coarse=tw.coarse,
        q_lipschitz=qlip, q_lipschitz_bound=qlip_bound,
        q_level_pass=bool(sup_Q <= omega * (1 + 1e-9)),
        sup_level_pass=bool(sup_flow <= omega * (1 + 1e-9)),
        times=A.times, Q=Q, sup_dist=sup, omega_running=running, audit=rep_audit,
    )
