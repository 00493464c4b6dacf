"""Checks of the weak formulation, the mass identity and the mollification limit."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ResolutionError
from .fields import VelocityFieldSpec
from .flow import FlowTrajectory, _field_velocity, integrate
from .measures import KernelVec, MollifiedKernel, tv_norm
from .scenario import ScenarioSpec

# sup of |d/ds (1 - s^2)^4| / ... : max_s 8 s (1 - s^2)^3 at s = 1/sqrt(7)
_BUMP_GRAD = 8.0 / math.sqrt(7.0) * (6.0 / 7.0) ** 3
_GL5 = np.polynomial.legendre.leggauss(5)


@dataclass(frozen=True)
class TimeBump:
    """``alpha(t) = (1 - ((t - c)/r)^2)^4`` on ``|t - c| < r``."""

    center: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("time bump radius must be positive")

    @property
    def support(self):
        return self.center - self.radius, self.center + self.radius

    def value(self, t):
        s = (np.asarray(t, dtype=float) - self.center) / self.radius
        return np.where(np.abs(s) < 1, (1 - s * s) ** 4, 0.0)

    def deriv(self, t):
        s = (np.asarray(t, dtype=float) - self.center) / self.radius
        return np.where(np.abs(s) < 1, -8 * s * (1 - s * s) ** 3 / self.radius, 0.0)


@dataclass(frozen=True)
class SpaceBump:
    """``beta(x) = (1 - |x - c|^2/R^2)^4`` on ``|x - c| < R``."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise DomainError("space bump radius must be positive")

    def value(self, x):
        z = np.atleast_2d(x) - np.asarray(self.center)
        q = np.einsum("nd,nd->n", z, z) / self.radius**2
        return np.where(q < 1, np.clip(1 - q, 0, None) ** 4, 0.0)

    def grad(self, x):
        z = np.atleast_2d(x) - np.asarray(self.center)
        q = np.einsum("nd,nd->n", z, z) / self.radius**2
        g = np.where(q < 1, -8 * np.clip(1 - q, 0, None) ** 3 / self.radius**2, 0.0)
        return g[:, None] * z

    @property
    def grad_sup(self):
        return _BUMP_GRAD / self.radius


@dataclass(frozen=True)
class TestFunction:
    """``phi(t, x) = sum_m coef_m alpha_m(t) beta_m(x)``; the empty sum is ``phi = 0``."""

    terms: tuple = ()

    __test__ = False  # not a pytest class

    @classmethod
    def bump(cls, t_center, t_radius, x_center, x_radius, coef=1.0):
        return cls(((float(coef), TimeBump(t_center, t_radius), SpaceBump(x_center, x_radius)),))

    def __add__(self, other):
        return TestFunction(self.terms + other.terms)

    def scaled(self, c):
        return TestFunction(tuple((c * a, al, be) for a, al, be in self.terms))

    def __call__(self, t, x):
        return sum(c * al.value(t) * be.value(x) for c, al, be in self.terms) if self.terms else \
            np.zeros(len(np.atleast_2d(x)))

    def check_support(self, T):
        """The support must sit inside ``[0, T)`` in time: ``phi(T, .) = 0``."""
        for _, al, _ in self.terms:
            if al.support[1] > T + 1e-12:
                raise DomainError(f"time support {al.support} extends past T = {T}")

    @property
    def grad_sup(self):
        """Bound on ``|grad_x phi|`` over the support of the time factor ``alpha <= 1``."""
        return sum(abs(c) * be.grad_sup for c, _, be in self.terms)


def standard_test_functions(T, d, box=None):
    """Three preset test functions: one starting at t = 0, one interior, one sum of two bumps."""
    lo, hi = (-1.0, 1.0) if box is None else box
    mid = 0.5 * (lo + hi)
    span = hi - lo
    c0 = (mid,) * d
    c1 = (lo + 0.3 * span,) * d
    c2 = (lo + 0.7 * span,) * d
    return [
        TestFunction.bump(0.0, 0.6 * T, c0, 0.6 * span),
        TestFunction.bump(0.5 * T, 0.45 * T, c1, 0.4 * span),
        TestFunction.bump(0.3 * T, 0.3 * T, c2, 0.5 * span)
        + TestFunction.bump(0.6 * T, 0.35 * T, c0, 0.3 * span, coef=-0.5),
    ]


def _grid_fields(traj: FlowTrajectory, n):
    s = traj.scenario
    pos = [p[n] for p in traj.positions]
    return _field_velocity(s, traj.times[n], pos, pos, traj.weights, "numba")


def _product_time_integral(times, g, alpha_fn, knots):
    """``int alpha(t) g(t) dt`` with ``g`` linear between grid values and ``alpha`` exact.

    Each cell is split at the knots of ``alpha`` and integrated by 5-point
    Gauss-Legendre, exact for the degree-9 polynomial pieces.
    """
    xg, wg = _GL5
    total = 0.0
    for n in range(len(times) - 1):
        a, b = times[n], times[n + 1]
        cuts = [a] + [kt for kt in knots if a < kt < b] + [b]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            half = 0.5 * (hi - lo)
            tq = lo + half * (xg + 1)
            gq = g[n] + (g[n + 1] - g[n]) * (tq - a) / (b - a)
            total += half * float(np.dot(wg, alpha_fn(tq) * gq))
    return total


def weak_residual(traj: FlowTrajectory, phi: TestFunction, min_steps: int = 8) -> np.ndarray:
    """Per-species residual of the weak formulation.

    ``R_i = int_0^T sum_a w_a [d_t phi + V^i . grad phi](t, X_a(t)) dt + sum_a w_a phi(0, xbar_a)``.

    Space integrals are exact sums over atoms.  In time, each term
    ``alpha(t) beta(x)`` is integrated with ``alpha`` (or ``alpha'``) treated
    exactly and the trajectory factor interpolated linearly between grid
    values, so the rule is second order in the step and exact for a
    stationary measure.
    """
    T = traj.scenario.T
    phi.check_support(T)
    k = traj.k
    res = np.zeros(k)
    if not phi.terms:
        return res
    times = traj.times
    h = traj.dt
    for _, al, _ in phi.terms:
        lo, hi = max(al.support[0], 0.0), min(al.support[1], T)
        if (hi - lo) / h < min_steps - 1e-9:
            raise ResolutionError(f"time support [{lo}, {hi}] holds fewer than {min_steps} steps of {h}")
    vel = [_grid_fields(traj, n) for n in range(traj.steps + 1)]
    for i in range(k):
        w = traj.weights[i]
        if len(w) == 0:
            continue
        P = traj.positions[i]
        terms = []
        for c, al, be in phi.terms:
            g = np.array([np.dot(w, be.value(P[n])) for n in range(len(times))])
            f = np.array([np.dot(w, np.einsum("nd,nd->n", vel[n][i], be.grad(P[n])))
                          for n in range(len(times))])
            knots = al.support
            integral = _product_time_integral(times, g, al.deriv, knots) \
                + _product_time_integral(times, f, al.value, knots)
            initial = float(al.value(0.0)) * float(np.dot(w, be.value(P[0])))
            terms.append(c * (integral + initial))
        res[i] = math.fsum(terms)
    return res


# -- mass identity -----------------------------------------------------------

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s * s)


def _smoothstep_deriv(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30 * s * s * (1 - s) ** 2, 0.0)


@dataclass(frozen=True)
class Cutoff:
    """``beta_R = 1`` on ``B_R``, ``0`` outside ``B_2R``; ``|grad beta_R| <= 1.875/R <= 2/R``."""

    radius: float
    center: tuple = None

    def _z(self, x):
        x = np.atleast_2d(x)
        c = np.zeros(x.shape[1]) if self.center is None else np.asarray(self.center, dtype=float)
        return x - c

    def value(self, x):
        r = np.linalg.norm(self._z(x), axis=1)
        return 1.0 - _smoothstep(r / self.radius - 1.0)

    def grad(self, x):
        z = self._z(x)
        r = np.linalg.norm(z, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(r[:, None] > 0, z / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return -(_smoothstep_deriv(r / self.radius - 1.0) / self.radius)[:, None] * unit


@dataclass
class MassRung:
    radius: float
    species: int
    defect: float
    budget: float
    identity_residual: float
    passed: bool


@dataclass
class MassReport:
    structural: bool
    rungs: list = field(default_factory=list)

    @property
    def passed(self):
        return self.structural and all(r.passed for r in self.rungs)

    @property
    def max_identity_residual(self):
        return max((r.identity_residual for r in self.rungs), default=0.0)

    def to_dict(self):
        return {"check": "mass_identity", "structural": self.structural, "passed": self.passed,
                "rungs": [r.__dict__ for r in self.rungs]}


def mass_identity_check(traj: FlowTrajectory, radii, center=None, tol: float = 1e-8) -> MassReport:
    """Cutoff form of mass preservation on a ladder of radii.

    For each ``R`` and species: ``defect = sup_t |int beta_R d rho(t) - int beta_R d rho_bar|``
    is compared with ``(2/R) |rho_bar^i| |V| T + tol``.  The identity
    ``int beta_R d rho(t) = int beta_R d rho_bar + int_0^t int V . grad beta_R d rho ds``
    is evaluated with the trapezoid rule and its residual reported.
    The structural check asserts that every snapshot carries the initial
    per-species mass bit-exactly.
    """
    s = traj.scenario
    report = MassReport(structural=traj.mass_constant())
    Vsup = s.velocity.sup_bound
    masses = tv_norm(s.initial)[0]
    vel = None
    for R in radii:
        beta = Cutoff(float(R), center)
        for i in range(traj.k):
            w = traj.weights[i]
            P = traj.positions[i]
            lhs = np.array([math.fsum(w * beta.value(P[n])) if len(w) else 0.0 for n in range(traj.steps + 1)])
            defect = float(np.max(np.abs(lhs - lhs[0])))
            if vel is None:
                vel = [_grid_fields(traj, n) for n in range(traj.steps + 1)]
            flux = np.array([float(np.dot(w, np.einsum("nd,nd->n", vel[n][i], beta.grad(P[n]))))
                             if len(w) else 0.0 for n in range(traj.steps + 1)])
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (flux[1:] + flux[:-1]) * np.diff(traj.times))])
            ident = float(np.max(np.abs(lhs - lhs[0] - cum)))
            budget = float(2.0 / R * masses[i] * Vsup * s.T)
            report.rungs.append(MassRung(float(R), i, defect, budget, ident, bool(defect <= budget + tol)))
    return report


# -- mollification -----------------------------------------------------------

def mollifier_nodes(dim, eps, nodes=5):
    """Tensor Gauss-Legendre nodes weighted by ``prod (1 - xi^2)^2``, scaled by ``eps``, unit mass."""
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    w1 = wg * (1 - xg**2) ** 2
    pts = np.array(list(itertools.product(xg, repeat=dim))).reshape(-1, dim)
    wts = np.array([np.prod(c) for c in itertools.product(w1, repeat=dim)])
    return eps * pts, wts / wts.sum()


class MollifiedPreset:
    """``V_eps(t, x, u) = sum_n c_n V(t, x - eps xi_n, u - eps zeta_n)``."""

    def __init__(self, base, eps, nodes=5):
        self.base = base
        self.d, self.k = base.d, base.k
        self.family = f"mollified:{base.family}"
        off, self.coeffs = mollifier_nodes(self.d + self.k, eps, nodes)
        self.dx, self.du = off[:, : self.d], off[:, self.d:]

    def __call__(self, t, x, u):
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        out = np.zeros((len(x), self.d))
        for ox, ou, c in zip(self.dx, self.du, self.coeffs):
            out += c * self.base(t, x - ox, u - ou)
        return out

    def sup(self):
        return self.base.sup()

    def to_dict(self):
        return {"family": self.family, "base": self.base.to_dict(), "nodes": len(self.coeffs)}


@dataclass(frozen=True, eq=False)
class MollifiedScenario:
    """A base scenario with ``V`` mollified in ``(x, u)`` and ``eta`` in ``x`` at width ``eps``."""

    base: ScenarioSpec
    eps: float
    nodes: int = 5

    def scenario(self) -> ScenarioSpec:
        s = self.base
        if self.eps == 0:
            return s
        vel = VelocityFieldSpec([MollifiedPreset(p, self.eps, self.nodes) for p in s.velocity.presets],
                                s.velocity.sup_bound, s.velocity.modulus)
        off, c = mollifier_nodes(s.d, self.eps, self.nodes)
        ker = KernelVec([[MollifiedKernel(e, off, c) for e in row] for row in s.kernels.entries],
                        s.kernels.modulus, s.kernels.sup_bound)
        return s.replace(velocity=vel, kernels=ker)


@dataclass
class SweepReport:
    widths: list
    observables: int
    cauchy: list          # [species][observable] -> list over consecutive widths
    equicontinuity: list  # [width][species][observable]
    caps: list            # [species][observable]
    monotone: bool
    inconclusive: bool
    within_cap: bool

    def to_dict(self):
        return {"check": "mollify_sweep", **self.__dict__}


def _observable(phi):
    """Spatial part ``x -> sum_m coef_m beta_m(x)`` of a test function (or a bare SpaceBump)."""
    if isinstance(phi, SpaceBump):
        return [(1.0, phi)]
    return [(c, be) for c, _, be in phi.terms]


def mollify_sweep(base: ScenarioSpec, widths, observables, dt: float, scheme: str = "rk4",
                  nodes: int = 5, tol: float = 1e-9) -> SweepReport:
    """Integrate the mollified scenario for each width and compare ``F_eps(t) = int beta d rho_eps(t)``.

    Observables use the spatial factor of each test function.  Reports the
    Cauchy differences ``sup_t |F_{eps_{j+1}} - F_{eps_j}|`` and the
    equicontinuity constant ``max_n |F(t_{n+1}) - F(t_n)| / dt`` against its cap
    ``|V| |grad beta| |rho_bar^i|``.  A ladder whose Cauchy differences do not
    decrease is flagged inconclusive rather than failed.
    """
    widths = [float(e) for e in widths]
    if any(b >= a for a, b in zip(widths, widths[1:])):
        raise DomainError("width ladder must be strictly decreasing")
    obs = [_observable(phi) for phi in observables]
    k = base.k
    masses = tv_norm(base.initial)[0]
    Vsup = base.velocity.sup_bound
    F = []
    equi = []
    for eps in widths:
        traj = integrate(MollifiedScenario(base, eps, nodes).scenario(), dt, scheme)
        Fe = np.zeros((k, len(obs), traj.steps + 1))
        for i in range(k):
            w = traj.weights[i]
            for o, parts in enumerate(obs):
                for n in range(traj.steps + 1):
                    Fe[i, o, n] = sum(c * float(np.dot(w, be.value(traj.positions[i][n]))) for c, be in parts) \
                        if len(w) else 0.0
        F.append(Fe)
        equi.append((np.abs(np.diff(Fe, axis=2)).max(axis=2) / traj.dt).tolist() if traj.steps else
                    np.zeros((k, len(obs))).tolist())
    caps = [[float(Vsup * masses[i]) * sum(abs(c) * be.grad_sup for c, be in parts) for parts in obs] for i in range(k)]
    cauchy = [[[float(np.abs(F[j + 1][i, o] - F[j][i, o]).max()) for j in range(len(widths) - 1)]
               for o in range(len(obs))] for i in range(k)]
    monotone = all(all(b < a or a == 0.0 for a, b in zip(seq, seq[1:])) for row in cauchy for seq in row)
    within = all(equi[j][i][o] <= caps[i][o] + tol for j in range(len(widths)) for i in range(k)
                 for o in range(len(obs)))
    return SweepReport(widths, len(obs), cauchy, equi, caps, monotone, not monotone, within)
