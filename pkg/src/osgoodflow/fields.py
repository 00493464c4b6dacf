"""Velocity presets V^i(t, x, u), the non-local field b^i(t, x) and sup-norm distances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ScenarioError, TemporalDomainError, ValidationError
from .measures import DiscreteMeasureVec, Kernel, KernelVec, _box_arrays, _nearby, convolve, tv_norm
from .moduli import ModulusSpec

VELOCITY_FAMILIES = ("constant", "linear_u", "attract_repel", "shear", "time_mod")


def _loglip_profile(v):
    """Odd, bounded, log-Lipschitz: ``sign(v) |v| (1 + log(1/|v|))`` for |v| < 1, else sign(v)."""
    a = np.abs(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        core = np.where(a > 0, a * (1.0 - np.log(np.where(a > 0, a, 1.0))), 0.0)
    return np.sign(v) * np.where(a < 1.0, core, 1.0)


class VelocityPreset:
    """One species' velocity ``V^i(t, x, u)``: ``(n,d), (n,k) -> (n,d)``.

    Families and parameters
    -----------------------
    constant
        ``c`` (d-vector).  ``V = c``.
    linear_u
        ``A`` (d x k), ``b`` (d, default 0), ``sat`` (default inf).
        ``V = clip(A u + b, -sat, sat)``; independent of ``x``.
    attract_repel
        ``coef`` (k), ``gain``, ``u_scale`` (default 1), ``profile``
        ("lipschitz" or "loglip"), ``direction`` (d, default e_1).
        ``V = -gain * sum_j coef_j P(u_j / u_scale) * direction``.  With an odd
        kernel, ``u_j > 0`` means species-j mass sits behind ``x`` along
        ``direction``, so ``coef_j > 0`` attracts and ``coef_j < 0`` repels.
        ``P`` is ``clip(., -1, 1)`` or the log-Lipschitz profile
        ``sign(v) |v| (1 + log 1/|v|)`` saturated at 1.
    shear
        ``rate``, ``sat``, ``flow_axis`` (0), ``grad_axis`` (1); needs d >= 2.
        ``V_flow = sat * tanh(rate * x_grad / sat)``, other components zero.
    time_mod
        ``base`` (a preset dict), ``amp`` (|amp| < 1), ``freq``.
        ``V = (1 + amp sin(2 pi freq t)) V_base``.
    """

    def __init__(self, family, params, d, k):
        if family not in VELOCITY_FAMILIES:
            raise ScenarioError(f"unknown velocity preset {family!r}")
        self.family = family
        self.params = dict(params)
        self.d, self.k = int(d), int(k)
        p = self.params
        if family == "constant":
            self._c = np.asarray(p["c"], dtype=float).reshape(d)
        elif family == "linear_u":
            self._A = np.asarray(p["A"], dtype=float).reshape(d, k)
            self._b = np.asarray(p.get("b", np.zeros(d)), dtype=float).reshape(d)
            self._sat = float(p.get("sat", math.inf))
        elif family == "attract_repel":
            self._coef = np.asarray(p["coef"], dtype=float).reshape(k)
            self._gain = float(p.get("gain", 1.0))
            self._us = float(p.get("u_scale", 1.0))
            if not self._us > 0:
                raise ScenarioError("attract_repel: u_scale must be positive")
            self._profile = p.get("profile", "lipschitz")
            if self._profile not in ("lipschitz", "loglip"):
                raise ScenarioError(f"attract_repel: unknown profile {self._profile!r}")
            e = np.zeros(d)
            e[0] = 1.0
            e = np.asarray(p.get("direction", e), dtype=float).reshape(d)
            self._dir = e / np.linalg.norm(e)
        elif family == "shear":
            if d < 2:
                raise ScenarioError("shear preset needs d >= 2")
            self._rate = float(p["rate"])
            self._sat = float(p.get("sat", 1.0))
            self._fa = int(p.get("flow_axis", 0))
            self._ga = int(p.get("grad_axis", 1))
        else:
            base = p["base"]
            self._base = VelocityPreset(base["family"], base.get("params", {}), d, k)
            self._amp = float(p.get("amp", 0.0))
            self._freq = float(p.get("freq", 1.0))
            if abs(self._amp) >= 1:
                raise ScenarioError("time_mod: |amp| must be < 1")

    def to_dict(self):
        return {"family": self.family, "params": _jsonable(self.params)}

    def __call__(self, t, x, u):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        n = len(x)
        fam = self.family
        if fam == "constant":
            return np.broadcast_to(self._c, (n, self.d)).copy()
        if fam == "linear_u":
            return np.clip(u @ self._A.T + self._b, -self._sat, self._sat)
        if fam == "attract_repel":
            v = u / self._us
            prof = np.clip(v, -1.0, 1.0) if self._profile == "lipschitz" else _loglip_profile(v)
            s = -self._gain * (prof @ self._coef)
            return s[:, None] * self._dir[None, :]
        if fam == "shear":
            out = np.zeros((n, self.d))
            out[:, self._fa] = self._sat * np.tanh(self._rate * x[:, self._ga] / self._sat)
            return out
        factor = 1.0 + self._amp * math.sin(2.0 * math.pi * self._freq * t)
        return factor * self._base(t, x, u)

    def sup(self):
        """Closed-form ``sup |V|`` (Euclidean)."""
        fam = self.family
        if fam == "constant":
            return float(np.linalg.norm(self._c))
        if fam == "linear_u":
            if math.isfinite(self._sat):
                return self._sat * math.sqrt(self.d)
            return math.inf
        if fam == "attract_repel":
            return abs(self._gain) * float(np.abs(self._coef).sum())
        if fam == "shear":
            return abs(self._sat)
        return (1.0 + abs(self._amp)) * self._base.sup()

    def natural_modulus(self):
        """A joint modulus in ``|x - y| + |u - v|_1`` implied by the parameters."""
        fam = self.family
        if fam == "constant":
            return None
        if fam == "linear_u":
            return ModulusSpec.linear(max(float(np.abs(self._A).sum(axis=0).max()), 1e-300))
        if fam == "attract_repel":
            if self._profile == "lipschitz":
                return ModulusSpec.linear(abs(self._gain) * float(np.abs(self._coef).max()) / self._us)
            if self._us > 1:
                return None
            # sum_j |c_j| w(|du_j|) <= (sum_j |c_j|) w(|du|_1) since w is nondecreasing
            return ModulusSpec.loglinear(6.0 * abs(self._gain) * float(np.abs(self._coef).sum()) / self._us,
                                         extension="constant")
        if fam == "shear":
            return ModulusSpec.linear(abs(self._rate))
        base = self._base.natural_modulus()
        if base is None:
            return None
        return ModulusSpec.from_dict({**base.to_dict(), "scale": base.scale * (1.0 + abs(self._amp))})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass(frozen=True, eq=False)
class VelocityFieldSpec:
    """Per-species velocity presets with a shared declared sup bound and modulus."""

    presets: tuple
    sup_bound: float
    modulus: ModulusSpec

    def __post_init__(self):
        object.__setattr__(self, "presets", tuple(self.presets))
        if not (self.sup_bound >= 0 and math.isfinite(self.sup_bound)):
            raise ValidationError("sup-bound: velocity sup bound must be finite and nonnegative")

    @property
    def k(self):
        return len(self.presets)

    @property
    def d(self):
        return self.presets[0].d

    def __call__(self, i, t, x, u):
        return self.presets[i](t, x, u)

    def validate(self, box=None, u_box=None, T=1.0, n=2000, seed=0, tol=1e-9):
        """Sampled sup-bound and joint-modulus checks; returns the violated invariants."""
        d, k = self.d, self.k
        rng = np.random.default_rng(seed)
        lo, hi = _box_arrays(box, d, default=4.0)
        ulo, uhi = _box_arrays(u_box, k, default=2.0)
        violations = []
        for i, pre in enumerate(self.presets):
            t = rng.uniform(0.0, T, size=n)
            x = rng.uniform(lo, hi, size=(n, d))
            u = rng.uniform(ulo, uhi, size=(n, k))
            y = _nearby(rng, x, lo, hi)
            v = _nearby(rng, u, ulo, uhi)
            vx = np.stack([pre(tt, xx[None], uu[None])[0] for tt, xx, uu in zip(t, x, u)]) \
                if pre.family == "time_mod" else pre(t[0], x, u)
            vy = np.stack([pre(tt, yy[None], vv[None])[0] for tt, yy, vv in zip(t, y, v)]) \
                if pre.family == "time_mod" else pre(t[0], y, v)
            if np.any(np.linalg.norm(vx, axis=1) > self.sup_bound + tol):
                violations.append(f"sup-bound: species {i} exceeds {self.sup_bound}")
            dist = np.linalg.norm(x - y, axis=1) + np.abs(u - v).sum(axis=1)
            if np.any(np.linalg.norm(vx - vy, axis=1) > self.modulus(dist) + tol):
                violations.append(f"modulus: species {i} violates the declared omega_V")
        return violations


# -- non-local field ---------------------------------------------------------

class StaticMeasure:
    """Measure provider returning one snapshot for every t in [0, T]."""

    def __init__(self, measure: DiscreteMeasureVec, T: float = math.inf):
        self.measure = measure
        self.T = T

    def __call__(self, t):
        if not (-1e-12 <= t <= self.T + 1e-12):
            raise TemporalDomainError(f"no snapshot covers t = {t}")
        return self.measure


class TrajectoryMeasure:
    """Measure provider backed by the snapshots of a FlowTrajectory (grid times only)."""

    def __init__(self, traj, tol=1e-12):
        self.traj = traj
        self.tol = tol

    def __call__(self, t):
        n = self.traj.index_of(t, tol=self.tol)
        if n is None:
            raise TemporalDomainError(f"no trajectory snapshot at t = {t}")
        return self.traj.snapshot(n)


@dataclass(frozen=True, eq=False)
class NonlocalField:
    """``b^i(t, x) = V^i(t, x, (rho(t) * eta^i)(x))``."""

    velocity: VelocityFieldSpec
    kernels: KernelVec
    provider: Callable[[float], DiscreteMeasureVec]
    sup_bound: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sup_bound", self.velocity.sup_bound)


def eval_field(f: NonlocalField, i: int, t: float, x):
    """Evaluate ``b^i(t, x)``; ``x`` is one point (returns (d,)) or an (n, d) array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x.reshape(1, -1) if single else x
    m = f.provider(t)
    u = convolve(m, f.kernels, i, pts, t)
    out = f.velocity(i, t, pts, u)
    return out[0] if single else out


@dataclass
class FieldModulusReport:
    t: float
    a: float
    pairs: int
    mass: float
    max_ratio: float
    violations: int
    box: list

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        return {**self.__dict__, "passed": self.passed}


def verify_field_modulus(f: NonlocalField, t: float, sample_pairs: int = 200, box=None,
                         a: float | None = None, seed: int = 0, tol: float = 1e-9) -> FieldModulusReport:
    """Sampled check of ``sum_i |b^i(x) - b^i(y)| <= a omega_V(|x-y| + |rho| omega_eta(|x-y|))``.

    ``a`` defaults to k: each species obeys the bound with constant 1 and the
    left side sums over species.
    """
    m = f.provider(t)
    k, d = m.k, m.d
    a = float(k if a is None else a)
    mass = tv_norm(m)[1]
    rng = np.random.default_rng(seed)
    lo, hi = _box_arrays(box, d, default=2.0)
    x = rng.uniform(lo, hi, size=(sample_pairs, d))
    y = _nearby(rng, x, lo, hi)
    x[0] = y[0]
    lhs = np.zeros(sample_pairs)
    for i in range(k):
        lhs += np.linalg.norm(eval_field(f, i, t, x) - eval_field(f, i, t, y), axis=1)
    dist = np.linalg.norm(x - y, axis=1)
    rhs = a * f.velocity.modulus(dist + mass * f.kernels.modulus(dist))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > tol, np.inf, 0.0))
    bad = int(np.sum(lhs > rhs + tol))
    return FieldModulusReport(t=float(t), a=a, pairs=sample_pairs, mass=mass,
                              max_ratio=float(ratio.max()), violations=bad,
                              box=np.column_stack([lo, hi]).tolist())


# -- sup-norm distances -------------------------------------------------------

@dataclass
class SupDistance:
    value: float
    exact: bool
    samples: int
    box: list

    def __float__(self):
        return float(self.value)

    def to_dict(self):
        return dict(self.__dict__)


def _halton(dim, n, seed):
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)


def _closed_form_fields(V: VelocityFieldSpec, U: VelocityFieldSpec, u_radius):
    total = 0.0
    for p, q in zip(V.presets, U.presets):
        if p.family != q.family:
            return None
        if p.family == "constant":
            total += float(np.abs(p._c - q._c).sum())
        elif p.family == "linear_u":
            if not (np.array_equal(p._A, q._A) and math.isinf(p._sat) and math.isinf(q._sat)):
                return None
            total += float(np.abs(p._b - q._b).sum())
        elif p.family == "attract_repel":
            same = (np.array_equal(p._coef, q._coef) and p._us == q._us
                    and p._profile == q._profile and np.array_equal(p._dir, q._dir))
            if not same or u_radius < p._us:
                return None
            total += abs(p._gain - q._gain) * float(np.abs(p._coef).sum()) * float(np.abs(p._dir).sum())
        else:
            return None
    return total


def sup_distance_fields(V: VelocityFieldSpec, U: VelocityFieldSpec, box, n: int = 4096,
                        u_radius: float = 1.0, T: float = 1.0, seed: int = 0,
                        closed_form: bool = True) -> SupDistance:
    """Estimate ``||V - U||_{L^inf(C)}`` as ``sum_i sup |V^i - U^i|_1``.

    The supremum runs over ``t in [0, T]``, ``x`` in ``box`` and ``u`` in
    ``[-u_radius, u_radius]^k``.  Same-family pairs with a known closed form
    return it flagged ``exact``; otherwise a scrambled Halton sample (a prefix
    of one fixed sequence, so estimates are nondecreasing in ``n``) is used.
    """
    d, k = V.d, V.k
    lo, hi = _box_arrays(box, d)
    box_list = np.column_stack([lo, hi]).tolist()
    if closed_form:
        exact = _closed_form_fields(V, U, u_radius)
        if exact is not None:
            return SupDistance(exact, True, 0, box_list)
    pts = _halton(1 + d + k, n, seed)
    t = pts[:, 0] * T
    x = lo + pts[:, 1:1 + d] * (hi - lo)
    u = -u_radius + pts[:, 1 + d:] * 2 * u_radius
    total = 0.0
    for p, q in zip(V.presets, U.presets):
        if p.family == "time_mod" or q.family == "time_mod":
            diff = np.stack([np.abs(p(tt, xx[None], uu[None]) - q(tt, xx[None], uu[None]))[0].sum()
                             for tt, xx, uu in zip(t, x, u)])
        else:
            diff = np.abs(p(0.0, x, u) - q(0.0, x, u)).sum(axis=1)
        total += float(diff.max()) if len(diff) else 0.0
    return SupDistance(total, False, n, box_list)


def _gaussian_gap(h1, s1, h2, s2):
    """``max_r |h1 exp(-r^2/2s1^2) - h2 exp(-r^2/2s2^2)|`` in closed form."""
    f = lambda r2: abs(h1 * math.exp(-0.5 * r2 / s1**2) - h2 * math.exp(-0.5 * r2 / s2**2))  # noqa: E731
    cands = [0.0]
    if s1 != s2 and h1 * h2 > 0:
        # stationary point of the difference in r^2
        ratio = (h1 / s1**2) / (h2 / s2**2)
        denom = 0.5 / s1**2 - 0.5 / s2**2
        if ratio > 0:
            r2 = math.log(ratio) / denom
            if r2 > 0:
                cands.append(r2)
    return max(f(c) for c in cands)


def _closed_form_kernel(p, q):
    if isinstance(p, Kernel) and isinstance(q, Kernel) and p.family == q.family:
        same_shape = {k: v for k, v in p.params.items() if k != "height"} == \
            {k: v for k, v in q.params.items() if k != "height"} and p.axis == q.axis
        if same_shape:
            unit = Kernel(p.family, axis=p.axis, **{**p.params, "height": 1.0}).sup() if p.family != "zero" else 0.0
            return abs(p.height - q.height) * unit
        if p.family == "gaussian":
            return _gaussian_gap(p.height, p.params["sigma"], q.height, q.params["sigma"])
    return None


def sup_distance_kernels(eta: KernelVec, nu: KernelVec, box, n: int = 4096, seed: int = 0,
                         closed_form: bool = True) -> SupDistance:
    """Estimate ``max_{i,j} sup_x |eta^{ij}(x) - nu^{ij}(x)|`` over ``box``."""
    k = eta.k
    d = np.asarray(box, dtype=float).reshape(-1, 2).shape[0]
    lo, hi = _box_arrays(box, d)
    box_list = np.column_stack([lo, hi]).tolist()
    if closed_form:
        vals = [_closed_form_kernel(eta.entries[i][j], nu.entries[i][j]) for i in range(k) for j in range(k)]
        if all(v is not None for v in vals):
            return SupDistance(max(vals), True, 0, box_list)
    x = lo + _halton(d, n, seed) * (hi - lo)
    best = 0.0
    for i in range(k):
        for j in range(k):
            diff = np.abs(eta.entries[i][j](x) - nu.entries[i][j](x))
            best = max(best, float(diff.max()))
    return SupDistance(best, False, n, box_list)
