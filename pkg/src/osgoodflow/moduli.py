"""Moduli of continuity and the Osgood / Bihari-LaSalle machinery built on them.

A modulus is a concave, nondecreasing map ``omega: [0, inf) -> [0, inf)`` with
``omega(0) = 0``.  The supported families are

========== ======================================== ====================
family     omega(r) for 0 < r <= r_max              default r_max
========== ======================================== ====================
linear     scale * r                                inf
power      scale * r**alpha, 0 < alpha <= 1         inf
loglinear  scale * r * log(1/r)                     1/e
loglog     scale * r * log(log(1/r))                exp(-e)
tabulated  piecewise-linear through ``knots``       last knot
========== ======================================== ====================

Beyond ``r_max`` a modulus is continued either linearly with its slope at
``r_max`` or constantly (``extension="linear" | "constant"``).  Both keep the
continuation concave and nondecreasing.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import CertificationRefused, DegenerateModulusError, DomainError, RangeError

FAMILIES = ("linear", "power", "loglinear", "loglog", "tabulated")

#: absolute tolerance of every quadrature in this module
QUAD_ABS_TOL = 1e-10
#: smallest radius the Osgood shells and the inversions descend to
RADIUS_FLOOR = 1e-300
RADIUS_CAP = 1e300

_LOGLOG_MONOTONE_LIMIT = 0.1715  # r log log(1/r) stops increasing near here
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class ModulusSpec:
    family: str
    scale: float = 1.0
    alpha: float | None = None
    knots: tuple[tuple[float, float], ...] | None = None
    r_max: float | None = None
    extension: str = "linear"
    _cap: float = field(init=False, repr=False, compare=False)
    _cap_value: float = field(init=False, repr=False, compare=False)
    _slope: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown modulus family {self.family!r}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise DomainError(f"modulus scale must be positive and finite, got {self.scale}")
        if self.extension not in ("linear", "constant"):
            raise DomainError(f"extension must be 'linear' or 'constant', got {self.extension!r}")
        fam = self.family
        if fam == "power":
            if self.alpha is None or not (0.0 < self.alpha <= 1.0):
                raise DomainError(f"power modulus needs 0 < alpha <= 1, got {self.alpha}")
        if fam == "tabulated":
            knots = self._normalized_knots(self.knots)
            object.__setattr__(self, "knots", knots)
        cap = self.r_max
        if cap is None:
            cap = {
                "linear": math.inf,
                "power": math.inf,
                "loglinear": math.exp(-1.0),
                "loglog": math.exp(-math.e),
                "tabulated": self.knots[-1][0] if self.knots else math.inf,
            }[fam]
        if not cap > 0:
            raise DomainError(f"r_max must be positive, got {cap}")
        if fam == "loglinear" and cap > math.exp(-1.0) * (1 + 1e-12):
            raise DomainError("loglinear modulus is only increasing up to r_max = 1/e")
        if fam == "loglog" and cap > _LOGLOG_MONOTONE_LIMIT:
            raise DomainError(f"loglog modulus is only increasing up to r_max ~ {_LOGLOG_MONOTONE_LIMIT}")
        object.__setattr__(self, "_cap", float(cap))
        if math.isfinite(cap):
            object.__setattr__(self, "_cap_value", self._core(cap))
            slope = 0.0 if self.extension == "constant" else max(self._core_slope(cap), 0.0)
            object.__setattr__(self, "_slope", slope)
        else:
            object.__setattr__(self, "_cap_value", math.inf)
            object.__setattr__(self, "_slope", 0.0)

    @staticmethod
    def _normalized_knots(knots):
        if not knots:
            raise DomainError("tabulated modulus needs at least one knot")
        pts = sorted((float(r), float(w)) for r, w in knots)
        if pts[0][0] < 0:
            raise DomainError("tabulated knots must have r >= 0")
        if pts[0][0] > 0:
            pts.insert(0, (0.0, 0.0))
        if pts[0][1] != 0.0:
            raise DomainError("tabulated modulus must vanish at r = 0")
        rs = [p[0] for p in pts]
        if len(set(rs)) != len(rs):
            raise DomainError("tabulated knots must have distinct radii")
        if len(pts) < 2:
            raise DomainError("tabulated modulus needs a knot with r > 0")
        return tuple(pts)

    # -- constructors -------------------------------------------------------
    @classmethod
    def linear(cls, L=1.0):
        return cls("linear", scale=float(L))

    @classmethod
    def power(cls, alpha, scale=1.0):
        return cls("power", scale=float(scale), alpha=float(alpha))

    @classmethod
    def loglinear(cls, scale=1.0, r_max=None, extension="linear"):
        return cls("loglinear", scale=float(scale), r_max=r_max, extension=extension)

    @classmethod
    def loglog(cls, scale=1.0, r_max=None, extension="linear"):
        return cls("loglog", scale=float(scale), r_max=r_max, extension=extension)

    @classmethod
    def tabulated(cls, knots, extension="linear"):
        return cls("tabulated", knots=tuple(tuple(k) for k in knots), extension=extension)

    @classmethod
    def zero(cls):
        """The identically vanishing modulus (admissible for kernels only)."""
        return cls("tabulated", knots=((0.0, 0.0), (1.0, 0.0)))

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        fam = data.pop("family")
        knots = data.pop("knots", None)
        if knots is not None:
            knots = tuple(tuple(k) for k in knots)
        return cls(fam, scale=float(data.pop("scale", 1.0)), alpha=data.pop("alpha", None),
                   knots=knots, r_max=data.pop("r_max", None),
                   extension=data.pop("extension", "linear"))

    def to_dict(self):
        out = {"family": self.family, "scale": self.scale}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.knots is not None:
            out["knots"] = [list(k) for k in self.knots]
        if self.r_max is not None:
            out["r_max"] = self.r_max
        if self.extension != "linear":
            out["extension"] = self.extension
        return out

    # -- evaluation ---------------------------------------------------------
    @property
    def r_cap(self):
        return self._cap

    def _core(self, r):
        """Closed form on (0, r_max]; scalar."""
        fam, s = self.family, self.scale
        if r == 0.0:
            return 0.0
        if fam == "linear":
            return s * r
        if fam == "power":
            return s * r ** self.alpha
        if fam == "loglinear":
            return s * r * -math.log(r)
        if fam == "loglog":
            return s * r * math.log(-math.log(r))
        rs, ws = zip(*self.knots)
        return float(np.interp(r, rs, ws))

    def _core_slope(self, r):
        fam, s = self.family, self.scale
        if fam == "linear":
            return s
        if fam == "power":
            return s * self.alpha * r ** (self.alpha - 1.0)
        if fam == "loglinear":
            return s * (-math.log(r) - 1.0)
        if fam == "loglog":
            L = -math.log(r)
            return s * (math.log(L) - 1.0 / L)
        (r1, w1), (r2, w2) = self.knots[-2], self.knots[-1]
        return (w2 - w1) / (r2 - r1)

    def value(self, r):
        """Scalar evaluation without argument checks (hot path of the quadratures)."""
        if r <= self._cap:
            return self._core(r)
        return self._cap_value + self._slope * (r - self._cap)

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError("modulus evaluated at a negative radius")
        if arr.ndim == 0:
            return self.value(float(arr))
        return self._array(arr)

    def _array(self, r):
        out = np.empty_like(r)
        inside = r <= self._cap
        ri = r[inside]
        fam, s = self.family, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            if fam == "linear":
                vi = s * ri
            elif fam == "power":
                vi = s * ri ** self.alpha
            elif fam == "loglinear":
                vi = np.where(ri > 0, s * ri * -np.log(ri), 0.0)
            elif fam == "loglog":
                vi = np.where(ri > 0, s * ri * np.log(-np.log(ri)), 0.0)
            else:
                rs, ws = zip(*self.knots)
                vi = np.interp(ri, rs, ws)
        out[inside] = vi
        out[~inside] = self._cap_value + self._slope * (r[~inside] - self._cap)
        return out

    def validate(self, r_hi=None, n=400, require_positive=True):
        """Check the modulus invariants on a sample grid; returns the violated ones."""
        if r_hi is None:
            r_hi = 4 * self._cap if math.isfinite(self._cap) else 10.0
        grid = np.unique(np.concatenate([[0.0], np.geomspace(1e-12, r_hi, n)]))
        w = self(grid)
        violations = []
        if w[0] != 0.0:
            violations.append("vanishes-at-zero")
        if np.any(np.diff(w) < -1e-12):
            violations.append("nondecreasing")
        rng = np.random.default_rng(0)
        r1, r2 = rng.uniform(0, r_hi, size=(2, n))
        mid = self(0.5 * (r1 + r2))
        if np.any(mid < 0.5 * (self(r1) + self(r2)) - 1e-12):
            violations.append("concave")
        if require_positive and np.any(w[1:] <= 0):
            violations.append("positive")
        return violations


def eval_modulus(m: ModulusSpec, r):
    """Evaluate ``m`` at ``r >= 0`` (scalar or array); negative ``r`` is a DomainError."""
    return m(r)


@dataclass(frozen=True)
class ComposedModulus:
    """The Osgood integrand ``r -> omega_V(r + lam * omega_eta(r))``."""

    omega_V: ModulusSpec
    omega_eta: ModulusSpec
    lam: float

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be a nonnegative finite number, got {self.lam}")

    def value(self, r):
        return self.omega_V.value(r + self.lam * self.omega_eta.value(r))

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0):
            raise DomainError("composed modulus evaluated at a negative radius")
        if arr.ndim == 0:
            return self.value(float(arr))
        return self.omega_V._array(arr + self.lam * self.omega_eta._array(arr))


@dataclass(frozen=True)
class OsgoodVerdict:
    is_osgood: bool
    shell_integrals: tuple[float, ...]
    partial_sums: tuple[float, ...]
    threshold: float
    threshold_reached: bool
    harmonic_trend: bool
    r_probe: float
    floor: float

    @property
    def shells(self):
        return len(self.shell_integrals)

    def to_dict(self):
        return {
            "is_osgood": self.is_osgood,
            "threshold": self.threshold,
            "threshold_reached": self.threshold_reached,
            "harmonic_trend": self.harmonic_trend,
            "r_probe": self.r_probe,
            "floor": self.floor,
            "shells": self.shells,
            "final_partial_sum": self.partial_sums[-1],
            "shell_integrals": list(self.shell_integrals),
            "partial_sums": list(self.partial_sums),
        }


def check_osgood(c: ComposedModulus, r_probe=1e-3, threshold=50.0, floor=RADIUS_FLOOR) -> OsgoodVerdict:
    """Classify the divergence of the integral of ``1/c`` at ``0+``.

    The integral is split over the dyadic shells ``[r_probe 2^-(j+1), r_probe 2^-j]``
    down to ``floor``.  Partial sums of the slowly divergent families
    (``r log 1/r``, ``r log log 1/r``) grow like ``log j`` or slower and never
    reach a fixed threshold in double precision, so the verdict is decided by a
    harmonic comparison instead: the shell contributions ``I_j`` of a divergent
    regularly varying integrand satisfy ``(j+1) I_j`` nondecreasing, whereas a
    convergent one decays geometrically.  Whether the threshold was crossed is
    recorded alongside as supporting evidence.
    """
    if not r_probe > 0:
        raise DomainError("r_probe must be positive")
    n_shells = int(math.floor(math.log2(r_probe / floor))) - 1
    if n_shells < 8:
        raise DomainError("r_probe too close to the floor for a dyadic test")
    j = np.arange(n_shells)
    hi = np.log(r_probe) - j * math.log(2.0)
    lo = hi - math.log(2.0)
    half = 0.5 * (hi - lo)
    u = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES[None, :]
    s = np.exp(u)
    with np.errstate(all="ignore"):
        w = c(s)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        bad = s[~(np.isfinite(w) & (w > 0))].ravel()[0]
        raise DegenerateModulusError(f"composed modulus vanishes at s = {bad:.3e} > 0")
    shells = (half[:, None] * _GL_WEIGHTS[None, :] * s / w).sum(axis=1)
    partial = np.cumsum(shells)
    tail = slice(n_shells // 2, None)
    scaled = (j[tail] + 1.0) * shells[tail]
    harmonic = bool(np.all(scaled[1:] >= scaled[:-1] * (1.0 - 1e-10)))
    increasing = bool(np.all(np.diff(partial) > 0))
    reached = bool(partial[-1] > threshold)
    return OsgoodVerdict(
        is_osgood=harmonic and increasing,
        shell_integrals=tuple(shells.tolist()),
        partial_sums=tuple(partial.tolist()),
        threshold=float(threshold),
        threshold_reached=reached,
        harmonic_trend=harmonic,
        r_probe=float(r_probe),
        floor=float(floor),
    )


@functools.lru_cache(maxsize=256)
def _osgood_cached(c: ComposedModulus) -> bool:
    return check_osgood(c).is_osgood


# -- monotone integral functions ---------------------------------------------

def _log_integral(rate: Callable[[float], float], a: float, b: float) -> float:
    """Integral of ``rate`` over ``[a, b]`` (0 < a <= b) in the variable ``u = log s``."""
    if a == b:
        return 0.0
    ua, ub = math.log(a), math.log(b)
    pieces = max(1, int(math.ceil((ub - ua) / 4.0)))
    edges = np.linspace(ua, ub, pieces + 1)
    f = lambda u: math.exp(u) * rate(math.exp(u))  # noqa: E731
    parts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=QUAD_ABS_TOL * 1e-2 / pieces, epsrel=1e-13, limit=200)
        parts.append(val)
    return math.fsum(parts)


def _signed_integral(rate, a, b):
    if b >= a:
        return _log_integral(rate, a, b)
    return -_log_integral(rate, b, a)


def _invert(rate, r0, g, tol=1e-9, floor=RADIUS_FLOOR, cap=RADIUS_CAP):
    """Solve ``int_{r0}^{r} rate = g`` for ``r`` by bracketing bisection in ``log r``."""
    if g == 0.0:
        return r0
    if g > 0:
        lo, glo = r0, 0.0
        hi = 2.0 * r0
        ghi = _log_integral(rate, lo, hi)
        while ghi < g:
            if hi > cap:
                raise RangeError(f"target {g} beyond the attainable range", limit=ghi)
            lo, glo = hi, ghi
            hi = 2.0 * hi
            ghi = glo + _log_integral(rate, lo, hi)
    else:
        hi, ghi = r0, 0.0
        lo = 0.5 * r0
        glo = -_log_integral(rate, lo, hi)
        while glo > g:
            if lo < floor:
                raise RangeError(f"target {g} below the attainable range; G(0+) ~ {glo}", limit=glo)
            hi, ghi = lo, glo
            lo = 0.5 * lo
            glo = ghi - _log_integral(rate, lo, hi)
    if abs(glo - g) <= tol:
        return lo
    if abs(ghi - g) <= tol:
        return hi
    for _ in range(2000):
        mid = math.sqrt(lo * hi)
        gmid = glo + _log_integral(rate, lo, mid)
        if abs(gmid - g) <= tol or hi / lo - 1.0 < 4e-16:
            return mid
        if gmid < g:
            lo, glo = mid, gmid
        else:
            hi, ghi = mid, gmid
    return math.sqrt(lo * hi)


def _reciprocal(c: ComposedModulus):
    def rate(s):
        w = c.value(s)
        if not w > 0:
            raise DegenerateModulusError(f"composed modulus vanishes at s = {s:.3e} > 0")
        return 1.0 / w
    return rate


def eval_G(c: ComposedModulus, r0: float, r: float) -> float:
    """``G(r) = int_{r0}^{r} ds / omega_V(s + lam omega_eta(s))`` (negative for r < r0)."""
    if not (r0 > 0 and r > 0):
        raise DomainError("eval_G needs r0 > 0 and r > 0")
    return _signed_integral(_reciprocal(c), r0, r)


def invert_G(c: ComposedModulus, r0: float, g: float) -> float:
    """Return ``r`` with ``|eval_G(c, r0, r) - g| <= 1e-9``.

    Raises RangeError (carrying ``G(0+)``) when ``g`` lies below the range,
    which can only happen for a non-Osgood composite.
    """
    if not r0 > 0:
        raise DomainError("invert_G needs r0 > 0")
    return _invert(_reciprocal(c), r0, float(g))


def bihari_bound(c: ComposedModulus, a: float, M: float, t: float, r0: float = 1.0) -> float:
    """Bihari-LaSalle bound for ``Q' <= a (omega_comp(Q) + M)``, ``Q(0) = 0``.

    Returns ``B(t) = H^-1(H(0) + a t)`` with ``H(r) = int_{r0}^r ds / (omega_comp(s) + M)``.
    The forcing keeps ``H(0)`` finite.  With ``M = 0`` the bound is zero for an
    Osgood composite; otherwise no bound exists and CertificationRefused is raised.
    """
    if not a > 0:
        raise DomainError("the absorbed constant a must be positive")
    if M < 0 or t < 0 or not r0 > 0:
        raise DomainError("bihari_bound needs M >= 0, t >= 0 and r0 > 0")
    if M == 0:
        if _osgood_cached(c):
            return 0.0
        raise CertificationRefused("composite modulus is not Osgood; no bound exists for M = 0")
    if t == 0:
        return 0.0

    def rate(s):
        return 1.0 / (c.value(s) + M)

    # below s_lo the integrand is within [1/(omega(s_lo)+M), 1/M]: negligible piece
    s_lo = min(r0, M * 1e-13)
    head = s_lo / (M + 0.5 * c.value(s_lo))
    H0 = -(head + _log_integral(rate, s_lo, r0))
    target = H0 + a * t
    try:
        return _invert(rate, r0, target)
    except RangeError:
        return 0.0


@dataclass(frozen=True)
class StabilityModulus:
    """``eps -> Omega(eps)``: the Bihari bound at horizon T with forcing ``M(eps)``."""

    composite: ComposedModulus
    a: float
    T: float
    perturbation: Callable[[float], float]

    def __call__(self, eps: float) -> float:
        if eps < 0:
            raise DomainError("Omega is defined for eps >= 0")
        if eps == 0:
            return 0.0
        return bihari_bound(self.composite, self.a, self.perturbation(eps), self.T)


def proof_perturbation(omega_V: ModulusSpec, eta_sup: float, lam: float):
    """Aggregate ``M(eps) = omega_V(|eta| eps) + omega_V(lam eps) + eps``.

    Each of the three perturbation sizes is bounded by their sum ``eps``.
    """
    def M(eps):
        return omega_V.value(eta_sup * eps) + omega_V.value(lam * eps) + eps
    return M


def stability_modulus(c: ComposedModulus, a: float, T: float, eta_sup: float | None = None,
                      perturbation: Callable[[float], float] | None = None) -> StabilityModulus:
    if not _osgood_cached(c):
        raise CertificationRefused("composite modulus is not Osgood")
    if perturbation is None:
        if eta_sup is None:
            perturbation = float
        else:
            perturbation = proof_perturbation(c.omega_V, eta_sup, c.lam)
    return StabilityModulus(c, float(a), float(T), perturbation)

