"""Atomic vectors of nonnegative measures and convolution kernels acting on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _pairwise
from .errors import ScenarioError, ValidationError
from .moduli import ModulusSpec

__all__ = [
    "DiscreteMeasureVec",
    "Kernel",
    "MollifiedKernel",
    "KernelVec",
    "tv_norm",
    "convolve",
    "convolve_at",
    "pushforward",
    "atomic_tv_distance",
]


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class DiscreteMeasureVec:
    """A k-vector of atomic nonnegative measures on R^d.

    Species ``i`` is the measure ``sum_a weights[i][a] * delta_{positions[i][a]}``.
    Arrays are copied and made read-only on construction.
    """

    __slots__ = ("positions", "weights", "d")

    def __init__(self, positions: Sequence, weights: Sequence, d: int | None = None):
        if len(positions) != len(weights):
            raise ValidationError("species-count: positions and weights differ in length")
        if len(positions) == 0:
            raise ValidationError("species-count: k must be at least 1")
        pos, wts = [], []
        for i, (p, w) in enumerate(zip(positions, weights)):
            w = np.asarray(w, dtype=float).reshape(-1)
            p = np.asarray(p, dtype=float)
            if p.size == 0:
                p = p.reshape(0, d if d is not None else 1)
            if p.ndim == 1:
                p = p.reshape(len(w), -1) if len(w) else p.reshape(0, d or 1)
            if d is None:
                d = p.shape[1]
            if p.shape != (len(w), d):
                raise ValidationError(f"shape: species {i} positions {p.shape} vs {len(w)} weights in R^{d}")
            if not np.all(np.isfinite(w)) or not np.all(np.isfinite(p)):
                raise ValidationError(f"finite: species {i} carries non-finite data")
            if np.any(w < 0):
                raise ValidationError(f"nonnegativity: species {i} has a negative weight")
            pos.append(_frozen(p))
            wts.append(_frozen(w))
        self.positions = tuple(pos)
        self.weights = tuple(wts)
        self.d = int(d)

    @property
    def k(self):
        return len(self.weights)

    def counts(self):
        return [len(w) for w in self.weights]

    @classmethod
    def empty(cls, k=1, d=1):
        return cls([np.zeros((0, d))] * k, [np.zeros(0)] * k, d=d)

    @classmethod
    def from_atoms(cls, atoms, k, d):
        """Build from records ``{"species": i, "pos": [...], "w": float}``."""
        pos = [[] for _ in range(k)]
        wts = [[] for _ in range(k)]
        for rec in atoms:
            i = int(rec["species"])
            if not 0 <= i < k:
                raise ValidationError(f"species-index: atom species {i} outside 0..{k - 1}")
            p = rec["pos"]
            p = [float(p)] if np.isscalar(p) else [float(x) for x in p]
            if len(p) != d:
                raise ValidationError(f"dimension: atom position {p} is not in R^{d}")
            pos[i].append(p)
            wts[i].append(float(rec["w"]))
        return cls([np.array(p, dtype=float).reshape(-1, d) for p in pos], wts, d=d)

    def to_atoms(self):
        return [
            {"species": i, "pos": [float(x) for x in p], "w": float(w)}
            for i in range(self.k)
            for p, w in zip(self.positions[i], self.weights[i])
        ]

    def union(self, other):
        """Disjoint sum of two measures (atoms concatenated species-wise)."""
        _check_compatible(self, other)
        return DiscreteMeasureVec(
            [np.vstack([a, b]) for a, b in zip(self.positions, other.positions)],
            [np.concatenate([a, b]) for a, b in zip(self.weights, other.weights)],
            d=self.d,
        )

    def with_positions(self, positions):
        """Same weights (shared, not copied) at new positions."""
        out = object.__new__(DiscreteMeasureVec)
        out.positions = tuple(_frozen(p) for p in positions)
        out.weights = self.weights
        out.d = self.d
        return out

    def __repr__(self):
        return f"DiscreteMeasureVec(k={self.k}, d={self.d}, atoms={self.counts()})"


def _check_compatible(m1, m2):
    if m1.k != m2.k or m1.d != m2.d:
        raise ValidationError(f"shape: measures live in different spaces (k,d)={m1.k, m1.d} vs {m2.k, m2.d}")


def tv_norm(m: DiscreteMeasureVec):
    """Total variation per species and in total (1-norm over species)."""
    per = np.array([math.fsum(w) for w in m.weights])
    return per, math.fsum(per)


# -- kernels ----------------------------------------------------------------

_KERNEL_FAMILIES = {
    "zero": (_pairwise.ZERO, ()),
    "hat": (_pairwise.HAT, ("height", "width")),
    "gaussian": (_pairwise.GAUSSIAN, ("height", "sigma")),
    "bump": (_pairwise.BUMP, ("height", "radius")),
    "odd_gauss": (_pairwise.ODD_GAUSS, ("height", "sigma")),
    "loglip": (_pairwise.LOGLIP, ("height",)),
    "cusp": (_pairwise.CUSP, ("height", "width")),
}


class Kernel:
    """A radial (or, for ``odd_gauss``, axis-odd) convolution kernel on R^d.

    ========= ============================================ =====================
    family    eta(z)                                       natural modulus
    ========= ============================================ =====================
    hat       h max(0, 1 - |z|/a)                          linear(h/a)
    gaussian  h exp(-|z|^2 / 2s^2)                         linear(h/(s sqrt e))
    bump      h (1 - |z|^2/a^2)^4 on |z| < a               linear(h c/a)
    odd_gauss h (z_axis/s) exp(-|z|^2 / 2s^2)              linear(h/s)
    loglip    h (1 - |z| (1 - log|z|)) on |z| < 1          loglinear(3h)
    cusp      h max(0, 1 - sqrt(|z|/a))                    power(1/2, h/sqrt a)
    zero      0                                            zero
    ========= ============================================ =====================

    Kernels are time independent; the ``t`` argument is accepted for interface
    uniformity.
    """

    def __init__(self, family, axis=0, **params):
        if family not in _KERNEL_FAMILIES:
            raise ScenarioError(f"unknown kernel preset {family!r}")
        code, names = _KERNEL_FAMILIES[family]
        missing = [n for n in names if n not in params]
        if missing:
            raise ScenarioError(f"kernel {family!r} missing parameters {missing}")
        extra = set(params) - set(names)
        if extra:
            raise ScenarioError(f"kernel {family!r} got unknown parameters {sorted(extra)}")
        vals = {n: float(params[n]) for n in names}
        for n, v in vals.items():
            if n != "height" and not v > 0:
                raise ScenarioError(f"kernel {family!r}: {n} must be positive")
        self.family = family
        self.params = vals
        self.axis = int(axis)
        self.code = code
        self.param_array = np.array(
            [vals.get("height", 0.0), vals.get(names[1], 1.0) if len(names) > 1 else 1.0, float(axis)]
        )

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        fam = data.get("family")
        return cls(fam, axis=data.get("axis", 0), **data.get("params", {}))

    def to_dict(self):
        out = {"family": self.family, "params": dict(self.params)}
        if self.family == "odd_gauss" and self.axis:
            out["axis"] = self.axis
        return out

    def __eq__(self, other):
        return isinstance(other, Kernel) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.family, tuple(sorted(self.params.items())), self.axis))

    def __repr__(self):
        return f"Kernel({self.family!r}, {self.params})"

    @property
    def height(self):
        return self.params.get("height", 0.0)

    def __call__(self, z, t=0.0):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        r2 = np.einsum("nd,nd->n", z, z)
        h = self.height
        fam = self.family
        if fam == "zero":
            return np.zeros(len(z))
        if fam == "hat":
            return h * np.maximum(0.0, 1.0 - np.sqrt(r2) / self.params["width"])
        if fam == "gaussian":
            s = self.params["sigma"]
            return h * np.exp(-0.5 * r2 / (s * s))
        if fam == "bump":
            q = r2 / self.params["radius"] ** 2
            return np.where(q < 1.0, h * np.clip(1.0 - q, 0.0, None) ** 4, 0.0)
        if fam == "odd_gauss":
            s = self.params["sigma"]
            return h * (z[:, self.axis] / s) * np.exp(-0.5 * r2 / (s * s))
        if fam == "loglip":
            r = np.sqrt(r2)
            with np.errstate(divide="ignore", invalid="ignore"):
                inner = np.where(r > 0, r * (1.0 - np.log(np.where(r > 0, r, 1.0))), 0.0)
            return np.where(r < 1.0, h * (1.0 - inner), 0.0)
        r = np.sqrt(r2)
        return h * np.maximum(0.0, 1.0 - np.sqrt(r / self.params["width"]))

    def sup(self):
        """Closed-form ``sup |eta|``."""
        if self.family == "zero":
            return 0.0
        if self.family == "odd_gauss":
            return abs(self.height) * math.exp(-0.5)
        return abs(self.height)

    def natural_modulus(self):
        h = abs(self.height)
        fam = self.family
        if fam == "zero" or h == 0:
            return ModulusSpec.zero()
        if fam == "hat":
            return ModulusSpec.linear(h / self.params["width"])
        if fam == "gaussian":
            return ModulusSpec.linear(h / (self.params["sigma"] * math.sqrt(math.e)))
        if fam == "bump":
            # max of 8 s (1 - s^2)^3 at s = 1/sqrt(7)
            return ModulusSpec.linear(h * 8 / math.sqrt(7) * (6 / 7) ** 3 / self.params["radius"])
        if fam == "odd_gauss":
            return ModulusSpec.linear(h / self.params["sigma"])
        if fam == "loglip":
            return ModulusSpec.loglinear(3.0 * h, extension="constant")
        return ModulusSpec.power(0.5, h / math.sqrt(self.params["width"]))

    def pair_sum(self, points, atoms, weights, backend="numba"):
        """``out[a] = sum_b w[b] eta(points[a] - atoms[b])``."""
        points = np.ascontiguousarray(points, dtype=float)
        atoms = np.ascontiguousarray(atoms, dtype=float)
        weights = np.ascontiguousarray(weights, dtype=float)
        if backend == "numba":
            return _pairwise.pair_sum(points, atoms, weights, self.code, self.param_array)
        out = np.zeros(len(points))
        for start in range(0, len(points), 256):
            blk = points[start:start + 256]
            z = (blk[:, None, :] - atoms[None, :, :]).reshape(-1, points.shape[1])
            vals = self(z).reshape(len(blk), len(atoms))
            out[start:start + 256] = vals @ weights
        return out


class MollifiedKernel:
    """``eta_eps(z) = sum_n c_n eta(z - eps xi_n)`` for a unit-mass node set ``(xi_n, c_n)``."""

    def __init__(self, base: Kernel, offsets, coeffs):
        self.base = base
        self.offsets = np.asarray(offsets, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.family = f"mollified:{base.family}"

    def __call__(self, z, t=0.0):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return sum(c * self.base(z - off) for off, c in zip(self.offsets, self.coeffs))

    def sup(self):
        return self.base.sup()

    def natural_modulus(self):
        return self.base.natural_modulus()

    def pair_sum(self, points, atoms, weights, backend="numba"):
        points = np.asarray(points, dtype=float)
        total = np.zeros(len(points))
        for off, c in zip(self.offsets, self.coeffs):
            total += c * self.base.pair_sum(points - off, atoms, weights, backend)
        return total

    def to_dict(self):
        return {"family": self.family, "base": self.base.to_dict(), "nodes": len(self.coeffs)}


@dataclass(frozen=True, eq=False)
class KernelVec:
    """The k x k matrix of kernels ``eta^{i,j}`` with a shared declared modulus and sup bound."""

    entries: tuple
    modulus: ModulusSpec
    sup_bound: float

    def __post_init__(self):
        entries = tuple(tuple(row) for row in self.entries)
        k = len(entries)
        if k == 0 or any(len(row) != k for row in entries):
            raise ValidationError("shape: kernel matrix must be k x k")
        object.__setattr__(self, "entries", entries)
        if not (self.sup_bound >= 0 and math.isfinite(self.sup_bound)):
            raise ValidationError("sup-bound: kernel sup bound must be finite and nonnegative")

    @property
    def k(self):
        return len(self.entries)

    @classmethod
    def uniform(cls, kernel, k, modulus=None, sup_bound=None):
        """Same kernel in every entry; declared data default to the kernel's closed forms."""
        return cls(
            tuple(tuple(kernel for _ in range(k)) for _ in range(k)),
            modulus if modulus is not None else kernel.natural_modulus(),
            sup_bound if sup_bound is not None else kernel.sup(),
        )

    def __call__(self, i, j, z, t=0.0):
        return self.entries[i][j](z, t)

    def validate(self, d, box=None, n=2000, seed=0, tol=1e-9):
        """Sampled check of the sup bound and of the declared modulus; returns violations."""
        rng = np.random.default_rng(seed)
        lo, hi = _box_arrays(box, d, default=4.0)
        violations = []
        for i, row in enumerate(self.entries):
            for j, ker in enumerate(row):
                x = rng.uniform(lo, hi, size=(n, d))
                y = _nearby(rng, x, lo, hi)
                ex, ey = ker(x), ker(y)
                if np.any(np.abs(ex) > self.sup_bound + tol):
                    violations.append(f"sup-bound: kernel ({i},{j}) exceeds {self.sup_bound}")
                dist = np.linalg.norm(x - y, axis=1)
                if np.any(np.abs(ex - ey) > self.modulus(dist) + tol):
                    violations.append(f"modulus: kernel ({i},{j}) violates the declared omega_eta")
        return violations


def _box_arrays(box, d, default=1.0):
    if box is None:
        return np.full(d, -default), np.full(d, default)
    box = np.asarray(box, dtype=float).reshape(d, 2)
    return box[:, 0], box[:, 1]


def _nearby(rng, x, lo, hi):
    """Partner points: half uniform in the box, half at log-spread distances."""
    n, d = x.shape
    y = rng.uniform(lo, hi, size=(n, d))
    half = n // 2
    direction = rng.normal(size=(half, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = 10.0 ** rng.uniform(-8, 0, size=(half, 1))
    y[:half] = x[:half] + radius * direction
    return y


def convolve(m: DiscreteMeasureVec, kv: KernelVec, i: int, points, t=0.0, backend="numba"):
    """Rows ``(rho * eta^i)(x)`` for every evaluation point; shape ``(n, k)``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((len(points), m.k))
    row = kv.entries[i]
    for j in range(m.k):
        if len(m.weights[j]):
            out[:, j] = row[j].pair_sum(points, m.positions[j], m.weights[j], backend)
    return out


def convolve_at(m: DiscreteMeasureVec, kv: KernelVec, i: int, x, t=0.0):
    """``(rho * eta^i)(t, x) in R^k``, exact for atomic measures."""
    return convolve(m, kv, i, np.asarray(x, dtype=float).reshape(1, m.d), t)[0]


def pushforward(m: DiscreteMeasureVec, maps) -> DiscreteMeasureVec:
    """Image measure: positions mapped species-wise, weights untouched.

    ``maps`` is either one callable applied to every species or a sequence of k
    callables; each takes an ``(n, d)`` array and returns one of the same shape.
    """
    if callable(maps):
        maps = [maps] * m.k
    new = []
    for f, p in zip(maps, m.positions):
        q = np.asarray(f(np.array(p)), dtype=float).reshape(p.shape)
        new.append(q)
    return m.with_positions(new)


def _aggregate(pos, w):
    if len(w) == 0:
        return pos, w
    uniq, inv = np.unique(pos, axis=0, return_inverse=True)
    agg = np.zeros(len(uniq))
    np.add.at(agg, inv.reshape(-1), w)
    return uniq, agg


def atomic_tv_distance(m1: DiscreteMeasureVec, m2: DiscreteMeasureVec, match_tol: float = 0.0) -> float:
    """Total variation distance between atomic measures.

    Coincident atoms inside each measure are merged first.  Atoms of m1 and m2
    closer than ``match_tol`` are then paired greedily by increasing distance;
    paired atoms contribute ``|w1 - w2|`` and unpaired atoms their full weight.
    With ``match_tol = 0`` this is the exact total variation.
    """
    _check_compatible(m1, m2)
    total = []
    for p1, w1, p2, w2 in zip(m1.positions, m1.weights, m2.positions, m2.weights):
        p1, w1 = _aggregate(p1, w1)
        p2, w2 = _aggregate(p2, w2)
        if len(w1) == 0 or len(w2) == 0:
            total.extend(w1)
            total.extend(w2)
            continue
        dist = np.sqrt(((p1[:, None, :] - p2[None, :, :]) ** 2).sum(axis=2))
        a_idx, b_idx = np.nonzero(dist <= match_tol)
        order = np.argsort(dist[a_idx, b_idx], kind="stable")
        used1 = np.zeros(len(w1), bool)
        used2 = np.zeros(len(w2), bool)
        for a, b in zip(a_idx[order], b_idx[order]):
            if used1[a] or used2[b]:
                continue
            used1[a] = used2[b] = True
            total.append(abs(w1[a] - w2[b]))
        total.extend(w1[~used1])
        total.extend(w2[~used2])
    return math.fsum(total)

