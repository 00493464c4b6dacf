"""Scenario documents: parsing, density recipes and validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ScenarioError, ValidationError
from .fields import VelocityFieldSpec, VelocityPreset
from .measures import DiscreteMeasureVec, Kernel, KernelVec
from .moduli import ModulusSpec

SCHEMA_VERSION = 1
RNG_ALGORITHM = "numpy.PCG64 via SeedSequence(seed).spawn(n_recipes)"
DENSITIES = ("uniform", "gaussian", "lattice")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """The full datum ``(T, d, k, V, eta, rho_bar)`` with declared moduli."""

    T: float
    d: int
    k: int
    velocity: VelocityFieldSpec
    kernels: KernelVec
    initial: DiscreteMeasureVec
    source: dict = field(default_factory=dict, repr=False)

    @property
    def omega_V(self) -> ModulusSpec:
        return self.velocity.modulus

    @property
    def omega_eta(self) -> ModulusSpec:
        return self.kernels.modulus

    def replace(self, **changes):
        return replace(self, **changes)

    def with_initial(self, initial: DiscreteMeasureVec):
        return replace(self, initial=initial)

    def to_dict(self):
        """Canonical document: presets in long form, initial datum expanded to atoms."""
        return {
            "schema": SCHEMA_VERSION,
            "T": self.T,
            "d": self.d,
            "k": self.k,
            "velocity": {
                "presets": [p.to_dict() for p in self.velocity.presets],
                "sup_bound": self.velocity.sup_bound,
                "modulus": self.velocity.modulus.to_dict(),
            },
            "kernels": {
                "matrix": [[e.to_dict() for e in row] for row in self.kernels.entries],
                "sup_bound": self.kernels.sup_bound,
                "modulus": self.kernels.modulus.to_dict(),
            },
            "initial": {"atoms": self.initial.to_atoms()},
        }


def load_scenario(path, sampled_checks: bool = True) -> ScenarioSpec:
    """Read and validate a scenario JSON file."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc, sampled_checks=sampled_checks)


def _require(doc, key, where):
    if key not in doc:
        raise ScenarioError(f"{where}: missing field {key!r}")
    return doc[key]


def _modulus(data, where):
    try:
        return ModulusSpec.from_dict(data)
    except (DomainError, KeyError, TypeError) as exc:
        raise ScenarioError(f"{where}: invalid modulus ({exc})") from exc


def _combine_natural(moduli):
    """Smallest common modulus of a list when all share one family, else None."""
    moduli = [m for m in moduli if m is not None]
    if not moduli:
        return None
    fam = {(m.family, m.alpha, m.r_max, m.extension) for m in moduli}
    if len(fam) != 1 or moduli[0].family == "tabulated":
        return None
    best = max(moduli, key=lambda m: m.scale)
    return best


def _parse_velocity(doc, d, k):
    where = "velocity"
    if "presets" in doc:
        entries = doc["presets"]
        if len(entries) != k:
            raise ValidationError(f"species-count: velocity lists {len(entries)} presets for k = {k}")
    else:
        entries = [{"family": _require(doc, "family", where), "params": doc.get("params", {})}] * k
    presets = []
    for i, e in enumerate(entries):
        try:
            presets.append(VelocityPreset(_require(e, "family", f"{where}[{i}]"), e.get("params", {}), d, k))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"{where}[{i}]: bad parameters ({exc})") from exc
    sup = doc.get("sup_bound")
    if sup is None:
        sup = max(p.sup() for p in presets)
        if not math.isfinite(sup):
            raise ScenarioError(f"{where}: sup_bound must be declared for unsaturated presets")
    if "modulus" in doc:
        mod = _modulus(doc["modulus"], where)
    else:
        mod = _combine_natural([p.natural_modulus() for p in presets])
        if mod is None:
            if all(p.family == "constant" for p in presets):
                mod = ModulusSpec.linear(1.0)
            else:
                raise ScenarioError(f"{where}: modulus must be declared for this preset mix")
    return VelocityFieldSpec(presets, float(sup), mod)


def _parse_kernels(doc, k, d):
    where = "kernels"
    try:
        if "matrix" in doc:
            rows = doc["matrix"]
            if len(rows) != k or any(len(r) != k for r in rows):
                raise ValidationError(f"shape: kernel matrix must be {k} x {k}")
            entries = [[Kernel.from_dict(e) for e in row] for row in rows]
        else:
            ker = Kernel.from_dict({"family": _require(doc, "family", where), "params": doc.get("params", {}),
                                    "axis": doc.get("axis", 0)})
            entries = [[ker] * k for _ in range(k)]
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"{where}: bad parameters ({exc})") from exc
    for row in entries:
        for e in row:
            if e.axis >= d:
                raise ValidationError(f"dimension: kernel axis {e.axis} outside R^{d}")
    flat = [e for row in entries for e in row]
    sup = doc.get("sup_bound", max(e.sup() for e in flat))
    if "modulus" in doc:
        mod = _modulus(doc["modulus"], where)
    else:
        nats = [e.natural_modulus() for e in flat]
        if all(m.family == "tabulated" for m in nats):
            mod = nats[0]
        else:
            mod = _combine_natural([m for m in nats if m.family != "tabulated"])
            if mod is None:
                raise ScenarioError(f"{where}: modulus must be declared for this kernel mix")
    return KernelVec(entries, mod, float(sup))


def expand_recipes(recipes, k, d, seed):
    """Expand density recipes into atoms, one spawned PCG64 stream per recipe."""
    streams = np.random.SeedSequence(int(seed)).spawn(len(recipes))
    pos = [[] for _ in range(k)]
    wts = [[] for _ in range(k)]
    for r, (rec, ss) in enumerate(zip(recipes, streams)):
        rng = np.random.Generator(np.random.PCG64(ss))
        i = int(rec.get("species", 0))
        if not 0 <= i < k:
            raise ValidationError(f"species-index: recipe {r} names species {i} outside 0..{k - 1}")
        n = int(_require(rec, "n", f"initial.recipes[{r}]"))
        mass = float(rec.get("mass", 1.0))
        if n < 1:
            raise ValidationError(f"atom-count: recipe {r} needs n >= 1")
        if mass < 0:
            raise ValidationError(f"nonnegativity: recipe {r} has negative mass")
        dens = rec.get("density", "uniform")
        if dens == "uniform":
            box = np.asarray(rec.get("box", [[-1.0, 1.0]] * d), dtype=float).reshape(d, 2)
            p = box[:, 0] + rng.random((n, d)) * (box[:, 1] - box[:, 0])
        elif dens == "gaussian":
            center = np.asarray(rec.get("center", np.zeros(d)), dtype=float).reshape(d)
            p = center + float(rec.get("sigma", 1.0)) * rng.standard_normal((n, d))
        elif dens == "lattice":
            box = np.asarray(rec.get("box", [[-1.0, 1.0]] * d), dtype=float).reshape(d, 2)
            m = round(n ** (1.0 / d))
            if m ** d != n:
                raise ValidationError(f"atom-count: lattice recipe {r} needs n to be a perfect {d}-th power")
            axes = [lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in box]
            p = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(n, d)
        else:
            raise ScenarioError(f"initial.recipes[{r}]: unknown density {dens!r}")
        pos[i].append(p)
        wts[i].append(np.full(n, mass / n))
    return DiscreteMeasureVec(
        [np.vstack(p) if p else np.zeros((0, d)) for p in pos],
        [np.concatenate(w) if w else np.zeros(0) for w in wts],
        d=d,
    )


def parse_scenario(doc: dict, sampled_checks: bool = True) -> ScenarioSpec:
    """Build a ScenarioSpec from a decoded document, collecting every violated invariant."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {schema!r}")
    violations = []
    T = float(_require(doc, "T", "scenario"))
    d = int(_require(doc, "d", "scenario"))
    k = int(_require(doc, "k", "scenario"))
    if not (T > 0 and math.isfinite(T)):
        violations.append(f"horizon: T must be positive and finite, got {T}")
    if d < 1:
        violations.append(f"dimension: d must be >= 1, got {d}")
    if k < 1:
        violations.append(f"species-count: k must be >= 1, got {k}")
    if violations:
        raise ValidationError(violations)

    velocity = kernels = initial = None
    for name, build in (
        ("velocity", lambda: _parse_velocity(_require(doc, "velocity", "scenario"), d, k)),
        ("kernels", lambda: _parse_kernels(_require(doc, "kernels", "scenario"), k, d)),
        ("initial", lambda: _parse_initial(_require(doc, "initial", "scenario"), k, d)),
    ):
        try:
            obj = build()
        except ValidationError as exc:
            violations.extend(exc.violations)
            continue
        if name == "velocity":
            velocity = obj
        elif name == "kernels":
            kernels = obj
        else:
            initial = obj

    if velocity is not None:
        violations += [f"omega_V {v}" for v in velocity.modulus.validate()]
    if kernels is not None:
        violations += [f"omega_eta {v}" for v in kernels.modulus.validate(require_positive=False)]
    if sampled_checks and velocity is not None and kernels is not None and initial is not None:
        from .measures import tv_norm

        reach = max(tv_norm(initial)[1] * kernels.sup_bound, 1e-3)
        violations += velocity.validate(u_box=[[-reach, reach]] * k, T=T)
        violations += kernels.validate(d)
    if violations:
        raise ValidationError(violations)
    return ScenarioSpec(T=T, d=d, k=k, velocity=velocity, kernels=kernels, initial=initial, source=doc)


def _parse_initial(doc, k, d):
    if "atoms" in doc:
        return DiscreteMeasureVec.from_atoms(doc["atoms"], k, d)
    if "recipes" in doc:
        return expand_recipes(doc["recipes"], k, d, doc.get("seed", 0))
    raise ScenarioError("initial: expected 'atoms' or 'recipes'")
