"""Workbench configuration: a versioned JSON document with validation.

Every section is optional; missing entries take the defaults below. Unknown
keys are rejected so that typos do not silently fall back to defaults. Scales
may be written as numbers or as fraction strings such as "1/16".
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .errors import ValidationError
from .forces import BodyForce
from .mesh import InclusionSpec
from .transform import CurveSpec

SCHEMA_VERSION = 1

STAGES = ("transform", "cell", "u0", "bl", "effective", "dns", "sweep")

# config sections each stage reads, directly or through an upstream stage
STAGE_INPUTS = {
    "transform": ("curve", "box.L", "tolerances"),
    "cell": ("curve", "box.L", "inclusion", "discretization.h_cell", "sampling", "tolerances"),
    "u0": ("curve", "box.L", "box.h_free", "force", "discretization.h_macro", "sampling"),
    "bl": ("curve", "box.L", "box.h_free", "force", "discretization.h_macro", "sampling", "inclusion",
           "discretization.h_strip", "strip", "tolerances"),
}
STAGE_INPUTS["effective"] = tuple(dict.fromkeys(
    STAGE_INPUTS["cell"] + STAGE_INPUTS["bl"] + ("box.K_depth", "sweep")))
STAGE_INPUTS["dns"] = STAGE_INPUTS["effective"] + ("discretization.h_micro_per_pore",)
STAGE_INPUTS["sweep"] = STAGE_INPUTS["dns"]


def _scale(v, what: str) -> float:
    try:
        x = float(Fraction(v)) if isinstance(v, str) else float(v)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"{what}: cannot read {v!r} as a number") from exc
    if not x > 0:
        raise ValidationError(f"{what} must be positive, got {v!r}")
    return x


def _is_multiple(a: float, b: float) -> bool:
    n = a / b
    return round(n) >= 1 and abs(n - round(n)) <= 1e-9 * max(1.0, n)


@dataclass(frozen=True)
class Box:
    L: float = 1.0
    h_free: float = 1.0
    K_depth: float = 1.0


@dataclass(frozen=True)
class Discretization:
    """Edge lengths: cell and strip in cell units, macro in physical units,
    microscale per eps-cell."""

    h_cell: float = 1.0 / 12
    h_strip: float = 1.0 / 12
    h_macro: float = 1.0 / 64
    h_micro_per_pore: float = 1.0 / 12


@dataclass(frozen=True)
class StripParams:
    n_pore_layers: int = 6
    top_height: float = 3.0


@dataclass(frozen=True)
class Tolerances:
    transform_identity: float = 1e-10
    symmetry: float = 1e-8
    compatibility: float = 1e-6
    slip: float = 1e-8


@dataclass(frozen=True)
class WorkbenchConfig:
    curve: CurveSpec = field(default_factory=lambda: CurveSpec(1.0, (), (0.1,)))
    inclusion: InclusionSpec = field(default_factory=InclusionSpec)
    box: Box = field(default_factory=Box)
    force: BodyForce = field(default_factory=BodyForce)
    discretization: Discretization = field(default_factory=Discretization)
    strip: StripParams = field(default_factory=StripParams)
    x1_points: int = 16
    eps_list: tuple[float, ...] = (0.25, 0.125, 0.0625)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        b = self.box
        for name in ("L", "h_free", "K_depth"):
            _scale(getattr(b, name), f"box.{name}")
        for name, v in asdict(self.discretization).items():
            _scale(v, f"discretization.{name}")
        for name, v in asdict(self.tolerances).items():
            _scale(v, f"tolerances.{name}")
        if abs(self.curve.period_L - b.L) > 1e-12 * b.L:
            raise ValidationError(f"curve period {self.curve.period_L} differs from box.L {b.L}")
        if self.x1_points < 4:
            raise ValidationError(f"sampling.x1_points must be at least 4, got {self.x1_points}")
        if self.strip.n_pore_layers < 4:
            raise ValidationError("strip.n_pore_layers must be at least 4 for the decay fit")
        if self.strip.top_height < 2:
            raise ValidationError("strip.top_height must be at least 2")
        if not self.eps_list:
            raise ValidationError("sweep.eps_list is empty")
        if any(e2 >= e1 for e1, e2 in zip(self.eps_list, self.eps_list[1:])):
            raise ValidationError(f"sweep.eps_list must be strictly decreasing, got {list(self.eps_list)}")
        for e in self.eps_list:
            _scale(e, "sweep.eps_list entry")
            if not _is_multiple(b.L, e):
                raise ValidationError(f"L/eps = {b.L / e:g} is not an integer for eps = {e:g}")
            if not _is_multiple(b.K_depth, e):
                raise ValidationError(f"K_depth/eps = {b.K_depth / e:g} is not an integer for eps = {e:g}")
            if b.h_free < e - 1e-12:
                raise ValidationError(f"h_free = {b.h_free:g} is below one cell height for eps = {e:g}")

    # -- variants used by CLI flags

    def fine(self) -> "WorkbenchConfig":
        d = self.discretization
        return replace(self, discretization=Discretization(*(0.5 * v for v in asdict(d).values())))

    def deep_strip(self) -> "WorkbenchConfig":
        s = self.strip
        return replace(self, strip=StripParams(2 * s.n_pore_layers, 2 * s.top_height))

    # -- serialisation

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "curve": {"cos": list(self.curve.fourier_cos), "sin": list(self.curve.fourier_sin)},
            "inclusion": self.inclusion.to_dict(),
            "box": asdict(self.box),
            "force": self.force.to_dict(),
            "discretization": asdict(self.discretization),
            "strip": asdict(self.strip),
            "sampling": {"x1_points": self.x1_points},
            "sweep": {"eps_list": list(self.eps_list)},
            "tolerances": asdict(self.tolerances),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorkbenchConfig":
        if not isinstance(data, dict):
            raise ValidationError("configuration must be a JSON object")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version!r}; this build reads {SCHEMA_VERSION}")
        known = {"schema_version", "curve", "inclusion", "box", "force", "discretization", "strip", "sampling",
                 "sweep", "tolerances"}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown configuration sections: {sorted(extra)}")

        def section(name: str, allowed) -> dict:
            sec = data.get(name, {})
            if not isinstance(sec, dict):
                raise ValidationError(f"section {name!r} must be an object")
            bad = set(sec) - set(allowed)
            if bad:
                raise ValidationError(f"unknown keys in {name!r}: {sorted(bad)}")
            return sec

        try:
            box = Box(**{k: _scale(v, f"box.{k}") for k, v in section("box", ("L", "h_free", "K_depth")).items()})
            # the default curve applies only when the section is absent altogether
            cv = section("curve", ("cos", "sin")) if "curve" in data else {"sin": (0.1,)}
            curve = CurveSpec(box.L, tuple(float(a) for a in cv.get("cos", ())),
                              tuple(float(b) for b in cv.get("sin", ())))
            inclusion = InclusionSpec.from_dict(section("inclusion", ("kind", "center", "radius", "modes")))
            force = BodyForce.from_dict(section("force", ("kind", "value", "amplitude", "mode", "phase"))
                                        or BodyForce().to_dict(), box.L)
            disc = Discretization(**{k: _scale(v, f"discretization.{k}")
                                     for k, v in section("discretization", Discretization.__dataclass_fields__).items()})
            st = section("strip", ("n_pore_layers", "top_height"))
            strip = StripParams(int(st.get("n_pore_layers", 6)), float(st.get("top_height", 3.0)))
            x1_points = int(section("sampling", ("x1_points",)).get("x1_points", 16))
            sw = section("sweep", ("eps_list",))
            eps = tuple(_scale(e, "sweep.eps_list entry") for e in sw.get("eps_list", (0.25, 0.125, 0.0625)))
            tol = Tolerances(**{k: float(v) for k, v in section("tolerances", Tolerances.__dataclass_fields__).items()})
        except ValidationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed configuration: {exc}") from exc
        return cls(curve, inclusion, box, force, disc, strip, x1_points, eps, tol)

    @classmethod
    def load(cls, path) -> "WorkbenchConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read configuration {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"configuration {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    # -- caching

    def subset(self, stage: str) -> dict:
        """The part of the configuration a stage depends on."""
        if stage not in STAGE_INPUTS:
            raise ValueError(f"unknown stage {stage!r}")
        full = self.to_dict()
        full["sampling"] = {"x1_points": self.x1_points}
        out = {}
        for key in STAGE_INPUTS[stage]:
            sec, _, sub = key.partition(".")
            out[key] = full[sec][sub] if sub else full[sec]
        return out

    def stage_hash(self, stage: str) -> str:
        blob = json.dumps({"schema_version": SCHEMA_VERSION, "stage": stage, "inputs": self.subset(stage)},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()
