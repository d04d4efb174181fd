"""Body forces from a fixed catalog, all smooth and L-periodic in x1.

``constant``: f = value.
``trig``: f = mean + amplitude * cos(2 pi mode x1 / L + phase).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BodyForce:
    kind: str = "constant"
    value: tuple[float, float] = (1.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    mode: int = 1
    phase: float = 0.0
    period_L: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "trig"):
            raise ValidationError(f"unknown force kind {self.kind!r}; expected 'constant' or 'trig'")
        if self.kind == "trig" and (int(self.mode) != self.mode or self.mode < 1):
            raise ValidationError("trig force needs a positive integer mode")

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.broadcast_to(np.asarray(self.value, float), pts.shape[:-1] + (2,)).copy()
        if self.kind == "trig":
            c = np.cos(2 * np.pi * self.mode * pts[..., 0] / self.period_L + self.phase)
            out += c[..., None] * np.asarray(self.amplitude, float)
        return out

    def is_zero(self) -> bool:
        return not np.any(self.value) and (self.kind == "constant" or not np.any(self.amplitude))

    def with_period(self, L: float) -> "BodyForce":
        return BodyForce(self.kind, self.value, self.amplitude, self.mode, self.phase, float(L))

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "value": list(map(float, self.value))}
        if self.kind == "trig":
            d.update(amplitude=list(map(float, self.amplitude)), mode=int(self.mode), phase=float(self.phase))
        return d

    @classmethod
    def from_dict(cls, d: dict, L: float = 1.0) -> "BodyForce":
        try:
            return cls(str(d.get("kind", "constant")), tuple(float(v) for v in d.get("value", (0.0, 0.0))),
                       tuple(float(v) for v in d.get("amplitude", (0.0, 0.0))), int(d.get("mode", 1)),
                       float(d.get("phase", 0.0)), float(L))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad force specification {d!r}: {exc}") from exc
