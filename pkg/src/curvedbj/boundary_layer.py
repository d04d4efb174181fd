"""Boundary-layer problem on the truncated strip and its decay constants.

The strip carries a prescribed jump K of the transformed normal stress
(G grad beta - F^{-1} omega)^T e2 across S. In the weak form the jump enters
as the surface source -int_S K . phi. The truncated strip has no-slip on the
inclusions and the bottom cut and a stress-free top cut. The pressure space is
P1 enriched by elementwise constants, so the discrete velocity is locally
mass-conservative and any constant pressure step across S is representable.

The problem is linear in K, so each slope value needs two canonical solves
(K = e1, K = e2) and every other K is a linear combination.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalQualityError
from .fem import QUAD4
from .mesh import ABOVE_S, InclusionSpec, PeriodicMesh, build_strip_mesh
from .stokes import InterfaceSource, MixedField, StokesSystem
from .transform import CurveSpec

CSV_HEADER = ["x1", "gprime", "Cbl1", "Cbl2", "Cbl_omega", "decay_rate", "R2", "truncation_delta"]


class TruncationError(NumericalQualityError):
    pass


def _combine(a: MixedField, b: MixedField, ca: float, cb: float) -> MixedField:
    p0 = ca * a.p0 + cb * b.p0
    return MixedField(a.space, ca * a.u + cb * b.u, ca * a.p + cb * b.p, p0, a.slope, a.gauge)


def plane_average(field: MixedField, y2: float, pressure: bool = False) -> np.ndarray | float:
    """int_0^1 of the velocity (or pressure) along y2 = const, solid parts counting as zero."""
    u_int, p_int, _ = field.line_integrals(y2)
    period = field.mesh.period["x"]
    return p_int / period if pressure else u_int / period


def _trace_above(field: MixedField, tag: str = "interface_S"):
    """Gauss points on S with weights, velocity and pressure taken from the elements above S."""
    pts, w, vel = field.trace_on(tag)
    mesh = field.mesh
    edges = mesh.boundary[tag]
    above = np.flatnonzero(mesh.region == ABOVE_S)
    key = {}
    for t in above:
        tri = mesh.triangles[t]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key[tuple(sorted((int(tri[a]), int(tri[b]))))] = t
    owner = np.array([key[tuple(sorted((int(a), int(b))))] for a, b in edges])
    n_g = len(pts) // len(edges)
    x, _ = np.polynomial.legendre.leggauss(n_g)
    s = 0.5 * (x + 1.0)
    # P1 part is continuous, evaluate along the edge; P0 part from the upper owner
    p1 = np.outer(field.p[edges[:, 0]], 1 - s) + np.outer(field.p[edges[:, 1]], s)
    p = p1 + (field.p0[owner][:, None] if field.p0 is not None else 0.0)
    return pts, w, vel, p.ravel()


@dataclass
class BoundaryLayerSolution:
    x1: float
    slope: float
    K: np.ndarray
    field: MixedField = field(repr=False)
    Cbl: np.ndarray = None
    Cbl_omega: float = 0.0
    kappa_inf: float = 0.0
    Cbl_omega_trace: float = 0.0
    decay_rate: float = math.inf
    goodness: float = 1.0
    truncation_delta: float = math.nan
    layer_norms: np.ndarray = None

    @property
    def normal_residual(self) -> float:
        """|C^bl . F^{-T} e2| relative to |C^bl| (absolute when C^bl vanishes)."""
        r = abs(self.Cbl[1] - self.slope * self.Cbl[0])
        n = float(np.linalg.norm(self.Cbl))
        return float(r / n) if n > 1e-12 else float(r)


class BoundaryLayerSolver:
    """Factorised strip problems, one per slope value, each with its two canonical solutions."""

    def __init__(self, strip: PeriodicMesh):
        if "interface_S" not in strip.boundary:
            raise ValueError("strip mesh has no interface S")
        self.strip = strip
        self._space = None
        self._canonical: dict[float, tuple[MixedField, MixedField]] = {}

    @classmethod
    def build(cls, inclusion: InclusionSpec, n_pore_layers: int = 6, top_height: float = 3.0, h: float = 0.05):
        return cls(build_strip_mesh(inclusion, n_pore_layers, top_height, h))

    def canonical(self, slope: float) -> tuple[MixedField, MixedField]:
        key = float(slope)
        if key not in self._canonical:
            system = StokesSystem(self.strip, key, ("pore", "bottom"), pressure="P1+P0", gauge="none",
                                  space=self._space)
            self._space = system.space
            zero = {"pore": 0.0, "bottom": 0.0}
            sols = tuple(system.solve(None, zero, InterfaceSource.constant(-e)) for e in np.eye(2))
            system.lu.release()
            self._canonical[key] = sols
        return self._canonical[key]

    def solve(self, x1: float, slope: float, K) -> BoundaryLayerSolution:
        K = np.asarray(K, dtype=float).reshape(2)
        a, b = self.canonical(slope)
        fld = _combine(a, b, K[0], K[1])
        fld.meta.update(x1=float(x1), slope=float(slope), K=K.tolist())
        sol = BoundaryLayerSolution(float(x1), float(slope), K, fld)
        sol.Cbl, sol.Cbl_omega, sol.kappa_inf, sol.Cbl_omega_trace = _constants(fld)
        sol.layer_norms = layer_gradient_norms(fld)
        sol.decay_rate, sol.goodness = _fit(sol.layer_norms, _zero_level(sol))
        return sol


def solve_bl(spec: CurveSpec, x1: float, Kbl, strip: PeriodicMesh) -> BoundaryLayerSolution:
    return BoundaryLayerSolver(strip).solve(x1, float(spec.dg(x1)), Kbl)


def _layer_of(mesh: PeriodicMesh) -> np.ndarray:
    """Pore layer index k = 1..n (y2 in (-k, -k+1)) per triangle, 0 above S."""
    cy = mesh.centroids()[:, 1]
    return np.where(cy < 0, np.ceil(-cy).astype(int), 0)


def band_mean_pressure(fld: MixedField, y_lo: float, y_hi: float) -> float:
    """Mean of the pressure over the triangles with centroid in the band y_lo < y2 < y_hi."""
    cy = fld.mesh.centroids()[:, 1]
    wq = fld.space.weights(QUAD4) * ((cy > y_lo) & (cy < y_hi))[:, None]
    return float(np.sum(wq * fld.pressure_q(QUAD4)) / np.sum(wq))


def _constants(fld: MixedField) -> tuple[np.ndarray, float, float, float]:
    """C^bl from the trace on S; omega levels above S and deep below S.

    The y1-average of omega is the same on every line y2 = a > 0, so the mean
    over the first free cell equals its limit at S from above. The discrete
    solution satisfies this band identity to roundoff, while the pointwise
    edge trace of the P1+P0 pressure is only first-order accurate.
    """
    _, w, vel, p = _trace_above(fld)
    length = w.sum()
    Cbl = (w[:, None] * vel).sum(axis=0) / length
    omega_trace = float(np.dot(w, p) / length)
    omega_plus = band_mean_pressure(fld, 0.0, 1.0)
    layer = _layer_of(fld.mesh)
    kappa = band_mean_pressure(fld, -float(layer.max()), -float(layer.max()) + 1.0)
    return Cbl, omega_plus - kappa, kappa, omega_trace - kappa


def decay_constants(sol: BoundaryLayerSolution) -> tuple[np.ndarray, float]:
    """(C^bl, C^bl_omega) read on S from the upper side, with the deep pressure level removed."""
    return sol.Cbl.copy(), sol.Cbl_omega


def far_field(sol: BoundaryLayerSolution, height: float | None = None) -> tuple[np.ndarray, float]:
    """Plane averages of velocity and (normalised) pressure at a height inside Z+."""
    top = sol.field.mesh.meta.get("top_height", 3.0)
    y2 = top - 1.0 if height is None else height
    return plane_average(sol.field, y2), plane_average(sol.field, y2, pressure=True) - sol.kappa_inf


def check_far_field(sol: BoundaryLayerSolution, truncation_delta: float) -> float:
    """Relative gap between the interface formula for C^bl and the far-field average."""
    vel, _ = far_field(sol)
    scale = max(float(np.linalg.norm(sol.Cbl)), 1e-300)
    gap = float(np.linalg.norm(vel - sol.Cbl) / scale)
    if np.linalg.norm(sol.Cbl) > 1e-12 and gap > 10 * max(truncation_delta, 1e-10):
        raise TruncationError(f"far-field average differs from interface value by {gap:.2e}; strip too shallow")
    return gap


def line_flux(fld: MixedField, y2: float, slope: float) -> float:
    """int_0^1 beta(y1, y2) . F^{-T} e2 dy1 along a horizontal line made of mesh edges."""
    mesh = fld.mesh
    edges = mesh.edges()
    tol = 1e-9
    on = np.abs(mesh.nodes[:, 1] - y2) < tol
    sel = edges[on[edges[:, 0]] & on[edges[:, 1]]]
    covered = np.sum(np.abs(mesh.nodes[sel[:, 1], 0] - mesh.nodes[sel[:, 0], 0]))
    if abs(covered - 1.0) > 1e-9:
        raise ValueError(f"the line y2 = {y2} is not resolved by mesh edges across the strip")
    _, w, v = fld.trace_on_edges(sel)
    return float(np.sum(w * (v[:, 1] - slope * v[:, 0])))


def layer_gradient_norms(fld: MixedField) -> np.ndarray:
    """||grad beta||_{L2(Z_k)} for the pore layers k = 1..n (top to bottom)."""
    layer = _layer_of(fld.mesh)
    g = fld.grad_q(QUAD4)
    dens = np.sum(fld.space.weights(QUAD4) * np.sum(g * g, axis=(-1, -2)), axis=1)
    n = layer.max()
    return np.sqrt(np.bincount(layer, dens, minlength=n + 1)[1:])


def _zero_level(sol: BoundaryLayerSolution) -> float:
    # layer norms below this are roundoff of a field with no decaying part
    return 1e-12 * float(np.linalg.norm(sol.K))


def _fit(norms: np.ndarray, zero: float = 0.0) -> tuple[float, float]:
    inner = np.asarray(norms[1:-1], dtype=float)
    if len(inner) < 2 or np.all(inner <= zero):
        return math.inf, 1.0
    if np.any(inner <= 0):
        return math.nan, 0.0
    if np.any(np.diff(inner) >= 0):
        warnings.warn("boundary-layer gradient norms are not monotone in depth", RuntimeWarning, stacklevel=3)
    k = np.arange(2, 2 + len(inner), dtype=float)
    y = np.log(inner)
    slope, icpt = np.polyfit(k, y, 1)
    resid = y - (slope * k + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(-slope), float(r2)


def decay_rate_fit(sol: BoundaryLayerSolution) -> tuple[float, float]:
    """Exponential rate of the pore-layer gradient norms, fitted without the first and last layer."""
    if sol.layer_norms is None or len(sol.layer_norms) < 4:
        raise ValueError("decay fit needs at least 4 pore layers")
    return _fit(sol.layer_norms, _zero_level(sol))


@dataclass
class TruncationRow:
    depth: int
    Cbl: np.ndarray
    Cbl_omega: float


def truncation_study(spec: CurveSpec, x1: float, Kbl, depths: Sequence[int], inclusion: InclusionSpec,
                     top_height: float = 3.0, h: float = 0.05) -> tuple[list[TruncationRow], float]:
    """C^bl for several strip depths; delta = |C(2d) - C(d)| / |C(2d)| on the deepest pair."""
    if not depths:
        raise ValueError("need at least one depth")
    slope = float(spec.dg(x1))
    rows = []
    for d in sorted(int(d) for d in depths):
        sol = BoundaryLayerSolver.build(inclusion, d, top_height, h).solve(x1, slope, Kbl)
        rows.append(TruncationRow(d, sol.Cbl, sol.Cbl_omega))
    return rows, truncation_delta(rows)


def truncation_delta(rows: Sequence[TruncationRow]) -> float:
    if len(rows) < 2:
        return math.nan
    a, b = rows[-2].Cbl, rows[-1].Cbl
    n = float(np.linalg.norm(b))
    return float(np.linalg.norm(b - a) / n) if n > 0 else 0.0


def write_csv(path, sols: Sequence[BoundaryLayerSolution]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for s in sols:
            wr.writerow([repr(float(v)) for v in (s.x1, s.slope, s.Cbl[0], s.Cbl[1], s.Cbl_omega,
                                                  s.decay_rate, s.goodness, s.truncation_delta)])
