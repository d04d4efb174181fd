"""Direct microscale simulation on the eps-periodic composite domain and the
error norms comparing it with the effective model.

The microscale field is compared with the effective one on the free-fluid part
Omega_1 of the eps-mesh: the effective velocity and pressure are interpolated
at the nodes of that submesh and every norm is evaluated there.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .effective import EffectiveSolution, mass_flow
from .errors import ValidationError
from .fem import QUAD4, P2Space
from .mesh import ABOVE_S, BELOW_S, InclusionSpec, MeshConfigError, PeriodicMesh, build_eps_mesh, n_cells_across
from .stokes import MixedField, StokesSystem, trace_fourier_norm
from .transform import CurveSpec

MIN_PORE_RESOLUTION = 8.0

RECORD_KEYS = (
    "err_u_L2_O1", "err_u_H12_O1", "err_p_L1_O1", "err_gradu_L1_O1", "err_weighted_grad", "err_weighted_p",
    "err_u_L2_Sigma", "err_u_Hm12_Sigma", "err_p_Hm12_Sigma", "err_p_Hm12_Sigma_peff", "u_L2_O2eps",
    "M_eps", "M_eff", "err_M", "porous_ratio", "darcy_gap",
)
# quantities whose decay in eps is fitted
RATE_KEYS = (
    "err_u_L2_O1", "err_u_H12_O1", "err_p_L1_O1", "err_gradu_L1_O1", "err_weighted_grad", "err_weighted_p",
    "err_u_L2_Sigma", "err_u_Hm12_Sigma", "err_p_Hm12_Sigma", "err_p_Hm12_Sigma_peff", "err_M", "darcy_gap",
)


@dataclass(frozen=True)
class EpsMeshParams:
    """Geometry and resolution of the composite domain.

    ``h`` is the edge length relative to one eps-cell; ``h_macro`` the largest
    edge length (physical units) in the free fluid, None for the mesher default.
    """

    inclusion: InclusionSpec
    L: float = 1.0
    h_free: float = 1.0
    K_depth: float = 1.0
    h: float = 1.0 / 12
    h_macro: float | None = None

    def mesh(self, eps: float) -> PeriodicMesh:
        return build_eps_mesh(self.inclusion, eps, self.L, self.h_free, self.K_depth, self.h, self.h_macro)


class UnderResolvedWarning(UserWarning):
    pass


def pore_resolution(mesh: PeriodicMesh, inclusion: InclusionSpec) -> float:
    """Inclusion diameter divided by the mean edge length on the pore boundaries (inf without pores)."""
    edges = mesh.boundary.get("pore")
    if edges is None or len(edges) == 0:
        return math.inf
    theta = np.linspace(0.0, 2 * np.pi, 721)
    diameter = 2.0 * float(np.max(inclusion.radial(theta))) * mesh.cell_size
    lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    return diameter / float(lengths.mean())


def solve_eps_problem(spec: CurveSpec, f, eps: float, params: EpsMeshParams,
                      mesh: PeriodicMesh | None = None) -> MixedField:
    """Transformed Stokes on the composite domain with no-slip on pores and outer walls.

    The pressure is shifted to zero mean over Omega_1, the normalisation the
    effective pressure uses.
    """
    t0 = time.perf_counter()
    mesh = mesh if mesh is not None else params.mesh(eps)
    res = pore_resolution(mesh, params.inclusion)
    if res < MIN_PORE_RESOLUTION:
        warnings.warn(f"eps={eps:g}: {res:.1f} elements per inclusion diameter on the pore boundary, "
                      f"below {MIN_PORE_RESOLUTION:g}; refine h (currently {params.h:g} per cell)",
                      UnderResolvedWarning, stacklevel=2)
    tags = [t for t in ("pore", "bottom", "top") if t in mesh.boundary]
    system = StokesSystem(mesh, spec, tags, gauge="mean")
    sol = system.solve(f, {t: 0.0 for t in tags})
    system.lu.release()
    above = mesh.region == ABOVE_S
    shift = sol.integral_pressure(mask=above) / mesh.area(ABOVE_S)
    sol = sol.shifted_pressure(-shift)
    sol.meta.update(eps=float(eps), pore_resolution=res, n_unknowns=int(system.K.shape[0]),
                    seconds=time.perf_counter() - t0)
    return sol


# ---------------------------------------------------------------------------
# comparison on Omega_1


def free_part(ueps: MixedField) -> MixedField:
    """Restriction of a composite-domain field to Omega_1 (Sigma becomes the tag 'bottom')."""
    sub, used = ueps.mesh.submesh(ABOVE_S)
    return ueps.restrict(P2Space(sub), used)


def interpolate_effective(eff: MixedField, space: P2Space) -> MixedField:
    """Nodal interpolation of an Omega_1 field onto another mesh of Omega_1."""
    L = space.mesh.period["x"]
    pts = space.coords.copy()
    pts[:, 0] = np.where(pts[:, 0] >= L, pts[:, 0] - L, pts[:, 0])
    u = eff.velocity_at(pts)
    p = eff.pressure_at(pts[: space.n_vertices])
    return MixedField(space, u, p, None, eff.slope, eff.gauge)


def _pressure_trace_q(fld: MixedField, tag: str, n_gauss: int = 4):
    """Quadrature points, weights and P1 pressure values on tagged edges."""
    edges = fld.mesh.boundary[tag]
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (x + 1.0)
    pa, pb = fld.mesh.nodes[edges[:, 0]], fld.mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(pb - pa, axis=1)
    pts = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
    vals = fld.p[edges[:, 0], None] * (1 - s) + fld.p[edges[:, 1], None] * s
    return pts.reshape(-1, 2), (length[:, None] * 0.5 * w[None, :]).ravel(), vals.ravel()


def _rows(mesh: PeriodicMesh, eps: float, K_depth: float) -> tuple[np.ndarray, list[int]]:
    """Row index (1 = just below Sigma) of each triangle and the rows inside (-3K/4, -K/4)."""
    cy = mesh.centroids()[:, 1]
    row = np.where(mesh.region == BELOW_S, np.ceil(-cy / eps - 1e-9).astype(int), 0)
    n_rows = int(round(K_depth / eps))
    delta = 0.25 * K_depth
    inside = [j for j in range(1, n_rows + 1) if (j - 1) * eps >= delta - 1e-9 and j * eps <= K_depth - delta + 1e-9]
    return row, inside


def darcy_gap(ueps: MixedField, effective: EffectiveSolution, K_depth: float) -> float:
    """L2 distance between row averages of eps^-2 u^eps and of the Darcy flux.

    Rows are the horizontal layers of eps-cells whose depth lies in
    (K/4, 3K/4), away from Sigma and from the bottom wall. Averages are taken
    over the whole row, solid included, since the Darcy flux is a seepage
    velocity.
    """
    darcy = effective.darcy_p
    if darcy is None:
        return math.nan
    eps = effective.eps
    mesh = ueps.mesh
    L = mesh.period["x"]
    row, inside = _rows(mesh, eps, K_depth)
    if not inside:
        return math.nan
    w = ueps.space.weights(QUAD4)
    tri_int = np.einsum("tq,tqk->tk", w, ueps.velocity_q(QUAD4))
    n = n_cells_across(L, eps)
    gx, gw = np.polynomial.legendre.leggauss(4)
    gy, gwy = np.polynomial.legendre.leggauss(6)
    xq = ((np.arange(n)[:, None] + 0.5 * (gx[None, :] + 1)) * eps).ravel()
    wx = np.tile(0.5 * gw * eps, n)
    total = 0.0
    for j in inside:
        micro = np.sum(tri_int[row == j], axis=0) / (eps**2 * L * eps)
        yq = -j * eps + 0.5 * (gy + 1) * eps
        X, Y = np.meshgrid(xq, yq, indexing="ij")
        W = np.outer(wx, 0.5 * gwy * eps)
        flux = darcy.flux_at(np.column_stack([X.ravel(), Y.ravel()]))
        macro = np.einsum("n,nk->k", W.ravel(), flux) / (L * eps)
        total += L * eps * float(np.sum((micro - macro) ** 2))
    return math.sqrt(total)


def sigma_gauss_points(mesh: PeriodicMesh, tag: str, L: float, n_modes: int) -> int:
    """Gauss points per edge that integrate the highest Fourier mode on the longest tagged edge.

    The mode -n_modes/2 turns through theta = pi n_modes h / L radians on an
    edge of length h; n-point Gauss-Legendre is accurate to roundoff once
    2n is comfortably above theta.
    """
    e = mesh.boundary[tag]
    h = float(np.max(np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)))
    theta = math.pi * n_modes * h / L
    return max(4, math.ceil(0.6 * theta) + 10)


def error_report(ueps: MixedField, effective: EffectiveSolution, spec: CurveSpec,
                 K_depth: float | None = None, n_modes: int = 256) -> dict:
    """All comparison norms for one eps, as a flat record."""
    eps = effective.eps
    mesh = ueps.mesh
    L = mesh.period["x"]
    micro = free_part(ueps) if np.any(mesh.region == BELOW_S) else ueps
    if "bottom" not in micro.mesh.boundary:
        raise ValueError("the microscale field has no Sigma boundary")
    eff = interpolate_effective(effective.ueff_peff, micro.space)
    d = micro.minus(eff)
    l2 = d.l2_velocity()
    h1 = math.sqrt(l2**2 + d.h1_semi() ** 2)
    dist = lambda pts: np.abs(pts[..., 1])
    rec = {
        "eps": float(eps),
        "err_u_L2_O1": l2,
        "err_u_H12_O1": math.sqrt(l2 * h1),
        "err_p_L1_O1": d.l1_pressure(),
        "err_gradu_L1_O1": d.l1_grad(),
        "err_weighted_grad": d.h1_semi(weight=dist),
        "err_weighted_p": d.l2_pressure(weight=dist),
    }
    n_g = sigma_gauss_points(micro.mesh, "bottom", L, n_modes)
    pts, w, v = d.trace_on("bottom", n_g)
    rec["err_u_L2_Sigma"] = float(np.sqrt(np.sum(w * np.sum(v * v, axis=1))))
    rec["err_u_Hm12_Sigma"] = trace_fourier_norm(pts[:, 0], w, v, L, -0.5, n_modes)
    # p^eps on Sigma against the Darcy trace p_eff + C^bl_omega, and against
    # p_eff alone: the oscillating boundary-layer pressure averages to
    # -C^bl_omega on Sigma, so only the second difference vanishes as eps -> 0
    ppts, pw, pv = _pressure_trace_q(micro, "bottom", n_g)
    peff = effective.ueff_peff.pressure_at(np.column_stack([np.mod(ppts[:, 0], L), ppts[:, 1]]))
    cw = effective.coeffs.Cbl_omega_at(ppts[:, 0])
    rec["err_p_Hm12_Sigma"] = trace_fourier_norm(ppts[:, 0], pw, pv - peff - cw, L, -0.5, n_modes)
    rec["err_p_Hm12_Sigma_peff"] = trace_fourier_norm(ppts[:, 0], pw, pv - peff, L, -0.5, n_modes)
    below = mesh.region == BELOW_S
    rec["u_L2_O2eps"] = ueps.l2_velocity(mask=below) if np.any(below) else 0.0
    rec["M_eps"] = mass_flow(ueps, spec, mask=mesh.region == ABOVE_S)
    rec["M_eff"] = float(effective.M_eff)
    rec["err_M"] = abs(rec["M_eps"] - rec["M_eff"])
    rec["porous_ratio"] = rec["u_L2_O2eps"] / eps**2
    K = K_depth if K_depth is not None else -float(mesh.nodes[:, 1].min())
    rec["darcy_gap"] = darcy_gap(ueps, effective, K) if np.any(below) else math.nan
    return rec


# ---------------------------------------------------------------------------
# sweep


def fit_rate(eps: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log(value) against log(eps), and its R^2."""
    x = np.log(np.asarray(eps, float))
    v = np.asarray(values, float)
    if len(x) < 2 or not np.all(np.isfinite(v)) or np.any(v <= 0):
        return math.nan, math.nan
    y = np.log(v)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def check_eps_list(eps_list: Sequence[float], L: float) -> list[float]:
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError(f"eps list must be strictly decreasing, got {eps}")
    for e in eps:
        try:
            n_cells_across(L, e)
        except MeshConfigError as exc:
            raise ValidationError(str(exc)) from exc
    return eps


@dataclass
class ConvergenceReport:
    eps_list: list[float]
    records: list[dict]
    rates: dict[str, tuple[float, float]] = field(default_factory=dict)
    monotone: dict[str, bool] = field(default_factory=dict)
    L: float = 1.0

    def __post_init__(self):
        eps = check_eps_list(self.eps_list, self.L)
        if len(self.records) != len(eps):
            raise ValueError("one record per eps expected")
        if not self.rates:
            for key in RATE_KEYS:
                vals = [r[key] for r in self.records]
                self.rates[key] = fit_rate(eps, vals)
                self.monotone[key] = bool(all(np.isfinite(vals)) and all(b < a for a, b in zip(vals, vals[1:])))

    def series(self, key: str) -> list[float]:
        return [float(r[key]) for r in self.records]

    def porous_ratio_spread(self) -> float:
        r = self.series("porous_ratio")
        return max(r) / min(r)

    def write_records(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["eps", *RECORD_KEYS])
            for r in self.records:
                wr.writerow([repr(float(r["eps"]))] + [repr(float(r[k])) for k in RECORD_KEYS])

    def write_rates(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["quantity", "rate", "R2", "monotone"])
            for k in RATE_KEYS:
                slope, r2 = self.rates[k]
                wr.writerow([k, repr(slope), repr(r2), int(self.monotone[k])])


def run_eps(spec: CurveSpec, f, eps: float, params: EpsMeshParams, effective: EffectiveSolution) -> dict:
    """Microscale solve and error record for one eps."""
    ueps = solve_eps_problem(spec, f, eps, params)
    rec = error_report(ueps, effective, spec, params.K_depth)
    rec["seconds"] = ueps.meta["seconds"]
    rec["n_unknowns"] = ueps.meta["n_unknowns"]
    return rec


def sweep_fit(spec: CurveSpec, f, eps_list: Sequence[float], params: EpsMeshParams,
              effective_for: Callable[[float], EffectiveSolution]) -> ConvergenceReport:
    """Run the microscale problem for every eps and fit log-log rates of all norms."""
    eps_list = check_eps_list(eps_list, params.L)
    if len(eps_list) < 3:
        raise ValidationError("a rate fit needs at least three eps values")
    records = [run_eps(spec, f, e, params, effective_for(e)) for e in eps_list]
    return ConvergenceReport(eps_list, records, L=params.L)
