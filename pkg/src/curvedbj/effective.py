"""Effective (homogenised) model: free-fluid problems on Omega_1 and the Darcy
pressure on Omega_2.

Pipeline: the no-slip problem for u0 gives the interface shear K(x1); the
boundary-layer problems turn K into the slip vector C^bl(x1) and the pressure
jump C^bl_omega(x1); the effective free flow then carries the slip -eps C^bl on
Sigma, and the Darcy pressure takes p_eff + C^bl_omega as its trace on Sigma.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .errors import NumericalQualityError, ValidationError
from .fem import QUAD4, P2Space, load_vector, metric_fields, stiffness
from .linalg import Factorization
from .mesh import PeriodicMesh
from .stokes import MixedField, StokesSystem
from .transform import CurveSpec


class CompatibilityError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# coefficients


def _periodic_spline(x: np.ndarray, y: np.ndarray, L: float) -> Callable[[np.ndarray], np.ndarray]:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xs = np.append(x, x[0] + L)
    ys = np.concatenate([y, y[:1]], axis=0)
    spline = CubicSpline(xs, ys, bc_type="periodic", axis=0)
    x0 = x[0]
    return lambda t: spline(np.mod(np.asarray(t, float) - x0, L) + x0)


@dataclass
class EffectiveCoefficients:
    """Samples of A, C^bl and C^bl_omega on an increasing x1 grid covering one period.

    C^bl is stored through its tangential coefficient c = C^bl_1, with
    C^bl(x1) = c(x1) (1, g'(x1)); this keeps C^bl . F^{-T} e2 = 0 exact between
    samples.
    """

    spec: CurveSpec
    x1: np.ndarray
    A: np.ndarray
    Cbl: np.ndarray
    Cbl_omega: np.ndarray
    K: np.ndarray | None = None

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, float)
        self.A = np.asarray(self.A, float).reshape(-1, 2, 2)
        self.Cbl = np.asarray(self.Cbl, float).reshape(-1, 2)
        self.Cbl_omega = np.asarray(self.Cbl_omega, float).reshape(-1)
        n = len(self.x1)
        if n < 4:
            raise ValidationError("at least 4 x1 samples are needed for periodic cubic interpolation")
        if not (len(self.A) == len(self.Cbl) == len(self.Cbl_omega) == n):
            raise ValidationError("coefficient arrays differ in length")
        L = self.spec.period_L
        if np.any(np.diff(self.x1) <= 0) or self.x1[-1] - self.x1[0] >= L:
            raise ValidationError("x1 samples must increase strictly within one period")
        sym = 0.5 * (self.A + np.swapaxes(self.A, 1, 2))
        self._A = _periodic_spline(self.x1, sym.reshape(n, 4), L)
        self._c = _periodic_spline(self.x1, self.Cbl[:, 0], L)
        self._w = _periodic_spline(self.x1, self.Cbl_omega, L)

    @property
    def period(self) -> float:
        return self.spec.period_L

    def A_at(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, float)
        return self._A(x1).reshape(x1.shape + (2, 2))

    def Cbl_at(self, x1) -> np.ndarray:
        x1 = np.asarray(x1, float)
        c = self._c(x1)
        return np.stack([c, c * self.spec.dg(x1)], axis=-1)

    def Cbl_omega_at(self, x1) -> np.ndarray:
        return self._w(np.asarray(x1, float))

    def normal_component(self) -> np.ndarray:
        """C^bl . F^{-T} e2 at the samples."""
        return self.Cbl[:, 1] - self.spec.dg(self.x1) * self.Cbl[:, 0]

    def compatibility(self, n: int = 1024) -> float:
        """int_Sigma C^bl . F^{-T} e2 dx1 from the sampled values (periodic trapezoid rule on the
        sample grid when it is uniform, otherwise on the interpolant)."""
        L = self.period
        d = np.diff(self.x1)
        if np.allclose(d, L / len(self.x1), rtol=1e-12, atol=0):
            return float(np.sum(self.normal_component()) * L / len(self.x1))
        t = self.x1[0] + L * np.arange(n) / n
        C = self.Cbl_at(t)
        return float(np.sum(C[:, 1] - self.spec.dg(t) * C[:, 0]) * L / n)

    def scale(self) -> float:
        return float(np.mean(np.linalg.norm(self.Cbl, axis=1)))


def check_compatibility(coeffs: EffectiveCoefficients, rtol: float = 1e-6) -> float:
    comp = abs(coeffs.compatibility())
    tol = rtol * coeffs.scale() if coeffs.scale() > 0 else 1e-12
    if comp > tol:
        raise CompatibilityError(f"slip data violates int_Sigma C^bl . F^-T e2 = 0: {comp:.3e} > {tol:.1e}")
    return comp


# ---------------------------------------------------------------------------
# free fluid


class FreeFluidSolver:
    """Factorised transformed Stokes problem on Omega_1 with Dirichlet data on Sigma and the top."""

    def __init__(self, mesh: PeriodicMesh, spec: CurveSpec):
        self.mesh = mesh
        self.spec = spec
        self.system = StokesSystem(mesh, spec, ("bottom", "top"), gauge="mean")

    def u0(self, force) -> MixedField:
        return self.system.solve(force, {"bottom": 0.0, "top": 0.0})

    def effective(self, force, coeffs: EffectiveCoefficients, eps: float) -> MixedField:
        check_compatibility(coeffs)
        slip = lambda pts: -eps * coeffs.Cbl_at(pts[:, 0])
        sol = self.system.solve(force, {"bottom": slip, "top": 0.0})
        sol.meta["eps"] = eps
        return sol


def solve_u0(spec: CurveSpec, f, mesh_O1: PeriodicMesh) -> MixedField:
    return FreeFluidSolver(mesh_O1, spec).u0(f)


def solve_effective_fluid(spec: CurveSpec, f, coeffs: EffectiveCoefficients, eps: float,
                          mesh_O1: PeriodicMesh) -> MixedField:
    return FreeFluidSolver(mesh_O1, spec).effective(f, coeffs, eps)


def recover_gradient(fld: MixedField, x1: Sequence[float], y2: float = 0.0, layers: float = 2.5) -> np.ndarray:
    """Least-squares patch recovery of grad u at points (x1, y2) on a horizontal boundary.

    Gradient samples at the quadrature points of nearby triangles (periodic in
    x1) are fitted by a quadratic polynomial per component and evaluated at the
    target point. Returns (n, 2, 2) with [..., i, k] = d_i u_k.
    """
    mesh = fld.mesh
    L = mesh.period["x"]
    pts = fld.space.quad_points(QUAD4).reshape(-1, 2)
    g = fld.grad_q(QUAD4).reshape(-1, 4)
    edges = mesh.edges()
    h = float(np.mean(np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)))
    near = np.abs(pts[:, 1] - y2) < layers * h
    pts, g = pts[near], g[near]
    out = np.empty((len(x1), 2, 2))
    for n, x in enumerate(np.asarray(x1, float)):
        dx = np.mod(pts[:, 0] - x + 0.5 * L, L) - 0.5 * L
        dy = pts[:, 1] - y2
        r = layers * h
        sel = np.hypot(dx, dy) < r
        while np.count_nonzero(sel) < 12:
            r *= 1.5
            sel = np.hypot(dx, dy) < r
        a, b = dx[sel] / r, dy[sel] / r
        V = np.column_stack([np.ones_like(a), a, b, a * a, a * b, b * b])
        coef, *_ = np.linalg.lstsq(V, g[sel], rcond=None)
        out[n] = coef[0].reshape(2, 2)
    return out


def stress_jump(u0: MixedField, spec: CurveSpec, x1_grid: Sequence[float]) -> np.ndarray:
    """K(x1) = (F^{-1} F^{-T} grad u0)^T e2 at (x1, 0+), shape (n, 2)."""
    x1 = np.asarray(x1_grid, float)
    grad = recover_gradient(u0, x1)
    G, _ = metric_fields(spec.dg(x1))
    # K_k = sum_i G_{2i} d_i u_k
    return np.einsum("ni,nik->nk", G[:, 1, :], grad)


def slip_and_massflow(ueff: MixedField, spec: CurveSpec) -> tuple[np.ndarray, np.ndarray, float]:
    """(x1 of the Sigma nodes, u_eff . F e1 there, M_eff = int_Omega1 u_eff . F e1)."""
    x1, vals = sigma_nodes(ueff)
    slip = vals[:, 0] + spec.dg(x1) * vals[:, 1]
    return x1, slip, mass_flow(ueff, spec)


def mass_flow(fld: MixedField, spec: CurveSpec, mask=None) -> float:
    u = fld.velocity_q(QUAD4)
    pts = fld.space.quad_points(QUAD4)
    integrand = u[..., 0] + spec.dg(pts[..., 0]) * u[..., 1]
    w = fld.space.weights(QUAD4)
    if mask is not None:
        w = w * np.asarray(mask, float)[:, None]
    return float(np.sum(w * integrand))


def sigma_nodes(fld: MixedField, tag: str = "bottom") -> tuple[np.ndarray, np.ndarray]:
    """x1 and velocity at the P2 nodes on Sigma, sorted, without the periodic duplicate."""
    S = fld.space
    nodes = S.boundary_nodes([tag])
    x = S.coords[nodes, 0]
    keep = x < fld.mesh.period["x"] - 1e-12
    nodes = nodes[keep][np.argsort(x[keep], kind="stable")]
    return S.coords[nodes, 0], fld.u[nodes]


def pressure_trace(fld: MixedField, tag: str = "bottom") -> Callable[[np.ndarray], np.ndarray]:
    """Periodic piecewise-linear trace of the P1 pressure along a horizontal boundary."""
    e = fld.mesh.boundary[tag]
    v = np.unique(e.ravel())
    x = fld.mesh.nodes[v, 0]
    order = np.argsort(x)
    x, p = x[order], fld.p[v][order]
    L = fld.mesh.period["x"]
    if x[-1] > L - 1e-12:
        x, p = x[:-1], p[:-1]
    return lambda t: np.interp(np.asarray(t, float), x, p, period=L)


# ---------------------------------------------------------------------------
# Darcy pressure


@dataclass
class DarcySolution:
    space: P2Space
    p: np.ndarray
    spec: CurveSpec
    coeffs: EffectiveCoefficients
    force: object
    flux_residual: np.ndarray = field(repr=False, default=None)
    sigma_tag: str = "top"

    def pressure_at(self, pts) -> np.ndarray:
        from .fem import p2_basis

        tri, bary = self.space.locate(np.asarray(pts, float))
        if np.any(tri < 0):
            raise ValueError("evaluation point outside the Darcy mesh")
        val, _ = p2_basis(bary)
        return np.einsum("an,na->n", val, self.p[self.space.cells[tri]])

    def grad_q(self, rule=QUAD4) -> np.ndarray:
        _, grad = self.space.basis_at(rule)
        return np.einsum("tqai,ta->tqi", grad, self.p[self.space.cells])

    def velocity_q(self, rule=QUAD4) -> np.ndarray:
        """Darcy flux A (f - F^{-T} grad p) at quadrature points."""
        pts = self.space.quad_points(rule)
        s = self.spec.dg(pts[..., 0])
        gp = self.grad_q(rule)
        ftg = np.stack([gp[..., 0] - s * gp[..., 1], gp[..., 1]], axis=-1)
        f = np.asarray(self.force(pts)) if self.force is not None else 0.0
        A = self.coeffs.A_at(pts[..., 0])
        return np.einsum("...ij,...j->...i", A, f - ftg)

    def flux_at(self, pts) -> np.ndarray:
        """Darcy flux A (f - F^{-T} grad p) at arbitrary points of Omega_2."""
        from .fem import p2_basis

        pts = np.asarray(pts, float)
        tri, bary = self.space.locate(pts)
        if np.any(tri < 0):
            raise ValueError("evaluation point outside the Darcy mesh")
        _, dbary = p2_basis(bary)
        gb = self.space.grad_bary[tri]
        gp = np.einsum("ank,nkd,na->nd", dbary, gb, self.p[self.space.cells[tri]])
        s = self.spec.dg(pts[:, 0])
        ftg = np.column_stack([gp[:, 0] - s * gp[:, 1], gp[:, 1]])
        f = np.asarray(self.force(pts)) if self.force is not None else 0.0
        return np.einsum("nij,nj->ni", self.coeffs.A_at(pts[:, 0]), f - ftg)

    def interface_flux(self) -> float:
        """Total Darcy flux through Sigma, read variationally from the residual at the Sigma nodes."""
        return float(np.sum(self.flux_residual))

    def interface_trace(self, x1) -> np.ndarray:
        return self.pressure_at(np.column_stack([x1, np.zeros(len(x1))]))


def solve_darcy(spec: CurveSpec, f, coeffs: EffectiveCoefficients, peff_trace: Callable,
                mesh_O2: PeriodicMesh, sigma_tag: str = "top") -> DarcySolution:
    """div(F^{-1} A (f - F^{-T} grad p)) = 0 in Omega_2, p = p_eff + C^bl_omega on Sigma,
    no flux through the bottom, periodic in x1."""
    S = P2Space(mesh_O2)
    pts = S.quad_points(QUAD4)
    x1q = pts[..., 0]
    A = coeffs.A_at(x1q)
    eig = np.linalg.eigvalsh(A)
    if np.any(eig[..., 0] <= 0):
        raise NumericalQualityError("interpolated permeability is not positive definite")
    s = spec.dg(x1q)
    _, Finv = metric_fields(s)
    FinvT = np.swapaxes(Finv, -1, -2)
    M = Finv @ A @ FinvT
    Kmat = stiffness(S, M)
    # right-hand side int A f . F^{-T} grad phi = int (F^{-1} A f) . grad phi
    fq = np.asarray(f(pts), float) if f is not None else np.zeros(pts.shape)
    Af = np.einsum("...ij,...jk,...k->...i", Finv, A, fq)
    _, grad = S.basis_at(QUAD4)
    w = S.weights(QUAD4)
    loc = np.einsum("tq,tqai,tqi->ta", w, grad, Af)
    b = np.bincount(S.cells.ravel(), loc.ravel(), minlength=S.n_nodes)

    P, _ = S.prolongation()
    Kr = (P.T @ Kmat @ P).tocsr()
    br = P.T @ b
    sig_nodes = S.boundary_nodes([sigma_tag])
    red = P.indices
    fixed = np.unique(red[sig_nodes])
    free = np.setdiff1d(np.arange(Kr.shape[0]), fixed)
    xs = S.coords[sig_nodes, 0]
    data = np.zeros(Kr.shape[0])
    data[red[sig_nodes]] = peff_trace(xs) + coeffs.Cbl_omega_at(xs)
    rhs = br[free] - Kr[free][:, fixed] @ data[fixed]
    lu = Factorization(Kr[free][:, free])
    pr = data.copy()
    pr[free] = lu.solve(rhs)
    lu.release()
    # residual of the unconstrained equations at the Sigma unknowns: the
    # variationally consistent normal flux A(f - F^{-T} grad p) . F^{-T} e2
    resid = (Kr @ pr - br)[fixed]
    return DarcySolution(S, P @ pr, spec, coeffs, f, resid, sigma_tag)


# ---------------------------------------------------------------------------


@dataclass
class EffectiveSolution:
    u0_pi0: MixedField
    ueff_peff: MixedField
    darcy_p: DarcySolution | None
    coeffs: EffectiveCoefficients
    eps: float
    M_eff: float


def write_slip_csv(path, x1: np.ndarray, slip: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x1", "slip_tangential"])
        for a, b in zip(x1, slip):
            wr.writerow([repr(float(a)), repr(float(b))])


def effective_solution(spec: CurveSpec, f, coeffs: EffectiveCoefficients, eps: float, free: FreeFluidSolver,
                       u0: MixedField, mesh_O2: PeriodicMesh | None = None) -> EffectiveSolution:
    """Effective free flow for one eps, plus the Darcy pressure when a porous mesh is given."""
    ueff = free.effective(f, coeffs, eps)
    darcy = None
    if mesh_O2 is not None:
        darcy = solve_darcy(spec, f, coeffs, pressure_trace(ueff), mesh_O2)
    return EffectiveSolution(u0, ueff, darcy, coeffs, eps, mass_flow(ueff, spec))
