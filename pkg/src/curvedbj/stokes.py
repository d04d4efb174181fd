"""Transformed Stokes system on flattened coordinates.

Solves, with unit viscosity,

    -div(G grad u) + F^{-T} grad p = f,   div(F^{-1} u) = 0,   G = F^{-1} F^{-T},

with Taylor-Hood P2/P1 elements (optionally enriched by piecewise constant
pressures), periodic identification, strong Dirichlet data, a surface source
int_S sigma . phi on interior interface edges. The pressure gauge is imposed by
pinning one pressure unknown and shifting afterwards, which keeps the saddle
matrix free of dense rows. The natural condition on untagged boundaries is
(G grad u - F^{-1} p)^T n = 0. Viscosity would re-enter as a factor on the
velocity block and on the natural traction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericalQualityError, ValidationError
from .fem import GAUSS1D, QUAD4, QUAD_FINE, P2Space, metric_fields, p1_basis, p2_basis, scatter_matrix, stiffness
from .linalg import Factorization, ZeroPivotError
from .mesh import PeriodicMesh
from .transform import CurveSpec, metric_eigenvalues


class SingularSystemError(NumericalQualityError):
    pass


class SolverConfigError(ValidationError):
    pass


def slope_function(metric) -> Callable[[np.ndarray], np.ndarray]:
    """Normalise a metric description to a callable z1 -> g'(z1).

    Accepts a CurveSpec, a number (frozen metric) or a callable.
    """
    if isinstance(metric, CurveSpec):
        return metric.dg
    if callable(metric):
        return metric
    s = float(metric)
    return lambda z1: np.full(np.shape(z1), s)


@dataclass(frozen=True)
class InterfaceSource:
    """Surface source sigma(x1) on the interior interface edges (``tag``)."""

    traction: Callable[[np.ndarray], np.ndarray]
    tag: str = "interface_S"

    @classmethod
    def constant(cls, vec, tag: str = "interface_S") -> "InterfaceSource":
        v = np.asarray(vec, dtype=float)
        return cls(lambda x1: np.broadcast_to(v, np.shape(x1) + (2,)).copy(), tag)


def _eval_vector(data, pts: np.ndarray) -> np.ndarray:
    if data is None:
        return np.zeros(pts.shape[:-1] + (2,))
    if callable(data):
        return np.asarray(data(pts), dtype=float).reshape(pts.shape[:-1] + (2,))
    return np.broadcast_to(np.asarray(data, float), pts.shape[:-1] + (2,)).copy()


class StokesSystem:
    """Assembled and factorised saddle system on one mesh and metric.

    The factorisation is reused for any number of right-hand sides with the
    same Dirichlet node set.
    """

    def __init__(self, mesh: PeriodicMesh, metric=0.0, dirichlet_tags: Sequence[str] = (),
                 pressure: str = "P1", gauge: str = "mean", space: P2Space | None = None):
        if pressure not in ("P1", "P1+P0"):
            raise SolverConfigError(f"unknown pressure space {pressure!r}")
        if gauge not in ("mean", "pinned", "none"):
            raise SolverConfigError(f"unknown gauge {gauge!r}")
        self.mesh = mesh
        self.space = space if space is not None else P2Space(mesh)
        self.slope = slope_function(metric)
        self.pressure = pressure
        self.gauge = gauge
        self.dirichlet_tags = tuple(dirichlet_tags)
        self._assemble()
        self._factorise()

    # -- assembly

    def _assemble(self):
        S = self.space
        mesh = self.mesh
        nq = S.quad_points(QUAD4)
        self.slope_q = self.slope(nq[..., 0])
        G, Finv = metric_fields(self.slope_q)
        Ks = stiffness(S, G)
        n2, nv, nt = S.n_nodes, S.n_vertices, mesh.n_triangles
        self.A_scalar = Ks
        _, grad = S.basis_at(QUAD4)
        w = S.weights(QUAD4)
        psi = p1_basis(QUAD4[0])  # (3, nq)
        # transformed divergence of phi_b e_k: sum_i Finv[i, k] d_i phi_b
        tdiv = np.einsum("tqik,tqbi->tqbk", Finv, grad)
        Bk = [scatter_matrix(mesh.triangles, S.cells, np.einsum("tq,pq,tqb->tpb", w, psi, tdiv[..., k]), (nv, n2))
              for k in range(2)]
        B = sp.hstack(Bk)
        if self.pressure == "P1+P0":
            B0 = [sp.csr_matrix((np.einsum("tq,tqb->tb", w, tdiv[..., k]).ravel(),
                                 (np.repeat(np.arange(nt), 6), S.cells.ravel())), shape=(nt, n2)) for k in range(2)]
            B = sp.vstack([B, sp.hstack(B0)])
        self.B_full = B.tocsr()
        self.A_full = sp.block_diag([Ks, Ks]).tocsr()

        # periodic reduction
        Pv, self.v_reps = S.prolongation()
        Pp, self.p_reps = S.prolongation(n_vertices_only=True)
        self.Pv = sp.block_diag([Pv, Pv]).tocsr()
        blocks = [Pp]
        if self.pressure == "P1+P0":
            blocks.append(sp.identity(nt, format="csr"))
        self.Pp = sp.block_diag(blocks).tocsr()
        self.n_vred = Pv.shape[1]
        A = (self.Pv.T @ self.A_full @ self.Pv).tocsr()
        B = (self.Pp.T @ self.B_full @ self.Pv).tocsr()

        # Dirichlet split of reduced velocity unknowns
        nodes = S.boundary_nodes(self.dirichlet_tags)
        red_of_node = Pv.indices  # reduced index of each P2 node (one nonzero per row)
        fixed_scalar = np.unique(red_of_node[nodes]) if len(nodes) else np.zeros(0, dtype=np.int64)
        nr = self.n_vred
        fixed = np.concatenate([fixed_scalar, fixed_scalar + nr])
        free = np.setdiff1d(np.arange(2 * nr), fixed)
        self.fixed, self.free = fixed, free
        self.fixed_scalar = fixed_scalar
        self.red_of_node = red_of_node

        # pressure pinning: one P1 value when the pressure is only defined up to a
        # constant, and one P0 value because constants live in both P1 and P0
        npr = self.Pp.shape[1]
        self.natural_tags = self._natural_tags()
        if self.gauge != "none" and self.natural_tags:
            raise SolverConfigError(
                f"gauge {self.gauge!r} over-determines the pressure: natural boundary {self.natural_tags} present")
        if self.gauge == "none" and not self.natural_tags:
            raise SingularSystemError(
                "pressure kernel: constants are not fixed (all boundaries essential or periodic); use a gauge")
        pinned = []
        if self.gauge != "none":
            pinned.append(0)
        if self.pressure == "P1+P0":
            pinned.append(Pp.shape[1])
        self.p_free = np.setdiff1d(np.arange(npr), pinned)
        self.p1_mass = np.bincount(mesh.triangles.ravel(), np.repeat(S.area / 3.0, 3), minlength=nv)

        Aff = A[free][:, free]
        Bf = B[self.p_free][:, free]
        self.K = sp.bmat([[Aff, -Bf.T], [-Bf, None]], format="csr")
        self.A_red, self.B_red = A, B
        self.n_p = npr

    def _natural_tags(self) -> tuple[str, ...]:
        periodic = {"periodic_left", "periodic_right"}
        if "y" in self.mesh.periodic:
            periodic |= {"top", "bottom"}
        skip = periodic | set(self.dirichlet_tags) | {"interface_S"}
        return tuple(sorted(t for t, e in self.mesh.boundary.items() if t not in skip and len(e)))

    def _factorise(self):
        if len(self.free) == 0:
            raise SingularSystemError("no free velocity unknowns")
        if len(self.fixed) == 0 and not self.natural_tags:
            raise SingularSystemError(
                "velocity kernel contains the constant fields: no Dirichlet boundary after periodic identification")
        try:
            self.lu = Factorization(self.K)
            if self.lu.perturbed and self.lu.kernel_probe() > 1e-6:
                # PARDISO's static pivoting can fail on P0-enriched matrices;
                # partial pivoting settles whether the matrix is really singular
                self.lu.release()
                self.lu = Factorization(self.K, "superlu")
                if self.lu.kernel_probe() > 1e-6:
                    raise ZeroPivotError("numerically singular")
        except ZeroPivotError as exc:
            raise SolverConfigError(
                f"zero pivot in the saddle matrix ({exc}); the velocity/pressure pair is not inf-sup stable "
                "on this mesh") from exc

    # -- right-hand sides

    def load(self, force=None) -> np.ndarray:
        """Full-length (2 n2) load vector for a body force callable z -> f(z)."""
        S = self.space
        if force is None:
            return np.zeros(2 * S.n_nodes)
        pts = S.quad_points(QUAD4)
        fq = _eval_vector(force, pts)
        val, _ = S.basis_at(QUAD4)
        w = S.weights(QUAD4)
        out = []
        for k in range(2):
            loc = np.einsum("tq,tq,aq->ta", w, fq[..., k], val)
            out.append(np.bincount(S.cells.ravel(), loc.ravel(), minlength=S.n_nodes))
        return np.concatenate(out)

    def surface_load(self, src: InterfaceSource | None) -> np.ndarray:
        S = self.space
        out = np.zeros(2 * S.n_nodes)
        if src is None:
            return out
        edges = self.mesh.boundary.get(src.tag)
        if edges is None or len(edges) == 0:
            raise SolverConfigError(f"mesh has no edges tagged {src.tag!r}")
        mids = S.edge_node(edges[:, 0], edges[:, 1])
        x, w = GAUSS1D
        s = 0.5 * (x + 1.0)
        w = 0.5 * w
        pa, pb = S.coords[edges[:, 0]], S.coords[edges[:, 1]]
        length = np.linalg.norm(pb - pa, axis=1)
        pts = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
        sig = np.asarray(src.traction(pts[..., 0]), dtype=float).reshape(pts.shape[:2] + (2,))
        N = np.array([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])  # (3, nq)
        idx = np.column_stack([edges[:, 0], edges[:, 1], mids])
        for k in range(2):
            loc = np.einsum("e,q,eq,aq->ea", length, w, sig[..., k], N)
            out[k * S.n_nodes:(k + 1) * S.n_nodes] += np.bincount(idx.ravel(), loc.ravel(), minlength=S.n_nodes)
        return out

    def solve(self, force=None, dirichlet: Mapping[str, object] | None = None,
              source: InterfaceSource | None = None, extra_load: np.ndarray | None = None) -> "MixedField":
        """Solve for the given data. ``dirichlet`` maps tags to values (vector, or callable of points)."""
        S = self.space
        b_full = self.load(force) + self.surface_load(source)
        if extra_load is not None:
            b_full = b_full + extra_load
        b = self.Pv.T @ b_full
        nr = self.n_vred
        ud = np.zeros(2 * nr)
        dirichlet = dict(dirichlet or {})
        for tag in self.dirichlet_tags:
            data = dirichlet.get(tag)
            if data is None:
                continue
            nodes = S.boundary_nodes([tag])
            vals = _eval_vector(data, S.coords[nodes])
            red = self.red_of_node[nodes]
            ud[red] = vals[:, 0]
            ud[red + nr] = vals[:, 1]
        bf = b[self.free] - self.A_red[self.free][:, self.fixed] @ ud[self.fixed]
        g = self.B_red[self.p_free][:, self.fixed] @ ud[self.fixed]
        rhs = np.concatenate([bf, g])
        x = self.lu.solve(rhs)
        self.last_residual = float(np.linalg.norm(rhs - self.K @ x) / max(np.linalg.norm(rhs), 1e-300))
        ured = ud.copy()
        ured[self.free] = x[: len(self.free)]
        pred = np.zeros(self.n_p)
        pred[self.p_free] = x[len(self.free):]
        u = (self.Pv @ ured).reshape(2, S.n_nodes).T.copy()
        pfull = self.Pp @ pred
        nv = S.n_vertices
        p = pfull[:nv].copy()
        p0 = None
        if self.pressure == "P1+P0":
            p0 = pfull[nv:].copy()
            c = float(np.dot(S.area, p0) / S.area.sum())
            p0 -= c
            p += c
        if self.gauge == "mean":
            p -= float(np.dot(self.p1_mass, p) / self.p1_mass.sum())
        if self.last_residual > 1e-8:
            raise SingularSystemError(f"linear solve failed: relative residual {self.last_residual:.2e}")
        return MixedField(S, u, p, p0, self.slope, self.gauge, self.last_residual)


def solve_transformed_stokes(mesh: PeriodicMesh, metric=0.0, force=None, dirichlet: Mapping[str, object] | None = None,
                             source: InterfaceSource | None = None, gauge: str = "mean",
                             pressure: str = "P1") -> "MixedField":
    """One-shot solve; ``dirichlet`` maps boundary tags to velocity data (None means no-slip)."""
    dirichlet = dict(dirichlet or {})
    system = StokesSystem(mesh, metric, tuple(dirichlet), pressure=pressure, gauge=gauge)
    return system.solve(force, {k: (0.0 if v is None else v) for k, v in dirichlet.items()}, source)


# ---------------------------------------------------------------------------


@dataclass
class MixedField:
    """Discrete velocity (P2 nodal values, shape (n2, 2)) and pressure (P1 [+ P0])."""

    space: P2Space
    u: np.ndarray
    p: np.ndarray
    p0: np.ndarray | None
    slope: Callable
    gauge: str = "mean"
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def mesh(self) -> PeriodicMesh:
        return self.space.mesh

    # values at quadrature points
    def velocity_q(self, rule=QUAD4) -> np.ndarray:
        val, _ = self.space.basis_at(rule)
        return np.einsum("aq,tak->tqk", val, self.u[self.space.cells])

    def grad_q(self, rule=QUAD4) -> np.ndarray:
        """(T, nq, 2, 2) with [..., i, k] = d_i u_k."""
        _, grad = self.space.basis_at(rule)
        return np.einsum("tqai,tak->tqik", grad, self.u[self.space.cells])

    def pressure_q(self, rule=QUAD4) -> np.ndarray:
        psi = p1_basis(rule[0])
        out = np.einsum("pq,tp->tq", psi, self.p[self.mesh.triangles])
        if self.p0 is not None:
            out = out + self.p0[:, None]
        return out

    # point evaluation
    def _located(self, pts):
        tri, bary = self.space.locate(np.asarray(pts, float))
        if np.any(tri < 0):
            raise ValueError("evaluation point outside the mesh")
        return tri, bary

    def velocity_at(self, pts) -> np.ndarray:
        tri, bary = self._located(pts)
        val, _ = p2_basis(bary)
        return np.einsum("an,nak->nk", val, self.u[self.space.cells[tri]])

    def pressure_at(self, pts) -> np.ndarray:
        tri, bary = self._located(pts)
        out = np.einsum("nk,nk->n", bary, self.p[self.mesh.triangles[tri]])
        if self.p0 is not None:
            out = out + self.p0[tri]
        return out

    # integrals and norms; ``mask`` selects triangles
    def _w(self, rule, mask):
        w = self.space.weights(rule)
        if mask is not None:
            w = w * np.asarray(mask, float)[:, None]
        return w

    def l2_velocity(self, ref=None, mask=None, rule=QUAD_FINE) -> float:
        v = self.velocity_q(rule)
        if ref is not None:
            v = v - _eval_vector(ref, self.space.quad_points(rule))
        return float(np.sqrt(np.sum(self._w(rule, mask) * np.sum(v * v, axis=-1))))

    def h1_semi(self, ref_grad=None, mask=None, rule=QUAD_FINE, weight=None) -> float:
        g = self.grad_q(rule)
        pts = self.space.quad_points(rule)
        if ref_grad is not None:
            g = g - np.asarray(ref_grad(pts)).reshape(g.shape)
        integrand = np.sum(g * g, axis=(-1, -2))
        if weight is not None:
            integrand = integrand * weight(pts)
        return float(np.sqrt(np.sum(self._w(rule, mask) * integrand)))

    def l1_grad(self, mask=None, rule=QUAD_FINE) -> float:
        g = self.grad_q(rule)
        return float(np.sum(self._w(rule, mask) * np.sqrt(np.sum(g * g, axis=(-1, -2)))))

    def l2_pressure(self, ref=None, mask=None, rule=QUAD_FINE, weight=None) -> float:
        p = self.pressure_q(rule)
        pts = self.space.quad_points(rule)
        if ref is not None:
            p = p - np.asarray(ref(pts)).reshape(p.shape)
        integrand = p * p
        if weight is not None:
            integrand = integrand * weight(pts)
        return float(np.sqrt(np.sum(self._w(rule, mask) * integrand)))

    def l1_pressure(self, mask=None, rule=QUAD_FINE) -> float:
        return float(np.sum(self._w(rule, mask) * np.abs(self.pressure_q(rule))))

    def integral_pressure(self, mask=None, rule=QUAD4) -> float:
        return float(np.sum(self._w(rule, mask) * self.pressure_q(rule)))

    def integral_velocity(self, mask=None, rule=QUAD4) -> np.ndarray:
        return np.einsum("tq,tqk->k", self._w(rule, mask), self.velocity_q(rule))

    def trace_on(self, tag: str, n_gauss: int = 4):
        """Quadrature points (m, 2), weights (m,) and velocity values (m, 2) on tagged edges."""
        return self.trace_on_edges(self.mesh.boundary[tag], n_gauss)

    def trace_on_edges(self, edges: np.ndarray, n_gauss: int = 4):
        S = self.space
        mids = S.edge_node(edges[:, 0], edges[:, 1])
        x, w = np.polynomial.legendre.leggauss(n_gauss)
        s = 0.5 * (x + 1.0)
        w = 0.5 * w
        pa, pb = S.coords[edges[:, 0]], S.coords[edges[:, 1]]
        length = np.linalg.norm(pb - pa, axis=1)
        pts = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
        N = np.array([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
        vals = (np.einsum("aq,eak->eqk", N, self.u[np.column_stack([edges[:, 0], edges[:, 1], mids])]))
        return pts.reshape(-1, 2), (length[:, None] * w[None, :]).ravel(), vals.reshape(-1, 2)

    def line_integrals(self, y2: float) -> tuple[np.ndarray, float, float]:
        """Exact integrals of velocity and pressure along the horizontal line through y2.

        Returns (int u dx1, int p dx1, fluid length). Solid parts of the line
        contribute nothing. A line through mesh vertices is evaluated as the
        mean of the two one-sided limits.
        """
        y = self.mesh.nodes[:, 1]
        if np.any(np.abs(y - y2) < 1e-12):
            lo, hi = self._line_integrals(y2 - 1e-9), self._line_integrals(y2 + 1e-9)
            return 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])
        return self._line_integrals(y2)

    def _line_integrals(self, c: float):
        tri = self.mesh.triangles
        P = self.mesh.nodes[tri]
        ys = P[..., 1]
        hit = np.flatnonzero((ys.min(axis=1) < c) & (ys.max(axis=1) > c))
        if len(hit) == 0:
            return np.zeros(2), 0.0, 0.0
        Y = ys[hit]
        ends = np.zeros((len(hit), 2, 3))  # barycentric coordinates of the two crossing points
        count = np.zeros(len(hit), dtype=int)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            ya, yb = Y[:, a], Y[:, b]
            cross = (ya - c) * (yb - c) < 0
            t = np.where(cross, (c - ya) / np.where(cross, yb - ya, 1.0), 0.0)
            for i in np.flatnonzero(cross):
                ends[i, count[i], a] = 1.0 - t[i]
                ends[i, count[i], b] = t[i]
                count[i] += 1
        b0, b1 = ends[:, 0], ends[:, 1]
        x0 = np.einsum("nk,nk->n", b0, P[hit, :, 0])
        x1 = np.einsum("nk,nk->n", b1, P[hit, :, 0])
        length = np.abs(x1 - x0)
        cells = self.space.cells[hit]
        vel = []
        for bary in (b0, 0.5 * (b0 + b1), b1):
            val, _ = p2_basis(bary)
            vel.append(np.einsum("an,nak->nk", val, self.u[cells]))
        u_int = np.einsum("n,nk->k", length, (vel[0] + 4 * vel[1] + vel[2]) / 6.0)
        pv = self.p[tri[hit]]
        p_ends = 0.5 * (np.einsum("nk,nk->n", b0, pv) + np.einsum("nk,nk->n", b1, pv))
        if self.p0 is not None:
            p_ends = p_ends + self.p0[hit]
        return u_int, float(np.dot(length, p_ends)), float(length.sum())

    def interface_l2(self, tag: str = "interface_S", ref=None) -> float:
        pts, w, v = self.trace_on(tag)
        if ref is not None:
            v = v - _eval_vector(ref, pts)
        return float(np.sqrt(np.sum(w * np.sum(v * v, axis=1))))

    def flux(self, tag: str, normal, n_gauss: int = 4) -> float:
        """int_edges u . F^{-T} normal, for a fixed reference normal (e.g. (0, 1))."""
        pts, w, v = self.trace_on(tag, n_gauss)
        s = self.slope(pts[:, 0])
        n = np.asarray(normal, float)
        # F^{-T} n = (n1 - s n2, n2)
        tn = np.column_stack([n[0] - s * n[1], np.full(len(s), n[1])])
        return float(np.sum(w * np.sum(v * tn, axis=1)))

    def minus(self, other: "MixedField") -> "MixedField":
        if other.space is not self.space:
            raise ValueError("fields live on different spaces")
        p0 = None
        if self.p0 is not None or other.p0 is not None:
            z = np.zeros(self.mesh.n_triangles)
            p0 = (self.p0 if self.p0 is not None else z) - (other.p0 if other.p0 is not None else z)
        return MixedField(self.space, self.u - other.u, self.p - other.p, p0, self.slope, self.gauge)

    def shifted_pressure(self, c: float) -> "MixedField":
        return MixedField(self.space, self.u, self.p + c, self.p0, self.slope, self.gauge, self.residual, dict(self.meta))

    def restrict(self, space: P2Space, vertex_map: np.ndarray) -> "MixedField":
        """Restriction to a submesh given the parent index of each submesh vertex."""
        parent = self.space
        sub_edges = vertex_map[space.edges]
        mids = parent.edge_node(sub_edges[:, 0], sub_edges[:, 1])
        node_map = np.concatenate([vertex_map, mids])
        p0 = None
        if self.p0 is not None:
            raise ValueError("restriction of enriched pressures is not supported")
        return MixedField(space, self.u[node_map].copy(), self.p[vertex_map].copy(), p0, self.slope, self.gauge)

    def export_text(self, path) -> None:
        """Nodal values: P2 node coordinates with velocity, then vertex pressures."""
        S = self.space
        lines = [f"velocity {S.n_nodes}"]
        lines += [f"{x:.17g} {y:.17g} {a:.17g} {b:.17g}" for (x, y), (a, b) in zip(S.coords, self.u)]
        lines.append(f"pressure {S.n_vertices}")
        lines += [f"{x:.17g} {y:.17g} {q:.17g}" for (x, y), q in zip(S.coords[: S.n_vertices], self.p)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Fourier trace norms


def fourier_norm(samples: np.ndarray, L: float, s: float) -> float:
    """Periodic H^s norm from uniform samples on [0, L): sqrt(L sum (1 + xi_k^2)^s |c_k|^2).

    ``samples`` has shape (N,) or (N, m); vector components add in squares.
    """
    v = np.asarray(samples, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    N = v.shape[0]
    c = np.fft.fft(v, axis=0) / N
    xi = 2 * np.pi * np.fft.fftfreq(N, d=L / N)
    weight = (1.0 + xi**2) ** s
    return float(np.sqrt(L * np.sum(weight[:, None] * np.abs(c) ** 2)))


def trace_fourier_norm(x: np.ndarray, w: np.ndarray, vals: np.ndarray, L: float, s: float,
                       n_modes: int = 256) -> float:
    """Periodic H^s norm of a trace given by quadrature (points x, weights w).

    Same multiplier as ``fourier_norm``, but the coefficients of the modes
    -n_modes/2 .. n_modes/2 - 1 are integrated by the edge quadrature instead
    of being read off point samples, so oscillations finer than the sampling
    grid are not aliased. The quadrature must resolve the highest mode on
    every edge (see ``dns.sigma_gauss_points``).
    """
    v = np.asarray(vals, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    k = np.arange(-(n_modes // 2), n_modes - n_modes // 2)
    xi = 2 * np.pi * k / L
    phase = np.exp(-1j * np.outer(xi, np.asarray(x, float)))
    c = phase @ (np.asarray(w, float)[:, None] * v) / L
    weight = (1.0 + xi**2) ** s
    return float(np.sqrt(L * np.sum(weight[:, None] * np.abs(c) ** 2)))


# ---------------------------------------------------------------------------
# manufactured solution study


@dataclass
class RateTable:
    h: list[float]
    velocity_l2: list[float]
    pressure_l2: list[float]
    velocity_slope: float | None
    pressure_slope: float | None


def loglog_slope(h: Sequence[float], err: Sequence[float]) -> float | None:
    if len(h) < 2:
        return None
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def _manufactured_fields(spec: CurveSpec):
    from . import jets
    from .jets import Jet
    from .transform import Calculus

    L = spec.period_L
    k = 2 * np.pi / L
    slope = lambda z1: jets.apply_univariate(z1, lambda x, n: spec.derivative(x, n + 1))
    cal = Calculus(slope)
    c = lambda Z: jets.sin(k * Z[0]) * jets.sin(np.pi * Z[1]) * jets.cos(np.pi * Z[1] + 0.3)
    u = cal.tcurl_scalar(c)
    p = lambda Z: jets.cos(k * Z[0]) * jets.sin(np.pi * Z[1] + 0.4)
    lap = cal.tlaplace(u)
    gp = cal.tgrad(p)

    def at(fun, pts, order):
        Z = Jet.variables(pts[..., 0], pts[..., 1], order)
        out = fun(Z)
        if isinstance(out, tuple):
            return np.stack([jets.value(o) for o in out], axis=-1)
        return jets.value(out)

    u_exact = lambda pts: at(u, pts, 1)
    p_exact = lambda pts: at(p, pts, 0)

    def force(pts):
        Z = Jet.variables(pts[..., 0], pts[..., 1], 3)
        a, b = lap(Z), gp(Z)
        return np.stack([jets.value(b[i]) - jets.value(a[i]) for i in range(2)], axis=-1)

    return u_exact, p_exact, force


def manufactured_convergence(spec: CurveSpec, levels: int = 4, n0: int = 4) -> RateTable:
    """Errors of a trigonometric manufactured solution on (0,L) x (0,1) under uniform refinement."""
    from .mesh import build_box_mesh

    u_exact, p_exact, force = _manufactured_fields(spec)
    L = spec.period_L
    hs, eu, ep = [], [], []
    for lev in range(levels):
        n = n0 * 2**lev
        mesh = build_box_mesh(L, 0.0, 1.0, L / n, structured=True)
        sol = solve_transformed_stokes(mesh, spec, force, {"top": u_exact, "bottom": u_exact}, gauge="mean")
        pts = sol.space.quad_points(QUAD_FINE)
        w = sol.space.weights(QUAD_FINE)
        pe = p_exact(pts)
        mean = np.sum(w * pe) / np.sum(w)
        hs.append(L / n)
        eu.append(sol.l2_velocity(u_exact))
        ep.append(sol.l2_pressure(lambda q: p_exact(q) - mean))
    return RateTable(hs, eu, ep, loglog_slope(hs, eu) if levels >= 2 else None,
                     loglog_slope(hs, ep) if levels >= 2 else None)


def coercivity_bounds(slope_values: np.ndarray) -> tuple[float, float]:
    """k_F and K_F: extreme metric eigenvalues over the given slope samples."""
    lo, hi = metric_eigenvalues(slope_values)
    return float(np.min(lo)), float(np.max(hi))
