"""Lagrange P2/P1 finite element machinery on straight triangles.

Local P2 ordering: vertices 0, 1, 2, then the midpoints of edges (0,1),
(1,2), (2,0). Global P2 nodes are the mesh vertices followed by one node per
mesh edge, so the P1 numbering is a prefix of the P2 numbering.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .mesh import PeriodicMesh

# ---------------------------------------------------------------------------
# quadrature (reference triangle with vertices (0,0), (1,0), (0,1);
# weights normalised to sum to one, multiply by the element area)


def _rule_deg4():
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        for bary in ((a, a, b), (a, b, a), (b, a, a)):
            pts.append(bary)
            wts.append(w)
    return np.array(pts), np.array(wts)


def _rule_collapsed(n: int):
    """Conical product Gauss rule, exact for total degree 2n - 1."""
    from scipy.special import roots_jacobi

    x, wx = np.polynomial.legendre.leggauss(n)
    u, wu = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (x + 1.0)
    t = 0.5 * (u + 1.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(wx, wu) / 8.0
    xi = T.ravel()
    eta = (S * (1 - T)).ravel()
    w = W.ravel() * 2.0
    bary = np.column_stack([1 - xi - eta, xi, eta])
    return bary, w / w.sum()


QUAD4 = _rule_deg4()
QUAD_FINE = _rule_collapsed(5)
GAUSS1D = np.polynomial.legendre.leggauss(4)


def p2_basis(bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (6, nq) and barycentric derivatives (6, nq, 3) of the P2 basis."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    val = np.array([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0])
    nq = len(bary)
    d = np.zeros((6, nq, 3))
    d[0, :, 0] = 4 * l0 - 1
    d[1, :, 1] = 4 * l1 - 1
    d[2, :, 2] = 4 * l2 - 1
    d[3, :, 0], d[3, :, 1] = 4 * l1, 4 * l0
    d[4, :, 1], d[4, :, 2] = 4 * l2, 4 * l1
    d[5, :, 2], d[5, :, 0] = 4 * l0, 4 * l2
    return val, d


def p1_basis(bary: np.ndarray) -> np.ndarray:
    return bary.T.copy()


# ---------------------------------------------------------------------------


class P2Space:
    """Scalar P2 space on a mesh with element geometry and periodic node maps."""

    def __init__(self, mesh: PeriodicMesh):
        self.mesh = mesh
        tri = mesh.triangles
        nv = mesh.n_nodes
        local = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)
        keys = np.sort(local, axis=2).reshape(-1, 2)
        edges, inv = np.unique(keys, axis=0, return_inverse=True)
        self.edges = edges
        self.n_vertices = nv
        self.n_nodes = nv + len(edges)
        self.cells = np.concatenate([tri, nv + inv.reshape(-1, 3)], axis=1)
        mid = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
        self.coords = np.concatenate([mesh.nodes, mid])
        self._edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(edges)}
        p = mesh.nodes[tri]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
        self.det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.area = 0.5 * self.det
        if np.any(self.det <= 0):
            raise ValueError("mesh has non-positive triangles")
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1]
        Jinv[:, 1, 1] = J[:, 0, 0]
        Jinv[:, 0, 1] = -J[:, 0, 1]
        Jinv[:, 1, 0] = -J[:, 1, 0]
        Jinv /= self.det[:, None, None]
        # gradients of barycentric coordinates, (T, 3, 2)
        gl = np.zeros((len(tri), 3, 2))
        gl[:, 1, :] = Jinv[:, 0, :]
        gl[:, 2, :] = Jinv[:, 1, :]
        gl[:, 0, :] = -gl[:, 1, :] - gl[:, 2, :]
        self.grad_bary = gl
        self.vertices0 = p[:, 0]
        self.J = J

    def edge_node(self, a, b) -> np.ndarray:
        a, b = np.minimum(a, b), np.maximum(a, b)
        return np.array([self.n_vertices + self._edge_index[(int(x), int(y))] for x, y in zip(a, b)], dtype=np.int64)

    def boundary_nodes(self, tags) -> np.ndarray:
        out = []
        for tag in tags:
            e = self.mesh.boundary.get(tag)
            if e is None or len(e) == 0:
                continue
            out.append(e.ravel())
            out.append(self.edge_node(e[:, 0], e[:, 1]))
        if not out:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(out))

    def quad_points(self, rule=QUAD4) -> np.ndarray:
        bary, _ = rule
        p = self.mesh.nodes[self.mesh.triangles]
        return np.einsum("qk,tkd->tqd", bary, p)

    def basis_at(self, rule=QUAD4):
        """P2 values (6, nq) and physical gradients (T, nq, 6, 2)."""
        bary, _ = rule
        val, dbary = p2_basis(bary)
        grad = np.einsum("aqk,tkd->tqad", dbary, self.grad_bary)
        return val, grad

    def weights(self, rule=QUAD4) -> np.ndarray:
        return self.area[:, None] * rule[1][None, :]

    @cached_property
    def periodic_master(self) -> np.ndarray:
        """Representative node for each P2 node after periodic identification."""
        nv = self.n_vertices
        parent = np.arange(self.n_nodes)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        m = self.mesh
        for d, pairs in m.periodic.items():
            for a, b in pairs:
                union(int(a), int(b))
            if d == "x":
                lo_tag, hi_tag, axis = "periodic_left", "periodic_right", 1
            else:
                lo_tag, hi_tag, axis = "bottom", "top", 0
            lo, hi = m.boundary.get(lo_tag), m.boundary.get(hi_tag)
            if lo is None or hi is None:
                continue
            vmap = dict(zip(pairs[:, 1].tolist(), pairs[:, 0].tolist()))
            lo_edges = {tuple(sorted(e)): self.edge_node([e[0]], [e[1]])[0] for e in lo.tolist()}
            for e in hi.tolist():
                key = tuple(sorted((vmap[e[0]], vmap[e[1]])))
                union(lo_edges[key], self.edge_node([e[0]], [e[1]])[0])
        return np.array([find(i) for i in range(self.n_nodes)])

    def prolongation(self, n_vertices_only: bool = False) -> tuple[sp.csr_matrix, np.ndarray]:
        """Matrix mapping reduced (periodic) node values to all nodes, and the reduced representatives."""
        master = self.periodic_master
        if n_vertices_only:
            master = master[: self.n_vertices]
        reps, inv = np.unique(master, return_inverse=True)
        n = len(master)
        P = sp.csr_matrix((np.ones(n), (np.arange(n), inv)), shape=(n, len(reps)))
        return P, reps

    # --- evaluation

    @cached_property
    def _locator(self):
        return cKDTree(self.mesh.centroids())

    def locate(self, points: np.ndarray, k: int = 12) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates; -1 for points outside."""
        points = np.atleast_2d(points)
        k = min(k, self.mesh.n_triangles)
        _, cand = self._locator.query(points, k=k)
        cand = cand.reshape(len(points), -1)
        found = -np.ones(len(points), dtype=np.int64)
        bary = np.zeros((len(points), 3))
        for j in range(cand.shape[1]):
            todo = found < 0
            if not np.any(todo):
                break
            t = cand[todo, j]
            b = self._bary(t, points[todo])
            ok = np.all(b > -1e-10, axis=1)
            idx = np.flatnonzero(todo)[ok]
            found[idx] = t[ok]
            bary[idx] = b[ok]
        missing = np.flatnonzero(found < 0)
        for i in missing:
            b = self._bary(np.arange(self.mesh.n_triangles), np.repeat(points[i:i + 1], self.mesh.n_triangles, 0))
            ok = np.flatnonzero(np.all(b > -1e-10, axis=1))
            if len(ok):
                found[i] = ok[0]
                bary[i] = b[ok[0]]
        return found, bary

    def _bary(self, t, pts):
        d = pts - self.vertices0[t]
        Ji = np.linalg.inv(self.J[t])
        xi = np.einsum("tij,tj->ti", Ji, d)
        return np.column_stack([1 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])


def scatter_matrix(rows_local: np.ndarray, cols_local: np.ndarray, vals: np.ndarray, shape) -> sp.csr_matrix:
    """Assemble element matrices vals[t, a, b] at (rows_local[t, a], cols_local[t, b])."""
    R = np.broadcast_to(rows_local[:, :, None], vals.shape)
    C = np.broadcast_to(cols_local[:, None, :], vals.shape)
    return sp.csr_matrix((vals.ravel(), (R.ravel(), C.ravel())), shape=shape)


def metric_fields(slope_q: np.ndarray):
    """G = F^{-1}F^{-T} and F^{-1} at quadrature points from g' values."""
    s = slope_q
    G = np.empty(s.shape + (2, 2))
    G[..., 0, 0] = 1.0
    G[..., 0, 1] = -s
    G[..., 1, 0] = -s
    G[..., 1, 1] = 1.0 + s * s
    Finv = np.zeros(s.shape + (2, 2))
    Finv[..., 0, 0] = 1.0
    Finv[..., 1, 0] = -s
    Finv[..., 1, 1] = 1.0
    return G, Finv


def stiffness(space: P2Space, G: np.ndarray | None, rule=QUAD4) -> sp.csr_matrix:
    """Scalar matrix int grad(phi_a) . G grad(phi_b); G of shape (T, nq, 2, 2) or None for identity."""
    _, grad = space.basis_at(rule)
    w = space.weights(rule)
    if G is None:
        loc = np.einsum("tq,tqad,tqbd->tab", w, grad, grad)
    else:
        loc = np.einsum("tq,tqai,tqij,tqbj->tab", w, grad, G, grad)
    n = space.n_nodes
    return scatter_matrix(space.cells, space.cells, loc, (n, n))


def mass_p2(space: P2Space, rule=QUAD4) -> sp.csr_matrix:
    val, _ = space.basis_at(rule)
    w = space.weights(rule)
    loc = np.einsum("tq,aq,bq->tab", w, val, val)
    n = space.n_nodes
    return scatter_matrix(space.cells, space.cells, loc, (n, n))


def load_vector(space: P2Space, fq: np.ndarray, rule=QUAD4) -> np.ndarray:
    """int f phi_a for scalar f sampled at quadrature points (T, nq)."""
    val, _ = space.basis_at(rule)
    w = space.weights(rule)
    loc = np.einsum("tq,tq,aq->ta", w, fq, val)
    return np.bincount(space.cells.ravel(), loc.ravel(), minlength=space.n_nodes)
