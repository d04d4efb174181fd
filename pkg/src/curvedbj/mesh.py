"""Periodic triangulations of the reference cell, the boundary-layer strip and the
epsilon-periodic composite domain.

Every domain is assembled from translated copies of a small number of cell
templates (a pore cell with one inclusion and an inclusion-free cell), so
nodes on shared edges coincide exactly and periodic partners have identical
ordinates. Templates are triangulated with Triangle (constrained Delaunay,
quality bound, no Steiner points on input segments).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import triangle

from .errors import ValidationError

ABOVE_S = 0
BELOW_S = 1

MIN_ANGLE = 28.0
MARGIN = 0.02


class GeometryError(ValidationError):
    pass


class MeshConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class InclusionSpec:
    """Solid inclusion Y_S inside the unit cell.

    ``kind`` is ``"circle"`` (radius ``radius``) or ``"star"`` with boundary
    r(theta) = radius * (1 + sum_m a_m cos(m theta)), m = 1, 2, ...
    """

    kind: str = "circle"
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.25
    star_modes: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("circle", "star"):
            raise GeometryError(f"unknown inclusion kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "star_modes", tuple(float(a) for a in self.star_modes))
        if self.radius <= 0:
            raise GeometryError("inclusion radius must be positive")
        theta = np.linspace(0.0, 2 * np.pi, 4097)
        r = self.radial(theta)
        if np.any(r <= 0):
            raise GeometryError("star inclusion has non-positive radius (self-intersecting)")
        pts = self.boundary_points(theta)
        gap = min(pts[:, 0].min(), 1 - pts[:, 0].max(), pts[:, 1].min(), 1 - pts[:, 1].max())
        if gap < MARGIN:
            raise GeometryError(f"inclusion comes within {gap:.4f} of the cell boundary (margin {MARGIN})")

    def radial(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = np.ones_like(theta)
        if self.kind == "star":
            for m, a in enumerate(self.star_modes, start=1):
                r = r + a * np.cos(m * theta)
        return self.radius * r

    def boundary_points(self, theta) -> np.ndarray:
        r = self.radial(theta)
        return np.column_stack([self.center[0] + r * np.cos(theta), self.center[1] + r * np.sin(theta)])

    @property
    def area(self) -> float:
        # exact for the truncated cosine series: (1/2) int r^2 dtheta
        a = np.asarray(self.star_modes if self.kind == "star" else ())
        return math.pi * self.radius**2 * (1.0 + 0.5 * float(np.sum(a**2)))

    @property
    def is_d4_symmetric(self) -> bool:
        centered = abs(self.center[0] - 0.5) < 1e-14 and abs(self.center[1] - 0.5) < 1e-14
        modes_ok = all(a == 0.0 or m % 4 == 0 for m, a in enumerate(self.star_modes, start=1))
        return centered and (self.kind == "circle" or modes_ok)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius, "modes": list(self.star_modes)}

    @classmethod
    def from_dict(cls, d: dict) -> "InclusionSpec":
        return cls(d.get("kind", "circle"), tuple(d.get("center", (0.5, 0.5))), float(d.get("radius", 0.25)),
                   tuple(d.get("modes", ())))


@dataclass
class PeriodicMesh:
    """Straight-edged triangulation with boundary tags and periodic node pairing.

    ``boundary`` maps a tag to an (E, 2) array of vertex-index edges.
    ``periodic`` maps a direction ("x" or "y") to an (P, 2) array of
    (master, slave) pairs, master on the left/bottom side. ``period`` holds the
    period length per direction. ``region`` tags triangles as ABOVE_S/BELOW_S.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: dict[str, np.ndarray]
    periodic: dict[str, np.ndarray]
    period: dict[str, float]
    region: np.ndarray
    cell_size: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self, region: int | None = None) -> float:
        a = self.areas()
        return float(a.sum() if region is None else a[self.region == region].sum())

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def min_angle(self) -> float:
        p = self.nodes[self.triangles]
        worst = 180.0
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            worst = min(worst, float(np.degrees(np.arccos(np.clip(cosang, -1, 1))).min()))
        return worst

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted vertex pairs."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def submesh(self, region: int) -> tuple["PeriodicMesh", np.ndarray]:
        """Triangles of one region, renumbered; also returns the old index of each new node."""
        tri = self.triangles[self.region == region]
        used = np.unique(tri)
        new = -np.ones(self.n_nodes, dtype=np.int64)
        new[used] = np.arange(len(used))
        boundary = {}
        for tag, e in self.boundary.items():
            keep = np.all(new[e] >= 0, axis=1)
            if np.any(keep):
                boundary[tag] = new[e[keep]]
        periodic = {}
        for d, pairs in self.periodic.items():
            keep = np.all(new[pairs] >= 0, axis=1)
            periodic[d] = new[pairs[keep]]
        sub = PeriodicMesh(self.nodes[used], new[tri], boundary, periodic, dict(self.period),
                           self.region[self.region == region].copy(), self.cell_size, dict(self.meta))
        # the old interface becomes the outer boundary of each side
        if "interface_S" in sub.boundary:
            tag = "bottom" if region == ABOVE_S else "top"
            sub.boundary[tag] = sub.boundary.pop("interface_S")
        return sub, used

    def export_text(self, path) -> None:
        """Plain-text export.

        Layout::

            nodes <N>
            <x> <y>                       (N lines, index = line order)
            triangles <T>
            <a> <b> <c> <region>          (T lines, 0-based, counter-clockwise)
            edges <tag> <E>
            <a> <b>                       (E lines per tag block)
            periodic <direction> <P> <period>
            <master> <slave>              (P lines per direction block)
        """
        lines = [f"nodes {self.n_nodes}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.nodes]
        lines.append(f"triangles {self.n_triangles}")
        lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(self.triangles, self.region)]
        for tag in sorted(self.boundary):
            e = self.boundary[tag]
            lines.append(f"edges {tag} {len(e)}")
            lines += [f"{a} {b}" for a, b in e]
        for d in sorted(self.periodic):
            p = self.periodic[d]
            lines.append(f"periodic {d} {len(p)} {self.period[d]:.17g}")
            lines += [f"{a} {b}" for a, b in p]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# templates


def _segment_points(a, b, n):
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - t) * np.asarray(a, float) + t * np.asarray(b, float)


def _triangulate(points: np.ndarray, h: float, holes=None) -> tuple[np.ndarray, np.ndarray]:
    """Quality triangulation of a closed polygon given by its ordered vertices."""
    n = len(points)
    segs = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    data = {"vertices": points, "segments": segs}
    if holes is not None:
        data["holes"] = np.asarray(holes, float)
    max_area = 0.5 * h * h
    out = triangle.triangulate(data, f"pq{MIN_ANGLE}Ya{max_area:.12g}")
    return out["vertices"], out["triangles"]


def _polyline(points_list):
    """Join polyline pieces whose end equals the next start, dropping duplicates."""
    out = [points_list[0]]
    for seg in points_list[1:]:
        out.append(seg[1:])
    pts = np.concatenate(out)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    return pts


def _side_count(h: float) -> int:
    """Even number of boundary segments per unit side."""
    return 2 * max(2, math.ceil(0.5 / h))


def _merge(pieces) -> tuple[np.ndarray, np.ndarray]:
    """Merge (nodes, triangles) pieces, identifying coincident nodes."""
    nodes = np.concatenate([p[0] for p in pieces])
    offsets = np.cumsum([0] + [len(p[0]) for p in pieces[:-1]])
    tris = np.concatenate([p[1] + o for p, o in zip(pieces, offsets)])
    key = np.round(nodes * 1e9).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    nodes = nodes[first[order]]
    tris = remap[inverse[tris]]
    return nodes, _orient(nodes, tris)


def _orient(nodes, tris):
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _d4_maps():
    # symmetries of the unit square about its centre, acting on (x, y)
    return [
        lambda x, y: (x, y),
        lambda x, y: (1 - y, x),
        lambda x, y: (1 - x, 1 - y),
        lambda x, y: (y, 1 - x),
        lambda x, y: (x, 1 - y),
        lambda x, y: (1 - x, y),
        lambda x, y: (y, x),
        lambda x, y: (1 - y, 1 - x),
    ]


def _arc_count(inc: InclusionSpec, t0: float, t1: float, h: float) -> int:
    theta = np.linspace(t0, t1, 2001)
    pts = inc.boundary_points(theta)
    length = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return max(2, math.ceil(length / (0.5 * h)))


def _pore_template(inc: InclusionSpec, h: float) -> tuple[np.ndarray, np.ndarray]:
    n_side = _side_count(h)
    if inc.is_d4_symmetric:
        c = 0.5
        m = n_side // 2
        n_arc = _arc_count(inc, 0.0, np.pi / 4, h)
        arc = inc.boundary_points(np.linspace(0.0, np.pi / 4, n_arc + 1))
        diag_len = math.hypot(1 - arc[-1, 0], 1 - arc[-1, 1])
        diag = _segment_points(arc[-1], (1.0, 1.0), max(1, math.ceil(diag_len / h)))
        right = _segment_points((1.0, 1.0), (1.0, c), m)
        axis_len = 1.0 - arc[0, 0]
        axis = _segment_points((1.0, c), arc[0], max(1, math.ceil(axis_len / h)))
        wedge = _polyline([arc, diag, right, axis])
        v, t = _triangulate(wedge, h)
        pieces = []
        for f in _d4_maps():
            x, y = f(v[:, 0], v[:, 1])
            pieces.append((np.column_stack([x, y]), t))
        return _merge(pieces)
    # general inclusion: full cell with the inclusion as a hole
    n_arc = _arc_count(inc, 0.0, 2 * np.pi, h)
    side = np.linspace(0.0, 1.0, n_side + 1)
    outer = np.concatenate([
        np.column_stack([side[:-1], np.zeros(n_side)]),
        np.column_stack([np.ones(n_side), side[:-1]]),
        np.column_stack([side[::-1][:-1], np.ones(n_side)]),
        np.column_stack([np.zeros(n_side), side[::-1][:-1]]),
    ])
    hole = inc.boundary_points(np.linspace(0.0, 2 * np.pi, n_arc + 1)[:-1])
    pts = np.concatenate([outer, hole])
    no, nh = len(outer), len(hole)
    segs = np.concatenate([
        np.column_stack([np.arange(no), (np.arange(no) + 1) % no]),
        no + np.column_stack([np.arange(nh), (np.arange(nh) + 1) % nh]),
    ])
    out = triangle.triangulate(
        {"vertices": pts, "segments": segs, "holes": np.array([inc.center])},
        f"pq{MIN_ANGLE}Ya{0.5 * h * h:.12g}",
    )
    return out["vertices"], _orient(out["vertices"], out["triangles"])


def _free_template(h: float, height: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Inclusion-free cell [0,1] x [0,height], mirror-symmetric about x = 1/2."""
    n_side = _side_count(h)
    m = n_side // 2
    nv = max(1, math.ceil(height * n_side - 1e-9))
    bottom = _segment_points((0.5, 0.0), (1.0, 0.0), m)
    right = _segment_points((1.0, 0.0), (1.0, height), nv)
    top = _segment_points((1.0, height), (0.5, height), m)
    mid = _segment_points((0.5, height), (0.5, 0.0), nv)
    v, t = _triangulate(_polyline([bottom, right, top, mid]), h)
    mirrored = np.column_stack([1.0 - v[:, 0], v[:, 1]])
    return _merge([(v, t), (mirrored, t)])


# ---------------------------------------------------------------------------
# tagging


def _finish(nodes, tris, xmax, ymin, ymax, periodic_y=False, interface=True, cell_size=1.0, meta=None):
    tris = _orient(nodes, tris)
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, counts = np.unique(es, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    inner = uniq[counts == 2]
    x, y = nodes[:, 0], nodes[:, 1]
    tol = 1e-9 * max(1.0, xmax)
    on = lambda arr, v: np.abs(arr - v) < tol
    both = lambda mask, edges: mask[edges[:, 0]] & mask[edges[:, 1]]
    tags = {}
    left_e = both(on(x, 0.0), bnd)
    right_e = both(on(x, xmax), bnd)
    bottom_e = both(on(y, ymin), bnd) & ~left_e & ~right_e
    top_e = both(on(y, ymax), bnd) & ~left_e & ~right_e
    tags["periodic_left"] = bnd[left_e]
    tags["periodic_right"] = bnd[right_e]
    tags["bottom"] = bnd[bottom_e]
    tags["top"] = bnd[top_e]
    tags["pore"] = bnd[~(left_e | right_e | bottom_e | top_e)]
    if interface and ymin < 0 < ymax:
        tags["interface_S"] = inner[both(on(y, 0.0), inner)]
    tags = {k: v for k, v in tags.items() if len(v)}

    periodic = {"x": _pair(nodes, 0, 0.0, xmax, tol)}
    period = {"x": float(xmax)}
    if periodic_y:
        periodic["y"] = _pair(nodes, 1, ymin, ymax, tol)
        period["y"] = float(ymax - ymin)
    cen = nodes[tris].mean(axis=1)
    region = np.where(cen[:, 1] > 0.0, ABOVE_S, BELOW_S)
    if periodic_y:
        region[:] = BELOW_S
    return PeriodicMesh(nodes, tris, tags, periodic, period, region, cell_size, dict(meta or {}))


def _pair(nodes, axis, lo, hi, tol):
    other = 1 - axis
    lo_idx = np.flatnonzero(np.abs(nodes[:, axis] - lo) < tol)
    hi_idx = np.flatnonzero(np.abs(nodes[:, axis] - hi) < tol)
    lo_idx = lo_idx[np.argsort(nodes[lo_idx, other], kind="stable")]
    hi_idx = hi_idx[np.argsort(nodes[hi_idx, other], kind="stable")]
    if len(lo_idx) != len(hi_idx) or np.any(np.abs(nodes[lo_idx, other] - nodes[hi_idx, other]) > tol):
        raise GeometryError("periodic sides do not have matching nodes")
    return np.column_stack([lo_idx, hi_idx])


# ---------------------------------------------------------------------------
# public builders


def build_cell_mesh(inclusion: InclusionSpec, h: float) -> PeriodicMesh:
    """Fully periodic mesh of the fluid part of the unit cell."""
    if not h > 0:
        raise MeshConfigError("h must be positive")
    v, t = _pore_template(inclusion, h)
    return _finish(v, t, 1.0, 0.0, 1.0, periodic_y=True, interface=False,
                   meta={"kind": "cell", "h": h})


def _stack(templates_and_shifts):
    pieces = []
    for (v, t), (dx, dy) in templates_and_shifts:
        pieces.append((v + np.array([dx, dy]), t))
    return _merge(pieces)


def build_strip_mesh(inclusion: InclusionSpec, n_pore_layers: int = 6, top_height: float = 3.0,
                     h: float = 0.05) -> PeriodicMesh:
    """Truncated boundary-layer strip [0,1] x (-n_pore_layers, top_height)."""
    if n_pore_layers < 2:
        raise MeshConfigError("n_pore_layers must be at least 2")
    if top_height < 1:
        raise MeshConfigError("top_height must be at least 1")
    pore = _pore_template(inclusion, h)
    free = _free_template(h)
    items = [(pore, (0.0, -float(k))) for k in range(1, n_pore_layers + 1)]
    n_full = int(math.floor(top_height + 1e-12))
    items += [(free, (0.0, float(k))) for k in range(n_full)]
    rest = top_height - n_full
    if rest > 1e-9:
        items.append((_free_template(h, rest), (0.0, float(n_full))))
    v, t = _stack(items)
    return _finish(v, t, 1.0, -float(n_pore_layers), float(top_height),
                   meta={"kind": "strip", "h": h, "n_pore_layers": n_pore_layers, "top_height": top_height})


def build_box_mesh(width: float, y0: float, y1: float, h: float, structured: bool = False) -> PeriodicMesh:
    """Rectangle (0,width) x (y0,y1), periodic in x."""
    if structured:
        nx = max(1, round(width / h))
        ny = max(1, round((y1 - y0) / h))
        xs, ys = np.linspace(0, width, nx + 1), np.linspace(y0, y1, ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
        a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    else:
        n_side = max(2, math.ceil(width / h))
        n_up = max(2, math.ceil((y1 - y0) / h))
        xs, ys = np.linspace(0, width, n_side + 1), np.linspace(y0, y1, n_up + 1)
        poly = np.concatenate([
            np.column_stack([xs[:-1], np.full(n_side, y0)]),
            np.column_stack([np.full(n_up, width), ys[:-1]]),
            np.column_stack([xs[::-1][:-1], np.full(n_side, y1)]),
            np.column_stack([np.zeros(n_up), ys[::-1][:-1]]),
        ])
        nodes, tris = _triangulate(poly, h)
    return _finish(nodes, tris, width, y0, y1, interface=False, meta={"kind": "box", "h": h})


def n_cells_across(L: float, eps: float) -> int:
    n = L / eps
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        raise MeshConfigError(f"L/eps = {n} is not a positive integer")
    return int(round(n))


def build_eps_mesh(inclusion: InclusionSpec, eps: float, L: float = 1.0, h_free: float = 1.0,
                   K_depth: float = 1.0, h: float = 1.0 / 12, h_macro: float | None = None) -> PeriodicMesh:
    """Composite domain: free fluid (0,L) x (0,h_free) over eps-scaled pore cells.

    ``h`` is the edge length relative to one cell; ``h_macro`` the coarsest
    edge length (physical units) in the free-fluid part.
    """
    n = n_cells_across(L, eps)
    rows = K_depth / eps
    if abs(rows - round(rows)) > 1e-9 * max(1.0, rows) or round(rows) < 0:
        raise MeshConfigError(f"K_depth/eps = {rows} is not a non-negative integer")
    rows = int(round(rows))
    if h_macro is None:
        h_macro = max(4.0 * h * eps, 0.05)
    H = h_free / eps
    if H < 1:
        raise MeshConfigError("h_free must be at least one cell height")
    # everything in cell units, scaled by eps at the end
    pore = _pore_template(inclusion, h)
    free = _free_template(h)
    items = [(pore, (float(i), -float(j))) for j in range(1, rows + 1) for i in range(n)]
    items += [(free, (float(i), 0.0)) for i in range(n)]
    pieces_v, pieces_t = _stack(items)
    pieces = [(pieces_v, pieces_t)]
    if H > 1 + 1e-9:
        pieces.append(_graded_block(pieces_v, n, H, h, h_macro / eps))
    v, t = _merge(pieces)
    v = v * eps
    return _finish(v, t, n * eps, -rows * eps if rows else 0.0, H * eps, cell_size=eps,
                   meta={"kind": "eps", "eps": eps, "h": h, "rows": rows, "n": n, "h_macro": h_macro})


def _graded_block(band_nodes, n, H, h, h_top):
    """Triangulate [0,n] x [1,H] with spacing growing from h (bottom) to h_top."""
    bottom = band_nodes[np.abs(band_nodes[:, 1] - 1.0) < 1e-9]
    bx = np.sort(bottom[:, 0])
    ys = [1.0]
    while ys[-1] < H:
        step = min(h_top, h * 1.25 ** len(ys))
        ys.append(ys[-1] + step)
    ys = np.array(ys)
    ys = 1.0 + (ys - 1.0) * (H - 1.0) / (ys[-1] - 1.0)
    n_top = max(1, math.ceil(n / h_top))
    tx = np.linspace(0.0, float(n), n_top + 1)
    poly = np.concatenate([
        np.column_stack([bx[:-1], np.full(len(bx) - 1, 1.0)]),
        np.column_stack([np.full(len(ys) - 1, float(n)), ys[:-1]]),
        np.column_stack([tx[::-1][:-1], np.full(n_top, H)]),
        np.column_stack([np.zeros(len(ys) - 1), ys[::-1][:-1]]),
    ])
    segs = np.column_stack([np.arange(len(poly)), (np.arange(len(poly)) + 1) % len(poly)])
    out = triangle.triangulate({"vertices": poly, "segments": segs},
                               f"pq{MIN_ANGLE}Ya{0.5 * h_top * h_top:.12g}")
    return out["vertices"], out["triangles"]
