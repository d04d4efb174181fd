import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import connected_components

from curvedbj.mesh import (ABOVE_S, BELOW_S, GeometryError, InclusionSpec, MeshConfigError, build_box_mesh,
                           build_cell_mesh, build_eps_mesh, build_strip_mesh, n_cells_across)


def n_loops(mesh, tag="pore"):
    e = mesh.boundary[tag]
    used = np.unique(e)
    idx = {v: k for k, v in enumerate(used)}
    a = np.array([idx[v] for v in e[:, 0]])
    b = np.array([idx[v] for v in e[:, 1]])
    g = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(len(used),) * 2)
    return connected_components(g, directed=False)[0]


def test_cell_porosity_and_quality(circle):
    mesh = build_cell_mesh(circle, 0.05)
    # polygonal inclusion: area error O(h^2)
    assert mesh.area() == pytest.approx(1 - math.pi / 16, abs=2e-3)
    assert mesh.min_angle() > 20.0
    assert n_loops(mesh) == 1
    assert set(mesh.periodic) == {"x", "y"}


def test_periodic_pairs_match(circle):
    mesh = build_cell_mesh(circle, 0.1)
    for d, axis in (("x", 1), ("y", 0)):
        pairs = mesh.periodic[d]
        assert np.array_equal(mesh.nodes[pairs[:, 0], axis], mesh.nodes[pairs[:, 1], axis])
        other = 1 - axis
        assert np.allclose(mesh.nodes[pairs[:, 1], other] - mesh.nodes[pairs[:, 0], other], 1.0)


def test_circle_mesh_is_d4_symmetric(circle):
    mesh = build_cell_mesh(circle, 0.1)
    key = lambda pts: set(map(tuple, np.round(pts * 1e10).astype(np.int64)))
    nodes = mesh.nodes
    assert key(nodes) == key(np.column_stack([nodes[:, 1], nodes[:, 0]]))
    assert key(nodes) == key(np.column_stack([1 - nodes[:, 0], nodes[:, 1]]))


@pytest.mark.parametrize("eps,count", [(0.25, 16), (0.125, 64)])
def test_eps_mesh_inclusion_count(circle, eps, count):
    mesh = build_eps_mesh(circle, eps, h=0.2)
    assert n_loops(mesh) == count
    assert mesh.area(BELOW_S) == pytest.approx(1 - math.pi / 16, abs=1e-2)
    assert mesh.area(ABOVE_S) == pytest.approx(1.0, abs=1e-12)


def test_no_triangle_crosses_interface(circle):
    mesh = build_eps_mesh(circle, 0.25, h=0.2)
    y = mesh.nodes[mesh.triangles, 1]
    assert np.all((y.min(axis=1) >= -1e-12) | (y.max(axis=1) <= 1e-12))
    on_s = np.abs(mesh.nodes[:, 1]) < 1e-12
    assert np.any(on_s)


def test_strip_tags_and_submesh(circle):
    mesh = build_strip_mesh(circle, 4, 2.0, 0.2)
    assert {"interface_S", "pore", "bottom", "top", "periodic_left", "periodic_right"} <= set(mesh.boundary)
    assert mesh.nodes[:, 1].min() == -4.0 and mesh.nodes[:, 1].max() == 2.0
    above, used = mesh.submesh(ABOVE_S)
    assert above.area() == pytest.approx(2.0, abs=1e-12)
    assert "bottom" in above.boundary and "pore" not in above.boundary
    assert np.array_equal(above.nodes, mesh.nodes[used])
    below, _ = mesh.submesh(BELOW_S)
    assert "top" in below.boundary


def test_fractional_top_height(circle):
    mesh = build_strip_mesh(circle, 2, 1.5, 0.25)
    assert mesh.nodes[:, 1].max() == pytest.approx(1.5)


def test_box_mesh_structured_and_unstructured():
    s = build_box_mesh(2.0, -1.0, 0.0, 0.25, structured=True)
    assert s.n_triangles == 2 * 8 * 4
    u = build_box_mesh(2.0, -1.0, 0.0, 0.25)
    assert u.area() == pytest.approx(2.0, abs=1e-12)
    assert "interface_S" not in u.boundary


def test_export_text_layout(tmp_path, circle):
    mesh = build_cell_mesh(circle, 0.25)
    path = tmp_path / "m.txt"
    mesh.export_text(path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"nodes {mesh.n_nodes}"
    assert lines[mesh.n_nodes + 1] == f"triangles {mesh.n_triangles}"
    assert any(l.startswith("edges pore ") for l in lines)
    assert any(l.startswith("periodic y ") for l in lines)


def test_bad_inclusions():
    with pytest.raises(GeometryError):
        InclusionSpec(radius=0.49)
    with pytest.raises(GeometryError):
        InclusionSpec(kind="square")
    with pytest.raises(GeometryError):
        InclusionSpec(kind="star", radius=0.2, star_modes=(0.0, 0.0, 1.5))
    with pytest.raises(GeometryError):
        InclusionSpec(radius=-0.1)


def test_bad_mesh_parameters(circle):
    with pytest.raises(MeshConfigError):
        n_cells_across(1.0, 0.3)
    with pytest.raises(MeshConfigError):
        build_eps_mesh(circle, 0.25, K_depth=0.3, h=0.2)
    with pytest.raises(MeshConfigError):
        build_strip_mesh(circle, 1)
    with pytest.raises(MeshConfigError):
        build_cell_mesh(circle, 0.0)


def test_star_inclusion_mesh():
    inc = InclusionSpec("star", radius=0.2, star_modes=(0.0, 0.0, 0.2))
    assert not inc.is_d4_symmetric
    mesh = build_cell_mesh(inc, 0.1)
    assert mesh.area() == pytest.approx(1 - inc.area, abs=5e-3)


@settings(max_examples=15, deadline=None)
@given(radius=st.floats(0.1, 0.4), h=st.sampled_from([0.1, 0.2]))
def test_cell_area_tracks_inclusion(radius, h):
    inc = InclusionSpec(radius=radius)
    mesh = build_cell_mesh(inc, h)
    # an inscribed polygon with chords c misses about pi c^2 / 6 of the disc; chords are <= h/2
    assert 0 <= mesh.area() - (1 - inc.area) < math.pi * (0.5 * h) ** 2 / 4
    assert np.all(mesh.areas() > 0)
