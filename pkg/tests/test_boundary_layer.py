import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedbj import boundary_layer as bl
from curvedbj.mesh import InclusionSpec, build_strip_mesh
from curvedbj.stokes import InterfaceSource, StokesSystem
from curvedbj.transform import CurveSpec

H = 0.1
_SOLVER = bl.BoundaryLayerSolver.build(InclusionSpec(), 6, 3.0, H)


@pytest.fixture(scope="module")
def curved():
    return _SOLVER.solve(0.1, 0.4, [0.7, -0.3])


def test_normal_only_jump_is_pure_pressure():
    # K along F^{-T} e2 = e2 (flat): beta = 0 and omega = -H(y2) solve the strip problem
    sol = _SOLVER.solve(0.0, 0.0, [0.0, 1.0])
    assert np.linalg.norm(sol.Cbl) < 1e-12
    assert sol.Cbl_omega == pytest.approx(-1.0, abs=1e-10)
    assert np.max(np.abs(sol.field.u)) < 1e-12


def test_constant_is_tangential(curved):
    assert curved.normal_residual < 1e-6
    assert np.linalg.norm(curved.Cbl) > 1e-3


@pytest.mark.parametrize("y2", [0.0, -1.0, -2.0, -3.0, -4.0])
def test_flux_vanishes_on_interface_and_below(curved, y2):
    assert abs(bl.line_flux(curved.field, y2, curved.slope)) < 1e-9


def test_pressure_plane_averages_match_constant(curved):
    _, w20 = bl.far_field(curved, 2.0)
    _, w25 = bl.far_field(curved, 2.5)
    assert abs(w20 - w25) < 1e-6
    assert abs(w20 - curved.Cbl_omega) < 1e-6


def test_velocity_far_field_equals_interface_constant(curved):
    vel, _ = bl.far_field(curved)
    assert np.allclose(vel, curved.Cbl, rtol=1e-9, atol=1e-12)
    assert bl.check_far_field(curved, 0.0) < 1e-9


def test_far_field_mismatch_raises(curved):
    bad = copy.copy(curved)
    bad.Cbl = 1.1 * curved.Cbl
    with pytest.raises(bl.TruncationError):
        bl.check_far_field(bad, 1e-8)


def test_decay_is_exponential(curved):
    rate, r2 = bl.decay_rate_fit(curved)
    assert rate > 0 and r2 > 0.99
    assert np.all(np.diff(curved.layer_norms) < 0)


def test_pore_boundaries_no_slip(curved):
    S = curved.field.space
    nodes = S.boundary_nodes(["pore", "bottom"])
    assert np.max(np.abs(curved.field.u[nodes])) == 0.0


def test_combination_matches_direct_solve():
    # the K-superposition against an independent solve with the combined source
    K = np.array([0.3, 1.2])
    sol = _SOLVER.solve(0.0, -0.5, K)
    system = StokesSystem(_SOLVER.strip, -0.5, ("pore", "bottom"), pressure="P1+P0", gauge="none")
    direct = system.solve(None, {"pore": 0.0, "bottom": 0.0}, InterfaceSource.constant(-K))
    assert np.allclose(sol.field.u, direct.u, atol=1e-12)
    assert np.allclose(sol.field.p, direct.p, atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(k1=st.floats(-3, 3), k2=st.floats(-3, 3), c=st.floats(-2, 2))
def test_constants_linear_in_jump(k1, k2, c):
    slope = 0.25
    a = _SOLVER.solve(0.0, slope, [k1, k2])
    b = _SOLVER.solve(0.0, slope, [c * k1, c * k2])
    e1, e2 = _SOLVER.solve(0.0, slope, [1, 0]), _SOLVER.solve(0.0, slope, [0, 1])
    assert np.allclose(b.Cbl, c * a.Cbl, atol=1e-12)
    assert np.allclose(a.Cbl, k1 * e1.Cbl + k2 * e2.Cbl, atol=1e-12)
    assert a.Cbl_omega == pytest.approx(k1 * e1.Cbl_omega + k2 * e2.Cbl_omega, abs=1e-10)


def test_deeper_strip_changes_constant_little():
    spec = CurveSpec(1.0, (), (0.1,))
    rows, delta = bl.truncation_study(spec, 0.1, [1.0, 0.2], [4, 8], InclusionSpec(), 3.0, H)
    assert [r.depth for r in rows] == [4, 8]
    assert delta < 1e-5


def test_solve_bl_wrapper_and_csv(tmp_path, wavy):
    strip = build_strip_mesh(InclusionSpec(), 4, 2.0, 0.2)
    sol = bl.solve_bl(wavy, 0.3, [1.0, 0.0], strip)
    assert sol.slope == pytest.approx(float(wavy.dg(0.3)))
    C, Cw = bl.decay_constants(sol)
    assert np.array_equal(C, sol.Cbl) and Cw == sol.Cbl_omega
    path = tmp_path / "bl.csv"
    bl.write_csv(path, [sol])
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == bl.CSV_HEADER and len(lines) == 2


def test_shallow_strip_rejects_decay_fit():
    solver = bl.BoundaryLayerSolver.build(InclusionSpec(), 2, 2.0, 0.25)
    sol = solver.solve(0.0, 0.0, [1.0, 0.0])
    with pytest.raises(ValueError):
        bl.decay_rate_fit(sol)


def test_truncation_delta_edge_cases():
    assert np.isnan(bl.truncation_delta([bl.TruncationRow(4, np.ones(2), 0.0)]))
    rows = [bl.TruncationRow(4, np.zeros(2), 0.0), bl.TruncationRow(8, np.zeros(2), 0.0)]
    assert bl.truncation_delta(rows) == 0.0
