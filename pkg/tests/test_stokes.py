import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedbj.boundary_layer import line_flux
from curvedbj.fem import P2Space, stiffness
from curvedbj.mesh import build_box_mesh, build_cell_mesh
from curvedbj.stokes import (SingularSystemError, SolverConfigError, StokesSystem, coercivity_bounds,
                             fourier_norm, loglog_slope, manufactured_convergence, solve_transformed_stokes,
                             trace_fourier_norm)
from curvedbj.transform import CurveSpec, metric_eigenvalues


def classical_stokes_blocks(space):
    """Laplace and divergence element matrices integrated with the edge-midpoint rule.

    The rule is exact for quadratics, which covers grad P2 . grad P2 and
    P1 * grad P2 on straight triangles.
    """
    mesh = space.mesh
    nv, n2 = space.n_vertices, space.n_nodes
    mids = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    rows_a, cols_a, vals_a = [], [], []
    rows_b, cols_b, vals_b = [[], []], [[], []], [[], []]
    for t, tri in enumerate(mesh.triangles):
        p = mesh.nodes[tri]
        T = np.array([[1, 1, 1], p[:, 0], p[:, 1]])
        gl = np.linalg.inv(T)[:, 1:]  # gradients of barycentrics, (3, 2)
        area = 0.5 * abs(np.linalg.det(T))
        K = np.zeros((6, 6))
        D = np.zeros((2, 3, 6))
        for l in mids:
            g = np.array([
                (4 * l[0] - 1) * gl[0], (4 * l[1] - 1) * gl[1], (4 * l[2] - 1) * gl[2],
                4 * (l[1] * gl[0] + l[0] * gl[1]), 4 * (l[2] * gl[1] + l[1] * gl[2]), 4 * (l[0] * gl[2] + l[2] * gl[0]),
            ])
            K += area / 3 * g @ g.T
            for k in range(2):
                D[k] += area / 3 * np.outer(l, g[:, k])
        c = space.cells[t]
        rows_a.append(np.repeat(c, 6))
        cols_a.append(np.tile(c, 6))
        vals_a.append(K.ravel())
        for k in range(2):
            rows_b[k].append(np.repeat(tri, 6))
            cols_b[k].append(np.tile(c, 3))
            vals_b[k].append(D[k].ravel())
    cat = np.concatenate
    A = sp.csr_matrix((cat(vals_a), (cat(rows_a), cat(cols_a))), shape=(n2, n2))
    B = sp.hstack([sp.csr_matrix((cat(vals_b[k]), (cat(rows_b[k]), cat(cols_b[k]))), shape=(nv, n2))
                   for k in range(2)])
    return A, B


def test_flat_metric_reduces_to_classical_stokes(circle):
    mesh = build_cell_mesh(circle, 0.2)
    system = StokesSystem(mesh, CurveSpec(1.0), ("pore",))
    S = system.space
    # same quadrature, untransformed operators: the reduction must be exact
    K0 = stiffness(S, None)
    _, grad = S.basis_at()
    w = S.weights()
    psi = S.mesh.triangles
    from curvedbj.fem import QUAD4, p1_basis, scatter_matrix
    ph = p1_basis(QUAD4[0])
    B0 = sp.hstack([scatter_matrix(psi, S.cells, np.einsum("tq,pq,tqb->tpb", w, ph, grad[..., k]),
                                   (S.n_vertices, S.n_nodes)) for k in range(2)])
    assert abs(system.A_full - sp.block_diag([K0, K0])).max() < 1e-14
    assert abs(system.B_full - B0).max() < 1e-14
    # independent assembly with another exact rule agrees up to roundoff
    A, B = classical_stokes_blocks(S)
    assert abs(system.A_full - sp.block_diag([A, A])).max() < 1e-13 * abs(A).max()
    assert abs(system.B_full - B).max() < 1e-13 * abs(B).max()


def test_poiseuille_is_exact():
    mesh = build_box_mesh(1.0, 0.0, 1.0, 0.2)
    sol = solve_transformed_stokes(mesh, 0.0, (1.0, 0.0), {"top": None, "bottom": None})
    exact = lambda pts: np.stack([0.5 * pts[..., 1] * (1 - pts[..., 1]), 0 * pts[..., 1]], axis=-1)
    assert sol.l2_velocity(exact) < 1e-10
    assert np.ptp(sol.p) < 1e-10


def test_zero_data_gives_zero(circle):
    sol = solve_transformed_stokes(build_cell_mesh(circle, 0.25), 0.3, None, {"pore": None})
    assert np.max(np.abs(sol.u)) == 0.0 and np.max(np.abs(sol.p)) == 0.0


def test_dirichlet_values_exact(wavy):
    mesh = build_box_mesh(1.0, 0.0, 1.0, 0.25)
    data = lambda pts: np.stack([np.cos(2 * np.pi * pts[:, 0]), np.zeros(len(pts))], axis=1)
    sol = solve_transformed_stokes(mesh, wavy, None, {"bottom": data, "top": None})
    nodes = sol.space.boundary_nodes(["bottom"])
    assert np.max(np.abs(sol.u[nodes] - data(sol.space.coords[nodes]))) == 0.0


def test_mean_gauge_zero_mean(wavy, circle):
    sol = solve_transformed_stokes(build_cell_mesh(circle, 0.2), wavy, (1.0, 0.5), {"pore": None})
    assert abs(sol.integral_pressure()) < 1e-12 * max(1.0, np.max(np.abs(sol.p)))


@pytest.mark.parametrize("spec", [CurveSpec(1.0), CurveSpec(1.0, (), (0.2,))])
def test_manufactured_rates(spec):
    table = manufactured_convergence(spec, levels=3)
    assert table.velocity_slope >= 2.7
    assert table.pressure_slope >= 1.7
    assert all(np.diff(table.velocity_l2) < 0)


def test_single_level_has_no_rate():
    table = manufactured_convergence(CurveSpec(1.0), levels=1)
    assert table.velocity_slope is None and table.pressure_slope is None
    assert math.isfinite(table.velocity_l2[0])
    assert loglog_slope([0.1], [1.0]) is None
    assert loglog_slope([0.1, 0.05], [4.0, 1.0]) == pytest.approx(2.0)


def test_enriched_pressure_conserves_mass_elementwise(wavy):
    # inflow through the bottom leaves through the top
    mesh = build_box_mesh(1.0, 0.0, 1.0, 0.125, structured=True)
    inflow = lambda pts: np.stack([0 * pts[:, 0], 1 + np.sin(2 * np.pi * pts[:, 0])], axis=1)
    outflow = lambda pts: np.stack([0 * pts[:, 0], np.ones(len(pts))], axis=1)
    system = StokesSystem(mesh, wavy, ("bottom", "top"), pressure="P1+P0")
    sol = system.solve(None, {"bottom": inflow, "top": outflow})
    # discrete transformed divergence per element, the P0 rows of B
    div_t = (system.B_full @ sol.u.T.ravel())[mesh.n_nodes:]
    assert np.max(np.abs(div_t[1:])) < 1e-12
    # the pinned element's equation is dropped; it carries the quadrature-level
    # mismatch between the inflow and outflow data
    assert abs(div_t[0]) < 1e-7
    # line fluxes agree up to the quadrature error of the non-polynomial metric
    edges = mesh.edges()
    for y2 in (0.25, 0.5, 0.875):
        on = np.abs(mesh.nodes[:, 1] - y2) < 1e-12
        pts, w, v = sol.trace_on_edges(edges[on[edges[:, 0]] & on[edges[:, 1]]])
        flux = np.sum(w * (v[:, 1] - wavy.dg(pts[:, 0]) * v[:, 0]))
        assert flux == pytest.approx(1.0, abs=1e-6)


def test_flat_line_flux_helper():
    mesh = build_box_mesh(1.0, 0.0, 1.0, 0.125, structured=True)
    inflow = lambda pts: np.stack([0 * pts[:, 0], 1 + np.sin(2 * np.pi * pts[:, 0])], axis=1)
    outflow = lambda pts: np.stack([0 * pts[:, 0], np.ones(len(pts))], axis=1)
    sol = solve_transformed_stokes(mesh, 0.0, None, {"bottom": inflow, "top": outflow}, pressure="P1+P0")
    assert line_flux(sol, 0.5, 0.0) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        line_flux(sol, 0.3, 0.0)


def test_gauge_configuration_errors(circle):
    mesh = build_cell_mesh(circle, 0.25)
    with pytest.raises(SingularSystemError):
        StokesSystem(mesh, 0.0, ("pore",), gauge="none")
    box = build_box_mesh(1.0, 0.0, 1.0, 0.25)
    with pytest.raises(SolverConfigError):
        StokesSystem(box, 0.0, ("bottom",), gauge="mean")
    with pytest.raises(SolverConfigError):
        StokesSystem(box, 0.0, ("bottom", "top"), gauge="average")
    with pytest.raises(SolverConfigError):
        StokesSystem(box, 0.0, ("bottom", "top"), pressure="P2")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), amp=st.floats(0.0, 0.4))
def test_coercivity_and_continuity(seed, amp):
    rng = np.random.default_rng(seed)
    spec = CurveSpec(1.0, (), (amp,))
    space = _SPACE
    slopes = spec.dg(space.quad_points()[..., 0])
    from curvedbj.fem import metric_fields
    G, _ = metric_fields(slopes)
    A = stiffness(space, G)
    K0 = stiffness(space, None)
    kF, KF = coercivity_bounds(spec.dg(np.linspace(0, 1, 2001)))
    u, v = rng.standard_normal((2, space.n_nodes))
    nu, nv = math.sqrt(u @ K0 @ u), math.sqrt(v @ K0 @ v)
    assert u @ A @ u >= kF * nu**2 * (1 - 1e-9)
    assert abs(u @ A @ v) <= KF * nu * nv * (1 + 1e-9)


_SPACE = P2Space(build_box_mesh(1.0, 0.0, 1.0, 0.25))


def test_coercivity_bounds_closed_form():
    lo, hi = coercivity_bounds(np.array([0.0, 1.0, -0.5]))
    assert lo == pytest.approx(metric_eigenvalues(1.0)[0])
    assert hi == pytest.approx(metric_eigenvalues(1.0)[1])


def test_fourier_norm_of_constant():
    for s in (-0.5, 0.0, 0.5):
        assert fourier_norm(np.full(64, 3.0), 2.0, s) == pytest.approx(3.0 * math.sqrt(2.0), rel=1e-14)


def test_fourier_norm_single_mode():
    L, N = 1.0, 128
    x = L * np.arange(N) / N
    v = np.cos(2 * np.pi * 3 * x)
    xi = 2 * np.pi * 3
    # two coefficients of modulus 1/2
    expected = math.sqrt(L * 2 * 0.25 * (1 + xi**2) ** -0.5)
    assert fourier_norm(v, L, -0.5) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-2, 2), min_size=1, max_size=6), L=st.floats(0.5, 3.0))
def test_trace_norm_matches_samples_and_is_below_l2(coef, L):
    # band-limited trace on a fine partition of [0, L) with Gauss points per edge
    edges = np.linspace(0, L, 97)
    gx, gw = np.polynomial.legendre.leggauss(6)
    a, b = edges[:-1], edges[1:]
    x = (a[:, None] + 0.5 * (gx + 1) * (b - a)[:, None]).ravel()
    w = (0.5 * gw * (b - a)[:, None]).ravel()
    f = lambda t: sum(c * np.cos(2 * np.pi * (k + 1) * t / L + k) for k, c in enumerate(coef))
    quad = trace_fourier_norm(x, w, f(x), L, -0.5)
    samples = fourier_norm(f(L * np.arange(256) / 256), L, -0.5)
    l2 = math.sqrt(np.sum(w * f(x) ** 2))
    assert quad == pytest.approx(samples, rel=1e-6, abs=1e-12)
    assert quad <= l2 * (1 + 1e-9) + 1e-12
