"""Acceptance criteria 1-11 at their stated tolerances.

Each test records exactly one PASS/FAIL line (shown in the terminal summary)
before asserting. The default pipeline is run twice into fresh directories;
the first run feeds the boundary-layer, effective-model and sweep criteria.
"""
import time

import numpy as np
import pytest
import scipy.sparse as sp

from curvedbj import boundary_layer as bl
from curvedbj.cells import CellSolver, richardson
from curvedbj.config import WorkbenchConfig
from curvedbj.fem import QUAD4, p1_basis, scatter_matrix, stiffness
from curvedbj.mesh import InclusionSpec, build_cell_mesh
from curvedbj.pipeline import read_csv, run_stages, x1_grid
from curvedbj.stokes import StokesSystem, manufactured_convergence
from curvedbj.transform import CurveSpec, JacobianSample, metric_eigenvalues, verify_identities

CURVES = {"flat": CurveSpec(1.0), "0.2 sin": CurveSpec(1.0, (), (0.2,))}
CFG = WorkbenchConfig()


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"default{k}")
        t0 = time.perf_counter()
        res = run_stages(CFG, out)
        runs.append((out, time.perf_counter() - t0, {r.stage: r.seconds for r in res}))
    return runs


@pytest.fixture(scope="module")
def run(default_runs):
    return default_runs[0]


@pytest.fixture(scope="module")
def strip_solver():
    d = CFG.discretization
    return bl.BoundaryLayerSolver.build(CFG.inclusion, CFG.strip.n_pore_layers, CFG.strip.top_height, d.h_strip)


def dns_table(out):
    header, data = read_csv(out / "dns" / "dns.csv")
    return {k: data[:, j] for j, k in enumerate(header)}


def rates_table(out):
    rows = (out / "sweep" / "rates.csv").read_text().splitlines()[1:]
    return {r.split(",")[0]: float(r.split(",")[1]) for r in rows}


def test_criterion_1_transform_identities(verdict):
    worst, slowest = 0.0, 0.0
    for spec in CURVES.values():
        t0 = time.perf_counter()
        rep = verify_identities(spec)
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, rep.max_residual)
    ok = worst < 1e-10 and slowest < 5.0
    assert verdict(1, ok, f"max identity residual {worst:.1e} (< 1e-10), slowest {slowest:.2f} s (< 5 s)")


def test_criterion_2_jacobian_and_metric(verdict):
    slopes = np.concatenate([np.linspace(-5, 5, 201)] +
                            [spec.dg(np.linspace(0, 1, 64, endpoint=False)) for spec in CURVES.values()] +
                            [CFG.curve.dg(x1_grid(CFG))])
    det_err = eig_err = prod_err = 0.0
    for s in slopes:
        J = JacobianSample.from_slope(s)
        det_err = max(det_err, abs(np.linalg.det(J.F) - 1.0))
        ev = np.linalg.eigvalsh(J.metric)
        eig_err = max(eig_err, float(np.max(np.abs(ev - [J.eig_lo, J.eig_hi]) / max(1.0, ev[1]))))
        lo, hi = metric_eigenvalues(s)
        prod_err = max(prod_err, abs(lo * hi - 1.0))
    ok = det_err < 1e-15 and eig_err < 1e-12 and prod_err < 1e-12
    assert verdict(2, ok, f"|det F - 1| {det_err:.1e}, eigenvalue error {eig_err:.1e}, "
                          f"|lam1 lam2 - 1| {prod_err:.1e} over {len(slopes)} slopes")


def test_criterion_3_manufactured_rates(verdict):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, spec in CURVES.items():
        tab = manufactured_convergence(spec, levels=4)
        ok &= tab.velocity_slope >= 2.7 and tab.pressure_slope >= 1.7
        parts.append(f"{name} u {tab.velocity_slope:.2f} p {tab.pressure_slope:.2f}")
    sec = time.perf_counter() - t0
    ok &= sec < 120
    assert verdict(3, ok, f"{'; '.join(parts)} (>= 2.7 / 1.7), {sec:.0f} s (< 120 s)")


def test_criterion_4_flat_reduction(verdict):
    mesh = build_cell_mesh(InclusionSpec(), 1.0 / 12)
    system = StokesSystem(mesh, CurveSpec(1.0), ("pore",))
    S = system.space
    K0 = stiffness(S, None)
    _, grad = S.basis_at()
    w = S.weights()
    ph = p1_basis(QUAD4[0])
    B0 = sp.hstack([scatter_matrix(mesh.triangles, S.cells, np.einsum("tq,pq,tqb->tpb", w, ph, grad[..., k]),
                                   (S.n_vertices, S.n_nodes)) for k in range(2)])
    da = abs(system.A_full - sp.block_diag([K0, K0])).max()
    db = abs(system.B_full - B0).max()
    ok = da < 1e-14 and db < 1e-14
    assert verdict(4, ok, f"g = 0 operator vs untransformed Stokes: A {da:.1e}, B {db:.1e} (< 1e-14)")


def test_criterion_5_permeability(verdict):
    t0 = time.perf_counter()
    h = CFG.discretization.h_cell
    solver = CellSolver(CFG.inclusion, h)
    A0 = solver.sample(0.0, 0.0).A
    iso = max(abs(A0[0, 1]), abs(A0[1, 0]), abs(A0[0, 0] - A0[1, 1])) / np.linalg.norm(A0)
    x = x1_grid(CFG)
    slopes = CFG.curve.dg(x)
    by_slope = {float(s): solver.sample(0.0, float(s)) for s in np.unique(slopes)}
    lam_min = min(float(np.min(np.linalg.eigvalsh(0.5 * (p.A + p.A.T)))) for p in by_slope.values())
    asym = max(p.asymmetry for p in by_slope.values())
    steep = float(slopes[np.argmax(np.abs(slopes))])
    seq = [CellSolver(CFG.inclusion, hh).sample(0.0, steep).A[0, 0] for hh in (h, h / 2, h / 4)]
    _, _, change = richardson(seq)
    sec = time.perf_counter() - t0
    ok = iso < 1e-6 and lam_min > 0 and asym < CFG.tolerances.symmetry and change < 0.01 and sec < 120
    assert verdict(5, ok, f"F = I anisotropy {iso:.1e} (< 1e-6), min eigenvalue {lam_min:.2e} over "
                          f"{len(x)} samples, asymmetry {asym:.1e}, Richardson change {100 * change:.2f}% (< 1%), "
                          f"{sec:.0f} s (< 120 s)")


def test_criterion_6_boundary_layer_identities(run, strip_solver, verdict):
    out = run[0]
    _, kdata = read_csv(out / "u0" / "stress_jump.csv")
    worst_n = worst_flux = worst_avg = 0.0
    for x1, K1, K2 in kdata:
        sol = strip_solver.solve(float(x1), float(CFG.curve.dg(x1)), [K1, K2])
        worst_n = max(worst_n, sol.normal_residual)
        for y2 in (0.0, -1.0, -2.0, -3.0, -4.0):
            worst_flux = max(worst_flux, abs(bl.line_flux(sol.field, y2, sol.slope)))
        _, w20 = bl.far_field(sol, 2.0)
        _, w25 = bl.far_field(sol, 2.5)
        worst_avg = max(worst_avg, abs(w20 - w25), abs(w20 - sol.Cbl_omega))
    ok = worst_n < 1e-6 and worst_flux < 1e-9 and worst_avg < 1e-6
    assert verdict(6, ok, f"normal residual {worst_n:.1e} (< 1e-6), line fluxes {worst_flux:.1e} (< 1e-9), "
                          f"pressure plane averages {worst_avg:.1e} (< 1e-6) at {len(kdata)} samples")


# the 12-layer strip decays to roundoff (~1e-15) below layer 7, where norms are no longer monotone
@pytest.mark.filterwarnings("ignore:boundary-layer gradient norms are not monotone")
def test_criterion_7_decay_and_truncation(run, verdict):
    out = run[0]
    _, b = read_csv(out / "bl" / "bl.csv")
    _, kdata = read_csv(out / "u0" / "stress_jump.csv")
    # bl.csv: x1, slope, C1, C2, C_omega, decay_rate, R2, truncation_delta
    r2_min, rate_min = float(np.min(b[:, 6])), float(np.min(b[:, 5]))
    i = int(np.argmax(np.abs(b[:, 1])))
    t0 = time.perf_counter()
    _, delta = bl.truncation_study(CFG.curve, float(kdata[i, 0]), kdata[i, 1:3], [6, 12], CFG.inclusion,
                                   CFG.strip.top_height, CFG.discretization.h_strip)
    sec = time.perf_counter() - t0
    ok = r2_min > 0.99 and rate_min > 0 and delta < 1e-5 and sec < 180
    assert verdict(7, ok, f"decay fit R2 >= {r2_min:.4f} (> 0.99), log-slope <= {-rate_min:.2f} (< 0), "
                          f"6 vs 12 layers change {delta:.1e} (< 1e-5), {sec:.0f} s (< 180 s)")


def test_criterion_8_slip_and_compatibility(run, verdict):
    out = run[0]
    _, e = read_csv(out / "effective" / "effective.csv")
    _, s = read_csv(out / "effective" / "slip.csv")
    slip = float(np.max(np.abs(s[:, 2] - s[:, 3])))
    compat = float(np.max(np.abs(e[:, 3])))
    ok = slip < 1e-8 and compat < 1e-6 and float(np.max(np.abs(s[:, 2]))) > 0
    assert verdict(8, ok, f"slip law deviation {slip:.1e} (< 1e-8), compatibility {compat:.1e} (< 1e-6)")


def test_criterion_9_eps_sweep(run, verdict):
    out, _, seconds = run
    d, rates = dns_table(out), rates_table(out)
    ok, parts = True, []
    for key, floor in (("err_u_L2_O1", 1.0), ("err_M", 1.0), ("err_p_L1_O1", 0.7), ("err_u_H12_O1", 0.7)):
        dec = bool(np.all(np.diff(d[key]) < 0))
        ok &= dec and rates[key] >= floor
        parts.append(f"{key} {rates[key]:.2f} (>= {floor}{'' if dec else ', not decreasing'})")
    sweep_sec = seconds["dns"] + seconds["sweep"]
    ok &= sweep_sec <= 600
    assert verdict(9, ok, f"{', '.join(parts)}; sweep {sweep_sec:.0f} s (<= 600 s)")


def test_criterion_10_porous_part(run, verdict):
    d = dns_table(run[0])
    ratio = d["porous_ratio"]
    spread = float(ratio.max() / ratio.min())
    dec = bool(np.all(np.diff(d["darcy_gap"]) < 0))
    ok = spread < 10 and dec
    assert verdict(10, ok, f"eps^-2 porous ratio spread {spread:.2f} (< 10), Darcy gap "
                           f"{' > '.join(f'{v:.2e}' for v in d['darcy_gap'])}")


def test_criterion_11_reproducible_outputs(default_runs, verdict):
    (a, _, _), (b, _, _) = default_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    differ = [str(p) for p in files if (a / p).read_bytes() != (b / p).read_bytes()]
    ok = bool(files) and not differ and files == sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    assert verdict(11, ok, f"{len(files)} CSV files byte-identical across two fresh runs"
                           + (f"; differing: {differ}" if differ else ""))


def test_plot_series_of_default_run(run):
    from curvedbj.pipeline import export_plots
    paths = {p.name: p for p in export_plots(run[0])}
    conv = [p for n, p in paths.items() if n.startswith("convergence_")]
    assert conv
    for p in conv:
        assert len(p.read_text().splitlines()) == 1 + len(CFG.eps_list)
    decay = np.loadtxt(paths["decay_curves.dat"], ndmin=2)
    assert np.all(decay[:, 1] > 0)
