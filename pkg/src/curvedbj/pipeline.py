"""Stage orchestration with content-hash caching.

Each stage writes into ``<out>/<stage>/`` a set of CSV files, field exports and
a ``stage.json`` manifest holding the hash of the configuration subset it
depends on. A stage whose manifest hash matches and whose files are all
present is skipped. Downstream stages read upstream results back from the
CSV files, which store floats with ``repr`` so the round trip is exact.

Independent units (x1 samples grouped by slope, eps values) go through
``_map``, which runs them in-process for ``jobs == 1`` and on a process pool
otherwise; the unit functions are identical in both cases, so the outputs do
not depend on the job count.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import boundary_layer as bl
from . import cells
from .config import STAGES, WorkbenchConfig
from .dns import RECORD_KEYS, ConvergenceReport, EpsMeshParams, error_report, free_part, solve_eps_problem
from .effective import (EffectiveCoefficients, FreeFluidSolver, check_compatibility, effective_solution,
                        mass_flow, sigma_nodes, slip_and_massflow, stress_jump)
from .errors import NumericalQualityError, ValidationError
from .mesh import InclusionSpec, build_box_mesh
from .transform import jacobian, metric_eigenvalues, verify_identities

log = logging.getLogger("curvedbj")

DEPENDS = {
    "transform": (),
    "cell": (),
    "u0": (),
    "bl": ("u0",),
    "effective": ("cell", "bl"),
    "dns": ("effective",),
    "sweep": ("dns",),
}

STAGE_FILES = {
    "transform": ("identities.csv", "metric.csv"),
    "cell": ("cells.csv", "cell_w1.txt", "cell_w2.txt"),
    "u0": ("stress_jump.csv", "u0_summary.csv", "u0_field.txt"),
    "bl": ("bl.csv", "bl_decay.csv", "bl_field.txt"),
    "effective": ("effective.csv", "slip.csv", "ueff_field.txt"),
    "dns": ("dns.csv", "dns_sigma.csv"),
    "sweep": ("rates.csv",),
}


class StageFailure(Exception):
    """Wraps the error of a failed stage; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException, out: Path):
        super().__init__(f"stage '{stage}' failed: {cause} (partial results in {out})")
        self.stage = stage
        self.cause = cause


class MissingArtifactError(ValidationError):
    pass


@dataclass
class StageResult:
    stage: str
    status: str  # "ran" or "cached"
    seconds: float


# ---------------------------------------------------------------------------
# helpers


def _map(fn, args: list, jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(fn, args))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MissingArtifactError(f"{path} is empty")
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(rows[0]))


def x1_grid(cfg: WorkbenchConfig) -> np.ndarray:
    n = cfg.x1_points
    return cfg.box.L * np.arange(n) / n


def _slope_groups(cfg: WorkbenchConfig) -> dict[float, list[int]]:
    groups: dict[float, list[int]] = {}
    for i, x in enumerate(x1_grid(cfg)):
        groups.setdefault(float(cfg.curve.dg(x)), []).append(i)
    return groups


def _load_stage(out: Path, stage: str, name: str) -> tuple[list[str], np.ndarray]:
    path = out / stage / name
    if not path.exists():
        raise MissingArtifactError(f"missing artifact {path}; run the '{stage}' stage first")
    return read_csv(path)


# ---------------------------------------------------------------------------
# stages


def stage_transform(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    tol = cfg.tolerances.transform_identity
    rep = verify_identities(cfg.curve)
    _write_rows(out / "identities.csv", ["identity", "residual"],
                [(name, v) for name, v in sorted(rep.residuals.items())])
    rows = []
    for x in x1_grid(cfg):
        J = jacobian(cfg.curve, x)
        lo, hi = metric_eigenvalues(cfg.curve.dg(x))
        ev = np.linalg.eigvalsh(J.metric)
        rows.append((x, cfg.curve.dg(x), float(lo), float(hi), float(lo * hi),
                     abs(np.linalg.det(J.F) - 1.0), float(np.max(np.abs(ev - [lo, hi])))))
    _write_rows(out / "metric.csv", ["x1", "gprime", "lam_lo", "lam_hi", "lam_product", "det_error",
                                     "eig_error"], rows)
    if not rep.passed(tol):
        raise NumericalQualityError(f"transform identities: max residual {rep.max_residual:.2e} exceeds {tol:g}")


def _cell_unit(args):
    inc_d, h, slope, sym_tol = args
    solver = cells.CellSolver(InclusionSpec.from_dict(inc_d), h)
    sample = solver.sample(0.0, slope)
    cells.check_sample(sample, sym_tol)
    return sample.A


def stage_cell(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    groups = _slope_groups(cfg)
    slopes = list(groups)
    args = [(cfg.inclusion.to_dict(), cfg.discretization.h_cell, s, cfg.tolerances.symmetry) for s in slopes]
    A_by_slope = dict(zip(slopes, _map(_cell_unit, args, jobs)))
    x = x1_grid(cfg)
    rows = []
    for xi in x:
        A = A_by_slope[float(cfg.curve.dg(xi))]
        lo, hi = np.linalg.eigvalsh(0.5 * (A + A.T))
        rows.append((xi, *A.ravel(), lo, hi))
    _write_rows(out / "cells.csv", cells.CSV_HEADER, rows)
    # fields of the first sample
    solver = cells.CellSolver(cfg.inclusion, cfg.discretization.h_cell)
    sample = solver.sample(x[0], float(cfg.curve.dg(x[0])))
    sample.w_fields[0].export_text(out / "cell_w1.txt")
    sample.w_fields[1].export_text(out / "cell_w2.txt")


def _free_solver(cfg: WorkbenchConfig) -> FreeFluidSolver:
    mesh = build_box_mesh(cfg.box.L, 0.0, cfg.box.h_free, cfg.discretization.h_macro)
    return FreeFluidSolver(mesh, cfg.curve)


def stage_u0(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    free = _free_solver(cfg)
    u0 = free.u0(cfg.force)
    x = x1_grid(cfg)
    K = stress_jump(u0, cfg.curve, x)
    _write_rows(out / "stress_jump.csv", ["x1", "K1", "K2"], [(a, *k) for a, k in zip(x, K)])
    _write_rows(out / "u0_summary.csv", ["M0", "pressure_mean"],
                [(mass_flow(u0, cfg.curve), u0.integral_pressure())])
    u0.export_text(out / "u0_field.txt")


def _bl_unit(args):
    inc_d, h, layers, top, slope, samples, comp_tol = args
    inc = InclusionSpec.from_dict(inc_d)
    full = bl.BoundaryLayerSolver.build(inc, layers, top, h)
    half = bl.BoundaryLayerSolver.build(inc, max(2, layers // 2), top, h)
    results = []
    for x1, K in samples:
        sol = full.solve(x1, slope, K)
        ref = half.solve(x1, slope, K)
        n = float(np.linalg.norm(sol.Cbl))
        sol.truncation_delta = float(np.linalg.norm(sol.Cbl - ref.Cbl) / n) if n > 0 else 0.0
        bl.check_far_field(sol, sol.truncation_delta)
        if sol.normal_residual > comp_tol:
            raise NumericalQualityError(
                f"boundary layer at x1={x1:g}: C^bl . F^-T e2 residual {sol.normal_residual:.2e}")
        results.append((x1, slope, sol.Cbl, sol.Cbl_omega, sol.decay_rate, sol.goodness, sol.truncation_delta,
                        sol.layer_norms))
    return results


def stage_bl(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    _, kdata = _load_stage(out.parent, "u0", "stress_jump.csv")
    x, K = kdata[:, 0], kdata[:, 1:3]
    groups = _slope_groups(cfg)
    args = [(cfg.inclusion.to_dict(), cfg.discretization.h_strip, cfg.strip.n_pore_layers, cfg.strip.top_height,
             s, [(float(x[i]), K[i]) for i in idx], cfg.tolerances.compatibility) for s, idx in groups.items()]
    found = {}
    for res in _map(_bl_unit, args, jobs):
        for r in res:
            found[r[0]] = r
    rows, decay = [], []
    for xi in x:
        x1, slope, C, Cw, rate, r2, delta, norms = found[float(xi)]
        rows.append((x1, slope, C[0], C[1], Cw, rate, r2, delta))
        decay += [(x1, k + 1, v) for k, v in enumerate(norms)]
    _write_rows(out / "bl.csv", bl.CSV_HEADER, rows)
    _write_rows(out / "bl_decay.csv", ["x1", "layer", "grad_norm"], decay)
    # field of the first sample
    solver = bl.BoundaryLayerSolver.build(cfg.inclusion, cfg.strip.n_pore_layers, cfg.strip.top_height,
                                          cfg.discretization.h_strip)
    sol = solver.solve(float(x[0]), float(cfg.curve.dg(x[0])), K[0])
    sol.field.export_text(out / "bl_field.txt")


def coefficients(cfg: WorkbenchConfig, root: Path) -> EffectiveCoefficients:
    """Effective coefficients rebuilt from the cell, u0 and bl stage CSVs."""
    _, cdata = _load_stage(root, "cell", "cells.csv")
    _, kdata = _load_stage(root, "u0", "stress_jump.csv")
    _, bdata = _load_stage(root, "bl", "bl.csv")
    x = cdata[:, 0]
    if len(x) != cfg.x1_points or not (np.array_equal(x, bdata[:, 0]) and np.array_equal(x, kdata[:, 0])):
        raise MissingArtifactError("cell, u0 and bl artifacts use different x1 grids; rerun the stages")
    A = cdata[:, 1:5].reshape(-1, 2, 2)
    return EffectiveCoefficients(cfg.curve, x, A, bdata[:, 2:4], bdata[:, 4], kdata[:, 1:3])


def _darcy_mesh(cfg: WorkbenchConfig):
    return build_box_mesh(cfg.box.L, -cfg.box.K_depth, 0.0, max(cfg.discretization.h_macro, 1.0 / 64))


def stage_effective(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    root = out.parent
    coeffs = coefficients(cfg, root)
    compat = check_compatibility(coeffs, cfg.tolerances.compatibility)
    free = _free_solver(cfg)
    u0 = free.u0(cfg.force)
    m2 = _darcy_mesh(cfg)
    rows, slip_rows = [], []
    for eps in cfg.eps_list:
        eff = effective_solution(cfg.curve, cfg.force, coeffs, eps, free, u0, m2)
        xs, slip, M = slip_and_massflow(eff.ueff_peff, cfg.curve)
        C = coeffs.Cbl_at(xs)
        target = -eps * (C[:, 0] + cfg.curve.dg(xs) * C[:, 1])
        err = float(np.max(np.abs(slip - target)))
        if err > cfg.tolerances.slip:
            raise NumericalQualityError(f"eps={eps:g}: slip trace deviates from -eps C^bl . F e1 by {err:.2e}")
        rows.append((eps, M, err, compat, eff.darcy_p.interface_flux()))
        slip_rows += [(eps, a, b, c) for a, b, c in zip(xs, slip, target)]
        if eps == cfg.eps_list[-1]:
            eff.ueff_peff.export_text(out / "ueff_field.txt")
    _write_rows(out / "effective.csv", ["eps", "M_eff", "slip_max_error", "compatibility", "darcy_interface_flux"],
                rows)
    _write_rows(out / "slip.csv", ["eps", "x1", "slip_tangential", "slip_target"], slip_rows)


def _dns_unit(args):
    cfg_d, root, eps = args
    cfg = WorkbenchConfig.from_dict(cfg_d)
    coeffs = coefficients(cfg, Path(root))
    free = _free_solver(cfg)
    u0 = free.u0(cfg.force)
    eff = effective_solution(cfg.curve, cfg.force, coeffs, eps, free, u0, _darcy_mesh(cfg))
    params = EpsMeshParams(cfg.inclusion, cfg.box.L, cfg.box.h_free, cfg.box.K_depth,
                           cfg.discretization.h_micro_per_pore, None)
    ueps = solve_eps_problem(cfg.curve, cfg.force, eps, params)
    rec = error_report(ueps, eff, cfg.curve, cfg.box.K_depth)
    xs, ue = sigma_nodes(free_part(ueps))
    uf = eff.ueff_peff.velocity_at(np.column_stack([xs, np.zeros_like(xs)]))
    trace = [(eps, a, *b, *c) for a, b, c in zip(xs, ue, uf)]
    return rec, trace, ueps.meta["seconds"], ueps.meta["n_unknowns"]


def stage_dns(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    args = [(cfg.to_dict(), str(out.parent), eps) for eps in cfg.eps_list]
    results = _map(_dns_unit, args, jobs)
    _write_rows(out / "dns.csv", ["eps", *RECORD_KEYS], [(r["eps"], *(r[k] for k in RECORD_KEYS))
                                                         for r, *_ in results])
    _write_rows(out / "dns_sigma.csv", ["eps", "x1", "u_eps_1", "u_eps_2", "u_eff_1", "u_eff_2"],
                [row for _, tr, *_ in results for row in tr])
    for r, _, sec, n in results:
        log.info("dns eps=%g: %d unknowns, %.1f s", r["eps"], n, sec)


def load_report(cfg: WorkbenchConfig, root: Path) -> ConvergenceReport:
    header, data = _load_stage(root, "dns", "dns.csv")
    records = [dict(zip(header, row)) for row in data]
    return ConvergenceReport([r["eps"] for r in records], records, L=cfg.box.L)


def stage_sweep(cfg: WorkbenchConfig, out: Path, jobs: int) -> None:
    rep = load_report(cfg, out.parent)
    if len(rep.eps_list) < 2:
        log.warning("a single eps value gives no rate; rates.csv holds NaN")
    rep.write_rates(out / "rates.csv")


RUNNERS = {
    "transform": stage_transform,
    "cell": stage_cell,
    "u0": stage_u0,
    "bl": stage_bl,
    "effective": stage_effective,
    "dns": stage_dns,
    "sweep": stage_sweep,
}


# ---------------------------------------------------------------------------
# orchestration


def closure(stages) -> list[str]:
    """Requested stages plus everything upstream, in pipeline order."""
    need = set()

    def add(s):
        if s not in DEPENDS:
            raise ValueError(f"unknown stage {s!r}")
        if s not in need:
            need.add(s)
            for d in DEPENDS[s]:
                add(d)

    for s in stages:
        add(s)
    return [s for s in STAGES if s in need]


def is_cached(cfg: WorkbenchConfig, out: Path, stage: str) -> bool:
    manifest = out / stage / "stage.json"
    if not manifest.exists():
        return False
    try:
        data = json.loads(manifest.read_text())
    except json.JSONDecodeError:
        return False
    return data.get("hash") == cfg.stage_hash(stage) and all((out / stage / f).exists() for f in STAGE_FILES[stage])


def run_stages(cfg: WorkbenchConfig, out, stages=STAGES, jobs: int = 1) -> list[StageResult]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    results = []
    for stage in closure(stages):
        t0 = time.perf_counter()
        if is_cached(cfg, out, stage):
            log.info("stage %s: cache hit", stage)
            results.append(StageResult(stage, "cached", 0.0))
            continue
        sdir = out / stage
        sdir.mkdir(exist_ok=True)
        manifest = sdir / "stage.json"
        if manifest.exists():
            manifest.unlink()
        log.info("stage %s: running", stage)
        try:
            RUNNERS[stage](cfg, sdir, jobs)
        except (ValidationError, NumericalQualityError, ArithmeticError, ValueError, RuntimeError) as exc:
            (out / "failed.json").write_text(json.dumps({"stage": stage, "error": str(exc)}, indent=2) + "\n")
            raise StageFailure(stage, exc, out) from exc
        dt = time.perf_counter() - t0
        manifest.write_text(json.dumps({"stage": stage, "hash": cfg.stage_hash(stage),
                                        "inputs": cfg.subset(stage), "files": list(STAGE_FILES[stage])},
                                       indent=2, sort_keys=True) + "\n")
        log.info("stage %s: done in %.1f s", stage, dt)
        results.append(StageResult(stage, "ran", dt))
    failed = out / "failed.json"
    if failed.exists():
        failed.unlink()
    return results


# ---------------------------------------------------------------------------
# plot data


PLOT_INPUTS = {
    "decay_curves.dat": ("bl", "bl_decay.csv"),
    "cbl_vs_x1.dat": ("bl", "bl.csv"),
    "convergence": ("dns", "dns.csv"),
}


def export_plots(root) -> list[Path]:
    """Plain-text series for the decay curves, C^bl along Sigma and the eps convergence."""
    root = Path(root)
    expected = [root / st / name for st, name in PLOT_INPUTS.values()]
    missing = [str(p) for p in expected if not p.exists()]
    if missing:
        raise MissingArtifactError("missing pipeline artifacts: " + ", ".join(missing))
    pdir = root / "plots"
    pdir.mkdir(exist_ok=True)
    written = []

    _, dec = read_csv(root / "bl" / "bl_decay.csv")
    path = pdir / "decay_curves.dat"
    lines = ["# x: pore layer depth k  y: ||grad beta_bl||_L2(layer k) (log)  series: x1"]
    lines += [f"{int(k)} {float(v)!r} {float(x)!r}" for x, k, v in dec if v > 0]
    path.write_text("\n".join(lines) + "\n")
    written.append(path)

    _, b = read_csv(root / "bl" / "bl.csv")
    path = pdir / "cbl_vs_x1.dat"
    lines = ["# x: x1  y: Cbl1 Cbl2 Cbl_omega"]
    lines += [" ".join(repr(float(r[j])) for j in (0, 2, 3, 4)) for r in b]
    path.write_text("\n".join(lines) + "\n")
    written.append(path)

    header, d = read_csv(root / "dns" / "dns.csv")
    for j, key in enumerate(header[1:], start=1):
        if key in ("M_eps", "M_eff"):
            continue
        path = pdir / f"convergence_{key}.dat"
        lines = [f"# x: eps (log)  y: {key} (log)"]
        lines += [f"{float(r[0])!r} {float(r[j])!r}" for r in d if r[j] > 0 and math.isfinite(r[j])]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
