"""Periodic cell problems and the permeability matrix A(x1).

For a frozen metric F(x1) the cell problem is the transformed Stokes system on
the fluid part of the unit cell with body force e_j, no-slip on the inclusion
and periodicity in both directions. A depends on x1 only through g'(x1), so
factorisations are shared between samples with equal slope.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericalQualityError
from .mesh import InclusionSpec, PeriodicMesh, build_cell_mesh
from .stokes import MixedField, StokesSystem
from .transform import CurveSpec

CSV_HEADER = ["x1", "A11", "A12", "A21", "A22", "eig_lo", "eig_hi"]


@dataclass
class PermeabilitySample:
    x1: float
    A: np.ndarray
    w_fields: tuple[MixedField, MixedField] = field(repr=False)
    slope: float = 0.0

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.A + self.A.T))

    @property
    def asymmetry(self) -> float:
        return float(abs(self.A[0, 1] - self.A[1, 0]) / np.linalg.norm(self.A))


class CellSolver:
    """Cell problems on one mesh; one factorisation per distinct slope value."""

    def __init__(self, inclusion: InclusionSpec, h: float, mesh: PeriodicMesh | None = None):
        self.inclusion = inclusion
        self.h = h
        self.mesh = mesh if mesh is not None else build_cell_mesh(inclusion, h)
        self._systems: dict[float, StokesSystem] = {}
        self._space = None

    def system(self, slope: float) -> StokesSystem:
        key = float(slope)
        if key not in self._systems:
            sys_ = StokesSystem(self.mesh, key, ("pore",), gauge="mean", space=self._space)
            self._space = sys_.space
            self._systems[key] = sys_
        return self._systems[key]

    def solve(self, slope: float, j: int) -> MixedField:
        if j not in (1, 2):
            raise ValueError("direction index j must be 1 or 2")
        force = np.zeros(2)
        force[j - 1] = 1.0
        sol = self.system(slope).solve(force, {"pore": 0.0})
        sol.meta.update(direction=j, slope=float(slope))
        return sol

    def sample(self, x1: float, slope: float) -> PermeabilitySample:
        w = (self.solve(slope, 1), self.solve(slope, 2))
        # row j holds the cell average of w^j, so A[j, i] = int w^j_i
        A = np.array([wf.integral_velocity() for wf in w])
        return PermeabilitySample(float(x1), A, w, float(slope))


def solve_cell(spec: CurveSpec, x1: float, j: int, inclusion: InclusionSpec, h: float) -> MixedField:
    return CellSolver(inclusion, h).solve(float(spec.dg(x1)), j)


def check_sample(sample: PermeabilitySample, sym_tol: float = 1e-8) -> None:
    if sample.asymmetry > sym_tol:
        raise NumericalQualityError(
            f"permeability at x1={sample.x1:g} not symmetric (relative {sample.asymmetry:.2e}); refine the cell mesh")
    if sample.eigenvalues.min() <= 0:
        raise NumericalQualityError(
            f"permeability at x1={sample.x1:g} not positive definite; refine the cell mesh")


def permeability(spec: CurveSpec, x1_grid: Sequence[float], inclusion: InclusionSpec, h: float,
                 solver: CellSolver | None = None) -> list[PermeabilitySample]:
    x1_grid = [float(x) for x in x1_grid]
    if not x1_grid:
        raise ValueError("x1 grid is empty")
    solver = solver or CellSolver(inclusion, h)
    out = []
    for x1 in x1_grid:
        s = solver.sample(x1, float(spec.dg(x1)))
        check_sample(s)
        out.append(s)
    return out


def energy(sample: PermeabilitySample, j: int) -> float:
    """a(w^j, w^j) = int G grad w^j : grad w^j, which equals A_jj for the exact discrete solution."""
    wf = sample.w_fields[j - 1]
    g = wf.grad_q()
    s = sample.slope
    G = np.array([[1.0, -s], [-s, 1.0 + s * s]])
    integrand = np.einsum("il,tqlk,tqik->tq", G, g, g)
    return float(np.sum(wf.space.weights() * integrand))


def richardson(values: Sequence[float], ratio: float = 2.0) -> tuple[float, float, float]:
    """Three-level Richardson extrapolation of a sequence under refinement by ``ratio``.

    Returns (observed order, extrapolated value, relative change of the finest
    value against the extrapolation).
    """
    a, b, c = (float(v) for v in values[-3:])
    d1, d2 = b - a, c - b
    if d2 == 0.0:
        return float("inf"), c, 0.0
    order = float(np.log(abs(d1 / d2)) / np.log(ratio))
    extrap = c + d2 / (ratio**order - 1.0)
    return order, float(extrap), float(abs(c - extrap) / abs(extrap))


def write_csv(path, samples: Sequence[PermeabilitySample]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for s in samples:
            lo, hi = s.eigenvalues
            wr.writerow([repr(float(v)) for v in (s.x1, *s.A.ravel(), lo, hi)])
