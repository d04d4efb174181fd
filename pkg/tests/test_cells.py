import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedbj.cells import (CellSolver, PermeabilitySample, check_sample, energy, permeability, richardson,
                            solve_cell, write_csv)
from curvedbj.errors import NumericalQualityError
from curvedbj.mesh import InclusionSpec
from curvedbj.transform import CurveSpec

_SOLVER = CellSolver(InclusionSpec(), 0.1)


def test_flat_circle_is_isotropic():
    A = _SOLVER.sample(0.0, 0.0).A
    n = np.linalg.norm(A)
    assert abs(A[0, 1]) < 1e-6 * n and abs(A[1, 0]) < 1e-6 * n
    assert abs(A[0, 0] - A[1, 1]) < 1e-6 * n


def test_square_array_permeability_correlation():
    # Drummond-Tahir fit for Stokes flow through a square array of cylinders,
    # K / a^2 = (-ln c - 1.476 + 2c - 1.774 c^2 + 4.076 c^3) / (8 c), solid fraction c
    a = 0.25
    c = math.pi * a * a
    K = a * a * (-math.log(c) - 1.476 + 2 * c - 1.774 * c**2 + 4.076 * c**3) / (8 * c)
    A = CellSolver(InclusionSpec(radius=a), 0.05).sample(0.0, 0.0).A
    assert A[0, 0] == pytest.approx(K, rel=0.03)


def test_richardson_self_convergence():
    vals = [CellSolver(InclusionSpec(), h).sample(0.0, 0.0).A[0, 0] for h in (0.1, 0.05, 0.025)]
    order, extrap, change = richardson(vals)
    assert order > 1.0
    assert change < 0.01


def test_richardson_on_exact_sequence():
    order, extrap, change = richardson([1 + 0.4, 1 + 0.1, 1 + 0.025])
    assert order == pytest.approx(2.0)
    assert extrap == pytest.approx(1.0)
    assert change == pytest.approx(0.025 / 1.0)


@settings(max_examples=12, deadline=None)
@given(slope=st.floats(-1.5, 1.5))
def test_permeability_symmetric_positive_and_energy(slope):
    s = _SOLVER.sample(0.0, slope)
    assert s.asymmetry < 1e-10
    assert s.eigenvalues.min() > 0
    for j in (1, 2):
        assert energy(s, j) == pytest.approx(s.A[j - 1, j - 1], rel=1e-10)


def test_permeability_continuous_in_slope():
    a, b = _SOLVER.sample(0.0, 0.3).A, _SOLVER.sample(0.0, 0.3 + 1e-4).A
    assert np.linalg.norm(a - b) < 1e-3 * np.linalg.norm(a)


def test_mirror_slope_flips_off_diagonal():
    # reflecting x1 maps slope s to -s and the circle onto itself
    a, b = _SOLVER.sample(0.0, 0.5).A, _SOLVER.sample(0.0, -0.5).A
    assert np.allclose(b, [[a[0, 0], -a[0, 1]], [-a[1, 0], a[1, 1]]], rtol=1e-8, atol=1e-12)


def test_cell_solution_satisfies_no_slip():
    w = solve_cell(CurveSpec(1.0, (), (0.1,)), 0.2, 2, InclusionSpec(), 0.2)
    nodes = w.space.boundary_nodes(["pore"])
    assert np.max(np.abs(w.u[nodes])) == 0.0


def test_permeability_grid_and_csv(tmp_path, wavy):
    x = [0.0, 0.25, 0.5, 0.75]
    samples = permeability(wavy, x, InclusionSpec(), 0.2)
    assert [s.x1 for s in samples] == x
    # g' vanishes at 0.25 and 0.75 (up to roundoff), so A agrees there
    assert np.allclose(samples[1].A, samples[3].A, rtol=1e-12, atol=1e-15)
    path = tmp_path / "cells.csv"
    write_csv(path, samples)
    rows = path.read_text().splitlines()
    assert rows[0] == "x1,A11,A12,A21,A22,eig_lo,eig_hi" and len(rows) == 5


def test_bad_inputs():
    with pytest.raises(ValueError):
        _SOLVER.solve(0.0, 3)
    with pytest.raises(ValueError):
        permeability(CurveSpec(1.0), [], InclusionSpec(), 0.2)
    bad = PermeabilitySample(0.0, np.array([[1.0, 0.1], [0.0, 1.0]]), (None, None))
    with pytest.raises(NumericalQualityError):
        check_sample(bad)
    indefinite = PermeabilitySample(0.0, np.array([[1.0, 0.0], [0.0, -1.0]]), (None, None))
    with pytest.raises(NumericalQualityError):
        check_sample(indefinite)
