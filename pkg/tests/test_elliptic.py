import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import jn_zeros

from bubbleforge.elliptic import (
    DIRECT_SOLVE_LIMIT,
    SolverError,
    apply_operator,
    assemble_laplacian,
    harmonic_extension,
    principal_eigenpair,
    solve_dirichlet,
)
from bubbleforge.geometry import build_grid, field_from_function, unit_disk, unit_square


def test_matrix_shape_and_stencil(square_grid_65):
    op = assemble_laplacian(square_grid_65)
    N = square_grid_65.n_interior
    assert op.matrix.shape == (N, N)
    row_nnz = np.diff(op.matrix.indptr)
    assert row_nnz.max() <= 5
    assert op.symmetric


def test_apply_to_eigenfunction(square_grid_65):
    op = assemble_laplacian(square_grid_65)
    g = square_grid_65
    f = field_from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    out = apply_operator(op, f, boundary=0.0)
    exact = 2 * np.pi**2 * g.interior_values(f.values)
    rel = np.abs(out - exact).max() / np.abs(exact).max()
    assert rel < 2e-3  # O(h^2) at n=65


def test_apply_constant_leaves_coupling_rows_only(disk_grid_65):
    op = assemble_laplacian(disk_grid_65)
    ones = field_from_function(disk_grid_65, lambda x, y: np.ones_like(x))
    out = apply_operator(op, ones, boundary=0.0)
    coupled = np.zeros(op.n_interior, dtype=bool)
    coupled[op.coupling_rows] = True
    assert np.abs(out[~coupled]).max() < 1e-10
    assert np.abs(out[coupled]).min() > 0.0


def test_row_sum_structure(disk_grid_65):
    # diagonal equals off-diagonal row sum plus boundary couplings
    op = assemble_laplacian(disk_grid_65)
    A = op.matrix.tocsr()
    rowsum = np.asarray(A.sum(axis=1)).ravel()
    coup = np.zeros(op.n_interior)
    np.add.at(coup, op.coupling_rows, op.coupling_weights)
    assert np.allclose(rowsum, coup, rtol=1e-10, atol=1e-8)


def test_solve_constant_boundary(square_grid_65):
    op = assemble_laplacian(square_grid_65)
    u = solve_dirichlet(op, rhs=None, boundary=3.25)
    assert np.allclose(u.values, 3.25, atol=1e-10)


def test_solve_sine_oracle():
    errs = []
    for n in (33, 65):
        g = build_grid(unit_square(), n)
        op = assemble_laplacian(g)
        rhs = field_from_function(
            g, lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)
        )
        u = solve_dirichlet(op, rhs, 0.0)
        exact = field_from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        errs.append(np.abs(u.values - exact.values).max())
    assert errs[1] < errs[0] / 3.0


def test_solve_disk_radial_oracle(disk_grid_65):
    op = assemble_laplacian(disk_grid_65)
    g = disk_grid_65
    rhs = field_from_function(g, lambda x, y: np.ones_like(x))
    u = solve_dirichlet(op, rhs, 0.0)
    exact = field_from_function(g, lambda x, y: (1 - x**2 - y**2) / 4)
    ii, jj = g.interior_ij[:, 0], g.interior_ij[:, 1]
    # cut-arm stencil is exact on quadratics
    assert np.abs(u.values[ii, jj] - exact.values[ii, jj]).max() < 1e-10


def test_harmonic_constant(disk_grid_65):
    op = assemble_laplacian(disk_grid_65)
    u = harmonic_extension(op, 5.0)
    assert np.allclose(u.values[disk_grid_65.kind != 2], 5.0, atol=1e-10)


def test_harmonic_polynomial(disk_grid_65):
    op = assemble_laplacian(disk_grid_65)
    u = harmonic_extension(op, lambda x, y: x**2 - y**2)
    g = disk_grid_65
    exact = field_from_function(g, lambda x, y: x**2 - y**2)
    ii, jj = g.interior_ij[:, 0], g.interior_ij[:, 1]
    assert np.abs(u.values[ii, jj] - exact.values[ii, jj]).max() < 1e-9


def test_harmonic_log_source_outside():
    errs = []
    p = (1.7, 0.9)
    for n in (33, 65):
        g = build_grid(unit_disk(), n)
        op = assemble_laplacian(g)
        u = harmonic_extension(op, lambda x, y: 4 * np.log(np.hypot(x - p[0], y - p[1])))
        exact = field_from_function(g, lambda x, y: 4 * np.log(np.hypot(x - p[0], y - p[1])))
        ii, jj = g.interior_ij[:, 0], g.interior_ij[:, 1]
        errs.append(np.abs(u.values[ii, jj] - exact.values[ii, jj]).max())
    assert errs[1] < errs[0] / 3.0


def test_eigenpair_square(square_core_129):
    ep = square_core_129.eigen
    assert abs(ep.lam - 2 * np.pi**2) / (2 * np.pi**2) < 0.01
    phi = ep.phi
    g = square_core_129.grid
    assert phi.values.max() == pytest.approx(1.0, abs=0)
    assert g.interior_values(phi.values).min() > 0
    assert ep.residual_inf <= 1e-9 * max(ep.lam, 1.0) * 10


def test_eigenpair_disk(disk_core_129):
    ep = disk_core_129.eigen
    j01sq = jn_zeros(0, 1)[0] ** 2
    assert abs(ep.lam - j01sq) / j01sq < 0.01


def test_eigen_refinement_trend():
    lams = []
    for n in (17, 33, 65):
        g = build_grid(unit_square(), n)
        lams.append(principal_eigenpair(assemble_laplacian(g), 1e-10).lam)
    errs = [abs(l - 2 * np.pi**2) for l in lams]
    assert errs[2] < errs[1] < errs[0]
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.3)  # O(h^2)


def test_self_adjoint_on_square(square_grid_65):
    op = assemble_laplacian(square_grid_65)
    rng = np.random.default_rng(3)
    u = rng.normal(size=op.n_interior)
    v = rng.normal(size=op.n_interior)
    a = (op.matrix @ u) @ v
    b = u @ (op.matrix @ v)
    assert abs(a - b) <= 1e-10 * max(abs(a), 1.0)


@given(seed=st.integers(0, 1000))
@settings(max_examples=15, deadline=None)
def test_maximum_principle(seed):
    g = build_grid(unit_disk(), 17)
    op = assemble_laplacian(g)
    rng = np.random.default_rng(seed)
    rhs_vals = rng.uniform(0, 1, size=(g.n, g.n))
    from bubbleforge.geometry import ScalarField

    rhs = ScalarField(g, rhs_vals)
    c = float(rng.uniform(0, 1))
    u = solve_dirichlet(op, rhs, boundary=c)
    ii, jj = g.interior_ij[:, 0], g.interior_ij[:, 1]
    assert u.values[ii, jj].min() >= -1e-12


def test_iterative_policy_matches_direct(square_grid_65):
    op_d = assemble_laplacian(square_grid_65)
    op_i = assemble_laplacian(square_grid_65)
    op_i.solver_policy = "iterative"
    rhs = field_from_function(square_grid_65, lambda x, y: np.cos(3 * x * y))
    ud = solve_dirichlet(op_d, rhs, 0.0)
    ui = solve_dirichlet(op_i, rhs, 0.0)
    assert np.abs(ud.values - ui.values).max() < 1e-8


def test_nonfinite_rhs_rejected(square_grid_65):
    op = assemble_laplacian(square_grid_65)
    bad = field_from_function(square_grid_65, lambda x, y: np.ones_like(x))
    bad.values[3, 3] = np.inf
    with pytest.raises(SolverError):
        solve_dirichlet(op, bad, 0.0)
