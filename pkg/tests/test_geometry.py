import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubbleforge.geometry import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    GeometryError,
    OutsideDomainError,
    ScalarField,
    build_grid,
    dump_field_csv,
    field_from_function,
    gradient,
    integrate,
    interpolate,
    load_field_csv,
    rectangle,
    unit_disk,
    unit_square,
)


def test_square_n3_single_interior_node():
    g = build_grid(unit_square(), 3)
    assert g.n_interior == 1
    i, j = g.interior_ij[0]
    assert (g.xs[i], g.ys[j]) == (0.5, 0.5)


def test_disk_n5_interior_by_enumeration():
    g = build_grid(unit_disk(), 5)
    xs = np.linspace(-1, 1, 5)
    expected = sum(
        1 for x in xs for y in xs if math.hypot(x, y) < 1.0
    )
    assert g.n_interior == expected
    # axis points sit on the circle: boundary, not interior
    assert g.kind[4, 2] == BOUNDARY and g.kind[2, 0] == BOUNDARY


def test_rectangle_spacing():
    g = build_grid(rectangle(2.0, 1.0), 5)
    assert g.hx == pytest.approx(0.5)
    assert g.hy == pytest.approx(0.25)


def test_interior_index_bijection(disk_grid_65):
    g = disk_grid_65
    idx = g.interior_index[g.interior_index >= 0]
    assert sorted(idx.tolist()) == list(range(g.n_interior))


def test_interior_neighbors_never_exterior(disk_grid_65):
    g = disk_grid_65
    for i, j in g.interior_ij:
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            assert g.kind[i + di, j + dj] != EXTERIOR


def test_resolution_too_small():
    with pytest.raises(GeometryError):
        build_grid(unit_square(), 2)


def test_interpolate_constant(square_grid_65):
    f = field_from_function(square_grid_65, lambda x, y: 7.0 * np.ones_like(x))
    assert interpolate(f, (0.123, 0.771)) == pytest.approx(7.0, abs=1e-13)


def test_interpolate_affine_exact(square_grid_65):
    f = field_from_function(square_grid_65, lambda x, y: x + 2 * y)
    assert interpolate(f, (0.3, 0.4)) == pytest.approx(1.1, abs=1e-13)


def test_interpolate_outside_raises(square_grid_65):
    f = field_from_function(square_grid_65, lambda x, y: x)
    with pytest.raises(OutsideDomainError):
        interpolate(f, (1.2, 0.5))


def test_interpolate_quadratic_refinement():
    errs = []
    for n in (33, 65):
        g = build_grid(unit_square(), n)
        f = field_from_function(g, lambda x, y: x**2)
        p = (g.xs[10] + g.hx / 2, 0.5)  # mid-cell, worst case
        errs.append(abs(interpolate(f, p) - p[0] ** 2))
    assert errs[1] < errs[0] / 3.0  # O(h^2)


def test_integrate_one_square(square_grid_65):
    one = field_from_function(square_grid_65, lambda x, y: np.ones_like(x))
    assert integrate(one) == pytest.approx(1.0, abs=1e-10)


def test_integrate_one_disk_refinement():
    errs = []
    for n in (33, 65, 129):
        g = build_grid(unit_disk(), n)
        one = field_from_function(g, lambda x, y: np.ones_like(x))
        errs.append(abs(integrate(one) - math.pi))
    # exact cell clipping: error far below O(h)
    assert errs[-1] < 1e-8
    assert errs[-1] <= errs[0] + 1e-12


def test_integrate_sine_product():
    errs = []
    for n in (33, 65):
        g = build_grid(unit_square(), n)
        f = field_from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        errs.append(abs(integrate(f) - 4 / math.pi**2))
    assert errs[1] < errs[0] / 3.0  # O(h^2)


def test_quadrature_exact_degree_one(square_grid_65):
    for fn, exact in (
        (lambda x, y: x, 0.5),
        (lambda x, y: y, 0.5),
        (lambda x, y: x * y, 0.25),
    ):
        f = field_from_function(square_grid_65, fn)
        assert integrate(f) == pytest.approx(exact, abs=1e-12)


def test_gradient_affine_exact(square_grid_65):
    f = field_from_function(square_grid_65, lambda x, y: 3 * x - y)
    gx, gy = gradient(f)
    g = square_grid_65
    ii, jj = g.interior_ij[:, 0], g.interior_ij[:, 1]
    assert np.allclose(gx.values[ii, jj], 3.0, atol=1e-12)
    assert np.allclose(gy.values[ii, jj], -1.0, atol=1e-12)


def test_gradient_constant_zero(disk_grid_65):
    f = field_from_function(disk_grid_65, lambda x, y: 4.2 * np.ones_like(x))
    gx, gy = gradient(f)
    assert np.abs(gx.values).max() == 0.0
    assert np.abs(gy.values).max() == 0.0


def test_gradient_quadratic_refinement():
    errs = []
    for n in (33, 65):
        g = build_grid(unit_square(), n)
        f = field_from_function(g, lambda x, y: x**2)
        gx, _ = gradient(f)
        inner = gx.values[2:-2, 2:-2]
        X = np.meshgrid(g.xs, g.ys, indexing="ij")[0][2:-2, 2:-2]
        errs.append(np.abs(inner - 2 * X).max())
    assert errs[1] < errs[0] / 3.0 + 1e-14


@given(c=st.floats(-10, 10))
@settings(max_examples=20, deadline=None)
def test_ops_commute_with_constants(c):
    g = build_grid(unit_square(), 17)
    f = field_from_function(g, lambda x, y: np.sin(3 * x) + y**2)
    fc = ScalarField(g, f.values + c)
    p = (0.37, 0.58)
    assert interpolate(fc, p) == pytest.approx(interpolate(f, p) + c, rel=1e-12, abs=1e-12)
    gx1, _ = gradient(f)
    gx2, _ = gradient(fc)
    assert np.allclose(gx1.values, gx2.values, atol=1e-12)


def test_grid_refinement_nests_nodes():
    g1 = build_grid(unit_square(), 17)
    g2 = build_grid(unit_square(), 33)
    assert np.allclose(g2.xs[::2], g1.xs)
    f2 = field_from_function(g2, lambda x, y: np.sin(x) * np.cos(y))
    f1 = field_from_function(g1, lambda x, y: np.sin(x) * np.cos(y))
    # sampled fields agree exactly at nested nodes
    assert np.array_equal(f2.values[::2, ::2], f1.values)


def test_field_arithmetic_same_grid_only():
    g1 = build_grid(unit_square(), 17)
    g2 = build_grid(unit_square(), 17)
    f1 = field_from_function(g1, lambda x, y: x)
    f2 = field_from_function(g2, lambda x, y: y)
    with pytest.raises(GeometryError):
        _ = f1 + f2


def test_field_csv_roundtrip(tmp_path, disk_grid_65):
    f = field_from_function(disk_grid_65, lambda x, y: np.cos(x) * y)
    path = tmp_path / "f.csv"
    dump_field_csv(f, path)
    head = path.read_text().splitlines()[0]
    assert head == "x,y,value"
    g = load_field_csv(disk_grid_65, path)
    mask = disk_grid_65.kind != EXTERIOR
    assert np.array_equal(g.values[mask], f.values[mask])
