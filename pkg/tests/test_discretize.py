"""Grids, the gradient/divergence pair, quadrature and assembled codifferentials."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal, assert_equal

from artifact.codiff_core import Codifferential, Polytope
from artifact.discretize import (
    DiscreteField,
    Grid,
    assemble_codifferential,
    assemble_value,
    cell_average,
    divergence,
    functional_directional_derivative,
    gradient,
    increment_operator,
)
from artifact.expr import U_XI, parse


def random_grid(rng):
    if rng.random() < 0.5:
        return Grid.interval(rng.uniform(-2, 0), rng.uniform(0.5, 3), int(rng.integers(1, 12)))
    return Grid.rectangle(
        (rng.uniform(-1, 0), rng.uniform(0.5, 2)), (rng.uniform(-1, 0), rng.uniform(0.5, 2)),
        int(rng.integers(1, 7)), int(rng.integers(1, 7)),
    )


def sbp_gap(grid, zeta, h):
    """|sum_c w_c <zeta_c, grad h_c> + sum_n w_n <div zeta_n, h_n>| for boundary-zero h."""
    h = h.copy()
    h[grid.boundary_mask] = 0.0
    lhs = np.sum(grid.weights[:, None, None] * zeta * gradient(grid, h))
    div = divergence(grid, zeta, interior_only=False)
    rhs = np.sum(grid.node_weight * div[grid.interior] * h[grid.interior])
    return abs(lhs + rhs), max(abs(lhs), 1.0)


def test_grid_geometry():
    g = Grid.interval(0.0, 1.0, 4)
    assert_allclose(g.h, [0.25])
    assert_allclose(g.nodes[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
    assert_allclose(g.centers[:, 0], [0.125, 0.375, 0.625, 0.875])
    assert_allclose(g.weights, 0.25)
    assert_array_equal(g.interior, [1, 2, 3])
    g2 = Grid.rectangle((0, 1), (0, 2), 3, 4)
    assert_equal(g2.shape_nodes, (4, 5))
    assert_allclose(g2.cell_weight, 1 / 6)
    assert_equal(g2.interior.size, 2 * 3)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid.interval(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        Grid.interval(1.0, 0.0, 4)


def test_gradient_of_identity():
    g = Grid.interval(0.0, 1.0, 4)
    u = DiscreteField.from_function(g, lambda x: x[..., 0])
    assert_allclose(gradient(g, u)[:, 0, 0], 1.0)


def test_gradient_of_tent():
    g = Grid.interval(0.0, 1.0, 10)
    u = DiscreteField.from_function(g, lambda x: np.abs(x[..., 0] - 0.5))
    assert_allclose(gradient(g, u)[:, 0, 0], [-1.0] * 5 + [1.0] * 5, atol=1e-14)


def test_gradient_matches_stencil_oracle():
    rng = np.random.default_rng(0)
    g = Grid.rectangle((0, 1), (0, 2), 3, 4)
    vals = rng.normal(size=(g.n_nodes, 2))
    U = vals.reshape(4, 5, 2)
    h1, h2 = g.h
    expect = np.empty((3, 4, 2, 2))
    for i in range(3):
        for j in range(4):
            expect[i, j, :, 0] = (U[i + 1, j] - U[i, j] + U[i + 1, j + 1] - U[i, j + 1]) / (2 * h1)
            expect[i, j, :, 1] = (U[i, j + 1] - U[i, j] + U[i + 1, j + 1] - U[i + 1, j]) / (2 * h2)
    assert_allclose(gradient(g, vals), expect.reshape(12, 2, 2), rtol=1e-13, atol=1e-13)
    g1 = Grid.interval(-1, 2, 6)
    v = rng.normal(size=7)
    assert_allclose(gradient(g1, v)[:, 0, 0], np.diff(v) / 0.5, rtol=1e-13)


def test_divergence_of_constant_flux_vanishes():
    g = Grid.rectangle((0, 1), (0, 1), 5, 4)
    zeta = np.broadcast_to([[2.0, -3.0]], (g.n_cells, 1, 2))
    assert_allclose(divergence(g, zeta), 0.0, atol=1e-12)


def test_divergence_of_linear_flux_in_1d():
    g = Grid.interval(0.0, 1.0, 8)
    assert_allclose(divergence(g, g.centers[:, 0]), 1.0, rtol=1e-12)


def test_divergence_shape_errors():
    g = Grid.interval(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        divergence(g, np.zeros((3, 1, 1)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_summation_by_parts(seed):
    rng = np.random.default_rng(seed)
    g = random_grid(rng)
    m = int(rng.integers(1, 3))
    zeta = rng.normal(size=(g.n_cells, m, g.d))
    h = rng.normal(size=(g.n_nodes, m))
    gap, scale = sbp_gap(g, zeta, h)
    assert gap <= 1e-13 * scale


def test_assemble_value_examples():
    g = Grid.interval(0.0, 1.0, 7)
    assert_allclose(assemble_value(parse("1 + 0*u"), g, DiscreteField.zeros(g)), 1.0, rtol=1e-15)
    u = DiscreteField.from_function(g, lambda x: x[..., 0])
    assert assemble_value(parse("0.5*xi^2"), g, u) == pytest.approx(0.5, abs=1e-15)
    g = Grid.interval(0.0, 1.0, 8)
    tent = DiscreteField.from_function(g, lambda x: np.abs(x[..., 0] - 0.5))
    assert_allclose(assemble_value(parse("abs(xi)"), g, tent), 1.0, rtol=1e-15)


def test_quadrature_converges():
    # f = u^2 + xi^2 with u = sin(pi x): exact integral 1
    e = parse("u^2 + (xi/pi)^2")
    errs = []
    for n in (16, 32, 64):
        g = Grid.interval(0.0, 1.0, n)
        u = DiscreteField.from_function(g, lambda x: np.sin(np.pi * x[..., 0]))
        errs.append(abs(assemble_value(e, g, u) - 1.0))
    assert errs[0] / errs[1] > 1.9
    assert errs[1] / errs[2] > 1.9


def test_cell_average():
    g = Grid.rectangle((0, 1), (0, 1), 2, 2)
    u = DiscreteField.from_function(g, lambda x: x[..., 0] + 2 * x[..., 1])
    assert_allclose(cell_average(g, u)[:, 0], g.centers[:, 0] + 2 * g.centers[:, 1])


def test_csv_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(3)
    for g in (Grid.interval(0, 1, 5), Grid.rectangle((0, 1), (-1, 1), 3, 2)):
        u = DiscreteField(g, rng.normal(size=(g.n_nodes, 2)) * 10.0 ** rng.integers(-20, 20, size=(g.n_nodes, 2)))
        path = tmp_path / "u.csv"
        text = u.to_csv(path)
        assert "\r" not in text
        back = DiscreteField.from_csv(path, g)
        assert_array_equal(back.values, u.values)


def test_smooth_cells_are_singletons():
    g = Grid.interval(0.0, 1.0, 6)
    u = DiscreteField.from_function(g, lambda x: x[..., 0])
    F = assemble_codifferential(parse("0.5*xi^2"), g, u)
    for cd in F.cells:
        assert_allclose(cd.hypo.v, [[0.0, 1.0]])
        assert_allclose(cd.hyper.v, [[0.0, 0.0]])


def test_example_31_cells_at_zero():
    g = Grid.rectangle((-1, 1), (-1, 1), 4, 4)
    F = assemble_codifferential(parse("abs(xi1) - abs(xi2)", d=2, m=1), g, DiscreteField.zeros(g))
    ref = Codifferential(
        Polytope(np.zeros(2), np.array([[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]])),
        Polytope(np.zeros(2), np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])),
    )
    rng = np.random.default_rng(4)
    for cd in F.cells:
        for _ in range(10):
            dx = rng.normal(size=3)
            assert_allclose(cd.model(dx), ref.model(dx), atol=1e-14)


def test_example_33_cells_at_zero():
    g = Grid.interval(0.0, 1.0, 8)
    F = assemble_codifferential(parse("max(-abs(u), -abs(xi))"), g, DiscreteField.zeros(g))
    rng = np.random.default_rng(5)
    for cd in F.cells:
        for _ in range(10):
            du, dxi = rng.normal(size=2)
            assert_allclose(cd.model([du, dxi]), max(-abs(du), -abs(dxi)), atol=1e-14)


def test_directional_derivative_of_abs_at_zero():
    g = Grid.interval(0.0, 1.0, 8)
    F = assemble_codifferential(parse("abs(u)"), g, DiscreteField.zeros(g))
    rng = np.random.default_rng(6)
    h = np.abs(rng.normal(size=(g.n_nodes, 1)))
    h[g.boundary_mask] = 0.0
    assert_allclose(functional_directional_derivative(F, h), np.sum(g.weights * cell_average(g, h)[:, 0]))


def test_directional_derivative_of_linear_extremal_vanishes():
    g = Grid.interval(0.0, 1.0, 8)
    F = assemble_codifferential(parse("0.5*xi^2"), g, DiscreteField.from_function(g, lambda x: x[..., 0]))
    h = np.random.default_rng(7).normal(size=(g.n_nodes, 1))
    h[g.boundary_mask] = 0.0
    assert_allclose(functional_directional_derivative(F, h), 0.0, atol=1e-13)


@pytest.mark.parametrize("text", ["max(-abs(u), -abs(xi))", "0.5*xi^2 + abs(u)", "u - abs(xi)", "abs(u)*abs(xi)"])
def test_directional_derivative_matches_finite_difference(text):
    rng = np.random.default_rng(8)
    g = Grid.interval(0.0, 1.0, 10)
    e = parse(text)
    t = 1e-6
    for _ in range(10):
        vals = rng.normal(size=(g.n_nodes, 1))
        vals[rng.random(g.n_nodes) < 0.3] = 0.0
        u = DiscreteField(g, vals)
        # small increments keep the curvature term of the quadratic below the tolerance
        h = 0.1 * rng.normal(size=(g.n_nodes, 1))
        h[g.boundary_mask] = 0.0
        F = assemble_codifferential(e, g, u)
        fd = (assemble_value(e, g, u.with_values(vals + t * h)) - F.value) / t
        assert_allclose(functional_directional_derivative(F, h), fd, atol=1e-4)


def test_selections_attain_zero_offset():
    """Every hypo has a vertex with a = 0 and all offsets are nonpositive."""
    g = Grid.interval(0.0, 1.0, 12)
    u = DiscreteField(g, np.random.default_rng(9).normal(size=(13, 1)))
    F = assemble_codifferential(parse("max(abs(xi) - abs(u), 0)"), g, u)
    for cd in F.cells:
        assert cd.hypo.a.max() == 0.0
        assert np.all(cd.hypo.a <= 0.0)
        assert cd.hyper.a.min() == 0.0


def test_increment_operator_matches_block_increments():
    rng = np.random.default_rng(10)
    for g in (Grid.interval(0, 2, 5), Grid.rectangle((0, 1), (0, 1), 3, 2)):
        m = 2
        u = DiscreteField(g, rng.normal(size=(g.n_nodes, m)))
        F = assemble_codifferential(parse("abs(u1) + xi21", d=g.d, m=m), g, u)
        h = rng.normal(size=(g.n_nodes, m))
        B = increment_operator(g, m)
        assert_allclose((B @ h.ravel()).reshape(g.n_cells, -1), F.block_increments(h), atol=1e-13)


def test_local_codifferential_uses_nodal_coordinates():
    g = Grid.interval(0.0, 1.0, 4)
    u = DiscreteField.from_function(g, lambda x: x[..., 0])
    F = assemble_codifferential(parse("0.5*xi^2"), g, u, U_XI)
    cd = F.local_codifferential(1)
    # d/d(u_1, u_2) of 0.5 ((u_2 - u_1)/h)^2 at slope 1 is (-1/h, 1/h) with h = 1/4
    assert_allclose(cd.hypo.v, [[-4.0, 4.0]])
