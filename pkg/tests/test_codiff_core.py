"""
Codifferential calculus on vertex-represented polytopes.

Vertices are written ``(a, v)``: offset first, then the linear part.  The
hypodifferential contributes ``max (a + <v, dx>)`` and the hyperdifferential
``min (a + <v, dx>)``.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_equal

from artifact.codiff_core import (
    TOL_NORM,
    Codifferential,
    Polytope,
    compose_smooth,
    directional_derivative,
    hausdorff_distance,
    linear_combine,
    max_rule,
    min_rule,
    phi_eval,
    precompose_affine,
    psi_eval,
    quasidiff_extract,
    reduce,
    zero_face,
)


def poly(*pieces):
    return Polytope.from_pieces(pieces)


def abs_at(x):
    """The exact codifferential of |.| at the scalar ``x`` built from max{t, -t}."""
    return Codifferential(poly((x - abs(x), [1.0]), (-x - abs(x), [-1.0])), Polytope.zero(1))


def same_model(p, q, dim, rng, n=50, scale=1.0):
    for _ in range(n):
        dx = rng.normal(size=dim) * scale
        assert_allclose(p.model(dx), q.model(dx), atol=1e-12)


@st.composite
def polytopes(draw, dim=None, k=None, normalized=None):
    dim = dim or draw(st.integers(1, 3))
    k = k or draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    a = rng.normal(size=k)
    if normalized == "hypo":
        a = -np.abs(a)
        a[0] = 0.0
    elif normalized == "hyper":
        a = np.abs(a)
        a[0] = 0.0
    return Polytope(a, rng.normal(size=(k, dim)))


# -- phi / psi ------------------------------------------------------------------------------------------


def test_phi_at_zero_on_symmetric_hypo():
    assert phi_eval(poly((0.0, [1.0]), (0.0, [-1.0])), [0.0]) == 0.0


def test_phi_of_example_31_hypo():
    # |xi| - |u| at the origin: hypo co{(0, (0, +-1))}; dx = (0, 2) gives max(+-2)
    hypo = poly((0.0, [0.0, 1.0]), (0.0, [0.0, -1.0]))
    assert phi_eval(hypo, [0.0, 2.0]) == 2.0


def test_psi_values():
    assert psi_eval(Polytope.zero(2), [3.0, -7.0]) == 0.0
    assert psi_eval(poly((0.0, [1.0]), (0.0, [-1.0])), [3.0]) == -3.0


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        phi_eval(Polytope.zero(2), [1.0])
    with pytest.raises(ValueError):
        psi_eval(Polytope.zero(1), [1.0, 2.0])


@given(polytopes(), st.integers(0, 2**32 - 1))
def test_phi_psi_match_vertex_enumeration(p, seed):
    dx = np.random.default_rng(seed).normal(size=p.dim)
    vals = [a + float(np.dot(v, dx)) for a, v in p.pieces]
    assert_allclose(phi_eval(p, dx), max(vals), rtol=1e-14, atol=1e-14)
    assert_allclose(psi_eval(p, dx), min(vals), rtol=1e-14, atol=1e-14)


# -- linear combinations --------------------------------------------------------------------------------


def test_sum_of_singletons():
    g1, g2 = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    cd = linear_combine([
        (1.0, Codifferential.smooth(g1)),
        (1.0, Codifferential.smooth(g2)),
    ])
    assert_equal(len(cd.hypo), 1)
    assert_allclose(cd.hypo.v[0], g1 + g2)
    assert_allclose(cd.hyper.v, [[0.0, 0.0]])


def test_negative_scalar_swaps_parts():
    cd = Codifferential(poly((0.0, [1.0]), (0.0, [-1.0])), Polytope.zero(1))
    neg = linear_combine([(-1.0, cd)])
    assert_allclose(neg.hypo.v, [[0.0]])
    assert_allclose(sorted(neg.hyper.v.ravel()), [-1.0, 1.0])
    assert_allclose(neg.hyper.a, [0.0, 0.0])


def test_scaling_doubles_abs():
    doubled = linear_combine([(2.0, abs_at(1.0))])
    pieces = sorted((a, v[0]) for a, v in doubled.hypo.pieces)
    assert_allclose(pieces, [(-4.0, -2.0), (0.0, 2.0)])
    rng = np.random.default_rng(0)
    for _ in range(20):
        dx = rng.normal(size=1)
        assert_allclose(phi_eval(doubled.hypo, dx), 2 * phi_eval(abs_at(1.0).hypo, dx))


# -- max and min ----------------------------------------------------------------------------------------


def test_max_of_x_and_minus_x_is_abs():
    cd = max_rule([Codifferential.smooth([1.0]), Codifferential.smooth([-1.0])], [0.0, 0.0])
    assert_allclose(sorted(cd.hypo.v.ravel()), [-1.0, 1.0])
    assert_allclose(cd.hypo.a, [0.0, 0.0])
    assert_allclose(cd.hyper.v, [[0.0]])


def test_min_of_x_and_minus_x():
    cd = min_rule([Codifferential.smooth([1.0]), Codifferential.smooth([-1.0])], [0.0, 0.0])
    assert_allclose(cd.hypo.v, [[0.0]])
    assert_allclose(sorted(cd.hyper.v.ravel()), [-1.0, 1.0])


def test_single_argument_max_and_min_are_identities():
    cd = abs_at(0.3)
    for rule in (max_rule, min_rule):
        out = rule([cd], [0.3])
        same_model(out, cd, 1, np.random.default_rng(1))


def test_minus_abs_at_one_via_min():
    """
    min{u, -u} at u = 1 is -|u|; the shift of the inactive branch is f_2 - f = 2.

    The result is the negation of the codifferential of |.| at 1, so the
    hyperdifferential is co{(0, -1), (2, 1)}, with nonnegative offsets.
    """
    cd = min_rule([Codifferential.smooth([1.0]), Codifferential.smooth([-1.0])], [1.0, -1.0])
    pieces = sorted((a, v[0]) for a, v in cd.hyper.pieces)
    assert_allclose(pieces, [(0.0, -1.0), (2.0, 1.0)])
    assert_allclose(cd.hypo.v, [[0.0]])
    same_model(cd, linear_combine([(-1.0, abs_at(1.0))]), 1, np.random.default_rng(2), scale=3.0)


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_max_rule_is_exact_for_affine_branches(seed):
    # for affine branches the DC expansion of the max is exact at every step size
    rng = np.random.default_rng(seed)
    k, dim = rng.integers(1, 5), rng.integers(1, 4)
    G = rng.normal(size=(k, dim))
    f = rng.normal(size=k)
    cd = max_rule([Codifferential.smooth(g) for g in G], f)
    mn = min_rule([Codifferential.smooth(g) for g in G], f)
    assert cd.is_normalized() and mn.is_normalized()
    for _ in range(10):
        dx = rng.normal(size=dim) * 5
        assert_allclose(cd.model(dx), np.max(f + G @ dx) - f.max(), atol=1e-12)
        assert_allclose(mn.model(dx), np.min(f + G @ dx) - f.min(), atol=1e-12)


# -- composition ----------------------------------------------------------------------------------------


def test_compose_identity():
    cd = abs_at(-0.4)
    same_model(compose_smooth([1.0], [cd]), cd, 1, np.random.default_rng(3))


def test_compose_square_of_abs():
    # g(y) = y^2 at y = |1| = 1 has dg/dy = 2
    cd = compose_smooth([2.0], [abs_at(1.0)])
    pieces = sorted((a, v[0]) for a, v in cd.hypo.pieces)
    assert_allclose(pieces, [(-4.0, -2.0), (0.0, 2.0)])


def test_compose_sum_equals_linear_combination():
    a, b = abs_at(0.5), Codifferential(Polytope.zero(1), poly((0.0, [2.0]), (1.0, [-1.0])))
    same_model(compose_smooth([1.0, 1.0], [a, b]), linear_combine([(1.0, a), (1.0, b)]), 1, np.random.default_rng(4))


# -- affine precomposition ------------------------------------------------------------------------------


def test_precompose_identity():
    cd = Codifferential(poly((0.0, [1.0, 2.0]), (-1.0, [0.0, 1.0])), poly((0.0, [0.0, 0.0]), (0.5, [1.0, 1.0])))
    out = precompose_affine(cd, np.eye(2))
    assert_equal(out.hypo.v, cd.hypo.v)
    assert_equal(out.hyper.a, cd.hyper.a)


def test_precompose_forward_difference():
    h = 0.25
    cd = Codifferential(poly((0.0, [1.0])), Polytope.zero(1))
    out = precompose_affine(cd, [[-1 / h, 1 / h]])
    assert_allclose(out.hypo.v, [[-1 / h, 1 / h]])
    assert_equal(out.dim, 2)


@settings(max_examples=50)
@given(polytopes(normalized="hypo"), st.integers(0, 2**32 - 1))
def test_precompose_is_composition(hypo, seed):
    rng = np.random.default_rng(seed)
    cd = Codifferential(hypo, Polytope.zero(hypo.dim))
    M = rng.normal(size=(hypo.dim, 3))
    out = precompose_affine(cd, M)
    for _ in range(10):
        dx = rng.normal(size=3)
        assert_allclose(phi_eval(out.hypo, dx), phi_eval(cd.hypo, M @ dx), atol=1e-12)


# -- quasidifferentials and directional derivatives -----------------------------------------------------


def test_zero_face_of_abs_at_one():
    q = quasidiff_extract(abs_at(1.0))
    assert_allclose(q.sub, [[1.0]])
    assert_allclose(q.sup, [[0.0]])


def test_zero_face_of_symmetric_hypo():
    q = quasidiff_extract(abs_at(0.0))
    assert_allclose(sorted(q.sub.ravel()), [-1.0, 1.0])


def test_quasidifferential_of_example_33_integrand_at_origin():
    # max{-|u|, -|xi|} at (0, 0): hypo co{(0, +-1, 0), (0, 0, +-1)}, up to the hyper part
    from artifact.expr import U_XI, codiff_at, parse

    cd = codiff_at(parse("max(-abs(u), -abs(xi))", d=1, m=1), U_XI, [0.0], [0.0], [[0.0]])
    q = quasidiff_extract(cd)
    rng = np.random.default_rng(5)
    for _ in range(30):
        v = rng.normal(size=2)
        # f'(0; v) = max(-|v_u|, -|v_xi|)
        expect = max(-abs(v[0]), -abs(v[1]))
        got = np.max(q.sub @ v) + np.min(q.sup @ v)
        assert_allclose(got, expect, atol=1e-12)


def test_empty_zero_face_is_an_error():
    hypo = Polytope(np.array([-1.0, -2.0]), np.array([[1.0], [2.0]]))
    assert_equal(zero_face(hypo).shape, (0, 1))
    with pytest.raises(ValueError, match="not normalized"):
        quasidiff_extract(Codifferential(hypo, Polytope.zero(1)))


def test_directional_derivative_of_abs():
    assert directional_derivative(abs_at(0.0), [1.0]) == 1.0
    assert directional_derivative(abs_at(0.0), [-1.0]) == 1.0


def test_directional_derivative_of_example_31_integrand():
    from artifact.expr import U_XI, codiff_at, parse

    cd = codiff_at(parse("abs(xi1) - abs(u1)", d=1, m=1), U_XI, [0.0], [0.0], [[0.0]])
    assert_allclose(directional_derivative(cd, [1.0, 1.0]), 0.0)
    assert_allclose(directional_derivative(cd, [0.5, 2.0]), 1.5)


# -- Hausdorff distance and reduction -------------------------------------------------------------------


def test_hausdorff_trivial_cases():
    p = poly((0.0, [0.0]), (0.0, [2.0]))
    assert hausdorff_distance(p, p) == 0.0
    assert_allclose(hausdorff_distance(poly((0.0, [0.0])), poly((0.0, [3.0]))), 3.0)


def test_hausdorff_segment_and_midpoint():
    assert_allclose(hausdorff_distance(poly((0.0, [0.0]), (0.0, [2.0])), poly((0.0, [1.0]))), 1.0)


@settings(max_examples=40)
@given(polytopes(dim=2), polytopes(dim=2))
def test_hausdorff_symmetric_and_bounded(p, q):
    d = hausdorff_distance(p, q)
    assert_allclose(d, hausdorff_distance(q, p), atol=1e-10)
    # never larger than the largest vertex-to-vertex distance
    P, Q = p.points, q.points
    worst = max(np.linalg.norm(x - y) for x, y in itertools.product(P, Q))
    assert d <= worst + 1e-10


def test_reduce_drops_midpoint():
    r = reduce(poly((0.0, [0.0]), (0.0, [1.0]), (0.0, [0.5])))
    assert_allclose(sorted(r.v.ravel()), [0.0, 1.0])


def test_reduce_keeps_minimal_polytope():
    p = poly((0.0, [1.0, 0.0]), (0.0, [0.0, 1.0]), (-1.0, [0.0, 0.0]))
    assert_equal(len(reduce(p)), 3)


@settings(max_examples=60)
@given(polytopes(k=8))
def test_reduce_preserves_support_function(p):
    r = reduce(p)
    assert len(r) <= len(p)
    rng = np.random.default_rng(len(p))
    for _ in range(100):
        dx = rng.normal(size=p.dim)
        assert_allclose(phi_eval(r, dx), phi_eval(p, dx), atol=1e-12)
        assert_allclose(psi_eval(r, dx), psi_eval(p, dx), atol=1e-12)


# -- normalization --------------------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    st.lists(polytopes(dim=2, normalized="hypo"), min_size=2, max_size=3),
    st.lists(polytopes(dim=2, normalized="hyper"), min_size=2, max_size=3),
    st.integers(0, 2**32 - 1),
)
def test_operations_keep_normalization(hypos, hypers, seed):
    rng = np.random.default_rng(seed)
    cds = [Codifferential(h, g) for h, g in zip(hypos, hypers)]
    vals = rng.normal(size=len(cds))
    lam = rng.normal(size=len(cds))
    for out in (
        linear_combine(list(zip(lam, cds))),
        max_rule(cds, vals),
        min_rule(cds, vals),
        compose_smooth(lam, cds),
        precompose_affine(cds[0], rng.normal(size=(2, 3))),
    ):
        assert out.is_normalized(TOL_NORM)
        assert_allclose(out.hypo.a.max(), 0.0, atol=TOL_NORM)
        assert_allclose(out.hyper.a.min(), 0.0, atol=TOL_NORM)
