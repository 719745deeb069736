import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import block_matrix, boundary_pairs, dist_to_int
from qplab.core import (
    DENSE_LIMIT,
    HalfLatticePoint,
    ModelParams,
    QPError,
    Region,
    assemble_T,
    boundary,
    complexified_T,
    cube,
    logdet,
    torus_norm,
)
from qplab.diophantine import GOLDEN, SILVER

finite = st.floats(min_value=-50, max_value=50, allow_nan=False)
doubled_pts = st.lists(st.integers(-20, 20), min_size=1, max_size=3)


# -- torus norm ---------------------------------------------------------------
@pytest.mark.parametrize("x, expected", [(0.5, 0.5), (1.25, 0.25), (0.75 + 0.1j, math.hypot(0.25, 0.1))])
def test_torus_norm_examples(x, expected):
    assert torus_norm(x) == pytest.approx(expected, abs=1e-15)


def test_torus_norm_complex_value():
    assert torus_norm(0.75 + 0.1j) == pytest.approx(0.269258, abs=1e-6)


@given(finite, st.integers(-1000, 1000))
def test_torus_norm_periodic_and_even(a, m):
    assert torus_norm(a + m) == pytest.approx(torus_norm(a), abs=1e-9)
    assert torus_norm(-a) == pytest.approx(torus_norm(a), abs=1e-12)
    assert 0.0 <= torus_norm(a) <= 0.5


@given(finite)
def test_torus_norm_matches_reference(a):
    assert torus_norm(a) == pytest.approx(dist_to_int(a), abs=1e-12)


def test_torus_norm_vectorized():
    out = torus_norm(np.array([0.1, 0.9, 2.5]))
    np.testing.assert_allclose(out, [0.1, 0.1, 0.5], atol=1e-15)


# -- half-lattice points ------------------------------------------------------
@given(doubled_pts, doubled_pts)
def test_point_arithmetic_exact(a, b):
    n = min(len(a), len(b))
    p, q = HalfLatticePoint(tuple(a[:n])), HalfLatticePoint(tuple(b[:n]))
    assert (p + q) - q == p
    assert -(-p) == p
    assert p - p == HalfLatticePoint.zero(n)
    if p.parity == q.parity:
        m = p.midpoint(q)
        assert m + m == p + q
    else:
        with pytest.raises(QPError):
            p.midpoint(q)


def test_point_integrality_and_coords():
    p = HalfLatticePoint.from_coords([1.5, -2])
    assert p.doubled == (3, -4)
    assert not p.is_integer
    assert HalfLatticePoint.from_coords([2, -1]).is_integer
    np.testing.assert_array_equal(p.coords, [1.5, -2.0])
    assert p.sup_norm() == 2.0 and p.l1_norm() == 3.5
    with pytest.raises(QPError):
        HalfLatticePoint.from_coords([0.25])


def test_halved_requires_integer_point():
    assert HalfLatticePoint((6,)).halved() == HalfLatticePoint((3,))
    with pytest.raises(QPError):
        HalfLatticePoint((3,)).halved()


# -- regions -----------------------------------------------------------------
def test_region_rejects_mixed_parity():
    with pytest.raises(QPError) as err:
        Region(np.array([[0], [1]]))
    assert err.value.code == "parity"


def test_cube_contents_and_parity():
    r = cube(2, d=1)
    np.testing.assert_array_equal(r.coords.ravel(), [-2, -1, 0, 1, 2])
    half = cube(1, center=[0.5])
    np.testing.assert_array_equal(half.coords.ravel(), [-0.5, 0.5, 1.5])
    assert half.parity == (1,)
    assert len(cube(3, d=2)) == 49
    # a half-integer class cube about the origin
    h = cube(1, d=1, parity=(1,))
    np.testing.assert_array_equal(h.coords.ravel(), [-0.5, 0.5])


def test_region_diam_dist_symmetry():
    a = cube(2, d=2)
    assert a.diam() == 4.0
    b = a.translate(HalfLatticePoint((20, 0)))
    assert a.dist(b) == 6.0
    assert a.symmetric_about(HalfLatticePoint.zero(2))
    assert not b.symmetric_about(HalfLatticePoint.zero(2))
    assert b.symmetric_about(HalfLatticePoint((20, 0)))
    assert a.reflect() == a


@given(st.lists(st.integers(-15, 15), min_size=1, max_size=12), st.lists(st.integers(-15, 15), max_size=12))
def test_region_set_algebra(xs, ys):
    A = Region(np.array([[2 * x] for x in xs]))
    B = Region(np.array([[2 * y] for y in ys]).reshape(-1, 1), d=1)
    sa, sb = set(xs), set(ys)
    as_set = lambda R: {int(v) for v in R.coords.ravel()}
    assert as_set(A | B) == sa | sb
    assert as_set(A & B) == sa & sb
    assert as_set(A - B) == sa - sb
    assert (A & B).issubset(A)
    assert A.intersects(B) == bool(sa & sb)


def test_region_expand_matches_cube_union():
    seed = Region(np.array([[0, 0], [10, 0]]))
    grown = seed.expand(1)
    ref = cube(1, [0, 0]) | cube(1, [5, 0])
    assert grown == ref


# -- boundary -----------------------------------------------------------------
def test_boundary_examples():
    assert len(boundary(cube(2, d=1), cube(2, d=1))) == 0
    b = boundary(Region(np.array([[0]])), cube(1, d=1))
    assert [(p.coords[0], q.coords[0]) for p, q in b.pairs] == [(0.0, -1.0), (0.0, 1.0)]


def test_boundary_two_dimensional_ring():
    inner, outer = cube(1, d=2), cube(2, d=2)
    b = boundary(inner, outer)
    assert len(b.minus) == 8
    assert HalfLatticePoint.zero(2) not in b.minus
    ref = boundary_pairs([tuple(p) for p in inner.coords.astype(int)], [tuple(p) for p in outer.coords.astype(int)])
    got = sorted((tuple(int(v) for v in p.coords), tuple(int(v) for v in q.coords)) for p, q in b.pairs)
    assert got == ref


def test_boundary_requires_nesting():
    with pytest.raises(QPError):
        boundary(cube(2, d=1), cube(1, d=1))


# -- operators ----------------------------------------------------------------
def _params(d=1, eps=1e-3, theta=0.3, energy=0.2):
    omega = (GOLDEN, SILVER)[:d]
    return ModelParams(eps=eps, omega=omega, theta=theta, energy=energy)


def test_assemble_diagonal_case():
    p = _params(eps=0.0)
    T = assemble_T(cube(5, d=1), p)
    n = np.arange(-5, 6)
    np.testing.assert_allclose(T.dense(), np.diag(np.cos(2 * np.pi * (0.3 + n * GOLDEN)) - 0.2), atol=1e-15)


def test_assemble_single_site():
    T = assemble_T(Region(np.array([[0]])), ModelParams(eps=0.1, omega=(GOLDEN,), theta=0.0, energy=0.0))
    np.testing.assert_array_equal(T.dense(), [[1.0]])


def test_assemble_bond_count_2d():
    eps = 0.01
    T = assemble_T(cube(1, d=2), _params(d=2, eps=eps)).dense()
    off = T - np.diag(np.diag(T))
    assert np.count_nonzero(np.triu(off)) == 12
    assert np.all(off[off != 0] == eps)
    np.testing.assert_array_equal(T, T.T)


def test_assemble_errors():
    with pytest.raises(QPError) as err:
        assemble_T(Region.empty(1), _params())
    assert err.value.code == "empty-region"
    with pytest.raises(QPError):
        assemble_T(cube(1, d=1, parity=(1,)), _params())


def test_dense_and_sparse_agree():
    region = cube(30, d=1)
    dense = assemble_T(region, _params(eps=0.05), dense=True).dense()
    sparse = assemble_T(region, _params(eps=0.05), dense=False).dense()
    np.testing.assert_allclose(dense, sparse, rtol=1e-10, atol=0)
    assert DENSE_LIMIT == 4096


@pytest.mark.parametrize("d", [1, 2])
def test_spectrum_within_norm_bound(d):
    eps = 0.2
    T = assemble_T(cube(6, d=d), _params(d=d, eps=eps, energy=0.0))
    ev = np.linalg.eigvalsh(T.dense())
    assert np.all(np.abs(ev) <= 1 + 2 * d * eps + 1e-12)
    assert T.norm_bound() == 1 + 2 * d * eps


def test_complexified_matches_reference_and_real_case():
    p = _params(d=2, eps=0.03, energy=0.4)
    region = cube(1, d=2, parity=(1, 0))
    z = 0.17 + 0.05j
    ref = block_matrix(region.coords, p.omega, p.energy, p.eps, z)
    np.testing.assert_allclose(complexified_T(region, p, z), ref, atol=1e-14)
    # at real z = theta + k.omega it is the operator on region + k
    k = HalfLatticePoint((6, -2))
    base = cube(2, d=2)
    zk = p.theta + k.dot(p.omega)
    np.testing.assert_allclose(complexified_T(base, p, zk).real, assemble_T(base.translate(k), p).dense(), atol=1e-12)


def test_complexified_diagonal_determinant():
    p = _params(eps=0.0, energy=0.3)
    region = cube(3, d=1)
    z = 0.2 - 0.1j
    phase, logabs = logdet(complexified_T(region, p, z))
    ref = np.prod(np.cos(2 * np.pi * (z + region.coords.ravel() * GOLDEN)) - 0.3)
    assert phase * np.exp(logabs) == pytest.approx(ref, rel=1e-12)


def test_logdet_dense_and_sparse_agree():
    import scipy.sparse as sp

    rng = np.random.default_rng(3)
    A = rng.normal(size=(25, 25)) + 5 * np.eye(25)
    p1, l1 = logdet(A)
    p2, l2 = logdet(sp.csr_matrix(A))
    assert l1 == pytest.approx(l2, rel=1e-12)
    assert p1 == pytest.approx(p2, abs=1e-12)
    assert logdet(np.zeros((3, 3)))[1] == -math.inf


@pytest.mark.parametrize("d, parity", [(1, (0,)), (1, (1,)), (2, (0, 0)), (2, (1, 0)), (2, (1, 1))])
def test_evenness_of_symmetric_blocks(d, parity):
    rng = np.random.default_rng(sum(parity) + 10 * d)
    p = _params(d=d, eps=0.05, energy=0.3)
    region = cube(2, d=d, parity=parity)
    assert region.symmetric_about(HalfLatticePoint.zero(d))
    for _ in range(10):
        z = complex(rng.uniform(-1, 1), rng.uniform(-1, 1))
        da = np.linalg.det(complexified_T(region, p, z))
        db = np.linalg.det(complexified_T(region, p, -z))
        assert abs(da - db) <= 1e-10 * max(1.0, abs(da))


def test_all_parity_classes_enumerated():
    classes = {cube(1, d=2, parity=par).parity for par in itertools.product((0, 1), repeat=2)}
    assert len(classes) == 4
