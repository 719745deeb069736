import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from oracles import count_eigs_leq
from qplab.core import ModelParams, QPError, assemble_T, cube
from qplab.diophantine import GOLDEN, SILVER
from qplab.ids import (
    IdsScan,
    count_leq,
    count_leq_many,
    holder_scan,
    ids_operator,
    ids_window,
    run_scan,
    stratified_thetas,
)


def test_diagonal_example():
    assert count_leq(np.diag([-1.0, 0.5, 2.0]), 0.0) == 1


def test_two_by_two_example():
    eps = 1e-3
    assert count_leq(np.array([[0.0, eps], [eps, 0.0]]), 0.0) == 1


def test_eigenvalue_at_shift_is_counted():
    res = count_leq(np.diag([-1.0, 0.0, 1.0]), 0.0, return_jitter=True)
    assert res.count == 2 and res.jitter > 0
    # same through the dense factorization path (non-tridiagonal matrix)
    B = np.array([[2.0, 0, 1.0], [0, 0.0, 0], [1.0, 0, 2.0]])
    assert count_leq(B, 0.0) == count_eigs_leq(B, 1e-12)


@given(st.floats(0, 1), st.floats(-1.5, 1.5))
def test_diagonal_model_matches_enumeration(theta, E):
    p = ModelParams(eps=0.0, omega=(GOLDEN,), theta=theta, energy=0.0)
    H = ids_operator(40, p)
    ref = sum(1 for n in range(-40, 41) if math.cos(2 * math.pi * (theta + n * GOLDEN)) <= E)
    assert count_leq(H, E) == ref


@pytest.mark.parametrize("d, N", [(1, 100), (2, 7)])
def test_counts_match_eigensolve(d, N):
    rng = np.random.default_rng(d)
    p = ModelParams(eps=0.1, omega=(GOLDEN, SILVER)[:d], theta=rng.uniform(), energy=0.0)
    H = ids_operator(N, p)
    dense = H.toarray() if sp.issparse(H) else np.asarray(H)
    Es = np.linspace(-2.5, 2.5, 101)
    counts, _ = count_leq_many(H, Es)
    assert counts.tolist() == [count_eigs_leq(dense, E) for E in Es]


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=20))
def test_counts_nondecreasing(Es):
    H = ids_operator(30, ModelParams(eps=0.05, omega=(GOLDEN,), theta=0.2, energy=0.0))
    Es = sorted(Es)
    c, _ = count_leq_many(H, Es)
    assert np.all(np.diff(c) >= 0)
    assert c[0] >= 0 and c[-1] <= 61


def test_counts_complement():
    H = ids_operator(25, ModelParams(eps=0.05, omega=(GOLDEN,), theta=0.7, energy=0.0))
    ev = np.linalg.eigvalsh(H.toarray() if sp.issparse(H) else H)
    gap = np.argmax(np.diff(ev))
    lo, hi = ev[gap], ev[gap + 1]
    below = count_leq(H, 0.5 * (lo + hi))
    above = count_leq(-H, -hi)  # eigenvalues >= hi
    assert below + above == len(ev)


def test_window_swallows_spectrum():
    p = ModelParams(eps=1e-3, omega=(GOLDEN,), theta=0.1, energy=0.0)
    count, density = ids_window(50, p, 0.0, 2 + 2 * 1e-3)
    assert count == 101 and density == 1.0


def test_window_outside_spectrum_is_empty():
    p = ModelParams(eps=1e-3, omega=(GOLDEN,), theta=0.1, energy=0.0)
    assert ids_window(50, p, 1.5, 1e-6) == (0, 0.0)
    with pytest.raises(QPError):
        ids_window(50, p, 0.0, 0.0)


def test_stratified_thetas():
    t = stratified_thetas(16, seed=3)
    assert np.all((t >= np.arange(16) / 16) & (t < (np.arange(16) + 1) / 16))
    np.testing.assert_array_equal(t, stratified_thetas(16, seed=3))


def test_scan_shapes_and_diagonal_smoke():
    scan = run_scan(IdsScan(N=60, omega=(GOLDEN,), eps=0.0, thetas=[0.1, 0.6],
                            energy_grid=np.linspace(-2, 2, 9), etas=[1e-1, 1e-2]))
    assert scan.counts.shape == (2, 9, 2)
    assert scan.size == 121
    rep = holder_scan(scan)
    assert rep.max_density.shape == (9, 2)
    np.testing.assert_allclose(rep.bounds, [0.1**0.4, 0.01**0.4])


def test_identical_counts_give_zero_slope():
    scan = IdsScan(N=10, omega=(GOLDEN,), eps=0.0, thetas=[0.0], energy_grid=[0.0], etas=[1e-2, 1e-1])
    scan.size = 10
    scan.counts = np.array([[[3, 3]]])
    assert holder_scan(scan).exponents[0] == pytest.approx(0.0, abs=1e-12)


def test_scan_config_errors():
    with pytest.raises(QPError):
        IdsScan(N=10, omega=(GOLDEN,), eps=0.0, thetas=[0.0], energy_grid=[], etas=[0.1])
    with pytest.raises(QPError):
        IdsScan(N=10, omega=(GOLDEN,), eps=0.0, thetas=[0.0], energy_grid=[0.0], etas=[-0.1])
    scan = IdsScan(N=10, omega=(GOLDEN,), eps=0.0, thetas=[0.0], energy_grid=[0.0], etas=[0.1, 0.2])
    with pytest.raises(QPError):
        holder_scan(scan)


def test_two_dimensional_uses_factorization():
    p = ModelParams(eps=0.05, omega=(GOLDEN, SILVER), theta=0.3, energy=0.0)
    T = assemble_T(cube(4, d=2), p)
    c = count_leq(T, 0.1)
    assert c == count_eigs_leq(T.hamiltonian().toarray() if sp.issparse(T.hamiltonian()) else T.hamiltonian(), 0.1)
