import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qplab.core import ModelParams, QPError, Region, assemble_T, cube
from qplab.diophantine import GOLDEN
from qplab.localization import (
    default_threshold,
    eigensolve,
    fit_eigenvector_decay,
    localization_report,
)


def test_default_threshold():
    assert default_threshold(1e-3) == pytest.approx(math.log(1e3) / 24)
    assert default_threshold(1e-3) == pytest.approx(0.2878, abs=1e-4)


def test_diagonal_eigensolve():
    p = ModelParams(eps=0.0, omega=(GOLDEN,), theta=0.13, energy=0.0)
    region = cube(20, d=1)
    pairs = eigensolve(assemble_T(region, p))
    ref = np.sort(np.cos(2 * np.pi * (0.13 + region.coords.ravel() * GOLDEN)))
    np.testing.assert_allclose(pairs.eigenvalues, ref, atol=1e-14)
    assert np.all(np.sum(np.abs(pairs.eigenvectors) > 1e-12, axis=0) == 1)
    assert np.all(pairs.eigenvectors.max(axis=0) == pytest.approx(1.0))


def test_two_by_two_pairs():
    eps = 0.25
    pairs = eigensolve(np.array([[0.0, eps], [eps, 0.0]]))
    np.testing.assert_allclose(pairs.eigenvalues, [-eps, eps])
    s = 1 / math.sqrt(2)
    np.testing.assert_allclose(pairs.eigenvectors, [[s, s], [-s, s]], atol=1e-15)


def test_residuals_at_desk_size():
    p = ModelParams(eps=1e-3, omega=(GOLDEN,), theta=0.4, energy=0.0)
    pairs = eigensolve(assemble_T(cube(500, d=1), p))
    assert len(pairs) == 1001
    assert pairs.max_residual <= 1e-8 * (1 + 2e-3)


def test_too_large():
    with pytest.raises(QPError) as err:
        eigensolve(np.eye(10), dense_limit=5)
    assert err.value.code == "too-large"


def test_delta_vector_gets_sentinel():
    region = cube(10, d=1)
    v = np.zeros(len(region))
    v[3] = 1.0
    prof = fit_eigenvector_decay(v, region, max_rate=77.0)
    assert prof.rate == 77.0 and prof.center == (-7.0,)


def test_uniform_vector_has_no_decay():
    region = cube(50, d=1)
    v = np.full(len(region), 1 / math.sqrt(len(region)))
    prof = fit_eigenvector_decay(v, region)
    assert prof.center == (-50.0,)
    # prefactor log(101) against |v| = 101^-1/2 over distances up to 100
    assert prof.rate == pytest.approx(1.5 * math.log(101) / 100, rel=1e-12)
    assert prof.rate < 0.07


def test_exponential_profile_rate():
    region = cube(40, d=1)
    n = region.coords.ravel()
    v = np.exp(-0.9 * np.abs(n - 3))
    v /= np.linalg.norm(v)
    prof = fit_eigenvector_decay(v, region, prefactor_log=0.0)
    ref = min((-math.log(abs(x))) / abs(k - 3) for k, x in zip(n, v) if abs(k - 3) >= 5)
    assert prof.rate == pytest.approx(ref, rel=1e-12)
    assert prof.center == (3.0,)


@given(st.integers(0, 2**31 - 1))
def test_fit_invariant_under_sign_and_mirror(seed):
    rng = np.random.default_rng(seed)
    region = cube(15, d=1)
    v = rng.normal(size=len(region)) * np.exp(-0.5 * np.abs(region.coords.ravel()))
    a = fit_eigenvector_decay(v, region)
    assert fit_eigenvector_decay(-v, region).rate == a.rate
    b = fit_eigenvector_decay(v[::-1], region)
    if np.sum(np.abs(v) == np.abs(v).max()) == 1:
        assert b.rate == pytest.approx(a.rate, rel=1e-12)
        assert b.center == (-a.center[0],)


def test_fit_region_too_small():
    with pytest.raises(QPError) as err:
        fit_eigenvector_decay(np.ones(5), cube(2, d=1))
    assert err.value.code == "region-too-small"
    with pytest.raises(QPError):
        fit_eigenvector_decay(np.ones(4), cube(2, d=1))


def test_eigenvectors_are_orthonormal():
    p = ModelParams(eps=0.05, omega=(GOLDEN,), theta=0.2, energy=0.0)
    V = eigensolve(assemble_T(cube(30, d=1), p)).eigenvectors
    np.testing.assert_allclose(V.T @ V, np.eye(61), atol=1e-12)


def test_report_diagonal_case():
    p = ModelParams(eps=0.0, omega=(GOLDEN,), theta=0.123, energy=0.0)
    rep = localization_report(p, 40, tau1=0.3, threshold=1.0)
    assert rep.pass_fraction == 1.0
    assert np.all(rep.rates == 1e3)


def test_report_flags_phase_failure():
    theta = (-3 * GOLDEN / 2) % 1.0  # 2 theta + 3 omega = 0 mod 1
    p = ModelParams(eps=1e-3, omega=(GOLDEN,), theta=theta, energy=0.0)
    rep = localization_report(p, 40, tau1=0.3, R_min=1, R_max=10)
    assert rep.phase_condition == "fail"
    assert (3,) in rep.phase_violations
    assert len(rep.rates) == 81
    assert rep.n_interior == int((~rep.boundary).sum())
