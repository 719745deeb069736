import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dist_to_int
from qplab.diophantine import (
    GOLDEN,
    SILVER,
    admissible_phase_intervals,
    default_frequency,
    forbidden_phase_arcs,
    separation_radius,
    verify_frequency,
    verify_phase_condition,
)

# Largest admissible gamma for the golden mean at tau = 1/2 over 0 < |n| <= 100,
# from a plain-Python scan: min |||n omega||| e^{sqrt n} is attained at n = 3.
GOLDEN_MARGIN_R100 = 0.8246497793388945
# Violations of ||2*0.31 + n*golden|| > exp(-|n|^0.3) with 5 <= |n| <= 200.
PHASE_VIOLATIONS_031 = [-179, -145, -90, -69, -56, -43, -35, -27, -22, -14, -9, -6,
                        7, 12, 20, 25, 33, 41, 54, 67, 88, 109, 143]


def test_rational_frequency_fails_at_two():
    rep = verify_frequency((0.5,), 1e-6, 0.5, 10)
    assert not rep.passed
    assert rep.worst_n == (2,)
    assert rep.margin == 0.0


def test_zero_coordinate_fails_at_unit_vector():
    rep = verify_frequency((GOLDEN, 0.0), 1e-6, 0.5, 5)
    assert not rep.passed
    assert rep.worst_n == (0, 1)


def test_golden_margin_frozen():
    rep = verify_frequency((GOLDEN,), 0.5, 0.5, 100)
    assert rep.passed
    assert rep.worst_n == (3,)
    assert rep.margin == pytest.approx(GOLDEN_MARGIN_R100, rel=1e-12)
    assert not verify_frequency((GOLDEN,), GOLDEN_MARGIN_R100 * 1.0001, 0.5, 100).passed


def test_frequency_margin_matches_plain_scan_in_2d():
    om = np.array([GOLDEN, SILVER])
    R = 6
    best = min(dist_to_int(a * om[0] + b * om[1]) * math.exp(max(abs(a), abs(b)) ** 0.5)
               for a in range(-R, R + 1) for b in range(-R, R + 1) if (a, b) != (0, 0))
    assert verify_frequency(om, 0.1, 0.5, R).margin == pytest.approx(best, rel=1e-12)


@given(st.integers(1, 60), st.integers(1, 60))
def test_frequency_monotone_in_radius(r1, r2):
    lo, hi = sorted((r1, r2))
    gamma = 0.3
    if verify_frequency((SILVER,), gamma, 0.5, hi).passed:
        assert verify_frequency((SILVER,), gamma, 0.5, lo).passed
    assert verify_frequency((SILVER,), gamma, 0.5, hi).margin <= verify_frequency((SILVER,), gamma, 0.5, lo).margin


def test_phase_exact_resonance():
    theta = (-7 * GOLDEN / 2.0) % 1.0
    rep = verify_phase_condition(theta, (GOLDEN,), 0.3, 5, 20)
    assert not rep.passed
    assert (7,) in rep.violations


def test_phase_empty_range_passes():
    rep = verify_phase_condition(0.1, (GOLDEN,), 0.3, 50, 10)
    assert rep.passed and rep.violations == []


def test_phase_violations_frozen():
    rep = verify_phase_condition(0.31, (GOLDEN,), 0.3, 5, 200)
    assert [n[0] for n in rep.violations] == PHASE_VIOLATIONS_031


def test_forbidden_arcs_consistent_with_pointwise_check():
    arcs = forbidden_phase_arcs((GOLDEN,), 0.9, 5, 40)
    free = admissible_phase_intervals((GOLDEN,), 0.9, 5, 40)
    assert len(free)
    for a, b in free[:5]:
        theta = 0.5 * (a + b)
        assert verify_phase_condition(theta, (GOLDEN,), 0.9, 5, 40).passed
    for a, b in arcs[:5]:
        x = 0.5 * (a + b)
        assert not verify_phase_condition(x / 2.0, (GOLDEN,), 0.9, 5, 40).passed


def test_short_range_already_fully_forbidden():
    # with tau1 = 0.3 the arcs of 5 <= |n| <= 40 cover the whole circle
    assert len(admissible_phase_intervals((GOLDEN,), 0.3, 5, 40)) == 0


def test_default_frequency():
    assert default_frequency(2) == (GOLDEN, SILVER)
    with pytest.raises(ValueError):
        default_frequency(9)


@given(st.floats(1e-12, 1e-3))
def test_separation_radius_by_substitution(delta):
    gamma, tau, R = 0.8, 0.5, 60
    rep = verify_frequency((GOLDEN,), gamma, tau, R)
    assert rep.passed
    r = separation_radius(gamma, tau, delta)
    # any n with |||n omega||| < 2 delta must be beyond the separation radius
    for n in range(1, R + 1):
        if dist_to_int(n * GOLDEN) < 2 * delta:
            assert n > r
    assert gamma * math.exp(-(r ** tau)) == pytest.approx(2 * delta, rel=1e-9)
