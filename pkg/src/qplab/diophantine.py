"""Brute-force verification of the arithmetic conditions on ``omega`` and ``theta``.

The frequency class is ``||n.omega|| >= gamma * exp(-||n||**tau)`` for all
``n != 0``; the phase condition asks ``||2 theta + n.omega|| > exp(-||n||**tau1)``
on a range of radii.  ``||n||`` is the sup norm.  Both checks enumerate the
lattice ball exhaustively (no continued-fraction shortcuts), chunked along
the first axis so that memory stays bounded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import torus_norm

__all__ = [
    "GOLDEN",
    "SILVER",
    "FrequencyClass",
    "FrequencyReport",
    "PhaseReport",
    "default_frequency",
    "verify_frequency",
    "verify_phase_condition",
    "forbidden_phase_arcs",
    "admissible_phase_intervals",
    "separation_radius",
]

#: Golden-mean frequency ``(sqrt 5 - 1)/2``.
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
#: Silver-mean frequency ``sqrt 2 - 1``.
SILVER = math.sqrt(2.0) - 1.0


def default_frequency(d: int) -> tuple[float, ...]:
    """Componentwise quadratic irrationals used as the default test frequency."""
    base = [GOLDEN, SILVER, math.sqrt(3.0) - 1.0, (math.sqrt(13.0) - 3.0) / 2.0]
    if d > len(base):
        raise ValueError(f"no default frequency for d={d}")
    return tuple(base[:d])


@dataclass(frozen=True)
class FrequencyClass:
    """A frequency together with the constants for which membership was verified."""

    omega: tuple[float, ...]
    tau: float
    gamma: float
    verified_radius: int


@dataclass(frozen=True)
class FrequencyReport:
    passed: bool
    worst_n: tuple[int, ...]
    margin: float
    radius: int
    gamma: float
    tau: float

    def as_class(self, omega) -> FrequencyClass:
        if not self.passed:
            raise ValueError("frequency did not pass verification")
        return FrequencyClass(tuple(np.atleast_1d(omega).astype(float)), self.tau, self.gamma, self.radius)


@dataclass(frozen=True)
class PhaseReport:
    passed: bool
    violations: list = field(default_factory=list)
    r_min: float = 0.0
    r_max: float = 0.0
    tau1: float = 0.0


def _shell_blocks(d: int, r_lo: int, r_hi: int, chunk: int = 1 << 20):
    """Yield integer arrays covering ``{n : r_lo <= ||n|| <= r_hi}`` exactly once."""
    if r_hi < r_lo or r_hi < 0:
        return
    r_lo = max(r_lo, 0)
    if d == 1:
        for start in range(r_lo, r_hi + 1, chunk):
            stop = min(start + chunk, r_hi + 1)
            pos = np.arange(start, stop, dtype=np.int64)
            vals = np.concatenate([-pos[pos > 0][::-1], pos]) if start == 0 else np.concatenate([-pos[::-1], pos])
            yield vals.reshape(-1, 1)
        return
    # d >= 2: loop over the first coordinate, brute-force the rest
    tail_axis = np.arange(-r_hi, r_hi + 1, dtype=np.int64)
    tail = np.stack(np.meshgrid(*([tail_axis] * (d - 1)), indexing="ij"), -1).reshape(-1, d - 1)
    tail_norm = np.abs(tail).max(axis=1)
    for first in range(-r_hi, r_hi + 1):
        norms = np.maximum(tail_norm, abs(first))
        keep = (norms >= r_lo) & (norms <= r_hi)
        if not np.any(keep):
            continue
        rows = tail[keep]
        yield np.concatenate([np.full((len(rows), 1), first, dtype=np.int64), rows], axis=1)


def _dot(n: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return n.astype(float) @ omega


def _canonical(n: np.ndarray) -> tuple[int, ...]:
    """Representative of ``{n, -n}`` whose first nonzero coordinate is positive."""
    t = tuple(int(v) for v in n)
    first = next((v for v in t if v != 0), 0)
    return tuple(-v for v in t) if first < 0 else t


def verify_frequency(omega, gamma: float, tau: float, R: int) -> FrequencyReport:
    """Exhaustively check ``||n.omega|| >= gamma exp(-||n||^tau)`` for ``0 < ||n|| <= R``.

    ``margin`` is the minimum of ``||n.omega|| * exp(||n||^tau)`` over the
    ball, attained at ``worst_n``; the check passes iff ``margin >= gamma``.
    The margin is therefore the largest admissible ``gamma`` for this radius.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    best_key = None
    for block in _shell_blocks(len(om), 1, int(R)):
        norms = np.abs(block).max(axis=1)
        vals = torus_norm(_dot(block, om)) * np.exp(norms.astype(float)**tau)
        cand = np.nonzero(vals == vals.min())[0]
        for i in cand:
            n = _canonical(block[i])
            key = (float(vals[i]), int(norms[i]), n)
            if best_key is None or key < best_key:
                best_key = key
    best, _, best_n = best_key
    return FrequencyReport(bool(best >= gamma), best_n, best, int(R), float(gamma), float(tau))


def verify_phase_condition(theta: float, omega, tau1: float, R_min: float, R_max: float) -> PhaseReport:
    """List all ``n`` with ``R_min <= ||n|| <= R_max`` and ``||2 theta + n.omega|| <= exp(-||n||^tau1)``.

    The phase passes iff the list is empty.  Violations are sorted
    lexicographically.
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    lo, hi = int(math.ceil(R_min)), int(math.floor(R_max))
    found = []
    for block in _shell_blocks(len(om), lo, hi):
        norms = np.abs(block).max(axis=1).astype(float)
        bad = torus_norm(2.0 * theta + _dot(block, om)) <= np.exp(-norms**tau1)
        if np.any(bad):
            found.append(block[bad])
    if found:
        arr = np.concatenate(found)
        arr = arr[np.lexsort(arr.T[::-1])]
        violations = [tuple(int(v) for v in row) for row in arr]
    else:
        violations = []
    return PhaseReport(not violations, violations, float(R_min), float(R_max), float(tau1))


def _merge(intervals: np.ndarray) -> np.ndarray:
    if not len(intervals):
        return intervals.reshape(0, 2)
    iv = intervals[np.argsort(intervals[:, 0])]
    merged = [list(iv[0])]
    for a, b in iv[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return np.array(merged)


def forbidden_phase_arcs(omega, tau1: float, R_min: float, R_max: float) -> np.ndarray:
    """Merged closed arcs of ``x = 2 theta mod 1`` violating the phase condition.

    The set is ``union_n {x : ||x + n.omega|| <= exp(-||n||^tau1)}`` over the
    radius range, returned as sorted disjoint intervals inside ``[0, 1]``.
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    lo, hi = int(math.ceil(R_min)), int(math.floor(R_max))
    pieces = []
    for block in _shell_blocks(len(om), lo, hi):
        norms = np.abs(block).max(axis=1).astype(float)
        half = np.minimum(np.exp(-norms**tau1), 0.5)
        centre = np.mod(-_dot(block, om), 1.0)
        a, b = centre - half, centre + half
        for shift in (-1.0, 0.0, 1.0):
            aa, bb = np.clip(a + shift, 0.0, 1.0), np.clip(b + shift, 0.0, 1.0)
            keep = bb > aa
            pieces.append(np.stack([aa[keep], bb[keep]], axis=1))
    if not pieces:
        return np.zeros((0, 2))
    return _merge(np.concatenate(pieces))


def admissible_phase_intervals(omega, tau1: float, R_min: float, R_max: float) -> np.ndarray:
    """Open intervals of ``theta in [0, 1)`` that pass the phase condition."""
    bad = forbidden_phase_arcs(omega, tau1, R_min, R_max)
    free = []
    cursor = 0.0
    for a, b in bad:
        if a > cursor:
            free.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < 1.0:
        free.append((cursor, 1.0))
    free = np.array(free).reshape(-1, 2)
    # x = 2 theta (mod 1) has two preimages in [0, 1)
    return np.concatenate([free / 2.0, free / 2.0 + 0.5]) if len(free) else free


def separation_radius(gamma: float, tau: float, delta: float) -> float:
    """Lower bound on ``||k - k'||`` when ``||(k - k').omega|| < 2 delta`` and ``omega`` is in the class.

    From ``gamma exp(-||n||^tau) <= ||n.omega|| < 2 delta`` one gets
    ``||n|| > |log(gamma / (2 delta))|^(1/tau)`` whenever ``2 delta < gamma``.
    """
    if 2.0 * delta >= gamma:
        return 0.0
    return abs(math.log(gamma / (2.0 * delta))) ** (1.0 / tau)
