"""Finite-volume integrated density of states by inertia counting.

``N_Lambda(E; theta) = #{lambda in sigma(H_Lambda(theta)) : lambda <= E} / #Lambda``.
Counts come from the signs of the pivots of ``H - E = L D L^T`` (Sylvester's
law of inertia), never from eigenvalues.  One-dimensional boxes give a
tridiagonal ``H``; there the pivot recurrence is evaluated for many shifts at
once.  Other matrices go through the Bunch-Kaufman factorization of
:func:`scipy.linalg.ldl`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .core import ModelParams, OperatorInstance, QPError, assemble_T, cube

__all__ = [
    "CountResult",
    "IdsScan",
    "HolderReport",
    "count_leq",
    "count_leq_many",
    "ids_window",
    "ids_operator",
    "run_scan",
    "holder_scan",
    "stratified_thetas",
]

log = logging.getLogger(__name__)

#: relative size of the deterministic shift used when ``H - E`` is singular
JITTER = 1e-12


@dataclass(frozen=True)
class CountResult:
    count: int
    jitter: float = 0.0


def _as_matrix(H):
    if isinstance(H, OperatorInstance):
        return H.hamiltonian()
    return H


def _tridiagonal(H) -> tuple[np.ndarray, np.ndarray] | None:
    """``(diag, offdiag)`` if ``H`` is tridiagonal, else ``None``."""
    n = H.shape[0]
    if sp.issparse(H):
        coo = H.tocoo()
        if np.any(np.abs(coo.row - coo.col) > 1):
            return None
        dense_band = H.tocsr()
        a = np.asarray(dense_band.diagonal(), dtype=float)
        b = np.asarray(dense_band.diagonal(1), dtype=float) if n > 1 else np.zeros(0)
        return a, b
    H = np.asarray(H)
    if n > 2 and (np.any(np.triu(H, 2)) or np.any(np.tril(H, -2))):
        return None
    return np.diag(H).astype(float), (np.diag(H, 1).astype(float) if n > 1 else np.zeros(0))


def _norm_estimate(H) -> float:
    if sp.issparse(H):
        return float(abs(H).sum(axis=1).max()) if H.shape[0] else 0.0
    return float(np.abs(H).sum(axis=1).max()) if len(H) else 0.0


def _sturm(a: np.ndarray, b2: np.ndarray, shifts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Negative-pivot counts of ``T - x`` for every shift ``x``; second output flags exact zero pivots."""
    x = np.asarray(shifts, dtype=float)
    neg = np.zeros(x.shape, dtype=np.int64)
    zero = np.zeros(x.shape, dtype=bool)
    d = a[0] - x
    neg += d < 0
    zero |= d == 0
    for i in range(1, len(a)):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (a[i] - x) - b2[i - 1] / d
        zero |= ~np.isfinite(d) | (d == 0)
        neg += d < 0
    return neg, zero


def _ldl_negatives(A: np.ndarray) -> tuple[int, bool]:
    """Number of negative eigenvalues of symmetric ``A`` from the block-diagonal factor ``D``."""
    _, D, _ = sla.ldl(A, lower=True, hermitian=True, check_finite=False)
    n = len(D)
    neg, singular = 0, False
    i = 0
    scale = max(np.abs(D).max(), 1.0) if n else 1.0
    tol = 4.0 * np.finfo(float).eps * scale
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            ev = np.linalg.eigvalsh(D[i:i + 2, i:i + 2])
            neg += int(np.sum(ev < 0))
            singular |= bool(np.any(np.abs(ev) <= tol))
            i += 2
        else:
            neg += int(D[i, i] < 0)
            singular |= bool(abs(D[i, i]) <= tol)
            i += 1
    return neg, singular


def count_leq_many(H, energies: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalue counts ``#{lambda <= E}`` for every ``E`` plus the jitter applied to each.

    The number of negative pivots of ``H - E`` counts the eigenvalues strictly
    below ``E``; the two agree unless ``H - E`` is singular.  In that case
    ``E`` is moved up by ``JITTER * ||H||`` (deterministic) so that an
    eigenvalue sitting exactly at ``E`` is counted, and the shift is reported.
    """
    H = _as_matrix(H)
    E = np.atleast_1d(np.asarray(energies, dtype=float))
    n = H.shape[0]
    if n == 0:
        return np.zeros(len(E), dtype=np.int64), np.zeros(len(E))
    jit = JITTER * max(_norm_estimate(H), 1.0)
    tri = _tridiagonal(H)
    if tri is not None:
        a, b = tri
        b2 = b * b
        below, zero = _sturm(a, b2, E)
        counts = below.copy()
        jitter = np.zeros(len(E))
        # eigenvalues equal to E are counted too: check lambda = E via singular pivots
        if np.any(zero):
            cnt2, zero2 = _sturm(a, b2, E[zero] + jit)
            if np.any(zero2):
                raise QPError("singular-shift", "shift stays singular after jitter")
            counts[zero] = cnt2
            jitter[zero] = jit
        return counts.astype(np.int64), jitter
    dense = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)
    counts = np.zeros(len(E), dtype=np.int64)
    jitter = np.zeros(len(E))
    eye = np.eye(n)
    for idx, e in enumerate(E):
        neg, singular = _ldl_negatives(dense - e * eye)
        if singular:
            neg, singular = _ldl_negatives(dense - (e + jit) * eye)
            if singular:
                raise QPError("singular-shift", "shift stays singular after jitter")
            jitter[idx] = jit
        counts[idx] = neg
    return counts, jitter


def count_leq(H, E: float, return_jitter: bool = False):
    """Number of eigenvalues of the symmetric matrix ``H`` that are ``<= E``."""
    counts, jit = count_leq_many(H, [E])
    if return_jitter:
        return CountResult(int(counts[0]), float(jit[0]))
    return int(counts[0])


def ids_operator(N: int, params: ModelParams):
    """``H_{Lambda_N}(theta)`` on the cube of radius ``N`` (sparse for large boxes)."""
    region = cube(N, d=params.d)
    return assemble_T(region, params.replace(energy=0.0)).matrix


def ids_window(N: int, params: ModelParams, E: float, eta: float) -> tuple[int, float]:
    """``count = N(E + eta) - N(E - eta)`` on ``Lambda_N`` and the density ``count / #Lambda_N``."""
    if not eta > 0:
        raise QPError("bad-parameter", "eta must be positive")
    H = ids_operator(N, params)
    c, _ = count_leq_many(H, [E - eta, E + eta])
    count = int(c[1] - c[0])
    return count, count / H.shape[0]


def stratified_thetas(n: int, seed: int = 0) -> np.ndarray:
    """One uniform draw in each of ``n`` equal subintervals of ``[0, 1)``."""
    rng = np.random.default_rng(seed)
    return (np.arange(n) + rng.random(n)) / n


@dataclass
class IdsScan:
    """Window counts over a (theta, E, eta) grid on ``Lambda_N``."""

    N: int
    omega: tuple
    eps: float
    thetas: np.ndarray
    energy_grid: np.ndarray
    etas: np.ndarray
    mu: float = 0.1
    counts: np.ndarray | None = None
    size: int = 0
    jitter_events: int = 0

    def __post_init__(self):
        self.omega = tuple(float(w) for w in np.atleast_1d(self.omega))
        self.thetas = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        self.energy_grid = np.atleast_1d(np.asarray(self.energy_grid, dtype=float))
        etas = np.atleast_1d(np.asarray(self.etas, dtype=float))
        if not len(self.energy_grid):
            raise QPError("bad-config", "energy_grid is empty", field="energy_grid")
        if not len(etas) or np.any(etas <= 0):
            raise QPError("bad-config", "etas must be a nonempty list of positive numbers", field="etas")
        self.etas = etas

    @property
    def densities(self) -> np.ndarray:
        return self.counts / self.size


def run_scan(scan: IdsScan) -> IdsScan:
    """Fill ``scan.counts[theta, E, eta]`` with inertia window counts."""
    d = len(scan.omega)
    region = cube(scan.N, d=d)
    scan.size = len(region)
    E, eta = np.meshgrid(scan.energy_grid, scan.etas, indexing="ij")
    shifts = np.concatenate([(E - eta).ravel(), (E + eta).ravel()])
    counts = np.zeros((len(scan.thetas), len(scan.energy_grid), len(scan.etas)), dtype=np.int64)
    jit_events = 0
    for t, theta in enumerate(scan.thetas):
        params = ModelParams(eps=scan.eps, omega=scan.omega, theta=float(theta), energy=0.0)
        H = assemble_T(region, params).matrix
        c, jit = count_leq_many(H, shifts)
        jit_events += int(np.count_nonzero(jit))
        half = len(shifts) // 2
        counts[t] = (c[half:] - c[:half]).reshape(E.shape)
    scan.counts = counts
    scan.jitter_events = jit_events
    return scan


@dataclass
class HolderReport:
    min_exponent: float
    worst_exponent_energy: float
    exponents: np.ndarray
    max_density: np.ndarray
    bounds: np.ndarray
    passed: np.ndarray
    worst_cell: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))


def holder_scan(scan: IdsScan) -> HolderReport:
    """Max-over-theta window densities against ``eta^(1/2 - mu)`` and per-energy fitted exponents.

    The exponent at ``E`` is the least-squares slope of ``log max density``
    against ``log eta`` over the ``eta`` values with a nonzero density;
    fewer than two such values give ``+inf``.
    """
    if scan.counts is None:
        run_scan(scan)
    if len(scan.etas) < 2 or scan.etas.max() / scan.etas.min() < 10.0 * (1 - 1e-12):
        raise QPError("bad-config", "need at least two eta values spanning a decade", field="etas")
    dens = scan.densities.max(axis=0)  # (E, eta)
    bounds = scan.etas ** (0.5 - scan.mu)
    passed = dens <= bounds[None, :]
    logeta = np.log(scan.etas)
    exps = np.full(len(scan.energy_grid), math.inf)
    for i in range(len(scan.energy_grid)):
        sel = dens[i] > 0
        if np.count_nonzero(sel) >= 2:
            x, y = logeta[sel], np.log(dens[i, sel])
            if np.ptp(x) > 0:
                exps[i] = float(np.polyfit(x, y, 1)[0])
    k = int(np.argmin(exps))
    ratio = dens / bounds[None, :]
    i, j = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    t = int(np.argmax(scan.densities[:, i, j]))
    worst = {"energy": float(scan.energy_grid[i]), "eta": float(scan.etas[j]), "theta": float(scan.thetas[t]),
             "density": float(dens[i, j]), "bound": float(bounds[j]), "ratio": float(ratio[i, j])}
    return HolderReport(float(exps[k]), float(scan.energy_grid[k]), exps, dens, bounds, passed, worst)
