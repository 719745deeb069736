"""Eigenvector decay measurements on finite boxes.

Finite-volume eigenvectors stand in for generalized eigenfunctions: each
normalized eigenvector gets a center (its largest entry) and a certified
exponential envelope ``|v(n)| <= exp(p - rate ||n - center||)`` beyond a
minimal radius.  The report collects the rates of all vectors whose center is
away from the boundary of the box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import DENSE_LIMIT, ModelParams, QPError, Region, assemble_T, cube
from .diophantine import verify_phase_condition

__all__ = [
    "EigenpairSet",
    "DecayProfile",
    "LocalizationReport",
    "eigensolve",
    "fit_eigenvector_decay",
    "localization_report",
    "default_threshold",
]


@dataclass(frozen=True, eq=False)
class EigenpairSet:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    region: Region
    max_residual: float

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class DecayProfile:
    center: tuple
    rate: float
    prefactor_log: float
    center_index: int
    n_points: int


def default_threshold(eps: float) -> float:
    """``|log eps| / 24``."""
    return abs(math.log(eps)) / 24.0


def eigensolve(H, region: Region | None = None, dense_limit: int = DENSE_LIMIT) -> EigenpairSet:
    """Full symmetric eigendecomposition with a deterministic sign convention.

    Each eigenvector is flipped so that its first entry of magnitude above
    ``1e-8`` is positive.  Accepts an :class:`OperatorInstance` (its
    Hamiltonian is used) or a bare symmetric matrix.
    """
    if hasattr(H, "hamiltonian"):
        region = H.region if region is None else region
        H = H.hamiltonian()
    n = H.shape[0]
    if n > dense_limit:
        raise QPError("too-large", f"{n} sites exceed the dense limit {dense_limit}; use a smaller window")
    A = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)
    w, V = np.linalg.eigh(A)
    for j in range(n):
        col = V[:, j]
        big = np.nonzero(np.abs(col) > 1e-8)[0]
        if len(big) and col[big[0]] < 0:
            V[:, j] = -col
    norm = max(float(np.abs(A).sum(axis=1).max()), 1e-300) if n else 1.0
    res = float(np.max(np.linalg.norm(A @ V - V * w, axis=0))) if n else 0.0
    if res > 1e-8 * norm:
        raise QPError("residual", f"eigenpair residual {res:.3e} exceeds 1e-8 ||H||")
    if region is None:
        region = Region(np.arange(n).reshape(-1, 1) * 2, d=1)
    return EigenpairSet(w, V, region, res)


def fit_eigenvector_decay(v: np.ndarray, region: Region, r_min: float = 5.0,
                          prefactor_log: float | None = None, max_rate: float = 1e3) -> DecayProfile:
    """Largest ``rate`` with ``|v(n)| <= exp(prefactor_log - rate ||n - center||)`` for ``||n - center|| >= r_min``.

    ``center`` is the site of largest ``|v|`` (first in lexicographic order
    on ties) and ``prefactor_log`` defaults to ``log #Lambda``.  Exact zeros
    impose no constraint; if all far entries vanish the rate is ``max_rate``.
    """
    v = np.asarray(v)
    n = len(region)
    if len(v) != n:
        raise QPError("dimension-mismatch", "vector length differs from region size")
    if prefactor_log is None:
        prefactor_log = math.log(n)
    prefactor_log = min(prefactor_log, math.log(n))
    a = np.abs(v)
    ci = int(np.argmax(a))  # argmax returns the first maximum: rows are lexicographic
    c = region.doubled[ci]
    dist = np.abs(region.doubled - c).max(axis=1) / 2.0
    far = dist >= r_min
    if not np.any(far):
        raise QPError("region-too-small", f"no site at distance >= {r_min} from the center")
    af = a[far]
    with np.errstate(divide="ignore"):
        rates = np.where(af > 0, (prefactor_log - np.log(np.where(af > 0, af, 1.0))) / dist[far], np.inf)
    rate = float(min(rates.min(), max_rate))
    return DecayProfile(tuple(float(x) for x in region.coords[ci]), rate, float(prefactor_log), ci, int(far.sum()))


@dataclass
class LocalizationReport:
    threshold: float
    rates: np.ndarray
    centers: np.ndarray
    eigenvalues: np.ndarray
    boundary: np.ndarray
    pass_fraction: float
    n_interior: int
    phase_condition: str
    phase_violations: list = field(default_factory=list)
    boundary_low_rate_share: float = float("nan")
    quantiles: dict = field(default_factory=dict)


def localization_report(params: ModelParams, N: int, tau1: float, threshold: float | None = None,
                        r_min: float = 5.0, R_min: float = 5.0, R_max: float | None = None,
                        collar_fraction: float = 0.1) -> LocalizationReport:
    """Decay rates of all eigenvectors of ``H(theta)`` on ``Lambda_N``.

    Vectors centred within ``collar_fraction * N`` of the boundary are
    excluded from ``pass_fraction``.  The phase condition is checked on
    ``[R_min, R_max]`` (``R_max`` defaults to ``2 N``) and its outcome is
    recorded; the report is produced either way.
    """
    if threshold is None:
        threshold = default_threshold(params.eps) if params.eps > 0 else 0.0
    region = cube(N, d=params.d)
    T = assemble_T(region, params.replace(energy=0.0))
    pairs = eigensolve(T)
    if R_max is None:
        R_max = 2.0 * N
    phase = verify_phase_condition(params.theta, params.omega, tau1, R_min, R_max)
    rates, centers = [], []
    for j in range(len(pairs)):
        prof = fit_eigenvector_decay(pairs.eigenvectors[:, j], region, r_min=r_min)
        rates.append(prof.rate)
        centers.append(prof.center)
    rates = np.array(rates)
    centers = np.array(centers)
    edge = N - np.abs(centers).max(axis=1)
    boundary = edge < collar_fraction * N
    interior = ~boundary
    good = rates >= threshold
    frac = float(np.mean(good[interior])) if np.any(interior) else float("nan")
    low = ~good
    share = float(np.mean(boundary[low])) if np.any(low) else float("nan")
    qs = {f"q{int(q * 100):02d}": float(np.quantile(rates[interior], q)) for q in (0.01, 0.05, 0.1, 0.25, 0.5)} \
        if np.any(interior) else {}
    return LocalizationReport(threshold, rates, centers, pairs.eigenvalues, boundary, frac, int(interior.sum()),
                              "pass" if phase.passed else "fail", phase.violations[:20], share, qs)
