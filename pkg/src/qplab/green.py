"""Green's functions, non-resonance certificates, Schur complements and resolvent checks.

Everything here works on finite volumes: ``G = T_Lambda^{-1}`` is computed
densely and compared with a-priori bounds.  Norms are spectral (2-)norms
unless stated otherwise; distances between lattice points are ``||.||_1``
for decay exponents and the sup norm for thresholds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    HalfLatticePoint,
    ModelParams,
    OperatorInstance,
    QPError,
    Region,
    assemble_T,
    boundary,
    torus_norm,
)

__all__ = [
    "GreensFunction",
    "DecayFit",
    "ZeroGoodReport",
    "Certificate",
    "SchurResult",
    "SchurNorms",
    "theta0_from_energy",
    "delta0",
    "gamma0",
    "invert",
    "check_zero_good",
    "neumann_certificate",
    "schur_complement",
    "schur_norm_bound",
    "resolvent_residual",
    "fit_decay",
    "pair_distances",
]

EXACT_NORM_LIMIT = 1024


def theta0_from_energy(energy: float) -> complex:
    """Principal solution of ``cos(2 pi theta0) = E``.

    Real in ``[0, 1/2]`` for ``|E| <= 1``; purely imaginary (``E > 1``) or
    ``1/2 + i t`` (``E < -1``) otherwise.
    """
    if abs(energy) > 2.0:
        raise QPError("energy-out-of-range", f"|E| = {abs(energy)} > 2")
    val = np.arccos(complex(energy)) / (2.0 * np.pi)
    # numpy's branch yields a negative imaginary part for E > 1; either sign
    # is a root, keep the one with nonnegative imaginary part
    if val.imag < 0:
        val = complex(val.real, -val.imag)
    return complex(val)


def delta0(eps: float) -> float:
    """Stage-0 resonance threshold ``eps^(1/10)``."""
    return float(eps) ** 0.1


def gamma0(eps: float) -> float:
    """Stage-0 decay rate ``|log eps| / 2`` (natural log)."""
    return math.inf if eps == 0 else 0.5 * abs(math.log(eps))


@dataclass(frozen=True, eq=False)
class GreensFunction:
    region: Region
    entries: np.ndarray
    op_norm: float
    condition_estimate: float
    residual: float
    eps: float = 0.0
    exact_norm: bool = True


@dataclass(frozen=True)
class DecayFit:
    rate: float
    threshold_radius: float
    residual: float
    worst_pair: tuple = ()
    n_pairs: int = 0


@dataclass(frozen=True)
class ZeroGoodReport:
    is_good: bool
    witnesses: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.is_good


@dataclass(frozen=True)
class Certificate:
    norm_bound: float
    gamma0: float
    verified: bool = False
    measured_norm: float = float("nan")
    norm_margin: float = float("nan")
    decay_margin: float = float("nan")


@dataclass(frozen=True, eq=False)
class SchurResult:
    S: np.ndarray
    det_check: float
    logdet_M: tuple
    logdet_complement: tuple
    logdet_S: tuple


@dataclass(frozen=True)
class SchurNorms:
    s_inv: float
    m_inv: float
    bound: float
    holds: bool


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------
def _smallest_abs_eig(T: OperatorInstance) -> tuple[float, float, bool]:
    """Return ``(min |lambda|, max |lambda|, exact)`` for the symmetric matrix ``T``."""
    n = len(T.region)
    if n <= EXACT_NORM_LIMIT:
        ev = np.linalg.eigvalsh(T.dense())
        a = np.abs(ev)
        return float(a.min()), float(a.max()), True
    A = T.sparse().astype(float)
    try:
        lo = spla.eigsh(A, k=1, sigma=0.0, which="LM", return_eigenvectors=False)
        hi = spla.eigsh(A, k=1, which="LM", return_eigenvectors=False)
        return float(abs(lo[0])), float(abs(hi[0])), True
    except (RuntimeError, spla.ArpackNoConvergence):
        return 0.0, T.norm_bound() + abs(T.energy), False


def invert(T: OperatorInstance, singularity_tol: float | None = None,
           residual_tol: float = 1e-8) -> GreensFunction:
    """Dense Green's function ``G = T^{-1}`` with a residual certificate.

    The operator norm is ``1 / min |lambda(T)|`` (exact eigenvalues up to
    :data:`EXACT_NORM_LIMIT` sites, shift-invert Lanczos above).  Raises
    ``near-singular`` when the smallest singular value is below
    ``singularity_tol`` (default ``1e-12 * ||T||``).
    """
    smin, smax, exact = _smallest_abs_eig(T)
    if singularity_tol is None:
        singularity_tol = 1e-12 * max(smax, 1e-300)
    if smin < singularity_tol:
        raise QPError("near-singular", f"smallest singular value {smin:.3e}", value=smin)
    M = T.dense()
    G = sla.inv(M, check_finite=False)
    G = 0.5 * (G + G.T)
    res = float(np.max(np.abs(M @ G - np.eye(len(M)))))
    if res > residual_tol:
        raise QPError("residual", f"max |TG - I| = {res:.3e}", value=res)
    if not exact:
        smin = 1.0 / float(np.max(np.sum(np.abs(G), axis=1)))
    return GreensFunction(region=T.region, entries=G, op_norm=1.0 / smin,
                          condition_estimate=smax / smin, residual=res, eps=T.eps,
                          exact_norm=exact)


# ---------------------------------------------------------------------------
# stage-0 non-resonance
# ---------------------------------------------------------------------------
def _resonance_margins(region: Region, params: ModelParams, theta0: complex) -> np.ndarray:
    x = params.theta + region.doubled @ np.asarray(params.omega) / 2.0
    return np.minimum(torus_norm(x + theta0), torus_norm(x - theta0))


def check_zero_good(region: Region, params: ModelParams, theta0: complex | None = None,
                    delta: float | None = None) -> ZeroGoodReport:
    """``region`` is 0-good iff no site ``k`` has ``min_sign ||theta + k.omega +- theta0|| < delta``."""
    if theta0 is None:
        theta0 = theta0_from_energy(params.energy)
    if delta is None:
        delta = delta0(params.eps)
    if not len(region):
        return ZeroGoodReport(True, [])
    m = np.atleast_1d(_resonance_margins(region, params, theta0))
    bad = np.nonzero(m < delta)[0]
    wit = [(HalfLatticePoint(tuple(int(v) for v in region.doubled[i])), float(m[i])) for i in bad]
    return ZeroGoodReport(len(wit) == 0, wit)


def pair_distances(region: Region) -> tuple[np.ndarray, np.ndarray]:
    """Matrices of sup-norm and l1 distances between all pairs of sites."""
    c = region.doubled
    diff = np.abs(c[:, None, :] - c[None, :, :])
    return diff.max(axis=2) / 2.0, diff.sum(axis=2) / 2.0


def neumann_certificate(T: OperatorInstance, delta: float | None = None, verify: bool = True,
                        G: GreensFunction | None = None) -> Certificate:
    """Stage-0 bounds ``||T^{-1}|| < delta0^-2`` and ``|G(x,y)| < exp(-gamma0 ||x-y||_1)``.

    Without ``verify`` only the a-priori constants are returned.  With it,
    the Green's function is computed and both bounds are asserted; a
    violation raises ``certificate-violated`` with the offending pair.
    Exact zeros of ``G`` count as satisfying the decay bound (the limit
    ``eps -> 0``).
    """
    if delta is None:
        delta = delta0(T.eps)
    rep = check_zero_good(T.region, T.params, delta=delta)
    if not rep.is_good:
        raise QPError("not-zero-good", f"{len(rep.witnesses)} resonant sites", witnesses=rep.witnesses)
    bound = math.inf if delta == 0 else delta**-2
    g0 = gamma0(T.eps)
    if not verify:
        return Certificate(norm_bound=bound, gamma0=g0)
    if G is None:
        G = invert(T)
    norm_margin = bound - G.op_norm
    if not norm_margin > 0:
        raise QPError("certificate-violated", f"||G|| = {G.op_norm:.6g} >= {bound:.6g}",
                      pair=None, norm=G.op_norm)
    sup_d, l1_d = pair_distances(T.region)
    off = ~np.eye(len(T.region), dtype=bool)
    absG = np.abs(G.entries)
    with np.errstate(divide="ignore", invalid="ignore"):
        logG = np.log(absG)
        slack = np.where(off, -g0 * l1_d - logG, np.inf)  # > 0 means the bound holds
    slack = np.where(absG == 0, np.inf, slack)
    i, j = np.unravel_index(int(np.argmin(slack)), slack.shape)
    worst = float(slack[i, j]) if off.any() else math.inf
    if not worst > 0:
        x = HalfLatticePoint(tuple(int(v) for v in T.region.doubled[i]))
        y = HalfLatticePoint(tuple(int(v) for v in T.region.doubled[j]))
        raise QPError("certificate-violated", f"|G({x},{y})| exceeds exp(-gamma0 |x-y|_1)",
                      pair=(x, y), log_slack=worst)
    return Certificate(norm_bound=bound, gamma0=g0, verified=True, measured_norm=G.op_norm,
                       norm_margin=norm_margin, decay_margin=worst)


# ---------------------------------------------------------------------------
# Schur complements
# ---------------------------------------------------------------------------
def _split(n: int, subset) -> tuple[np.ndarray, np.ndarray]:
    idx = np.asarray(subset)
    if idx.dtype == bool:
        mask = idx.copy()
    else:
        mask = np.zeros(n, dtype=bool)
        mask[idx.astype(int)] = True
    return np.nonzero(mask)[0], np.nonzero(~mask)[0]


def schur_complement(M: np.ndarray, subset, cond_limit: float = 1e14) -> SchurResult:
    """Schur complement of ``M`` onto ``subset``.

    ``S = M_AA - M_{A,A^c} (M_{A^c})^{-1} M_{A^c,A}``; ``det_check`` is the
    relative discrepancy ``|det M_{A^c} det S / det M - 1|``.  Raises
    ``near-singular`` when the complement block has condition number above
    ``cond_limit``.
    """
    M = np.asarray(M)
    A, B = _split(len(M), subset)
    MAA = M[np.ix_(A, A)]
    if len(B) == 0:
        S = MAA.copy()
        ld = np.linalg.slogdet(M)
        return SchurResult(S, 0.0, ld, (1.0, 0.0), ld)
    MBB = M[np.ix_(B, B)]
    c = np.linalg.cond(MBB)
    if not np.isfinite(c) or c > cond_limit:
        raise QPError("near-singular", f"complement block condition {c:.3e}", value=c)
    MAB = M[np.ix_(A, B)]
    MBA = M[np.ix_(B, A)]
    S = MAA - MAB @ np.linalg.solve(MBB, MBA)
    ldM = np.linalg.slogdet(M)
    ldB = np.linalg.slogdet(MBB)
    ldS = np.linalg.slogdet(S)
    if ldM[0] == 0:
        check = 0.0 if ldS[0] == 0 else math.inf
    else:
        ratio = (ldB[0] * ldS[0] / ldM[0]) * np.exp(ldB[1] + ldS[1] - ldM[1])
        check = float(abs(ratio - 1.0))
    return SchurResult(S, check, ldM, ldB, ldS)


def schur_norm_bound(M: np.ndarray, subset, strict: bool = True) -> SchurNorms:
    """The sandwich ``||S^-1|| <= ||M^-1|| < 4 (1 + ||M_{A^c}^-1||)^2 (1 + ||S^-1||)``.

    Requires the off-diagonal blocks to have norm at most one.  Returns the
    three quantities; with ``strict`` a failed sandwich raises
    ``norm-sandwich``.
    """
    M = np.asarray(M)
    A, B = _split(len(M), subset)
    if len(B):
        offn = max(np.linalg.norm(M[np.ix_(A, B)], 2), np.linalg.norm(M[np.ix_(B, A)], 2))
        if offn > 1.0 + 1e-12:
            raise QPError("bad-blocks", f"off-diagonal block norm {offn:.3g} > 1")
    res = schur_complement(M, subset)
    s_inv = float(1.0 / np.linalg.svd(res.S, compute_uv=False).min())
    m_inv = float(1.0 / np.linalg.svd(M, compute_uv=False).min())
    b_inv = float(1.0 / np.linalg.svd(M[np.ix_(B, B)], compute_uv=False).min()) if len(B) else 0.0
    bound = 4.0 * (1.0 + b_inv) ** 2 * (1.0 + s_inv)
    holds = s_inv <= m_inv * (1.0 + 1e-10) and m_inv < bound
    if strict and not holds:
        raise QPError("norm-sandwich", f"{s_inv:.6g} <= {m_inv:.6g} < {bound:.6g} fails")
    return SchurNorms(s_inv, m_inv, bound, holds)


# ---------------------------------------------------------------------------
# resolvent identity
# ---------------------------------------------------------------------------
def resolvent_residual(outer: OperatorInstance, inner: Region, x=None, y=None,
                       G_outer: np.ndarray | None = None, G_inner: np.ndarray | None = None) -> float:
    """Residual of the geometric resolvent identity for ``inner`` inside ``outer``.

    For ``x`` in ``inner`` and ``y`` in the outer region:

        G(x, y) = G'(x, y) 1[y in inner] - sum_{(w, w')} G'(x, w) Gamma(w, w') G(w', y)

    with ``G = T_outer^{-1}``, ``G' = T_inner^{-1}`` and the sum over the
    relative boundary pairs.  ``Gamma(w, w') = eps`` on nearest-neighbour
    bonds and zero on diagonal pairs.  Without ``x``/``y`` the maximum
    residual over all admissible pairs is returned.
    """
    Lam = outer.region
    if not inner.issubset(Lam):
        raise QPError("not-nested", "inner region must lie inside the outer region")
    if G_outer is None:
        G_outer = invert(outer).entries
    if G_inner is None:
        G_inner = invert(assemble_T(inner, outer.params)).entries
    bd = boundary(inner, Lam)
    pairs = bd.pairs_doubled
    mask = bd.bond_mask
    # index maps
    in_idx = Lam.index_of(inner.doubled)
    if len(pairs):
        w_in = inner.index_of(pairs[:, 0])
        wp_out = Lam.index_of(pairs[:, 1])
        gam = np.where(mask, outer.eps, 0.0)
    if x is None:
        xs = np.arange(len(inner))
    else:
        xs = inner.index_of([HalfLatticePoint.from_coords(x).doubled if not isinstance(x, HalfLatticePoint) else x.doubled])
    if y is None:
        ys = np.arange(len(Lam))
    else:
        ys = Lam.index_of([HalfLatticePoint.from_coords(y).doubled if not isinstance(y, HalfLatticePoint) else y.doubled])
    if np.any(xs < 0) or np.any(ys < 0):
        raise QPError("bad-point", "x must lie in inner and y in outer")
    lhs = G_outer[np.ix_(in_idx[xs], ys)]
    first = np.zeros((len(xs), len(ys)))
    chi = np.full(len(Lam), -1, dtype=np.int64)
    chi[in_idx] = np.arange(len(inner))
    yin = chi[ys]
    sel = yin >= 0
    first[:, sel] = G_inner[np.ix_(xs, yin[sel])]
    if len(pairs):
        corr = (G_inner[np.ix_(xs, w_in)] * gam) @ G_outer[np.ix_(wp_out, ys)]
    else:
        corr = 0.0
    return float(np.max(np.abs(lhs - (first - corr))))


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------
def fit_decay(G: GreensFunction, threshold_radius: float, max_rate: float | None = None) -> DecayFit:
    """Certified uniform decay rate of ``G`` beyond a sup-norm radius.

    ``rate = min (-log |G(x,y)|) / ||x-y||_1`` over pairs with
    ``||x - y|| > threshold_radius``.  Exact zeros give an infinite rate,
    capped at ``max_rate`` (default ``10 |log eps|``).  ``residual`` is the
    gap between the worst and second-worst pair.
    """
    if max_rate is None:
        max_rate = 10.0 * abs(math.log(G.eps)) if G.eps > 0 else 1e3
    sup_d, l1_d = pair_distances(G.region)
    sel = sup_d > threshold_radius
    if not np.any(sel):
        raise QPError("region-too-small", f"no pair with distance > {threshold_radius}")
    absG = np.abs(G.entries[sel])
    with np.errstate(divide="ignore"):
        rates = np.where(absG > 0, -np.log(np.where(absG > 0, absG, 1.0)) / l1_d[sel], np.inf)
    rates = np.minimum(rates, max_rate)
    order = np.argsort(rates, kind="stable")
    rate = float(rates[order[0]])
    second = float(rates[order[1]]) if len(order) > 1 else rate
    ii, jj = np.nonzero(sel)
    i, j = ii[order[0]], jj[order[0]]
    pair = (tuple(float(v) for v in G.region.coords[i]), tuple(float(v) for v in G.region.coords[j]))
    return DecayFit(rate=rate, threshold_radius=float(threshold_radius), residual=second - rate,
                    worst_pair=pair, n_pairs=int(sel.sum()))
