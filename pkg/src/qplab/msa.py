"""Multi-scale bookkeeping of resonant sites, blocks and the tracked zeros ``theta_s``.

A run starts from a finite window ``P_0`` of ``Z^d`` and builds, stage by
stage, the site sets ``P_s``, the singular sets ``Q_s`` / ``Q~_s``, the
blocks ``Omega_k^s``, ``Omega~_k^s``, ``A_k^s`` and the zero ``theta_s`` of
the block determinant.  Every block ``B_k`` is stored once as a template
``B_k - k`` (the templates do not depend on ``k``); absolute blocks are
translates.

Two scale schedules are provided:

``theoretical``
    ``log(gamma/delta_{s+1}) = log(gamma/delta_s)^(c^5)`` and
    ``N_{s+1} = floor(|log(gamma/delta_s)|^(1/(c^5 tau)))``, held in log-space.
``practical``
    ``delta_{s+1} = delta_s^kappa`` and ``N_{s+1} = ceil(N_s^rho)``, which keeps
    two or three stages within reach of dense linear algebra.

Practical mode also exposes ``N1``, ``tilde_exp`` (exponent of the wider
threshold ``delta^tilde_exp``) and ``case_factor`` (the multiple of ``N^c``
separating the two cases).  Theoretical mode pins them to their defining
values.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    HalfLatticePoint,
    ModelParams,
    QPError,
    Region,
    assemble_T,
    complexified_derivative,
    complexified_T,
    cube,
    logdet,
    torus_norm,
)
from .green import invert, neumann_certificate, pair_distances, theta0_from_energy

__all__ = [
    "SCHEMA_VERSION",
    "ScaleParams",
    "ScaleLevel",
    "Schedule",
    "SiteClasses",
    "CaseDecision",
    "BlockTemplate",
    "Block",
    "RootReport",
    "ScaleState",
    "GoodReport",
    "BoundsReport",
    "BandReport",
    "InvariantReport",
    "MSARun",
    "schedule",
    "box_region",
    "init_stage0",
    "classify_sites",
    "select_case",
    "build_next_sites",
    "build_blocks",
    "locate_zeros",
    "track_theta",
    "advance",
    "verify_good_set",
    "enlarge_region",
    "check_bounds",
    "determinant_band",
    "check_invariants",
    "run_msa",
    "sample_good_regions",
    "run_to_dict",
    "history_from_dict",
    "verify_dump",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = "qplab.msa/1"
_LOG_TINY = math.log(np.finfo(float).tiny)
_PAPER_TILDE = 0.01
_PAPER_CASE = 100.0


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ScaleParams:
    """Constants of the scale induction.

    ``eps`` may be omitted in favour of ``log_eps`` when ``eps`` itself is
    below the double-precision range (theoretical schedules only need
    ``log eps``).
    """

    eps: float = 0.0
    tau: float = 0.5
    gamma: float = 0.5
    c: float = 1.03
    mode: str = "practical"
    kappa: float = 3.0
    rho: float = 2.0
    N1: int | None = None
    tilde_exp: float = _PAPER_TILDE
    case_factor: float = _PAPER_CASE
    log_eps: float | None = None

    def __post_init__(self):
        if self.mode not in ("theoretical", "practical"):
            raise QPError("bad-parameter", f"unknown schedule mode {self.mode!r}")
        if self.log_eps is None:
            if not 0.0 < self.eps < 1.0:
                raise QPError("bad-parameter", "eps must lie in (0, 1) unless log_eps is given")
        elif not self.log_eps < 0.0:
            raise QPError("bad-parameter", "log_eps must be negative")
        if not 0.0 < self.tau < 1.0:
            raise QPError("bad-parameter", "tau must lie in (0, 1)")
        if not self.gamma > 0.0:
            raise QPError("bad-parameter", "gamma must be positive")
        if not self.c > 1.0:
            raise QPError("bad-parameter", "c must exceed 1")
        if self.mode == "theoretical":
            if not 1.0 < self.c**20 < 1.0 / self.tau:
                raise QPError("c-constraint", f"c^20 = {self.c**20:.6g} must lie in (1, 1/tau = {1 / self.tau:.6g})")
            if (self.N1 is not None or self.tilde_exp != _PAPER_TILDE
                    or self.case_factor != _PAPER_CASE):
                raise QPError("bad-parameter", "N1, tilde_exp and case_factor are practical-mode overrides")
        else:
            if not (self.kappa > 1.0 and self.rho > 1.0):
                raise QPError("bad-parameter", "kappa and rho must exceed 1")
            if not 0.0 < self.tilde_exp <= 1.0:
                raise QPError("bad-parameter", "tilde_exp must lie in (0, 1]")
            if self.N1 is not None and int(self.N1) < 1:
                raise QPError("bad-parameter", "N1 must be a positive integer")

    @property
    def log_eps_value(self) -> float:
        return float(self.log_eps) if self.log_eps is not None else math.log(self.eps)

    @property
    def log_delta0(self) -> float:
        return 0.1 * self.log_eps_value

    @property
    def delta0(self) -> float:
        return math.exp(self.log_delta0)

    @property
    def gamma0(self) -> float:
        return 0.5 * abs(self.log_eps_value)

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class ScaleLevel:
    """Scale constants of one stage; ``N`` is an integer-valued float (``inf`` if out of range)."""

    s: int
    log_delta: float
    N: float
    gamma_rate: float
    symbolic: bool = False

    @property
    def delta(self) -> float:
        return math.exp(self.log_delta) if self.log_delta > _LOG_TINY else 0.0

    @property
    def N_int(self) -> int:
        if not math.isfinite(self.N):
            raise QPError("symbolic-stage", f"N_{self.s} is beyond floating-point range")
        return int(self.N)


@dataclass(frozen=True)
class Schedule:
    params: ScaleParams
    levels: tuple[ScaleLevel, ...]
    gamma_floor: float

    def __getitem__(self, s: int) -> ScaleLevel:
        return self.levels[s]

    def __len__(self) -> int:
        return len(self.levels)


def _pow(base: float, expo: float) -> float:
    try:
        return float(base) ** float(expo)
    except OverflowError:
        return math.inf


def schedule(params: ScaleParams, s_max: int) -> Schedule:
    """Scale constants ``(delta_s, N_s, gamma_s)`` for ``s = 0..s_max``.

    ``N_0`` is set to 1 (stage-0 blocks are single sites).  ``gamma_s``
    follows ``gamma_s = gamma_{s-1} (1 - N_s^(1/c - 1))^3`` in both modes.
    """
    if s_max < 0:
        raise QPError("bad-parameter", "s_max must be nonnegative")
    c, tau = params.c, params.tau
    log_gamma = math.log(params.gamma)
    ld = params.log_delta0
    L = abs(log_gamma - ld)
    g = params.gamma0
    levels = [ScaleLevel(0, ld, 1.0, g, ld <= _LOG_TINY)]
    N_prev = 1.0
    for s in range(1, s_max + 1):
        if params.mode == "theoretical":
            N = _pow(L, 1.0 / (c**5 * tau))
            N = math.floor(N) if math.isfinite(N) else math.inf
            L = _pow(L, c**5)
            ld = log_gamma - L
        else:
            if s == 1:
                N = params.N1 if params.N1 is not None else math.floor(_pow(L, 1.0 / (c**5 * tau)))
            else:
                N = math.ceil(_pow(N_prev, params.rho)) if math.isfinite(N_prev) else math.inf
            ld = params.kappa * ld
        N = max(float(N), 1.0)
        if math.isfinite(N):
            g = g * (1.0 - N ** (1.0 / c - 1.0)) ** 3
        symbolic = (not math.isfinite(N)) or (not math.isfinite(ld)) or ld <= _LOG_TINY
        levels.append(ScaleLevel(s, ld, N, g, symbolic))
        N_prev = N
    return Schedule(params, tuple(levels), 0.25 * abs(params.log_eps_value))


# ---------------------------------------------------------------------------
# state records
# ---------------------------------------------------------------------------
def box_region(lo: Sequence[int], hi: Sequence[int], parity: Sequence[int] | None = None) -> Region:
    """All points of one parity class whose doubled coordinates lie in ``[2 lo, 2 hi]``."""
    d = len(lo)
    parity = tuple(int(p) % 2 for p in (parity if parity is not None else (0,) * d))
    axes = []
    for a, b, p in zip(lo, hi, parity):
        first = 2 * int(a) + p
        axes.append(np.arange(first, 2 * int(b) + 1, 2, dtype=np.int64))
    if any(len(ax) == 0 for ax in axes):
        return Region.empty(d, parity)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return Region(mesh, d=d, parity=parity)


def _window_box(window: Region) -> tuple[np.ndarray, np.ndarray]:
    lo = window.doubled.min(axis=0) // 2
    hi = window.doubled.max(axis=0) // 2
    return lo, hi


def _point(p) -> HalfLatticePoint:
    if isinstance(p, HalfLatticePoint):
        return p
    return HalfLatticePoint(tuple(int(v) for v in p))


@dataclass(frozen=True, eq=False)
class SiteClasses:
    """Singular sets of one stage and the resonance margins of their members."""

    Q_plus: Region
    Q_minus: Region
    Qt_plus: Region
    Qt_minus: Region
    margin_plus: np.ndarray
    margin_minus: np.ndarray

    @property
    def Q(self) -> Region:
        return self.Q_plus | self.Q_minus

    @property
    def Q_tilde(self) -> Region:
        return self.Qt_plus | self.Qt_minus


@dataclass(frozen=True)
class CaseDecision:
    case: str
    l: HalfLatticePoint
    i: HalfLatticePoint | None
    j: HalfLatticePoint | None
    dist_tminus_plus: float
    dist_tplus_minus: float
    threshold: float


@dataclass(frozen=True, eq=False)
class BlockTemplate:
    """``Omega_k - k``, ``Omega~_k - k`` and ``A_k - k`` for every ``k`` of a stage."""

    inner: Region
    outer: Region
    core: Region
    closure_steps: tuple = ()
    seed_radii: tuple = (0.0, 0.0)


@dataclass(frozen=True, eq=False)
class Block:
    center: HalfLatticePoint
    inner: Region
    outer: Region
    core: Region


@dataclass(frozen=True)
class RootReport:
    theta: complex
    partner: complex
    zeros: tuple
    count: int
    center: complex
    radius: float
    samples: int
    newton_steps: int
    method: str
    pair_error: float
    case: str


@dataclass(frozen=True, eq=False)
class ScaleState:
    """Sealed record of stage ``s``."""

    s: int
    level: ScaleLevel
    theta_s: complex
    shifts: tuple
    P: Region
    template: BlockTemplate
    case_history: tuple
    window: Region
    model: ModelParams
    params: ScaleParams
    classes: SiteClasses | None = None
    decision: CaseDecision | None = None
    root: RootReport | None = None

    @property
    def delta(self) -> float:
        return self.level.delta

    @property
    def N(self) -> float:
        return self.level.N

    @property
    def gamma_rate(self) -> float:
        return self.level.gamma_rate

    @property
    def Q(self) -> Region:
        return self.classes.Q

    @property
    def Q_tilde(self) -> Region:
        return self.classes.Q_tilde

    @property
    def class_shift(self) -> HalfLatticePoint:
        """``1/2 sum_{i<s} l_i``, a representative of the parity class of ``P_s``."""
        tot = np.zeros(self.model.d, dtype=np.int64)
        for l in self.shifts:
            tot += np.asarray(l.doubled, dtype=np.int64) // 2
        return HalfLatticePoint(tuple(int(v) for v in tot))

    @property
    def parity(self) -> tuple[int, ...]:
        return self.class_shift.parity

    def block(self, k) -> Block:
        k = _point(k)
        t = self.template
        return Block(k, t.inner.translate(k), t.outer.translate(k), t.core.translate(k))

    def blocks(self) -> dict:
        """Materialized map ``k -> Block`` (use only for small ``P_s``)."""
        return {k: self.block(k) for k in self.P}

    @property
    def outer_radius(self) -> float:
        return self.template.outer.radius_about(HalfLatticePoint.zero(self.model.d))

    @property
    def inner_radius(self) -> float:
        return self.template.inner.radius_about(HalfLatticePoint.zero(self.model.d))


# ---------------------------------------------------------------------------
# stage 0 and classification
# ---------------------------------------------------------------------------
def _phases(P: Region, model: ModelParams) -> np.ndarray:
    return model.theta + P.doubled @ np.asarray(model.omega) / 2.0


def classify_sites(state: ScaleState, window: Region | None = None) -> SiteClasses:
    """``Q_s^+-`` (threshold ``delta_s``) and ``Q~_s^+-`` (threshold ``delta_s^tilde_exp``).

    Comparisons are done on logarithms so that thresholds below the double
    range still classify correctly (an exact hit has ``log 0 = -inf``).
    """
    P = state.P
    if window is not None and len(P):
        lo, hi = _window_box(window)
        inside = np.all((P.doubled >= 2 * lo) & (P.doubled <= 2 * hi), axis=1)
        P = Region(P.doubled[inside], d=P.d, parity=P.parity)
    d = state.model.d
    par = P.parity
    if not len(P):
        e = Region.empty(d, par)
        return SiteClasses(e, e, e, e, np.zeros(0), np.zeros(0))
    x = _phases(P, state.model)
    th = complex(state.theta_s)
    if th.imag == 0.0:
        th = th.real
    mp = np.atleast_1d(torus_norm(x + th))
    mm = np.atleast_1d(torus_norm(x - th))
    with np.errstate(divide="ignore"):
        lp, lm = np.log(mp), np.log(mm)
    ld = state.level.log_delta
    lt = state.params.tilde_exp * ld

    def sub(mask):
        return Region(P.doubled[mask], d=d, parity=par)

    plus, minus = lp < ld, lm < ld
    return SiteClasses(sub(plus), sub(minus), sub(lp < lt), sub(lm < lt), mp[plus], mm[minus])


def _single_site_template(d: int) -> BlockTemplate:
    zero = Region(np.zeros((1, d), dtype=np.int64), d=d)
    return BlockTemplate(zero, zero, zero, (), (0.0, 0.0))


def init_stage0(model: ModelParams, params: ScaleParams, window: Region,
                sched: Schedule | None = None) -> ScaleState:
    """Stage-0 state: ``theta_0 = arccos(E)/2pi``, ``P_0`` = window, single-site blocks."""
    if window.d != model.d or not window.is_integer_class:
        raise QPError("bad-window", "the window must be a region of Z^d matching omega")
    theta0 = theta0_from_energy(model.energy)
    if sched is None:
        sched = schedule(params, 0)
    state = ScaleState(s=0, level=sched[0], theta_s=theta0, shifts=(), P=window,
                       template=_single_site_template(model.d), case_history=(),
                       window=window, model=model, params=params)
    return replace(state, classes=classify_sites(state))


# ---------------------------------------------------------------------------
# case selection and new sites
# ---------------------------------------------------------------------------
def _nearest_pairs(A: Region, B: Region) -> tuple[float, HalfLatticePoint | None, HalfLatticePoint | None]:
    """Minimal sup distance between ``A`` and ``B`` and the lexicographically first pair attaining it."""
    if not len(A) or not len(B):
        return math.inf, None, None
    tree = cKDTree(B.doubled.astype(float))
    dd, _ = tree.query(A.doubled.astype(float), k=1, p=np.inf)
    dmin = float(dd.min())
    best = None
    for ia in np.nonzero(dd == dmin)[0]:
        a = A.doubled[ia]
        for jb in tree.query_ball_point(a.astype(float), r=dmin + 0.5, p=np.inf):
            b = B.doubled[jb]
            if np.abs(a - b).max() == dmin:
                key = (tuple(int(v) for v in a), tuple(int(v) for v in b))
                if best is None or key < best:
                    best = key
    return dmin / 2.0, HalfLatticePoint(best[0]), HalfLatticePoint(best[1])


def select_case(state: ScaleState, N_next: float) -> CaseDecision:
    """(C1) iff ``dist(Q~^-, Q^+) > case_factor * N_{s+1}^c``; otherwise (C2) with ``l = i - j``."""
    cl = state.classes
    if cl is None:
        raise QPError("not-classified", "classify_sites must run before select_case")
    threshold = state.params.case_factor * N_next**state.params.c
    d_mp = cl.Qt_minus.dist(cl.Q_plus)
    d_pm = cl.Qt_plus.dist(cl.Q_minus)
    zero = HalfLatticePoint.zero(state.model.d)
    if d_mp > threshold:
        return CaseDecision("C1", zero, None, None, d_mp, d_pm, threshold)
    dist, i, j = _nearest_pairs(cl.Q_plus, cl.Qt_minus)
    l = i - j
    if not l.is_integer:
        raise QPError("parity", "i_s and j_s lie in different classes mod Z^d")
    return CaseDecision("C2", l, i, j, d_mp, d_pm, threshold)


def build_next_sites(state: ScaleState, decision: CaseDecision) -> Region:
    """``P_{s+1}``: ``Q_s`` in case (C1), the mirror midpoints ``o + l/2`` in case (C2)."""
    cl = state.classes
    if decision.case == "C1":
        return cl.Q
    l = decision.l
    if not l.is_integer:
        raise QPError("parity", "shift l_s must lie in Z^d")
    O = cl.Q_minus | cl.Q_plus.translate(-l)
    return O.translate(l.halved())


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------
def _seed_radii(case: str, N: float, params: ScaleParams) -> tuple[float, float]:
    c = params.c
    if case == "C1":
        return float(N), float(N**c)
    return float(params.case_factor * N**c), float(N ** (c * c))


def _minkowski(k0: HalfLatticePoint, A: Region, B: Region) -> np.ndarray:
    """Doubled points of ``(k0 - A + B) u (k0 + A - B)``."""
    if not len(A) or not len(B):
        return np.zeros((0, len(k0.doubled)), dtype=np.int64)
    k = np.asarray(k0.doubled, dtype=np.int64)
    diff = B.doubled[None, :, :] - A.doubled[:, None, :]
    diff = diff.reshape(-1, diff.shape[-1])
    pts = np.concatenate([k + diff, k - diff])
    return np.unique(pts, axis=0)


def _closure(seed_radius: float, k0: HalfLatticePoint, P_next: Region, history: Sequence[ScaleState],
             collar: float) -> tuple[Region, tuple]:
    d = k0.d
    zero = (0,) * d
    J = cube(seed_radius, k0, parity=zero)
    steps = []
    s = len(history) - 1
    c2 = history[0].params.c ** 2
    for r in range(s):
        st = history[s - r]
        R = 2.0 * st.level.N**c2
        H = _minkowski(k0, P_next, st.P)
        if len(H):
            far = np.abs(H - np.asarray(k0.doubled)).max(axis=1) / 2.0
            H = H[far <= seed_radius + collar + R + 1.0]
        t = 0
        while len(H):
            dist = J.dist_to_points(H)
            hit = H[dist <= R + 1e-9]
            grown = J.union(*[cube(R, HalfLatticePoint(tuple(int(v) for v in h)), parity=zero) for h in hit]) \
                if len(hit) else J
            if len(grown) == len(J):
                break
            J = grown
            t += 1
        steps.append(t)
    bound = cube(seed_radius + collar, k0, parity=zero)
    if not J.issubset(bound):
        raise QPError("closure-overflow", f"closure left the collar of radius {seed_radius + collar:.6g}",
                      size=len(J))
    return J, tuple(steps)


def _class_representative(parity: Sequence[int]) -> HalfLatticePoint:
    return HalfLatticePoint(tuple(int(p) for p in parity))


def build_blocks(history: Sequence[ScaleState], decision: CaseDecision, P_next: Region,
                 N_next: float, k0: HalfLatticePoint | None = None) -> BlockTemplate:
    """Block templates of stage ``s + 1`` via the J-closure around a reference site ``k0``.

    ``history`` holds the sealed states ``0..s``.  For ``s = 0`` no closure
    is needed and the blocks are plain cubes.  The closure collar is
    ``50 N_s^(c^2)``; leaving it raises ``closure-overflow``.
    """
    state = history[-1]
    params = state.params
    if k0 is None:
        k0 = next(iter(P_next)) if len(P_next) else _class_representative(P_next.parity)
    r_in, r_out = _seed_radii(decision.case, N_next, params)
    collar = 50.0 * state.level.N ** (params.c**2) if state.s > 0 else 0.0
    J_in, _ = _closure(r_in, k0, P_next, history, collar)
    J_out, steps = _closure(r_out, k0, P_next, history, collar)
    prev = state.template.core
    if decision.case == "C1":
        core = prev
    else:
        half = decision.l.halved()
        core = prev.translate(-half) | prev.translate(half)
    return BlockTemplate(J_in.translate(-k0), J_out.translate(-k0), core, steps, (r_in, r_out))


# ---------------------------------------------------------------------------
# root tracking
# ---------------------------------------------------------------------------
def _logderiv(region: Region, model: ModelParams, z: complex) -> complex:
    """``(d/dz) log det M(z) = tr(M^{-1} M')`` with ``M'`` diagonal."""
    M = complexified_T(region, model, z)
    dM = complexified_derivative(region, model, z)
    Minv = np.linalg.inv(M)
    return complex(np.sum(np.diag(Minv) * dM))


_BATCH_ENTRIES = 1 << 22  # complex entries per batched inversion


def _logderiv_many(region: Region, model: ModelParams, zs: np.ndarray) -> np.ndarray:
    """:func:`_logderiv` at many points, with the inversions batched."""
    zs = np.asarray(zs, dtype=complex)
    base = complexified_T(region, model, 0.0)
    base[np.diag_indices_from(base)] = 0.0
    phases = 2 * np.pi * _phases_of(region, model)
    n = len(region)
    chunk = max(1, _BATCH_ENTRIES // (n * n))
    out = np.empty(len(zs), dtype=complex)
    idx = np.arange(n)
    for start in range(0, len(zs), chunk):
        z = zs[start:start + chunk]
        arg = 2 * np.pi * z[:, None] + phases[None, :]
        M = np.broadcast_to(base, (len(z), n, n)).copy()
        M[:, idx, idx] = np.cos(arg) - model.energy
        inv_diag = np.linalg.inv(M)[:, idx, idx]
        out[start:start + chunk] = np.sum(inv_diag * (-2 * np.pi * np.sin(arg)), axis=1)
    return out


def _phases_of(region: Region, model: ModelParams) -> np.ndarray:
    return region.doubled @ np.asarray(model.omega, dtype=float) / 2.0


def _contour_moments(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``m_k = (1/2 pi i) oint f'/f (z - c)^k dz`` for ``k = 0, 1, 2`` (trapezoid rule)."""
    return np.array([np.mean(g * w), np.mean(g * w**2), np.mean(g * w**3)])


def _count(region, model, center, radius, K0=64, K_max=4096):
    """Argument-principle zero count; doubling ``K`` reuses the samples already taken."""
    K = K0
    g = None
    while K <= K_max:
        w = radius * np.exp(2j * np.pi * np.arange(K) / K)
        try:
            with np.errstate(all="raise"):
                if g is None:
                    g = _logderiv_many(region, model, center + w)
                else:
                    new = _logderiv_many(region, model, center + w[1::2])
                    merged = np.empty(K, dtype=complex)
                    merged[0::2], merged[1::2] = g, new
                    g = merged
                m = _contour_moments(g, w)
        except (np.linalg.LinAlgError, FloatingPointError):
            return None, None, K
        n = int(round(m[0].real))
        if abs(m[0] - n) < 1e-6:
            return n, m, K
        K *= 2
    return None, None, K // 2


def _newton(region, model, z0: complex, radius: float, center: complex, tol: float = 1e-15,
            max_iter: int = 50) -> tuple[complex, int, bool]:
    z = complex(z0)
    for it in range(1, max_iter + 1):
        try:
            g = _logderiv(region, model, z)
        except np.linalg.LinAlgError:
            return z, it, True  # exactly singular: z is a zero
        if g == 0 or not np.isfinite(g):
            return z, it, False
        step = 1.0 / g
        z = z - step
        if abs(z - center) > radius:
            return z, it, False
        if abs(step) <= tol * max(1.0, abs(z)):
            return z, it, True
    return z, max_iter, False


def _secant(region, model, z0: complex, z1: complex, tol: float = 1e-15, max_iter: int = 100):
    def f(z):
        ph, la = logdet(complexified_T(region, model, z))
        return ph, la

    ph0, l0 = f(z0)
    ph1, l1 = f(z1)
    for it in range(1, max_iter + 1):
        ref = max(l0, l1)
        f0 = ph0 * math.exp(l0 - ref) if math.isfinite(l0) else 0.0
        f1 = ph1 * math.exp(l1 - ref) if math.isfinite(l1) else 0.0
        if f1 == 0:
            return z1, it, True
        if f1 == f0:
            return z1, it, False
        z2 = z1 - f1 * (z1 - z0) / (f1 - f0)
        if abs(z2 - z1) <= tol * max(1.0, abs(z2)):
            return z2, it, True
        z0, ph0, l0 = z1, ph1, l1
        z1 = z2
        ph1, l1 = f(z1)
    return z1, max_iter, False


@dataclass(frozen=True)
class _ZeroSet:
    zeros: tuple
    count: int
    radius: float
    samples: int
    newton_steps: int
    method: str


def locate_zeros(region: Region, model: ModelParams, center: complex, radius: float, expected: int,
                 min_radius: float = 1e-12) -> _ZeroSet:
    """Zeros of ``det M(z)`` in ``|z - center| < r`` with exactly ``expected`` zeros.

    The count uses the argument principle (64 contour samples, doubled on
    non-integral results).  If the disc holds more zeros the radius is
    halved, and bisected in ``log r`` if it then holds fewer; a disc that
    already holds too few at the initial radius raises ``root-count``.
    Zeros come from the contour power sums and are polished by Newton on
    ``log det`` (secant on ``det`` as fallback).
    """
    if expected not in (1, 2):
        raise QPError("bad-parameter", "expected must be 1 or 2")
    center = complex(center)
    r = float(radius)
    lo = hi = None
    found = None
    for _ in range(80):
        if r < min_radius:
            break
        n, m, K = _count(region, model, center, r)
        if n is None:  # a zero sits on the contour: nudge the radius
            r *= 0.93
            continue
        if n == expected:
            found = (m, K)
            break
        if n > expected:
            hi = r
            r = r / 2.0 if lo is None else math.sqrt(lo * hi)
        else:
            if hi is None:
                raise QPError("root-count", f"disc of radius {r:.3g} holds {n} zeros, expected {expected}",
                              count=n, radius=r)
            lo = r
            r = math.sqrt(lo * hi)
    if found is None:
        raise QPError("root-count", f"no radius isolates {expected} zeros around {center}")
    m, K = found
    if expected == 1:
        est = [center + m[1]]
    else:
        e1 = m[1]
        e2 = (m[1] ** 2 - m[2]) / 2.0
        disc = np.sqrt(complex(e1 * e1 - 4.0 * e2))
        est = [center + (e1 + disc) / 2.0, center + (e1 - disc) / 2.0]
    zeros, steps, method = [], 0, "newton"
    close = expected == 2 and abs(est[0] - est[1]) < 1e-6 * r
    for z0 in est:
        if close:
            zeros.append(z0)
            method = "moments"
            continue
        z, it, ok = _newton(region, model, z0, r, center)
        steps += it
        if not ok:
            z, it, ok = _secant(region, model, z0, z0 + 1e-7 * r)
            steps += it
            method = "secant"
            if not ok or abs(z - center) > r:
                raise QPError("refinement-diverged", f"zero near {z0} did not converge", start=z0, last=z)
        zeros.append(z)
    if expected == 2 and not close and abs(zeros[0] - zeros[1]) < 0.5 * abs(est[0] - est[1]):
        zeros, method = list(est), "moments"
    return _ZeroSet(tuple(_snap_real(z) for z in zeros), expected, r, K, steps, method)


def _snap_real(z: complex) -> complex:
    """Drop an imaginary part below the double resolution of the real part."""
    z = complex(z)
    if abs(z.imag) <= 8.0 * np.finfo(float).eps * max(1.0, abs(z.real)):
        return complex(z.real, 0.0)
    return z


def _wrap(z: complex) -> complex:
    """Representative of ``z mod 1`` with real part in ``(-1/2, 1/2]``."""
    re = z.real - math.floor(z.real + 0.5)
    if re <= -0.5:
        re += 1.0
    return complex(re, z.imag)


def track_theta(template_outer: Region, model: ModelParams, case: str, theta_prev: complex,
                log_delta_prev: float, l: HalfLatticePoint | None = None,
                radius: float | None = None, radius_cap: float = 0.25) -> RootReport:
    """Track ``theta_{s+1}`` as the zero of ``det M_{s+1}(z)`` on ``Omega~^{s+1} - k``.

    (C1): one zero in ``|z - theta_s| < delta_s^(1/10)``; the partner is
    tracked independently near ``-theta_s``.  (C2): two zeros in
    ``|z - c| < delta_s^(1/1000)`` with ``c`` the one of ``0, 1/2`` nearest
    to ``z_{s+1} = (l/2).omega + theta_s``; ``theta_{s+1}`` is the zero to
    the right of ``c``.  The starting radius is capped at ``radius_cap``
    (``det M`` is 1-periodic).
    """
    theta_prev = complex(theta_prev)
    if case == "C1":
        r0 = radius if radius is not None else min(math.exp(log_delta_prev / 10.0), radius_cap)
        a = locate_zeros(template_outer, model, theta_prev, r0, 1)
        b = locate_zeros(template_outer, model, -theta_prev, r0, 1)
        theta, partner = a.zeros[0], b.zeros[0]
        err = torus_norm(theta + partner)
        return RootReport(theta, partner, (theta, partner), 1, theta_prev, a.radius, a.samples,
                          a.newton_steps + b.newton_steps, a.method, err, case)
    if case != "C2":
        raise QPError("bad-parameter", f"unknown case {case!r}")
    if l is None:
        raise QPError("bad-parameter", "case C2 needs the shift l")
    z = theta_prev + l.dot(model.omega) / 2.0
    center = 0.0 if torus_norm(z.real) <= torus_norm(z.real - 0.5) else 0.5
    r0 = radius if radius is not None else min(math.exp(log_delta_prev / 1000.0), radius_cap)
    zs = locate_zeros(template_outer, model, center, r0, 2)
    za, zb = zs.zeros
    key = lambda w: (_wrap(w - center).real, _wrap(w - center).imag)
    theta, partner = (za, zb) if key(za) >= key(zb) else (zb, za)
    err = torus_norm(za + zb)
    return RootReport(theta, partner, (za, zb), 2, complex(center), zs.radius, zs.samples,
                      zs.newton_steps, zs.method, err, case)


# ---------------------------------------------------------------------------
# stage transition
# ---------------------------------------------------------------------------
def advance(history: Sequence[ScaleState], sched: Schedule) -> ScaleState:
    """Seal stage ``s + 1`` from the states ``0..s``."""
    state = history[-1]
    s = state.s
    if s + 1 >= len(sched):
        raise QPError("bad-parameter", f"schedule has no level {s + 1}")
    nxt = sched[s + 1]
    if nxt.symbolic:
        raise QPError("symbolic-stage", f"stage {s + 1} is outside floating-point range")
    decision = select_case(state, nxt.N)
    P_next = build_next_sites(state, decision)
    template = build_blocks(history, decision, P_next, nxt.N)
    root = track_theta(template.outer, state.model, decision.case, state.theta_s, state.level.log_delta,
                       l=decision.l)
    shifts = state.shifts + (decision.l,)
    new = ScaleState(s=s + 1, level=nxt, theta_s=root.theta, shifts=shifts, P=P_next, template=template,
                     case_history=state.case_history + (decision.case,), window=state.window,
                     model=state.model, params=state.params, decision=decision, root=root)
    log.info("stage %d: case %s, |P|=%d, theta=%s", s + 1, decision.case, len(P_next), root.theta)
    return replace(new, classes=classify_sites(new))


# ---------------------------------------------------------------------------
# good sets and enlargement
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class GoodReport:
    is_good: bool
    clause: int | None = None
    stage: int | None = None
    witness: tuple = ()

    def __bool__(self) -> bool:
        return self.is_good


def _max_reach(history: Sequence[ScaleState]) -> float:
    return max(st.outer_radius for st in history)


def _require_window(region: Region, history: Sequence[ScaleState], reach: float):
    window = history[0].window
    lo, hi = _window_box(window)
    if not len(region):
        return
    need_lo = region.doubled.min(axis=0) / 2.0 - reach
    need_hi = region.doubled.max(axis=0) / 2.0 + reach
    if np.any(need_lo < lo) or np.any(need_hi > hi):
        raise QPError("window-insufficient", "the region's neighbourhood leaves the window",
                      need=(need_lo.tolist(), need_hi.tolist()), window=(lo.tolist(), hi.tolist()))


def _sites_near(P: Region, region: Region, reach: float) -> list[HalfLatticePoint]:
    if not len(P) or not len(region):
        return []
    d = region.dist_to_points(P.doubled)
    return [HalfLatticePoint(tuple(int(v) for v in P.doubled[i])) for i in np.nonzero(d <= reach + 1e-9)[0]]


def verify_good_set(region: Region, history: Sequence[ScaleState]) -> GoodReport:
    """Decide whether ``region`` is ``s``-good, ``s = len(history) - 1``.

    Clause 1 (``s' < s``): whenever ``k' in Q_{s'}`` has ``Omega~_{k'}^{s'}``
    inside the region and inside ``Omega_k^{s'+1}``, the block
    ``Omega~_k^{s'+1}`` must lie inside the region as well.  Clause 2: no
    ``k in P_s`` with ``Omega~_k^s`` inside the region belongs to ``Q_s``.
    """
    s = len(history) - 1
    _require_window(region, history, _max_reach(history))
    for sp in range(s):
        st, nx = history[sp], history[sp + 1]
        for kp in _sites_near(st.Q, region, 0.0 if sp == 0 else st.outer_radius):
            bt = st.block(kp).outer
            if not bt.issubset(region):
                continue
            for k in _sites_near(nx.P, bt, nx.inner_radius):
                b = nx.block(k)
                if bt.issubset(b.inner) and not b.outer.issubset(region):
                    return GoodReport(False, 1, sp, (kp, k))
    st = history[s]
    for k in _sites_near(st.Q, region, st.outer_radius):
        if st.block(k).outer.issubset(region):
            return GoodReport(False, 2, s, (k,))
    return GoodReport(True)


def enlarge_region(seed: Region, history: Sequence[ScaleState], collar: float | None = None) -> Region:
    """Greedy fixpoint of ``Omega~_k^{s'} touches the region => absorb it`` for ``1 <= s' <= s``.

    The result must stay within ``collar`` (default ``50 N_s^(c^2)``) of
    the seed, otherwise ``collar-overflow`` is raised.
    """
    s = len(history) - 1
    if collar is None:
        collar = 50.0 * history[s].level.N ** (history[s].params.c ** 2)
    _require_window(seed, history, collar + _max_reach(history))
    region = seed
    changed = True
    while changed:
        changed = False
        for sp in range(1, s + 1):
            st = history[sp]
            for k in _sites_near(st.P, region, st.outer_radius):
                b = st.block(k).outer
                if b.intersects(region) and not b.issubset(region):
                    region = region | b
                    changed = True
    if len(region) > len(seed) and not region.issubset(seed.expand(collar)):
        raise QPError("collar-overflow", f"enlargement left the {collar:.6g}-collar", size=len(region))
    return region


# ---------------------------------------------------------------------------
# a-priori bounds
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundsReport:
    stage: int
    size: int
    norm: float
    log_norm_bound: float
    norm_margin: float
    decay_rate: float
    decay_radius: float
    decay_margin: float
    n_pairs: int
    worst_pair: tuple
    fallback: bool

    @property
    def passed(self) -> bool:
        return self.norm_margin >= 0.0 and self.decay_margin >= 0.0


def check_bounds(region: Region, history: Sequence[ScaleState]) -> BoundsReport:
    """Compare ``||T^{-1}||`` and ``|G(x, y)|`` on an ``s``-good region with the a-priori bounds.

    Margins are logarithmic: ``norm_margin = log(bound) - log ||G||`` and
    ``decay_margin = min(-gamma_s |x-y|_1 - log |G(x, y)|)`` over pairs with
    ``||x - y|| > N_s^(c^3)``.  For ``s = 0`` the constants are
    ``delta_0^-2`` and ``gamma_0`` over all pairs.  When no stage-``s`` block
    lies in the region the norm bound falls back to ``delta_s^-3``.
    """
    s = len(history) - 1
    st = history[s]
    model = st.model
    T = assemble_T(region, model)
    G = invert(T, residual_tol=1e-6)
    fallback = False
    if s == 0:
        log_bound = -2.0 * st.level.log_delta
        rate, radius = st.gamma_rate, 0.0
    else:
        prev = history[s - 1]
        th = complex(st.theta_s)
        worst = -math.inf
        for k in _sites_near(st.P, region, st.outer_radius):
            if st.block(k).outer.issubset(region):
                x = model.theta + k.dot(model.omega)
                val = -math.log(torus_norm(x - th)) - math.log(torus_norm(x + th))
                worst = max(worst, val)
        if worst == -math.inf:
            fallback = True
            log_bound = -3.0 * st.level.log_delta
        else:
            log_bound = -3.0 * prev.level.log_delta + worst
        rate = st.gamma_rate
        radius = st.level.N ** (st.params.c ** 3)
    norm_margin = log_bound - math.log(G.op_norm)
    sup_d, l1_d = pair_distances(region)
    sel = sup_d > radius
    np.fill_diagonal(sel, False)
    absG = np.abs(G.entries)
    n_pairs = int(sel.sum())
    worst_pair: tuple = ()
    decay_margin = math.inf
    if n_pairs:
        with np.errstate(divide="ignore"):
            slack = np.where(sel & (absG > 0), -rate * l1_d - np.log(np.where(absG > 0, absG, 1.0)), np.inf)
        i, j = np.unravel_index(int(np.argmin(slack)), slack.shape)
        decay_margin = float(slack[i, j])
        worst_pair = (tuple(region.coords[i]), tuple(region.coords[j]))
    return BoundsReport(s, len(region), G.op_norm, log_bound, norm_margin, rate, radius, decay_margin,
                        n_pairs, worst_pair, fallback)


@dataclass(frozen=True)
class BandReport:
    lo: float
    hi: float
    width: float
    constant: float
    samples: int
    passed: bool


def determinant_band(state: ScaleState, n_samples: int = 50, radius: float | None = None) -> BandReport:
    """Range of ``|det S(z)| / (||z - theta|| ||z + theta||)`` over a spiral of points in the disc.

    ``S`` is the Schur complement of the block matrix onto the core
    ``A - k``.  ``constant = width * delta_{s-1}`` is the empirical constant;
    the check passes when it is at most 1.
    """
    if state.s < 1 or state.root is None:
        raise QPError("bad-parameter", "the band is defined from stage 1 on")
    t = state.template
    model = state.model
    core_idx = t.outer.index_of(t.core.doubled)
    if np.any(core_idx < 0):
        raise QPError("not-nested", "core not inside the block")
    rest = np.setdiff1d(np.arange(len(t.outer)), core_idx)
    theta = complex(state.root.theta)
    center = state.root.center
    r = state.root.radius if radius is None else radius
    j = np.arange(n_samples)
    rho = r * np.sqrt((j + 0.5) / n_samples)
    phi = j * math.pi * (3.0 - math.sqrt(5.0))
    ratios = []
    for z in center + rho * np.exp(1j * phi):
        M = complexified_T(t.outer, model, z)
        S = M[np.ix_(core_idx, core_idx)]
        if len(rest):
            S = S - M[np.ix_(core_idx, rest)] @ np.linalg.solve(M[np.ix_(rest, rest)], M[np.ix_(rest, core_idx)])
        num = abs(np.linalg.det(S))
        den = torus_norm(z - theta) * torus_norm(z + theta)
        ratios.append(num / den)
    ratios = np.array(ratios)
    lo, hi = float(ratios.min()), float(ratios.max())
    width = hi / lo if lo > 0 else math.inf
    prev_delta = math.exp(history_delta(state, state.s - 1))
    const = width * prev_delta
    return BandReport(lo, hi, width, const, n_samples, bool(const <= 1.0))


def history_delta(state: ScaleState, s: int) -> float:
    """``log delta_s`` reconstructed from the stored schedule parameters."""
    return schedule(state.params, s)[s].log_delta


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------
@dataclass
class InvariantReport:
    entries: list = field(default_factory=list)

    def add(self, name: str, stage: int, ok: bool, detail: str = "", skipped: bool = False):
        self.entries.append({"name": name, "stage": stage, "ok": bool(ok), "skipped": bool(skipped),
                             "detail": detail})

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e["ok"]]

    @property
    def all_ok(self) -> bool:
        return not self.failures

    def __len__(self) -> int:
        return len(self.entries)


def _interior(window: Region, margin: float, parity) -> Region:
    lo, hi = _window_box(window)
    m = int(math.ceil(margin))
    return box_region(lo + m, hi - m, parity)


def check_invariants(history: Sequence[ScaleState], check_goodness: bool = True) -> InvariantReport:
    """Assert every stage invariant of a run; returns one entry per (invariant, stage)."""
    rep = InvariantReport()
    zero_pt = None
    for st in history:
        s = st.s
        d = st.model.d
        zero_pt = HalfLatticePoint.zero(d)
        t = st.template
        p = st.params
        # parity class of P_s
        ok = (not len(st.P)) or st.P.parity == st.parity
        rep.add("parity-class", s, ok, f"P parity {st.P.parity}, expected {st.parity}")
        # templates: symmetric about the origin, core inside the inner block, size of the core
        rep.add("outer-symmetric", s, t.outer.symmetric_about(zero_pt))
        rep.add("inner-symmetric", s, t.inner.symmetric_about(zero_pt))
        rep.add("core-symmetric", s, t.core.symmetric_about(zero_pt))
        rep.add("core-in-inner", s, t.core.issubset(t.inner))
        rep.add("inner-in-outer", s, t.inner.issubset(t.outer))
        rep.add("core-size", s, len(t.core) <= 2**s, f"#A = {len(t.core)}")
        if s == 0:
            continue
        prev = history[s - 1]
        case = st.case_history[-1]
        # translate independence: closure recomputed from each k as reference point
        P_list = list(st.P)
        same = True
        for k in P_list[1:4]:
            tk = build_blocks(history[:s], st.decision, st.P, st.level.N, k0=k)
            same &= (tk.outer == t.outer) and (tk.inner == t.inner)
        rep.add("translate-independence", s, same, f"checked {min(len(P_list), 4)} reference sites")
        # sandwich bounds
        r_in, r_out = _seed_radii(case, st.level.N, p)
        collar = 50.0 * prev.level.N ** (p.c**2) if s > 1 else 0.0
        cls = t.outer.parity
        ok_in = cube(r_in, zero_pt, parity=cls).issubset(t.inner) and t.inner.issubset(
            cube(r_in + collar, zero_pt, parity=cls))
        ok_out = cube(r_out, zero_pt, parity=cls).issubset(t.outer) and t.outer.issubset(
            cube(r_out + collar, zero_pt, parity=cls))
        rep.add("sandwich-inner", s, ok_in, f"radius {r_in:.6g}, collar {collar:.6g}")
        rep.add("sandwich-outer", s, ok_out, f"radius {r_out:.6g}, collar {collar:.6g}")
        # separation of distinct blocks
        diam = t.outer.diam()
        if len(P_list) > 1:
            tree = cKDTree(st.P.doubled.astype(float))
            need = 10.0 * diam + 2.0 * st.outer_radius
            pairs = tree.query_pairs(2.0 * need, p=np.inf)
            worst = math.inf
            for a, b in sorted(pairs):
                ba, bb = st.block(st.P.doubled[a]).outer, st.block(st.P.doubled[b]).outer
                worst = min(worst, ba.dist(bb))
            ok = worst > 10.0 * diam
            rep.add("separation", s, ok, f"min dist {worst:.6g} vs 10 diam {10 * diam:.6g}")
        else:
            rep.add("separation", s, True, "fewer than two sites")
        # nesting against earlier stages (stage-0 blocks are single sites)
        ok = True
        for sp in range(1, s):
            old = history[sp]
            for k in P_list:
                b = st.block(k)
                for kp in _sites_near(old.P, b.outer, old.outer_radius):
                    ob = old.block(kp).outer
                    for mine in (b.inner, b.outer):
                        if mine.intersects(ob) and not ob.issubset(mine):
                            ok = False
        rep.add("nesting", s, ok)
        # covering of Q_{s-1}
        ok = True
        for kp in prev.Q:
            ob = prev.block(kp).outer
            hit = any(ob.issubset(st.block(k).inner) for k in _sites_near(st.P, ob, st.inner_radius))
            ok &= hit
        rep.add("covering", s, ok, f"{len(prev.Q)} sites of Q_{s - 1}")
        # (P>) containment on the window interior
        margin = sum(l.sup_norm() for l in st.shifts) + 1.0
        cand = _interior(st.window, margin, st.parity)
        x = _phases(cand, st.model)
        th = complex(st.theta_s)
        mval = np.minimum(torus_norm(x - th), torus_norm(x + th)) if len(cand) else np.zeros(0)
        with np.errstate(divide="ignore"):
            inside = np.log(mval) < math.log(10.0) + p.tilde_exp * st.level.log_delta
        hits = Region(cand.doubled[inside], d=d, parity=st.parity) if len(cand) else cand
        rep.add("P-containment", s, hits.issubset(st.P), f"{len(hits)} near-resonant sites")
        # C2 membership of the new sites
        if case == "C2":
            x = _phases(st.P, st.model)
            m = np.minimum(torus_norm(x), torus_norm(x - 0.5))
            bound = 3.0 * math.exp(p.tilde_exp * prev.level.log_delta)
            rep.add("mirror-membership", s, bool(np.all(m < bound)), f"max {m.max() if len(m) else 0:.3g}")
        # root symmetry
        if st.root is not None:
            tol = 1e-10
            rep.add("root-symmetry", s, st.root.pair_error <= tol, f"pair error {st.root.pair_error:.3g}")
        # complement of the core is (s-1)-good, for blocks well inside the window
        if check_goodness:
            checked = 0
            ok = True
            for k in P_list:
                b = st.block(k)
                rest = b.outer - b.core
                if not len(rest):
                    continue
                try:
                    ok &= verify_good_set(rest, history[:s]).is_good
                    checked += 1
                except QPError as err:
                    if err.code != "window-insufficient":
                        raise
            rep.add("complement-good", s, ok, f"{checked} blocks checked", skipped=checked == 0)
    return rep


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------
@dataclass(eq=False)
class MSARun:
    schedule: Schedule
    history: list
    invariants: InvariantReport | None = None
    band: BandReport | None = None

    @property
    def final(self) -> ScaleState:
        return self.history[-1]


def run_msa(model: ModelParams, params: ScaleParams, window: Region, stages: int,
            check: bool = True) -> MSARun:
    """Run stages ``0..stages`` on ``window`` and optionally check all invariants."""
    sched = schedule(params, stages)
    history = [init_stage0(model, params, window, sched)]
    for _ in range(stages):
        history.append(advance(history, sched))
    run = MSARun(sched, history)
    if check:
        run.invariants = check_invariants(history)
        if stages >= 1:
            run.band = determinant_band(history[1])
    return run


def sample_good_regions(history: Sequence[ScaleState], n: int, rng: np.random.Generator,
                        radius_range: tuple[int, int] = (3, 8), max_tries: int = 500) -> list[Region]:
    """Draw ``n`` distinct ``s``-good regions (``s = len(history) - 1``) by enlarging random cubes.

    Half of the seeds are centred next to a stage-``s`` site outside ``Q_s``
    so that the sample contains regions holding a resonant block; the other
    seeds are uniform in the window interior.  Seeds whose enlargement is not
    good (or leaves the window) are discarded.
    """
    s = len(history) - 1
    st = history[s]
    d = st.model.d
    lo, hi = _window_box(st.window)
    collar = 50.0 * st.level.N ** (st.params.c ** 2)
    reach = _max_reach(history) + collar + radius_range[1] + 1
    anchors = [k for k in st.P if k not in st.Q] if s > 0 else []
    out: list[Region] = []
    seen = set()
    for attempt in range(max_tries):
        if len(out) >= n:
            break
        r = int(rng.integers(radius_range[0], radius_range[1] + 1))
        if anchors and attempt % 2 == 0:
            k = anchors[int(rng.integers(len(anchors)))]
            base = np.round(k.coords).astype(np.int64)
            center = base + rng.integers(-r, r + 1, size=d)
        else:
            center = np.array([int(rng.integers(int(a + reach), int(b - reach) + 1)) for a, b in zip(lo, hi)])
        seed = cube(r, HalfLatticePoint(tuple(int(2 * v) for v in center)))
        try:
            region = enlarge_region(seed, history)
            good = verify_good_set(region, history)
        except QPError as err:
            if err.code in ("window-insufficient", "collar-overflow"):
                continue
            raise
        key = region.doubled.tobytes()
        if good.is_good and key not in seen:
            seen.add(key)
            out.append(region)
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------
def _coords(region: Region) -> list:
    out = []
    for row in region.doubled:
        out.append([int(v // 2) if v % 2 == 0 else v / 2.0 for v in row])
    return out


def _region(coords, d: int, parity=None) -> Region:
    if not coords:
        return Region.empty(d, parity)
    return Region.from_coords(coords, parity=parity)


def _cplx(z: complex) -> list:
    z = complex(z)
    return [z.real, z.imag]


def run_to_dict(run: MSARun, bounds: Sequence[BoundsReport] = ()) -> dict:
    """JSON-ready record of a run (schema :data:`SCHEMA_VERSION`)."""
    first = run.history[0]
    lo, hi = _window_box(first.window)
    m = first.model
    stages = []
    for st in run.history:
        cl = st.classes
        item = {
            "s": st.s,
            "log_delta": st.level.log_delta,
            "N": st.level.N,
            "gamma_rate": st.level.gamma_rate,
            "symbolic": st.level.symbolic,
            "theta_s": _cplx(st.theta_s),
            "shifts": [_coords(Region.from_points([l]))[0] for l in st.shifts],
            "case_history": list(st.case_history),
            "P_size": len(st.P),
            "P": _coords(st.P) if st.s > 0 else None,
            "Q_plus": _coords(cl.Q_plus),
            "Q_minus": _coords(cl.Q_minus),
            "Qt_plus_size": len(cl.Qt_plus),
            "Qt_minus_size": len(cl.Qt_minus),
            "template": {
                "inner": _coords(st.template.inner),
                "outer": _coords(st.template.outer),
                "core": _coords(st.template.core),
                "closure_steps": list(st.template.closure_steps),
            },
        }
        if st.decision is not None:
            dec = st.decision
            item["decision"] = {
                "case": dec.case,
                "l": _coords(Region.from_points([dec.l]))[0],
                "i": None if dec.i is None else [float(v) for v in dec.i.coords],
                "j": None if dec.j is None else [float(v) for v in dec.j.coords],
                "dist_tminus_plus": dec.dist_tminus_plus,
                "dist_tplus_minus": dec.dist_tplus_minus,
                "threshold": dec.threshold,
            }
        if st.root is not None:
            r = st.root
            item["root"] = {
                "theta": _cplx(r.theta),
                "partner": _cplx(r.partner),
                "center": _cplx(r.center),
                "radius": r.radius,
                "samples": r.samples,
                "newton_steps": r.newton_steps,
                "method": r.method,
                "pair_error": r.pair_error,
            }
        stages.append(item)
    out = {
        "schema": SCHEMA_VERSION,
        "model": {"eps": m.eps, "omega": list(m.omega), "theta": m.theta, "energy": m.energy},
        "scale": run.schedule.params.as_dict(),
        "window": {"lo": [int(v) for v in lo], "hi": [int(v) for v in hi]},
        "gamma_floor": run.schedule.gamma_floor,
        "stages": stages,
    }
    if run.invariants is not None:
        out["invariants"] = run.invariants.entries
    if run.band is not None:
        b = run.band
        out["band"] = {"lo": b.lo, "hi": b.hi, "width": b.width, "constant": b.constant,
                       "samples": b.samples, "passed": b.passed}
    if bounds:
        out["bounds"] = [
            {"stage": b.stage, "size": b.size, "norm": b.norm, "log_norm_bound": b.log_norm_bound,
             "norm_margin": b.norm_margin, "decay_rate": b.decay_rate, "decay_radius": b.decay_radius,
             "decay_margin": b.decay_margin, "n_pairs": b.n_pairs, "fallback": b.fallback}
            for b in bounds
        ]
    return out


def history_from_dict(data: dict) -> list[ScaleState]:
    """Rebuild the sealed states stored by :func:`run_to_dict`."""
    if data.get("schema") != SCHEMA_VERSION:
        raise QPError("schema", f"unsupported schema {data.get('schema')!r}")
    m = data["model"]
    model = ModelParams(eps=m["eps"], omega=tuple(m["omega"]), theta=m["theta"], energy=m["energy"])
    params = ScaleParams(**data["scale"])
    d = model.d
    window = box_region(data["window"]["lo"], data["window"]["hi"])
    history: list[ScaleState] = []
    for item in data["stages"]:
        s = item["s"]
        level = ScaleLevel(s, item["log_delta"], item["N"], item["gamma_rate"], item["symbolic"])
        shifts = tuple(HalfLatticePoint.from_coords(l) for l in item["shifts"])
        tot = np.zeros(d, dtype=np.int64)
        for l in shifts:
            tot += np.asarray(l.doubled) // 2
        parity = tuple(int(v) % 2 for v in tot)
        P = window if s == 0 else _region(item["P"], d, parity)
        tp = item["template"]
        tparity = parity
        template = BlockTemplate(_region(tp["inner"], d, tparity), _region(tp["outer"], d, tparity),
                                 _region(tp["core"], d, tparity), tuple(tp["closure_steps"]))
        decision = None
        if "decision" in item:
            dd = item["decision"]
            decision = CaseDecision(dd["case"], HalfLatticePoint.from_coords(dd["l"]),
                                    None if dd["i"] is None else HalfLatticePoint.from_coords(dd["i"]),
                                    None if dd["j"] is None else HalfLatticePoint.from_coords(dd["j"]),
                                    dd["dist_tminus_plus"], dd["dist_tplus_minus"], dd["threshold"])
        root = None
        if "root" in item:
            rr = item["root"]
            root = RootReport(complex(*rr["theta"]), complex(*rr["partner"]), (), 2 if decision.case == "C2" else 1,
                              complex(*rr["center"]), rr["radius"], rr["samples"], rr["newton_steps"],
                              rr["method"], rr["pair_error"], decision.case)
        st = ScaleState(s=s, level=level, theta_s=complex(*item["theta_s"]), shifts=shifts, P=P,
                        template=template, case_history=tuple(item["case_history"]), window=window,
                        model=model, params=params, decision=decision, root=root)
        history.append(replace(st, classes=classify_sites(st)))
    return history


def verify_dump(data: dict) -> InvariantReport:
    """Re-check a stored run: recompute the singular sets and blocks, then all invariants."""
    history = history_from_dict(data)
    rep = InvariantReport()
    for st, item in zip(history, data["stages"]):
        same = (_coords(st.classes.Q_plus) == item["Q_plus"]) and (_coords(st.classes.Q_minus) == item["Q_minus"])
        rep.add("classification-recomputed", st.s, same)
        if st.s > 0:
            prev = history[st.s - 1]
            dec = select_case(prev, st.level.N)
            rep.add("case-recomputed", st.s, dec.case == st.decision.case and dec.l == st.decision.l)
            P = build_next_sites(prev, dec)
            rep.add("sites-recomputed", st.s, P == st.P)
            tpl = build_blocks(history[:st.s], dec, P, st.level.N)
            rep.add("blocks-recomputed", st.s, tpl.outer == st.template.outer and tpl.inner == st.template.inner
                    and tpl.core == st.template.core)
    rep.entries.extend(check_invariants(history).entries)
    return rep
