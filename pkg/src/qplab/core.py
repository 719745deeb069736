"""Lattice geometry on half-integer lattices and finite-volume operator assembly.

Points of ``Z^d + v/2`` (``v`` an integer vector) are stored through their
doubled coordinates, so that translations, reflections and midpoints stay
exact.  A :class:`Region` is a finite set of such points sharing one parity
class; it is the index set of every matrix built in this package.

The operator is

    T = H - E = diag(cos 2*pi*(theta + n.omega) - E) + eps * Laplacian

restricted to a region, with the Laplacian coupling nearest neighbours
(``||n - n'||_1 = 1``) and no diagonal term.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.spatial import cKDTree

__all__ = [
    "QPError",
    "HalfLatticePoint",
    "Region",
    "Boundary",
    "ModelParams",
    "OperatorInstance",
    "DENSE_LIMIT",
    "torus_norm",
    "cube",
    "boundary",
    "assemble_T",
    "complexified_T",
    "complexified_derivative",
    "logdet",
]

#: Regions larger than this are assembled as sparse matrices.
DENSE_LIMIT = 4096


class QPError(RuntimeError):
    """Error carrying a short machine-readable ``code`` plus free-form details."""

    def __init__(self, code: str, message: str = "", **details):
        self.code = code
        self.details = details
        text = code if not message else f"{code}: {message}"
        super().__init__(text)


# ---------------------------------------------------------------------------
# torus metric
# ---------------------------------------------------------------------------
def torus_norm(x):
    """Distance to the nearest integer, extended to complex arguments.

    For ``x = a + ib`` the value is ``sqrt(b**2 + dist(a, Z)**2)``.  Works
    elementwise on arrays and returns a Python float for scalar input.
    """
    arr = np.asarray(x)
    if np.iscomplexobj(arr):
        re = arr.real
        out = np.hypot(arr.imag, np.abs(re - np.round(re)))
    else:
        arr = arr.astype(float)
        out = np.abs(arr - np.round(arr))
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# points
# ---------------------------------------------------------------------------
def _as_doubled(coords) -> tuple[int, ...]:
    vals = np.atleast_1d(np.asarray(coords, dtype=float)) * 2.0
    rounded = np.round(vals)
    if np.any(np.abs(vals - rounded) > 1e-9):
        raise QPError("not-half-integer", f"coordinates {coords!r} are not multiples of 1/2")
    return tuple(int(v) for v in rounded)


@dataclass(frozen=True, order=True)
class HalfLatticePoint:
    """A point of ``Z^d + v/2`` stored as the integer vector ``doubled = 2 * point``."""

    doubled: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "doubled", tuple(int(v) for v in self.doubled))

    @classmethod
    def from_coords(cls, coords) -> "HalfLatticePoint":
        return cls(_as_doubled(coords))

    @classmethod
    def zero(cls, d: int) -> "HalfLatticePoint":
        return cls((0,) * d)

    @property
    def d(self) -> int:
        return len(self.doubled)

    @property
    def coords(self) -> np.ndarray:
        return np.asarray(self.doubled, dtype=float) / 2.0

    @property
    def parity(self) -> tuple[int, ...]:
        return tuple(v % 2 for v in self.doubled)

    @property
    def is_integer(self) -> bool:
        return all(v % 2 == 0 for v in self.doubled)

    def _check(self, other: "HalfLatticePoint"):
        if not isinstance(other, HalfLatticePoint):
            return NotImplemented
        if other.d != self.d:
            raise QPError("dimension-mismatch", f"{self.d} vs {other.d}")
        return None

    def __add__(self, other: "HalfLatticePoint") -> "HalfLatticePoint":
        if self._check(other) is NotImplemented:
            return NotImplemented
        return HalfLatticePoint(tuple(a + b for a, b in zip(self.doubled, other.doubled)))

    def __sub__(self, other: "HalfLatticePoint") -> "HalfLatticePoint":
        if self._check(other) is NotImplemented:
            return NotImplemented
        return HalfLatticePoint(tuple(a - b for a, b in zip(self.doubled, other.doubled)))

    def __neg__(self) -> "HalfLatticePoint":
        return HalfLatticePoint(tuple(-a for a in self.doubled))

    def midpoint(self, other: "HalfLatticePoint") -> "HalfLatticePoint":
        """Exact midpoint; it exists on the half lattice iff both points share a parity class."""
        self._check(other)
        if self.parity != other.parity:
            raise QPError("parity", "midpoint of points from different parity classes")
        return HalfLatticePoint(tuple((a + b) // 2 for a, b in zip(self.doubled, other.doubled)))

    def halved(self) -> "HalfLatticePoint":
        """``self / 2``, defined for points of ``Z^d``."""
        if not self.is_integer:
            raise QPError("parity", "only integer points can be halved")
        return HalfLatticePoint(tuple(a // 2 for a in self.doubled))

    def sup_norm(self) -> float:
        return max((abs(v) for v in self.doubled), default=0) / 2.0

    def l1_norm(self) -> float:
        return sum(abs(v) for v in self.doubled) / 2.0

    def dot(self, omega) -> float:
        return float(np.dot(self.doubled, np.asarray(omega, dtype=float)) / 2.0)

    def __repr__(self) -> str:
        parts = [str(v // 2) if v % 2 == 0 else f"{v}/2" for v in self.doubled]
        return f"HalfLatticePoint({', '.join(parts)})"


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------
def _encode(*arrays: np.ndarray) -> list[np.ndarray]:
    """Mixed-radix integer keys for rows of several ``(n, d)`` integer arrays.

    Keys are consistent across the arrays passed in one call and increase
    with the lexicographic order of the rows.
    """
    nonempty = [a for a in arrays if len(a)]
    if not nonempty:
        return [np.zeros(0, dtype=np.int64) for _ in arrays]
    stacked = np.concatenate(nonempty)
    lo = stacked.min(axis=0)
    span = stacked.max(axis=0) - lo + 1
    strides = np.ones(len(span), dtype=np.int64)
    for i in range(len(span) - 2, -1, -1):
        strides[i] = strides[i + 1] * span[i + 1]
    if float(np.prod(span.astype(float))) > 2.0**62:
        raise QPError("region-too-large", "coordinate range exceeds key capacity")
    return [((a - lo) @ strides).astype(np.int64) if len(a) else np.zeros(0, dtype=np.int64)
            for a in arrays]


def _lexsorted_unique(doubled: np.ndarray) -> np.ndarray:
    if len(doubled) == 0:
        return doubled
    order = np.lexsort(doubled.T[::-1])
    doubled = doubled[order]
    keep = np.ones(len(doubled), dtype=bool)
    keep[1:] = np.any(np.diff(doubled, axis=0) != 0, axis=1)
    return doubled[keep]


class Region:
    """Finite subset of one parity class ``Z^d + parity/2``.

    Points are kept sorted lexicographically in doubled coordinates; this
    order is the row/column order of every matrix indexed by the region.
    Instances are immutable.
    """

    def __init__(self, doubled, d: int | None = None, parity: Sequence[int] | None = None):
        arr = np.asarray(doubled, dtype=np.int64)
        if arr.ndim == 1:
            if d is None:
                raise QPError("dimension-mismatch", "cannot infer d for a flat array")
            arr = arr.reshape(-1, d)
        if d is None:
            d = arr.shape[1]
        if arr.size == 0:
            arr = np.zeros((0, d), dtype=np.int64)
        if arr.shape[1] != d:
            raise QPError("dimension-mismatch", f"points have {arr.shape[1]} coords, d={d}")
        arr = _lexsorted_unique(arr)
        par = np.mod(arr, 2)
        if len(arr):
            if np.any(par != par[0]):
                raise QPError("parity", "region mixes parity classes")
            found = tuple(int(v) for v in par[0])
            if parity is not None and tuple(int(v) % 2 for v in parity) != found:
                raise QPError("parity", f"points have parity {found}, expected {tuple(parity)}")
            parity = found
        elif parity is None:
            parity = (0,) * d
        arr.setflags(write=False)
        self._doubled = arr
        self._d = int(d)
        self._parity = tuple(int(v) % 2 for v in parity)

    # -- construction -----------------------------------------------------
    @classmethod
    def empty(cls, d: int, parity: Sequence[int] | None = None) -> "Region":
        return cls(np.zeros((0, d), dtype=np.int64), d=d, parity=parity)

    @classmethod
    def from_points(cls, points: Iterable[HalfLatticePoint], d: int | None = None,
                    parity: Sequence[int] | None = None) -> "Region":
        pts = [p.doubled for p in points]
        if not pts:
            if d is None:
                raise QPError("dimension-mismatch", "empty point list needs d")
            return cls.empty(d, parity)
        return cls(np.array(pts, dtype=np.int64), parity=parity)

    @classmethod
    def from_coords(cls, coords, parity: Sequence[int] | None = None) -> "Region":
        c = np.atleast_2d(np.asarray(coords, dtype=float))
        if c.size == 0:
            raise QPError("dimension-mismatch", "use Region.empty for empty regions")
        doubled = np.round(2.0 * c)
        if np.any(np.abs(doubled - 2.0 * c) > 1e-9):
            raise QPError("not-half-integer", "coordinates are not multiples of 1/2")
        return cls(doubled.astype(np.int64), parity=parity)

    # -- basic protocol ---------------------------------------------------
    @property
    def d(self) -> int:
        return self._d

    @property
    def parity(self) -> tuple[int, ...]:
        return self._parity

    @property
    def doubled(self) -> np.ndarray:
        return self._doubled

    @cached_property
    def coords(self) -> np.ndarray:
        out = self._doubled / 2.0
        out.setflags(write=False)
        return out

    @property
    def is_integer_class(self) -> bool:
        return not any(self._parity)

    def __len__(self) -> int:
        return len(self._doubled)

    def __bool__(self) -> bool:
        return len(self._doubled) > 0

    def __iter__(self):
        for row in self._doubled:
            yield HalfLatticePoint(tuple(int(v) for v in row))

    def points(self) -> list[HalfLatticePoint]:
        return list(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        if self._d != other._d or len(self) != len(other):
            return False
        if not len(self):
            return True
        return bool(np.array_equal(self._doubled, other._doubled))

    def __hash__(self) -> int:
        return hash((self._d, self._parity, self._doubled.tobytes()))

    def __repr__(self) -> str:
        return f"Region(d={self._d}, parity={self._parity}, size={len(self)})"

    # -- membership -------------------------------------------------------
    def index_of(self, doubled) -> np.ndarray:
        """Row indices of the given doubled points, ``-1`` where absent."""
        q = np.atleast_2d(np.asarray(doubled, dtype=np.int64))
        if not len(self) or not len(q):
            return np.full(len(q), -1, dtype=np.int64)
        kr, kq = _encode(self._doubled, q)
        # points outside the bounding box of the region may alias: verify
        pos = np.searchsorted(kr, kq)
        pos = np.clip(pos, 0, len(kr) - 1)
        hit = (kr[pos] == kq) & np.all(self._doubled[pos] == q, axis=1)
        return np.where(hit, pos, -1)

    def contains_doubled(self, doubled) -> np.ndarray:
        return self.index_of(doubled) >= 0

    def __contains__(self, point: HalfLatticePoint) -> bool:
        if point.d != self._d:
            return False
        return bool(self.contains_doubled([point.doubled])[0])

    # -- geometry ---------------------------------------------------------
    def diam(self) -> float:
        """Sup-norm diameter ``max ||k - k'||``."""
        if len(self) < 2:
            return 0.0
        span = self._doubled.max(axis=0) - self._doubled.min(axis=0)
        return float(span.max()) / 2.0

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self._doubled.astype(float))

    def dist(self, other: "Region") -> float:
        """Sup-norm distance between two regions (``inf`` if either is empty)."""
        if not len(self) or not len(other):
            return float("inf")
        small, big = (self, other) if len(self) <= len(other) else (other, self)
        dd, _ = big._tree.query(small._doubled.astype(float), k=1, p=np.inf)
        return float(np.min(dd)) / 2.0

    def dist_to_points(self, doubled) -> np.ndarray:
        """Sup-norm distance from each given doubled point to the region."""
        q = np.atleast_2d(np.asarray(doubled, dtype=float))
        if not len(self):
            return np.full(len(q), np.inf)
        dd, _ = self._tree.query(q, k=1, p=np.inf)
        return dd / 2.0

    def radius_about(self, center: HalfLatticePoint) -> float:
        """``max ||k - center||`` over the region."""
        if not len(self):
            return 0.0
        return float(np.abs(self._doubled - np.asarray(center.doubled)).max()) / 2.0

    def symmetric_about(self, center: HalfLatticePoint) -> bool:
        """True iff ``p in region <=> 2*center - p in region``."""
        mirrored = 2 * np.asarray(center.doubled, dtype=np.int64) - self._doubled
        return Region(mirrored, d=self._d) == self

    def translate(self, shift: HalfLatticePoint) -> "Region":
        s = np.asarray(shift.doubled, dtype=np.int64)
        parity = tuple((p + v) % 2 for p, v in zip(self._parity, shift.doubled))
        return Region(self._doubled + s, d=self._d, parity=parity)

    def reflect(self) -> "Region":
        return Region(-self._doubled, d=self._d, parity=self._parity)

    # -- set algebra ------------------------------------------------------
    def _same_space(self, other: "Region"):
        if other._d != self._d:
            raise QPError("dimension-mismatch", f"{self._d} vs {other._d}")

    def _mask_in(self, other: "Region") -> np.ndarray:
        if not len(self) or not len(other):
            return np.zeros(len(self), dtype=bool)
        a, b = _encode(self._doubled, other._doubled)
        return np.isin(a, b, assume_unique=True)

    def union(self, *others: "Region") -> "Region":
        arrs = [self._doubled]
        for o in others:
            self._same_space(o)
            if len(o) and len(self) and o._parity != self._parity:
                raise QPError("parity", "union of regions from different parity classes")
            arrs.append(o._doubled)
        parity = self._parity if len(self) else next((o._parity for o in others if len(o)), self._parity)
        return Region(np.concatenate(arrs), d=self._d, parity=parity)

    __or__ = union

    def intersection(self, other: "Region") -> "Region":
        self._same_space(other)
        return Region(self._doubled[self._mask_in(other)], d=self._d, parity=self._parity)

    __and__ = intersection

    def difference(self, other: "Region") -> "Region":
        self._same_space(other)
        return Region(self._doubled[~self._mask_in(other)], d=self._d, parity=self._parity)

    __sub__ = difference

    def issubset(self, other: "Region") -> bool:
        self._same_space(other)
        return bool(np.all(self._mask_in(other)))

    def intersects(self, other: "Region") -> bool:
        self._same_space(other)
        return bool(np.any(self._mask_in(other)))

    def expand(self, radius: float) -> "Region":
        """``{k in the parity class : dist(k, region) <= radius}``."""
        r = int(np.floor(radius + 1e-12))
        if not len(self) or r <= 0:
            return self
        par = np.asarray(self._parity)
        grid = (self._doubled - par) // 2
        lo = grid.min(axis=0) - r
        shape = tuple(grid.max(axis=0) - lo + r + 1)
        img = np.zeros(shape, dtype=bool)
        img[tuple((grid - lo).T)] = True
        img = ndimage.maximum_filter(img, size=2 * r + 1, mode="constant", cval=False)
        idx = np.argwhere(img) + lo
        return Region(2 * idx + par, d=self._d, parity=self._parity)

    # -- lattice bonds ----------------------------------------------------
    @cached_property
    def bonds(self) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs ``(i, j)``, ``i < j``, with ``||p_i - p_j||_1 = 1``."""
        rows, cols = [], []
        for axis in range(self._d):
            step = np.zeros(self._d, dtype=np.int64)
            step[axis] = 2
            j = self.index_of(self._doubled + step) if len(self) else np.zeros(0, dtype=np.int64)
            i = np.nonzero(j >= 0)[0]
            rows.append(i)
            cols.append(j[i])
        i = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        j = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        return i.astype(np.int64), j.astype(np.int64)


def cube(radius: float, center: HalfLatticePoint | Sequence[float] | None = None,
         parity: Sequence[int] | None = None, d: int | None = None) -> Region:
    """``Lambda_L(n) = {k : ||k - n|| <= L}`` inside one parity class.

    ``center`` may be any half-lattice point; ``parity`` defaults to the
    parity of the center.  ``radius`` may be real.
    """
    if center is None:
        if d is None:
            raise QPError("dimension-mismatch", "cube needs a center or d")
        center = HalfLatticePoint.zero(d)
    elif not isinstance(center, HalfLatticePoint):
        center = HalfLatticePoint.from_coords(center)
    d = center.d
    if parity is None:
        parity = center.parity
    parity = tuple(int(p) % 2 for p in parity)
    if radius < 0:
        return Region.empty(d, parity)
    two_r = int(np.floor(2.0 * radius + 1e-9))
    axes = []
    for c, p in zip(center.doubled, parity):
        lo, hi = c - two_r, c + two_r
        first = lo + ((p - lo) % 2)
        axes.append(np.arange(first, hi + 1, 2, dtype=np.int64))
    if any(len(a) == 0 for a in axes):
        return Region.empty(d, parity)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return Region(mesh, d=d, parity=parity)


# ---------------------------------------------------------------------------
# relative boundaries
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Boundary:
    """Relative boundary data of ``inner`` inside ``outer``.

    ``minus`` are the points of ``inner`` at distance one from
    ``outer \\ inner``; ``plus`` are the points of ``outer \\ inner`` at
    distance one from ``inner``; ``pairs_doubled[m] = (k, k')`` lists the
    pairs with ``k`` in ``minus``, ``k'`` in ``plus`` and ``||k - k'|| = 1``.
    """

    minus: Region
    plus: Region
    pairs_doubled: np.ndarray

    @property
    def pairs(self) -> list[tuple[HalfLatticePoint, HalfLatticePoint]]:
        return [(HalfLatticePoint(tuple(a)), HalfLatticePoint(tuple(b))) for a, b in self.pairs_doubled]

    @property
    def bond_mask(self) -> np.ndarray:
        """Pairs joined by a Laplacian bond (``||k - k'||_1 = 1``)."""
        if not len(self.pairs_doubled):
            return np.zeros(0, dtype=bool)
        diff = np.abs(self.pairs_doubled[:, 0] - self.pairs_doubled[:, 1]).sum(axis=1)
        return diff == 2

    def __len__(self) -> int:
        return len(self.pairs_doubled)


def _unit_offsets(d: int) -> np.ndarray:
    offs = [o for o in itertools.product((-2, 0, 2), repeat=d) if any(o)]
    return np.array(offs, dtype=np.int64)


def boundary(inner: Region, outer: Region) -> Boundary:
    """Relative boundary ``(minus, plus, pairs)`` of ``inner`` within ``outer``."""
    if not inner.issubset(outer):
        raise QPError("not-nested", "inner region is not contained in outer region")
    rest = outer.difference(inner)
    d = inner.d
    if not len(rest) or not len(inner):
        return Boundary(Region.empty(d, inner.parity), Region.empty(d, inner.parity),
                        np.zeros((0, 2, d), dtype=np.int64))
    pairs = []
    for off in _unit_offsets(d):
        nb = inner.doubled + off
        hit = rest.contains_doubled(nb)
        if np.any(hit):
            pairs.append(np.stack([inner.doubled[hit], nb[hit]], axis=1))
    pairs_arr = np.concatenate(pairs) if pairs else np.zeros((0, 2, d), dtype=np.int64)
    if len(pairs_arr):
        order = np.lexsort(np.concatenate([pairs_arr[:, 1], pairs_arr[:, 0]], axis=1).T[::-1])
        pairs_arr = pairs_arr[order]
    minus = Region(pairs_arr[:, 0], d=d, parity=inner.parity)
    plus = Region(pairs_arr[:, 1], d=d, parity=inner.parity)
    return Boundary(minus, plus, pairs_arr)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ModelParams:
    """Coupling ``eps``, frequency ``omega``, phase ``theta`` and energy ``E``."""

    eps: float
    omega: tuple[float, ...]
    theta: float = 0.0
    energy: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(w) for w in np.atleast_1d(self.omega)))
        if self.eps < 0:
            raise QPError("bad-parameter", "eps must be nonnegative")

    @property
    def d(self) -> int:
        return len(self.omega)

    def replace(self, **changes) -> "ModelParams":
        data = dict(eps=self.eps, omega=self.omega, theta=self.theta, energy=self.energy)
        data.update(changes)
        return ModelParams(**data)


def _phases(region: Region, omega) -> np.ndarray:
    return region.doubled @ np.asarray(omega, dtype=float) / 2.0


def _laplacian(region: Region, eps: float, fmt: str = "csr"):
    i, j = region.bonds
    n = len(region)
    vals = np.full(2 * len(i), float(eps))
    mat = sp.coo_matrix((vals, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))
    return mat.asformat(fmt)


@dataclass(frozen=True, eq=False)
class OperatorInstance:
    """``T_Lambda = H_Lambda - E`` on an integer region, dense or sparse."""

    params: ModelParams
    region: Region
    matrix: np.ndarray | sp.spmatrix

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def eps(self) -> float:
        return self.params.eps

    @property
    def omega(self) -> tuple[float, ...]:
        return self.params.omega

    @property
    def theta(self) -> float:
        return self.params.theta

    @property
    def energy(self) -> float:
        return self.params.energy

    @property
    def is_dense(self) -> bool:
        return isinstance(self.matrix, np.ndarray)

    def dense(self) -> np.ndarray:
        return self.matrix if self.is_dense else self.matrix.toarray()

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.matrix)

    @cached_property
    def diagonal(self) -> np.ndarray:
        return np.cos(2 * np.pi * (self.theta + _phases(self.region, self.omega))) - self.energy

    def hamiltonian(self) -> np.ndarray | sp.spmatrix:
        """``H_Lambda = T_Lambda + E``."""
        n = len(self.region)
        if self.is_dense:
            return self.matrix + self.energy * np.eye(n)
        return self.matrix + self.energy * sp.identity(n, format="csr")

    def norm_bound(self) -> float:
        """A-priori bound ``||H|| <= 1 + 2 d eps``."""
        return 1.0 + 2.0 * self.d * self.eps

    def restrict(self, sub: Region) -> "OperatorInstance":
        return assemble_T(sub, self.params)


def assemble_T(region: Region, params: ModelParams, dense: bool | None = None) -> OperatorInstance:
    """Assemble ``T_Lambda = H_Lambda(theta) - E`` on an integer region."""
    if not len(region):
        raise QPError("empty-region", "cannot assemble an operator on an empty region")
    if region.d != params.d:
        raise QPError("dimension-mismatch", f"region d={region.d}, omega has {params.d} entries")
    if not region.is_integer_class:
        raise QPError("parity", "assemble_T needs a region inside Z^d; use complexified_T")
    if dense is None:
        dense = len(region) <= DENSE_LIMIT
    diag = np.cos(2 * np.pi * (params.theta + _phases(region, params.omega))) - params.energy
    if dense:
        mat = _laplacian(region, params.eps, "coo").toarray()
        mat[np.diag_indices_from(mat)] = diag
    else:
        mat = (_laplacian(region, params.eps, "csr") + sp.diags(diag, format="csr")).tocsr()
    return OperatorInstance(params=params, region=region, matrix=mat)


def complexified_T(region: Region, params: ModelParams, z: complex) -> np.ndarray:
    """Dense complex symmetric matrix ``cos 2 pi (z + n.omega) - E + eps Laplacian``.

    The region may lie on any parity class; ``params.theta`` is ignored.
    """
    if not len(region):
        raise QPError("empty-region", "cannot assemble an operator on an empty region")
    arg = 2 * np.pi * (complex(z) + _phases(region, params.omega))
    mat = _laplacian(region, params.eps, "coo").toarray().astype(complex)
    mat[np.diag_indices_from(mat)] = np.cos(arg) - params.energy
    return mat


def complexified_derivative(region: Region, params: ModelParams, z: complex) -> np.ndarray:
    """Diagonal of ``d/dz complexified_T`` (the Laplacian does not depend on z)."""
    arg = 2 * np.pi * (complex(z) + _phases(region, params.omega))
    return -2 * np.pi * np.sin(arg)


def _perm_sign(perm: np.ndarray) -> int:
    seen = np.zeros(len(perm), dtype=bool)
    sign = 1
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def logdet(matrix) -> tuple[complex, float]:
    """Determinant as ``(phase, log|det|)`` with ``det = phase * exp(logabs)``.

    Dense input uses an LU factorization (``numpy.linalg.slogdet``); sparse
    input uses a sparse LU with the permutation signs tracked explicitly.
    A singular matrix returns ``(0, -inf)``.
    """
    if sp.issparse(matrix):
        a = sp.csc_matrix(matrix)
        try:
            lu = spla.splu(a, permc_spec="COLAMD")
        except RuntimeError:
            return 0.0, -np.inf
        u = lu.U.diagonal()
        if np.any(u == 0):
            return 0.0, -np.inf
        logabs = float(np.sum(np.log(np.abs(u))))
        phase = np.prod(u / np.abs(u)) * _perm_sign(lu.perm_r) * _perm_sign(lu.perm_c)
        if not np.iscomplexobj(u):
            phase = float(np.real(phase))
        return phase, logabs
    sign, logabs = np.linalg.slogdet(np.asarray(matrix))
    return sign, float(logabs)
