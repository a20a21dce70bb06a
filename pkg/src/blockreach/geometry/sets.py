"""Concrete and lazy convex sets queried through their support function.

Every set exposes ``dim`` and ``support_many(D)``, which evaluates the
support function on each row of ``D`` at once. Lazy nodes (linear and affine
maps, Minkowski sums, convex hulls, Cartesian products, intersections) never
materialize their result; they push directions down to their children.
All sets are immutable after construction.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from ..errors import DimensionMismatch, EmptySet, Unbounded
from . import lp
from .polygon import interval_bounds, normals_span_plane, polygon_vertices


def _frozen(x, ndim):
    arr = np.array(x, dtype=float, ndmin=ndim)
    arr.setflags(write=False)
    return arr


class ConvexSet:
    """Base class for all convex sets."""

    dim: int

    def support(self, d) -> float:
        d = np.asarray(d, dtype=float).reshape(1, -1)
        return float(self.support_many(d)[0])

    def support_many(self, D: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_dirs(self, D):
        D = np.asarray(D, dtype=float)
        if D.ndim == 1:
            D = D.reshape(1, -1)
        if D.shape[1] != self.dim:
            raise DimensionMismatch(
                f"direction of length {D.shape[1]} for a set of dimension {self.dim}")
        return D


class Hyperrectangle(ConvexSet):
    """Axis-aligned box ``{c + r * t : |t|_inf <= 1}``."""

    def __init__(self, center, radius):
        self.center = _frozen(center, 1)
        self.radius = _frozen(radius, 1)
        if self.center.shape != self.radius.shape:
            raise DimensionMismatch("center and radius differ in length")
        if np.any(self.radius < 0):
            raise ValueError("negative radius")
        self.dim = self.center.shape[0]

    @classmethod
    def from_bounds(cls, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        return cls((lo + hi) / 2, (hi - lo) / 2)

    @property
    def low(self):
        return self.center - self.radius

    @property
    def high(self):
        return self.center + self.radius

    def support_many(self, D):
        D = self._check_dirs(D)
        return D @ self.center + np.abs(D) @ self.radius

    def vertices(self):
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * self.dim, indexing="ij"))
        signs = signs.reshape(self.dim, -1).T
        return self.center + signs * self.radius

    def constraints(self):
        eye = np.eye(self.dim)
        A = np.vstack([eye, -eye])
        b = np.concatenate([self.high, -self.low])
        return A, b

    def __repr__(self):
        return f"Hyperrectangle(low={self.low.tolist()}, high={self.high.tolist()})"


class Interval(Hyperrectangle):
    """One-dimensional hyperrectangle ``[lo, hi]``."""

    def __init__(self, lo, hi):
        lo, hi = float(lo), float(hi)
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        super().__init__([(lo + hi) / 2], [(hi - lo) / 2])

    @property
    def lo(self):
        return float(self.low[0])

    @property
    def hi(self):
        return float(self.high[0])

    def __repr__(self):
        return f"Interval({self.lo}, {self.hi})"


def box(lo, hi):
    """Interval for scalar bounds, Hyperrectangle otherwise."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape[0] == 1:
        return Interval(lo[0], hi[0])
    return Hyperrectangle.from_bounds(lo, hi)


class HalfSpace(ConvexSet):
    """``{x : a.x <= b}``. An all-zero normal encodes the universe (b >= 0)
    or the empty set (b < 0)."""

    def __init__(self, a, b):
        self.normal = _frozen(a, 1)
        self.offset = float(b)
        self.dim = self.normal.shape[0]

    def support_many(self, D):
        D = self._check_dirs(D)
        out = np.empty(D.shape[0])
        nn = self.normal @ self.normal
        for k, d in enumerate(D):
            if not np.any(d):
                out[k] = 0.0
                continue
            if nn == 0.0:
                if self.offset < 0:
                    raise EmptySet("always-false constraint")
                raise Unbounded("universe")
            lam = (d @ self.normal) / nn
            if lam < 0 or not np.allclose(d, lam * self.normal, atol=1e-12, rtol=1e-9):
                raise Unbounded("half-space unbounded in direction")
            out[k] = lam * self.offset
        return out

    def __repr__(self):
        return f"HalfSpace({self.normal.tolist()}, {self.offset})"


class HPolyhedron(ConvexSet):
    """Intersection of finitely many half-spaces ``{x : A x <= b}``.

    An empty constraint list is the universe of dimension ``dim``.
    """

    def __init__(self, A, b, dim=None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.size == 0:
            if dim is None:
                dim = A.shape[1] if A.ndim == 2 else None
            if dim is None:
                raise ValueError("dimension required for an unconstrained polyhedron")
            A = np.zeros((0, dim))
            b = np.zeros(0)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        if dim is not None and A.shape[1] != dim:
            raise DimensionMismatch(f"constraints of dimension {A.shape[1]}, expected {dim}")
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch("row count of A and length of b differ")
        self.A = _frozen(A, 2)
        self.b = _frozen(b, 1)
        self.dim = A.shape[1]

    @classmethod
    def from_halfspaces(cls, halfspaces, dim=None):
        hs = list(halfspaces)
        if not hs:
            return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)
        return cls(np.array([h.normal for h in hs]), np.array([h.offset for h in hs]), dim=dim)

    @classmethod
    def universe(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    @property
    def constraints(self):
        return [HalfSpace(a, b) for a, b in zip(self.A, self.b)]

    @property
    def n_constraints(self):
        return self.A.shape[0]

    def is_universe(self):
        return not np.any(self.A) and not np.any(self.b < 0)

    @cached_property
    def _false_row(self):
        zero = ~np.any(self.A, axis=1)
        return bool(np.any(zero & (self.b < 0)))

    @cached_property
    def _interval(self):
        return interval_bounds(self.A[:, 0], self.b)

    @cached_property
    def planar_bounded(self):
        return self.dim == 2 and normals_span_plane(self.A)

    @cached_property
    def vertices(self):
        """Vertices of a bounded polygon or interval; None if not applicable."""
        if self._false_row:
            return np.zeros((0, self.dim))
        if self.dim == 1:
            lo, hi = self._interval
            if not (np.isfinite(lo) and np.isfinite(hi)):
                return None
            if lo > hi + lp.FEAS_TOL * (1 + abs(hi)):
                return np.zeros((0, 1))
            return np.array([[lo], [max(lo, hi)]])
        if self.planar_bounded:
            return polygon_vertices(np.array(self.A), np.array(self.b))
        return None

    def support_many(self, D):
        D = self._check_dirs(D)
        if self._false_row:
            raise EmptySet("always-false constraint")
        V = self.vertices
        if V is not None:
            if V.shape[0] == 0:
                raise EmptySet("empty polyhedron")
            return (D @ V.T).max(axis=1)
        if self.dim == 1:
            lo, hi = self._interval
            if lo > hi + lp.FEAS_TOL * (1 + abs(hi)):
                raise EmptySet("empty interval")
            out = np.empty(D.shape[0])
            for k, d in enumerate(D[:, 0]):
                bound = hi if d > 0 else lo
                if d == 0:
                    out[k] = 0.0
                elif not np.isfinite(bound):
                    raise Unbounded("interval unbounded")
                else:
                    out[k] = d * bound
            return out
        out = np.empty(D.shape[0])
        for k, d in enumerate(D):
            out[k] = lp.maximize(d, self.A, self.b).value
        return out

    def __repr__(self):
        return f"HPolyhedron({self.n_constraints} constraints, dim={self.dim})"


class Universe(ConvexSet):
    """The whole space ``R^dim``."""

    def __init__(self, dim):
        self.dim = int(dim)

    def support_many(self, D):
        D = self._check_dirs(D)
        if np.any(D):
            raise Unbounded("universe")
        return np.zeros(D.shape[0])

    def __repr__(self):
        return f"Universe({self.dim})"


class Empty(ConvexSet):
    """The empty set of dimension ``dim``."""

    def __init__(self, dim):
        self.dim = int(dim)

    def support_many(self, D):
        raise EmptySet("support of the empty set")

    def __repr__(self):
        return f"Empty({self.dim})"


# --- lazy nodes -----------------------------------------------------------

class LinearMap(ConvexSet):
    def __init__(self, M, X):
        self.matrix = _frozen(M, 2)
        if self.matrix.shape[1] != X.dim:
            raise DimensionMismatch("matrix columns do not match set dimension")
        self.set = X
        self.dim = self.matrix.shape[0]

    def support_many(self, D):
        D = self._check_dirs(D)
        return self.set.support_many(D @ self.matrix)


class AffineMap(ConvexSet):
    def __init__(self, M, v, X):
        self.matrix = _frozen(M, 2)
        self.vector = _frozen(v, 1)
        if self.matrix.shape[1] != X.dim or self.matrix.shape[0] != self.vector.shape[0]:
            raise DimensionMismatch("affine map dimensions inconsistent")
        self.set = X
        self.dim = self.matrix.shape[0]

    def support_many(self, D):
        D = self._check_dirs(D)
        return D @ self.vector + self.set.support_many(D @ self.matrix)


class MinkowskiSum(ConvexSet):
    def __init__(self, *sets):
        if not sets:
            raise ValueError("Minkowski sum of no sets")
        self.sets = tuple(sets)
        self.dim = sets[0].dim
        if any(s.dim != self.dim for s in sets):
            raise DimensionMismatch("Minkowski sum operands differ in dimension")

    def support_many(self, D):
        D = self._check_dirs(D)
        total = np.zeros(D.shape[0])
        for s in self.sets:
            total += s.support_many(D)
        return total


class ConvexHull(ConvexSet):
    """Convex hull of the union of its operands."""

    def __init__(self, *sets):
        if not sets:
            raise ValueError("convex hull of no sets")
        self.sets = tuple(sets)
        self.dim = sets[0].dim
        if any(s.dim != self.dim for s in sets):
            raise DimensionMismatch("convex hull operands differ in dimension")

    def support_many(self, D):
        D = self._check_dirs(D)
        return np.max([s.support_many(D) for s in self.sets], axis=0)


class CartesianProduct(ConvexSet):
    def __init__(self, *sets):
        if not sets:
            raise ValueError("Cartesian product of no sets")
        self.sets = tuple(sets)
        self.dims = [s.dim for s in sets]
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.dim = int(self.offsets[-1])

    def support_many(self, D):
        D = self._check_dirs(D)
        total = np.zeros(D.shape[0])
        for s, a, b in zip(self.sets, self.offsets[:-1], self.offsets[1:]):
            Dj = D[:, a:b]
            nz = np.any(Dj, axis=1)
            if np.any(nz):
                total[nz] += s.support_many(Dj[nz])
        return total


class Intersection(ConvexSet):
    """Intersection of constraint-representable sets, evaluated by LP."""

    def __init__(self, *sets):
        if not sets:
            raise ValueError("intersection of no sets")
        self.sets = tuple(sets)
        self.dim = sets[0].dim
        if any(s.dim != self.dim for s in sets):
            raise DimensionMismatch("intersection operands differ in dimension")

    @cached_property
    def polyhedron(self):
        parts = [to_hpolyhedron(s) for s in self.sets]
        return HPolyhedron(np.vstack([p.A for p in parts]),
                           np.concatenate([p.b for p in parts]), dim=self.dim)

    def support_many(self, D):
        return self.polyhedron.support_many(D)


def to_hpolyhedron(X) -> HPolyhedron:
    """Constraint representation of a polyhedral set (exact; no approximation)."""
    if isinstance(X, HPolyhedron):
        return X
    if isinstance(X, Hyperrectangle):
        A, b = X.constraints()
        return HPolyhedron(A, b)
    if isinstance(X, HalfSpace):
        return HPolyhedron(X.normal.reshape(1, -1), [X.offset])
    if isinstance(X, Universe):
        return HPolyhedron.universe(X.dim)
    if isinstance(X, Empty):
        return HPolyhedron(np.zeros((1, X.dim)), [-1.0])
    if isinstance(X, Intersection):
        return X.polyhedron
    if isinstance(X, CartesianProduct):
        rows, rhs = [], []
        for s, a in zip(X.sets, X.offsets[:-1]):
            P = to_hpolyhedron(s)
            block = np.zeros((P.n_constraints, X.dim))
            block[:, a:a + s.dim] = P.A
            rows.append(block)
            rhs.append(P.b)
        return HPolyhedron(np.vstack(rows), np.concatenate(rhs), dim=X.dim)
    raise TypeError(f"{type(X).__name__} has no exact constraint representation")
