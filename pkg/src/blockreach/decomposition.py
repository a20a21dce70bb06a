"""Cartesian block decomposition of sets and the decomposed set operations.

A ``DecomposedSet`` is a product of low-dimensional blocks over a contiguous
``BlockStructure``. Blocks may be concrete sets, ``Universe`` (unconstrained)
or ``NOT_COMPUTED`` (a sparse flowpipe has not produced them yet). Operations
that need a missing block raise ``MissingBlock``; only the one-sided
emptiness test may skip them.

Error bounds are Hausdorff distances in the infinity norm.
"""
from __future__ import annotations

from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingBlock, StructureMismatch
from .geometry import lp
from .geometry.ops import (
    box_approximation,
    box_directions,
    is_empty,
    is_subset,
    octagon_directions,
)
from .geometry.polygon import interval_bounds
from .geometry.sets import (
    AffineMap,
    CartesianProduct,
    ConvexHull,
    ConvexSet,
    Empty,
    HPolyhedron,
    Hyperrectangle,
    Interval,
    LinearMap,
    MinkowskiSum,
    Universe,
    box,
    to_hpolyhedron,
)

TEMPLATES = ("box", "octagon", None)


class _NotComputed:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOT_COMPUTED"

    def __reduce__(self):
        return (_NotComputed, ())


NOT_COMPUTED = _NotComputed()


class BlockStructure:
    """Contiguous partition of the coordinates ``0..n-1`` into blocks."""

    def __init__(self, sizes: Sequence[int]):
        sizes = [int(s) for s in sizes]
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("block sizes must be positive")
        bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.sizes = tuple(sizes)
        self.ranges = tuple((int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))
        self.n = int(bounds[-1])
        self._owner = np.repeat(np.arange(len(sizes)), sizes)

    @classmethod
    def uniform(cls, n, width=1):
        """Blocks of ``width`` coordinates; the last one takes the remainder."""
        full, rest = divmod(n, width)
        return cls([width] * full + ([rest] if rest else []))

    @property
    def b(self):
        return len(self.sizes)

    def __len__(self):
        return len(self.sizes)

    def __eq__(self, other):
        return isinstance(other, BlockStructure) and self.sizes == other.sizes

    def __hash__(self):
        return hash(self.sizes)

    def __repr__(self):
        return f"BlockStructure({list(self.sizes)})"

    def block_of(self, i):
        return int(self._owner[i])

    def slice(self, j):
        a, b = self.ranges[j]
        return slice(a, b)

    def dims(self, J):
        """Sorted coordinate indices covered by the blocks ``J``."""
        return np.concatenate([np.arange(*self.ranges[j]) for j in sorted(J)]).astype(int) \
            if J else np.zeros(0, dtype=int)

    def blocks_touched(self, a, tol=0.0):
        """Blocks on which the vector ``a`` has a nonzero entry."""
        nz = np.flatnonzero(np.abs(a) > tol)
        return frozenset(int(j) for j in np.unique(self._owner[nz]))


class DecomposedSet(ConvexSet):
    """Cartesian product of per-block sets."""

    def __init__(self, structure: BlockStructure, blocks):
        blocks = tuple(blocks)
        if len(blocks) != structure.b:
            raise StructureMismatch(f"{len(blocks)} blocks for a structure with {structure.b}")
        for j, X in enumerate(blocks):
            if X is NOT_COMPUTED:
                continue
            if X.dim != structure.sizes[j]:
                raise DimensionMismatch(
                    f"block {j} has dimension {X.dim}, expected {structure.sizes[j]}")
        self.structure = structure
        self.blocks = blocks

    @property
    def dim(self):
        return self.structure.n

    def __getitem__(self, j):
        return self.blocks[j]

    def __iter__(self):
        return iter(self.blocks)

    def __repr__(self):
        return f"DecomposedSet({list(self.blocks)})"

    def is_computed(self, j):
        return self.blocks[j] is not NOT_COMPUTED

    def missing(self, J=None):
        J = range(self.structure.b) if J is None else J
        return [j for j in J if self.blocks[j] is NOT_COMPUTED]

    @property
    def fully_computed(self):
        return not self.missing()

    def is_empty(self):
        return any(isinstance(X, Empty) for X in self.blocks)

    def require(self, J=None):
        miss = self.missing(J)
        if miss:
            raise MissingBlock(f"blocks {miss} not computed")

    def replace(self, updates):
        """Copy with ``updates`` (mapping block index -> set) applied."""
        blocks = list(self.blocks)
        for j, X in updates.items():
            blocks[j] = X
        return DecomposedSet(self.structure, blocks)

    @cached_property
    def hyperrectangle(self) -> Optional[Hyperrectangle]:
        """The whole product as one box when every block is a box."""
        if not all(isinstance(X, Hyperrectangle) for X in self.blocks):
            return None
        return Hyperrectangle(np.concatenate([X.center for X in self.blocks]),
                              np.concatenate([X.radius for X in self.blocks]))

    def to_set(self) -> ConvexSet:
        self.require()
        H = self.hyperrectangle
        return H if H is not None else CartesianProduct(*self.blocks)

    def support_many(self, D):
        D = np.asarray(D, dtype=float).reshape(-1, self.dim)
        H = self.hyperrectangle
        if H is not None:
            return H.support_many(D)
        total = np.zeros(D.shape[0])
        for j, X in enumerate(self.blocks):
            Dj = D[:, self.structure.slice(j)]
            nz = np.any(Dj, axis=1)
            if not np.any(nz):
                continue
            if X is NOT_COMPUTED:
                raise MissingBlock(f"block {j} not computed")
            total[nz] += X.support_many(Dj[nz])
        return total

    def support(self, d):
        return float(self.support_many(np.asarray(d, dtype=float).reshape(1, -1))[0])

    def block_box(self, j) -> Hyperrectangle:
        X = self.blocks[j]
        if X is NOT_COMPUTED:
            raise MissingBlock(f"block {j} not computed")
        return X if isinstance(X, Hyperrectangle) else box_approximation(X)


# --- concretization ---------------------------------------------------------

def template_directions(dim, template):
    if template == "box" or dim == 1:
        return box_directions(dim)
    if template == "octagon":
        return octagon_directions(dim)
    raise ValueError(f"unknown template {template!r}")


def concretize(X: ConvexSet, template="box"):
    """Overapproximate ``X`` by a template polyhedron (``None`` keeps it lazy)."""
    if template is None or isinstance(X, (Universe, Empty)):
        return X
    if template == "box" or X.dim == 1:
        if isinstance(X, Hyperrectangle):
            return X
        return box_approximation(X)
    D = template_directions(X.dim, template)
    return HPolyhedron(D, X.support_many(D), dim=X.dim)


def _from_support_values(structure, values, template):
    """Build template blocks from support values laid out block by block."""
    blocks, k = [], 0
    for w in structure.sizes:
        D = template_directions(w, template)
        v = values[k:k + D.shape[0]]
        k += D.shape[0]
        if template == "box" or w == 1:
            lo, hi = -v[w:], v[:w]
            mid = (lo + hi) / 2
            flip = lo > hi
            blocks.append(box(np.where(flip, mid, lo), np.where(flip, mid, hi)))
        else:
            blocks.append(HPolyhedron(D, v, dim=w))
    return blocks


def lifted_template(structure, template, J=None):
    """Template directions of the blocks ``J`` lifted to the full space."""
    J = range(structure.b) if J is None else J
    rows = []
    for j in J:
        D = template_directions(structure.sizes[j], template)
        L = np.zeros((D.shape[0], structure.n))
        L[:, structure.slice(j)] = D
        rows.append(L)
    return np.vstack(rows)


def decompose(X: ConvexSet, S: BlockStructure, template="box") -> DecomposedSet:
    """Cartesian decomposition: block ``j`` overapproximates ``pi_j X``.

    With ``template=None`` the blocks are the exact projections (lazy).
    """
    if X.dim != S.n:
        raise DimensionMismatch(f"set of dimension {X.dim} for structure over {S.n}")
    if template is None:
        # exact projections, kept lazy
        eye = np.eye(S.n)
        return DecomposedSet(S, [LinearMap(eye[S.slice(j)], X) for j in range(S.b)])
    if isinstance(X, DecomposedSet) and X.structure == S:
        return DecomposedSet(S, [concretize(B, template) for B in X.blocks])
    values = X.support_many(lifted_template(S, template))
    return DecomposedSet(S, _from_support_values(S, values, template))


# --- constraint splitting ---------------------------------------------------

def constrained_blocks(P, S: BlockStructure) -> frozenset:
    P = to_hpolyhedron(P)
    out = set()
    for a in P.A:
        out |= S.blocks_touched(a)
    return frozenset(out)


def _split_rows(P, S):
    per_block = [[] for _ in range(S.b)]
    cross = []
    for a, b in zip(P.A, P.b):
        touched = S.blocks_touched(a)
        if len(touched) == 1:
            per_block[next(iter(touched))].append((a, b))
        elif len(touched) > 1:
            cross.append((a, b))
    return per_block, cross


def project_constraints(P, S: BlockStructure):
    """Per-block polyhedra holding the constraints local to each block.

    Constraints spanning several blocks are dropped here (see
    ``cross_constraints``); blocks without constraints become ``Universe``.
    """
    P = to_hpolyhedron(P)
    if P.dim != S.n:
        raise DimensionMismatch("polyhedron and block structure differ in dimension")
    per_block, _ = _split_rows(P, S)
    out = []
    for j, rows in enumerate(per_block):
        w = S.sizes[j]
        if not rows:
            out.append(Universe(w))
            continue
        sl = S.slice(j)
        out.append(HPolyhedron(np.array([a[sl] for a, _ in rows]),
                               np.array([b for _, b in rows]), dim=w))
    return out


def cross_constraints(P, S: BlockStructure) -> HPolyhedron:
    """The constraints of ``P`` that touch more than one block."""
    P = to_hpolyhedron(P)
    _, cross = _split_rows(P, S)
    if not cross:
        return HPolyhedron.universe(S.n)
    return HPolyhedron(np.array([a for a, _ in cross]), np.array([b for _, b in cross]), dim=S.n)


def cross_components(P, S: BlockStructure):
    """Group cross-block constraints into components of connected blocks.

    Returns a list of ``(blocks, HPolyhedron)`` with the polyhedron over the
    full space.
    """
    C = cross_constraints(P, S)
    parent = list(range(S.b))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    touched = [S.blocks_touched(a) for a in C.A]
    for t in touched:
        t = sorted(t)
        for j in t[1:]:
            parent[find(j)] = find(t[0])
    groups = {}
    for k, t in enumerate(touched):
        groups.setdefault(find(min(t)), []).append(k)
    out = []
    for rows in groups.values():
        blocks = frozenset().union(*(touched[k] for k in rows))
        out.append((blocks, HPolyhedron(C.A[rows], C.b[rows], dim=S.n)))
    out.sort(key=lambda item: min(item[0]))
    return out


# --- intersection -----------------------------------------------------------

def _intersect_block(X, Y):
    if isinstance(Y, Universe):
        return X
    if isinstance(X, Universe):
        return Y
    if isinstance(X, Empty) or isinstance(Y, Empty):
        return Empty(X.dim)
    PX, PY = to_hpolyhedron(X), to_hpolyhedron(Y)
    A = np.vstack([PX.A, PY.A])
    b = np.concatenate([PX.b, PY.b])
    if X.dim == 1:
        lo, hi = interval_bounds(A[:, 0], b)
        if lo > hi + lp.FEAS_TOL * (1 + abs(hi)):
            return Empty(1)
        if lo > hi:
            lo = hi = (lo + hi) / 2
        return Interval(lo, hi)
    P = HPolyhedron(A, b, dim=X.dim)
    return Empty(X.dim) if is_empty(P) else P


def _as_blocks(Y, S):
    if isinstance(Y, DecomposedSet):
        if Y.structure != S:
            raise StructureMismatch("different block structures")
        return list(Y.blocks)
    if isinstance(Y, (list, tuple)):
        if len(Y) != S.b:
            raise StructureMismatch(f"{len(Y)} blocks for a structure with {S.b}")
        return list(Y)
    return project_constraints(Y, S)


def intersect_decomposed(Xhat: DecomposedSet, Yblocks) -> DecomposedSet:
    """Block-wise intersection; exact when the second operand is decomposed.

    The result is empty (``is_empty()``) iff some block intersection is empty.
    """
    S = Xhat.structure
    Y = _as_blocks(Yblocks, S)
    out = []
    for j, (X, Yj) in enumerate(zip(Xhat.blocks, Y)):
        if isinstance(Yj, Universe):
            out.append(X)
            continue
        if X is NOT_COMPUTED:
            raise MissingBlock(f"block {j} not computed but constrained")
        out.append(_intersect_block(X, Yj))
    return DecomposedSet(S, out)


def emptiness_witness(Xhat: DecomposedSet, Yblocks) -> Optional[int]:
    """Index of a block whose intersection is empty, or None.

    A sufficient test: None means "possibly nonempty". Missing blocks are
    skipped.
    """
    S = Xhat.structure
    for j, (X, Yj) in enumerate(zip(Xhat.blocks, _as_blocks(Yblocks, S))):
        if X is NOT_COMPUTED or isinstance(Yj, Universe):
            continue
        if isinstance(_intersect_block(X, Yj), Empty):
            return j
    return None


def cross_block_refine(Xhat: DecomposedSet, P, J) -> HPolyhedron:
    """Exact intersection of the product of blocks ``J`` with ``P`` on ``dims(J)``.

    ``P`` must only constrain coordinates inside ``dims(J)``.
    """
    S = Xhat.structure
    J = sorted(J)
    Xhat.require(J)
    P = to_hpolyhedron(P)
    dims = S.dims(J)
    outside = np.setdiff1d(np.arange(S.n), dims)
    if P.n_constraints and np.any(P.A[:, outside]):
        raise ValueError("constraint touches coordinates outside the refined blocks")
    rows, rhs = [], []
    offset = 0
    for j in J:
        w = S.sizes[j]
        Bj = to_hpolyhedron(Xhat.blocks[j])
        R = np.zeros((Bj.n_constraints, len(dims)))
        R[:, offset:offset + w] = Bj.A
        rows.append(R)
        rhs.append(Bj.b)
        offset += w
    if P.n_constraints:
        rows.append(P.A[:, dims])
        rhs.append(P.b)
    return HPolyhedron(np.vstack(rows), np.concatenate(rhs), dim=len(dims))


def intersect_polyhedron(Xhat: DecomposedSet, P, template="box",
                         max_refine_dims=10, fallback="assume") -> DecomposedSet:
    """Intersect a decomposed set with an arbitrary polyhedron.

    Block-local constraints are applied per block. Constraints spanning
    several blocks are intersected exactly on the subspace of the blocks
    they touch and projected back to those blocks. When that subspace has
    more than ``max_refine_dims`` coordinates, ``fallback="assume"`` skips
    the cross constraints (a sound overapproximation) while
    ``fallback="exact"`` refines anyway.
    """
    S = Xhat.structure
    res = intersect_decomposed(Xhat, project_constraints(P, S))
    if res.is_empty():
        return res
    updates = {}
    for J, C in cross_components(P, S):
        if len(S.dims(J)) > max_refine_dims and fallback == "assume":
            continue
        R = cross_block_refine(res, C, J)
        if is_empty(R):
            return res.replace({j: Empty(S.sizes[j]) for j in J})
        updates.update(_project_back(R, S, sorted(J), template))
    return res.replace(updates)


def _project_back(R, S, J, template):
    template = template or "box"
    sub = BlockStructure([S.sizes[j] for j in J])
    values = R.support_many(lifted_template(sub, template))
    return dict(zip(J, _from_support_values(sub, values, template)))


# --- error bounds -----------------------------------------------------------

def _diameter(X) -> float:
    """Infinity-norm diameter (largest coordinate width)."""
    B = X if isinstance(X, Hyperrectangle) else box_approximation(X)
    return float(2 * B.radius.max())


def intersection_error_bound(Xhat: DecomposedSet, Y) -> float:
    """``max_j min(diam(X_j), diam(pi_j Y))`` for a compact polyhedron ``Y``."""
    S = Xhat.structure
    Xhat.require()
    Ybox = box_approximation(to_hpolyhedron(Y))
    bound = 0.0
    for j in range(S.b):
        dy = float(2 * Ybox.radius[S.slice(j)].max())
        bound = max(bound, min(_diameter(Xhat.blocks[j]), dy))
    return bound


# --- affine map -------------------------------------------------------------

def _block_matrix(M, S, i, j):
    return M[S.slice(i), S.slice(j)]


def affine_map_decomposed(M, v, Xhat: DecomposedSet, template="box") -> DecomposedSet:
    """Block ``i`` of the result is ``sum_j M_ij X_j + v_i``.

    Exact when every block column of ``M`` has at most one nonzero block and
    the template represents each image exactly (always for 1-D blocks,
    always for ``template=None``).
    """
    S = Xhat.structure
    M = np.asarray(M, dtype=float)
    v = np.zeros(S.n) if v is None else np.asarray(v, dtype=float)
    if M.shape != (S.n, S.n) or v.shape != (S.n,):
        raise DimensionMismatch("affine map does not match the block structure")
    out = []
    for i in range(S.b):
        vi = v[S.slice(i)]
        terms = []
        for j in range(S.b):
            Mij = _block_matrix(M, S, i, j)
            if not np.any(Mij):
                continue
            Xj = Xhat.blocks[j]
            if Xj is NOT_COMPUTED:
                raise MissingBlock(f"block {j} needed for output block {i}")
            terms.append((Mij, Xj))
        if any(isinstance(Xj, Empty) for _, Xj in terms):
            out.append(Empty(S.sizes[i]))
        elif any(isinstance(Xj, Universe) for _, Xj in terms):
            out.append(Universe(S.sizes[i]))
        elif not terms:
            out.append(box(vi, vi) if template else Hyperrectangle(vi, np.zeros_like(vi)))
        else:
            out.append(_image(terms, vi, template))
    return DecomposedSet(S, out)


def _image(terms, vi, template):
    if template == "box" or (template is not None and len(vi) == 1):
        if all(isinstance(X, Hyperrectangle) for _, X in terms):
            c = vi + sum(Mij @ X.center for Mij, X in terms)
            r = sum(np.abs(Mij) @ X.radius for Mij, X in terms)
            return box(c - r, c + r)
    (M0, X0), rest = terms[0], terms[1:]
    lazy = AffineMap(M0, vi, X0)
    if rest:
        lazy = MinkowskiSum(lazy, *(LinearMap(Mij, X) for Mij, X in rest))
    return concretize(lazy, template)


def affine_map_error_bound(M, S: BlockStructure, Xhat: DecomposedSet) -> float:
    """Hausdorff bound for the decomposed affine map.

    ``alpha_j`` is the second largest infinity-norm among the blocks of block
    column ``j``; the result is the smaller of
    ``(b - 1) * sum_j alpha_j * diam(X_j)`` and ``n/2 * max_j alpha_j * sum_j diam(X_j)``.
    """
    Xhat.require()
    if S.b == 1:
        return 0.0
    M = np.asarray(M, dtype=float)
    alphas, diams = [], []
    for j in range(S.b):
        norms = sorted((np.abs(_block_matrix(M, S, i, j)).sum(axis=1).max()
                        for i in range(S.b)), reverse=True)
        alphas.append(norms[1])
        diams.append(_diameter(Xhat.blocks[j]))
    alphas, diams = np.array(alphas), np.array(diams)
    first = (S.b - 1) * float(alphas @ diams)
    second = S.n / 2 * float(alphas.max()) * float(diams.sum())
    return min(first, second)


# --- inclusion --------------------------------------------------------------

def _check_same(Xhat, Yhat):
    if Xhat.structure != Yhat.structure:
        raise StructureMismatch("decomposed sets have different block structures")


def is_subset_decomposed(Xhat: DecomposedSet, Yhat: DecomposedSet) -> bool:
    """Exact inclusion test, block by block."""
    _check_same(Xhat, Yhat)
    if Xhat.is_empty():
        return True
    for j, (X, Y) in enumerate(zip(Xhat.blocks, Yhat.blocks)):
        if isinstance(Y, Universe):
            continue
        if X is NOT_COMPUTED or Y is NOT_COMPUTED:
            raise MissingBlock(f"block {j} not computed")
        if isinstance(X, Universe) or isinstance(Y, Empty):
            return False
        if isinstance(X, Hyperrectangle) and isinstance(Y, Hyperrectangle):
            tol = 1e-9
            if np.any(X.low < Y.low - tol) or np.any(X.high > Y.high + tol):
                return False
            continue
        if not is_subset(X, Y):
            return False
    return True


# --- convex hull ------------------------------------------------------------

def convex_hull_decomposed(Xhat: DecomposedSet, Yhat: DecomposedSet, template="box") -> DecomposedSet:
    """Block-wise convex hulls; contains the convex hull of the union."""
    _check_same(Xhat, Yhat)
    if Xhat.is_empty():
        return Yhat
    if Yhat.is_empty():
        return Xhat
    Xhat.require()
    Yhat.require()
    out = []
    for X, Y in zip(Xhat.blocks, Yhat.blocks):
        if isinstance(X, Universe) or isinstance(Y, Universe):
            out.append(Universe(X.dim))
        elif (template == "box" or (template and X.dim == 1)) and \
                isinstance(X, Hyperrectangle) and isinstance(Y, Hyperrectangle):
            out.append(box(np.minimum(X.low, Y.low), np.maximum(X.high, Y.high)))
        else:
            out.append(concretize(ConvexHull(X, Y), template))
    return DecomposedSet(Xhat.structure, out)


def convex_hull_error_bound(Xhat: DecomposedSet, Yhat: DecomposedSet) -> float:
    """``min(|r|_inf, sum over block coordinates of the bound gaps)``.

    ``r`` is the radius of the box around the hull of both sets. The second
    term is only used when all blocks are boxes; for other block shapes the
    evaluation over axis directions would underestimate it.
    """
    _check_same(Xhat, Yhat)
    Xhat.require()
    Yhat.require()
    S = Xhat.structure
    lo_x = np.concatenate([Xhat.block_box(j).low for j in range(S.b)])
    hi_x = np.concatenate([Xhat.block_box(j).high for j in range(S.b)])
    lo_y = np.concatenate([Yhat.block_box(j).low for j in range(S.b)])
    hi_y = np.concatenate([Yhat.block_box(j).high for j in range(S.b)])
    r = (np.maximum(hi_x, hi_y) - np.minimum(lo_x, lo_y)) / 2
    first = float(r.max())
    if all(isinstance(B, Hyperrectangle) for B in Xhat.blocks + Yhat.blocks):
        second = float(np.maximum(np.abs(hi_x - hi_y), np.abs(lo_x - lo_y)).sum())
        return min(first, second)
    return first



def provably_disjoint(Xhat: DecomposedSet, P, max_refine_dims=10, fallback="assume",
                      components=None, per_block=None) -> bool:
    """Sufficient test that ``Xhat`` misses the polyhedron ``P``.

    Block-local constraints are checked per block; each group of
    cross-block constraints is checked on the exact product of the blocks
    it touches, when those are computed and small enough. Missing blocks
    make the test inconclusive for the constraints that need them.
    """
    S = Xhat.structure
    per_block = project_constraints(P, S) if per_block is None else per_block
    if emptiness_witness(Xhat, per_block) is not None:
        return True
    local = [Universe(Y.dim) if not Xhat.is_computed(j) else Y for j, Y in enumerate(per_block)]
    Xhat = intersect_decomposed(Xhat, local)
    components = cross_components(P, S) if components is None else components
    for J, C in components:
        if Xhat.missing(J):
            continue
        if len(S.dims(J)) > max_refine_dims and fallback == "assume":
            continue
        if is_empty(cross_block_refine(Xhat, C, J)):
            return True
    return False
