"""Randomized measurements of the decomposition error bounds.

Each ``measure_*`` function draws one instance, runs the package operation,
measures the outcome with the oracles and returns a small record. The
acceptance suite and the unit tests share these.
"""
from dataclasses import dataclass

import numpy as np

from blockreach.decomposition import (
    BlockStructure,
    DecomposedSet,
    affine_map_decomposed,
    affine_map_error_bound,
    convex_hull_decomposed,
    convex_hull_error_bound,
    decompose,
    intersect_decomposed,
    intersection_error_bound,
    is_subset_decomposed,
)
from blockreach.geometry import HPolyhedron, Hyperrectangle, Interval

from oracles import (
    VPolytope,
    block_sizes,
    dual_sphere,
    hrep_vertices,
    hull_hrep,
    lp_support,
    random_block,
    vsupport,
)

SUPPORT_TOL = 1e-8


@dataclass
class Measurement:
    measured: float
    bound: float
    impl_gap: float = 0.0  # |package support - oracle support| on the result

    def ok(self, tol=1e-7):
        return self.measured <= self.bound + tol and self.impl_gap <= SUPPORT_TOL


def _structure(rng, n=None, width=None):
    n = int(rng.integers(2, 7)) if n is None else n
    width = int(rng.integers(1, 3)) if width is None else width
    return BlockStructure(block_sizes(n, width))


def _split_support(vertex_blocks, S, D):
    """Support of a product of vertex sets."""
    return sum(vsupport(V, D[:, S.slice(j)]) for j, V in enumerate(vertex_blocks))


def _block_vertices(B):
    if isinstance(B, Hyperrectangle):
        return np.vstack([B.low, B.high]) if B.dim == 1 else B.vertices
    return hrep_vertices(B.A, B.b)


def _random_decomposed(S, rng, scale=1.0):
    sets, verts = [], []
    for w in S.sizes:
        B, V = random_block(w, rng, scale=scale)
        sets.append(B)
        verts.append(V)
    return DecomposedSet(S, sets), verts


def measure_decomposition(rng, n=None, width=None):
    """Distance between a V-polytope and the product of its projections."""
    S = _structure(rng, n, width)
    m = int(rng.integers(S.n + 1, 2 * S.n + 5))
    P = rng.uniform(-1, 1, (m, S.n)) * rng.uniform(0.2, 2.0, S.n)
    Xhat = decompose(VPolytope(P), S, template=None)
    D = dual_sphere(S.sizes, rng)
    oracle = _split_support([P[:, S.slice(j)] for j in range(S.b)], S, D)
    gap = float(np.max(np.abs(Xhat.support_many(D) - oracle)))
    measured = float(np.max(oracle - vsupport(P, D)))
    bound = float(np.max((P.max(axis=0) - P.min(axis=0)) / 2))
    return Measurement(measured, bound, gap)


def _block_diag_hrep(blocks, S):
    rows, rhs = [], []
    for j, B in enumerate(blocks):
        if isinstance(B, Hyperrectangle):
            A, b = B.constraints()
        else:
            A, b = B.A, B.b
        R = np.zeros((A.shape[0], S.n))
        R[:, S.slice(j)] = A
        rows.append(R)
        rhs.append(b)
    return np.vstack(rows), np.concatenate(rhs)


def measure_intersection(rng, n=None, width=None):
    """Block-wise intersection with the projections of a polytope vs exact."""
    S = _structure(rng, n, width)
    c = rng.uniform(-1, 1, S.n)
    blocks = []
    for j, w in enumerate(S.sizes):
        cj = c[S.slice(j)]
        if w == 1:
            blocks.append(Interval(cj[0] - rng.uniform(0.3, 1.5), cj[0] + rng.uniform(0.3, 1.5)))
        else:
            P = np.vstack([cj + 0.3 * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]),
                           cj + rng.uniform(-1.5, 1.5, (4, 2))])
            A, b = hull_hrep(P)
            blocks.append(HPolyhedron(A, b))
    Xhat = DecomposedSet(S, blocks)
    E = np.vstack([np.eye(S.n), -np.eye(S.n)])
    Ypts = np.vstack([c + 0.3 * E, c + rng.uniform(-2, 2, (S.n + 3, S.n)) * rng.uniform(0.3, 1.5, S.n)])
    YA, Yb = hull_hrep(Ypts)
    Y = HPolyhedron(YA, Yb)
    Yhat = []
    for j in range(S.b):
        A, b = hull_hrep(Ypts[:, S.slice(j)])
        Yhat.append(HPolyhedron(A, b))
    R = intersect_decomposed(Xhat, Yhat)
    XA, Xb = _block_diag_hrep(blocks, S)
    exact = hrep_vertices(np.vstack([XA, YA]), np.concatenate([Xb, Yb]))
    D = dual_sphere(S.sizes, rng)
    approx = _split_support([_block_vertices(B) for B in R.blocks], S, D)
    gap = float(np.max(np.abs(R.support_many(D) - approx)))
    measured = float(np.max(approx - vsupport(exact, D)))
    return Measurement(measured, intersection_error_bound(Xhat, Y), gap)


def measure_affine_map(rng, n=None, width=None, block_sparse=False):
    """Decomposed affine image vs the exact image of the product."""
    S = _structure(rng, n, width)
    Xhat, verts = _random_decomposed(S, rng)
    if block_sparse:
        # at most one nonzero block per block column: permute equal-size blocks
        M = np.zeros((S.n, S.n))
        for w in set(S.sizes):
            idx = [j for j in range(S.b) if S.sizes[j] == w]
            for j, i in zip(idx, rng.permutation(idx)):
                M[S.slice(int(i)), S.slice(j)] = rng.normal(size=(w, w))
    else:
        M = rng.normal(size=(S.n, S.n)) * (rng.random((S.n, S.n)) < 0.7)
    v = rng.normal(size=S.n)
    R = affine_map_decomposed(M, v, Xhat, template=None)
    D = dual_sphere(S.sizes, rng)
    exact = _split_support(verts, S, D @ M) + D @ v
    approx = D @ v
    for i in range(S.b):
        Di = D[:, S.slice(i)]
        for j in range(S.b):
            approx = approx + vsupport(verts[j], Di @ M[S.slice(i), S.slice(j)])
    gap = float(np.max(np.abs(R.support_many(D) - approx)))
    measured = float(np.max(approx - exact))
    bound = 0.0 if block_sparse else affine_map_error_bound(M, S, Xhat)
    return Measurement(measured, bound, gap)


def _perturbed(B, V, rng):
    """A block near ``B``: mostly a superset, sometimes not."""
    grow = rng.random() < 0.8
    if B.dim == 1:
        lo, hi = float(V.min()), float(V.max())
        w = hi - lo
        if grow:
            return Interval(lo - rng.uniform(0, 0.2) * w, hi + rng.uniform(0, 0.2) * w)
        return Interval(lo + rng.uniform(-0.2, 0.2) * w, hi + rng.uniform(-0.2, 0.2) * w)
    c = V.mean(axis=0)
    f = rng.uniform(1.0, 1.2) if grow else rng.uniform(0.85, 1.05)
    W = c + f * (V - c)
    if not grow:
        W = W + rng.uniform(-0.05, 0.05, 2)
    A, b = hull_hrep(W)
    return HPolyhedron(A, b)


def inclusion_instance(rng, n=None, width=None, margin=1e-6):
    """(package verdict, LP verdict) for two decomposed sets, or None on a near tie."""
    S = _structure(rng, n, width)
    Xhat, verts = _random_decomposed(S, rng)
    Yblocks = [_perturbed(B, V, rng) for B, V in zip(Xhat.blocks, verts)]
    Yhat = DecomposedSet(S, Yblocks)
    XA, Xb = _block_diag_hrep(Xhat.blocks, S)
    YA, Yb = _block_diag_hrep(Yblocks, S)
    slack = np.array([b - lp_support(XA, Xb, a) for a, b in zip(YA, Yb)])
    if np.min(np.abs(slack)) < margin:
        return None
    return is_subset_decomposed(Xhat, Yhat), bool(np.all(slack > 0))


def measure_hull(rng, n=None, width=None, template=None):
    """Decomposed hull of two decomposed sets vs the hull of their union.

    Returns the smallest support slack (negative means a containment
    violation) and, for ``template=None``, the distance and its bound.
    """
    S = _structure(rng, n, width)
    Xhat, VX = _random_decomposed(S, rng)
    Yhat, VY = _random_decomposed(S, rng)
    R = convex_hull_decomposed(Xhat, Yhat, template=template)
    D = dual_sphere(S.sizes, rng)
    union = np.maximum(_split_support(VX, S, D), _split_support(VY, S, D))
    got = R.support_many(D)
    slack = float(np.min(got - union))
    if template is not None:
        return slack, None
    blockwise = sum(np.maximum(vsupport(VX[j], D[:, S.slice(j)]), vsupport(VY[j], D[:, S.slice(j)]))
                    for j in range(S.b))
    gap = float(np.max(np.abs(got - blockwise)))
    measured = float(np.max(blockwise - union))
    return slack, Measurement(measured, convex_hull_error_bound(Xhat, Yhat), gap)
