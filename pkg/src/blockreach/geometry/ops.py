"""Set operations built on the support function and the LP solver."""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import DimensionMismatch
from . import lp
from .sets import ConvexHull, ConvexSet, HPolyhedron, box, to_hpolyhedron

INCL_TOL = 1e-9


def support_function(X: ConvexSet, d) -> float:
    return X.support(d)


def is_empty(P) -> bool:
    """Decide emptiness of a constraint-representable set by LP feasibility."""
    P = to_hpolyhedron(P)
    if P._false_row:
        return True
    if P.n_constraints == 0:
        return False
    V = P.vertices
    if V is not None:
        return V.shape[0] == 0
    if P.dim == 1:
        lo, hi = P._interval
        return lo > hi + lp.FEAS_TOL * (1 + abs(hi))
    return lp.feasible_point(np.array(P.A), np.array(P.b)) is None


def is_subset(X: ConvexSet, P, tol=INCL_TOL) -> bool:
    """``X`` is contained in the polyhedron ``P`` iff every constraint's
    normal has support at most its offset."""
    P = to_hpolyhedron(P)
    if X.dim != P.dim:
        raise DimensionMismatch("inclusion between sets of different dimension")
    if P._false_row:
        return False
    A, b = np.array(P.A), np.array(P.b)
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    if not np.any(keep):
        return True
    A, b = A[keep] / norms[keep, None], b[keep] / norms[keep]
    return bool(np.all(X.support_many(A) <= b + tol))


def intersection(P, Q) -> HPolyhedron:
    """Constraint concatenation; no redundancy removal."""
    P, Q = to_hpolyhedron(P), to_hpolyhedron(Q)
    if P.dim != Q.dim:
        raise DimensionMismatch(f"cannot intersect dimension {P.dim} with {Q.dim}")
    return HPolyhedron(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]), dim=P.dim)


def box_directions(n):
    eye = np.eye(n)
    return np.vstack([eye, -eye])


def octagon_directions(n):
    """Box directions plus ``+-e_i +- e_j`` for all pairs ``i < j``."""
    rows = [box_directions(n)]
    for i, j in itertools.combinations(range(n), 2):
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            d = np.zeros(n)
            d[i], d[j] = si, sj
            rows.append(d[None])
    return np.vstack(rows)


def box_approximation(X: ConvexSet):
    """Tightest enclosing box; an Interval for one-dimensional sets."""
    n = X.dim
    vals = X.support_many(box_directions(n))
    hi, lo = vals[:n], -vals[n:]
    # degenerate sets can come back with lo marginally above hi
    flip = lo > hi
    mid = (lo + hi) / 2
    lo = np.where(flip, mid, lo)
    hi = np.where(flip, mid, hi)
    return box(lo, hi)


def convex_hull(X: ConvexSet, Y: ConvexSet) -> ConvexHull:
    if X.dim != Y.dim:
        raise DimensionMismatch("convex hull of sets of different dimension")
    return ConvexHull(X, Y)


def template_overapprox(X: ConvexSet, D) -> HPolyhedron:
    """``{x : <d, x> <= rho_X(d) for d in D}``; the universe for empty ``D``."""
    D = np.asarray(D, dtype=float)
    if D.size == 0:
        return HPolyhedron.universe(X.dim)
    D = D.reshape(-1, X.dim)
    return HPolyhedron(D, X.support_many(D), dim=X.dim)


def hausdorff_distance_upper(X: ConvexSet, Y: ConvexSet, D) -> float:
    """``max_{d in D} rho_Y(d) - rho_X(d)`` for ``X`` contained in ``Y``.

    With ``D`` on the unit sphere of the 1-norm this approaches, from below,
    the Hausdorff distance in the infinity norm as ``D`` densifies.
    """
    D = np.asarray(D, dtype=float).reshape(-1, X.dim)
    return float(np.max(Y.support_many(D) - X.support_many(D)))


def dual_directions(n, count=0, rng=None, structured=True):
    """Directions on the 1-norm unit sphere for infinity-norm distances.

    Includes every ``+-e_i`` and every sign vector ``s / n`` when
    ``structured`` (the latter only up to n = 10), plus ``count`` random ones.
    """
    rows = []
    if structured:
        rows.append(box_directions(n))
        if n <= 10:
            signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
            rows.append(signs / n)
    if count:
        rng = np.random.default_rng(rng)
        G = rng.standard_normal((count, n))
        # mix of dense and sparse directions
        mask = rng.random((count, n)) < 0.5
        mask[np.arange(count), rng.integers(0, n, count)] = True
        G = G * mask
        rows.append(G / np.abs(G).sum(axis=1, keepdims=True))
    return np.vstack(rows)


def planar_directions(count):
    """``count`` evenly spread directions on the 1-norm unit circle."""
    t = np.linspace(0, 2 * np.pi, count, endpoint=False)
    D = np.column_stack([np.cos(t), np.sin(t)])
    return D / np.abs(D).sum(axis=1, keepdims=True)


def hyperrectangle_hull(boxes):
    """Bounding box of several hyperrectangles."""
    lo = np.min([b.low for b in boxes], axis=0)
    hi = np.max([b.high for b in boxes], axis=0)
    return box(lo, hi)
