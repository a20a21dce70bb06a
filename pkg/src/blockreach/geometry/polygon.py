"""Vertex enumeration for planar constraint systems.

Low-dimensional blocks are the common case in decomposed analysis, and a
polygon with a handful of edges is much cheaper to query through its
vertices than through one LP per direction.
"""
from __future__ import annotations

import itertools

import numpy as np

VERTEX_TOL = 1e-9


def normals_span_plane(A, tol=1e-12):
    """True iff the nonzero rows of A positively span R^2 (bounded feasible set)."""
    A = A[np.linalg.norm(A, axis=1) > tol]
    if A.shape[0] < 3:
        return False
    ang = np.sort(np.arctan2(A[:, 1], A[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
    return bool(gaps.max() < np.pi - 1e-12)


def interval_bounds(a, b):
    """Bounds ``(lo, hi)`` of ``{x : a_i x <= b_i}`` in one dimension."""
    lo, hi = -np.inf, np.inf
    for ai, bi in zip(a, b):
        if ai > 0:
            hi = min(hi, bi / ai)
        elif ai < 0:
            lo = max(lo, bi / ai)
        elif bi < -VERTEX_TOL:
            return np.inf, -np.inf
    return lo, hi


def polygon_vertices(A, b, tol=VERTEX_TOL):
    """Vertices (counter-clockwise) of the bounded polygon ``{x : A x <= b}``.

    Returns an empty (0, 2) array when the polygon is empty. The caller must
    ensure boundedness (see ``normals_span_plane``).
    """
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 1e-300
    A = A[keep] / norms[keep, None]
    b = b[keep] / norms[keep]
    m = A.shape[0]
    pts = []
    slack = tol * (1.0 + np.abs(b))
    for i, j in itertools.combinations(range(m), 2):
        det = A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0]
        if abs(det) < 1e-12:
            continue
        x = (b[i] * A[j, 1] - A[i, 1] * b[j]) / det
        y = (A[i, 0] * b[j] - b[i] * A[j, 0]) / det
        p = np.array([x, y])
        if np.all(A @ p <= b + slack):
            pts.append(p)
    if not pts:
        return np.zeros((0, 2))
    P = _merge_close(np.array(pts), tol * (1.0 + np.abs(b).max()))
    if P.shape[0] > 2:
        c = P.mean(axis=0)
        order = np.argsort(np.arctan2(P[:, 1] - c[1], P[:, 0] - c[0]))
        P = P[order]
    return P


def _merge_close(P, tol):
    """Drop points within ``tol`` (infinity norm) of an earlier kept point."""
    kept = []
    for p in P:
        if not any(np.max(np.abs(p - q)) <= tol for q in kept):
            kept.append(p)
    return np.array(kept)
