import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockreach.errors import DimensionMismatch, EmptySet, Unbounded
from blockreach.geometry import (
    AffineMap,
    CartesianProduct,
    ConvexHull,
    HalfSpace,
    HPolyhedron,
    Hyperrectangle,
    Intersection,
    Interval,
    LinearMap,
    MinkowskiSum,
    Universe,
    box,
    box_approximation,
    box_directions,
    convex_hull,
    dual_directions,
    feasible_point,
    hausdorff_distance_upper,
    intersection,
    is_empty,
    is_subset,
    maximize,
    octagon_directions,
    planar_directions,
    support_function,
    template_overapprox,
)

from oracles import VPolytope, hrep_vertices, hull_hrep, lp_margin, lp_support, vsupport

TRIANGLE = HPolyhedron([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])


def random_polytope(rng, n, m=None):
    """Random full-dimensional polytope: (HPolyhedron, vertices)."""
    m = m or int(rng.integers(n + 2, 3 * n + 4))
    P = rng.normal(size=(m, n))
    A, b = hull_hrep(P)
    return HPolyhedron(A, b), hrep_vertices(A, b)


# --- support function -------------------------------------------------------

def test_support_box_corner():
    assert support_function(box([-1, -1], [1, 1]), [1, 1]) == 2.0


def test_support_interval_from_constraints():
    assert support_function(HPolyhedron([[1], [-1]], [1, 0]), [-1]) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_support_random_4d_polytope_matches_vertices(seed):
    rng = np.random.default_rng(seed)
    P, V = random_polytope(rng, 4)
    D = rng.normal(size=(20, 4))
    assert np.allclose(P.support_many(D), vsupport(V, D), atol=1e-9)


def test_support_unbounded_and_empty():
    with pytest.raises(Unbounded):
        HPolyhedron([[1, 0, 0]], [1]).support([0, 1, 0])
    with pytest.raises(EmptySet):
        HPolyhedron([[1, 0, 0], [-1, 0, 0]], [0, -1]).support([1, 0, 0])
    with pytest.raises(Unbounded):
        Universe(2).support([1, 0])


def test_direction_length_checked():
    with pytest.raises(DimensionMismatch):
        box([0, 0], [1, 1]).support([1, 0, 0])


def test_lazy_calculus_consistency():
    rng = np.random.default_rng(3)
    X = box([0, -1], [1, 2])
    Y = HPolyhedron(*hull_hrep(rng.normal(size=(6, 2))))
    VY = hrep_vertices(Y.A, Y.b)
    VX = X.vertices()
    M = rng.normal(size=(2, 2))
    v = rng.normal(size=2)
    D = rng.normal(size=(100, 2))
    cases = [
        (LinearMap(M, X), vsupport(VX @ M.T, D)),
        (AffineMap(M, v, Y), vsupport(VY @ M.T + v, D)),
        (MinkowskiSum(X, Y), vsupport(VX, D) + vsupport(VY, D)),
        (ConvexHull(X, Y), np.maximum(vsupport(VX, D), vsupport(VY, D))),
        (convex_hull(X, Y), vsupport(np.vstack([VX, VY]), D)),
    ]
    for lazy, expect in cases:
        assert np.allclose(lazy.support_many(D), expect, atol=1e-9)
    D4 = rng.normal(size=(100, 4))
    prod = CartesianProduct(X, Y)
    assert np.allclose(prod.support_many(D4), vsupport(VX, D4[:, :2]) + vsupport(VY, D4[:, 2:]),
                       atol=1e-9)
    nested = MinkowskiSum(LinearMap(M, ConvexHull(X, Y)), AffineMap(np.eye(2), v, X))
    expect = vsupport(np.vstack([VX, VY]) @ M.T, D) + vsupport(VX + v, D)
    assert np.allclose(nested.support_many(D), expect, atol=1e-9)


def test_intersection_node_support():
    X = Intersection(box([0, 0], [2, 1]), HPolyhedron([[-1, 0]], [-1.5]))
    assert np.isclose(X.support([-1, 0]), -1.5)
    assert np.isclose(X.support([0, 1]), 1.0)


# --- linear programming -----------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    m = int(rng.integers(1, 30))
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = A @ x0 + rng.exponential(size=m) * (rng.random(m) < 0.6)
    if seed % 4 == 0:
        b = b - 1.0
    c = rng.normal(size=n)
    ref = lp_support(A, b, c)
    try:
        got = maximize(c, A, b).value
    except EmptySet:
        got = -np.inf
    except Unbounded:
        got = np.inf
    if np.isfinite(ref):
        assert got == pytest.approx(ref, abs=1e-7, rel=1e-7)
    else:
        assert got == ref


def test_feasible_point_satisfies_constraints():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(12, 3))
    b = A @ rng.normal(size=3) + 0.1
    x = feasible_point(A, b)
    assert np.all(A @ x <= b + 1e-9)
    assert feasible_point([[1.0], [-1.0]], [0.0, -1.0]) is None


def test_degenerate_lp():
    # many constraints through one vertex
    t = np.linspace(0, np.pi / 2, 40)
    A = np.column_stack([np.cos(t), np.sin(t)])
    A = np.vstack([A, [[-1, 0], [0, -1]]])
    b = np.concatenate([np.zeros(40), [1, 1]])
    assert maximize([1, 1], A, b).value == pytest.approx(0.0, abs=1e-9)


# --- emptiness and inclusion ------------------------------------------------

def test_is_empty_examples():
    assert is_empty(HPolyhedron([[1], [-1]], [0, -1]))
    assert not is_empty(HPolyhedron.universe(3))
    assert is_empty(HPolyhedron([[0, 0]], [-1]))


@pytest.mark.parametrize("seed", range(25))
def test_is_empty_random_3d(seed):
    rng = np.random.default_rng(100 + seed)
    A = rng.normal(size=(int(rng.integers(2, 8)), 3))
    b = rng.normal(size=A.shape[0])
    A = np.vstack([A, np.eye(3), -np.eye(3)])
    b = np.concatenate([b, 2 * np.ones(6)])
    t, _ = lp_margin(A, b)
    if abs(t) < 1e-6:
        pytest.skip("near-degenerate instance")
    # rejection sampling agrees when it finds a point
    pts = rng.uniform(-2, 2, (20000, 3))
    hit = np.any(np.all(pts @ A.T <= b, axis=1))
    assert is_empty(HPolyhedron(A, b)) == (t < 0)
    if hit:
        assert t > 0


def test_is_subset_examples():
    unit = box([0, 0], [1, 1])
    assert is_subset(unit, HPolyhedron([[1, 0], [0, 1]], [2, 2]))
    assert not is_subset(unit, HPolyhedron([[1, 0]], [0.5]))


@pytest.mark.parametrize("seed", range(20))
def test_is_subset_box_vertices(seed):
    rng = np.random.default_rng(seed)
    P, _ = random_polytope(rng, 3)
    lo = rng.uniform(-0.6, 0.2, 3)
    B = box(lo, lo + rng.uniform(0.05, 0.6, 3))
    inside = np.all(B.vertices() @ P.A.T <= P.b + 1e-12)
    assert is_subset(B, P) == inside


def test_intersection_examples():
    P = intersection(HPolyhedron([[1]], [1]), HPolyhedron([[-1]], [0]))
    assert P.n_constraints == 2
    assert np.allclose(box_approximation(P).low, [0]) and np.allclose(box_approximation(P).high, [1])
    Q = HPolyhedron([[1, 0]], [3])
    assert intersection(Q, HPolyhedron.universe(2)).n_constraints == 1
    R = intersection(HPolyhedron(*box([0, 0], [2, 1]).constraints()), HPolyhedron([[-1, 0]], [-1.5]))
    Bx = box_approximation(R)
    assert np.allclose(Bx.low, [1.5, 0]) and np.allclose(Bx.high, [2, 1])
    with pytest.raises(DimensionMismatch):
        intersection(Q, HPolyhedron([[1]], [0]))


def test_intersection_commutes():
    rng = np.random.default_rng(8)
    P, _ = random_polytope(rng, 3)
    Q, _ = random_polytope(rng, 3)
    Q = HPolyhedron(Q.A, Q.b + 0.5)
    PQ, QP = intersection(P, Q), intersection(Q, P)
    assert is_subset(PQ, QP) and is_subset(QP, PQ)
    assert is_subset(intersection(P, P), P) and is_subset(P, intersection(P, P))


def test_always_false_constraint_recorded():
    P = HPolyhedron.from_halfspaces([HalfSpace([0, 0], -1)], dim=2)
    assert is_empty(P)


# --- box approximation, hulls, templates ------------------------------------

def test_box_approximation_triangle():
    B = box_approximation(TRIANGLE)
    assert np.allclose(B.center, [0.5, 0.5]) and np.allclose(B.radius, [0.5, 0.5])
    H = box([0, 1], [2, 3])
    assert box_approximation(H) is H or np.allclose(box_approximation(H).low, H.low)


@pytest.mark.parametrize("seed", range(10))
def test_box_approximation_random(seed):
    rng = np.random.default_rng(seed)
    P, V = random_polytope(rng, 3)
    B = box_approximation(P)
    assert np.allclose(B.low, V.min(axis=0), atol=1e-9)
    assert np.allclose(B.high, V.max(axis=0), atol=1e-9)
    D = rng.normal(size=(50, 3))
    assert np.all(P.support_many(D) <= B.support_many(D) + 1e-9)


def test_convex_hull_examples():
    H = convex_hull(Interval(0, 1), Interval(2, 3))
    assert H.support([1]) == 3 and H.support([-1]) == 0
    X = box([0, 0], [1, 2])
    D = np.random.default_rng(0).normal(size=(20, 2))
    assert np.allclose(convex_hull(X, X).support_many(D), X.support_many(D))


def test_convex_hull_random_boxes():
    rng = np.random.default_rng(4)
    lo = rng.normal(size=3)
    X = box(lo, lo + 1)
    Y = box(lo + 2, lo + 2.5)
    D = rng.normal(size=(100, 3))
    assert np.allclose(convex_hull(X, Y).support_many(D),
                       np.maximum(X.support_many(D), Y.support_many(D)))


def test_template_overapprox_examples():
    T = template_overapprox(TRIANGLE, box_directions(2))
    assert T.n_constraints == 4
    assert np.allclose(T.b, [1, 1, 0, 0])
    t = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    disk = VPolytope(np.column_stack([np.cos(t), np.sin(t)]))
    O = template_overapprox(disk, octagon_directions(2))
    assert O.n_constraints == 8
    assert is_subset(disk, O)
    U = template_overapprox(TRIANGLE, np.zeros((0, 2)))
    assert U.n_constraints == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["box", "octagon", "random"]))
def test_template_contains_set(seed, kind):
    rng = np.random.default_rng(seed)
    P, _ = random_polytope(rng, 3)
    D = {"box": box_directions(3), "octagon": octagon_directions(3),
         "random": rng.normal(size=(7, 3))}[kind]
    assert is_subset(P, template_overapprox(P, D))


def test_octagon_directions_count():
    assert octagon_directions(2).shape == (8, 2)
    assert octagon_directions(3).shape == (6 + 12, 3)


# --- Hausdorff distance -----------------------------------------------------

def test_hausdorff_examples():
    X, Y = box([0, 0], [1, 1]), box([-1, -1], [2, 2])
    assert hausdorff_distance_upper(X, Y, box_directions(2)) == 1.0
    assert hausdorff_distance_upper(X, X, box_directions(2)) == 0.0


def test_hausdorff_triangle_box():
    D = np.vstack([planar_directions(256), dual_directions(2)])
    d = hausdorff_distance_upper(TRIANGLE, box([0, 0], [1, 1]), D)
    assert d == pytest.approx(0.5, abs=1e-9)


def test_dual_directions_unit_one_norm():
    D = dual_directions(4, count=50, rng=0)
    assert np.allclose(np.abs(D).sum(axis=1), 1.0)


def test_hyperrectangle_validation():
    with pytest.raises(ValueError):
        Hyperrectangle([0.0], [-1.0])
    with pytest.raises(ValueError):
        Interval(2, 1)
