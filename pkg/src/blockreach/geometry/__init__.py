"""Convex sets, support functions and polyhedral calculus."""
from .lp import FEAS_TOL, LPResult, feasible_point, maximize
from .ops import (
    INCL_TOL,
    box_approximation,
    box_directions,
    convex_hull,
    dual_directions,
    hausdorff_distance_upper,
    hyperrectangle_hull,
    intersection,
    is_empty,
    is_subset,
    octagon_directions,
    planar_directions,
    support_function,
    template_overapprox,
)
from .sets import (
    AffineMap,
    CartesianProduct,
    ConvexHull,
    ConvexSet,
    Empty,
    HalfSpace,
    HPolyhedron,
    Hyperrectangle,
    Intersection,
    Interval,
    LinearMap,
    MinkowskiSum,
    Universe,
    box,
    to_hpolyhedron,
)

__all__ = [name for name in dir() if not name.startswith("_")]
