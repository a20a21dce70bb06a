"""Hybrid automata and the decomposed reachability loop.

Each symbolic state taken from the waiting list gets one sparse flowpipe in
its location: only the blocks touched by outgoing guards, the invariant and
the safety property are computed. Guard tests run on those blocks; the
remaining blocks are filled in only for steps that may take a jump.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .decomposition import (
    BlockStructure,
    DecomposedSet,
    affine_map_decomposed,
    constrained_blocks,
    convex_hull_decomposed,
    cross_components,
    intersect_polyhedron,
    is_subset_decomposed,
    project_constraints,
    provably_disjoint,
)
from .errors import ConfigError, DimensionMismatch, StructureMismatch
from .geometry.sets import ConvexSet, HPolyhedron, Hyperrectangle
from .lti import (
    Flowpipe,
    LTISystem,
    _rk4,
    complete_steps,
    discretize,
    flowpipe_sparse,
)

SAFETY_TOL = 1e-9


@dataclass
class Location:
    name: str
    flow: LTISystem
    invariant: HPolyhedron


@dataclass
class Transition:
    source: str
    target: str
    guard: HPolyhedron
    M: np.ndarray
    v: np.ndarray
    label: str = ""


class HybridAutomaton:
    """Locations with affine dynamics, polyhedral invariants and guards, and
    deterministic affine assignments."""

    def __init__(self, n, locations, transitions=(), variables=None):
        self.n = int(n)
        self.locations = list(locations)
        self.transitions = list(transitions)
        self.variables = list(variables) if variables else [f"x{i}" for i in range(self.n)]
        if not self.locations:
            raise ValueError("an automaton needs at least one location")
        self._by_name = {}
        for loc in self.locations:
            if loc.name in self._by_name:
                raise ValueError(f"duplicate location {loc.name!r}")
            if loc.flow.n != self.n or loc.invariant.dim != self.n:
                raise DimensionMismatch(f"location {loc.name!r} is not {self.n}-dimensional")
            self._by_name[loc.name] = loc
        for t in self.transitions:
            if t.source not in self._by_name or t.target not in self._by_name:
                raise ValueError(f"transition {t.source}->{t.target} names an unknown location")
            if t.guard.dim != self.n or np.shape(t.M) != (self.n, self.n) or np.shape(t.v) != (self.n,):
                raise DimensionMismatch(f"transition {t.source}->{t.target} has wrong dimensions")
        if len(self.variables) != self.n:
            raise DimensionMismatch("variable names do not match the dimension")

    def location(self, name) -> Location:
        return self._by_name[name]

    def outgoing(self, name):
        return [(i, t) for i, t in enumerate(self.transitions) if t.source == name]

    def constrained_dimensions(self):
        """Coordinates touched by any invariant or guard."""
        rows = [loc.invariant.A for loc in self.locations] + [t.guard.A for t in self.transitions]
        rows = [r for r in rows if r.size]
        if not rows:
            return []
        return sorted(int(i) for i in np.flatnonzero(np.any(np.vstack(rows) != 0, axis=0)))


@dataclass
class SymbolicState:
    location: str
    set: ConvexSet
    depth: int = 0
    time_lo: float = 0.0
    path: tuple = ()


@dataclass
class TransitionPlan:
    index: int
    transition: Transition
    Gstar: HPolyhedron
    guard_blocks: frozenset
    Gstar_by_block: list
    cross_constraints: list  # [(blocks, HPolyhedron)]


def _pullback(P: HPolyhedron, M, v) -> HPolyhedron:
    """``{x : M x + v in P}``."""
    if P.n_constraints == 0:
        return HPolyhedron.universe(P.dim)
    return HPolyhedron(P.A @ M, P.b - P.A @ v, dim=P.dim)


def precompute_gstar(H: HybridAutomaton, index: int, S: BlockStructure) -> TransitionPlan:
    """Fold source invariant, guard and the pulled-back target invariant."""
    t = H.transitions[index]
    M = np.asarray(t.M, dtype=float)
    v = np.asarray(t.v, dtype=float)
    parts = [H.location(t.source).invariant, t.guard,
             _pullback(H.location(t.target).invariant, M, v)]
    A = np.vstack([p.A for p in parts])
    b = np.concatenate([p.b for p in parts])
    keep = np.any(A != 0, axis=1) | (b < 0)
    G = HPolyhedron(A[keep], b[keep], dim=H.n)
    return TransitionPlan(index, t, G, constrained_blocks(G, S),
                          project_constraints(G, S), cross_components(G, S))


@dataclass
class ReachConfig:
    """Analysis parameters.

    :param invariant_exit: end a flowpipe at the first step that provably
        left the invariant of its location
    :param prune_safety: intersect step sets with the invariant before the
        safety check
    :param store_initial: also use each flowpipe's first set for fixpoints
    """
    delta: float
    horizon: float
    jump_bound: int = 5
    structure: Optional[BlockStructure] = None
    block_width: int = 1
    template: Optional[str] = "box"
    clustering: str = "hull"
    safety: Optional[HPolyhedron] = None
    max_refine_dims: int = 10
    fallback: str = "assume"
    invariant_exit: bool = True
    prune_safety: bool = False
    store_initial: bool = True
    unbounded: bool = False
    parallel: int = 1
    discretization: str = "forward"

    def validate(self, n):
        if not self.delta > 0:
            raise ConfigError("delta must be positive")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.jump_bound < 0:
            raise ConfigError("jump bound must be nonnegative")
        if self.template not in ("box", "octagon", None):
            raise ConfigError(f"unknown template {self.template!r}")
        if self.template == "octagon" and self.block_width != 2 and self.structure is None:
            raise ConfigError("octagon templates need two-dimensional blocks")
        if self.clustering not in ("hull", "none"):
            raise ConfigError(f"unknown clustering {self.clustering!r}")
        if self.discretization not in ("first_order", "forward"):
            raise ConfigError(f"unknown discretization {self.discretization!r}")
        if self.fallback not in ("assume", "exact"):
            raise ConfigError(f"unknown fallback {self.fallback!r}")
        if self.block_width not in (1, 2) and self.structure is None:
            raise ConfigError("block width must be 1 or 2")
        if self.structure is not None and self.structure.n != n:
            raise ConfigError("block structure does not match the model dimension")
        if self.safety is not None and self.safety.dim != n:
            raise ConfigError("safety property does not match the model dimension")

    def block_structure(self, n) -> BlockStructure:
        return self.structure or BlockStructure.uniform(n, self.block_width)


@dataclass
class Verdict:
    kind: str  # "Safe", "Unsafe" or "BoundExhausted"
    step: Optional[int] = None
    location: Optional[str] = None
    time: Optional[tuple] = None

    def __str__(self):
        if self.kind == "Unsafe":
            return f"Unsafe(step={self.step}, location={self.location})"
        return self.kind


@dataclass
class ReachStats:
    sets_total: int = 0
    sets_completed_highdim: int = 0
    jumps_taken: int = 0
    fixpoints_hit: int = 0

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class FlowpipeRecord:
    location: str
    flowpipe: Flowpipe
    state: SymbolicState


@dataclass
class ReachResult:
    flowpipes: list
    verdict: Verdict
    stats: ReachStats
    structure: BlockStructure
    elapsed: float = 0.0
    passed: dict = field(default_factory=dict)


def check_safety(step_set: DecomposedSet, safe: Optional[HPolyhedron], S=None) -> bool:
    """True iff the step set satisfies every safe constraint.

    Each constraint is evaluated through the support function of the
    decomposed set, which only reads the blocks the constraint touches.
    """
    if safe is None or safe.n_constraints == 0:
        return True
    A, b = np.array(safe.A), np.array(safe.b)
    norms = np.linalg.norm(A, axis=1)
    nz = norms > 0
    if np.any(~nz & (b < 0)):
        return False
    A, b = A[nz] / norms[nz, None], b[nz] / norms[nz]
    return bool(np.all(step_set.support_many(A) <= b + SAFETY_TOL))


def _maybe_enabled(X, plan, config):
    return not provably_disjoint(X, plan.Gstar, config.max_refine_dims, config.fallback,
                                 components=plan.cross_constraints,
                                 per_block=plan.Gstar_by_block)


def discrete_post(plan: TransitionPlan, fp: Flowpipe, config: ReachConfig,
                  state: Optional[SymbolicState] = None):
    """Jump successors of every flowpipe step that may meet ``G*``.

    Returns the successor states (before clustering) and the steps that had
    to be completed.
    """
    steps = [k for k in range(len(fp)) if _maybe_enabled(fp.step(k), plan, config)]
    if not steps:
        return [], []
    complete_steps(fp, steps, parallel=config.parallel)
    t = plan.transition
    depth = state.depth + 1 if state else 1
    path = (state.path if state else ()) + (plan.index,)
    out = []
    for k in steps:
        Y = intersect_polyhedron(fp.step(k), plan.Gstar, config.template,
                                 config.max_refine_dims, config.fallback)
        if Y.is_empty():
            continue
        Z = affine_map_decomposed(t.M, t.v, Y, config.template)
        out.append(SymbolicState(t.target, Z, depth, fp.time_interval(k)[0], path))
    return out, steps


def cluster(states, strategy="hull", template="box"):
    """Merge successors of one transition from one flowpipe."""
    if strategy == "none" or len(states) <= 1:
        return list(states)
    if strategy != "hull":
        raise ConfigError(f"unknown clustering {strategy!r}")
    first = states[0]
    acc = first.set
    for s in states[1:]:
        if s.set.structure != acc.structure:
            raise StructureMismatch("cannot cluster sets with different structures")
        acc = convex_hull_decomposed(acc, s.set, template)
    return [SymbolicState(first.location, acc, max(s.depth for s in states),
                          min(s.time_lo for s in states), first.path)]


@dataclass
class _Stored:
    set: DecomposedSet
    depth: int
    time_lo: float


def fixpoint_check(candidate: SymbolicState, passed) -> bool:
    """True iff the candidate lies inside a stored set of its location.

    A stored entry only covers the candidate if it was reached no later and
    with no more jumps, so that its own exploration covers what is left of
    the candidate's time horizon and jump budget.
    """
    for entry in passed.get(candidate.location, ()):
        if isinstance(entry, _Stored):
            if entry.time_lo > candidate.time_lo + 1e-12 or entry.depth > candidate.depth:
                continue
            entry = entry.set
        if is_subset_decomposed(candidate.set, entry):
            return True
    return False


def _flowpipe_for(state, loc, plans, config, S):
    n_total = int(math.ceil((config.horizon - state.time_lo) / config.delta - 1e-9))
    if n_total <= 0:
        return None
    dsys = discretize(loc.flow, state.set, config.delta, config.discretization)
    needed = set()
    for plan in plans:
        needed |= plan.guard_blocks
    if config.safety is not None:
        needed |= constrained_blocks(config.safety, S)
    inv = loc.invariant
    stops = []
    if config.invariant_exit and inv.n_constraints:
        needed |= constrained_blocks(inv, S)
        inv_blocks = project_constraints(inv, S)
        inv_cross = cross_components(inv, S)
        stops.append(lambda X, fp: provably_disjoint(X, inv, config.max_refine_dims, config.fallback,
                                                     components=inv_cross, per_block=inv_blocks))
    if config.unbounded:
        needed = set(range(S.b))
        # the flowpipe re-enters its own first set
        stops.append(lambda X, fp: is_subset_decomposed(X, fp.X0hat))
    stop = (lambda X, fp: any(f(X, fp) for f in stops)) if stops else None
    return flowpipe_sparse(dsys, S, n_total - 1, needed, config.template, state.time_lo, stop=stop)


def _safe_step(X, loc, config):
    if config.prune_safety and loc.invariant.n_constraints:
        computed = [j for j in range(X.structure.b) if X.is_computed(j)]
        inv_blocks = constrained_blocks(loc.invariant, X.structure)
        if inv_blocks <= set(computed):
            X = intersect_polyhedron(X, loc.invariant, config.template,
                                     config.max_refine_dims, config.fallback)
            if X.is_empty():
                return True
    return check_safety(X, config.safety)


def reach(H: HybridAutomaton, init, config: ReachConfig) -> ReachResult:
    """Breadth-first exploration of the symbolic state space.

    :param init: list of ``SymbolicState`` or ``(location, set)`` pairs
    """
    started = time.perf_counter()
    config.validate(H.n)
    S = config.block_structure(H.n)
    plans = {loc.name: [precompute_gstar(H, i, S) for i, _ in H.outgoing(loc.name)]
             for loc in H.locations}
    waiting = deque(s if isinstance(s, SymbolicState) else SymbolicState(s[0], s[1])
                    for s in init)
    passed: dict = {}
    stats = ReachStats()
    records = []
    verdict = None
    exhausted = False

    while waiting:
        state = waiting.popleft()
        loc = H.location(state.location)
        loc_plans = plans[loc.name]
        fp = _flowpipe_for(state, loc, loc_plans, config, S)
        if fp is None:
            continue
        records.append(FlowpipeRecord(loc.name, fp, state))
        stats.sets_total += len(fp)
        if config.store_initial:
            passed.setdefault(loc.name, []).append(_Stored(fp.X0hat, state.depth, state.time_lo))
        for k in range(len(fp)):
            if not _safe_step(fp.step(k), loc, config):
                verdict = Verdict("Unsafe", k, loc.name, fp.time_interval(k))
                break
        if verdict is not None:
            break
        if state.depth >= config.jump_bound:
            if any(_maybe_enabled(fp.step(k), plan, config)
                   for plan in loc_plans for k in range(len(fp))):
                exhausted = True
            continue
        for plan in loc_plans:
            succ, _ = discrete_post(plan, fp, config, state)
            for s in cluster(succ, config.clustering, config.template):
                stats.jumps_taken += 1
                if fixpoint_check(s, passed):
                    stats.fixpoints_hit += 1
                    continue
                passed.setdefault(s.location, []).append(_Stored(s.set, s.depth, s.time_lo))
                waiting.append(s)

    stats.sets_completed_highdim = sum(
        r.flowpipe.is_complete(k) for r in records for k in range(len(r.flowpipe)))
    if verdict is None:
        verdict = Verdict("BoundExhausted" if exhausted else "Safe")
    return ReachResult(records, verdict, stats, S, time.perf_counter() - started, passed)


# --- simulation of executions (test oracle) ---------------------------------

@dataclass
class ExecutionSegment:
    location: str
    times: np.ndarray
    states: np.ndarray


def _violation(P: HPolyhedron, x):
    if P.n_constraints == 0:
        return -np.inf
    return float(np.max(P.A @ x - P.b))


def simulate_execution(H: HybridAutomaton, location, x0, T, dt=1e-3, rng=None,
                       input_pieces=10, event_tol=1e-10, guard_tol=1e-5, max_jumps=None):
    """One execution with jumps taken where the trajectory leaves the invariant.

    The exit point is located by bisection to ``event_tol`` in time; the
    first transition (declaration order) whose guard holds there within
    ``guard_tol`` fires. The run stops if none does. Inputs are random,
    piecewise constant and drawn from box input sets.
    """
    rng = np.random.default_rng(rng)
    x = np.array(x0, dtype=float)
    t = 0.0
    segments = []
    jumps = 0
    while t < T:
        loc = H.location(location)
        sys = loc.flow
        times, states = [t], [x.copy()]
        piece_len = T / input_pieces
        left = False
        while t < T - 1e-12:
            if sys.has_input and isinstance(sys.U, Hyperrectangle):
                u = rng.uniform(sys.U.low, sys.U.high)
                Bu = sys.B @ u
            elif sys.has_input:
                raise ValueError("simulation needs box input sets")
            else:
                Bu = np.zeros(H.n)
            piece_end = min(T, (math.floor(t / piece_len + 1e-12) + 1) * piece_len)
            while t < piece_end - 1e-12:
                h = min(dt, piece_end - t)
                y = _rk4(sys.A, Bu, x, h)
                if _violation(loc.invariant, y) > 0:
                    lo, hi = 0.0, h
                    while hi - lo > event_tol:
                        mid = (lo + hi) / 2
                        if _violation(loc.invariant, _rk4(sys.A, Bu, x, mid)) > 0:
                            hi = mid
                        else:
                            lo = mid
                    x = _rk4(sys.A, Bu, x, lo)
                    t += lo
                    times.append(t)
                    states.append(x.copy())
                    left = True
                    break
                x, t = y, t + h
                times.append(t)
                states.append(x.copy())
            if left:
                break
        segments.append(ExecutionSegment(location, np.array(times), np.array(states)))
        if not left or (max_jumps is not None and jumps >= max_jumps):
            break
        for _, tr in H.outgoing(location):
            if _violation(tr.guard, x) <= guard_tol:
                x = np.asarray(tr.M) @ x + np.asarray(tr.v)
                location = tr.target
                jumps += 1
                break
        else:
            break
    return segments
