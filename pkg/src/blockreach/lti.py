"""Linear time-invariant dynamics: discretization and decomposed flowpipes.

The step-``k`` set of a flowpipe is evaluated directly from step 0,

    X_i(k) = sum_j (Phi^k)_ij X_j(0)  +  sum_{j<k} [(Phi^j)_i1 ... (Phi^j)_ib] V,

so nothing is re-decomposed between steps. Only the block rows of ``Phi^k``
belonging to the requested blocks are ever formed (row strips), which is what
makes the sparse flowpipe cheap in high dimension.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .decomposition import (
    NOT_COMPUTED,
    BlockStructure,
    DecomposedSet,
    _from_support_values,
    decompose,
    lifted_template,
)
from .errors import DimensionMismatch, NumericalFailure
from .geometry.ops import box_directions
from .geometry.sets import (
    ConvexHull,
    ConvexSet,
    Hyperrectangle,
    LinearMap,
    MinkowskiSum,
)

TAYLOR_TOL = 1e-18


class LTISystem:
    """``x' = A x + B u`` with ``u`` in the compact convex set ``U``.

    :param A: n x n state matrix
    :param B: n x m input matrix (None for an autonomous system)
    :param U: input domain in R^m (None for an autonomous system)
    """

    def __init__(self, A, B=None, U: Optional[ConvexSet] = None):
        self.A = np.array(A, dtype=float, ndmin=2)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch("state matrix must be square")
        if B is None or U is None:
            self.B = np.zeros((n, 0))
            self.U = None
        else:
            self.B = np.array(B, dtype=float, ndmin=2).reshape(n, -1)
            if U.dim != self.B.shape[1]:
                raise DimensionMismatch("input set does not match the columns of B")
            self.U = U

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def has_input(self):
        return self.U is not None and np.any(self.B)

    def input_set(self) -> Optional[ConvexSet]:
        """``B U`` as a lazy set, or None when there is no input."""
        if not self.has_input:
            return None
        return LinearMap(self.B, self.U)

    def __repr__(self):
        return f"LTISystem(n={self.n}, m={self.B.shape[1]})"


def mat_exp(M):
    """Matrix exponential by scaling and squaring a truncated Taylor series."""
    M = np.array(M, dtype=float, ndmin=2)
    if not np.all(np.isfinite(M)):
        raise NumericalFailure("non-finite matrix")
    n = M.shape[0]
    norm = np.abs(M).sum(axis=1).max() if n else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / 2.0 ** s
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        term = term @ X / k
        E = E + term
        if np.abs(term).max() <= TAYLOR_TOL * np.abs(E).max():
            break
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            E = E @ E
    if not np.all(np.isfinite(E)):
        raise NumericalFailure("matrix exponential overflow")
    return E


def _phi(z):
    """``e^z - 1 - z`` without cancellation for small ``z``."""
    return math.expm1(z) - z


def _inf_norm_radius(X: ConvexSet):
    """``max_{x in X} |x|_inf``."""
    return float(np.max(X.support_many(box_directions(X.dim))))


@dataclass
class DiscretizedSystem:
    """One-step model ``X(k+1) = Phi X(k) + V`` with first set ``Omega0``.

    ``V`` is kept in the factored form ``Bd U + [-err, err]`` so that its
    support function can be evaluated on many directions at once.
    """
    Phi: np.ndarray
    Omega0: ConvexSet
    V: Optional[ConvexSet]
    delta: float
    Bd: Optional[np.ndarray] = field(repr=False, default=None)
    U: Optional[ConvexSet] = field(repr=False, default=None)
    err: Optional[np.ndarray] = field(repr=False, default=None)
    method: str = "first_order"

    @property
    def n(self):
        return self.Phi.shape[0]

    def input_support(self, D):
        """Support function of ``V`` on the rows of ``D`` (zero if V = {0})."""
        D = np.asarray(D, dtype=float)
        out = np.zeros(D.shape[0])
        if self.U is not None:
            Z = D @ self.Bd
            if isinstance(self.U, Hyperrectangle):
                out += Z @ self.U.center + np.abs(Z) @ self.U.radius
            else:
                out += self.U.support_many(Z)
        if self.err is not None:
            out += np.abs(D) @ self.err
        return out


def _ball(n, r):
    return Hyperrectangle(np.zeros(n), np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy())


def _assemble(Phi, X0, delta, moved, Bd, U, err, method):
    n = Phi.shape[0]
    Omega0 = ConvexHull(X0, MinkowskiSum(LinearMap(Phi, X0), *moved))
    parts = []
    if U is not None:
        parts.append(LinearMap(Bd, U))
    if err is not None:
        parts.append(_ball(n, err))
    V = MinkowskiSum(*parts) if parts else None
    return DiscretizedSystem(Phi, Omega0, V, float(delta), Bd, U, err, method)


def _first_order(sys, X0, delta):
    n = sys.n
    Phi = mat_exp(sys.A * delta)
    normA = float(np.abs(sys.A).sum(axis=1).max())
    growth = _phi(delta * normA)
    R0 = _inf_norm_radius(X0)
    BU = sys.input_set()
    RU = _inf_norm_radius(BU) if BU is not None else 0.0
    alpha = growth * R0
    beta = growth * RU / normA if normA > 0 else 0.0
    moved = []
    if BU is not None:
        moved.append(LinearMap(delta * sys.B, sys.U))
    if alpha + beta > 0:
        moved.append(_ball(n, alpha + beta))
    return _assemble(Phi, X0, delta, moved,
                     delta * sys.B if BU is not None else None,
                     sys.U if BU is not None else None,
                     np.full(n, beta) if beta > 0 else None, "first_order")


def phi_matrices(A, delta):
    """``Phi = e^{A delta}``, ``Phi1 = sum delta^{i+1}/(i+1)! A^i`` and
    ``Phi2 = sum delta^{i+2}/(i+2)! A^i`` from one exponential of a 3n x 3n
    block matrix."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    big = np.zeros((3 * n, 3 * n))
    big[:n, :n] = A * delta
    big[:n, n:2 * n] = np.eye(n) * delta
    big[n:2 * n, 2 * n:] = np.eye(n) * delta
    E = mat_exp(big)
    return E[:n, :n], E[:n, n:2 * n], E[:n, 2 * n:]


def _symmetric_radius(X: ConvexSet):
    """Radius of the smallest origin-centred box containing ``X``."""
    v = X.support_many(box_directions(X.dim))
    return np.maximum(v[:X.dim], v[X.dim:])


def _forward(sys, X0, delta):
    n = sys.n
    Phi, Phi1, _ = phi_matrices(sys.A, delta)
    _, _, Phi2_abs = phi_matrices(np.abs(sys.A), delta)
    A2 = sys.A @ sys.A
    e_plus = Phi2_abs @ _symmetric_radius(LinearMap(A2, X0))
    moved = []
    if np.any(e_plus):
        moved.append(_ball(n, e_plus))
    BU = sys.input_set()
    if BU is None:
        return _assemble(Phi, X0, delta, moved, None, None, None, "forward")
    e_psi = Phi2_abs @ _symmetric_radius(LinearMap(sys.A @ sys.B, sys.U))
    moved.append(LinearMap(delta * sys.B, sys.U))
    if np.any(e_psi):
        moved.append(_ball(n, e_psi))
    if isinstance(sys.U, Hyperrectangle) and not np.any(sys.U.radius):
        # a constant input has the exact one-step effect Phi1 B u
        return _assemble(Phi, X0, delta, moved, Phi1 @ sys.B, sys.U, None, "forward")
    return _assemble(Phi, X0, delta, moved, delta * sys.B, sys.U,
                     e_psi if np.any(e_psi) else None, "forward")


DISCRETIZATIONS = {"first_order": _first_order, "forward": _forward}


def discretize(sys: LTISystem, X0: ConvexSet, delta: float,
               method: str = "first_order") -> DiscretizedSystem:
    """Conservative discretization of the flow over one time step.

    ``first_order`` bloats with infinity-norm balls: with
    ``phi(z) = e^z - 1 - z``, ``alpha = phi(delta |A|) R0`` and
    ``beta = phi(delta |A|) RU / |A|``,
    ``Omega0 = CH(X0, Phi X0 + delta B U + (alpha + beta) B_inf)`` and
    ``V = delta B U + beta B_inf``.

    ``forward`` uses the interpolation error boxes
    ``E+ = box(Phi2(|A|) box(A^2 X0))`` and ``Epsi = box(Phi2(|A|) box(A B U))``:
    ``Omega0 = CH(X0, Phi X0 + delta B U + Epsi + E+)`` and
    ``V = delta B U + Epsi``, or exactly ``{Phi1 B u}`` for a constant input.
    """
    if delta <= 0:
        raise ValueError("time step must be positive")
    if X0.dim != sys.n:
        raise DimensionMismatch("initial set does not match the system dimension")
    try:
        fn = DISCRETIZATIONS[method]
    except KeyError:
        raise ValueError(f"unknown discretization {method!r}") from None
    return fn(sys, X0, delta)


def block_row_powers(Phi, S: BlockStructure, k: int, rows: Iterable[int]):
    """Yield the block rows ``rows`` of ``Phi^j`` for ``j = 0..k``.

    Uses the row-strip recurrence ``strip(j+1) = strip(j) Phi``, so only
    ``len(dims) x n`` matrices are ever formed.
    """
    Phi = np.asarray(Phi, dtype=float)
    dims = S.dims(rows)
    strip = np.eye(S.n)[dims]
    for j in range(k + 1):
        yield strip
        if j < k:
            strip = strip @ Phi
            if not np.all(np.isfinite(strip)):
                raise NumericalFailure("matrix power overflow")


@dataclass
class FlowpipeStats:
    blocks_computed: int = 0
    blocks_skipped: int = 0


class Flowpipe:
    """Decomposed flowpipe; step ``k`` covers ``[t0 + k delta, t0 + (k+1) delta]``.

    Blocks that were not needed are stored as ``NOT_COMPUTED`` and can be
    filled later with ``complete_steps``.
    """

    def __init__(self, dsys: DiscretizedSystem, structure: BlockStructure, template,
                 X0hat: DecomposedSet, t0=0.0):
        self.dsys = dsys
        self.structure = structure
        self.template = template
        self.X0hat = X0hat
        self.t0 = float(t0)
        self.blocks: list = []
        self.stats = FlowpipeStats()
        # why the flowpipe ended early, if it did
        self.exit_step: Optional[int] = None

    def __len__(self):
        return len(self.blocks)

    @property
    def steps(self):
        return [self.step(k) for k in range(len(self))]

    def step(self, k) -> DecomposedSet:
        return DecomposedSet(self.structure, self.blocks[k])

    def time_interval(self, k):
        d = self.dsys.delta
        return self.t0 + k * d, self.t0 + (k + 1) * d

    def is_complete(self, k):
        return all(B is not NOT_COMPUTED for B in self.blocks[k])

    def missing(self, k, blocks=None):
        blocks = range(self.structure.b) if blocks is None else blocks
        return [j for j in blocks if self.blocks[k][j] is NOT_COMPUTED]


def _evaluate_rows(fp: Flowpipe, rows, last):
    """Template blocks for ``rows`` at steps ``1..last`` (generator)."""
    S, dsys = fp.structure, fp.dsys
    rows = sorted(rows)
    sub = BlockStructure([S.sizes[j] for j in rows])
    template = fp.template or "box"
    L = lifted_template(sub, template)
    acc = np.zeros(L.shape[0])
    for j, strip in enumerate(block_row_powers(dsys.Phi, S, last, rows)):
        D = L @ strip
        if j > 0:
            values = fp.X0hat.support_many(D) + acc
            yield j, dict(zip(rows, _from_support_values(sub, values, template)))
        if j < last:
            acc = acc + dsys.input_support(D)


def _evaluate_rows_parallel(fp, rows, last, workers):
    rows = sorted(rows)
    if workers <= 1 or len(rows) < 2:
        yield from _evaluate_rows(fp, rows, last)
        return
    chunks = [list(c) for c in np.array_split(rows, min(workers, len(rows))) if len(c)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda c: list(_evaluate_rows(fp, c, last)), chunks))
    for parts in zip(*results):
        merged = {}
        for _, d in parts:
            merged.update(d)
        yield parts[0][0], merged


def flowpipe_sparse(dsys: DiscretizedSystem, S: BlockStructure, N: int, needed,
                    template="box", t0=0.0,
                    stop: Optional[Callable[[DecomposedSet, Flowpipe], bool]] = None) -> Flowpipe:
    """Flowpipe with steps ``0..N`` where steps ``k >= 1`` only carry ``needed``.

    ``stop(step, flowpipe)`` is called on every new step (with its computed
    blocks); if it returns True the step is discarded and the flowpipe ends.
    """
    if N < 0:
        raise ValueError("negative step count")
    X0hat = decompose(dsys.Omega0, S, template or "box")
    fp = Flowpipe(dsys, S, template, X0hat, t0)
    fp.blocks.append(list(X0hat.blocks))
    fp.stats.blocks_computed += S.b
    needed = sorted(set(needed))
    empty_row = [NOT_COMPUTED] * S.b
    if not needed:
        fp.blocks.extend([list(empty_row) for _ in range(N)])
        fp.stats.blocks_skipped += N * S.b
        return fp
    for k, fresh in _evaluate_rows(fp, needed, N):
        row = list(empty_row)
        for j, B in fresh.items():
            row[j] = B
        if stop is not None and stop(DecomposedSet(S, row), fp):
            fp.exit_step = k
            break
        fp.blocks.append(row)
        fp.stats.blocks_computed += len(needed)
        fp.stats.blocks_skipped += S.b - len(needed)
    return fp


def flowpipe_dense(dsys: DiscretizedSystem, S: BlockStructure, N: int, template="box",
                   t0=0.0, stop=None) -> Flowpipe:
    return flowpipe_sparse(dsys, S, N, range(S.b), template, t0, stop)


def complete_steps(fp: Flowpipe, steps, blocks=None, parallel=1):
    """Fill the missing ``blocks`` (default: all) of the given steps in place.

    Powers of ``Phi`` are recomputed from scratch for the missing block rows
    only. Returns the number of blocks filled.
    """
    steps = sorted(set(int(k) for k in steps))
    if not steps:
        return 0
    want = {k: fp.missing(k, blocks) for k in steps}
    rows = sorted(set().union(*map(set, want.values())))
    if not rows:
        return 0
    last = max(k for k in steps if want[k])
    filled = 0
    for k, fresh in _evaluate_rows_parallel(fp, rows, last, parallel):
        if k in want:
            for j in want[k]:
                fp.blocks[k][j] = fresh[j]
                filled += 1
    fp.stats.blocks_computed += filled
    fp.stats.blocks_skipped -= filled
    return filled


def complete_blocks(fp: Flowpipe, k: int, blocks=None) -> DecomposedSet:
    """Complete step ``k`` on ``blocks`` (default: all) and return it."""
    if not 0 <= k < len(fp):
        raise IndexError(f"step {k} outside the flowpipe")
    complete_steps(fp, [k], blocks)
    return fp.step(k)


@dataclass
class TrajectorySample:
    times: np.ndarray
    states: np.ndarray


def _rk4(A, Bu, x, h):
    f = lambda y: A @ y + Bu
    k1 = f(x)
    k2 = f(x + h / 2 * k1)
    k3 = f(x + h / 2 * k2)
    k4 = f(x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_trajectory(sys: LTISystem, x0, u_pieces, T, dt) -> TrajectorySample:
    """Fixed-step RK4 solution under a piecewise-constant input.

    :param u_pieces: list of ``(t_start, u)`` sorted by ``t_start``; each input
        holds until the next start time. May be empty for autonomous systems.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(x0, dtype=float)
    pieces = list(u_pieces) or [(0.0, np.zeros(sys.B.shape[1]))]
    times, states = [0.0], [x.copy()]
    t = 0.0
    for idx, (start, u) in enumerate(pieces):
        end = pieces[idx + 1][0] if idx + 1 < len(pieces) else T
        end = min(end, T)
        Bu = sys.B @ np.asarray(u, dtype=float) if sys.B.size else np.zeros(sys.n)
        while t < end - 1e-12:
            h = min(dt, end - t)
            x = _rk4(sys.A, Bu, x, h)
            t += h
            times.append(t)
            states.append(x.copy())
    return TrajectorySample(np.array(times), np.array(states))
