"""Model files and the filtered-oscillator generator.

Models are YAML documents with the top-level keys ``dimension``,
``variables``, ``locations``, ``transitions``, ``init``, ``safety`` and
``defaults``; see ``docs/model-format.md`` for the grammar. Unknown keys
are rejected and every error names the offending line and field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .errors import DimensionError, ParseError
from .geometry.sets import HPolyhedron, Hyperrectangle, box
from .hybrid import HybridAutomaton, Location, Transition
from .lti import LTISystem

DENSE_LIMIT = 8


@dataclass
class AnalysisDefaults:
    """Everything in a model file besides the automaton itself."""
    init: list = field(default_factory=list)  # [(location, ConvexSet)]
    safety: Optional[HPolyhedron] = None
    delta: Optional[float] = None
    horizon: Optional[float] = None
    jumps: Optional[int] = None


# --- parsing ----------------------------------------------------------------

def _line(node):
    return node.start_mark.line + 1


def _fail(node, path, msg, cls=ParseError):
    raise cls(msg, line=_line(node) if node is not None else None, field=path)


def _mapping(node, path, allowed, required=()):
    if not isinstance(node, yaml.MappingNode):
        _fail(node, path, "expected a mapping")
    out = {}
    for k, v in node.value:
        key = k.value
        if key not in allowed:
            _fail(k, f"{path}.{key}" if path else key, f"unknown field {key!r}")
        if key in out:
            _fail(k, f"{path}.{key}" if path else key, f"duplicate field {key!r}")
        out[key] = v
    for key in required:
        if key not in out:
            _fail(node, f"{path}.{key}" if path else key, f"missing field {key!r}")
    return out


def _seq(node, path):
    if not isinstance(node, yaml.SequenceNode):
        _fail(node, path, "expected a list")
    return node.value


def _scalar(node, path):
    if not isinstance(node, yaml.ScalarNode):
        _fail(node, path, "expected a scalar")
    return node.value


def _float(node, path):
    text = _scalar(node, path)
    try:
        val = float(text)
    except ValueError:
        _fail(node, path, f"not a number: {text!r}")
    if not np.isfinite(val):
        _fail(node, path, "number must be finite")
    return val


def _int(node, path):
    text = _scalar(node, path)
    try:
        return int(text)
    except ValueError:
        _fail(node, path, f"not an integer: {text!r}")


def _string(node, path):
    return str(_scalar(node, path))


def _vector(node, path, n):
    items = _seq(node, path)
    if len(items) != n:
        _fail(node, path, f"expected {n} entries, got {len(items)}", DimensionError)
    return np.array([_float(x, f"{path}[{i}]") for i, x in enumerate(items)])


def _matrix(node, path, rows, cols):
    """Dense list of rows or ``{entries: [[i, j, value], ...]}`` (0-based)."""
    if isinstance(node, yaml.MappingNode):
        fields = _mapping(node, path, {"entries"}, ("entries",))
        M = np.zeros((rows, cols))
        for k, e in enumerate(_seq(fields["entries"], f"{path}.entries")):
            p = f"{path}.entries[{k}]"
            triple = _seq(e, p)
            if len(triple) != 3:
                _fail(e, p, "entry must be [row, column, value]")
            i, j = _int(triple[0], p), _int(triple[1], p)
            if not (0 <= i < rows and 0 <= j < cols):
                _fail(e, p, f"index ({i}, {j}) outside a {rows}x{cols} matrix", DimensionError)
            M[i, j] = _float(triple[2], p)
        return M
    items = _seq(node, path)
    if len(items) != rows:
        _fail(node, path, f"expected {rows} rows, got {len(items)}", DimensionError)
    return np.array([_vector(r, f"{path}[{i}]", cols) for i, r in enumerate(items)]).reshape(rows, cols)


def _constraints(node, path, names):
    """List of ``{a: {var: coeff, ...}, b: rhs}`` meaning ``a.x <= b``."""
    index = {v: i for i, v in enumerate(names)}
    n = len(names)
    A, b = [], []
    for k, c in enumerate(_seq(node, path)):
        p = f"{path}[{k}]"
        fields = _mapping(c, p, {"a", "b"}, ("a", "b"))
        row = np.zeros(n)
        a = fields["a"]
        if isinstance(a, yaml.SequenceNode):
            row = _vector(a, f"{p}.a", n)
        else:
            for kn, vn in _mapping(a, f"{p}.a", set(names)).items():
                row[index[kn]] = _float(vn, f"{p}.a.{kn}")
        A.append(row)
        b.append(_float(fields["b"], f"{p}.b"))
    return HPolyhedron(np.array(A).reshape(-1, n), np.array(b), dim=n)


def _box(node, path, n):
    fields = _mapping(node, path, {"low", "high"}, ("low", "high"))
    lo = _vector(fields["low"], f"{path}.low", n)
    hi = _vector(fields["high"], f"{path}.high", n)
    if np.any(lo > hi):
        _fail(node, path, "low exceeds high")
    return Hyperrectangle.from_bounds(lo, hi)


def parse_model(text):
    """Parse a model document into ``(HybridAutomaton, AnalysisDefaults)``."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"malformed document: {getattr(exc, 'problem', exc)}",
                         line=mark.line + 1 if mark else None) from None
    if root is None:
        raise ParseError("empty document")
    top = _mapping(root, "", {"dimension", "variables", "locations", "transitions",
                              "init", "safety", "defaults"}, ("dimension", "locations"))
    n = _int(top["dimension"], "dimension")
    if n <= 0:
        _fail(top["dimension"], "dimension", "dimension must be positive", DimensionError)
    if "variables" in top:
        names = [_string(v, f"variables[{i}]") for i, v in enumerate(_seq(top["variables"], "variables"))]
        if len(names) != n:
            _fail(top["variables"], "variables", f"expected {n} names, got {len(names)}", DimensionError)
        if len(set(names)) != n:
            _fail(top["variables"], "variables", "variable names must be distinct")
    else:
        names = [f"x{i}" for i in range(n)]

    locations = []
    for k, ln in enumerate(_seq(top["locations"], "locations")):
        p = f"locations[{k}]"
        f = _mapping(ln, p, {"name", "flow", "invariant"}, ("name", "flow"))
        fl = _mapping(f["flow"], f"{p}.flow", {"A", "B", "U"}, ("A",))
        A = _matrix(fl["A"], f"{p}.flow.A", n, n)
        B = U = None
        if ("B" in fl) != ("U" in fl):
            _fail(f["flow"], f"{p}.flow", "B and U must be given together")
        if "U" in fl:
            Ufields = _mapping(fl["U"], f"{p}.flow.U", {"low", "high"}, ("low", "high"))
            m = len(_seq(Ufields["low"], f"{p}.flow.U.low"))
            U = _box(fl["U"], f"{p}.flow.U", m)
            B = _matrix(fl["B"], f"{p}.flow.B", n, m)
        inv = (_constraints(f["invariant"], f"{p}.invariant", names)
               if "invariant" in f else HPolyhedron.universe(n))
        locations.append(Location(_string(f["name"], f"{p}.name"), LTISystem(A, B, U), inv))
    loc_names = {loc.name for loc in locations}
    if len(loc_names) != len(locations):
        _fail(top["locations"], "locations", "location names must be distinct")

    transitions = []
    if "transitions" in top:
        for k, tn in enumerate(_seq(top["transitions"], "transitions")):
            p = f"transitions[{k}]"
            f = _mapping(tn, p, {"source", "target", "guard", "assignment", "label"},
                         ("source", "target"))
            src, tgt = _string(f["source"], f"{p}.source"), _string(f["target"], f"{p}.target")
            for key, name in (("source", src), ("target", tgt)):
                if name not in loc_names:
                    _fail(f[key], f"{p}.{key}", f"unknown location {name!r}")
            guard = (_constraints(f["guard"], f"{p}.guard", names)
                     if "guard" in f else HPolyhedron.universe(n))
            M, v = np.eye(n), np.zeros(n)
            if "assignment" in f:
                af = _mapping(f["assignment"], f"{p}.assignment", {"M", "v"})
                if "M" in af:
                    if isinstance(af["M"], yaml.ScalarNode):
                        if af["M"].value != "identity":
                            _fail(af["M"], f"{p}.assignment.M", "expected a matrix or 'identity'")
                    else:
                        M = _matrix(af["M"], f"{p}.assignment.M", n, n)
                if "v" in af:
                    if isinstance(af["v"], yaml.MappingNode):
                        for kn, vn in _mapping(af["v"], f"{p}.assignment.v", set(names)).items():
                            v[names.index(kn)] = _float(vn, f"{p}.assignment.v.{kn}")
                    else:
                        v = _vector(af["v"], f"{p}.assignment.v", n)
            label = _string(f["label"], f"{p}.label") if "label" in f else ""
            transitions.append(Transition(src, tgt, guard, M, v, label))

    defaults = AnalysisDefaults()
    if "init" in top:
        for k, inn in enumerate(_seq(top["init"], "init")):
            p = f"init[{k}]"
            f = _mapping(inn, p, {"location", "box", "polytope"}, ("location",))
            loc = _string(f["location"], f"{p}.location")
            if loc not in loc_names:
                _fail(f["location"], f"{p}.location", f"unknown location {loc!r}")
            if ("box" in f) == ("polytope" in f):
                _fail(inn, p, "give exactly one of 'box' and 'polytope'")
            X = (_box(f["box"], f"{p}.box", n) if "box" in f
                 else _constraints(f["polytope"], f"{p}.polytope", names))
            defaults.init.append((loc, X))
    if "safety" in top:
        defaults.safety = _constraints(top["safety"], "safety", names)
    if "defaults" in top:
        f = _mapping(top["defaults"], "defaults", {"delta", "horizon", "jumps"})
        if "delta" in f:
            defaults.delta = _float(f["delta"], "defaults.delta")
        if "horizon" in f:
            defaults.horizon = _float(f["horizon"], "defaults.horizon")
        if "jumps" in f:
            defaults.jumps = _int(f["jumps"], "defaults.jumps")
    H = HybridAutomaton(n, locations, transitions, names)
    return H, defaults


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


# --- writing ----------------------------------------------------------------

class _Flow(list):
    """List emitted in flow style (``[a, b, c]``)."""


def _flow_representer(dumper, data):
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=True)


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(_Flow, _flow_representer)


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() and abs(x) < 1e15 else x


def _emit_matrix(M):
    M = np.asarray(M, dtype=float)
    if max(M.shape) <= DENSE_LIMIT:
        return [_Flow(_num(x) for x in row) for row in M]
    rows, cols = np.nonzero(M)
    return {"entries": [_Flow([int(i), int(j), _num(M[i, j])]) for i, j in zip(rows, cols)]}


def _emit_constraints(P, names):
    out = []
    for a, b in zip(P.A, P.b):
        coeffs = {names[i]: _num(a[i]) for i in np.flatnonzero(a)}
        out.append({"a": coeffs, "b": _num(b)})
    return out


def write_model(H: HybridAutomaton, defaults: Optional[AnalysisDefaults] = None) -> str:
    """Canonical YAML text; ``parse_model`` followed by ``write_model`` is byte-stable."""
    names = H.variables
    doc = {"dimension": H.n, "variables": _Flow(names), "locations": []}
    for loc in H.locations:
        flow = {"A": _emit_matrix(loc.flow.A)}
        if loc.flow.U is not None:
            flow["B"] = _emit_matrix(loc.flow.B)
            U = loc.flow.U
            flow["U"] = {"low": _Flow(_num(x) for x in U.low), "high": _Flow(_num(x) for x in U.high)}
        entry = {"name": loc.name, "flow": flow}
        if loc.invariant.n_constraints:
            entry["invariant"] = _emit_constraints(loc.invariant, names)
        doc["locations"].append(entry)
    if H.transitions:
        doc["transitions"] = []
        for t in H.transitions:
            entry = {"source": t.source, "target": t.target}
            if t.label:
                entry["label"] = t.label
            if t.guard.n_constraints:
                entry["guard"] = _emit_constraints(t.guard, names)
            M, v = np.asarray(t.M, dtype=float), np.asarray(t.v, dtype=float)
            asg = {}
            if not np.array_equal(M, np.eye(H.n)):
                asg["M"] = _emit_matrix(M)
            if np.any(v):
                asg["v"] = {names[i]: _num(v[i]) for i in np.flatnonzero(v)}
            if asg:
                entry["assignment"] = asg
            doc["transitions"].append(entry)
    if defaults is not None:
        if defaults.init:
            doc["init"] = []
            for loc, X in defaults.init:
                if isinstance(X, Hyperrectangle):
                    doc["init"].append({"location": loc, "box": {
                        "low": _Flow(_num(x) for x in X.low), "high": _Flow(_num(x) for x in X.high)}})
                else:
                    doc["init"].append({"location": loc, "polytope": _emit_constraints(X, names)})
        if defaults.safety is not None:
            doc["safety"] = _emit_constraints(defaults.safety, names)
        d = {k: _num(getattr(defaults, k)) for k in ("delta", "horizon", "jumps")
             if getattr(defaults, k) is not None}
        if d:
            doc["defaults"] = d
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=False, width=10 ** 6)


# --- filtered oscillator ----------------------------------------------------

SWITCH_SLOPE = 0.714286


def generate_filtered_oscillator(k: int, gain=5.0, slope=SWITCH_SLOPE, jump_limit=5,
                                 delta=0.01, horizon=5.0):
    """Switched 2-D oscillator smoothed by a chain of ``k`` first-order filters.

    Variables are ``x, y, z1..zk, count``; ``count`` is raised by every jump
    and guards require ``count <= jump_limit - 1``. Only ``x``, ``y`` and
    ``count`` appear in invariants, guards and the safety property ``y <= 0.5``.
    The oscillator constants are the ones commonly distributed with this
    benchmark; they are defaults, not part of the method.
    """
    if k < 1:
        raise ValueError("need at least one filter")
    n = k + 3
    names = ["x", "y"] + [f"z{i}" for i in range(1, k + 1)] + ["count"]
    cnt = n - 1

    def dynamics(sign):
        A = np.zeros((n, n))
        A[0, 0], A[1, 1] = -2.0, -1.0
        A[2, 0], A[2, 2] = gain, -gain
        for i in range(3, k + 2):
            A[i, i - 1], A[i, i] = gain, -gain
        B = np.zeros((n, 1))
        B[0, 0], B[1, 0] = sign * 1.4, -sign * 0.7
        return LTISystem(A, B, box(1.0, 1.0))

    def halfspaces(*rows):
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for r, (coeffs, rhs) in enumerate(rows):
            for i, c in coeffs.items():
                A[r, i] = c
            b[r] = rhs
        return HPolyhedron(A, b, dim=n)

    diag = {0: slope, 1: 1.0}
    neg_diag = {0: -slope, 1: -1.0}
    x_le, x_ge = ({0: 1.0}, 0.0), ({0: -1.0}, 0.0)
    d_le, d_ge = (diag, 0.0), (neg_diag, 0.0)
    left, right = dynamics(1.0), dynamics(-1.0)
    locations = [
        Location("loc1", left, halfspaces(x_le, d_ge)),
        Location("loc2", right, halfspaces(x_le, d_le)),
        Location("loc3", left, halfspaces(x_ge, d_ge)),
        Location("loc4", right, halfspaces(x_ge, d_le)),
    ]
    count_ok = ({cnt: 1.0}, float(jump_limit - 1))
    M, v = np.eye(n), np.zeros(n)
    v[cnt] = 1.0
    transitions = [
        Transition("loc3", "loc4", halfspaces(d_le, d_ge, count_ok), M, v),
        Transition("loc4", "loc2", halfspaces(x_le, x_ge, count_ok), M, v),
        Transition("loc2", "loc1", halfspaces(d_le, d_ge, count_ok), M, v),
        Transition("loc1", "loc3", halfspaces(x_le, x_ge, count_ok), M, v),
    ]
    H = HybridAutomaton(n, locations, transitions, names)
    lo, hi = np.zeros(n), np.zeros(n)
    lo[:2], hi[:2] = (0.2, -0.1), (0.3, 0.1)
    defaults = AnalysisDefaults(
        init=[("loc3", Hyperrectangle.from_bounds(lo, hi))],
        safety=halfspaces(({1: 1.0}, 0.5)),
        delta=delta, horizon=horizon, jumps=jump_limit)
    return H, defaults


@dataclass(frozen=True)
class BenchmarkStub:
    """Size of a benchmark; its matrices must be supplied in a model file."""
    name: str
    dimension: int
    constrained: int
    delta: float


BENCHMARKS = {s.name: s for s in [
    BenchmarkStub("linear_switching", 5, 1, 0.0001),
    BenchmarkStub("spacecraft_noabort", 5, 4, 0.04),
    BenchmarkStub("spacecraft_120", 5, 5, 0.04),
    BenchmarkStub("platoon_bounded", 10, 4, 0.01),
    BenchmarkStub("platoon_unbounded", 10, 4, 0.03),
] + [BenchmarkStub(f"filtered_osc{k}", k + 3, 3, 0.01) for k in (64, 128, 256, 512, 1024)]}


def constrained_dimension_count(H: HybridAutomaton, safety: Optional[HPolyhedron] = None):
    """Number of coordinates used by invariants, guards and the safety property."""
    dims = set(H.constrained_dimensions())
    if safety is not None and safety.n_constraints:
        dims |= set(int(i) for i in np.flatnonzero(np.any(safety.A != 0, axis=0)))
    return len(dims)


def generate(spec: str):
    """Generator spec such as ``filtered-osc:16``."""
    name, _, arg = spec.partition(":")
    if name != "filtered-osc":
        raise ParseError(f"unknown generator {name!r}", field="gen")
    try:
        k = int(arg)
    except ValueError:
        raise ParseError(f"filter count must be an integer, got {arg!r}", field="gen") from None
    if k < 1:
        raise ParseError("filter count must be positive", field="gen")
    return generate_filtered_oscillator(k)


__all__ = ["AnalysisDefaults", "BENCHMARKS", "BenchmarkStub",
           "constrained_dimension_count", "generate", "generate_filtered_oscillator",
           "load_model", "parse_model", "write_model"]
