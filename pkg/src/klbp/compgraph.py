"""Scalar computation DAGs and their adjoints as log-belief slopes.

A graph is a set of scalar nodes wired by C1 primitives with one designated
scalar output.  Each deterministic assignment can be read as a point-mass
factor; running the output factor phi backwards then makes the adjoint of a
node exactly the slope of its downward log-belief at the forward point.
The API exposes both readings: ``backward_adjoints`` is the reverse sweep,
``downward_log_belief`` evaluates the belief itself on a grid so the slope
(and its invariance to per-edge message rescaling) can be checked
numerically.

Primitives are fixed to a C1 list; relu/abs are rejected on purpose --
approximate with softplus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, ValidationError

# op name -> arity; "constant" carries its value, "pow" a constant exponent
OP_ARITY = {
    "input": 0,
    "constant": 0,
    "add": 2,
    "sub": 2,
    "mul": 2,
    "div": 2,
    "exp": 1,
    "log": 1,
    "sigmoid": 1,
    "tanh": 1,
    "softplus": 1,
    "pow": 1,
}

_NEEDS_VALUE = {"constant", "pow"}


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x: float) -> float:
    if x > 30.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@dataclass(frozen=True, eq=False)
class CompNode:
    id: str
    op: str
    inputs: tuple[str, ...] = ()
    value: float | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError(f"node id must be a nonempty string, got {self.id!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))


class CompGraph:
    """Nodes plus one output id.  Deep validation is report-style
    (``validate_dag``); construction only rejects graphs that cannot be
    inspected at all (duplicate ids, dangling references, missing output).
    """

    def __init__(self, nodes, output: str):
        self.nodes = tuple(nodes)
        self.output = output
        self._by_id = {}
        for n in self.nodes:
            if n.id in self._by_id:
                raise ValidationError(f"duplicate node id {n.id!r}")
            self._by_id[n.id] = n
        for n in self.nodes:
            for ref in n.inputs:
                if ref not in self._by_id:
                    raise ValidationError(
                        f"node {n.id!r} references unknown node {ref!r}"
                    )
        if output not in self._by_id:
            raise ValidationError(f"output node {output!r} does not exist")

    def node(self, node_id: str) -> CompNode:
        return self._by_id[node_id]

    def input_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.op == "input")

    def topo_order(self) -> list[str]:
        indeg = {n.id: len(n.inputs) for n in self.nodes}
        consumers: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for ref in n.inputs:
                consumers[ref].append(n.id)
        ready = sorted(nid for nid, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            changed = False
            for c in consumers[nid]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    changed = True
            if changed:
                ready.sort()
        if len(order) != len(self.nodes):
            raise ValidationError("computation graph contains a cycle")
        return order

    def ancestors_of_output(self) -> set[str]:
        anc = {self.output}
        for nid in reversed(self.topo_order()):
            if nid in anc:
                anc.update(self.node(nid).inputs)
        return anc


def validate_dag(graph: CompGraph) -> dict:
    """Report acyclicity, op-set membership, arity, and domain hazards."""
    issues: list[str] = []
    acyclic = True
    try:
        graph.topo_order()
    except ValidationError:
        acyclic = False
        issues.append("graph contains a cycle")
    hazards = []
    for n in graph.nodes:
        if n.op not in OP_ARITY:
            issues.append(f"node {n.id!r}: op {n.op!r} is not in the C1 primitive set")
            continue
        if len(n.inputs) != OP_ARITY[n.op]:
            issues.append(
                f"node {n.id!r}: op {n.op!r} takes {OP_ARITY[n.op]} inputs, "
                f"got {len(n.inputs)}"
            )
        if n.op in _NEEDS_VALUE and n.value is None:
            issues.append(f"node {n.id!r}: op {n.op!r} needs a value")
        if n.op in ("div", "log", "pow"):
            hazards.append(n.id)
    return {
        "valid": acyclic and not issues,
        "acyclic": acyclic,
        "issues": issues,
        "domain_hazards": hazards,
    }


# --------------------------------------------------------------- forward


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    values: dict
    inputs: dict


def _apply_op(node: CompNode, vals: list[float]) -> float:
    op = node.op
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        if vals[1] == 0.0:
            raise ValidationError(f"node {node.id!r}: division by zero")
        return vals[0] / vals[1]
    if op == "exp":
        return math.exp(vals[0])
    if op == "log":
        if vals[0] <= 0.0:
            raise ValidationError(
                f"node {node.id!r}: log of nonpositive value {vals[0]!r}"
            )
        return math.log(vals[0])
    if op == "sigmoid":
        return _sigmoid(vals[0])
    if op == "tanh":
        return math.tanh(vals[0])
    if op == "softplus":
        return _softplus(vals[0])
    if op == "pow":
        c = node.value
        base = vals[0]
        if c != int(c) and base <= 0.0:
            raise ValidationError(
                f"node {node.id!r}: non-integer power of nonpositive base {base!r}"
            )
        if c < 0.0 and base == 0.0:
            raise ValidationError(f"node {node.id!r}: negative power of zero")
        return base**c
    raise ValidationError(f"node {node.id!r}: unsupported op {op!r}")


def forward_eval(
    graph: CompGraph, inputs: dict, *, override: tuple[str, float] | None = None
) -> ForwardTrace:
    """Evaluate every node at the given input point, in topological order.

    ``override`` pins one node to a value and is what 'clamp the rest,
    perturb one variable' means operationally: downstream nodes see the
    pinned value, everything else keeps its defining equation.
    """
    report = validate_dag(graph)
    if not report["valid"]:
        raise ValidationError("; ".join(report["issues"]) or "invalid graph")
    values: dict[str, float] = {}
    for nid in graph.topo_order():
        node = graph.node(nid)
        if override is not None and nid == override[0]:
            values[nid] = float(override[1])
            continue
        if node.op == "input":
            if nid not in inputs:
                raise ValidationError(f"no value supplied for input {nid!r}")
            values[nid] = float(inputs[nid])
        elif node.op == "constant":
            values[nid] = float(node.value)
        else:
            vals = [values[ref] for ref in node.inputs]
            values[nid] = _apply_op(node, vals)
        if not math.isfinite(values[nid]):
            raise ValidationError(f"node {nid!r} evaluated to {values[nid]!r}")
    return ForwardTrace(values, dict(inputs))


# --------------------------------------------------------- output factors


@dataclass(frozen=True, eq=False)
class ExpScale:
    """phi(z) = exp(alpha z)."""

    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if not math.isfinite(self.alpha):
            raise ValidationError("exponential-factor scale must be finite")


@dataclass(frozen=True, eq=False)
class NegLossTemp:
    """phi(z) = exp(-L(z)/T) for a C1 loss and temperature T > 0.

    kind "squared_error": L(z) = (z - param)^2 / 2 with target param.
    kind "logistic": L(z) = softplus(z) - param * z with label param in {0,1}.
    """

    kind: str
    param: float
    temperature: float

    def __post_init__(self):
        if self.kind not in ("squared_error", "logistic"):
            raise ValidationError(f"unknown loss kind {self.kind!r}")
        object.__setattr__(self, "param", float(self.param))
        object.__setattr__(self, "temperature", float(self.temperature))
        if not self.temperature > 0.0:
            raise ValidationError(
                f"temperature must be positive, got {self.temperature!r}"
            )
        if self.kind == "logistic" and self.param not in (0.0, 1.0):
            raise ValidationError(
                f"logistic label must be 0 or 1, got {self.param!r}"
            )


OutputFactor = ExpScale | NegLossTemp


def seed_score(factor: OutputFactor, z_star: float) -> float:
    """phi'(z*)/phi(z*), the log-derivative of the output factor."""
    if isinstance(factor, ExpScale):
        return factor.alpha
    if isinstance(factor, NegLossTemp):
        if factor.kind == "squared_error":
            lprime = z_star - factor.param
        else:
            lprime = _sigmoid(z_star) - factor.param
        return -lprime / factor.temperature
    raise ValidationError(f"unknown output factor {factor!r}")


def phi_log(factor: OutputFactor, z: float) -> float:
    """log phi(z)."""
    if isinstance(factor, ExpScale):
        return factor.alpha * z
    if isinstance(factor, NegLossTemp):
        if factor.kind == "squared_error":
            loss = 0.5 * (z - factor.param) ** 2
        else:
            loss = _softplus(z) - factor.param * z
        return -loss / factor.temperature
    raise ValidationError(f"unknown output factor {factor!r}")


# -------------------------------------------------------------- backward


def _partial(node: CompNode, vals: list[float], out: float, which: int) -> float:
    op = node.op
    if op == "add":
        return 1.0
    if op == "sub":
        return 1.0 if which == 0 else -1.0
    if op == "mul":
        return vals[1 - which]
    if op == "div":
        if which == 0:
            return 1.0 / vals[1]
        return -vals[0] / (vals[1] * vals[1])
    if op == "exp":
        return out
    if op == "log":
        return 1.0 / vals[0]
    if op == "sigmoid":
        return out * (1.0 - out)
    if op == "tanh":
        return 1.0 - out * out
    if op == "softplus":
        return _sigmoid(vals[0])
    if op == "pow":
        return node.value * vals[0] ** (node.value - 1.0)
    raise ValidationError(f"no derivative rule for op {op!r}")


def backward_adjoints(
    graph: CompGraph, trace: ForwardTrace, factor: OutputFactor
) -> dict:
    """Adjoints s(v) for every node, by one reverse topological sweep.

    The output is seeded with the log-derivative of phi at z*; each node
    then accumulates s(child) times the child's partial with respect to it.
    """
    order = graph.topo_order()
    for nid in order:
        if nid not in trace.values:
            raise ValidationError(f"trace has no value for node {nid!r}")
    adjoint = {nid: 0.0 for nid in order}
    adjoint[graph.output] = seed_score(factor, trace.values[graph.output])
    for nid in reversed(order):
        node = graph.node(nid)
        if node.op in ("input", "constant"):
            continue
        vals = [trace.values[ref] for ref in node.inputs]
        for which, ref in enumerate(node.inputs):
            adjoint[ref] += adjoint[nid] * _partial(
                node, vals, trace.values[nid], which
            )
    return adjoint


# -------------------------------------------- message-level examinations


_UNARY_PRIMITIVES = {
    "identity": (lambda x: x, lambda x: 1.0),
    "exp": (math.exp, math.exp),
    "log": (math.log, lambda x: 1.0 / x),
    "sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
    "tanh": (math.tanh, lambda x: 1.0 - math.tanh(x) ** 2),
    "softplus": (_softplus, _sigmoid),
}


def delta_chain_check(psi: str, s_y: float, x_star: float) -> tuple[float, float]:
    """Both sides of the point-mass chain rule for one unary primitive.

    The downstream message is represented by the canonical positive witness
    m(y) = exp(s_y * y), so log m(psi(x)) = s_y * psi(x).  Left side:
    central finite difference of that composition at x*.  Right side:
    s_y * psi'(x*).
    """
    if psi not in _UNARY_PRIMITIVES:
        raise ValidationError(f"unknown primitive {psi!r}")
    fn, deriv = _UNARY_PRIMITIVES[psi]
    h = 1e-5 * max(1.0, abs(x_star))
    left = (s_y * fn(x_star + h) - s_y * fn(x_star - h)) / (2.0 * h)
    right = s_y * deriv(x_star)
    return left, right


def downward_log_belief(
    graph: CompGraph,
    trace: ForwardTrace,
    factor: OutputFactor,
    var: str,
    grid,
    edge_scales: dict | None = None,
) -> np.ndarray:
    """log of the downward belief of ``var`` on a grid of values.

    Messages compose along the collapsed point-mass factors, so the belief
    at value v is phi evaluated at the output of the graph re-run with
    ``var`` pinned to v and all inputs clamped to their trace values.  Each
    entry of ``edge_scales`` multiplies one downstream message by a
    positive constant, i.e. adds a constant to the log-belief; slopes are
    untouched, which is the gauge-invariance statement in checkable form.
    """
    if var not in trace.values:
        raise ValidationError(f"unknown node {var!r}")
    offset = 0.0
    if edge_scales:
        for edge, scale in edge_scales.items():
            if not (math.isfinite(scale) and scale > 0.0):
                raise ValidationError(
                    f"edge scale for {edge!r} must be a positive real, got {scale!r}"
                )
            offset += math.log(scale)
    out = np.empty(len(grid))
    for i, v in enumerate(grid):
        sub = forward_eval(graph, trace.inputs, override=(var, float(v)))
        out[i] = phi_log(factor, sub.values[graph.output]) + offset
    return out


def slope_from_grid(grid, values) -> float:
    """Central-difference slope at the middle point of an odd uniform grid."""
    g = np.asarray(grid, dtype=float)
    vals = np.asarray(values, dtype=float)
    if g.size != vals.size or g.size < 3 or g.size % 2 == 0:
        raise ValidationError("slope needs an odd grid of at least 3 points")
    mid = g.size // 2
    return float((vals[mid + 1] - vals[mid - 1]) / (g[mid + 1] - g[mid - 1]))


def centered_grid(center: float, half_width: float, points: int = 5) -> np.ndarray:
    if points < 3 or points % 2 == 0:
        raise ValidationError("grid needs an odd number of points, at least 3")
    return center + np.linspace(-half_width, half_width, points)


# ----------------------------------------------------------------- JSON


def graph_to_json(graph: CompGraph) -> dict:
    nodes = []
    for n in graph.nodes:
        entry = {"id": n.id, "op": n.op, "inputs": list(n.inputs)}
        if n.value is not None:
            entry["value"] = float(n.value)
        nodes.append(entry)
    return {"schema": "v1", "nodes": nodes, "output": graph.output}


def graph_from_json(obj) -> CompGraph:
    if not isinstance(obj, dict) or "nodes" not in obj or "output" not in obj:
        raise SchemaError("graph JSON must be an object with 'nodes' and 'output'")
    if not isinstance(obj["nodes"], list):
        raise SchemaError("'nodes' must be a list")
    nodes = []
    for entry in obj["nodes"]:
        try:
            nodes.append(
                CompNode(
                    entry["id"],
                    entry["op"],
                    tuple(entry.get("inputs", ())),
                    entry.get("value"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad node entry {entry!r}: {exc}") from exc
        except ValidationError as exc:
            raise SchemaError(f"bad node entry {entry!r}: {exc}") from exc
    try:
        return CompGraph(nodes, obj["output"])
    except ValidationError as exc:
        raise SchemaError(str(exc)) from exc
