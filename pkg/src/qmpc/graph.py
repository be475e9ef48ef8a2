"""Typed dataflow graphs: precision assignment, cast insertion and execution.

A graph is a list of nodes ``{id, op, inputs, attrs}`` plus output ids.  The
compiler annotates each node with the fixed-point type it consumes, computes
in and produces, then rewrites every edge whose endpoint types disagree with
an explicit ``upcast`` or ``downcast`` node.  The same typed graph runs either
securely (three parties, replicated shares) or on the plaintext fixed-point
oracle.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import nonlinear as nl
from . import oracle
from .fxp import HIGH, LOW, FxpType, RingTensor, decode, encode
from .rss import Party, Runtime, RssShare, matmul_trunc, mul_trunc
from .transport import CommStats
from .typecast import check_downcast, check_upcast, upcast


class GraphError(ValueError):
    """Malformed graph, unknown op, cycle or type inconsistency."""


# op -> (precision category or None for "inherit from first input", arity or None)
OPS = {
    "input": ("linear", 0),
    "const": (None, 0),
    "matmul": ("linear", 2),
    "mul": ("linear", 2),
    "scale": ("linear", 1),
    "add": (None, 2),
    "sub": (None, 2),
    "transpose": (None, 1),
    "reshape": (None, 1),
    "sum": (None, 1),
    "max": (None, 1),
    "gelu_quad": ("linear", 1),
    "gelu_poly": ("nonlinear", 1),
    "exp": ("nonlinear", 1),
    "div": ("nonlinear", 2),
    "softmax": ("linear", 1),
    "layernorm": ("linear", 3),
    "upcast": (None, 1),
    "downcast": (None, 1),
}
# composite ops keep their external edges at the category type and compute internally at ``nonlinear``
COMPOSITE = ("softmax", "layernorm")
CASTS = ("upcast", "downcast")
# downcasts inserted by the compiler add this many target ulps first so the
# expected error is zero
CAST_OFFSET = nl.UNBIASED_OFFSET


@dataclass(frozen=True)
class PrecisionMap:
    """Fixed-point type per layer category.

    ``output`` is the type graph outputs are delivered in; ``None`` leaves
    each output in its producer's type.
    """

    linear: FxpType = LOW
    nonlinear: FxpType = HIGH
    head: FxpType = HIGH
    output: FxpType | None = LOW

    @classmethod
    def uniform(cls, t: FxpType = HIGH) -> "PrecisionMap":
        return cls(t, t, t, t)

    def of(self, category: str) -> FxpType:
        if category not in ("linear", "nonlinear", "head"):
            raise GraphError(f"unknown precision category {category!r}")
        return getattr(self, category)


@dataclass
class NodeSpec:
    id: str
    op: str
    inputs: tuple = ()
    attrs: dict = field(default_factory=dict)
    input_type: FxpType | None = None
    compute_type: FxpType | None = None
    output_type: FxpType | None = None

    def port_type(self, k: int) -> FxpType | None:
        """Type expected on input port ``k`` (layernorm's gain and bias live at compute precision)."""
        if self.op == "layernorm" and k > 0:
            return self.compute_type
        return self.input_type

    def to_dict(self) -> dict:
        d = {"id": self.id, "op": self.op, "inputs": list(self.inputs)}
        if self.attrs:
            d["attrs"] = self.attrs
        return d


@dataclass
class Graph:
    """Nodes plus output ids.  ``names`` are the user-facing output names; they
    survive when the compiler redirects an output through a cast."""

    nodes: list
    outputs: list
    names: list | None = None

    def __post_init__(self):
        self.nodes = [n if isinstance(n, NodeSpec) else NodeSpec(n["id"], n["op"], tuple(n.get("inputs", ())),
                                                               dict(n.get("attrs", {}))) for n in self.nodes]
        self.outputs = list(self.outputs)
        self.names = list(self.names) if self.names is not None else list(self.outputs)
        if len(self.names) != len(self.outputs):
            raise GraphError("one name per output required")

    def node(self, nid: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def by_id(self) -> dict:
        return {n.id: n for n in self.nodes}

    def consumers(self) -> dict:
        out = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for k, src in enumerate(n.inputs):
                if src in out:
                    out[src].append((n, k))
        return out

    def count(self, op: str) -> int:
        return sum(n.op == op for n in self.nodes)

    def copy(self) -> "Graph":
        return Graph([replace(n, inputs=tuple(n.inputs), attrs=dict(n.attrs)) for n in self.nodes],
                     list(self.outputs), list(self.names))

    def to_dict(self) -> dict:
        d = {"nodes": [n.to_dict() for n in self.nodes], "outputs": list(self.outputs)}
        if self.names != self.outputs:
            d["names"] = list(self.names)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj: dict) -> "Graph":
        if not isinstance(obj, dict) or "nodes" not in obj:
            raise GraphError("graph JSON needs a 'nodes' list")
        return cls(obj["nodes"], obj.get("outputs", []), obj.get("names"))

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Graph":
        with open(path) as fh:
            return cls.from_json(fh.read())


def topo_order(g: Graph) -> list:
    """Nodes in a deterministic topological order (stable w.r.t. listing order)."""
    ids = g.by_id()
    if len(ids) != len(g.nodes):
        raise GraphError("duplicate node ids")
    for n in g.nodes:
        for src in n.inputs:
            if src not in ids:
                raise GraphError(f"node {n.id!r} reads unknown node {src!r}")
    order, state = [], {}

    def visit(nid, stack):
        s = state.get(nid)
        if s == 2:
            return
        if s == 1:
            raise GraphError(f"cycle through {' -> '.join(stack + [nid])}")
        state[nid] = 1
        for src in ids[nid].inputs:
            visit(src, stack + [nid])
        state[nid] = 2
        order.append(ids[nid])

    for n in g.nodes:
        visit(n.id, [])
    return order


# ---------------------------------------------------------------------------
# compiler passes
# ---------------------------------------------------------------------------


def infer_types(graph: Graph, pmap: PrecisionMap | None = None) -> Graph:
    """Annotate every node with input, compute and output types.

    Fixed-category ops take their category's type (``attrs["category"]``
    overrides it).  Ops without a category inherit the output type of their
    first non-constant input; constants take the type their first consumer
    expects on that port.
    """
    pmap = pmap or PrecisionMap()
    g = graph.copy()
    for n in g.nodes:
        if n.op not in OPS:
            raise GraphError(f"unsupported op {n.op!r} at node {n.id!r}")
        arity = OPS[n.op][1]
        if arity is not None and len(n.inputs) != arity:
            raise GraphError(f"{n.op} node {n.id!r} takes {arity} inputs, got {len(n.inputs)}")
    order = topo_order(g)
    ids = g.by_id()
    for n in order:
        if n.op == "const":
            continue
        cat = n.attrs.get("category", OPS[n.op][0])
        if n.op in CASTS:
            src = ids[n.inputs[0]].output_type
            n.input_type = src
            n.compute_type = n.output_type = FxpType.parse(n.attrs["target"])
        elif n.op in COMPOSITE:
            n.input_type = n.output_type = pmap.of(cat)
            n.compute_type = pmap.nonlinear
            if n.compute_type != n.input_type:
                try:
                    check_upcast(n.input_type, n.compute_type)
                except ValueError as exc:
                    raise GraphError(f"{n.op} node {n.id!r} cannot compute at {n.compute_type}: {exc}") from exc
        elif cat is not None:
            n.input_type = n.compute_type = n.output_type = pmap.of(cat)
        else:
            typed = [ids[s].output_type for s in n.inputs if ids[s].op != "const"]
            t = typed[0] if typed else pmap.linear
            n.input_type = n.compute_type = n.output_type = t
    users = g.consumers()
    for n in g.nodes:
        if n.op == "const":
            ports = [c.port_type(k) for c, k in users[n.id]]
            t = ports[0] if ports else pmap.linear
            n.input_type = n.compute_type = n.output_type = t
    return g


def _cast_node(src: NodeSpec, target: FxpType) -> NodeSpec:
    have = src.output_type
    if target.bits > have.bits:
        check_upcast(have, target)
        op, attrs = "upcast", {"target": str(target)}
    else:
        check_downcast(have, target)
        op, attrs = "downcast", {"target": str(target), "offset": CAST_OFFSET}
    return NodeSpec(f"{src.id}.{op}{target.bits}", op, (src.id,), attrs, have, target, target)


def insert_casts(typed: Graph, pmap: PrecisionMap | None = None) -> Graph:
    """Insert one cast per (producer, target type) on every mismatched edge.

    Graph outputs are brought to ``pmap.output`` when set.  A second
    application finds nothing to do.
    """
    pmap = pmap or PrecisionMap()
    g = typed.copy()
    if any(n.output_type is None for n in g.nodes):
        raise GraphError("insert_casts needs a typed graph; run infer_types first")
    ids = g.by_id()
    made, new_nodes = {}, []

    def cast_of(src_id: str, want: FxpType) -> str:
        src = ids[src_id]
        if src.output_type == want:
            return src_id
        key = (src_id, want)
        if key not in made:
            try:
                made[key] = _cast_node(src, want)
            except ValueError as exc:
                raise GraphError(f"no cast from {src.output_type} to {want} after {src_id!r}: {exc}") from exc
            new_nodes.append(made[key])
        return made[key].id

    for n in topo_order(g):
        n.inputs = tuple(cast_of(s, n.port_type(k)) for k, s in enumerate(n.inputs))
        new_nodes.append(n)
    if pmap.output is not None:
        g.outputs = [cast_of(o, pmap.output) for o in g.outputs]
    g.nodes = new_nodes
    return g


def compile_graph(graph: Graph, pmap: PrecisionMap | None = None) -> Graph:
    typed = insert_casts(infer_types(graph, pmap), pmap)
    validate(typed)
    return typed


def validate(typed: Graph):
    """Raise :class:`GraphError` unless every edge carries the type its consumer expects."""
    ids = {n.id: n for n in topo_order(typed)}
    for o in typed.outputs:
        if o not in ids:
            raise GraphError(f"output {o!r} is not a node")
    for n in typed.nodes:
        if n.output_type is None:
            raise GraphError(f"node {n.id!r} is untyped")
        for k, s in enumerate(n.inputs):
            have, want = ids[s].output_type, n.port_type(k)
            if have != want:
                raise GraphError(f"edge {s} -> {n.id}[{k}] carries {have} but {n.op} expects {want}")


# ---------------------------------------------------------------------------
# text listing
# ---------------------------------------------------------------------------

_LINE = re.compile(r"^%(?P<id>\S+) = (?P<op>\w+)\((?P<args>[^)]*)\)(?: (?P<attrs>\{.*\}))?"
                   r"(?: : (?P<types>.+))?$")


def dump(typed: Graph) -> str:
    """Topological listing, one node per line, with ``input -> compute -> output`` types."""
    lines = []
    for n in topo_order(typed):
        args = ", ".join("%" + s for s in n.inputs)
        line = f"%{n.id} = {n.op}({args})"
        if n.attrs:
            line += " " + json.dumps(n.attrs, sort_keys=True)
        if n.output_type is not None:
            line += f" : {n.input_type} -> {n.compute_type} -> {n.output_type}"
        lines.append(line)
    lines.append("return " + ", ".join(f"{name}=%{o}" for name, o in zip(typed.names, typed.outputs)))
    return "\n".join(lines) + "\n"


def parse_dump(text: str) -> Graph:
    """Inverse of :func:`dump`; type annotations are restored when present."""
    nodes, outputs, names = [], [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("return"):
            for item in line[len("return"):].split(","):
                if item.strip():
                    name, _, ref = item.strip().partition("=%")
                    names.append(name)
                    outputs.append(ref)
            continue
        m = _LINE.match(line)
        if not m:
            raise GraphError(f"cannot parse line: {raw!r}")
        args = tuple(a.strip().lstrip("%") for a in m["args"].split(",") if a.strip())
        n = NodeSpec(m["id"], m["op"], args, json.loads(m["attrs"]) if m["attrs"] else {})
        if m["types"]:
            n.input_type, n.compute_type, n.output_type = (FxpType.parse(t) for t in m["types"].split("->"))
        nodes.append(n)
    return Graph(nodes, outputs, names)


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------


@dataclass
class Result:
    outputs: dict
    raw: dict
    stats: CommStats | None = None


def _const_value(n: NodeSpec, params: dict | None) -> np.ndarray:
    if "value" in n.attrs:
        return np.asarray(n.attrs["value"], dtype=np.float64)
    name = n.attrs.get("param", n.id)
    if params is None or name not in params:
        raise GraphError(f"no value bound for constant {n.id!r} (param {name!r})")
    return np.asarray(params[name], dtype=np.float64)


def _shape_attr(n: NodeSpec):
    return tuple(n.attrs["shape"])


def _plain_node(n: NodeSpec, args: list) -> RingTensor:
    t = n.compute_type
    op = n.op
    if op in ("add", "sub"):
        a, b = np.broadcast_arrays(args[0].data, args[1].data)
        a, b = RingTensor(a, t.bits), RingTensor(b, t.bits)
        return a + b if op == "add" else a - b
    if op == "mul":
        a, b = np.broadcast_arrays(args[0].data, args[1].data)
        return oracle.mul_trunc(RingTensor(a, t.bits), RingTensor(b, t.bits), t)
    if op == "matmul":
        return oracle.trunc(args[0] @ args[1], t.frac)
    if op == "scale":
        return oracle.mul_public(args[0], n.attrs["value"], t)
    if op == "transpose":
        return RingTensor(np.transpose(args[0].data, n.attrs.get("axes")), t.bits)
    if op == "reshape":
        return RingTensor(args[0].data.reshape(_shape_attr(n)), t.bits)
    if op == "sum":
        return RingTensor(args[0].data.sum(axis=-1, keepdims=True, dtype=np.uint64), t.bits)
    if op == "max":
        return RingTensor(oracle.max_vec(args[0]).data[..., None], t.bits)
    if op == "div":
        r = oracle.recip(args[1], t)
        num, den = np.broadcast_arrays(args[0].data, r.data)
        return oracle.mul_trunc(RingTensor(num, t.bits), RingTensor(den, t.bits), t)
    if op == "exp":
        return oracle.exp_neg(args[0], t)
    if op == "gelu_quad":
        return oracle.gelu_quad(args[0], t)
    if op == "gelu_poly":
        return oracle.gelu_poly(args[0], t)
    if op == "softmax":
        return oracle.softmax(args[0], n.input_type, n.compute_type)
    if op == "layernorm":
        return oracle.layernorm(args[0], args[1], args[2], n.input_type, n.attrs.get("eps", 1e-5), n.compute_type)
    if op == "upcast":
        return oracle.upcast(args[0], n.input_type, n.output_type)
    if op == "downcast":
        return oracle.downcast(args[0], n.input_type, n.output_type, n.attrs.get("offset", 0.0))
    raise GraphError(f"no plaintext kernel for {op!r}")


def _bcast_pair(a: RssShare, b: RssShare):
    shape = np.broadcast_shapes(a.shape, b.shape)
    return (a if a.shape == shape else a.broadcast_to(shape)), (b if b.shape == shape else b.broadcast_to(shape))


def _secure_node(p: Party, n: NodeSpec, args: list) -> RssShare:
    op = n.op
    t = n.compute_type
    with p.phase(n.id):
        if op in ("add", "sub"):
            a, b = _bcast_pair(*args)
            return a + b if op == "add" else a - b
        if op == "mul":
            return mul_trunc(p, *_bcast_pair(*args))
        if op == "matmul":
            return matmul_trunc(p, args[0], args[1])
        if op == "scale":
            return nl.mul_public(p, args[0], n.attrs["value"])
        if op == "transpose":
            return args[0].transpose(n.attrs.get("axes"))
        if op == "reshape":
            return args[0].reshape(_shape_attr(n))
        if op == "sum":
            return args[0].sum(axis=-1, keepdims=True)
        if op == "max":
            return nl.max_vec(p, args[0])[..., None]
        if op == "div":
            r = nl.recip(p, args[1])
            return mul_trunc(p, *_bcast_pair(args[0], r))
        if op == "exp":
            return nl.exp_neg(p, args[0])
        if op == "gelu_quad":
            return nl.gelu_quad(p, args[0])
        if op == "gelu_poly":
            return nl.gelu_poly(p, args[0])
        if op == "softmax":
            return nl.softmax(p, args[0], compute=t)
        if op == "layernorm":
            return nl.layernorm(p, args[0], args[1], args[2], n.attrs.get("eps", 1e-5), compute=t)
        if op == "upcast":
            return upcast(p, args[0], n.output_type)
        if op == "downcast":
            return nl.downcast_offset(args[0], n.output_type, n.attrs.get("offset", 0.0))
    raise GraphError(f"no secure kernel for {op!r}")


def _leaf_values(typed: Graph, inputs: dict, params: dict | None) -> dict:
    leaves = {}
    for n in typed.nodes:
        if n.op == "input":
            if n.id not in inputs:
                raise GraphError(f"missing value for input {n.id!r}")
            leaves[n.id] = encode(np.asarray(inputs[n.id], dtype=np.float64), n.output_type)
        elif n.op == "const":
            leaves[n.id] = encode(_const_value(n, params), n.output_type)
    return leaves


def _walk(order, leaves: dict, kernel) -> dict:
    env = dict(leaves)
    for n in order:
        if n.id not in env:
            env[n.id] = kernel(n, [env[s] for s in n.inputs])
    return env


def execute(typed: Graph, inputs: dict | None = None, backend: str = "secure", params: dict | None = None,
            runtime: Runtime | None = None, seed: int = 0) -> Result:
    """Run a typed, cast-consistent graph.

    ``inputs`` maps input ids to real arrays and ``params`` binds named constants.
    The secure backend shares every leaf from a dealer, runs the three parties
    and reconstructs the outputs; ``stats`` holds the traffic of this run only.
    """
    validate(typed)
    if not typed.outputs:
        return Result({}, {}, CommStats() if backend == "secure" else None)
    leaves = _leaf_values(typed, inputs or {}, params)
    order = topo_order(typed)
    types = {n.id: n.output_type for n in typed.nodes}
    if backend == "plaintext":
        env = _walk(order, leaves, _plain_node)
        raw = {name: env[o] for name, o in zip(typed.names, typed.outputs)}
        return Result({name: decode(raw[name], types[o]) for name, o in zip(typed.names, typed.outputs)}, raw)
    if backend != "secure":
        raise ValueError(f"unknown backend {backend!r}")
    rt = runtime or Runtime(seed=seed)
    shared = {k: rt.share(v, types[k]) for k, v in leaves.items()}
    before = rt.stats.copy()

    def program(p: Party, local: dict):
        env = _walk(order, local, lambda n, args: _secure_node(p, n, args))
        return {o: env[o] for o in typed.outputs}

    out = rt.run(program, shared)
    stats = rt.stats - before
    raw = {name: rt.reconstruct(out[o]) for name, o in zip(typed.names, typed.outputs)}
    return Result({name: decode(raw[name], types[o]) for name, o in zip(typed.names, typed.outputs)}, raw, stats)


# ---------------------------------------------------------------------------
# reference graphs
# ---------------------------------------------------------------------------


def softmax_dag() -> Graph:
    """The five-op softmax DAG: ``x - max(x)``, ``exp``, ``sum``, divide."""
    return Graph([
        NodeSpec("x", "input"),
        NodeSpec("m", "max", ("x",)),
        NodeSpec("d", "sub", ("x", "m")),
        NodeSpec("e", "exp", ("d",)),
        NodeSpec("s", "sum", ("e",)),
        NodeSpec("y", "div", ("e", "s")),
    ], ["y"])
