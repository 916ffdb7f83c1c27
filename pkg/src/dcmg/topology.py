"""Directed-graph network description: generator/load nodes coupled only through
line edges, KCL at nodes, and the causal per-step evaluation order.

Edge current is positive when it flows from ``from_node`` to ``to_node``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping

from .components import PARAM_TYPES, ParameterError
from .syntax import (ParseError, SemanticError, Token, format_value, parse_value,
                     split_kv, tokenize)

NODE_KINDS = ("pgm", "pcm", "pmm")
LOAD_KINDS = ("pcm", "pmm")


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str
    params: object = None     # None: defaults for the kind

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.params is None:
            object.__setattr__(self, "params", PARAM_TYPES[self.kind]())
        if not isinstance(self.params, PARAM_TYPES[self.kind]):
            raise TypeError(f"node {self.id}: {self.kind} needs {PARAM_TYPES[self.kind].__name__}")

    @property
    def is_load(self) -> bool:
        return self.kind in LOAD_KINDS


@dataclass(frozen=True)
class EdgeSpec:
    id: str
    from_node: str
    to_node: str
    R_line: float
    L_line: float


@dataclass(frozen=True)
class Topology:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]
    # direct node-to-node couplings; always a convention violation, kept so
    # validate() can report them instead of the parser guessing intent
    joins: tuple[tuple[str, str], ...] = ()
    incidence: Mapping[str, tuple[tuple[str, int], ...]] = field(init=False, compare=False,
                                                                  repr=False)

    def __post_init__(self):
        inc: dict[str, list[tuple[str, int]]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            if e.from_node in inc:
                inc[e.from_node].append((e.id, +1))
            if e.to_node in inc:
                inc[e.to_node].append((e.id, -1))
        object.__setattr__(self, "incidence", {k: tuple(v) for k, v in inc.items()})

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"unknown node {node_id}")

    def edge(self, edge_id: str) -> EdgeSpec:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(f"unknown edge {edge_id}")

    def nodes_of_kind(self, *kinds: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.kind in kinds]

    def with_params(self, node_id: str, **overrides) -> "Topology":
        nodes = tuple(replace(n, params=replace(n.params, **overrides)) if n.id == node_id else n
                      for n in self.nodes)
        return Topology(nodes, self.edges, self.joins)


@dataclass(frozen=True)
class Finding:
    code: str
    subject: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.subject}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def __bool__(self):
        return self.ok

    def __iter__(self):
        return iter(self.findings)

    def __len__(self):
        return len(self.findings)


# -- parsing -----------------------------------------------------------------

def _kv_args(toks: list[Token]) -> dict[str, Token]:
    out: dict[str, Token] = {}
    for tok in toks:
        key, val = split_kv(tok)
        if key in out:
            raise SemanticError(f"repeated key {key!r}", tok.line, tok.col)
        out[key] = val
    return out


def _node_from_tokens(toks: list[Token]) -> NodeSpec:
    if len(toks) < 2:
        raise ParseError("node needs an id", toks[0].line, toks[0].col)
    node_id = toks[1].text
    args = _kv_args(toks[2:])
    if "kind" not in args:
        raise SemanticError(f"node {node_id}: missing kind=", toks[1].line, toks[1].col)
    kind_tok = args.pop("kind")
    kind = kind_tok.text.lower()
    if kind not in NODE_KINDS:
        raise SemanticError(f"node {node_id}: unknown kind {kind_tok.text!r}",
                            kind_tok.line, kind_tok.col)
    ptype = PARAM_TYPES[kind]
    allowed = ptype.keys()
    values = {}
    for key, tok in args.items():
        if key not in allowed:
            raise SemanticError(f"node {node_id}: unknown parameter {key!r} for kind {kind}",
                                tok.line, tok.col)
        values[key] = parse_value(tok)
    try:
        params = ptype(**values)
    except ParameterError as exc:
        raise SemanticError(f"node {node_id}: {exc}", toks[0].line, toks[0].col) from None
    return NodeSpec(node_id, kind, params)


def _edge_from_tokens(toks: list[Token]) -> tuple[EdgeSpec, dict[str, Token]]:
    if len(toks) < 2:
        raise ParseError("edge needs an id", toks[0].line, toks[0].col)
    edge_id = toks[1].text
    args = _kv_args(toks[2:])
    for key, tok in args.items():
        if key not in ("from", "to", "R", "L"):
            raise SemanticError(f"edge {edge_id}: unknown parameter {key!r}", tok.line, tok.col)
    for key in ("from", "to", "R", "L"):
        if key not in args:
            raise SemanticError(f"edge {edge_id}: missing {key}=", toks[1].line, toks[1].col)
    R = parse_value(args["R"])
    L = parse_value(args["L"])
    if not R > 0:
        raise SemanticError(f"edge {edge_id}: non-positive resistance", args["R"].line, args["R"].col)
    if not L > 0:
        raise SemanticError(f"edge {edge_id}: non-positive inductance", args["L"].line, args["L"].col)
    return EdgeSpec(edge_id, args["from"].text, args["to"].text, R, L), args


def parse_statements(statements: list[list[Token]], source: str | None = None) -> Topology:
    """Build a topology from ``node``/``edge``/``join`` statements; others are an error."""
    nodes: list[NodeSpec] = []
    edges: list[EdgeSpec] = []
    joins: list[tuple[str, str]] = []
    seen: dict[str, Token] = {}
    endpoint_toks = []
    try:
        for toks in statements:
            head = toks[0]
            word = head.text
            if word == "node":
                spec = _node_from_tokens(toks)
                item_tok = toks[1]
                nodes.append(spec)
            elif word == "edge":
                spec, args = _edge_from_tokens(toks)
                item_tok = toks[1]
                edges.append(spec)
                endpoint_toks.append((spec, args["from"], args["to"]))
            elif word == "join":
                if len(toks) != 3:
                    raise ParseError("join takes two node ids", head.line, head.col)
                joins.append((toks[1].text, toks[2].text))
                endpoint_toks.append((None, toks[1], toks[2]))
                continue
            else:
                raise ParseError(f"unknown statement {word!r}", head.line, head.col)
            if spec.id in seen:
                raise SemanticError(f"duplicate id {spec.id}", item_tok.line, item_tok.col)
            seen[spec.id] = item_tok
        node_ids = {n.id for n in nodes}
        for spec, a, b in endpoint_toks:
            for tok in (a, b):
                if tok.text not in node_ids:
                    raise SemanticError(f"unknown node {tok.text}", tok.line, tok.col)
            if spec is not None and a.text == b.text:
                raise SemanticError(f"edge {spec.id} connects {a.text} to itself", a.line, a.col)
    except (ParseError, SemanticError) as exc:
        exc.source = exc.source or source
        raise
    return Topology(tuple(nodes), tuple(edges), tuple(joins))


def parse_netlist(text: str, source: str | None = None) -> Topology:
    return parse_statements(tokenize(text), source)


def serialize(topology: Topology) -> str:
    """Netlist text that parses back to an equal topology."""
    lines = []
    for n in topology.nodes:
        defaults = type(n.params)()
        parts = [f"node {n.id} kind={n.kind}"]
        for f in fields(n.params):
            value = getattr(n.params, f.name)
            if value != getattr(defaults, f.name):
                parts.append(f"{f.name}={format_value(value)}")
        lines.append(" ".join(parts))
    for e in topology.edges:
        lines.append(f"edge {e.id} from={e.from_node} to={e.to_node} "
                     f"R={format_value(e.R_line)} L={format_value(e.L_line)}")
    for a, b in topology.joins:
        lines.append(f"join {a} {b}")
    return "\n".join(lines) + "\n"


# -- validation and KCL --------------------------------------------------------

def validate(topology: Topology) -> ValidationReport:
    findings: list[Finding] = []
    ids: dict[str, str] = {}
    for n in topology.nodes:
        if n.id in ids:
            findings.append(Finding("duplicate-id", n.id, "id declared more than once"))
        ids[n.id] = "node"
    for e in topology.edges:
        if e.id in ids:
            findings.append(Finding("duplicate-id", e.id, "id declared more than once"))
        ids.setdefault(e.id, "edge")
    for e in topology.edges:
        for end in (e.from_node, e.to_node):
            kind = ids.get(end)
            if kind is None:
                findings.append(Finding("unknown-node", e.id, f"unknown node {end}"))
            elif kind == "edge":
                findings.append(Finding("edge-edge", e.id, f"edge connected directly to edge {end}"))
        if e.from_node == e.to_node:
            findings.append(Finding("self-loop", e.id, "edge connects a node to itself"))
        if not e.R_line > 0:
            findings.append(Finding("non-positive-resistance", e.id,
                                    f"non-positive resistance R={e.R_line}"))
        if not e.L_line > 0:
            findings.append(Finding("non-positive-inductance", e.id,
                                    f"non-positive inductance L={e.L_line}"))
        if not (math.isfinite(e.R_line) and math.isfinite(e.L_line)):
            findings.append(Finding("non-finite", e.id, "line parameters must be finite"))
    for a, b in topology.joins:
        findings.append(Finding("node-node", f"{a}-{b}",
                                "nodes coupled directly; insert a line edge"))
    for n in topology.nodes:
        if not topology.incidence.get(n.id):
            findings.append(Finding("isolated-node", n.id, "isolated node (no incident edges)"))
    return ValidationReport(tuple(findings))


def net_outflow(topology: Topology, node_id: str, edge_currents: Mapping[str, float]) -> float:
    """Sum of currents leaving ``node_id`` through its edges."""
    if node_id not in topology.incidence:
        raise KeyError(f"unknown node {node_id}")
    total = 0.0
    for edge_id, sign in topology.incidence[node_id]:
        total += sign * edge_currents[edge_id]
    return total


def node_injection_current(topology: Topology, node_id: str,
                           edge_currents: Mapping[str, float]) -> float:
    """KCL current at a node: draw for a generator, delivery for a load."""
    out = net_outflow(topology, node_id, edge_currents)
    return out if topology.node(node_id).kind == "pgm" else -out


# -- causal schedule -----------------------------------------------------------

STATE = "state"
INPUT = "input"
ALGEBRAIC = "algebraic"
DERIVATIVE = "derivative"


@dataclass(frozen=True)
class Signal:
    name: str
    kind: str


@dataclass(frozen=True)
class Task:
    phase: str
    target: str
    consumes: tuple[Signal, ...]
    produces: Signal


@dataclass(frozen=True)
class Schedule:
    tasks: tuple[Task, ...]

    def phases(self) -> list[str]:
        out: list[str] = []
        for t in self.tasks:
            if not out or out[-1] != t.phase:
                out.append(t.phase)
        return out

    def targets(self, phase: str) -> list[str]:
        return [t.target for t in self.tasks if t.phase == phase]


class CausalityError(RuntimeError):
    """An algebraic signal is consumed before (or by) the task producing it."""


def check_causality(schedule: Schedule) -> None:
    produced: set[str] = set()
    for task in schedule.tasks:
        for sig in task.consumes:
            if sig.kind == ALGEBRAIC and sig.name not in produced:
                raise CausalityError(
                    f"{task.phase}/{task.target} consumes algebraic {sig.name} "
                    "before it is produced")
            if sig.kind == DERIVATIVE:
                raise CausalityError(f"{task.target} consumes derivative {sig.name}")
        if task.produces.kind == ALGEBRAIC:
            if task.produces.name in produced:
                raise CausalityError(f"{task.produces.name} produced twice")
            produced.add(task.produces.name)


def evaluation_order(topology: Topology) -> Schedule:
    """Per-step schedule: node voltages (states) -> edge derivatives -> KCL -> node derivatives."""
    tasks: list[Task] = []
    for n in topology.nodes:
        tasks.append(Task("node_outputs", n.id, (Signal(f"x_{n.id}", STATE),),
                          Signal(f"v_{n.id}", STATE)))
    for e in topology.edges:
        tasks.append(Task("edge_derivatives", e.id,
                          (Signal(f"v_{e.from_node}", STATE), Signal(f"v_{e.to_node}", STATE),
                           Signal(f"i_{e.id}", STATE)),
                          Signal(f"di_{e.id}", DERIVATIVE)))
    for n in topology.nodes:
        tasks.append(Task("kcl", n.id,
                          tuple(Signal(f"i_{eid}", STATE) for eid, _ in topology.incidence[n.id]),
                          Signal(f"inj_{n.id}", ALGEBRAIC)))
    for n in topology.nodes:
        consumes = [Signal(f"x_{n.id}", STATE), Signal(f"inj_{n.id}", ALGEBRAIC)]
        if n.kind == "pgm":
            consumes.append(Signal(f"lambda_{n.id}", INPUT))
        else:
            consumes.append(Signal(f"P_{n.id}", INPUT))
        if n.kind == "pcm":
            consumes.append(Signal(f"iref_{n.id}", INPUT))
        tasks.append(Task("node_derivatives", n.id, tuple(consumes),
                          Signal(f"dx_{n.id}", DERIVATIVE)))
    schedule = Schedule(tuple(tasks))
    check_causality(schedule)
    return schedule
