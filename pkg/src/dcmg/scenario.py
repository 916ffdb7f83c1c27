"""Scenario files: network, load profiles, controller and solver settings.

A scenario uses the netlist grammar plus these stanzas::

    netlist <path>                          # or inline node/edge lines
    override <node> key=value ...           # component parameter overrides
    profile <load> <t>:<step|ramp|hold>[:<level>] ...
    weights <pgm>=<w> ...
    droop r_base= v_ref= v_bus_ref= main_bus= kp= ki= dv_max= measure=<idc|ig>
    rectifier kp= ki=
    ess omega= mode=<highpass|lowpass>
    zone <pcm> loads=<load>,<load>,...
    solver dt= method= t_end= decimation= control_period= init= state_limit=
    name <text>

Anything not given falls back to the built-in defaults.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .components import PARAM_TYPES, V_NOMINAL, ParameterError
from .control import ESS_MODES
from .profiles import KINDS, LoadProfile, Segment
from .solver import METHODS, SolverConfig
from .syntax import (ParseError, SemanticError, Token, format_value, parse_value, split_kv,
                     tokenize)
from .topology import Topology, parse_statements, serialize

log = logging.getLogger(__name__)

SCENARIO_PATH_ENV = "DCMG_SCENARIO_PATH"
DATA_DIR = Path(__file__).with_name("data")


@dataclass(frozen=True)
class DroopSettings:
    weights: dict = field(default_factory=dict)
    r_base: float = 10.0
    v_ref: float = V_NOMINAL
    v_bus_ref: float = V_NOMINAL
    main_bus: str = ""
    kp: float = 0.05
    ki: float = 2.0
    dv_max: float = 0.25 * V_NOMINAL
    measure: str = "idc"

    def __post_init__(self):
        if self.measure not in ("idc", "ig"):
            raise ValueError(f"unknown droop measurement {self.measure!r}")
        if not self.r_base > 0:
            raise ValueError("droop r_base must be positive")
        if not self.v_bus_ref > 0:
            raise ValueError("v_bus_ref must be positive")
        for k, w in self.weights.items():
            if not w > 0:
                raise ValueError(f"weight of {k} must be positive")


@dataclass(frozen=True)
class RectifierSettings:
    kp: float = 1e-4
    ki: float = 0.05


@dataclass(frozen=True)
class EssSettings:
    omega: float = 1.0
    mode: str = "highpass"

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("ess omega must be positive")
        if self.mode not in ESS_MODES:
            raise ValueError(f"unknown ess mode {self.mode!r}")


@dataclass(frozen=True)
class Scenario:
    topology: Topology
    solver: SolverConfig = SolverConfig()
    profiles: dict = field(default_factory=dict)
    droop: DroopSettings = DroopSettings()
    rectifier: RectifierSettings = RectifierSettings()
    ess: EssSettings = EssSettings()
    zones: dict = field(default_factory=dict)
    name: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def duration(self) -> float:
        return self.solver.t_end

    def step_times(self) -> list[float]:
        """Sorted instants (0 < t < t_end) where any load demand steps."""
        times = {t for p in self.profiles.values() for t in p.step_times()}
        return sorted(t for t in times if t < self.solver.t_end)


# -- parsing ---------------------------------------------------------------------

_SECTION_KEYS = {
    "droop": {"r_base", "v_ref", "v_bus_ref", "main_bus", "kp", "ki", "dv_max", "measure"},
    "rectifier": {"kp", "ki"},
    "ess": {"omega", "mode"},
    "solver": {"dt", "method", "t_end", "decimation", "control_period", "init", "state_limit"},
}
_TEXT_KEYS = {"main_bus", "mode", "method", "init", "measure"}
_NETLIST_WORDS = {"node", "edge", "join"}


def _section_args(toks: list[Token]) -> dict:
    section = toks[0].text
    out = {}
    for tok in toks[1:]:
        key, val = split_kv(tok)
        if key not in _SECTION_KEYS[section]:
            raise SemanticError(f"{section}: unknown key {key!r}", tok.line, tok.col)
        out[key] = val.text if key in _TEXT_KEYS else parse_value(val)
    return out


def _profile(toks: list[Token]) -> tuple[str, LoadProfile]:
    if len(toks) < 3:
        raise ParseError("profile needs a node and at least one segment", toks[0].line, toks[0].col)
    segs = []
    for tok in toks[2:]:
        parts = tok.text.split(":")
        if len(parts) not in (2, 3) or parts[1] not in KINDS:
            raise ParseError(f"bad profile segment {tok.text!r} (want t:kind[:level])",
                             tok.line, tok.col)
        if len(parts) == 2 and parts[1] != "hold":
            raise ParseError(f"segment {tok.text!r} needs a level", tok.line, tok.col)
        t = parse_value(Token(parts[0], tok.line, tok.col))
        level = parse_value(Token(parts[2], tok.line, tok.col)) if len(parts) == 3 else 0.0
        segs.append(Segment(t, parts[1], level))
    try:
        return toks[1].text, LoadProfile(tuple(segs))
    except ValueError as exc:
        raise SemanticError(f"profile {toks[1].text}: {exc}", toks[1].line, toks[1].col) from None


def _resolve_netlist(ref: str, base: Path | None) -> Path:
    p = Path(ref)
    candidates = [p] if p.is_absolute() else []
    if not p.is_absolute():
        if base is not None:
            candidates.append(base / p)
        candidates.append(Path.cwd() / p)
        for d in os.environ.get(SCENARIO_PATH_ENV, "").split(os.pathsep):
            if d:
                candidates.append(Path(d) / p)
        candidates.append(DATA_DIR / p)
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"netlist {ref!r} not found")


def parse_scenario(text: str, base_dir: Path | None = None, source: str | None = None) -> Scenario:
    statements = tokenize(text)
    net_statements: list[list[Token]] = []
    netlist_source = None
    overrides: list[list[Token]] = []
    profiles: dict[str, LoadProfile] = {}
    weights: dict[str, float] = {}
    sections: dict[str, dict] = {k: {} for k in _SECTION_KEYS}
    zones: dict[str, tuple[str, ...]] = {}
    name = ""
    warns: list[str] = []
    try:
        for toks in statements:
            word = toks[0].text
            if word in _NETLIST_WORDS:
                net_statements.append(toks)
            elif word == "netlist":
                if len(toks) != 2:
                    raise ParseError("netlist takes one path", toks[0].line, toks[0].col)
                path = _resolve_netlist(toks[1].text, base_dir)
                netlist_source = str(path)
                from_file = tokenize(path.read_text(encoding="utf-8"))
                net_statements = from_file + net_statements
            elif word == "override":
                if len(toks) < 3:
                    raise ParseError("override needs a node and key=value pairs",
                                     toks[0].line, toks[0].col)
                overrides.append(toks)
            elif word == "profile":
                node, prof = _profile(toks)
                if node in profiles:
                    raise SemanticError(f"second profile for {node}", toks[1].line, toks[1].col)
                profiles[node] = prof
            elif word == "weights":
                for tok in toks[1:]:
                    key, val = split_kv(tok)
                    weights[key] = parse_value(val)
            elif word in _SECTION_KEYS:
                sections[word].update(_section_args(toks))
            elif word == "zone":
                if len(toks) != 3:
                    raise ParseError("zone takes a PCM and loads=...", toks[0].line, toks[0].col)
                key, val = split_kv(toks[2])
                if key != "loads":
                    raise SemanticError(f"zone: unknown key {key!r}", toks[2].line, toks[2].col)
                zones[toks[1].text] = tuple(x for x in val.text.split(",") if x)
            elif word == "name":
                name = " ".join(t.text for t in toks[1:])
            else:
                raise ParseError(f"unknown statement {word!r}", toks[0].line, toks[0].col)
    except (ParseError, SemanticError) as exc:
        exc.source = exc.source or source
        raise

    topology = parse_statements(net_statements, netlist_source or source)
    node_ids = {n.id: n for n in topology.nodes}

    for toks in overrides:
        node_id = toks[1].text
        if node_id not in node_ids:
            raise SemanticError(f"override: unknown node {node_id}", toks[1].line, toks[1].col,
                                source)
        allowed = PARAM_TYPES[node_ids[node_id].kind].keys()
        values = {}
        for tok in toks[2:]:
            key, val = split_kv(tok)
            if key not in allowed:
                raise SemanticError(f"override {node_id}: unknown parameter {key!r}",
                                    tok.line, tok.col, source)
            values[key] = parse_value(val)
        try:
            topology = topology.with_params(node_id, **values)
        except ParameterError as exc:
            raise SemanticError(f"override {node_id}: {exc}", toks[0].line, toks[0].col,
                                source) from None
        node_ids = {n.id: n for n in topology.nodes}

    for node in profiles:
        if node not in node_ids or node_ids[node].kind == "pgm":
            raise SemanticError(f"profile for {node}: not a load node", source=source)
    for n in topology.nodes:
        if n.is_load and n.id not in profiles:
            msg = f"no profile for load {n.id}; using 0 W"
            warns.append(msg)
            log.warning(msg)
    for g in weights:
        if g not in node_ids or node_ids[g].kind != "pgm":
            raise SemanticError(f"weights: {g} is not a PGM", source=source)
    for p, members in zones.items():
        if p not in node_ids or node_ids[p].kind != "pcm":
            raise SemanticError(f"zone: {p} is not a PCM", source=source)
        for m in members:
            if m not in node_ids or not node_ids[m].is_load:
                raise SemanticError(f"zone {p}: {m} is not a load node", source=source)

    droop_args = dict(sections["droop"])
    if "main_bus" not in droop_args:
        loads = [n.id for n in topology.nodes if n.is_load]
        if not loads:
            raise SemanticError("droop: main_bus not given and no load node to default to",
                                source=source)
        droop_args["main_bus"] = loads[0]
    elif droop_args["main_bus"] not in node_ids:
        raise SemanticError(f"droop: main_bus {droop_args['main_bus']} is not a node",
                            source=source)
    full_weights = {g.id: weights.get(g.id, 1.0) for g in topology.nodes_of_kind("pgm")}
    sv = sections["solver"]
    solver_args = {}
    for key, target in (("dt", "dt"), ("method", "method"), ("t_end", "t_end"),
                        ("decimation", "record_decimation"), ("control_period", "control_period"),
                        ("init", "init"), ("state_limit", "state_limit")):
        if key in sv:
            solver_args[target] = sv[key]
    if "record_decimation" in solver_args:
        solver_args["record_decimation"] = int(solver_args["record_decimation"])
    try:
        return Scenario(
            topology=topology,
            solver=SolverConfig(**solver_args),
            profiles=profiles,
            droop=DroopSettings(weights=full_weights, **droop_args),
            rectifier=RectifierSettings(**sections["rectifier"]),
            ess=EssSettings(**sections["ess"]),
            zones=zones,
            name=name,
            warnings=tuple(warns),
        )
    except ValueError as exc:
        raise SemanticError(str(exc), source=source) from None


def find_scenario(ref: str | os.PathLike) -> Path:
    """Locate a scenario by path, via ``$DCMG_SCENARIO_PATH``, or among the bundled ones."""
    p = Path(ref)
    if p.is_file():
        return p
    names = [p] if p.suffix else [p, p.with_suffix(".scn")]
    dirs = [d for d in os.environ.get(SCENARIO_PATH_ENV, "").split(os.pathsep) if d]
    for d in [*map(Path, dirs), DATA_DIR]:
        for n in names:
            if (d / n).is_file():
                return d / n
    raise FileNotFoundError(f"scenario {str(ref)!r} not found")


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = find_scenario(path)
    return parse_scenario(path.read_text(encoding="utf-8"), base_dir=path.parent,
                          source=str(path))


def dump_scenario(scn: Scenario) -> str:
    """Self-contained scenario text (inline netlist, every setting explicit)."""
    out = []
    if scn.name:
        out.append(f"name {scn.name}")
    out.append(serialize(scn.topology).rstrip("\n"))
    for node, prof in scn.profiles.items():
        segs = " ".join(f"{format_value(s.t_start)}:{s.kind}:{format_value(s.level)}"
                        for s in prof.segments)
        out.append(f"profile {node} {segs}")
    if scn.droop.weights:
        out.append("weights " + " ".join(f"{k}={format_value(v)}"
                                         for k, v in scn.droop.weights.items()))
    d = scn.droop
    out.append(f"droop r_base={format_value(d.r_base)} v_ref={format_value(d.v_ref)} "
               f"v_bus_ref={format_value(d.v_bus_ref)} main_bus={d.main_bus} "
               f"kp={format_value(d.kp)} ki={format_value(d.ki)} dv_max={format_value(d.dv_max)} "
               f"measure={d.measure}")
    out.append(f"rectifier kp={format_value(scn.rectifier.kp)} ki={format_value(scn.rectifier.ki)}")
    out.append(f"ess omega={format_value(scn.ess.omega)} mode={scn.ess.mode}")
    for p, members in scn.zones.items():
        out.append(f"zone {p} loads={','.join(members)}")
    s = scn.solver
    line = (f"solver dt={format_value(s.dt)} method={s.method} t_end={format_value(s.t_end)} "
            f"decimation={s.record_decimation} init={s.init} "
            f"state_limit={format_value(s.state_limit)}")
    if s.control_period is not None:
        line += f" control_period={format_value(s.control_period)}"
    out.append(line)
    return "\n".join(out) + "\n"


# -- parameter addressing (sweeps, CLI overrides) --------------------------------------

def with_value(scn: Scenario, path: str, value) -> Scenario:
    """Copy of ``scn`` with one scalar setting replaced.

    Paths: ``droop.<key>``, ``rectifier.<key>``, ``ess.<key>``, ``solver.<key>``,
    ``weights.<pgm>``, ``node.<id>.<param>``.
    """
    def num(v):
        return parse_value(v) if isinstance(v, str) else float(v)

    parts = path.split(".")
    head = parts[0]
    try:
        if head == "node" and len(parts) == 3:
            node = scn.topology.node(parts[1])
            if parts[2] not in type(node.params).keys():
                raise KeyError(path)
            return replace(scn, topology=scn.topology.with_params(parts[1], **{parts[2]: num(value)}))
        if head == "weights" and len(parts) == 2:
            if parts[1] not in scn.droop.weights:
                raise KeyError(path)
            w = dict(scn.droop.weights)
            w[parts[1]] = num(value)
            return replace(scn, droop=replace(scn.droop, weights=w))
        if head in ("droop", "rectifier", "ess", "solver") and len(parts) == 2:
            key = parts[1]
            if head == "solver" and key == "decimation":
                key = "record_decimation"
            section = getattr(scn, head)
            names = {f.name for f in fields(section)} - {"weights"}
            if key not in names:
                raise KeyError(path)
            current = getattr(section, key)
            if isinstance(current, str):
                value = str(value)
            elif isinstance(current, int) and not isinstance(current, bool):
                value = int(num(value))
            elif value is not None:
                value = num(value)
            return replace(scn, **{head: replace(section, **{key: value})})
    except KeyError:
        pass
    raise KeyError(f"unknown parameter path {path!r}")
