"""Fixed-step (Euler / RK4) integration of the assembled network.

The network is packed into flat arrays once (``build_model``); the time loop is
a numba-compiled recurrence that follows the causal schedule of
``topology.evaluation_order``: node voltages from states, line derivatives,
KCL sums, node derivatives. Controllers are discrete and held (zero-order hold)
between control updates.
"""
from __future__ import annotations

import io
import math
from collections import namedtuple
from dataclasses import dataclass

import numba
import numpy as np

from .components import (ac_reference, ess_rhs, line_rhs, load_rhs, pgm_rhs,
                         pgm_steady_state, saturate_ess_current, soc_value)
from .control import (ESS_MODES, _compensator_step, _droop, _feedforward, _pi_step,
                      design_droop_resistances, rectifier_feedforward)
from .profiles import profile_value
from .topology import Topology, evaluation_order, validate

METHODS = {"euler": 0, "rk4": 1}
PGM, PCM, PMM = 0, 1, 2
_KIND_CODE = {"pgm": PGM, "pcm": PCM, "pmm": PMM}


class NumericalDivergence(RuntimeError):
    def __init__(self, t: float, component: str, value: float):
        self.t = t
        self.component = component
        self.value = value
        super().__init__(f"numerical divergence at t={t:.6g} s in {component} (value {value!r})")


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 10e-6
    method: str = "rk4"
    t_end: float = 20.0
    record_decimation: int = 100
    control_period: float | None = None    # None: update controllers every step
    init: str = "nominal"                  # or "cold" (all states zero)
    state_limit: float = 1e6               # |state| above this (V, A, C) counts as divergence

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be non-negative")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if int(self.record_decimation) != self.record_decimation or self.record_decimation < 1:
            raise ValueError("record_decimation must be an integer >= 1")
        if self.init not in ("nominal", "cold"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.control_period is not None and not self.control_period >= self.dt:
            raise ValueError("control_period must be at least dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def control_every(self) -> int:
        if self.control_period is None:
            return 1
        return max(1, int(round(self.control_period / self.dt)))


Net = namedtuple("Net", [
    "node_kind", "node_state",
    "e_from", "e_to", "e_R", "e_L",
    "pgm_par", "pgm_node",
    "load_par", "load_node", "load_ess",
    "prof_t", "prof_k", "prof_l", "prof_ptr",
    "ess_par", "ess_node", "ess_load", "zone_ptr", "zone_load",
    "r_d", "vd_ref", "vq_ref",
    "cpar", "main_bus",
])

# cpar layout
(V_REF, V_BUS, SEC_KP, SEC_KI, DV_LO, DV_HI, RECT_KP, RECT_KI, COMP_OMEGA, COMP_MODE,
 DROOP_MEAS) = range(11)
DROOP_MEASUREMENTS = {"idc": 0, "ig": 1}


@dataclass
class SystemState:
    x: np.ndarray       # continuous states
    ctrl: np.ndarray    # discrete controller states

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.ctrl.copy())


@dataclass
class NetworkModel:
    topology: Topology
    schedule: object
    net: Net
    node_ids: list[str]
    edge_ids: list[str]
    pgm_ids: list[str]
    load_ids: list[str]
    pcm_ids: list[str]
    state_names: list[str]
    ctrl_names: list[str]

    @property
    def n_x(self) -> int:
        return len(self.state_names)

    def columns(self) -> list[str]:
        return (["t_s"] + [f"v_{n}" for n in self.node_ids] + [f"i_{e}" for e in self.edge_ids]
                + [f"ig_{g}" for g in self.pgm_ids] + [f"p_ess_{p}" for p in self.pcm_ids]
                + [f"soc_{p}" for p in self.pcm_ids] + [f"lambda_{g}" for g in self.pgm_ids]
                + ["dv_sec"])

    def index(self, name: str) -> int:
        return self.state_names.index(name)


# -- model assembly ------------------------------------------------------------

def build_model(topology: Topology, scenario) -> NetworkModel:
    """Pack topology, parameters, profiles and controller settings into arrays.

    ``scenario`` needs ``profiles``, ``droop``, ``rectifier``, ``ess`` and
    ``zones`` attributes (see ``dcmg.scenario.Scenario``).
    """
    report = validate(topology)
    if not report.ok:
        raise ValueError("invalid topology: " + "; ".join(str(f) for f in report))
    schedule = evaluation_order(topology)
    # node and edge order follow the schedule (declaration order)
    node_ids = schedule.targets("node_outputs")
    edge_ids = schedule.targets("edge_derivatives")
    nodes = {n.id: n for n in topology.nodes}
    pos = {nid: i for i, nid in enumerate(node_ids)}
    pgm_ids = [n for n in node_ids if nodes[n].kind == "pgm"]
    load_ids = [n for n in node_ids if nodes[n].kind != "pgm"]
    pcm_ids = [n for n in node_ids if nodes[n].kind == "pcm"]
    n_pgm, n_e, n_load, n_ess = len(pgm_ids), len(edge_ids), len(load_ids), len(pcm_ids)
    off_e = 6 * n_pgm
    off_load = off_e + n_e
    off_ess = off_load + n_load

    state_names = []
    for g in pgm_ids:
        state_names += [f"{g}.{s}" for s in ("i_dL", "i_qL", "v_d", "v_q", "i_dc", "v_c_dc")]
    state_names += [f"{e}.i" for e in edge_ids]
    state_names += [f"{n}.v" for n in load_ids]
    for p in pcm_ids:
        state_names += [f"{p}.i_ess", f"{p}.q_used"]
    ctrl_names = ([f"{g}.pi_integral" for g in pgm_ids] + [f"{g}.lambda" for g in pgm_ids]
                  + ["sec.pi_integral", "sec.dv"] + [f"{p}.p_lp" for p in pcm_ids]
                  + [f"{p}.i_ref" for p in pcm_ids] + [f"{p}.p_ref" for p in pcm_ids])

    node_kind = np.array([_KIND_CODE[nodes[n].kind] for n in node_ids], dtype=np.int64)
    node_state = np.empty(len(node_ids), dtype=np.int64)
    for j, g in enumerate(pgm_ids):
        node_state[pos[g]] = 6 * j + 5
    for j, n in enumerate(load_ids):
        node_state[pos[n]] = off_load + j

    edges = {e.id: e for e in topology.edges}
    e_from = np.array([pos[edges[e].from_node] for e in edge_ids], dtype=np.int64)
    e_to = np.array([pos[edges[e].to_node] for e in edge_ids], dtype=np.int64)
    e_R = np.array([edges[e].R_line for e in edge_ids], dtype=np.float64)
    e_L = np.array([edges[e].L_line for e in edge_ids], dtype=np.float64)

    pgm_par = np.array([nodes[g].params.as_array() for g in pgm_ids], dtype=np.float64).reshape(n_pgm, 11)
    pgm_node = np.array([pos[g] for g in pgm_ids], dtype=np.int64)

    load_par = np.array([[nodes[n].params.C_L, nodes[n].params.R_L, nodes[n].params.v_floor]
                         for n in load_ids], dtype=np.float64).reshape(n_load, 3)
    load_node = np.array([pos[n] for n in load_ids], dtype=np.int64)
    load_pos = {n: j for j, n in enumerate(load_ids)}
    load_ess = np.full(n_load, -1, dtype=np.int64)
    for j, p in enumerate(pcm_ids):
        load_ess[load_pos[p]] = j

    prof_t, prof_k, prof_l, prof_ptr = [], [], [], [0]
    for n in load_ids:
        prof = scenario.profiles.get(n)
        if prof is not None:
            t, k, lv = prof.arrays()
            prof_t.extend(t)
            prof_k.extend(k)
            prof_l.extend(lv)
        prof_ptr.append(len(prof_t))

    ess_par = np.array([[nodes[p].params.omega_ess, nodes[p].params.Q_T, nodes[p].params.Q_0,
                         nodes[p].params.p_min, nodes[p].params.p_max] for p in pcm_ids],
                       dtype=np.float64).reshape(n_ess, 5)
    ess_node = np.array([pos[p] for p in pcm_ids], dtype=np.int64)
    ess_load = np.array([load_pos[p] for p in pcm_ids], dtype=np.int64)
    zone_ptr, zone_load = [0], []
    for p in pcm_ids:
        members = scenario.zones.get(p, (p,))
        for m in members:
            if m not in load_pos:
                raise ValueError(f"zone of {p}: {m} is not a load node")
            zone_load.append(load_pos[m])
        zone_ptr.append(len(zone_load))

    droop = scenario.droop
    weights = [droop.weights.get(g, 1.0) for g in pgm_ids]
    r_d = np.array(design_droop_resistances(weights, droop.r_base), dtype=np.float64)
    vd_ref = np.empty(n_pgm)
    vq_ref = np.empty(n_pgm)
    for j, g in enumerate(pgm_ids):
        vd_ref[j], vq_ref[j] = ac_reference(nodes[g].params)
        # raises DegenerateReference for an AC reference orthogonal to phi
        rectifier_feedforward(droop.v_bus_ref, 0.0, nodes[g].params.R_dc,
                              vd_ref[j], vq_ref[j], nodes[g].params.phi)
    if droop.main_bus not in pos:
        raise ValueError(f"main bus {droop.main_bus!r} is not a node")
    rect = scenario.rectifier
    ess = scenario.ess
    cpar = np.array([droop.v_ref, droop.v_bus_ref, droop.kp, droop.ki, -droop.dv_max, droop.dv_max,
                     rect.kp, rect.ki, ess.omega, ESS_MODES[ess.mode],
                     DROOP_MEASUREMENTS[droop.measure]], dtype=np.float64)

    net = Net(node_kind, node_state, e_from, e_to, e_R, e_L, pgm_par, pgm_node,
              load_par, load_node, load_ess,
              np.array(prof_t, dtype=np.float64), np.array(prof_k, dtype=np.int64),
              np.array(prof_l, dtype=np.float64), np.array(prof_ptr, dtype=np.int64),
              ess_par, ess_node, ess_load, np.array(zone_ptr, dtype=np.int64),
              np.array(zone_load, dtype=np.int64), r_d, vd_ref, vq_ref, cpar,
              np.int64(pos[droop.main_bus]))
    return NetworkModel(topology, schedule, net, node_ids, edge_ids, pgm_ids, load_ids,
                        pcm_ids, state_names, ctrl_names)


def initial_state(model: NetworkModel, init: str = "nominal") -> SystemState:
    """Nominal start: PGMs at their no-draw equilibrium for the bus setpoint,
    load nodes at the setpoint, lines at 0 A, ESS idle at Q_0. Cold start: all zero."""
    net = model.net
    x = np.zeros(model.n_x)
    ctrl = np.zeros(len(model.ctrl_names))
    n_pgm, n_ess = len(model.pgm_ids), len(model.pcm_ids)
    if init == "cold":
        return SystemState(x, ctrl)
    v0 = net.cpar[V_BUS]
    nodes = {n.id: n for n in model.topology.nodes}
    for j, g in enumerate(model.pgm_ids):
        p = nodes[g].params
        lam = _feedforward(v0, v0 / p.R_d, p.R_dc, net.vd_ref[j], net.vq_ref[j], p.phi)
        x[6 * j:6 * j + 6] = pgm_steady_state(p, lam, 0.0).as_array()
        ctrl[n_pgm + j] = lam
    for j in range(len(model.load_ids)):
        x[net.node_state[net.load_node[j]]] = v0
    # filter starts settled on the initial zone demand so t=0 is not a step
    c_plp = 2 * n_pgm + 2
    for j in range(n_ess):
        ctrl[c_plp + j] = _zone_demand(0.0, j, net.zone_ptr, net.zone_load, net.prof_t,
                                       net.prof_k, net.prof_l, net.prof_ptr)
    return SystemState(x, ctrl)


# -- compiled kernels ------------------------------------------------------------

@numba.njit(cache=True)
def _zone_demand(t, j, zone_ptr, zone_load, prof_t, prof_k, prof_l, prof_ptr):
    total = 0.0
    for m in range(zone_ptr[j], zone_ptr[j + 1]):
        ld = zone_load[m]
        total += profile_value(t, prof_t, prof_k, prof_l, prof_ptr[ld], prof_ptr[ld + 1])
    return total


@numba.njit(cache=True)
def _kcl(net, x, v, out):
    """Node voltages into ``v`` and net edge outflow per node into ``out``."""
    for k in range(v.shape[0]):
        v[k] = x[net.node_state[k]]
        out[k] = 0.0
    off_e = 6 * net.pgm_par.shape[0]
    for m in range(net.e_from.shape[0]):
        i = x[off_e + m]
        out[net.e_from[m]] += i
        out[net.e_to[m]] -= i


@numba.njit(cache=True)
def _rhs(net, t, x, ctrl, dx, v, outflow, tmp6):
    n_pgm = net.pgm_par.shape[0]
    n_e = net.e_from.shape[0]
    n_load = net.load_par.shape[0]
    off_e = 6 * n_pgm
    off_load = off_e + n_e
    off_ess = off_load + n_load
    c_lam = n_pgm
    c_iref = 2 * n_pgm + 2 + net.ess_par.shape[0]
    # node outputs and KCL (states only)
    _kcl(net, x, v, outflow)
    # line derivatives
    for m in range(n_e):
        dx[off_e + m] = line_rhs(x[off_e + m], v[net.e_from[m]], v[net.e_to[m]],
                                 net.e_R[m], net.e_L[m])
    # node derivatives
    for j in range(n_pgm):
        pgm_rhs(x[6 * j:6 * j + 6], net.pgm_par[j], ctrl[c_lam + j],
                outflow[net.pgm_node[j]], tmp6)
        for s in range(6):
            dx[6 * j + s] = tmp6[s]
    for j in range(n_load):
        P = profile_value(t, net.prof_t, net.prof_k, net.prof_l,
                          net.prof_ptr[j], net.prof_ptr[j + 1])
        i_in = -outflow[net.load_node[j]]
        e = net.load_ess[j]
        if e >= 0:
            i_in += x[off_ess + 2 * e]
        dx[off_load + j] = load_rhs(x[off_load + j], P, i_in, net.load_par[j, 0],
                                    net.load_par[j, 1], net.load_par[j, 2])
    for e in range(net.ess_par.shape[0]):
        i_ess = x[off_ess + 2 * e]
        dx[off_ess + 2 * e] = ess_rhs(i_ess, ctrl[c_iref + e], net.ess_par[e, 0])
        dx[off_ess + 2 * e + 1] = i_ess


@numba.njit(cache=True)
def _control(net, t, x, ctrl, dt_c, v, outflow):
    n_pgm = net.pgm_par.shape[0]
    n_ess = net.ess_par.shape[0]
    off_ess = 6 * n_pgm + net.e_from.shape[0] + net.load_par.shape[0]
    c_sec = 2 * n_pgm
    c_plp = c_sec + 2
    c_iref = c_plp + n_ess
    c_pref = c_iref + n_ess
    cp = net.cpar
    _kcl(net, x, v, outflow)
    # secondary: restore the main bus
    dv, ctrl[c_sec], sat = _pi_step(cp[SEC_KP], cp[SEC_KI], ctrl[c_sec],
                                    cp[V_BUS] - v[net.main_bus], dt_c, 0.0, cp[DV_LO], cp[DV_HI])
    ctrl[c_sec + 1] = dv
    # primary droop feeding the rectifier feedforward + PI
    for j in range(n_pgm):
        p = net.pgm_par[j]
        # droop current: DC-inductor current (default) or KCL draw at the node
        i_meas = x[6 * j + 4] if cp[DROOP_MEAS] == 0.0 else outflow[net.pgm_node[j]]
        v_star = _droop(cp[V_REF], net.r_d[j], i_meas, dv)
        ff = _feedforward(v_star, x[6 * j + 4], p[5], net.vd_ref[j], net.vq_ref[j], p[8])
        lam, ctrl[j], sat = _pi_step(cp[RECT_KP], cp[RECT_KI], ctrl[j],
                                     v_star - x[6 * j + 5], dt_c, ff, 0.0, 1.0)
        ctrl[n_pgm + j] = lam
    # ESS: compensate the fast part of the zone demand
    mode = int(cp[COMP_MODE])
    for e in range(n_ess):
        demand = _zone_demand(t, e, net.zone_ptr, net.zone_load, net.prof_t, net.prof_k,
                              net.prof_l, net.prof_ptr)
        p_ref, ctrl[c_plp + e] = _compensator_step(ctrl[c_plp + e], demand, cp[COMP_OMEGA],
                                                   dt_c, mode)
        ep = net.ess_par[e]
        p_ref = min(max(p_ref, ep[3]), ep[4])
        v_b = v[net.ess_node[e]]
        v_floor = net.load_par[net.ess_load[e], 2]
        soc = soc_value(x[off_ess + 2 * e + 1], ep[2], ep[1])
        ctrl[c_iref + e] = saturate_ess_current(p_ref / max(v_b, v_floor), v_b, soc,
                                                ep[3], ep[4], v_floor)
        ctrl[c_pref + e] = p_ref


@numba.njit(cache=True)
def _record(net, t, x, ctrl, v, outflow, row):
    n_pgm = net.pgm_par.shape[0]
    n_e = net.e_from.shape[0]
    n_load = net.load_par.shape[0]
    n_ess = net.ess_par.shape[0]
    off_e = 6 * n_pgm
    off_ess = off_e + n_e + n_load
    _kcl(net, x, v, outflow)
    c = 0
    row[c] = t
    c += 1
    for k in range(v.shape[0]):
        row[c] = v[k]
        c += 1
    for m in range(n_e):
        row[c] = x[off_e + m]
        c += 1
    for j in range(n_pgm):
        row[c] = outflow[net.pgm_node[j]]
        c += 1
    for e in range(n_ess):
        row[c] = v[net.ess_node[e]] * x[off_ess + 2 * e]
        c += 1
    for e in range(n_ess):
        ep = net.ess_par[e]
        s = soc_value(x[off_ess + 2 * e + 1], ep[2], ep[1])
        row[c] = min(1.0, max(0.0, s))
        c += 1
    for j in range(n_pgm):
        row[c] = ctrl[n_pgm + j]
        c += 1
    row[c] = ctrl[2 * n_pgm + 1]


@numba.njit(cache=True)
def _run(net, x, ctrl, t0, k0, n_steps, dt, method, control_every, record_every, rec,
         state_limit):
    """Advance ``n_steps`` from time ``t0`` (global step ``k0``).

    Returns (status, steps taken, offending state index, records written).
    ``control_every == 0`` keeps the controller outputs frozen.
    """
    n = x.shape[0]
    n_nodes = net.node_kind.shape[0]
    v = np.empty(n_nodes)
    outflow = np.empty(n_nodes)
    tmp6 = np.empty(6)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xs = np.empty(n)
    n_rec = 0
    dt_c = dt * control_every
    for step in range(n_steps + 1):
        k = k0 + step
        t = t0 + step * dt
        if record_every > 0 and (step % record_every == 0 or step == n_steps):
            if n_rec < rec.shape[0]:
                _record(net, t, x, ctrl, v, outflow, rec[n_rec])
                n_rec += 1
        if step == n_steps:
            break
        if control_every > 0 and k % control_every == 0:
            _control(net, t, x, ctrl, dt_c, v, outflow)
        if method == 0:
            _rhs(net, t, x, ctrl, k1, v, outflow, tmp6)
            for i in range(n):
                x[i] += dt * k1[i]
        else:
            _rhs(net, t, x, ctrl, k1, v, outflow, tmp6)
            for i in range(n):
                xs[i] = x[i] + 0.5 * dt * k1[i]
            _rhs(net, t + 0.5 * dt, xs, ctrl, k2, v, outflow, tmp6)
            for i in range(n):
                xs[i] = x[i] + 0.5 * dt * k2[i]
            _rhs(net, t + 0.5 * dt, xs, ctrl, k3, v, outflow, tmp6)
            for i in range(n):
                xs[i] = x[i] + dt * k3[i]
            _rhs(net, t + dt, xs, ctrl, k4, v, outflow, tmp6)
            for i in range(n):
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        for i in range(n):
            if not (abs(x[i]) <= state_limit):
                return 1, step + 1, i, n_rec
    return 0, n_steps, -1, n_rec


# -- public API -----------------------------------------------------------------

def derivatives(model: NetworkModel, state: SystemState, t: float) -> np.ndarray:
    """Continuous-state derivative with the currently held controller outputs."""
    n_nodes = len(model.node_ids)
    dx = np.empty(model.n_x)
    _rhs(model.net, float(t), state.x, state.ctrl, dx, np.empty(n_nodes), np.empty(n_nodes),
         np.empty(6))
    return dx


def step(model: NetworkModel, state: SystemState, t: float, dt: float,
         method: str = "rk4", update_controls: bool = True,
         state_limit: float = math.inf) -> SystemState:
    """One integration step from ``t``; returns a new state."""
    new = state.copy()
    status, _, idx, _ = _run(model.net, new.x, new.ctrl, float(t), 0, 1, float(dt),
                             METHODS[method], 1 if update_controls else 0, 0,
                             np.empty((0, 1)), float(state_limit))
    if status:
        raise NumericalDivergence(t + dt, model.state_names[idx], float(new.x[idx]))
    return new


@dataclass
class TimeSeries:
    columns: list[str]
    data: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def __len__(self):
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self["t_s"]

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        np.savetxt(buf, self.data, delimiter=",", fmt="%.12g")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_buf) -> "TimeSeries":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf) as fh:
                text = fh.read()
        header, _, body = text.partition("\n")
        cols = header.strip().split(",")
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2) if body.strip() \
            else np.empty((0, len(cols)))
        return cls(cols, data)


@dataclass
class RunResult:
    series: TimeSeries
    state: SystemState
    diverged: NumericalDivergence | None = None


def run(model: NetworkModel, config: SolverConfig, state: SystemState | None = None) -> RunResult:
    """Integrate over [0, t_end]; on divergence the series holds the samples up to it."""
    state = (state or initial_state(model, config.init)).copy()
    n_steps = config.n_steps
    dec = int(config.record_decimation)
    n_rec = n_steps // dec + 2
    cols = model.columns()
    rec = np.zeros((n_rec, len(cols)))
    status, k, idx, got = _run(model.net, state.x, state.ctrl, 0.0, 0, n_steps, float(config.dt),
                               METHODS[config.method], config.control_every, dec, rec,
                               float(config.state_limit))
    series = TimeSeries(cols, rec[:got].copy())
    diverged = None
    if status:
        diverged = NumericalDivergence(k * config.dt, model.state_names[idx], float(state.x[idx]))
    return RunResult(series, state, diverged)


def simulate(topology: Topology, scenario, config: SolverConfig | None = None) -> TimeSeries:
    """Build, initialise and integrate; raises NumericalDivergence on blow-up."""
    config = config or scenario.solver
    model = build_model(topology, scenario)
    result = run(model, config)
    if result.diverged is not None:
        raise result.diverged
    return result.series
