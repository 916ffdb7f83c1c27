"""Built-in acceptance checks.

Each check returns a ``CriterionResult``; ``run_all`` runs them in order. The
scenario-level checks share one run of the bundled ``sps4zone`` case.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import root

from .components import EssParams, EssState, K_I, K_V, ess_rhs, rectifier_map, soc
from .control import design_droop_resistances, ess_compensator_update, EssCompensatorState
from .profiles import profile_eval
from .scenario import Scenario, load_scenario
from .solver import SolverConfig, build_model, initial_state, run
from .summary import summarize_scenario


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.name}: {self.detail}"


# -- shared sps4zone run -------------------------------------------------------

_CACHE: dict = {}


def sps4zone_run(t_end: float | None = None):
    """(scenario, RunResult, CSV text, wall seconds), cached per duration."""
    key = ("sps4zone", t_end)
    if key not in _CACHE:
        scn = load_scenario("sps4zone")
        if t_end is not None:
            scn = replace(scn, solver=replace(scn.solver, t_end=t_end))
        model = build_model(scn.topology, scn)
        t0 = time.perf_counter()
        result = run(model, scn.solver)
        wall = time.perf_counter() - t0
        _CACHE[key] = (scn, result, result.series.to_csv(), wall)
    return _CACHE[key]


def zone_demand(scn: Scenario, pcm: str, t: float) -> float:
    members = scn.zones.get(pcm, (pcm,))
    return sum(profile_eval(scn.profiles[m], t) for m in members if m in scn.profiles)


# -- 1-3: scenario properties ---------------------------------------------------

def check_sharing(scn, result, wall: float, tol: float = 0.02) -> CriterionResult:
    if result.diverged is not None:
        return CriterionResult(1, "power sharing 5:3:2", False, f"diverged: {result.diverged}")
    s = summarize_scenario(result.series, scn)
    err = s.max_sharing_error
    shares = "; ".join("/".join(f"{v:.4f}" for v in iv.shares.values()) for iv in s.sharing)
    ok = err <= tol and len(s.sharing) == len(scn.step_times()) + 1
    return CriterionResult(1, "power sharing 5:3:2", ok,
                           f"max rel error {err:.2e} (tol {tol:g}); shares {shares}; "
                           f"run {wall:.1f} s wall")


def check_regulation(scn, result, band: float = 0.005) -> CriterionResult:
    if result.diverged is not None:
        return CriterionResult(2, "bus regulation", False, f"diverged: {result.diverged}")
    s = summarize_scenario(result.series, scn)
    tol = band * scn.droop.v_bus_ref
    parts, ok = [], bool(s.regulation)
    for r in s.regulation:
        good = r.settled and abs(r.offset) <= tol
        ok &= good
        st = f"{r.settling_time:.3f} s" if r.settled else "never"
        parts.append(f"t={r.t_step:g}: settle {st}, offset {r.offset:+.2f} V")
    return CriterionResult(2, "bus regulation +-0.5 %", ok, "; ".join(parts))


def check_ess(scn, result, decay: float = 0.02, p_ss: float = 1e3,
              window: float = 1.0) -> CriterionResult:
    """Injected ESS power (the ``p_ess_`` CSV column) after every zone step."""
    if result.diverged is not None:
        return CriterionResult(3, "ESS transient compensation", False,
                               f"diverged: {result.diverged}")
    series = result.series
    t = series.t
    omega = scn.ess.omega
    edges = scn.step_times() + [scn.solver.t_end]
    ok = True
    worst_ratio, worst_ss, checked = 0.0, 0.0, 0
    ref_ratio = 0.0
    for pcm in [c[6:] for c in series.columns if c.startswith("p_ess_")]:
        p = series[f"p_ess_{pcm}"]
        for a, b in zip(edges[:-1], edges[1:]):
            dP = zone_demand(scn, pcm, a) - zone_demand(scn, pcm, a - 1e-9)
            if dP == 0.0:
                continue
            checked += 1
            seg = (t >= a) & (t < b)
            # the peak must fall inside the interval and carry the sign of the step
            k = int(np.argmax(np.abs(p[seg])))
            peak = p[seg][k]
            ok &= peak * dP > 0
            # decay: at the last sample no later than a + 5/omega
            t_dec = min(a + 5.0 / omega, b)
            idx = np.nonzero(t < t_dec)[0][-1] if t_dec < b else np.nonzero(seg)[0][-1]
            ratio = abs(p[idx]) / abs(dP)
            worst_ratio = max(worst_ratio, ratio)
            ok &= ratio < decay
            ss = (t >= b - window) & (t < b)
            worst_ss = max(worst_ss, float(np.abs(p[ss]).max()))
            # commanded power for reference (exact ZOH replay of the compensator)
            st = EssCompensatorState(omega, zone_demand(scn, pcm, a - 1e-9), scn.ess.mode)
            dt_c = scn.solver.dt * scn.solver.control_every
            n = int(round((t_dec - a) / dt_c))
            pref = 0.0
            for _ in range(n):
                pref = ess_compensator_update(st, zone_demand(scn, pcm, a), dt_c)
            ref_ratio = max(ref_ratio, abs(pref) / abs(dP))
    ok &= worst_ss < p_ss and checked > 0
    return CriterionResult(
        3, "ESS transient compensation", ok,
        f"{checked} zone steps; injected |P|/dP at 5/w = {worst_ratio:.2%} (need < {decay:.0%}); "
        f"max |P| over last {window:g} s of interval = {worst_ss / 1e3:.1f} kW (need < "
        f"{p_ss / 1e3:g} kW); commanded P_ref/dP at 5/w = {ref_ratio:.2%}")


# -- 4-6: component and solver properties ----------------------------------------

def check_soc(i_batt: float = 10.0, duration: float = 3600.0, dt: float = 1.0,
              tol: float = 1e-6) -> CriterionResult:
    params = EssParams(Q_T=10.0, Q_0=10.0)
    st = EssState(i_ess=i_batt, q_used=0.0)
    soc0 = soc(st, params)
    for _ in range(int(round(duration / dt))):
        di = ess_rhs(st.i_ess, i_batt, params.omega_ess)
        st = EssState(st.i_ess + dt * di, st.q_used + dt * st.i_ess)
    soc1 = soc(st, params)
    err = max(abs(soc0 - 1.0), abs(soc1))
    return CriterionResult(4, "SOC coulomb counting", err <= tol,
                           f"SOC {soc0:.9f} -> {soc1:.3e}, |error| {err:.1e} (tol {tol:g})")


def check_rectifier(n: int = 10_000, seed: int = 0) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        lam = rng.uniform(0.0, 1.0)
        phi = rng.uniform(-math.pi, math.pi)
        v_d, v_q = rng.uniform(-2e4, 2e4, 2)
        i_dc = rng.uniform(-5e3, 5e3)
        v_dc, i_d, i_q = rectifier_map(lam, phi, v_d, v_q, i_dc)
        lhs = 1.5 * (v_d * i_d + v_q * i_q)
        rhs = v_dc * i_dc
        # rounding scale: the magnitude of the individual products
        scale = K_V * abs(lam * i_dc) * (abs(v_d) + abs(v_q)) + 1e-300
        worst = max(worst, abs(lhs - rhs) / scale)
    tol = 8 * np.finfo(float).eps
    return CriterionResult(5, "rectifier power identity", worst <= tol,
                           f"{n} samples, worst |3/2(vd id + vq iq) - vdc idc| / scale = "
                           f"{worst:.1e} (float eps {np.finfo(float).eps:.1e})")


RL_TEXT = """
node a kind=pmm C_L=1e15
node b kind=pmm C_L=1e15
edge l from=a to=b R={R} L={L}
profile a 0:step:0
profile b 0:step:0
droop main_bus=a kp=0 ki=0
"""


def rl_benchmark(dt: float, method: str, t_end: float, R: float = 2e-3, L: float = 10e-6,
                 dv: float = 100.0) -> float:
    """Line current at ``t_end`` for a step of ``dv`` across an RL line.

    Both ends are capacitors so large that their voltages are fixed to within
    rounding over the run, so the line sees a constant voltage difference.
    """
    from .scenario import parse_scenario
    scn = parse_scenario(RL_TEXT.format(R=R, L=L))
    model = build_model(scn.topology, scn)
    cfg = SolverConfig(dt=dt, method=method, t_end=t_end, record_decimation=10**9)
    state = initial_state(model, "nominal")
    state.x[model.index("a.v")] += dv
    res = run(model, cfg, state)
    return float(res.state.x[model.index("l.i")])


def rl_exact(t: float, R: float = 2e-3, L: float = 10e-6, dv: float = 100.0) -> float:
    return dv / R * (1.0 - math.exp(-R * t / L))


def convergence_order(method: str, dt: float, t_end: float) -> float:
    e1 = abs(rl_benchmark(dt, method, t_end) - rl_exact(t_end))
    e2 = abs(rl_benchmark(dt / 2, method, t_end) - rl_exact(t_end))
    return math.log2(e1 / e2)


def check_order() -> CriterionResult:
    tau = 10e-6 / 2e-3
    p_rk4 = convergence_order("rk4", tau / 10, tau)
    p_eul = convergence_order("euler", tau / 100, tau)
    ok = p_rk4 >= 3.8 and p_eul >= 0.9
    return CriterionResult(6, "solver convergence order", ok,
                           f"RK4 {p_rk4:.3f} (need >= 3.8), Euler {p_eul:.3f} (need >= 0.9)")


# -- 7: steady state vs. algebraic network solve ----------------------------------

def algebraic_steady_state(scn: Scenario) -> dict:
    """Equilibrium of the closed loop, written out directly and solved with
    ``scipy.optimize.root``.

    Unknowns per PGM: the six states plus lambda; one current per line; one
    voltage per load; the secondary shift. At equilibrium every derivative is
    zero, each rectifier PI has no error (v_c_dc equals its droop reference, with
    the droop fed by i_dc) and the secondary PI holds the main bus at its setpoint.
    ESS currents decay to zero in high-pass mode and are left out.
    """
    topo = scn.topology
    droop = scn.droop
    pgms = [n for n in topo.nodes if n.kind == "pgm"]
    loads = [n for n in topo.nodes if n.kind != "pgm"]
    edges = list(topo.edges)
    ng, ne, nl = len(pgms), len(edges), len(loads)
    r_d = design_droop_resistances([droop.weights.get(g.id, 1.0) for g in pgms], droop.r_base)
    demand = {n.id: profile_eval(scn.profiles[n.id], scn.solver.t_end) if n.id in scn.profiles
              else 0.0 for n in loads}

    # AC reference: PGM equilibrium with the rectifier off
    refs = []
    for g in pgms:
        p = g.params
        w = 2 * math.pi * p.f
        A = np.array([[-p.R, w * p.L, -1, 0], [-w * p.L, -p.R, 0, -1],
                      [1, 0, 0, w * p.C], [0, 1, -w * p.C, 0]])
        sol = np.linalg.solve(A, [-p.v_ds, -p.v_qs, 0, 0])
        refs.append((sol[2], sol[3]))

    def unpack(z):
        return (z[:7 * ng].reshape(ng, 7), z[7 * ng:7 * ng + ne],
                z[7 * ng + ne:7 * ng + ne + nl], z[-1])

    def voltages(pg, vl):
        v = {g.id: pg[j, 5] for j, g in enumerate(pgms)}
        v.update({n.id: vl[j] for j, n in enumerate(loads)})
        return v

    def residual(z):
        pg, il, vl, dv = unpack(z)
        v = voltages(pg, vl)
        out = {n.id: 0.0 for n in topo.nodes}
        for m, e in enumerate(edges):
            out[e.from_node] += il[m]
            out[e.to_node] -= il[m]
        res = []
        for j, g in enumerate(pgms):
            p = g.params
            w = 2 * math.pi * p.f
            i_dL, i_qL, v_d, v_q, i_dc, v_c, lam = pg[j]
            c, s = math.cos(p.phi), math.sin(p.phi)
            v_dc = 1.5 * lam * K_I * (v_d * c + v_q * s)
            i_d, i_q = lam * K_I * c * i_dc, lam * K_I * s * i_dc
            res += [(p.v_ds + w * p.L * i_qL - p.R * i_dL - v_d) / p.v_ds,
                    (p.v_qs - w * p.L * i_dL - p.R * i_qL - v_q) / p.v_ds,
                    (i_dL + w * p.C * v_q - i_d) / 1e3,
                    (i_qL - w * p.C * v_d - i_q) / 1e3,
                    (v_dc - p.R_dc * i_dc - v_c) / p.v_ds,
                    (i_dc - v_c / p.R_d - out[g.id]) / 1e3,
                    (v_c - (droop.v_ref - r_d[j] * i_dc + dv)) / droop.v_ref]
        for m, e in enumerate(edges):
            res.append((v[e.from_node] - v[e.to_node] - e.R_line * il[m]) / droop.v_ref)
        for j, n in enumerate(loads):
            res.append((-demand[n.id] / vl[j] - vl[j] / n.params.R_L - out[n.id]) / 1e3)
        res.append((v[droop.main_bus] - droop.v_bus_ref) / droop.v_bus_ref)
        return np.array(res)

    v0 = droop.v_bus_ref
    z0 = np.zeros(7 * ng + ne + nl + 1)
    for j, g in enumerate(pgms):
        z0[7 * j:7 * j + 7] = [0, 0, refs[j][0], refs[j][1], 0, v0, 0.95]
    z0[7 * ng + ne:7 * ng + ne + nl] = v0
    sol = root(residual, z0, method="hybr", options={"xtol": 1e-13})
    if not sol.success:
        raise RuntimeError(f"steady-state solve failed: {sol.message}")
    pg, il, vl, dv = unpack(sol.x)
    out = {}
    for j, g in enumerate(pgms):
        for k, name in enumerate(("i_dL", "i_qL", "v_d", "v_q", "i_dc", "v_c_dc", "lambda")):
            out[f"{g.id}.{name}"] = pg[j, k]
    out.update({f"{e.id}.i": il[m] for m, e in enumerate(edges)})
    out.update({f"{n.id}.v": vl[j] for j, n in enumerate(loads)})
    out["dv_sec"] = dv
    out["_residual"] = float(np.abs(sol.fun).max())
    return out


def simulated_steady_state(scn: Scenario) -> dict:
    model = build_model(scn.topology, scn)
    res = run(model, scn.solver)
    if res.diverged is not None:
        raise res.diverged
    out = {name: float(res.state.x[i]) for i, name in enumerate(model.state_names)}
    for j, g in enumerate(model.pgm_ids):
        out[f"{g}.lambda"] = float(res.state.ctrl[model.ctrl_names.index(f"{g}.lambda")])
    out["dv_sec"] = float(res.state.ctrl[model.ctrl_names.index("sec.dv")])
    return out


def check_oracle(tol: float = 1e-3, scenario: str = "droop3") -> CriterionResult:
    scn = load_scenario(scenario)
    ref = algebraic_steady_state(scn)
    sim = simulated_steady_state(scn)
    worst, where = 0.0, ""
    for k, a in ref.items():
        if k.startswith("_") or k not in sim:
            continue
        err = abs(sim[k] - a) / abs(a)
        if err > worst:
            worst, where = err, k
    return CriterionResult(7, "steady state vs algebraic solve", worst <= tol,
                           f"worst rel error {worst:.2e} at {where} (tol {tol:g}); "
                           f"solve residual {ref['_residual']:.1e}")


# -- 8: determinism ----------------------------------------------------------------

def check_determinism(csv_first: str, t_end: float | None = None) -> CriterionResult:
    scn = load_scenario("sps4zone")
    if t_end is not None:
        scn = replace(scn, solver=replace(scn.solver, t_end=t_end))
    again = run(build_model(scn.topology, scn), scn.solver).series.to_csv()
    same = again.encode() == csv_first.encode()
    return CriterionResult(8, "determinism", same,
                           f"two sps4zone runs, {len(again)} CSV bytes, "
                           f"{'identical' if same else 'DIFFERENT'}")


def run_all(quick: bool = False) -> list[CriterionResult]:
    """All eight checks. ``quick`` shortens the sps4zone run to 10 s."""
    t_end = 10.0 if quick else None
    scn, result, csv, wall = sps4zone_run(t_end)
    return [
        check_sharing(scn, result, wall),
        check_regulation(scn, result),
        check_ess(scn, result),
        check_soc(),
        check_rectifier(),
        check_order(),
        check_oracle(),
        check_determinism(csv, t_end),
    ]
