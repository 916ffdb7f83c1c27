import math
from dataclasses import replace

import numpy as np
import pytest

from dcmg.scenario import parse_scenario
from dcmg.solver import (NumericalDivergence, SolverConfig, build_model, derivatives,
                         initial_state, run, simulate, step)

from conftest import TWO_NODE

RL = """
node a kind=pmm C_L=1e15
node b kind=pmm C_L=1e15
edge l from=a to=b R=2m L=10u
profile a 0:step:0
profile b 0:step:0
droop main_bus=a kp=0 ki=0
"""
R, L, DV = 2e-3, 10e-6, 100.0


def rl_current(dt, method, t_end):
    scn = parse_scenario(RL)
    model = build_model(scn.topology, scn)
    state = initial_state(model)
    state.x[model.index("a.v")] += DV
    cfg = SolverConfig(dt=dt, method=method, t_end=t_end, record_decimation=1)
    res = run(model, cfg, state)
    return res.series.t, res.series["i_l"]


def rl_exact(t):
    return DV / R * (1 - np.exp(-R * t / L))


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(dt=0)
    with pytest.raises(ValueError):
        SolverConfig(t_end=-1)
    with pytest.raises(ValueError):
        SolverConfig(method="midpoint")
    with pytest.raises(ValueError):
        SolverConfig(record_decimation=0)
    assert SolverConfig(dt=1e-5, t_end=1.0).n_steps == 100_000


def test_rl_step_response_rk4():
    t, i = rl_current(10e-6, "rk4", 0.02)
    exact = rl_exact(t)
    mask = t > 0
    assert np.max(np.abs(i[mask] - exact[mask]) / exact[mask]) <= 1e-4


@pytest.mark.parametrize("method, dt, order", [("rk4", 5e-4, 3.8), ("euler", 5e-5, 0.9)])
def test_convergence_order(method, dt, order):
    t_end = L / R
    errs = []
    for h in (dt, dt / 2, dt / 4):
        t, i = rl_current(h, method, t_end)
        errs.append(abs(i[-1] - rl_exact(t_end)))
    p = [math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])]
    assert min(p) >= order
    if method == "rk4":
        assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)


@pytest.mark.parametrize("method", ["rk4", "euler"])
def test_equilibrium_preserved(method):
    text = """
node a kind=pmm R_L=inf
node b kind=pcm R_L=inf
edge l from=a to=b R=2m L=10u
profile a 0:step:0
profile b 0:step:0
"""
    scn = parse_scenario(text)
    model = build_model(scn.topology, scn)
    x0 = initial_state(model).x.copy()
    res = run(model, SolverConfig(dt=1e-5, method=method, t_end=1.0, record_decimation=10**6))
    assert res.state.x.tobytes() == x0.tobytes()


def affine_equilibrium(model, state):
    """With lambda frozen and no load demand the network is affine in its state,
    so finite differences give the exact Jacobian and Newton lands in one pass."""
    s = state.copy()
    n = model.n_x
    for _ in range(3):
        f0 = derivatives(model, s, 0.0)
        J = np.empty((n, n))
        for k in range(n):
            h = 1e-3 * max(abs(s.x[k]), 1.0)
            sp, sm = s.copy(), s.copy()
            sp.x[k] += h
            sm.x[k] -= h
            J[:, k] = (derivatives(model, sp, 0.0) - derivatives(model, sm, 0.0)) / (2 * h)
        s.x -= np.linalg.solve(J, f0)
    return s


def test_pgm_equilibrium_with_frozen_controls(const_load_scenario):
    scn = replace(const_load_scenario, profiles={})
    model = build_model(scn.topology, scn)
    s0 = affine_equilibrium(model, initial_state(model))
    s = s0
    for k in range(20_000):
        s = step(model, s, k * 1e-5, 1e-5, update_controls=False)
    scale = np.maximum(np.abs(s0.x), 1.0)
    assert np.max(np.abs(s.x - s0.x) / scale) < 1e-9


def test_step_matches_run(const_load_scenario):
    model = build_model(const_load_scenario.topology, const_load_scenario)
    cfg = SolverConfig(dt=1e-5, t_end=1e-3, record_decimation=1000)
    res = run(model, cfg)
    s = initial_state(model)
    for k in range(100):
        s = step(model, s, k * 1e-5, 1e-5)
    assert s.x.tobytes() == res.state.x.tobytes()
    assert s.ctrl.tobytes() == res.state.ctrl.tobytes()


def test_derivatives_pure(const_load_scenario):
    model = build_model(const_load_scenario.topology, const_load_scenario)
    s = initial_state(model)
    assert derivatives(model, s, 0.1).tobytes() == derivatives(model, s, 0.1).tobytes()


def test_zero_duration_single_sample(const_load_scenario):
    cfg = replace(const_load_scenario.solver, t_end=0.0)
    series = simulate(const_load_scenario.topology, const_load_scenario, cfg)
    assert len(series) == 1 and series.t[0] == 0.0


def test_record_grid_and_columns(const_load_scenario):
    series = simulate(const_load_scenario.topology, const_load_scenario)
    assert series.columns == ["t_s", "v_g1", "v_m1", "i_l1", "ig_g1", "lambda_g1", "dv_sec"]
    np.testing.assert_allclose(np.diff(series.t), 1e-3, rtol=1e-9)
    assert series.t[-1] == pytest.approx(0.2)


def test_sps4zone_columns(sps4zone):
    model = build_model(sps4zone.topology, sps4zone)
    cols = model.columns()
    assert cols[0] == "t_s"
    assert sum(c.startswith("v_") for c in cols) == 9
    assert sum(c.startswith("i_") for c in cols) == 9
    assert sum(c.startswith("ig_") for c in cols) == 3
    assert sum(c.startswith("p_ess_") for c in cols) == 4
    assert sum(c.startswith("soc_") for c in cols) == 4
    assert sum(c.startswith("lambda_") for c in cols) == 3
    assert cols[-1] == "dv_sec"
    # 6 per PGM, 1 per line, 1 per load, 2 per ESS
    assert model.n_x == 6 * 3 + 9 + 6 + 2 * 4


def test_deterministic_csv(const_load_scenario):
    a = simulate(const_load_scenario.topology, const_load_scenario).to_csv()
    b = simulate(const_load_scenario.topology, const_load_scenario).to_csv()
    assert a.encode() == b.encode()


def test_divergence_reports_time_and_component():
    scn = parse_scenario(TWO_NODE + "profile m1 0:step:1M 0.05:step:200M\n"
                         "solver t_end=0.5\n")
    with pytest.raises(NumericalDivergence) as exc:
        simulate(scn.topology, scn)
    assert 0.05 < exc.value.t < 0.5
    assert exc.value.component in {"l1.i", "m1.v"} or exc.value.component.startswith("g1.")
    res = run(build_model(scn.topology, scn), scn.solver)
    assert res.diverged is not None
    assert res.series.t[-1] <= res.diverged.t


def test_csv_round_trip(const_load_scenario, tmp_path):
    series = simulate(const_load_scenario.topology, const_load_scenario)
    path = tmp_path / "out.csv"
    series.to_csv(path)
    back = type(series).from_csv(path)
    assert back.columns == series.columns
    np.testing.assert_allclose(back.data, series.data, rtol=1e-11)
