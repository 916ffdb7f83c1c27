import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from dcmg.components import (EssParams, EssState, LineState, LoadParams, LoadState, ParameterError,
                             PcmParams, PgmParams, PgmState, ac_reference, ess_derivative,
                             line_derivative, load_derivative, pgm_derivatives,
                             pgm_steady_state, rectifier_map, saturate_ess_current, soc,
                             soc_from_energy)
from dcmg.control import rectifier_feedforward


def test_table_defaults():
    p = PgmParams()
    assert (p.L, p.R, p.C, p.f) == (100e-6, 0.01, 100e-6, 120.0)
    assert (p.L_dc, p.R_dc, p.C_dc, p.R_d) == (200e-6, 0.01, 1e-3, 1e6)
    assert p.omega == pytest.approx(2 * math.pi * 120)
    assert PcmParams().C_L == 100e-6 and PcmParams().Q_T == 10.0
    assert PcmParams().omega_ess == 1.0
    assert LoadParams().C_L == 1e-3       # PMM
    assert LoadParams().v_floor == pytest.approx(0.01 * 12000)
    assert EssParams().Q_0 == 0.5 * EssParams().Q_T


@pytest.mark.parametrize("kw", [dict(L=0), dict(C_dc=-1), dict(R=-0.1), dict(f=0)])
def test_pgm_param_invariants(kw):
    with pytest.raises(ParameterError):
        PgmParams(**kw)


def test_ess_param_invariants():
    with pytest.raises(ParameterError):
        EssParams(Q_0=11.0, Q_T=10.0)
    with pytest.raises(ParameterError):
        EssParams(omega_ess=0.0)


def test_rectifier_full_firing_gives_12kv():
    v_d = 12000 * math.pi / (3 * math.sqrt(3))
    assert v_d == pytest.approx(7255.2, abs=0.05)
    v_dc, _, _ = rectifier_map(1.0, 0.0, v_d, 0.0, 123.0)
    assert v_dc == pytest.approx(12000.0, rel=1e-12)


def test_rectifier_zero_firing():
    assert rectifier_map(0.0, 0.3, 7000.0, 100.0, 50.0) == (0.0, 0.0, 0.0)


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 1), st.floats(-math.pi, math.pi), st.floats(-2e4, 2e4),
       st.floats(-2e4, 2e4), st.floats(-5e3, 5e3))
def test_rectifier_lossless(lam, phi, v_d, v_q, i_dc):
    v_dc, i_d, i_q = rectifier_map(lam, phi, v_d, v_q, i_dc)
    scale = 1.66 * abs(lam * i_dc) * (abs(v_d) + abs(v_q))
    assert abs(1.5 * (v_d * i_d + v_q * i_q) - v_dc * i_dc) <= 8 * np.finfo(float).eps * scale + 1e-300


def pgm_oracle(p, lam, i_g):
    """PGM equilibrium by a generic root finder on the written-out equations."""
    w = 2 * math.pi * p.f
    k = 2 * math.sqrt(3) / math.pi

    def f(x):
        i_dL, i_qL, v_d, v_q, i_dc, v_c = x
        v_dc = 1.5 * lam * k * (v_d * math.cos(p.phi) + v_q * math.sin(p.phi))
        return [(p.v_ds + w * p.L * i_qL - p.R * i_dL - v_d) / 1e3,
                (p.v_qs - w * p.L * i_dL - p.R * i_qL - v_q) / 1e3,
                i_dL + w * p.C * v_q - lam * k * math.cos(p.phi) * i_dc,
                i_qL - w * p.C * v_d - lam * k * math.sin(p.phi) * i_dc,
                (v_dc - p.R_dc * i_dc - v_c) / 1e3,
                i_dc - v_c / p.R_d - i_g]
    return fsolve(f, [0, 0, p.v_ds, 0, i_g, 12000], xtol=1e-12)


@pytest.mark.parametrize("phi, i_g", [(0.0, 0.0), (0.0, 300.0), (0.2, 150.0)])
def test_pgm_equilibrium_matches_root_finder(phi, i_g):
    p = PgmParams(phi=phi)
    v_d0, v_q0 = ac_reference(p)
    lam = rectifier_feedforward(12000.0, 0.0, p.R_dc, v_d0, v_q0, phi)
    ss = pgm_steady_state(p, lam, i_g)
    np.testing.assert_allclose(ss.as_array(), pgm_oracle(p, lam, i_g), rtol=1e-8, atol=1e-6)
    d = pgm_derivatives(ss, p, lam, i_g).as_array()
    # per-unit: currents on 1 kA, voltages on 12 kV, per second
    scale = np.array([1e3, 1e3, 12e3, 12e3, 1e3, 12e3])
    assert np.all(np.abs(d / scale) < 1e-6)


def test_pgm_origin_is_equilibrium():
    p = PgmParams(v_ds=0.0, v_qs=0.0)
    d = pgm_derivatives(PgmState(0, 0, 0, 0, 0, 0), p, 0.0, 0.0)
    assert not np.any(d.as_array())


def test_pgm_draw_step_only_hits_dc_capacitor():
    p = PgmParams()
    ss = pgm_steady_state(p, 0.95, 0.0)
    d0 = pgm_derivatives(ss, p, 0.95, 0.0).as_array()
    d1 = pgm_derivatives(ss, p, 0.95, 200.0).as_array()
    np.testing.assert_array_equal(d1[:5], d0[:5])
    assert d1[5] - d0[5] == pytest.approx(-200.0 / p.C_dc)


def test_pgm_derivatives_are_pure():
    p = PgmParams()
    s = PgmState(10.0, -3.0, 7000.0, 50.0, 400.0, 11990.0)
    a = pgm_derivatives(s, p, 0.9, 380.0).as_array()
    b = pgm_derivatives(s, p, 0.9, 380.0).as_array()
    assert a.tobytes() == b.tobytes()


def test_line_derivative():
    assert line_derivative(LineState(0.0), 12000, 12000, 0.01, 1e-5) == 0.0
    assert line_derivative(LineState(10_000.0), 12100, 12000, 0.01, 1e-5) == pytest.approx(0.0)
    assert line_derivative(LineState(0.0), 12100, 12000, 0.01, 1e-5) == pytest.approx(1e7)


def test_line_step_response_against_ode_oracle():
    R, L, dv = 2e-3, 10e-6, 100.0
    sol = solve_ivp(lambda t, y: [line_derivative(LineState(y[0]), dv, 0.0, R, L)], (0, 0.02),
                    [0.0], rtol=1e-11, atol=1e-9, dense_output=True)
    t = np.linspace(0, 0.02, 50)
    np.testing.assert_allclose(sol.sol(t)[0], dv / R * (1 - np.exp(-R * t / L)),
                               rtol=1e-6, atol=1e-6)


def test_ess_derivative_and_step_response():
    assert ess_derivative(EssState(5.0, 0.0), 5.0, 1.0) == 0.0
    sol = solve_ivp(lambda t, y: [ess_derivative(EssState(y[0], 0.0), 80.0, 2.0)], (0, 3),
                    [0.0], rtol=1e-10, atol=1e-10, t_eval=[0.5, 1.0, 3.0])
    np.testing.assert_allclose(sol.y[0], 80 * (1 - np.exp(-2 * sol.t)), rtol=1e-7)


def test_ess_saturation():
    v = 12000.0
    assert saturate_ess_current(1e4, v, 0.5, -2e6, 2e6, 120) == pytest.approx(2e6 / v)
    assert saturate_ess_current(-1e4, v, 0.5, -2e6, 2e6, 120) == pytest.approx(-2e6 / v)
    # empty battery refuses to discharge, full battery refuses to charge
    assert saturate_ess_current(50.0, v, 0.0, -2e6, 2e6, 120) == 0.0
    assert saturate_ess_current(-50.0, v, 0.0, -2e6, 2e6, 120) == -50.0
    assert saturate_ess_current(-50.0, v, 1.0, -2e6, 2e6, 120) == 0.0
    # effective reference 0 drives i_ESS back toward zero
    assert ess_derivative(EssState(30.0, 0.0), 0.0, 1.0) < 0


def test_soc_cases():
    full = EssParams(Q_T=10.0, Q_0=10.0)
    assert soc(EssState(0.0, 0.0), full) == 1.0
    assert soc(EssState(10.0, 10.0 * 3600), full) == pytest.approx(0.0, abs=1e-9)
    half = EssParams(Q_T=10.0, Q_0=5.0)
    assert soc(EssState(-5.0, -5.0 * 1800), half) == pytest.approx(0.75, abs=1e-12)
    # clipped to the unit interval
    assert soc(EssState(0.0, 1e6), half) == 0.0


@given(st.floats(0, 100), st.floats(1, 3600))
def test_soc_monotone_in_discharge(i, t):
    p = EssParams()
    assert soc(EssState(i, i * t), p) <= soc(EssState(0.0, 0.0), p)


def test_soc_power_form_agrees_at_constant_voltage():
    p = EssParams(Q_T=10.0, Q_0=10.0)
    v, i, t = 12000.0, 4.0, 900.0
    assert soc_from_energy(v * i * t, v, p) == pytest.approx(soc(EssState(i, i * t), p), abs=1e-12)


def test_load_derivative():
    lp = LoadParams(C_L=1e-3, R_L=1e6)
    assert load_derivative(LoadState(12000.0), lp, 0.0, 12000.0 / 1e6) == 0.0
    # 1.2 MW at 12 kV draws 100 A
    d = load_derivative(LoadState(12000.0), lp, 1.2e6, 100.0 + 12000.0 / 1e6)
    assert d == pytest.approx(0.0, abs=1e-9)
    # below the floor the draw is bounded by P / v_floor
    d_low = load_derivative(LoadState(1.0), lp, 1.2e6, 0.0)
    assert d_low == pytest.approx((-1.2e6 / lp.v_floor - 1.0 / lp.R_L) / lp.C_L)
