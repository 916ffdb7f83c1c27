"""Hierarchical controls: droop (primary), bus-restoring PI (secondary),
rectifier feedforward + PI (device level), and ESS load-fluctuation compensation.

Every controller is a deterministic discrete-time map. The ``_*`` kernels are
numba-compiled and shared with the network integrator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba

from .components import K_V

HIGHPASS = 0
LOWPASS = 1
ESS_MODES = {"highpass": HIGHPASS, "lowpass": LOWPASS}

DEGENERATE_EPS = 1e-9


class DegenerateReference(ValueError):
    """The AC reference projects to (almost) zero on the rectifier axis."""


@dataclass(frozen=True)
class DroopConfig:
    v_d_ref: float
    r_d_init: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.r_d_init > 0:
            raise ValueError("droop r_d_init must be positive")
        if not self.weight > 0:
            raise ValueError("droop weight must be positive")


@dataclass
class PiState:
    """PI regulator with conditional-integration anti-windup.

    ``saturated`` reports whether the last output hit a limit; the integral is
    left untouched on those steps.
    """
    kp: float
    ki: float
    integral: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf
    saturated: bool = False


@dataclass
class EssCompensatorState:
    omega: float
    p_lp: float = 0.0
    mode: str = "highpass"

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("ESS compensator rate must be positive")
        if self.mode not in ESS_MODES:
            raise ValueError(f"unknown ESS mode {self.mode!r}")


# -- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _droop(v_d_ref, r_d, i_d, dv_b):
    return v_d_ref - r_d * i_d + dv_b


@numba.njit(cache=True)
def _pi_step(kp, ki, integral, e, dt, offset, lo, hi):
    """Returns (output, new_integral, saturated)."""
    trial = integral + e * dt
    u = offset + kp * e + ki * trial
    if u > hi:
        return hi, integral, True
    if u < lo:
        return lo, integral, True
    return u, trial, False


@numba.njit(cache=True)
def _feedforward(v_star, i_dc, R_dc, v_d_ref, v_q_ref, phi):
    den = v_d_ref * math.cos(phi) + v_q_ref * math.sin(phi)
    return (R_dc * i_dc + v_star) / (K_V * den)


@numba.njit(cache=True)
def _compensator_step(p_lp, p_load, omega, dt, mode):
    """Returns (P_ESS_ref, new p_lp).

    The low-pass state uses the exact zero-order-hold update, so a held load
    step decays exactly as exp(-omega * t) at the sample instants.
    """
    if mode == HIGHPASS:
        out = p_load - p_lp
    else:
        out = p_lp
    p_lp = p_lp + (p_load - p_lp) * (1.0 - math.exp(-omega * dt))
    return out, p_lp


# -- public API ---------------------------------------------------------------

def droop_command(cfg: DroopConfig, i_d_i: float, dv_b: float) -> float:
    """Droop voltage command shifted by the secondary correction."""
    return _droop(cfg.v_d_ref, cfg.r_d_init, i_d_i, dv_b)


def pi_update(pi: PiState, error: float, dt: float, offset: float = 0.0) -> float:
    if not dt > 0:
        raise ValueError("dt must be positive")
    u, pi.integral, pi.saturated = _pi_step(pi.kp, pi.ki, pi.integral, error, dt,
                                            offset, pi.lo, pi.hi)
    return u


def secondary_update(pi: PiState, v_b_star: float, v_b: float, dt: float) -> float:
    """Bus-restoring correction broadcast to every droop controller."""
    return pi_update(pi, v_b_star - v_b, dt)


def rectifier_feedforward(v_c_dc_star: float, i_dc: float, R_dc: float,
                          v_d_ref: float, v_q_ref: float, phi: float) -> float:
    den = v_d_ref * math.cos(phi) + v_q_ref * math.sin(phi)
    if abs(den) < DEGENERATE_EPS:
        raise DegenerateReference(
            f"AC reference ({v_d_ref}, {v_q_ref}) is orthogonal to phi={phi}")
    return _feedforward(v_c_dc_star, i_dc, R_dc, v_d_ref, v_q_ref, phi)


def rectifier_control(lam_ff: float, pi: PiState, v_c_dc_star: float,
                      v_c_dc: float, dt: float) -> float:
    """Firing coefficient in [0, 1]; the PI integral freezes while clamped."""
    pi.lo, pi.hi = 0.0, 1.0
    return pi_update(pi, v_c_dc_star - v_c_dc, dt, offset=lam_ff)


def ess_compensator_update(st: EssCompensatorState, p_load: float, dt: float) -> float:
    if not dt > 0:
        raise ValueError("dt must be positive")
    out, st.p_lp = _compensator_step(st.p_lp, p_load, st.omega, dt, ESS_MODES[st.mode])
    return out


def design_droop_resistances(weights, r_base: float) -> list[float]:
    """Virtual resistances giving steady-state currents proportional to ``weights``."""
    if not r_base > 0:
        raise ValueError("r_base must be positive")
    out = []
    for w in weights:
        if not w > 0:
            raise ValueError(f"sharing weight must be positive, got {w}")
        out.append(r_base / w)
    return out
