"""Averaged component models: PGM (rectifier + AC/DC filters), RL line, ESS, load.

The scalar kernels (``*_rhs`` / ``rectifier_map``) are compiled with numba so the
network integrator can call them from its jitted loop. The dataclass-level
functions are thin wrappers used by the library surface and tests.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numba
import numpy as np

SQRT3 = math.sqrt(3.0)
K_V = 3.0 * SQRT3 / math.pi    # v_dc per unit of lambda * v_d
K_I = 2.0 * SQRT3 / math.pi    # i_d per unit of lambda * i_dc

V_NOMINAL = 12_000.0


class ParameterError(ValueError):
    """A component parameter record violates its invariants."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


class _Params:
    """Shared helpers for the parameter records."""

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class PgmParams(_Params):
    L: float = 100e-6
    R: float = 0.01
    C: float = 100e-6
    f: float = 120.0
    L_dc: float = 200e-6
    R_dc: float = 0.01
    C_dc: float = 1e-3
    R_d: float = 1e6
    phi: float = 0.0
    v_ds: float = 7620.0
    v_qs: float = 0.0

    def __post_init__(self):
        for name in ("L", "C", "L_dc", "C_dc", "R_d", "f"):
            _require(getattr(self, name) > 0, f"PGM {name} must be positive")
        _require(self.R >= 0 and self.R_dc >= 0, "PGM resistances must be non-negative")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.f

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.R, self.C, self.omega, self.L_dc, self.R_dc,
                         self.C_dc, self.R_d, self.phi, self.v_ds, self.v_qs])


@dataclass(frozen=True)
class LoadParams(_Params):
    C_L: float = 1e-3
    R_L: float = 1e6
    v_floor: float = 0.01 * V_NOMINAL

    def __post_init__(self):
        _require(self.C_L > 0, "load C_L must be positive")
        _require(self.R_L > 0, "load R_L must be positive")
        _require(self.v_floor > 0, "load v_floor must be positive")


@dataclass(frozen=True)
class EssParams(_Params):
    omega_ess: float = 1.0
    Q_T: float = 10.0
    Q_0: float = 5.0
    p_min: float = -2e6
    p_max: float = 2e6

    def __post_init__(self):
        _require(self.omega_ess > 0, "ESS omega_ess must be positive")
        _require(self.Q_T > 0, "ESS Q_T must be positive")
        _require(0 <= self.Q_0 <= self.Q_T, "ESS Q_0 must lie in [0, Q_T]")
        _require(self.p_min <= 0 <= self.p_max, "ESS power limits must bracket zero")


@dataclass(frozen=True)
class PcmParams(_Params):
    """Load module plus shunt ESS; a PCM node carries both records."""
    C_L: float = 100e-6
    R_L: float = 1e6
    v_floor: float = 0.01 * V_NOMINAL
    omega_ess: float = 1.0
    Q_T: float = 10.0
    Q_0: float = 5.0
    p_min: float = -2e6
    p_max: float = 2e6

    def __post_init__(self):
        self.load
        self.ess

    @property
    def load(self) -> LoadParams:
        return LoadParams(self.C_L, self.R_L, self.v_floor)

    @property
    def ess(self) -> EssParams:
        return EssParams(self.omega_ess, self.Q_T, self.Q_0, self.p_min, self.p_max)


PmmParams = LoadParams

PARAM_TYPES = {"pgm": PgmParams, "pcm": PcmParams, "pmm": PmmParams}


@dataclass
class PgmState:
    i_dL: float = 0.0
    i_qL: float = 0.0
    v_d: float = 0.0
    v_q: float = 0.0
    i_dc: float = 0.0
    v_c_dc: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.i_dL, self.i_qL, self.v_d, self.v_q, self.i_dc, self.v_c_dc])

    @classmethod
    def from_array(cls, x) -> "PgmState":
        return cls(*(float(v) for v in x))


@dataclass
class EssState:
    i_ess: float = 0.0
    q_used: float = 0.0    # A*s, positive = charge delivered (discharge)


@dataclass
class LoadState:
    v_c_L: float = 0.0


@dataclass
class LineState:
    i_L_line: float = 0.0


# -- compiled kernels --------------------------------------------------------

@numba.njit(cache=True)
def rectifier_map(lam, phi, v_d, v_q, i_dc):
    """Ideal rectifier: returns (v_dc, i_d, i_q)."""
    c = math.cos(phi)
    s = math.sin(phi)
    v_dc = K_V * lam * (v_d * c + v_q * s)
    i_d = lam * K_I * c * i_dc
    i_q = lam * K_I * s * i_dc
    return v_dc, i_d, i_q


@numba.njit(cache=True)
def pgm_rhs(x, p, lam, i_g_in, out):
    """Six PGM derivatives into ``out``. ``p`` is ``PgmParams.as_array()``."""
    L, R, C, w, L_dc, R_dc, C_dc, R_d, phi, v_ds, v_qs = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10])
    i_dL, i_qL, v_d, v_q, i_dc, v_c = x[0], x[1], x[2], x[3], x[4], x[5]
    v_dc, i_d, i_q = rectifier_map(lam, phi, v_d, v_q, i_dc)
    out[0] = (v_ds + w * L * i_qL - R * i_dL - v_d) / L
    out[1] = (v_qs - w * L * i_dL - R * i_qL - v_q) / L
    out[2] = (i_dL + w * C * v_q - i_d) / C
    out[3] = (i_qL - w * C * v_d - i_q) / C
    out[4] = (v_dc - R_dc * i_dc - v_c) / L_dc
    # DC capacitor uses C_dc; the AC-side C would give a 10x faster node
    out[5] = (i_dc - v_c / R_d - i_g_in) / C_dc


@numba.njit(cache=True)
def line_rhs(i, v_in, v_out, R_line, L_line):
    return (v_in - v_out - R_line * i) / L_line


@numba.njit(cache=True)
def ess_rhs(i_ess, i_ref, omega_ess):
    return omega_ess * (i_ref - i_ess)


@numba.njit(cache=True)
def load_rhs(v, P, i_in, C_L, R_L, v_floor):
    return (-P / max(v, v_floor) - v / R_L + i_in) / C_L


@numba.njit(cache=True)
def soc_value(q_used, Q_0, Q_T):
    return (Q_0 - q_used / 3600.0) / Q_T


@numba.njit(cache=True)
def saturate_ess_current(i_ref, v_b, soc, p_min, p_max, v_floor):
    """Clamp an ESS current reference to the power limits and the SOC range."""
    v = max(v_b, v_floor)
    i_hi = p_max / v
    i_lo = p_min / v
    if i_ref > i_hi:
        i_ref = i_hi
    elif i_ref < i_lo:
        i_ref = i_lo
    if soc <= 0.0 and i_ref > 0.0:
        i_ref = 0.0
    elif soc >= 1.0 and i_ref < 0.0:
        i_ref = 0.0
    return i_ref


# -- dataclass-level API -----------------------------------------------------

def pgm_derivatives(state: PgmState, params: PgmParams, lam: float, i_g_in: float) -> PgmState:
    out = np.empty(6)
    pgm_rhs(state.as_array(), params.as_array(), float(lam), float(i_g_in), out)
    return PgmState.from_array(out)


def line_derivative(state: LineState, v_in: float, v_out: float, R_line: float, L_line: float) -> float:
    return line_rhs(state.i_L_line, v_in, v_out, R_line, L_line)


def ess_derivative(state: EssState, i_ess_ref: float, omega_ess: float) -> float:
    return ess_rhs(state.i_ess, i_ess_ref, omega_ess)


def soc(state: EssState, params: EssParams) -> float:
    """Coulomb-counted state of charge, clipped to [0, 1]."""
    return min(1.0, max(0.0, soc_value(state.q_used, params.Q_0, params.Q_T)))


def soc_from_energy(energy_used: float, v_b: float, params: EssParams) -> float:
    """SOC from integrated battery power (J) at measured bus voltage ``v_b``.

    ``energy_used`` is in W*s; the 1/3600 factor converts it to W*h against a
    capacity expressed in A*h times volts.
    """
    return (params.Q_0 * v_b - energy_used / 3600.0) / (params.Q_T * v_b)


def load_derivative(state: LoadState, params: LoadParams, P_i: float, i_in: float) -> float:
    return load_rhs(state.v_c_L, P_i, i_in, params.C_L, params.R_L, params.v_floor)


def pgm_steady_state(params: PgmParams, lam: float, i_g_in: float = 0.0) -> PgmState:
    """Equilibrium of the PGM for a frozen firing coefficient and constant draw.

    With lambda fixed the PGM is affine in its state, so the equilibrium is one
    linear solve.
    """
    L, R, C, w, L_dc, R_dc, C_dc, R_d, phi, v_ds, v_qs = params.as_array()
    c, s = math.cos(phi), math.sin(phi)
    kd, kq = lam * K_I * c, lam * K_I * s
    kv = K_V * lam
    # rows: L*di_dL, L*di_qL, C*dv_d, C*dv_q, L_dc*di_dc, C_dc*dv_c
    A = np.array([
        [-R, w * L, -1.0, 0.0, 0.0, 0.0],
        [-w * L, -R, 0.0, -1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, w * C, -kd, 0.0],
        [0.0, 1.0, -w * C, 0.0, -kq, 0.0],
        [0.0, 0.0, kv * c, kv * s, -R_dc, -1.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, -1.0 / R_d],
    ])
    b = np.array([-v_ds, -v_qs, 0.0, 0.0, 0.0, i_g_in])
    return PgmState.from_array(np.linalg.solve(A, b))


def ac_reference(params: PgmParams) -> tuple[float, float]:
    """No-load AC capacitor voltages (v_d, v_q), used as the rectifier's AC reference."""
    st = pgm_steady_state(params, 0.0, 0.0)
    return st.v_d, st.v_q
