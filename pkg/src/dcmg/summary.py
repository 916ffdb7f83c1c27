"""Run metrics computed from the recorded time series (the same columns as the CSV)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .solver import TimeSeries

SETTLING_BAND = 0.005       # +-0.5 % of the bus setpoint
WINDOW_FRACTION = 0.2       # steady-state window: final 20 % of each interval


@dataclass
class IntervalSharing:
    t_start: float
    t_end: float
    currents: dict            # mean injected current per PGM over the window (A)
    shares: dict              # current / total
    rel_error: dict           # share / (weight / total weight) - 1


@dataclass
class StepRegulation:
    t_step: float
    t_next: float
    max_deviation: float      # V, over [t_step, t_next)
    settling_time: float | None   # s after the step; None if never inside the band for good
    offset: float             # mean deviation over the final window (V)

    @property
    def settled(self) -> bool:
        return self.settling_time is not None


@dataclass
class EssStats:
    peak_power: float         # W, signed value at max |P|
    net_energy: float         # J delivered (positive = discharge)


@dataclass
class RunSummary:
    band: float
    v_bus_ref: float
    main_bus: str
    sharing: list[IntervalSharing] = field(default_factory=list)
    regulation: list[StepRegulation] = field(default_factory=list)
    ess: dict = field(default_factory=dict)
    diverged: bool = False
    divergence: str | None = None

    @property
    def max_sharing_error(self) -> float:
        errs = [abs(e) for s in self.sharing for e in s.rel_error.values()]
        return max(errs) if errs else float("nan")

    @property
    def max_bus_deviation(self) -> float:
        devs = [r.max_deviation for r in self.regulation]
        return max(devs) if devs else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_sharing_error"] = self.max_sharing_error
        d["max_bus_deviation"] = self.max_bus_deviation
        for r, rd in zip(self.regulation, d["regulation"]):
            rd["settled"] = r.settled
        return d

    def to_text(self) -> str:
        lines = [f"main bus {self.main_bus}: setpoint {self.v_bus_ref:g} V, "
                 f"settling band +-{self.band * 100:g} %"]
        if self.diverged:
            lines.append(f"DIVERGED: {self.divergence}")
        lines.append("power sharing (final {:g} % of each interval):".format(WINDOW_FRACTION * 100))
        for s in self.sharing:
            cur = " ".join(f"{k}={v:.2f}A" for k, v in s.currents.items())
            shr = " ".join(f"{k}={v:.4f}" for k, v in s.shares.items())
            lines.append(f"  [{s.t_start:g}, {s.t_end:g}) s  {cur}  shares {shr}  "
                         f"max rel err {max(abs(e) for e in s.rel_error.values()):.2e}")
        lines.append("bus regulation after each load step:")
        for r in self.regulation:
            st = f"{r.settling_time:.3f} s" if r.settled else "not settled"
            lines.append(f"  step {r.t_step:g} s: max dev {r.max_deviation:.1f} V, "
                         f"settling {st}, final offset {r.offset:.2f} V")
        lines.append("ESS:")
        for k, e in self.ess.items():
            lines.append(f"  {k}: peak {e.peak_power / 1e3:.1f} kW, net energy "
                         f"{e.net_energy / 3.6e6:.3f} kWh")
        return "\n".join(lines)


def _window(t: np.ndarray, a: float, b: float, fraction: float) -> np.ndarray:
    lo = b - fraction * (b - a)
    return (t >= lo) & (t < b) if b < t[-1] else (t >= lo) & (t <= b)


def summarize(series: TimeSeries, weights: dict, main_bus: str, v_bus_ref: float,
              step_times, t_end: float | None = None, band: float = SETTLING_BAND,
              window_fraction: float = WINDOW_FRACTION,
              divergence: str | None = None) -> RunSummary:
    """Sharing, regulation and ESS metrics over the intervals between load steps."""
    summary = RunSummary(band, v_bus_ref, main_bus, diverged=divergence is not None,
                         divergence=divergence)
    t = series.t
    if len(t) == 0:
        return summary
    t_end = t[-1] if t_end is None else min(t_end, t[-1])
    edges = [0.0] + [s for s in step_times if 0 < s < t_end] + [t_end]
    pgms = [c[3:] for c in series.columns if c.startswith("ig_")]
    w_total = sum(weights.get(g, 1.0) for g in pgms)
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        mask = _window(t, a, b, window_fraction)
        if not mask.any():
            continue
        currents = {g: float(series[f"ig_{g}"][mask].mean()) for g in pgms}
        total = sum(currents.values())
        shares = {g: (c / total if total else float("nan")) for g, c in currents.items()}
        rel = {g: shares[g] / (weights.get(g, 1.0) / w_total) - 1.0 for g in pgms}
        summary.sharing.append(IntervalSharing(a, b, currents, shares, rel))

    v = series[f"v_{main_bus}"]
    tol = band * v_bus_ref
    for a, b in zip(edges[1:-1], edges[2:]):
        mask = (t >= a) & ((t < b) if b < t[-1] else (t <= b))
        if not mask.any():
            continue
        tt, dev = t[mask], v[mask] - v_bus_ref
        outside = np.nonzero(np.abs(dev) > tol)[0]
        if len(outside) == 0:
            settling = 0.0
        elif outside[-1] == len(tt) - 1:
            settling = None
        else:
            settling = float(tt[outside[-1] + 1] - a)
        final = _window(t, a, b, window_fraction)
        summary.regulation.append(StepRegulation(
            a, b, float(np.abs(dev).max()), settling, float((v[final] - v_bus_ref).mean())))

    for c in series.columns:
        if c.startswith("p_ess_"):
            p = series[c]
            k = int(np.argmax(np.abs(p)))
            energy = float(np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(t))) if len(t) > 1 else 0.0
            summary.ess[c[6:]] = EssStats(float(p[k]), energy)
    return summary


def summarize_scenario(series: TimeSeries, scenario, divergence: str | None = None) -> RunSummary:
    return summarize(series, scenario.droop.weights, scenario.droop.main_bus,
                     scenario.droop.v_bus_ref, scenario.step_times(), scenario.solver.t_end,
                     divergence=divergence)
