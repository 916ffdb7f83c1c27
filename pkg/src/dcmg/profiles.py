"""Piecewise load-demand profiles P(t).

Segment kinds:
  step  -- jump to ``level`` at ``t_start`` (left-closed: the new level applies at t_start)
  ramp  -- linear from the level in effect at ``t_start`` to ``level`` at the next segment's start
  hold  -- keep the level in effect at ``t_start``
Before the first segment the demand is zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

STEP, RAMP, HOLD = 0, 1, 2
KINDS = {"step": STEP, "ramp": RAMP, "hold": HOLD}
KIND_NAMES = {v: k for k, v in KINDS.items()}


@dataclass(frozen=True)
class Segment:
    t_start: float
    kind: str
    level: float = 0.0


@dataclass(frozen=True)
class LoadProfile:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self):
        prev = -np.inf
        for i, seg in enumerate(self.segments):
            if seg.kind not in KINDS:
                raise ValueError(f"unknown segment kind {seg.kind!r}")
            if not seg.t_start > prev:
                raise ValueError("profile segments must be strictly time-sorted")
            if seg.t_start < 0:
                raise ValueError("profile segments start at t >= 0")
            if seg.level < 0:
                raise ValueError("profile levels must be non-negative")
            if seg.kind == "ramp" and i == len(self.segments) - 1:
                raise ValueError("a ramp must be followed by another segment that ends it")
            prev = seg.t_start

    @classmethod
    def constant(cls, level: float) -> "LoadProfile":
        return cls((Segment(0.0, "step", level),))

    @classmethod
    def steps(cls, points) -> "LoadProfile":
        """``points``: iterable of (t_start, level)."""
        return cls(tuple(Segment(float(t), "step", float(p)) for t, p in points))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = np.array([s.t_start for s in self.segments], dtype=np.float64)
        k = np.array([KINDS[s.kind] for s in self.segments], dtype=np.int64)
        lv = np.array([s.level for s in self.segments], dtype=np.float64)
        return t, k, lv

    def step_times(self) -> list[float]:
        """Instants where the demand changes discontinuously (t > 0)."""
        out = []
        level = 0.0
        for seg in self.segments:
            if seg.kind == "step":
                if seg.level != level and seg.t_start > 0:
                    out.append(seg.t_start)
                level = seg.level
            elif seg.kind == "ramp":
                level = seg.level
        return out


@numba.njit(cache=True)
def profile_value(t, ts, kinds, levels, lo, hi):
    """Evaluate the segments ``lo:hi`` of the packed arrays at time ``t``."""
    value = 0.0
    start_level = 0.0
    for k in range(lo, hi):
        if t < ts[k]:
            break
        kind = kinds[k]
        if kind == STEP:
            value = levels[k]
            start_level = value
        elif kind == HOLD:
            value = start_level
        else:
            t_end = ts[k + 1]
            if t >= t_end:
                value = levels[k]
            else:
                value = start_level + (levels[k] - start_level) * (t - ts[k]) / (t_end - ts[k])
            start_level = levels[k]
    return value


def profile_eval(profile: LoadProfile, t: float) -> float:
    if t < 0:
        raise ValueError("profile time must be non-negative")
    ts, kinds, levels = profile.arrays()
    return profile_value(float(t), ts, kinds, levels, 0, len(ts))
