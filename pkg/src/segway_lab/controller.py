"""Discrete-time controller realization.

The deployed control law needs theta1_dot and theta2_dot but only the two
angles are measured, so each velocity is estimated by a first-order
high-pass ("dirty derivative"): an auxiliary state x obeying
dx/dt = a*x + b*theta, whose right-hand side a*x + b*theta serves directly
as the velocity estimate.  The control output is

    u = scale * (g1*v1 + g2*theta2 + g3*v2)

with v1, v2 the two estimates.  The theta1 filter feeds only the velocity
term; theta1 itself never enters u.

The filters are scalar and linear, so they are advanced by their exact
zero-order-hold discretization; the controller adds no integration error
of its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .synthesis import GainSet
from .textio import TextFormatError, format_floats, parse_float, parse_floats, parse_keyvalues, single

PAPER_GAINS = (0.43, 6.38, 1.09)
PAPER_SCALE = 0.3
PAPER_FILTER_POLE = -10.0
PAPER_FILTER_GAIN = 5.0
DEFAULT_SAMPLE_DT = 1e-3


@dataclass(frozen=True)
class ControllerConfig:
    """Gains applied to [velocity-estimate-1, theta2, velocity-estimate-2],
    an overall output scale, the shared filter pole/gain, and the sample
    period.  Optional symmetric saturation (None = unlimited)."""

    gains: tuple[float, float, float]
    scale: float
    filter_pole: float
    filter_gain: float
    sample_dt: float
    u_limit: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        if len(self.gains) != 3:
            raise ValueError(f"need exactly 3 gains, got {len(self.gains)}")
        if not self.filter_pole < 0:
            raise ValueError(f"filter_pole must be negative, got {self.filter_pole}")
        if not self.sample_dt > 0:
            raise ValueError(f"sample_dt must be positive, got {self.sample_dt}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.u_limit is not None and self.u_limit <= 0:
            raise ValueError(f"u_limit must be positive when set, got {self.u_limit}")


@dataclass(frozen=True)
class ObserverState:
    """Filter states for the two velocity estimators; reset is all-zero."""

    x1: float = 0.0
    x2: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise ValueError(f"observer state must be finite, got ({self.x1}, {self.x2})")


def step(cfg: ControllerConfig, s: ObserverState, theta1: float, theta2: float
         ) -> tuple[float, ObserverState]:
    """One controller sample: emit u from the current measurements and
    filter states, then advance the filters by one exact ZOH period."""
    a, b = cfg.filter_pole, cfg.filter_gain
    v1 = a * s.x1 + b * theta1
    v2 = a * s.x2 + b * theta2
    u = cfg.scale * (cfg.gains[0] * v1 + cfg.gains[1] * theta2 + cfg.gains[2] * v2)
    if cfg.u_limit is not None:
        u = max(-cfg.u_limit, min(cfg.u_limit, u))
    decay = math.exp(a * cfg.sample_dt)
    hold = (decay - 1.0) / a * b
    return u, ObserverState(x1=decay * s.x1 + hold * theta1,
                            x2=decay * s.x2 + hold * theta2)


def paper_controller(sample_dt: float = DEFAULT_SAMPLE_DT) -> ControllerConfig:
    """The bench controller: gains [0.43, 6.38, 1.09] scaled by 0.3, with
    dx/dt = -10 x + 5 theta velocity filters."""
    return ControllerConfig(
        gains=PAPER_GAINS,
        scale=PAPER_SCALE,
        filter_pole=PAPER_FILTER_POLE,
        filter_gain=PAPER_FILTER_GAIN,
        sample_dt=sample_dt,
    )


def from_gain_set(gs: GainSet, scale: float = 1.0, pole: float = PAPER_FILTER_POLE,
                  fgain: float = PAPER_FILTER_GAIN, dt: float = DEFAULT_SAMPLE_DT,
                  u_limit: float | None = None) -> ControllerConfig:
    """Wrap a synthesized output gain [k_th1dot, k_th2, k_th2dot] into a
    runtime configuration."""
    k = np.asarray(gs.k_out, dtype=float).ravel()
    return ControllerConfig(gains=(k[0], k[1], k[2]), scale=scale,
                            filter_pole=pole, filter_gain=fgain, sample_dt=dt,
                            u_limit=u_limit)


def format_config(cfg: ControllerConfig) -> str:
    lines = [
        "format = controller-config-v1",
        f"gains = {format_floats(cfg.gains)}",
        f"scale = {cfg.scale:.17g}",
        f"filter_pole = {cfg.filter_pole:.17g}",
        f"filter_gain = {cfg.filter_gain:.17g}",
        f"sample_dt = {cfg.sample_dt:.17g}",
    ]
    if cfg.u_limit is not None:
        lines.append(f"u_limit = {cfg.u_limit:.17g}")
    lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> ControllerConfig:
    fields = parse_keyvalues(text)
    fmt, line_no = single(fields, "format")
    if fmt != "controller-config-v1":
        raise TextFormatError(f"not a controller config (format = {fmt!r})", line_no)
    raw, ln = single(fields, "gains")
    gains = parse_floats(raw, ln, "gains", 3)
    scalars = {}
    for key in ("scale", "filter_pole", "filter_gain", "sample_dt"):
        raw, ln = single(fields, key)
        scalars[key] = parse_float(raw, ln, key)
    u_limit = None
    if "u_limit" in fields:
        raw, ln = single(fields, "u_limit")
        u_limit = parse_float(raw, ln, "u_limit")
    try:
        return ControllerConfig(gains=tuple(gains), u_limit=u_limit, **scalars)
    except ValueError as exc:
        raise TextFormatError(str(exc)) from exc
