"""Closed-loop time-domain simulation with the rider-tilt disturbance.

The rider is a second inverted pendulum leaned by hand; its tilt phi(t)
enters the plant as w = coupling_gain * phi through the same input column
as the motor torque.  A run integrates

    dx/dt = A x + B2 u + B1 w

with classical fixed-step RK4.  Inputs are zero-order held over each step
(w sampled at the step start, u held at the controller's own rate), which
makes every trace exactly reproducible and lets the live teleop session
and the batch simulator walk bit-identical trajectories.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import controller as ctrl_mod
from . import synthesis
from .controller import ControllerConfig, ObserverState
from .plant import PlantState, StateSpace, load_params, assemble_linear_model, preset_ecp220
from .textio import TextFormatError, format_floats, parse_float, parse_floats, parse_keyvalues, single

DIVERGENCE_NORM = 1e6
CSV_HEADER = "t,theta1,theta1_dot,theta2,theta2_dot,u,w,z1,z2,z3"
DEFAULT_COUPLING_GAIN = 0.2
PAPER_COUNTS_PER_REV = 16000


class SimulationDiverged(RuntimeError):
    """State norm passed the divergence guard; carries the partial trace."""

    def __init__(self, trace: "SimTrace", at_time: float):
        self.trace = trace
        self.at_time = at_time
        super().__init__(f"state norm exceeded {DIVERGENCE_NORM:g} at t = {at_time:.6g} s")


@dataclass(frozen=True)
class DisturbanceProfile:
    """Tilt schedule as (time, phi) breakpoints plus the coupling gain.

    ``interp`` is "hold" (piecewise constant, left-closed) or "linear".
    Times must be sorted and tilts bounded by pi/2 (the rider cannot lean
    past horizontal).
    """

    breakpoints: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    coupling_gain: float = DEFAULT_COUPLING_GAIN
    interp: str = "hold"

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if not pts:
            raise ValueError("schedule needs at least one breakpoint")
        times = [t for t, _ in pts]
        if any(not math.isfinite(t) or not math.isfinite(v) for t, v in pts):
            raise ValueError("schedule entries must be finite")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError(f"schedule times must be strictly increasing, got {times}")
        if any(abs(v) > math.pi / 2 for _, v in pts):
            raise ValueError("|tilt| is limited to pi/2")
        if self.interp not in ("hold", "linear"):
            raise ValueError(f"interp must be 'hold' or 'linear', got {self.interp!r}")

    def phi(self, t: float) -> float:
        times = [bp[0] for bp in self.breakpoints]
        values = [bp[1] for bp in self.breakpoints]
        if t <= times[0]:
            return values[0] if t == times[0] else 0.0
        if self.interp == "hold":
            idx = np.searchsorted(times, t, side="right") - 1
            return values[idx]
        return float(np.interp(t, times, values))

    def w(self, t: float) -> float:
        return self.coupling_gain * self.phi(t)

    def negated(self) -> "DisturbanceProfile":
        return replace(self, breakpoints=tuple((t, -v) for t, v in self.breakpoints))


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    duration: float = 15.0
    quantize: bool = True
    counts_per_rev: int = PAPER_COUNTS_PER_REV
    rng_seed: int = 0   # recorded for reproducibility; no stochastic terms yet

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ValueError(f"duration must be at least one step, got {self.duration}")
        if int(self.counts_per_rev) <= 0:
            raise ValueError(f"counts_per_rev must be positive, got {self.counts_per_rev}")
        object.__setattr__(self, "counts_per_rev", int(self.counts_per_rev))


@dataclass
class SimTrace:
    """Uniformly sampled run record; z = [theta1, theta2, u]."""

    t: np.ndarray
    theta1: np.ndarray
    theta1_dot: np.ndarray
    theta2: np.ndarray
    theta2_dot: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def state_at(self, index: int) -> np.ndarray:
        return np.array([self.theta1[index], self.theta1_dot[index],
                         self.theta2[index], self.theta2_dot[index]])

    def index_at(self, time: float) -> int:
        dt = self.t[1] - self.t[0] if len(self.t) > 1 else 1.0
        idx = int(round(time / dt))
        if not 0 <= idx < len(self.t):
            raise IndexError(f"t = {time} outside trace [0, {self.t[-1]}]")
        return idx

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for i in range(len(self.t)):
            row = (self.t[i], self.theta1[i], self.theta1_dot[i], self.theta2[i],
                   self.theta2_dot[i], self.u[i], self.w[i],
                   self.z[i, 0], self.z[i, 1], self.z[i, 2])
            out.write(",".join(f"{v:.8e}" for v in row) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SimTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != CSV_HEADER:
            raise ValueError(f"bad trace header: {lines[0] if lines else '(empty)'}")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        if data.ndim != 2 or data.shape[1] != 10:
            raise ValueError("trace rows must have 10 columns")
        return cls(t=data[:, 0], theta1=data[:, 1], theta1_dot=data[:, 2],
                   theta2=data[:, 3], theta2_dot=data[:, 4], u=data[:, 5],
                   w=data[:, 6], z=data[:, 7:10])


class _TraceBuilder:
    def __init__(self):
        self.rows = []

    def add(self, t, x, u, w, z):
        self.rows.append((t, x[0], x[1], x[2], x[3], u, w, z[0], z[1], z[2]))

    def build(self) -> SimTrace:
        arr = np.array(self.rows) if self.rows else np.zeros((0, 10))
        return SimTrace(t=arr[:, 0], theta1=arr[:, 1], theta1_dot=arr[:, 2],
                        theta2=arr[:, 3], theta2_dot=arr[:, 4], u=arr[:, 5],
                        w=arr[:, 6], z=arr[:, 7:10])


def quantize_angle(theta: float, counts_per_rev: int) -> float:
    """Encoder model: round toward zero to a multiple of 2*pi/counts."""
    if counts_per_rev <= 0:
        raise ValueError(f"counts_per_rev must be positive, got {counts_per_rev}")
    resolution = 2.0 * math.pi / counts_per_rev
    return math.trunc(theta / resolution) * resolution


def rk4_step(A: np.ndarray, forcing: np.ndarray, x: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step of dx/dt = A x + forcing, forcing constant."""
    k1 = A @ x + forcing
    k2 = A @ (x + 0.5 * dt * k1) + forcing
    k3 = A @ (x + 0.5 * dt * k2) + forcing
    k4 = A @ (x + dt * k3) + forcing
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class ClosedLoopStepper:
    """Single-step closed-loop core shared by batch runs and live teleop.

    Holds the plant, the controller (stepped at its own sample period,
    zero-order held in between), the encoder model, and the current state.
    """

    def __init__(self, ss: StateSpace, cfg_ctrl: ControllerConfig, cfg: SimConfig,
                 x0: PlantState | None = None):
        ss.validate()
        self.ss = ss
        self.cfg_ctrl = cfg_ctrl
        self.cfg = cfg
        self.x = np.zeros(4) if x0 is None else x0.as_array()
        self.obs = ObserverState()
        self.u = 0.0
        self.t = 0.0
        self._ctrl_due = 0.0

    def reset(self, x0: PlantState | None = None) -> None:
        self.x = np.zeros(4) if x0 is None else x0.as_array()
        self.obs = ObserverState()
        self.u = 0.0
        self.t = 0.0
        self._ctrl_due = 0.0

    def measurements(self) -> tuple[float, float]:
        th1, th2 = float(self.x[0]), float(self.x[2])
        if self.cfg.quantize:
            th1 = quantize_angle(th1, self.cfg.counts_per_rev)
            th2 = quantize_angle(th2, self.cfg.counts_per_rev)
        return th1, th2

    def sample(self, w: float):
        """Update the held u if a controller sample is due, then report the
        row (t, x, u, w, z) for the current instant."""
        th1, th2 = self.measurements()
        while self._ctrl_due <= self.t + 1e-12:
            self.u, self.obs = ctrl_mod.step(self.cfg_ctrl, self.obs, th1, th2)
            self._ctrl_due += self.cfg_ctrl.sample_dt
        z = self.ss.C1 @ self.x + self.ss.D12[:, 0] * self.u
        return self.t, self.x.copy(), self.u, w, z

    def advance(self, w: float) -> None:
        """Integrate one dt with the held u and the given w."""
        forcing = self.ss.B2[:, 0] * self.u + self.ss.B1[:, 0] * w
        self.x = rk4_step(self.ss.A, forcing, self.x, self.cfg.dt)
        self.t += self.cfg.dt
        norm = float(np.linalg.norm(self.x))
        if not math.isfinite(norm) or norm > DIVERGENCE_NORM:
            raise SimulationDiverged(_TraceBuilder().build(), self.t)


def run_closed_loop(ss: StateSpace, cfg_ctrl: ControllerConfig, dist: DisturbanceProfile,
                    cfg: SimConfig, x0: PlantState | None = None) -> SimTrace:
    """Batch closed-loop run over cfg.duration; raises
    :class:`SimulationDiverged` (with the partial trace attached) if the
    state norm passes the guard."""
    stepper = ClosedLoopStepper(ss, cfg_ctrl, cfg, x0)
    trace = _TraceBuilder()
    n_steps = int(round(cfg.duration / cfg.dt))
    for k in range(n_steps + 1):
        t = k * cfg.dt
        stepper.t = t   # exact grid time, no accumulation drift
        w = dist.w(t)
        trace.add(*stepper.sample(w))
        if k == n_steps:
            break
        try:
            stepper.advance(w)
        except SimulationDiverged as exc:
            raise SimulationDiverged(trace.build(), exc.at_time) from None
    return trace.build()


def empirical_l2_gain(ss: StateSpace, k_bar, dist: DisturbanceProfile,
                      cfg: SimConfig) -> float:
    """Measured energy amplification sqrt(int ||z||^2 dt / int w^2 dt) for
    the full-information loop u = k_bar x driven from rest.

    The full-information loop is used on purpose: the deployed output
    feedback leaves the disk angle marginally stable, so theta1 (a z
    component) does not decay and the ratio would be undefined for generic
    pulses.  Integration extends past the schedule until the state energy
    falls below 1e-6 of its peak.
    """
    k_bar = np.asarray(k_bar, dtype=float).reshape(1, 4)
    a_cl = ss.A + ss.B2 @ k_bar
    c_cl = ss.C1 + ss.D12 @ k_bar
    dt = cfg.dt
    support_end = dist.breakpoints[-1][0]
    x = np.zeros(4)
    z_sq, w_sq = [], []
    peak = 0.0
    t = 0.0
    max_time = max(cfg.duration, support_end) + 60.0   # hard stop for safety
    while True:
        w = dist.w(t)
        z = c_cl @ x
        z_sq.append(float(z @ z))
        w_sq.append(w * w)
        energy = float(x @ x)
        peak = max(peak, energy)
        if t >= support_end and t >= cfg.duration and (peak == 0.0 or energy < 1e-6 * peak):
            break
        if t > max_time:
            break
        x = rk4_step(a_cl, ss.B1[:, 0] * w, x, dt)
        t += dt
    denom = np.trapezoid(np.array(w_sq), dx=dt)
    if denom <= 0.0:
        raise ValueError("disturbance has zero energy; the ratio is undefined")
    numer = np.trapezoid(np.array(z_sq), dx=dt)
    return float(np.sqrt(numer / denom))


# ---------------------------------------------------------------------------
# Scenario files


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario file: plant source, controller source, schedule and
    run settings.  ``plant`` is "ecp220" or a parameter-file path;
    ``controller`` is "paper", a synthesis-report path, or a
    controller-config path."""

    plant: str = "ecp220"
    controller: str = "paper"
    profile: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    sim: SimConfig = field(default_factory=SimConfig)
    x0: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    controller_dt: float = ctrl_mod.DEFAULT_SAMPLE_DT
    controller_scale: float | None = None


def parse_scenario(text: str) -> Scenario:
    fields = parse_keyvalues(text)
    fmt, line_no = single(fields, "format")
    if fmt != "scenario-v1":
        raise TextFormatError(f"not a scenario file (format = {fmt!r})", line_no)

    def optional(key: str, default: str) -> str:
        if key not in fields:
            return default
        return single(fields, key)[0]

    plant = optional("plant", "ecp220")
    controller = optional("controller", "paper")

    breakpoints = []
    for raw, ln in fields.get("tilt", []):
        t_, v_ = parse_floats(raw, ln, "tilt", 2)
        breakpoints.append((t_, v_))
    if not breakpoints:
        breakpoints = [(0.0, 0.0)]
    interp = optional("tilt_interp", "hold")
    kd_raw = optional("coupling_gain", str(DEFAULT_COUPLING_GAIN))
    try:
        profile = DisturbanceProfile(
            breakpoints=tuple(breakpoints),
            coupling_gain=float(kd_raw),
            interp=interp,
        )
    except ValueError as exc:
        raise TextFormatError(f"bad disturbance schedule: {exc}") from exc

    def opt_float(key: str, default: float) -> float:
        if key not in fields:
            return default
        raw, ln = single(fields, key)
        return parse_float(raw, ln, key)

    quant_raw = optional("quantize", "on").lower()
    if quant_raw not in ("on", "off", "true", "false"):
        raise TextFormatError(f"quantize must be on/off, got {quant_raw!r}")
    try:
        sim = SimConfig(
            dt=opt_float("dt", 1e-3),
            duration=opt_float("duration", 15.0),
            quantize=quant_raw in ("on", "true"),
            counts_per_rev=int(opt_float("counts_per_rev", PAPER_COUNTS_PER_REV)),
            rng_seed=int(opt_float("seed", 0)),
        )
    except ValueError as exc:
        raise TextFormatError(str(exc)) from exc

    x0 = (0.0, 0.0, 0.0, 0.0)
    if "x0" in fields:
        raw, ln = single(fields, "x0")
        x0 = tuple(parse_floats(raw, ln, "x0", 4))

    scale = None
    if "controller_scale" in fields:
        raw, ln = single(fields, "controller_scale")
        scale = parse_float(raw, ln, "controller_scale")

    return Scenario(
        plant=plant, controller=controller, profile=profile, sim=sim, x0=x0,
        controller_dt=opt_float("controller_dt", ctrl_mod.DEFAULT_SAMPLE_DT),
        controller_scale=scale,
    )


def format_scenario(sc: Scenario) -> str:
    lines = [
        "format = scenario-v1",
        f"plant = {sc.plant}",
        f"controller = {sc.controller}",
    ]
    lines.extend(f"tilt = {t:.17g} {v:.17g}" for t, v in sc.profile.breakpoints)
    lines += [
        f"tilt_interp = {sc.profile.interp}",
        f"coupling_gain = {sc.profile.coupling_gain:.17g}",
        f"dt = {sc.sim.dt:.17g}",
        f"duration = {sc.sim.duration:.17g}",
        f"quantize = {'on' if sc.sim.quantize else 'off'}",
        f"counts_per_rev = {sc.sim.counts_per_rev}",
        f"seed = {sc.sim.rng_seed}",
        f"x0 = {format_floats(sc.x0)}",
        f"controller_dt = {sc.controller_dt:.17g}",
    ]
    if sc.controller_scale is not None:
        lines.append(f"controller_scale = {sc.controller_scale:.17g}")
    lines.append("")
    return "\n".join(lines)


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def resolve_plant(spec: str, base_dir: Path | None = None) -> tuple[StateSpace, str]:
    """Map a scenario plant entry to a model: the named preset or a
    parameter file (relative paths resolve against the scenario's dir)."""
    if spec == "ecp220":
        return preset_ecp220(), "ecp220"
    path = Path(spec)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    params = load_params(path)
    return assemble_linear_model(params), str(path)


def resolve_controller(sc: Scenario, base_dir: Path | None = None
                       ) -> tuple[ControllerConfig, np.ndarray]:
    """Build the runtime controller for a scenario.

    Returns (config, k_bar); k_bar is the full-information gain behind the
    config (stock bench values or the report's), used for energy-gain
    checks.  Synthesized gains default to scale 1.0 (their certificate
    covers the raw gain); the stock "paper" controller preset keeps its
    hardware scale 0.3 unless the scenario overrides it.
    """
    if sc.controller == "paper":
        scale = ctrl_mod.PAPER_SCALE if sc.controller_scale is None else sc.controller_scale
        cfg = ctrl_mod.ControllerConfig(
            gains=ctrl_mod.PAPER_GAINS, scale=scale,
            filter_pole=ctrl_mod.PAPER_FILTER_POLE, filter_gain=ctrl_mod.PAPER_FILTER_GAIN,
            sample_dt=sc.controller_dt,
        )
        k_bar = np.array([[0.38, 0.43, 6.38, 1.09]])
        return cfg, k_bar
    path = Path(sc.controller)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    text = path.read_text()
    if "synthesis-report-v1" in text:
        report = synthesis.parse_report(text)
        gains = synthesis.GainSet(k_bar=report.k_bar, k_out=report.k_out,
                                  gamma_achieved=report.gamma_star)
        scale = 1.0 if sc.controller_scale is None else sc.controller_scale
        cfg = ctrl_mod.from_gain_set(gains, scale=scale, dt=sc.controller_dt)
        return cfg, report.k_bar
    cfg = ctrl_mod.parse_config(text)
    k_bar = np.array([[0.0, *cfg.gains]])
    return cfg, k_bar
