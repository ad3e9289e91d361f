"""Live human-in-the-loop session over a websocket.

A single simulated pendulum advances on a fixed tick; connected clients
watch telemetry and at most one of them (the steering-token holder) leans
the virtual rider by sending tilt commands.  The tilt is a disturbance
input only — it never reaches the control law, mirroring how the bench
measures the rider angle outside the control loop.

Determinism contract: commands apply only at tick boundaries, simulated
time is ticks * tick_dt regardless of wall-clock jitter, and the session
records a (tick, phi) command log that replays bit-identically through
the batch simulator (same stepper, same rates).
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import math
from dataclasses import dataclass, field
from uuid import uuid4

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import PlainTextResponse

from .controller import ControllerConfig
from .plant import PlantState
from .sim import (ClosedLoopStepper, Scenario, SimulationDiverged, SimTrace,
                  _TraceBuilder, resolve_controller, resolve_plant)

DEFAULT_TICK_HZ = 200.0
DEFAULT_BROADCAST_HZ = 30.0
PHI_LIMIT = math.pi / 2

INBOUND_TYPES = ("set_tilt", "reset", "set_controller")


@dataclass
class TeleopSession:
    """Deterministic sim core of a live session; owns no sockets.

    The tick counter is monotonic across resets; sim time restarts at each
    reset epoch, so t = (tick - epoch_tick) * tick_dt exactly.
    """

    scenario: Scenario
    session_id: str = field(default_factory=lambda: uuid4().hex[:12])

    def __post_init__(self):
        self.ss, self.plant_id = resolve_plant(self.scenario.plant)
        self.ctrl_cfg, self.k_bar = resolve_controller(self.scenario)
        self.tick_dt = self.scenario.sim.dt
        self.stepper = ClosedLoopStepper(self.ss, self.ctrl_cfg, self.scenario.sim,
                                         PlantState.from_array(self.scenario.x0))
        self.phi = 0.0
        self.tick_count = 0
        self.epoch_tick = 0
        self.frozen = False
        self.seq = 0
        self._trace = _TraceBuilder()
        self.command_log: list[tuple[int, float]] = []
        self._pending: list[tuple[str | None, dict]] = []

    # -- message plumbing ---------------------------------------------------

    def _stamp(self, msg: dict) -> dict:
        self.seq += 1
        return {**msg, "sid": self.session_id, "seq": self.seq}

    def hello(self, driver: bool) -> dict:
        return self._stamp({
            "type": "hello",
            "plant_id": self.plant_id,
            "gains": [g * self.ctrl_cfg.scale for g in self.ctrl_cfg.gains],
            "tick_dt": self.tick_dt,
            "driver": driver,
        })

    def _event(self, kind: str, detail: str = "") -> dict:
        return self._stamp({"type": "event", "event": kind, "detail": detail})

    def telemetry(self) -> dict:
        t, x, u, w, _z = self._row_preview()
        return self._stamp({
            "type": "telemetry",
            "t": t,
            "theta1": float(x[0]),
            "theta2": float(x[2]),
            "u": float(u),
            "phi": self.phi,
        })

    def _row_preview(self):
        x = self.stepper.x
        u = self.stepper.u
        w = self.scenario.profile.coupling_gain * self.phi
        z = self.ss.C1 @ x + self.ss.D12[:, 0] * u
        return self.stepper.t, x, u, w, z

    # -- commands -----------------------------------------------------------

    def submit(self, client_id: str | None, msg: dict) -> list[dict]:
        """Validate an inbound message; queue it for the next tick boundary.

        Returns events for the submitting client (errors, clamp warnings).
        Unknown or malformed messages produce an error event, never an
        exception.
        """
        out: list[dict] = []
        if not isinstance(msg, dict) or "type" not in msg:
            return [self._event("error", "message must be an object with a 'type' tag")]
        kind = msg["type"]
        if kind not in INBOUND_TYPES:
            return [self._event("error", f"unknown message type {kind!r}")]
        if kind == "set_tilt":
            phi = msg.get("phi")
            if not isinstance(phi, (int, float)) or not math.isfinite(phi):
                return [self._event("error", "set_tilt needs a finite numeric 'phi'")]
            if abs(phi) > PHI_LIMIT:
                clamped = math.copysign(PHI_LIMIT, phi)
                out.append(self._event("warning",
                                       f"phi {phi:.4g} clamped to {clamped:.4g}"))
                msg = {**msg, "phi": clamped}
        if kind == "set_controller":
            gains = msg.get("gains")
            if (not isinstance(gains, (list, tuple)) or len(gains) != 3
                    or not all(isinstance(g, (int, float)) and math.isfinite(g) for g in gains)):
                return [self._event("error", "set_controller needs 'gains': [g1, g2, g3]")]
        self._pending.append((client_id, msg))
        return out

    def _apply(self, msg: dict) -> list[dict]:
        kind = msg["type"]
        if kind == "set_tilt":
            self.phi = float(msg["phi"])
            self.command_log.append((self.tick_count - self.epoch_tick, self.phi))
            return []
        if kind == "reset":
            return [self._do_reset("reset")]
        if kind == "set_controller":
            cfg = self.ctrl_cfg
            self.ctrl_cfg = ControllerConfig(
                gains=tuple(float(g) for g in msg["gains"]),
                scale=float(msg.get("scale", cfg.scale)),
                filter_pole=float(msg.get("filter_pole", cfg.filter_pole)),
                filter_gain=float(msg.get("filter_gain", cfg.filter_gain)),
                sample_dt=cfg.sample_dt,
            )
            self.stepper.cfg_ctrl = self.ctrl_cfg
            # a new law invalidates the running trajectory; start a clean epoch
            return [self._do_reset("reset")]
        raise AssertionError(f"unreachable: {kind}")

    def _do_reset(self, kind: str) -> dict:
        self.stepper.reset(PlantState.from_array(self.scenario.x0))
        self.phi = 0.0
        self.frozen = False
        self.epoch_tick = self.tick_count
        self._trace = _TraceBuilder()
        self.command_log = []
        return self._event(kind)

    # -- the tick -----------------------------------------------------------

    def tick(self) -> list[dict]:
        """Apply queued commands, record one sample, integrate one tick.

        Returns broadcast events (reset, diverged).  Telemetry decimation
        is the server's concern, not the session's.
        """
        out: list[dict] = []
        pending, self._pending = self._pending, []
        for _client, msg in pending:
            out.extend(self._apply(msg))
        if self.frozen:
            return out
        # exact grid time: the batch replay recomputes t the same way, so
        # the two paths stay bit-identical with no accumulation drift
        self.stepper.t = (self.tick_count - self.epoch_tick) * self.tick_dt
        w = self.scenario.profile.coupling_gain * self.phi
        self._trace.add(*self.stepper.sample(w))
        try:
            self.stepper.advance(w)
        except SimulationDiverged:
            self.frozen = True
            out.append(self._event("diverged",
                                   f"state norm guard tripped at t = {self.stepper.t:.4g} s"))
            return out
        self.tick_count += 1
        return out

    @property
    def sim_time(self) -> float:
        return (self.tick_count - self.epoch_tick) * self.tick_dt

    def trace(self) -> SimTrace:
        return self._trace.build()

    def replay_scenario(self) -> Scenario:
        """Batch scenario whose run reproduces this epoch's trace exactly:
        same plant, controller, rates, and the command log as a
        piecewise-constant tilt schedule."""
        ticks_done = self.tick_count - self.epoch_tick
        duration = max(ticks_done, 1) * self.tick_dt
        points: dict[float, float] = {}
        for tick, phi in self.command_log:
            points[tick * self.tick_dt] = phi   # last command in a tick wins
        if 0.0 not in points:
            points[0.0] = 0.0
        breakpoints = tuple(sorted(points.items()))
        profile = type(self.scenario.profile)(
            breakpoints=breakpoints,
            coupling_gain=self.scenario.profile.coupling_gain,
            interp="hold",
        )
        sim = type(self.scenario.sim)(
            dt=self.tick_dt, duration=duration,
            quantize=self.scenario.sim.quantize,
            counts_per_rev=self.scenario.sim.counts_per_rev,
            rng_seed=self.scenario.sim.rng_seed,
        )
        return Scenario(plant=self.scenario.plant, controller=self.scenario.controller,
                        profile=profile, sim=sim, x0=self.scenario.x0,
                        controller_dt=self.scenario.controller_dt,
                        controller_scale=self.scenario.controller_scale)


# ---------------------------------------------------------------------------
# Websocket server


class TeleopServer:
    """Fan-out layer: owns the session, client queues, and the steering
    token.  ``advance()`` is the only method that mutates the session; the
    real-time driver task calls it once per tick period, and tests may
    call it directly."""

    def __init__(self, session: TeleopSession, tick_hz: float = DEFAULT_TICK_HZ,
                 broadcast_hz: float = DEFAULT_BROADCAST_HZ):
        if tick_hz <= 0 or broadcast_hz <= 0:
            raise ValueError("tick_hz and broadcast_hz must be positive")
        self.session = session
        self.tick_hz = tick_hz
        self.broadcast_hz = broadcast_hz
        self.decimation = max(1, round(tick_hz / broadcast_hz))
        self.clients: dict[str, asyncio.Queue] = {}
        self.client_order: list[str] = []
        self.driver_id: str | None = None
        self._ticks_since_broadcast = 0

    def register(self) -> tuple[str, asyncio.Queue, bool]:
        client_id = uuid4().hex[:12]
        queue: asyncio.Queue = asyncio.Queue(maxsize=64)
        self.clients[client_id] = queue
        self.client_order.append(client_id)
        if self.driver_id is None:
            self.driver_id = client_id
        return client_id, queue, self.driver_id == client_id

    def unregister(self, client_id: str) -> None:
        self.clients.pop(client_id, None)
        if client_id in self.client_order:
            self.client_order.remove(client_id)
        if self.driver_id == client_id:
            self.driver_id = self.client_order[0] if self.client_order else None

    def _push(self, client_id: str, msg: dict) -> None:
        queue = self.clients.get(client_id)
        if queue is None:
            return
        while True:
            try:
                queue.put_nowait(msg)
                return
            except asyncio.QueueFull:
                # slow client: drop its oldest frame, never stall the sim
                with contextlib.suppress(asyncio.QueueEmpty):
                    queue.get_nowait()

    def broadcast(self, msg: dict) -> None:
        for client_id in list(self.clients):
            self._push(client_id, msg)

    def handle_inbound(self, client_id: str, raw: str) -> None:
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as exc:
            self._push(client_id, self.session._event("error", f"bad JSON: {exc}"))
            return
        if isinstance(msg, dict) and msg.get("type") == "set_tilt" and client_id != self.driver_id:
            self._push(client_id, self.session._event("error", "steering token not held"))
            return
        for event in self.session.submit(client_id, msg):
            self._push(client_id, event)

    def advance(self, n_ticks: int = 1) -> None:
        for _ in range(n_ticks):
            events = self.session.tick()
            for event in events:
                self.broadcast(event)
            self._ticks_since_broadcast += 1
            if self._ticks_since_broadcast >= self.decimation:
                self._ticks_since_broadcast = 0
                self.broadcast(self.session.telemetry())


def create_app(server: TeleopServer, auto_tick: bool = True) -> FastAPI:
    """FastAPI app exposing /ws, /health and /trace.csv for a server."""
    tick_period = 1.0 / server.tick_hz

    async def tick_forever():
        loop = asyncio.get_running_loop()
        next_due = loop.time() + tick_period
        while True:
            delay = next_due - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            # wall clock only schedules ticks; it never scales dt
            next_due += tick_period
            server.advance(1)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        ticker = asyncio.create_task(tick_forever()) if auto_tick else None
        try:
            yield
        finally:
            if ticker is not None:
                ticker.cancel()
                with contextlib.suppress(asyncio.CancelledError):
                    await ticker

    app = FastAPI(title="segway-lab teleop", lifespan=lifespan)
    app.state.server = server

    @app.get("/health")
    async def health():
        return {"status": "ok", "tick": server.session.tick_count}

    @app.get("/trace.csv", response_class=PlainTextResponse)
    async def trace_csv():
        return PlainTextResponse(server.session.trace().to_csv(), media_type="text/csv")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        client_id, queue, is_driver = server.register()
        await ws.send_text(json.dumps(server.session.hello(is_driver)))

        async def pump_outbound():
            while True:
                msg = await queue.get()
                await ws.send_text(json.dumps(msg))

        sender = asyncio.create_task(pump_outbound())
        try:
            while True:
                raw = await ws.receive_text()
                server.handle_inbound(client_id, raw)
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender
            server.unregister(client_id)

    return app
