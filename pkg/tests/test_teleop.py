import json
import math

import numpy as np
import pytest

from segway_lab.plant import PlantState
from segway_lab.sim import Scenario, SimConfig, run_closed_loop, resolve_controller, resolve_plant
from segway_lab.teleop import (DEFAULT_BROADCAST_HZ, DEFAULT_TICK_HZ, TeleopServer,
                               TeleopSession, create_app)

TICK_DT = 1.0 / DEFAULT_TICK_HZ


def make_session(**scenario_overrides):
    import dataclasses
    sc = Scenario(sim=SimConfig(dt=TICK_DT, duration=1e6, quantize=True))
    if scenario_overrides:
        sc = dataclasses.replace(sc, **scenario_overrides)
    return TeleopSession(sc, session_id="testsession")


class TestSessionBasics:
    def test_idle_session_stays_at_zero(self):
        s = make_session()
        for _ in range(100):
            s.tick()
        msg = s.telemetry()
        assert msg["type"] == "telemetry"
        assert msg["theta1"] == 0.0
        assert msg["theta2"] == 0.0
        assert msg["u"] == 0.0
        assert msg["phi"] == 0.0

    def test_sequence_numbers_increase(self):
        s = make_session()
        seqs = [s.telemetry()["seq"] for _ in range(5)]
        assert seqs == sorted(seqs)
        assert len(set(seqs)) == 5
        assert all(s.telemetry()["sid"] == "testsession" for _ in range(3))

    def test_sim_time_is_tick_count_times_dt(self):
        s = make_session()
        for _ in range(37):
            s.tick()
        assert s.sim_time == 37 * TICK_DT

    def test_step_command_moves_disk_within_50_ticks(self):
        s = make_session()
        s.submit(None, {"type": "set_tilt", "phi": 0.15})
        for _ in range(50):
            s.tick()
        assert abs(s.stepper.x[1]) > 0.0   # theta1 rate responds

    def test_hello_carries_metadata(self):
        s = make_session()
        msg = s.hello(driver=True)
        assert msg["type"] == "hello"
        assert msg["plant_id"] == "ecp220"
        assert msg["tick_dt"] == TICK_DT
        assert len(msg["gains"]) == 3
        assert msg["driver"] is True


class TestCommands:
    def test_tilt_applied_at_next_tick_boundary(self):
        s = make_session()
        s.submit(None, {"type": "set_tilt", "phi": 0.2})
        assert s.phi == 0.0          # not yet applied
        s.tick()
        assert s.phi == 0.2

    def test_overlean_clamped_with_warning(self):
        s = make_session()
        events = s.submit(None, {"type": "set_tilt", "phi": 9.0})
        assert len(events) == 1
        assert events[0]["event"] == "warning"
        s.tick()
        assert s.phi == pytest.approx(math.pi / 2)

    def test_unknown_tag_rejected_without_crash(self):
        s = make_session()
        events = s.submit(None, {"type": "warp_drive"})
        assert events[0]["event"] == "error"
        events = s.submit(None, {"no_type": 1})
        assert events[0]["event"] == "error"
        events = s.submit(None, {"type": "set_tilt", "phi": "sideways"})
        assert events[0]["event"] == "error"
        s.tick()   # still healthy
        assert s.phi == 0.0

    def test_reset_clears_state_keeps_tick_counter(self):
        s = make_session()
        s.submit(None, {"type": "set_tilt", "phi": 0.3})
        for _ in range(100):
            s.tick()
        ticks_before = s.tick_count
        assert len(s.trace()) == 100
        s.submit(None, {"type": "reset"})
        events = s.tick()
        assert any(e["event"] == "reset" for e in events)
        assert s.tick_count > ticks_before   # counter marches on
        assert np.all(s.stepper.x == 0.0)
        assert s.phi == 0.0
        assert len(s.trace()) == 1   # fresh epoch, one new row

    def test_set_controller_swaps_gains(self):
        s = make_session()
        events = s.submit(None, {"type": "set_controller", "gains": [0.43, 6.38, 1.09]})
        assert events == []
        s.tick()
        assert s.ctrl_cfg.gains == (0.43, 6.38, 1.09)

    def test_set_controller_validates_payload(self):
        s = make_session()
        events = s.submit(None, {"type": "set_controller", "gains": [1.0, 2.0]})
        assert events[0]["event"] == "error"


class TestDivergence:
    def test_diverged_freezes_until_reset(self):
        # cut the control loop so the open-loop instability runs away
        s = make_session()
        s.submit(None, {"type": "set_controller", "gains": [0.0, 0.0, 0.0]})
        s.tick()
        s.stepper.x = np.array([0.0, 0.0, 0.05, 0.0])
        diverged = False
        for _ in range(20000):
            events = s.tick()
            if any(e["event"] == "diverged" for e in events):
                diverged = True
                break
        assert diverged
        assert s.frozen
        frozen_x = s.stepper.x.copy()
        s.tick()
        assert np.array_equal(s.stepper.x, frozen_x)   # no motion while frozen
        s.submit(None, {"type": "reset"})
        s.tick()
        assert not s.frozen
        assert np.all(s.stepper.x == 0.0)


class TestReplayEquivalence:
    def drive(self, session, schedule, total_ticks):
        """schedule: {tick_index: phi}; runs total_ticks ticks."""
        for k in range(total_ticks):
            if k in schedule:
                session.submit(None, {"type": "set_tilt", "phi": schedule[k]})
            session.tick()

    @pytest.mark.parametrize("quantize", [True, False])
    def test_command_log_replays_bit_identically(self, quantize):
        s = make_session(sim=SimConfig(dt=TICK_DT, duration=1e6, quantize=quantize))
        schedule = {40: 0.15, 400: -0.08, 900: 0.0}
        self.drive(s, schedule, 1200)
        live = s.trace()

        replay = s.replay_scenario()
        ss, _ = resolve_plant(replay.plant)
        cfg, _ = resolve_controller(replay)
        batch = run_closed_loop(ss, cfg, replay.profile, replay.sim,
                                PlantState.from_array(replay.x0))
        n = len(live)
        assert n == 1200
        assert len(batch) >= n
        for live_col, batch_col in (
            (live.theta1, batch.theta1), (live.theta1_dot, batch.theta1_dot),
            (live.theta2, batch.theta2), (live.theta2_dot, batch.theta2_dot),
            (live.u, batch.u), (live.w, batch.w),
        ):
            assert np.max(np.abs(live_col - batch_col[:n])) <= 1e-9

    def test_batch_equivalence_after_set_controller(self):
        s = make_session()
        s.submit(None, {"type": "set_controller", "gains": [0.43, 6.38, 1.09],
                        "scale": 0.3})
        s.tick()   # applies and resets the epoch
        self.drive(s, {10: 0.15, 300: 0.0}, 600)
        live = s.trace()
        replay = s.replay_scenario()
        ss, _ = resolve_plant(replay.plant)
        cfg, _ = resolve_controller(replay)
        assert cfg.gains == (0.43, 6.38, 1.09)
        batch = run_closed_loop(ss, cfg, replay.profile, replay.sim,
                                PlantState.from_array(replay.x0))
        assert np.max(np.abs(live.theta1 - batch.theta1[:len(live)])) <= 1e-9


class TestServerFanout:
    def test_decimation_rate(self):
        server = TeleopServer(make_session(), tick_hz=200, broadcast_hz=30)
        assert server.decimation == 7

    def test_slow_client_drops_frames_but_sim_continues(self):
        server = TeleopServer(make_session(), tick_hz=200, broadcast_hz=200)
        client_id, queue, _ = server.register()
        server.advance(500)   # queue holds only 64
        assert queue.qsize() <= 64
        assert server.session.tick_count == 500
        # the retained frames are the newest ones
        newest = None
        while not queue.empty():
            newest = queue.get_nowait()
        assert newest["t"] >= (500 - 64) * TICK_DT

    def test_steering_token_first_come(self):
        server = TeleopServer(make_session())
        driver_id, _, is_driver = server.register()
        viewer_id, viewer_q, viewer_is_driver = server.register()
        assert is_driver and not viewer_is_driver
        server.handle_inbound(viewer_id, json.dumps({"type": "set_tilt", "phi": 0.1}))
        err = viewer_q.get_nowait()
        assert err["event"] == "error" and "token" in err["detail"]
        server.advance(1)
        assert server.session.phi == 0.0
        # token passes on disconnect
        server.unregister(driver_id)
        assert server.driver_id == viewer_id

    def test_malformed_json_gets_error_event(self):
        server = TeleopServer(make_session())
        client_id, queue, _ = server.register()
        server.handle_inbound(client_id, "{not json")
        msg = queue.get_nowait()
        assert msg["event"] == "error"
        assert "JSON" in msg["detail"]


@pytest.fixture()
def client():
    from fastapi.testclient import TestClient
    server = TeleopServer(make_session(), tick_hz=DEFAULT_TICK_HZ,
                          broadcast_hz=DEFAULT_BROADCAST_HZ)
    app = create_app(server, auto_tick=True)
    with TestClient(app) as test_client:
        test_client.server = server
        yield test_client


class TestHttpSurface:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert isinstance(body["tick"], int)

    def test_websocket_handshake_and_telemetry(self, client):
        with client.websocket_connect("/ws") as ws:
            hello = json.loads(ws.receive_text())
            assert hello["type"] == "hello"
            assert hello["plant_id"] == "ecp220"
            assert hello["driver"] is True
            ws.send_text(json.dumps({"type": "set_tilt", "phi": 0.15}))
            got_phi = None
            for _ in range(40):
                msg = json.loads(ws.receive_text())
                if msg["type"] == "telemetry" and msg["phi"] == 0.15:
                    got_phi = msg
                    break
            assert got_phi is not None

    def test_trace_csv_download(self, client):
        import time
        time.sleep(0.1)   # let a few ticks land
        body = client.get("/trace.csv")
        assert body.status_code == 200
        assert body.text.startswith("t,theta1,theta1_dot,theta2,theta2_dot,u,w,z1,z2,z3")
        assert len(body.text.splitlines()) > 1
