"""
Live session, headless
======================

Drive a teleop session without a browser: script the tilt commands, tick
the simulation, then prove the recorded command log replays bit-exactly
through the batch simulator.  (For the real thing run ``segway-lab serve``
and open the cockpit UI.)
"""

import numpy as np

from segway_lab.plant import PlantState
from segway_lab.sim import Scenario, SimConfig, resolve_controller, resolve_plant, run_closed_loop
from segway_lab.teleop import TeleopSession

TICK_DT = 0.005   # 200 Hz

session = TeleopSession(Scenario(sim=SimConfig(dt=TICK_DT, duration=1e6)))
print("hello message a client would see:", session.hello(driver=True))

# Scripted "driver": lean right at 0.2 s, straighten out at 4 s.
for tick in range(1200):   # 6 seconds
    if tick == 40:
        session.submit(None, {"type": "set_tilt", "phi": 0.15})
    if tick == 800:
        session.submit(None, {"type": "set_tilt", "phi": 0.0})
    session.tick()

live = session.trace()
print(f"\nafter 6 s: disk at {live.theta1[-1]:+.4f} rad, "
      f"pendulum at {live.theta2[-1]:+.2e} rad")

# The session is replayable: its command log becomes a batch scenario.
scenario = session.replay_scenario()
ss, _ = resolve_plant(scenario.plant)
ctrl, _ = resolve_controller(scenario)
batch = run_closed_loop(ss, ctrl, scenario.profile, scenario.sim,
                        PlantState.from_array(scenario.x0))

n = len(live)
worst = max(float(np.abs(live.theta1 - batch.theta1[:n]).max()),
            float(np.abs(live.u - batch.u[:n]).max()))
print(f"live vs batch replay, worst per-sample gap: {worst:.2e}")
