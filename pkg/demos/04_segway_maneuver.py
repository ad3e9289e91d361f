"""
Segway maneuver
===============

Reproduce the hand-tilt experiment: the rider leans 0.15 rad from t = 2 s
to t = 8 s.  While the tilt holds, the base drifts (the "drive"); when the
rider straightens up, the pendulum recovers and the base parks at its
final angle.  Saves a plot when matplotlib is importable.
"""

import numpy as np

from segway_lab import DisturbanceProfile, SimConfig, paper_controller, preset_ecp220
from segway_lab import run_closed_loop

plant = preset_ecp220()
lean = DisturbanceProfile(breakpoints=((0.0, 0.0), (2.0, 0.15), (8.0, 0.0)))
config = SimConfig(dt=1e-3, duration=15.0, quantize=True, counts_per_rev=16000)

trace = run_closed_loop(plant, paper_controller(), lean, config)

i10, i15 = trace.index_at(10.0), trace.index_at(15.0)
print(f"disk angle at 15 s:        {trace.theta1[i15]:+.4f} rad")
print(f"drift over the last 5 s:   {abs(trace.theta1[i15] - trace.theta1[i10]):.2e} rad")
print(f"pendulum angle at 15 s:    {trace.theta2[i15]:+.2e} rad")
print(f"peak pendulum excursion:   {np.abs(trace.theta2).max():.4f} rad")
print(f"peak control effort:       {np.abs(trace.u).max():.4f}")

# Leaning the other way drives the base the other way.
mirrored = run_closed_loop(plant, paper_controller(), lean.negated(), config)
print(f"mirrored tilt parks at:    {mirrored.theta1[i15]:+.4f} rad")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    print("\nmatplotlib not available; skipping the plot")
else:
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
    axes[0].plot(trace.t, trace.theta1)
    axes[0].set_ylabel("disk angle (rad)")
    axes[1].plot(trace.t, trace.theta2)
    axes[1].set_ylabel("pendulum angle (rad)")
    axes[2].plot(trace.t, trace.u)
    axes[2].set_ylabel("control effort")
    axes[2].set_xlabel("time (s)")
    for ax in axes:
        ax.axvspan(2.0, 8.0, alpha=0.1, color="tab:orange")
    fig.suptitle("Hand-tilt maneuver (shaded: rider leaning)")
    fig.savefig("segway_maneuver.png", dpi=120)
    print("\nplot saved to segway_maneuver.png")
