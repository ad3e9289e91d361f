"""
Velocity estimation without a tachometer
========================================

Only angles are measured; rates come from first-order high-pass filters
(dx/dt = -10 x + 5 theta, estimate = dx/dt).  This script shows the three
behaviors that matter: constants are rejected, ramps come out at half
slope (that is the b = 5 gain), and the phase lag on sinusoids.
"""

import math

import numpy as np

from segway_lab import ObserverState, paper_controller, step

cfg = paper_controller(sample_dt=1e-4)
a, b = cfg.filter_pole, cfg.filter_gain


def estimate_series(signal, duration):
    s = ObserverState()
    out = []
    for k in range(int(duration / cfg.sample_dt)):
        t = k * cfg.sample_dt
        theta = signal(t)
        out.append((t, a * s.x1 + b * theta))
        _, s = step(cfg, s, theta, 0.0)
    return np.array(out)


constant = estimate_series(lambda t: 0.37, 2.0)
print(f"constant input:  estimate settles at {constant[-1, 1]:.2e} (true rate 0)")

ramp = estimate_series(lambda t: t, 3.0)
print(f"unit ramp:       estimate settles at {ramp[-1, 1]:.4f} "
      f"(b/|a| = {b / abs(a)} of the true rate)")

# For a sinusoid the filter behaves like b/|a| * (first-order lag of the
# true derivative): attenuated and phase-shifted, which is the price of
# not differentiating noise.
omega = 4.0
sine = estimate_series(lambda t: math.sin(omega * t), 3.0)
steady = sine[len(sine) // 2:]
print(f"sin({omega:.0f}t):        estimate peak {np.abs(steady[:, 1]).max():.4f} "
      f"vs true derivative peak {omega:.1f}")
