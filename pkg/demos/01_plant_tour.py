"""
Tour of the plant model
=======================

Build the linearized rotary-pendulum model two ways (from physical
constants and from the bench preset) and poke at its structure.
"""

import numpy as np

from segway_lab import PendulumParams, PlantState, assemble_linear_model, preset_ecp220
from segway_lab import output_map, performance_output

# The bench unit everything else in this package is tuned against.
bench = preset_ecp220()
print("A =\n", bench.A)
print("B =", bench.B1.ravel(), "(disturbance and torque share this column)")

# The open loop is unstable: the pendulum falls over on its own.
eigs = np.linalg.eigvals(bench.A)
print("open-loop eigenvalues:", np.sort(eigs.real))
print("fastest unstable mode ~ sqrt(50.229) =", np.sqrt(50.229))

# The same structure emerges from raw physical constants.  Values here are
# made up but plausible; real numbers come from a parameter file.
params = PendulumParams(j1=0.005, jy=0.001, jz=0.002, m_r=0.05, m_w=0.02,
                        l_cg=0.15, r_h=0.1)
custom = assemble_linear_model(params)
print("\ncustom plant A (integrator rows and zero first column persist):\n",
      np.round(custom.A, 3))

# Measurements deliberately exclude the disk angle theta1: feeding it back
# would pull the disk home and destroy the Segway-style navigation.
x = PlantState(theta1=0.5, theta1_dot=-1.0, theta2=0.2, theta2_dot=3.0)
print("\ny =", output_map(x), " (no theta1 anywhere)")
print("z =", performance_output(x, u=0.7), " (theta1, theta2, u)")
