"""segway-lab: robust-control workbench for a Segway-emulating rotary
inverted pendulum.

The package covers the full loop from model to joystick: assemble or load
the linearized plant, synthesize a robust output-feedback gain from one
matrix-inequality feasibility problem, verify stability and the
energy-gain certificate with independent oracles, simulate the
rider-driven "navigation" behavior in batch, and drive it live over a
websocket.
"""

__version__ = "0.1.0"

from .analysis import (LtiSystem, frequency_grid_norm, hinf_norm, spectral_abscissa,
                       verify_dissipation)
from .controller import ControllerConfig, ObserverState, from_gain_set, paper_controller, step
from .plant import (PendulumParams, PlantState, StateSpace, assemble_linear_model,
                    output_map, performance_output, preset_ecp220)
from .sim import (DisturbanceProfile, SimConfig, SimTrace, SimulationDiverged,
                  empirical_l2_gain, quantize_angle, run_closed_loop)
from .synthesis import (GainSet, LmiDecision, SynthesisResult, evaluate_lmi, extract_gain,
                        minimize_gamma, solve_feasibility)

__all__ = [
    "__version__",
    "PendulumParams", "PlantState", "StateSpace",
    "assemble_linear_model", "preset_ecp220", "output_map", "performance_output",
    "LmiDecision", "GainSet", "SynthesisResult",
    "evaluate_lmi", "solve_feasibility", "minimize_gamma", "extract_gain",
    "LtiSystem", "spectral_abscissa", "hinf_norm", "frequency_grid_norm",
    "verify_dissipation",
    "ControllerConfig", "ObserverState", "step", "paper_controller", "from_gain_set",
    "DisturbanceProfile", "SimConfig", "SimTrace", "SimulationDiverged",
    "run_closed_loop", "quantize_angle", "empirical_l2_gain",
]
