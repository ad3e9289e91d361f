"""Linearized model of the rotary (Furuta) inverted pendulum.

The plant is a motor-driven load disk carrying an inverted pendulum.  Near
the upright equilibrium the dynamics reduce to a 4-state linear system in
x = [theta1, theta1_dot, theta2, theta2_dot] (disk angle/rate, pendulum
angle/rate), with the control torque and the rider-induced disturbance
entering through the same input column.

Two routes produce a model:

* :func:`assemble_linear_model` builds the matrices from physical
  constants (validated structurally: integrator rows, zero first column,
  sign pattern).
* :func:`preset_ecp220` returns the numeric matrices of the ECP Model 220
  bench unit, which is the plant every controller in this package is
  tuned against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .textio import TextFormatError, parse_float, parse_keyvalues, single

PARAM_KEYS = ("J1", "Jy", "Jz", "m_r", "m_w", "l_cg", "R_h", "g")

# Fixed output structure: z = [theta1, theta2, u], y = [theta1_dot,
# theta2, theta2_dot].  The disk position theta1 is deliberately absent
# from y so the disk is free to drift (that drift is the "navigation").
C1_PATTERN = np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 0]])
C2_PATTERN = np.array([[0, 1.0, 0, 0], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
D12_PATTERN = np.array([[0.0], [0.0], [1.0]])

# Canonical right inverse of C2: identity into rows 2..4, zero first row.
# It is the minimum-norm right inverse for this selection matrix.
C2_RIGHT_INVERSE = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])


class DegenerateModelError(ValueError):
    """The inertia normalizer p collapsed; the linear model is undefined."""


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the rotary pendulum (SI units).

    j1 is the equivalent inertia of everything rotating with the motor
    disk; jy, jz are pendulum inertias about its own center of mass.
    y_r and y_m are geometric bench settings kept as metadata only.
    """

    j1: float
    jy: float
    jz: float
    m_r: float
    m_w: float
    l_cg: float
    r_h: float
    g: float = 9.81
    y_r: float = 0.42
    y_m: float = 0.32

    def __post_init__(self):
        positive = {
            "j1": self.j1, "jy": self.jy, "jz": self.jz,
            "m_r": self.m_r, "m_w": self.m_w,
            "l_cg": self.l_cg, "r_h": self.r_h, "g": self.g,
        }
        for name, value in positive.items():
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @property
    def m(self) -> float:
        """Combined pendulum mass (rod plus end mass)."""
        return self.m_r + self.m_w

    @property
    def j1_bar(self) -> float:
        return self.j1 + self.m * self.r_h**2

    @property
    def jz_bar(self) -> float:
        # As printed in the source model: Jz + m*l_cg (not l_cg^2).
        return self.jz + self.m * self.l_cg

    @property
    def normalizer(self) -> float:
        """p = Jz_bar*(J1_bar + Jy) - (m*R_h*l_cg)^2, the mass-matrix scale."""
        return self.jz_bar * (self.j1_bar + self.jy) - (self.m * self.r_h * self.l_cg) ** 2


@dataclass(frozen=True)
class PlantState:
    """Plant state [theta1, theta1_dot, theta2, theta2_dot] in rad, rad/s."""

    theta1: float
    theta1_dot: float
    theta2: float
    theta2_dot: float

    def __post_init__(self):
        vec = (self.theta1, self.theta1_dot, self.theta2, self.theta2_dot)
        if not all(np.isfinite(v) for v in vec):
            raise ValueError(f"plant state must be finite, got {vec}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta1_dot, self.theta2, self.theta2_dot])

    @classmethod
    def from_array(cls, x) -> "PlantState":
        x = np.asarray(x, dtype=float).reshape(4)
        return cls(x[0], x[1], x[2], x[3])


@dataclass(frozen=True)
class StateSpace:
    """Six-matrix plant description.

    dx/dt = A x + B2 u + B1 w,  z = C1 x + D12 u,  y = C2 x.

    B1 = B2: the disturbance (rider tilt) and the motor torque share one
    input channel.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray = field(default_factory=lambda: C1_PATTERN.copy())
    C2: np.ndarray = field(default_factory=lambda: C2_PATTERN.copy())
    D12: np.ndarray = field(default_factory=lambda: D12_PATTERN.copy())

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(4, 4))
        object.__setattr__(self, "B1", np.asarray(self.B1, dtype=float).reshape(4, 1))
        object.__setattr__(self, "B2", np.asarray(self.B2, dtype=float).reshape(4, 1))
        object.__setattr__(self, "C1", np.asarray(self.C1, dtype=float).reshape(3, 4))
        object.__setattr__(self, "C2", np.asarray(self.C2, dtype=float).reshape(3, 4))
        object.__setattr__(self, "D12", np.asarray(self.D12, dtype=float).reshape(3, 1))

    def validate(self) -> None:
        """Check the structural invariants the whole toolchain relies on."""
        A = self.A
        if not np.array_equal(A[0], [0.0, 1.0, 0.0, 0.0]):
            raise ValueError(f"row 1 of A must be the theta1 integrator, got {A[0]}")
        if not np.array_equal(A[2], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError(f"row 3 of A must be the theta2 integrator, got {A[2]}")
        if np.any(A[:, 0] != 0.0):
            raise ValueError("first column of A must be zero (theta1 is cyclic)")
        if not np.array_equal(self.B1, self.B2):
            raise ValueError("B1 and B2 must be the same column (shared channel)")
        if not np.allclose(self.C2 @ C2_RIGHT_INVERSE, np.eye(3)):
            raise ValueError("C2 lost its right inverse")
        if not np.array_equal(self.C1, C1_PATTERN):
            raise ValueError("C1 does not match the [theta1, theta2, u] pattern")
        if not np.array_equal(self.D12, D12_PATTERN):
            raise ValueError("D12 does not match the [0, 0, 1] pattern")


def assemble_linear_model(params: PendulumParams) -> StateSpace:
    """Build the linearized state-space model from physical constants.

    Raises :class:`DegenerateModelError` when the normalizer p is within
    1e-12 (relative to Jz_bar*(J1_bar+Jy)) of zero.
    """
    p = params.normalizer
    scale = abs(params.jz_bar * (params.j1_bar + params.jy))
    if abs(p) < 1e-12 * scale:
        raise DegenerateModelError(
            f"normalizer p = {p:.6g} is degenerate (|p| < 1e-12 * {scale:.6g}); "
            "the mass matrix is singular for these parameters"
        )
    m, lcg, rh, g = params.m, params.l_cg, params.r_h, params.g
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -params.jz_bar / p, -(m**2) * lcg**2 * rh * g / p, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, m * rh * lcg / p, m * lcg * g * (params.j1_bar + params.jy) / p, 0.0],
    ])
    B = np.array([[0.0], [params.jz_bar / p], [0.0], [-m * rh * lcg / p]])
    ss = StateSpace(A=A, B1=B, B2=B.copy())
    ss.validate()
    return ss


def preset_ecp220() -> StateSpace:
    """Numeric plant of the ECP Model 220 bench (16000-count encoders)."""
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -1.1379, -28.769, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.7219, 50.229, 0.0],
    ])
    B = np.array([[0.0], [318.7], [0.0], [-202.2]])
    ss = StateSpace(A=A, B1=B, B2=B.copy())
    ss.validate()
    return ss


def output_map(x: PlantState) -> np.ndarray:
    """Measured outputs y = [theta1_dot, theta2, theta2_dot].

    The disk position is not measured back to the controller on purpose:
    feeding it back would re-center the disk and kill the navigation
    behavior.
    """
    return C2_PATTERN @ x.as_array()


def performance_output(x: PlantState, u: float) -> np.ndarray:
    """Performance channel z = [theta1, theta2, u]."""
    return C1_PATTERN @ x.as_array() + D12_PATTERN[:, 0] * float(u)


_PARAM_FIELD_BY_KEY = {
    "J1": "j1", "Jy": "jy", "Jz": "jz", "m_r": "m_r", "m_w": "m_w",
    "l_cg": "l_cg", "R_h": "r_h", "g": "g", "y_r": "y_r", "y_m": "y_m",
}


def parse_params(text: str) -> PendulumParams:
    """Parse a flat key-value parameter file (keys J1, Jy, Jz, m_r, m_w,
    l_cg, R_h, g; optional y_r, y_m metadata), SI units."""
    fields = parse_keyvalues(text)
    unknown = set(fields) - set(_PARAM_FIELD_BY_KEY)
    if unknown:
        line_no = fields[sorted(unknown)[0]][0][1]
        raise TextFormatError(f"unknown parameter key(s): {sorted(unknown)}", line_no)
    kwargs = {}
    for key in PARAM_KEYS:
        raw, line_no = single(fields, key)
        kwargs[_PARAM_FIELD_BY_KEY[key]] = parse_float(raw, line_no, key)
    for key in ("y_r", "y_m"):
        if key in fields:
            raw, line_no = single(fields, key)
            kwargs[key] = parse_float(raw, line_no, key)
    try:
        return PendulumParams(**kwargs)
    except ValueError as exc:
        raise TextFormatError(str(exc)) from exc


def load_params(path: str | Path) -> PendulumParams:
    return parse_params(Path(path).read_text())
