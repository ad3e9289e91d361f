"""Independent verification tools for the synthesized designs.

Nothing here trusts the synthesis solver: stability is read off
eigenvalues, the closed-loop energy gain is computed two unrelated ways
(Hamiltonian bisection and a frequency grid), and the dissipation
certificate is re-assembled from scratch.  A design is accepted only when
these independent routes agree.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .plant import StateSpace

HAMILTONIAN_AXIS_TOL = 1e-8   # |Re eig| < tol*||H||_F counts as imaginary axis


@dataclass(frozen=True)
class LtiSystem:
    """Plain state-space container (D = 0 throughout this package)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        D = self.D
        if D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        D = np.atleast_2d(np.asarray(D, dtype=float))
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")
        if np.any(D != 0.0):
            raise ValueError("only strictly proper systems (D = 0) are supported")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)


def spectral_abscissa(M) -> float:
    """Largest real part over the eigenvalues of a square matrix."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    return float(np.linalg.eigvals(M).real.max())


def is_hurwitz(M, margin: float = 0.0) -> bool:
    return spectral_abscissa(M) < -margin


def frequency_grid_norm(sys: LtiSystem, w_lo: float = 1e-3, w_hi: float = 1e3,
                        n_points: int = 400) -> float:
    """Max singular value of C (jwI - A)^-1 B over a log-spaced grid.

    A certified lower bound on the true peak gain; it converges to it as
    the grid refines.  A singular grid point cannot occur for Hurwitz A,
    but if linear algebra disagrees the point is skipped with a warning
    rather than poisoning the sweep.
    """
    if not is_hurwitz(sys.A):
        raise ValueError("transfer peak undefined: A is not Hurwitz")
    eye = np.eye(sys.A.shape[0])
    best = 0.0
    for w in np.logspace(np.log10(w_lo), np.log10(w_hi), n_points):
        try:
            resolvent = np.linalg.solve(1j * w * eye - sys.A, sys.B)
        except np.linalg.LinAlgError:
            warnings.warn(f"skipping singular grid point w = {w:g}", stacklevel=2)
            continue
        best = max(best, float(np.linalg.svd(sys.C @ resolvent, compute_uv=False)[0]))
    return best


def hinf_norm(sys: LtiSystem, tol: float = 1e-6) -> float:
    """Peak energy gain by bisection on the Hamiltonian eigenvalue test.

    gamma exceeds the norm exactly when
    [[A, BB^T/gamma], [-C^T C/gamma, -A^T]] has no eigenvalue on the
    imaginary axis; the frequency grid supplies a certified lower bracket
    and 10x it (plus one) the upper.
    """
    if not is_hurwitz(sys.A):
        raise ValueError("H-infinity norm undefined (infinite): A is not Hurwitz")
    if not np.any(sys.B) or not np.any(sys.C):
        return 0.0
    lo = frequency_grid_norm(sys)
    hi = 10.0 * lo + 1.0
    while hi - lo > tol * max(lo, 1e-12):
        gamma = 0.5 * (lo + hi)
        H = np.block([
            [sys.A, (sys.B @ sys.B.T) / gamma],
            [-(sys.C.T @ sys.C) / gamma, -sys.A.T],
        ])
        eigs = np.linalg.eigvals(H)
        on_axis = np.abs(eigs.real) < HAMILTONIAN_AXIS_TOL * np.linalg.norm(H, "fro")
        if np.any(on_axis):
            lo = gamma   # gamma is at or below the norm
        else:
            hi = gamma
    return 0.5 * (lo + hi)


def closed_loop_full_info(ss: StateSpace, k_bar) -> LtiSystem:
    """Closed loop under u = k_bar x: (A + B2 k_bar, B1, C1 + D12 k_bar)."""
    k_bar = np.asarray(k_bar, dtype=float).reshape(1, 4)
    return LtiSystem(A=ss.A + ss.B2 @ k_bar, B=ss.B1, C=ss.C1 + ss.D12 @ k_bar)


def output_feedback_matrix(ss: StateSpace, k_out) -> np.ndarray:
    """Closed-loop A under u = k_out y, i.e. A + B2 k_out C2."""
    k_out = np.asarray(k_out, dtype=float).reshape(1, 3)
    return ss.A + ss.B2 @ (k_out @ ss.C2)


def verify_dissipation(P, k_bar, ss: StateSpace, gamma: float) -> float:
    """Max eigenvalue of the storage-function certificate matrix.

    With A_cl = A + B2 k_bar and C_cl = C1 + D12 k_bar, assembles

        [[A_cl^T P + P A_cl + C_cl^T C_cl / gamma,  P B1],
         [B1^T P,                                  -gamma]]

    whose negativity certifies d/dt(x^T P x) + z^T z/gamma - gamma w^T w < 0
    along all closed-loop trajectories, i.e. the energy-gain bound gamma.
    """
    P = np.asarray(P, dtype=float).reshape(4, 4)
    if not np.allclose(P, P.T, atol=1e-9 * max(1.0, np.abs(P).max())):
        raise ValueError("P must be symmetric")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise ValueError("P must be positive definite")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k_bar = np.asarray(k_bar, dtype=float).reshape(1, 4)
    a_cl = ss.A + ss.B2 @ k_bar
    c_cl = ss.C1 + ss.D12 @ k_bar
    top = a_cl.T @ P + P @ a_cl + (c_cl.T @ c_cl) / gamma
    cert = np.block([[top, P @ ss.B1], [ss.B1.T @ P, -gamma * np.eye(1)]])
    return float(np.linalg.eigvalsh(cert)[-1])


def certificate_from_riccati(ss: StateSpace, k_bar, gamma: float) -> np.ndarray:
    """Construct a storage matrix P for a given gain and level from the
    bounded-real Riccati equation (used when no Lyapunov data accompanies
    the gain, e.g. for externally supplied gain values).

    Solves A_cl^T P + P A_cl + C_cl^T C_cl/gamma + P B1 B1^T P/gamma + Q0 = 0
    with a small positive Q0 so the resulting certificate holds strictly.
    Raises when the closed loop is unstable or gamma is below the
    achievable level.
    """
    k_bar = np.asarray(k_bar, dtype=float).reshape(1, 4)
    a_cl = ss.A + ss.B2 @ k_bar
    if not is_hurwitz(a_cl):
        raise ValueError("closed loop is not Hurwitz; no storage matrix exists")
    c_cl = ss.C1 + ss.D12 @ k_bar
    q = (c_cl.T @ c_cl) / gamma
    q = q + 1e-6 * max(1.0, np.abs(q).max()) * np.eye(4)
    r = np.array([[-gamma]])
    P = sla.solve_continuous_are(a_cl, ss.B1, q, r)
    P = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise ValueError("Riccati solution is not positive definite")
    return P


def navigation_spectrum(ss: StateSpace, k_out, zero_tol: float = 1e-9):
    """Split the output-feedback spectrum into the free disk mode and the rest.

    The first columns of both A and B2*k_out*C2 are zero, so the loop has
    a structurally zero eigenvalue: the disk angle integrates whatever the
    rest does and holds its final value.  Returns (zero_eigs, other_eigs).
    """
    eigs = np.linalg.eigvals(output_feedback_matrix(ss, k_out))
    is_zero = np.abs(eigs) < zero_tol
    return eigs[is_zero], eigs[~is_zero]
