"""Robust output-feedback gain synthesis via a dedicated matrix-inequality
solver.

The design problem: find a static gain u = K_bar x so the closed loop is
internally stable and the energy gain from the rider disturbance w to the
performance channel z = [theta1, theta2, u] stays below a level gamma.
Feasibility of one affine matrix inequality in (Y, V, N, gamma) certifies
both properties at once; the gain falls out as K_bar = N V^-1, and the
output gain drops the (unmeasured) theta1 entry.

The inequality is a single dense 17x17 constraint with block row sizes
(4, 4, 1, 3, 1, 4), so a general SDP stack is not pulled in.  Instead the
solver minimizes the largest eigenvalue of the affine matrix map directly:
lambda_max is convex, smoothed here by a temperature-scaled log-sum-exp
over the spectrum, and minimized by damped Newton steps with temperature
continuation.  Newton (rather than a first-order or quasi-Newton loop) is
load-bearing: feasible points have entries spanning five decades (Y must
dominate B1 B1^T / gamma), and Newton's affine invariance is what makes
the identity-scaled start workable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .plant import StateSpace
from .textio import TextFormatError, format_floats, parse_float, parse_floats, parse_keyvalues, single

logger = logging.getLogger(__name__)

BLOCK_SIZES = (4, 4, 1, 3, 1, 4)
N_DECISIONS = 30  # 10 (sym Y) + 16 (V) + 4 (N)
FEASIBILITY_MARGIN_FACTOR = 1e-6   # eps = factor * ||M||_F at the candidate
V_CONDITION_LIMIT = 1e8
DEFAULT_BRACKET = (0.05, 500.0)
DEFAULT_BISECTION_TOL = 0.05

_TRIU = np.triu_indices(4)


class SynthesisError(RuntimeError):
    """Synthesis could not produce a certified gain."""


@dataclass
class LmiDecision:
    """Decision variables of the synthesis inequality plus the derived
    Lyapunov matrix P = Y^-1.

    Construction checks shapes and symmetry only; :meth:`validate`
    enforces the semantic invariants (Y positive definite, V well
    conditioned, P*Y = I).
    """

    y: np.ndarray
    v: np.ndarray
    n: np.ndarray
    gamma: float
    p: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(4, 4)
        self.v = np.asarray(self.v, dtype=float).reshape(4, 4)
        self.n = np.asarray(self.n, dtype=float).reshape(1, 4)
        self.gamma = float(self.gamma)
        if not np.allclose(self.y, self.y.T, atol=1e-12 * max(1.0, np.abs(self.y).max())):
            raise ValueError("Y must be symmetric")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.p is None:
            try:
                self.p = np.linalg.inv(self.y)
            except np.linalg.LinAlgError:
                self.p = None
        else:
            self.p = np.asarray(self.p, dtype=float).reshape(4, 4)

    def validate(self) -> None:
        eig_y = np.linalg.eigvalsh(self.y)
        if eig_y[0] <= 0:
            raise ValueError(f"Y is not positive definite (min eig {eig_y[0]:.3g})")
        cond_v = np.linalg.cond(self.v)
        if not np.isfinite(cond_v) or cond_v > V_CONDITION_LIMIT:
            raise ValueError(f"V is too ill-conditioned for gain extraction (cond {cond_v:.3g})")
        if self.p is None or not np.allclose(self.p @ self.y, np.eye(4), atol=1e-6):
            raise ValueError("P*Y = I does not hold within tolerance")


@dataclass(frozen=True)
class GainSet:
    """Full-information gain and its output-feedback restriction.

    k_out is k_bar with the theta1 entry dropped; it multiplies the
    measurement y = [theta1_dot, theta2, theta2_dot] directly.
    """

    k_bar: np.ndarray
    k_out: np.ndarray
    gamma_achieved: float

    def __post_init__(self):
        object.__setattr__(self, "k_bar", np.asarray(self.k_bar, dtype=float).reshape(1, 4))
        object.__setattr__(self, "k_out", np.asarray(self.k_out, dtype=float).reshape(1, 3))
        if not np.array_equal(self.k_out[0], self.k_bar[0, 1:]):
            raise ValueError("k_out must equal columns 2..4 of k_bar")


@dataclass(frozen=True)
class SynthesisResult:
    gains: GainSet
    decision: LmiDecision
    lmi_lambda_max: float
    feasibility_margin: float


def _pack(y: np.ndarray, v: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.concatenate([y[_TRIU], v.ravel(), n.ravel()])


def _unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    y = np.zeros((4, 4))
    y[_TRIU] = x[:10]
    y = y + y.T - np.diag(np.diag(y))
    return y, x[10:26].reshape(4, 4), x[26:30].reshape(1, 4)


def evaluate_lmi(d: LmiDecision, ss: StateSpace) -> np.ndarray:
    """Assemble the 17x17 symmetric constraint matrix at a decision point.

    Block rows are sized (4, 4, 1, 3, 1, 4); the lower triangle carries
    -(V^T+V), AV+Y+B2*N, B1^T, C1*V, N and V, the diagonal carries
    -(V^T+V), -Y, -gamma, -gamma*I3, -gamma, -Y, and the upper triangle
    mirrors. Negative definiteness of this matrix is the synthesis
    certificate.
    """
    return _assemble(d.y, d.v, d.n, d.gamma, ss)


def _assemble(y, v, n, gamma, ss: StateSpace) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    if y.shape != (4, 4) or v.shape != (4, 4) or n.shape != (1, 4):
        raise ValueError(
            f"decision shapes must be Y 4x4, V 4x4, N 1x4; got {y.shape}, {v.shape}, {n.shape}"
        )
    bounds = np.cumsum((0,) + BLOCK_SIZES)
    M = np.zeros((bounds[-1], bounds[-1]))

    def put(i, j, block):
        block = np.atleast_2d(np.asarray(block, dtype=float))
        rows = slice(bounds[i], bounds[i + 1])
        cols = slice(bounds[j], bounds[j + 1])
        if M[rows, cols].shape != block.shape:
            raise ValueError(f"block ({i},{j}) has shape {block.shape}, expected {M[rows, cols].shape}")
        M[rows, cols] = block
        if i != j:
            M[cols, rows] = block.T

    put(0, 0, -(v.T + v))
    put(1, 1, -y)
    put(2, 2, [[-gamma]])
    put(3, 3, -gamma * np.eye(3))
    put(4, 4, [[-gamma]])
    put(5, 5, -y)
    put(1, 0, ss.A @ v + y + ss.B2 @ n)
    put(2, 1, ss.B1.T)
    put(3, 0, ss.C1 @ v)
    put(4, 0, n)
    put(5, 0, v)
    return M


class _AffineLmi:
    """Cached affine encoding M(x, gamma) = M_const + sum_k x_k E_k + gamma*D.

    M_const carries the fixed B1 blocks; dropping it (or folding it into
    the basis) silently changes the optimization problem, so the encoding
    is asserted against :func:`_assemble` on construction.
    """

    def __init__(self, ss: StateSpace):
        self.ss = ss
        zero = (np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((1, 4)))
        self.m_const = _assemble(*zero, 0.0, ss)
        self.d_gamma = _assemble(*zero, 1.0, ss) - self.m_const
        basis = []
        for k in range(N_DECISIONS):
            e = np.zeros(N_DECISIONS)
            e[k] = 1.0
            basis.append(_assemble(*_unpack(e), 0.0, ss) - self.m_const)
        self.basis = np.array(basis)
        self.basis_flat = self.basis.reshape(N_DECISIONS, -1)
        probe = np.arange(1.0, N_DECISIONS + 1.0)
        exact = _assemble(*_unpack(probe), 2.0, ss)
        encoded = self.build(probe, 2.0)
        assert np.allclose(exact, encoded, atol=1e-9 * max(1.0, np.abs(exact).max()))

    def build(self, x: np.ndarray, gamma: float) -> np.ndarray:
        return (x @ self.basis_flat).reshape(17, 17) + self.m_const + gamma * self.d_gamma

    def smooth_eval(self, x: np.ndarray, gamma: float, temp: float):
        """Smoothed objective f = temp*logsumexp(spectrum/temp), gradient,
        Hessian, plus the hard lambda_max and the assembled matrix."""
        M = self.build(x, gamma)
        lam, Q = sla.eigh(M)
        lmax = lam[-1]
        weights = np.exp((lam - lmax) / temp)
        z = weights.sum()
        prob = weights / z
        f = lmax + temp * np.log(z)
        # E_tilde[a] = Q^T E_a Q
        et = np.einsum("aij,ik,jl->akl", self.basis, Q, Q, optimize=True)
        diag = np.einsum("akk->ak", et)
        grad = diag @ prob
        # Divided differences of the softmax weights handle the eigenvector
        # rotation part of the Hessian; coincident eigenvalues take the limit.
        dl = lam[:, None] - lam[None, :]
        dp = prob[:, None] - prob[None, :]
        tol = 1e-10 * max(1.0, float(np.abs(lam).max()))
        with np.errstate(divide="ignore", invalid="ignore"):
            cdd = np.where(np.abs(dl) > tol, dp / np.where(np.abs(dl) > tol, dl, 1.0), 0.0)
        lim = (prob[:, None] + prob[None, :]) / (2.0 * temp)
        cdd = np.where(np.abs(dl) <= tol, lim, cdd)
        np.fill_diagonal(cdd, 0.0)
        hess = np.einsum("aij,ij,bij->ab", et, cdd, et, optimize=True)
        hess += (diag * (prob / temp)) @ diag.T - np.outer(grad, grad) / temp
        return f, grad, hess, lmax, M


def _initial_point(ss: StateSpace) -> np.ndarray:
    x0 = np.zeros(N_DECISIONS)
    x0[:10][np.array([0, 4, 7, 9])] = 1.0        # Y = I
    x0[10:26] = np.eye(4).ravel()                # V = I
    x0[26:30] = (-0.01 * ss.B2.T).ravel()        # N = -0.01 B2^T
    return x0


def _margin(M: np.ndarray) -> float:
    return FEASIBILITY_MARGIN_FACTOR * float(np.linalg.norm(M, "fro"))


def _newton_descend(lmi: _AffineLmi, x: np.ndarray, gamma: float, max_steps: int):
    """Temperature-continuation Newton descent on the smoothed spectral
    objective.  Returns (x, lambda_max, margin, steps, converged)."""
    lam0 = sla.eigh(lmi.build(x, gamma), eigvals_only=True)
    spread = max(float(lam0[-1] - lam0[0]), 1.0)
    temp = 0.2 * spread
    temp_floor = 1e-10 * spread
    steps = 0
    while steps < max_steps:
        f, grad, hess, lmax, M = lmi.smooth_eval(x, gamma, temp)
        eps = _margin(M)
        if lmax < -2.0 * eps:
            return x, lmax, eps, steps, True
        mu = 1e-12 * max(1.0, abs(np.trace(hess)) / N_DECISIONS)
        while True:
            try:
                chol = sla.cho_factor(hess + mu * np.eye(N_DECISIONS))
                break
            except sla.LinAlgError:
                mu = max(mu * 10.0, 1e-12)
        step = -sla.cho_solve(chol, grad)
        slope = float(grad @ step)
        alpha, accepted = 1.0, False
        for _ in range(50):
            cand = x + alpha * step
            lam = sla.eigh(lmi.build(cand, gamma), eigvals_only=True)
            f_cand = lam[-1] + temp * np.log(np.exp((lam - lam[-1]) / temp).sum())
            if f_cand <= f + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if accepted:
            x = cand
            steps += 1
        if not accepted or -slope < 1e-10 * max(1.0, abs(f)):
            temp *= 0.25   # converged at this smoothing level
            if temp < temp_floor:
                M = lmi.build(x, gamma)
                lmax = float(sla.eigh(M, eigvals_only=True)[-1])
                return x, lmax, _margin(M), steps, True
    M = lmi.build(x, gamma)
    lmax = float(sla.eigh(M, eigvals_only=True)[-1])
    return x, lmax, _margin(M), steps, False


def solve_feasibility(
    ss: StateSpace,
    gamma: float,
    *,
    seed: int = 0,
    max_newton_steps: int = 800,
    random_restarts: int = 10,
    warm_start: LmiDecision | None = None,
) -> LmiDecision | None:
    """Search for a strictly feasible decision at a fixed gamma.

    Returns a validated :class:`LmiDecision` whose assembled matrix is
    negative definite with margin eps = 1e-6*||M||_F, or None when no such
    point was found (which is not an infeasibility proof).  The spectral
    objective is convex, so restarts only hedge line-search stalls; once a
    descent has fully converged to a clearly positive minimum the
    remaining restarts are skipped.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    lmi = _AffineLmi(ss)
    rng = np.random.default_rng(seed)
    x0 = _initial_point(ss)
    starts: list[np.ndarray] = []
    if warm_start is not None:
        starts.append(_pack(warm_start.y, warm_start.v, warm_start.n))
    starts.append(x0)
    starts.extend(x0 + rng.normal(scale=0.5, size=N_DECISIONS) for _ in range(random_restarts))

    total_steps = 0
    best_lmax = np.inf
    for attempt, start in enumerate(starts):
        x, lmax, eps, steps, converged = _newton_descend(lmi, start.copy(), gamma, max_newton_steps)
        total_steps += steps
        best_lmax = min(best_lmax, lmax)
        if lmax < -eps:
            y, v, n = _unpack(x)
            y = 0.5 * (y + y.T)
            decision = LmiDecision(y=y, v=v, n=n, gamma=gamma)
            decision.validate()
            logger.debug(
                "feasible at gamma=%.6g: lambda_max=%.3g (margin %.3g), %d Newton steps, attempt %d",
                gamma, lmax, eps, total_steps, attempt,
            )
            return decision
        if converged and lmax > 10.0 * eps:
            break   # global minimum of a convex objective is positive
    logger.info(
        "not found at gamma=%.6g: best lambda_max=%.6g after %d Newton steps (%d starts)",
        gamma, best_lmax, total_steps, attempt + 1,
    )
    return None


def extract_gain(d: LmiDecision) -> GainSet:
    """Gains from a feasible decision: K_bar = N V^-1, K_out drops theta1.

    The theta1 entry of K_bar has no measurement to multiply (the disk
    position is deliberately unobserved), so the deployed output gain is
    the remaining three entries applied to y.
    """
    cond_v = np.linalg.cond(d.v)
    if not np.isfinite(cond_v) or cond_v > V_CONDITION_LIMIT:
        raise SynthesisError(
            f"V is numerically singular (cond {cond_v:.3g} > {V_CONDITION_LIMIT:.0e}); "
            "gain extraction would divide by it"
        )
    k_bar = np.linalg.solve(d.v.T, d.n.T).T
    return GainSet(k_bar=k_bar, k_out=k_bar[:, 1:], gamma_achieved=d.gamma)


def minimize_gamma(
    ss: StateSpace,
    lo: float = DEFAULT_BRACKET[0],
    hi: float = DEFAULT_BRACKET[1],
    tol: float = DEFAULT_BISECTION_TOL,
    *,
    seed: int = 0,
) -> SynthesisResult:
    """Bisect gamma over feasibility calls and return the best certified
    design.

    Requires feasibility at ``hi`` (raises :class:`SynthesisError` with a
    bracket hint otherwise); ``lo`` may be infeasible or merely unproven.
    Each probe warm-starts from the last feasible decision.
    """
    if not (0 < lo < hi):
        raise ValueError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    best = solve_feasibility(ss, hi, seed=seed)
    if best is None:
        raise SynthesisError(
            f"not feasible at the bracket top gamma={hi}; retry with a larger --gamma-hi"
        )
    best_gamma = hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        candidate = solve_feasibility(ss, mid, seed=seed, warm_start=best)
        if candidate is not None:
            hi = mid
            best = candidate
            best_gamma = mid
        else:
            lo = mid
    gains = extract_gain(best)
    gains = GainSet(k_bar=gains.k_bar, k_out=gains.k_out, gamma_achieved=best_gamma)
    M = evaluate_lmi(best, ss)
    lmax = float(sla.eigh(M, eigvals_only=True)[-1])
    logger.info("minimize_gamma: gamma*=%.6g, k_bar=%s", best_gamma, gains.k_bar.ravel())
    return SynthesisResult(gains=gains, decision=best, lmi_lambda_max=lmax, feasibility_margin=_margin(M))


# ---------------------------------------------------------------------------
# Report serialization (structured text)


def format_report(result: SynthesisResult, ss: StateSpace, plant_id: str, closed_loop_eigs) -> str:
    """Serialize a synthesis result: gamma*, gains, residual, closed-loop
    spectrum, and the Lyapunov data needed to re-verify the certificate."""
    lines = [
        "# segway-lab synthesis report",
        "format = synthesis-report-v1",
        f"plant = {plant_id}",
        f"gamma_star = {result.gains.gamma_achieved:.17g}",
        f"k_bar = {format_floats(result.gains.k_bar.ravel())}",
        f"k_out = {format_floats(result.gains.k_out.ravel())}",
        f"lmi_lambda_max = {result.lmi_lambda_max:.17g}",
        f"feasibility_margin = {result.feasibility_margin:.17g}",
    ]
    lines.extend(
        f"closed_loop_eig = {ev.real:.17g} {ev.imag:.17g}" for ev in np.atleast_1d(closed_loop_eigs)
    )
    lines.extend(f"y_row = {format_floats(row)}" for row in result.decision.y)
    lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class SynthesisReport:
    plant_id: str
    gamma_star: float
    k_bar: np.ndarray
    k_out: np.ndarray
    lmi_lambda_max: float
    closed_loop_eigs: np.ndarray
    y: np.ndarray | None


def parse_report(text: str) -> SynthesisReport:
    fields = parse_keyvalues(text)
    fmt, line_no = single(fields, "format")
    if fmt != "synthesis-report-v1":
        raise TextFormatError(f"not a synthesis report (format = {fmt!r})", line_no)
    plant_id, _ = single(fields, "plant")
    raw, ln = single(fields, "gamma_star")
    gamma_star = parse_float(raw, ln, "gamma_star")
    raw, ln = single(fields, "k_bar")
    k_bar = np.array(parse_floats(raw, ln, "k_bar", 4)).reshape(1, 4)
    raw, ln = single(fields, "k_out")
    k_out = np.array(parse_floats(raw, ln, "k_out", 3)).reshape(1, 3)
    raw, ln = single(fields, "lmi_lambda_max")
    lmax = parse_float(raw, ln, "lmi_lambda_max")
    eigs = []
    for raw, ln in fields.get("closed_loop_eig", []):
        re_, im_ = parse_floats(raw, ln, "closed_loop_eig", 2)
        eigs.append(complex(re_, im_))
    y = None
    if "y_row" in fields:
        rows = [parse_floats(raw, ln, "y_row", 4) for raw, ln in fields["y_row"]]
        if len(rows) != 4:
            raise TextFormatError(f"expected 4 y_row lines, got {len(rows)}")
        y = np.array(rows)
    if not np.array_equal(k_out[0], k_bar[0, 1:]):
        raise TextFormatError("k_out does not match columns 2..4 of k_bar")
    return SynthesisReport(
        plant_id=plant_id, gamma_star=gamma_star, k_bar=k_bar, k_out=k_out,
        lmi_lambda_max=lmax, closed_loop_eigs=np.array(eigs), y=y,
    )


def load_report(path: str | Path) -> SynthesisReport:
    return parse_report(Path(path).read_text())
