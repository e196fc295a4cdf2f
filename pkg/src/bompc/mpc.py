"""Condensed linear MPC with hard input bounds and softened output bounds.

At each step the model state is eliminated through

    y_stack = Phi @ z0 + Gamma @ u_stack

where ``y_stack`` holds the predicted outputs one to ``horizon`` steps ahead.
The decision vector is ``x = [u_stack, s]`` with one slack per predicted
output. The QP is

    minimize    1/2 x' H x + g' x
    subject to  lower <= x <= upper,  G x <= h

with ``H = blkdiag(Gamma' Qbar Gamma + Rbar, slack_weight I)``, which is half
of the tracking cost up to a constant.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MaxIterations
from .predmodel import PredictionModel

log = logging.getLogger(__name__)


def _vec(x, n: int, name: str) -> np.ndarray:
    a = np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
    return a


@dataclass
class MpcConfig:
    horizon: int = 10
    q_weight: np.ndarray = field(default_factory=lambda: 1e3 * np.eye(2))
    r_weight: np.ndarray = field(default_factory=lambda: np.eye(3))
    u_min: np.ndarray = field(default_factory=lambda: np.full(3, -10.0))
    u_max: np.ndarray = field(default_factory=lambda: np.full(3, 10.0))
    y_min: np.ndarray = field(default_factory=lambda: np.full(2, -0.1))
    y_max: np.ndarray = field(default_factory=lambda: np.full(2, 0.1))
    slack_weight: float = 1e6

    def __post_init__(self):
        self.q_weight = np.atleast_2d(np.asarray(self.q_weight, dtype=float))
        self.r_weight = np.atleast_2d(np.asarray(self.r_weight, dtype=float))
        n_y = self.q_weight.shape[0]
        n_u = self.r_weight.shape[0]
        self.u_min = _vec(self.u_min, n_u, "u_min")
        self.u_max = _vec(self.u_max, n_u, "u_max")
        self.y_min = _vec(self.y_min, n_y, "y_min")
        self.y_max = _vec(self.y_max, n_y, "y_max")
        self.validate()

    @property
    def n_u(self) -> int:
        return self.r_weight.shape[0]

    @property
    def n_y(self) -> int:
        return self.q_weight.shape[0]

    def validate(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if np.any(self.u_min >= self.u_max) or np.any(self.y_min >= self.y_max):
            raise ValueError("bounds must satisfy min < max elementwise")
        if np.linalg.eigvalsh(0.5 * (self.q_weight + self.q_weight.T)).min() < -1e-12:
            raise ValueError("q_weight must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.r_weight + self.r_weight.T)).min() <= 0:
            raise ValueError("r_weight must be positive definite")
        if self.slack_weight <= 0:
            raise ValueError("slack_weight must be positive")


@dataclass
class QpProblem:
    hessian: np.ndarray
    gradient: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_bound: np.ndarray | None = None
    start: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.gradient.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)

    def constraint_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """All constraints stacked as ``A x <= b``; infinite bounds are dropped."""
        n = self.dim
        eye = np.eye(n)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        rows = [eye[up], -eye[lo]]
        rhs = [self.upper[up], -self.lower[lo]]
        if self.ineq_matrix is not None and self.ineq_matrix.size:
            rows.append(self.ineq_matrix)
            rhs.append(self.ineq_bound)
        return np.vstack(rows), np.concatenate(rhs)

    def is_feasible(self, x, tol: float = 1e-9) -> bool:
        a, b = self.constraint_rows()
        return bool(np.all(a @ x <= b + tol))


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    RIDGED = "ridged"
    FAILED = "failed"


def _initial_point(p: QpProblem) -> np.ndarray:
    if p.start is not None:
        return np.clip(p.start, p.lower, p.upper)
    if p.ineq_matrix is not None and p.ineq_matrix.size:
        raise ValueError("problems with general inequalities need a feasible start")
    return np.clip(np.zeros(p.dim), p.lower, p.upper)


def _eqp_step(h, grad, aw, definite: bool, tol: float):
    """Step and multipliers of the equality-constrained subproblem.

    Returns ``(step, multipliers, ray)``; ``ray`` is True when the step is a
    direction of unbounded descent on the working face (semidefinite case).
    """
    n = h.shape[0]
    m = aw.shape[0]
    if definite:
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = h
        kkt[:n, n:] = aw.T
        kkt[n:, :n] = aw
        sol = np.linalg.solve(kkt, np.concatenate([-grad, np.zeros(m)]))
        return sol[:n], sol[n:], False

    if m:
        _, sv, vt = np.linalg.svd(aw)
        rank = int(np.sum(sv > 1e-12 * sv[0]))
        z = vt[rank:].T
    else:
        z = np.eye(n)
    if z.shape[1] == 0:
        step = np.zeros(n)
    else:
        hr = z.T @ h @ z
        gr = z.T @ grad
        evals, evecs = np.linalg.eigh(0.5 * (hr + hr.T))
        cutoff = 1e-10 * max(1.0, float(np.abs(evals).max()))
        flat = evals <= cutoff
        proj = evecs[:, flat].T @ gr
        if flat.any() and np.max(np.abs(proj)) > tol * (1.0 + np.abs(grad).max()):
            return -z @ (evecs[:, flat] @ proj), np.zeros(m), True
        inv = np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, evals))
        step = -z @ (evecs @ (inv * (evecs.T @ gr)))
    lam = np.linalg.lstsq(aw.T, -(grad + h @ step), rcond=None)[0] if m else np.zeros(0)
    return step, lam, False


def solve_qp(p: QpProblem, max_iter: int = 500, tol: float = 1e-10) -> tuple[np.ndarray, QpStatus]:
    """Primal active-set method for a convex QP.

    Starts from ``p.start`` (or the projection of the origin onto the box
    when there are no general inequalities) and keeps every iterate
    feasible, so bound-constrained variables land exactly on their bounds.
    Positive definite Hessians use a direct KKT solve; semidefinite ones
    use a null-space step that follows rays of constant curvature to the
    next blocking constraint.

    Raises
    ------
    MaxIterations
        If the working set has not settled after ``max_iter`` iterations or
        the problem is unbounded below.
    """
    h = 0.5 * (p.hessian + p.hessian.T)
    g = p.gradient
    n = p.dim
    a, b = p.constraint_rows()
    x = _initial_point(p)
    scale = 1.0 + float(np.max(np.abs(h), initial=0.0)) + float(np.max(np.abs(g), initial=0.0))
    try:
        np.linalg.cholesky(h)
        definite = True
    except np.linalg.LinAlgError:
        definite = False
    # the leading constraint rows are the finite bounds, one variable each
    n_bounds = int(np.sum(np.isfinite(p.upper)) + np.sum(np.isfinite(p.lower)))
    bound_var = np.array([int(np.flatnonzero(row)[0]) for row in a[:n_bounds]], dtype=int)
    bound_val = np.array([b[i] / a[i, bound_var[i]] for i in range(n_bounds)])
    working: list[int] = []
    # after a full unblocked step x is the face minimizer; re-solving would
    # only return roundoff-sized steps on ill-conditioned Hessians
    face_min = False

    for _ in range(max_iter):
        grad = h @ x + g
        step, lam, ray = _eqp_step(h, grad, a[working], definite, tol)

        if face_min or (
            not ray and np.max(np.abs(step), initial=0.0) <= tol * (1.0 + np.max(np.abs(x), initial=0.0))
        ):
            face_min = False
            if not working or lam.min() >= -tol * scale:
                return x, QpStatus.OPTIMAL
            working.pop(int(np.argmin(lam)))
            continue

        ap = a @ step
        slack = b - a @ x
        alpha = np.inf if ray else 1.0
        blocking = -1
        for i in np.flatnonzero(ap > 1e-14 * (1.0 + np.abs(step).max())):
            if i in working:
                continue
            ratio = max(slack[i], 0.0) / ap[i]
            if ratio < alpha:
                alpha = ratio
                blocking = int(i)
        if not np.isfinite(alpha):
            raise MaxIterations("QP is unbounded below")
        x = x + alpha * step
        face_min = blocking < 0
        if blocking >= 0:
            working.append(blocking)
        # keep bounds in the working set exact despite roundoff in the step
        for i in working:
            if i < n_bounds:
                x[bound_var[i]] = bound_val[i]
    raise MaxIterations(f"active set did not settle in {max_iter} iterations")


def kkt_residual(p: QpProblem, x) -> float:
    """Largest violation among primal feasibility, stationarity and complementarity.

    Multipliers are recovered by non-negative least squares on the
    constraints active at ``x``.
    """
    from scipy.optimize import nnls

    a, b = p.constraint_rows()
    viol = float(np.max(a @ x - b, initial=0.0))
    grad = p.hessian @ x + p.gradient
    active = np.flatnonzero(np.abs(a @ x - b) <= 1e-9 * (1.0 + np.abs(b)))
    if active.size:
        lam, _ = nnls(a[active].T, -grad)
        stat = grad + a[active].T @ lam
    else:
        stat = grad
    return max(viol, float(np.max(np.abs(stat), initial=0.0)))


@dataclass(frozen=True)
class Condensed:
    """Prediction matrices of a model over a horizon."""

    phi: np.ndarray
    gamma: np.ndarray


def condense(model: PredictionModel, horizon: int) -> Condensed:
    """``y_{k} = C z_k`` for ``k = 1..horizon`` as ``Phi z_0 + Gamma u``."""
    if np.any(model.d):
        raise DimensionMismatch("condensed prediction assumes zero feedthrough D")
    n_z, n_u, n_y = model.n_z, model.n_u, model.n_y
    phi = np.zeros((horizon * n_y, n_z))
    gamma = np.zeros((horizon * n_y, horizon * n_u))
    # c_apow[k] = C A^k
    c_apow = [model.c]
    for _ in range(horizon):
        c_apow.append(c_apow[-1] @ model.a)
    markov = [ca @ model.b for ca in c_apow[:horizon]]
    for k in range(horizon):
        phi[k * n_y:(k + 1) * n_y] = c_apow[k + 1]
        for j in range(k + 1):
            gamma[k * n_y:(k + 1) * n_y, j * n_u:(j + 1) * n_u] = markov[k - j]
    return Condensed(phi, gamma)


def _pad_reference(ref_window, horizon: int, n_y: int) -> np.ndarray:
    ref = np.atleast_2d(np.asarray(ref_window, dtype=float))
    if ref.shape[1] != n_y:
        raise DimensionMismatch(f"reference has {ref.shape[1]} channels, expected {n_y}")
    if ref.shape[0] < horizon:
        ref = np.vstack([ref, np.repeat(ref[-1:], horizon - ref.shape[0], axis=0)])
    return ref[:horizon]


def build_qp(
    model: PredictionModel,
    cfg: MpcConfig,
    ref_window,
    condensed: Condensed | None = None,
    u_guess=None,
) -> QpProblem:
    """Condensed QP for the current observer state.

    ``ref_window[k]`` is the reference for the output ``k + 1`` steps ahead;
    short windows are padded with their last row. ``u_guess`` seeds the
    feasible starting point (clipped into the input box).
    """
    T = cfg.horizon
    n_u, n_y = model.n_u, model.n_y
    if cfg.n_u != n_u or cfg.n_y != n_y:
        raise DimensionMismatch("MPC weights do not match the model dimensions")
    cd = condensed or condense(model, T)
    ref = _pad_reference(ref_window, T, n_y).ravel()

    q_bar = np.kron(np.eye(T), cfg.q_weight)
    r_bar = np.kron(np.eye(T), cfg.r_weight)
    free = cd.phi @ model.z
    gqg = cd.gamma.T @ q_bar @ cd.gamma + r_bar
    n_s = T * n_y
    nu_t = T * n_u
    hess = np.zeros((nu_t + n_s, nu_t + n_s))
    hess[:nu_t, :nu_t] = 0.5 * (gqg + gqg.T)
    hess[nu_t:, nu_t:] = cfg.slack_weight * np.eye(n_s)
    grad = np.concatenate([cd.gamma.T @ q_bar @ (free - ref), np.zeros(n_s)])

    lower = np.concatenate([np.tile(cfg.u_min, T), np.zeros(n_s)])
    upper = np.concatenate([np.tile(cfg.u_max, T), np.full(n_s, np.inf)])
    y_hi = np.tile(cfg.y_max, T) - free
    y_lo = np.tile(cfg.y_min, T) - free
    eye_s = np.eye(n_s)
    g_mat = np.block([[cd.gamma, -eye_s], [-cd.gamma, -eye_s]])
    h_vec = np.concatenate([y_hi, -y_lo])

    u0 = np.zeros(nu_t) if u_guess is None else np.asarray(u_guess, dtype=float)
    u0 = np.clip(u0, lower[:nu_t], upper[:nu_t])
    y0 = cd.gamma @ u0
    s0 = np.maximum(0.0, np.maximum(y0 - y_hi, y_lo - y0)) + 1e-12
    return QpProblem(hess, grad, lower, upper, g_mat, h_vec, np.concatenate([u0, s0]))


@dataclass
class StepInfo:
    status: QpStatus
    slack: float


class MpcController:
    """Receding-horizon controller bound to one prediction model.

    The condensed matrices are computed once; each :meth:`step` updates the
    observer, rebuilds the QP gradient and bounds and applies the first
    input block of the solution.
    """

    def __init__(self, model: PredictionModel, cfg: MpcConfig):
        self.model = model
        self.cfg = cfg
        self.condensed = condense(model, cfg.horizon)
        self._last_u = None
        self.failures = 0
        self.slack_steps = 0

    def reset(self):
        self.model.reset()
        self._last_u = None
        self.failures = 0
        self.slack_steps = 0

    def plan(self, ref_window) -> tuple[np.ndarray, StepInfo]:
        """Solve the QP from the current observer state; returns the full input sequence."""
        cfg = self.cfg
        n_u = cfg.n_u
        guess = None
        if self._last_u is not None:
            guess = np.concatenate([self._last_u[n_u:], self._last_u[-n_u:]])
        prob = build_qp(self.model, cfg, ref_window, self.condensed, guess)
        status = QpStatus.OPTIMAL
        try:
            x, status = solve_qp(prob)
        except MaxIterations:
            prob.hessian = prob.hessian + 1e-8 * np.eye(prob.dim)
            try:
                x, _ = solve_qp(prob)
                status = QpStatus.RIDGED
            except MaxIterations:
                log.warning("MPC QP failed twice; applying zero input")
                self.failures += 1
                self._last_u = None
                return np.zeros(cfg.horizon * n_u), StepInfo(QpStatus.FAILED, 0.0)
        nu_t = cfg.horizon * n_u
        u_seq = np.clip(x[:nu_t], prob.lower[:nu_t], prob.upper[:nu_t])
        slack = float(np.max(x[nu_t:], initial=0.0))
        if slack > 1e-6:
            self.slack_steps += 1
        self._last_u = u_seq
        return u_seq, StepInfo(status, slack)

    def step(self, ref_window, y_meas=None, u_prev=None) -> np.ndarray:
        """Observer update with ``(u_prev, y_meas)`` then the first planned input.

        ``y_meas`` must be the measurement taken in the same sample period
        that ``u_prev`` was applied (predictor-form observer). Pass
        ``None`` for both on the very first step.
        """
        if y_meas is not None:
            self.model.observer_update(np.zeros(self.cfg.n_u) if u_prev is None else u_prev, y_meas)
        u_seq, _ = self.plan(ref_window)
        return np.clip(u_seq[: self.cfg.n_u], self.cfg.u_min, self.cfg.u_max)


def mpc_step(model: PredictionModel, cfg: MpcConfig, ref_window, y_meas=None, u_prev=None) -> np.ndarray:
    """One-off MPC step (condenses the model on every call)."""
    return MpcController(model, cfg).step(ref_window, y_meas, u_prev)
