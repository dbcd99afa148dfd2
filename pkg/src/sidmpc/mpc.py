"""Receding-horizon MPC over a velocity-form input parameterization.

The optimizer works on the stacked move vector DU = [du_0; ...; du_{M-1}]
with inputs held constant after the control horizon:

    u(k+i) = u_prev + du_0 + ... + du_min(i, M-1)

Predicted outputs over the prediction horizon P stack as

    Yhat = Phi xhat + Psi u_prev + Theta DU

and the tracking objective  sum_i |r - yhat|^2_Q + sum_j |du_j|^2_R  becomes
a convex QP in DU.  Output bounds are hard by default; when they make the
QP infeasible the step is re-solved with slack variables on the output
bounds under a large quadratic penalty, and that engagement is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConvergenceError, InfeasibleError
from .qp import QpProblem, solve_qp
from .ssmodel import KalmanState, StateSpaceModel, kalman_step

SOFT_PENALTY = 1e6


@dataclass
class MpcConfig:
    """Horizons, weights, and constraint windows, all in deviation units.

    Q_weights is one weight per output channel, or a (P, p) array for
    time-varying weights; R_weights likewise per input with optional (M, m)
    shape.  y bounds are mandatory, input and move bounds optional.
    """

    P: int
    M: int
    Q_weights: np.ndarray
    R_weights: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    u_min: Optional[np.ndarray] = None
    u_max: Optional[np.ndarray] = None
    du_max: Optional[np.ndarray] = None
    ts: float = 1.0

    def __post_init__(self):
        if not 1 <= self.M <= self.P:
            raise ValueError(f"need 1 <= M <= P, got M={self.M} P={self.P}")
        self.Q_weights = np.asarray(self.Q_weights, dtype=float)
        self.R_weights = np.asarray(self.R_weights, dtype=float)
        if np.any(self.Q_weights < 0) or np.any(self.R_weights < 0):
            raise ValueError("weights must be nonnegative")
        self.y_min = np.asarray(self.y_min, dtype=float).reshape(-1)
        self.y_max = np.asarray(self.y_max, dtype=float).reshape(-1)
        if self.y_min.shape != self.y_max.shape or np.any(self.y_min >= self.y_max):
            raise ValueError("y_min must be strictly below y_max componentwise")
        for name in ("u_min", "u_max", "du_max"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).reshape(-1))
        if (self.u_min is None) != (self.u_max is None):
            raise ValueError("give u_min and u_max together or not at all")
        if self.u_min is not None and np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be strictly below u_max componentwise")
        if self.du_max is not None and np.any(self.du_max <= 0):
            raise ValueError("du_max must be positive componentwise")
        if not self.ts > 0:
            raise ValueError(f"ts must be positive, got {self.ts}")


def _step_gains(model: StateSpaceModel, upto: int) -> list[np.ndarray]:
    """G_t = C (I + A + ... + A^(t-1)) B + D for t >= 1, G_0 = D.

    G_t maps a step change applied t samples ago to the current output.
    """
    A, B, C, D = model.A, model.B, model.C, model.D
    gains = [D.copy()]
    acc = np.zeros_like(A)
    Ak = np.eye(model.n)
    for _ in range(upto):
        acc = acc + Ak
        gains.append(C @ acc @ B + D)
        Ak = Ak @ A
    return gains


def build_prediction(model: StateSpaceModel, cfg: MpcConfig):
    """Stacked prediction matrices (Phi, Psi, Theta) for Yhat over horizon P."""
    n, m, p = model.n, model.m, model.p
    P_, M_ = cfg.P, cfg.M
    Phi = np.empty((P_ * p, n))
    Ak = model.A.copy()
    for i in range(P_):
        Phi[i * p : (i + 1) * p] = model.C @ Ak
        Ak = Ak @ model.A
    gains = _step_gains(model, P_)
    Psi = np.vstack([gains[i] for i in range(1, P_ + 1)])
    Theta = np.zeros((P_ * p, M_ * m))
    for i in range(1, P_ + 1):
        for l in range(min(i, M_ - 1) + 1):
            Theta[(i - 1) * p : i * p, l * m : (l + 1) * m] = gains[i - l]
    return Phi, Psi, Theta


class MpcController:
    """Single-model receding-horizon controller with a built-in estimator.

    Mutable across instants: the Kalman state and the last applied input
    evolve with each control_step call.
    """

    def __init__(self, model: StateSpaceModel, cfg: MpcConfig,
                 x0=None, u_prev=None, qp_tol: float = 1e-9,
                 qp_max_iter: int = 20000):
        if abs(model.ts - cfg.ts) > 1e-12 * max(model.ts, cfg.ts):
            raise ValueError(f"model ts {model.ts} differs from config ts {cfg.ts}")
        self.model = model
        self.cfg = cfg
        self.qp_tol = qp_tol
        self.qp_max_iter = qp_max_iter
        n, m, p = model.n, model.m, model.p
        if cfg.y_min.shape[0] != p:
            raise ValueError(f"y bounds have length {cfg.y_min.shape[0]}, model p={p}")
        for name in ("u_min", "u_max", "du_max"):
            v = getattr(cfg, name)
            if v is not None and v.shape[0] != m:
                raise ValueError(f"{name} has length {v.shape[0]}, model m={m}")

        self.estimator = KalmanState(model, x0)
        self.u_prev = (np.zeros(m) if u_prev is None
                       else np.asarray(u_prev, dtype=float).reshape(m).copy())

        self.Phi, self.Psi, self.Theta = build_prediction(model, cfg)
        self.qbar = self._stack_weights(cfg.Q_weights, cfg.P, p, "Q_weights")
        self.rbar = self._stack_weights(cfg.R_weights, cfg.M, m, "R_weights")

        H = 2.0 * (self.Theta.T @ (self.qbar[:, None] * self.Theta)
                   + np.diag(self.rbar))
        # template problem; f and b are rewritten in place every instant
        self._qp = QpProblem(H, np.zeros(cfg.M * m), *self._constraint_rows())
        self._H_reg = self._qp.H
        self._n_out_rows = 2 * cfg.P * p

    @staticmethod
    def _stack_weights(w: np.ndarray, steps: int, width: int, name: str):
        if w.ndim == 1:
            if w.shape[0] != width:
                raise ValueError(f"{name} has length {w.shape[0]}, expected {width}")
            return np.tile(w, steps)
        if w.shape != (steps, width):
            raise ValueError(f"{name} must be ({steps}, {width}), got {w.shape}")
        return w.reshape(-1)

    def _constraint_rows(self):
        cfg, m = self.cfg, self.model.m
        blocks = [self.Theta, -self.Theta]
        if cfg.u_min is not None:
            T = np.tril(np.ones((cfg.M, cfg.M)))
            Tm = np.kron(T, np.eye(m))
            blocks += [Tm, -Tm]
        if cfg.du_max is not None:
            eye = np.eye(cfg.M * m)
            blocks += [eye, -eye]
        A = np.vstack(blocks)
        return A, np.zeros(A.shape[0])

    def _constraint_rhs(self, free):
        cfg, m = self.cfg, self.model.m
        ymax = np.tile(cfg.y_max, cfg.P)
        ymin = np.tile(cfg.y_min, cfg.P)
        parts = [ymax - free, free - ymin]
        if cfg.u_min is not None:
            umax = np.tile(cfg.u_max - self.u_prev, cfg.M)
            umin = np.tile(self.u_prev - cfg.u_min, cfg.M)
            parts += [umax, umin]
        if cfg.du_max is not None:
            du = np.tile(cfg.du_max, cfg.M)
            parts += [du, du]
        return np.concatenate(parts)

    def _expand_ref(self, ref):
        ref = np.asarray(ref, dtype=float).reshape(-1)
        p, P_ = self.model.p, self.cfg.P
        if ref.shape[0] == p:
            return np.tile(ref, P_)
        if ref.shape[0] == P_ * p:
            return ref
        raise ValueError(
            f"ref must have length {p} or {P_ * p}, got {ref.shape[0]}"
        )

    def assemble_qp(self, xhat, ref) -> QpProblem:
        """QP over DU for the given state estimate and reference stack."""
        ref = self._expand_ref(ref)
        free = self.Phi @ np.asarray(xhat, dtype=float).reshape(-1) \
            + self.Psi @ self.u_prev
        f = 2.0 * (self.Theta.T @ (self.qbar * (free - ref)))
        self._qp.f[:] = f
        self._qp.b_ineq[:] = self._constraint_rhs(free)
        self._free = free
        self._ref = ref
        return self._qp

    def tracking_cost(self, free, ref, dU) -> float:
        """Horizon cost: weighted tracking error plus weighted moves."""
        err = ref - (free + self.Theta @ dU)
        return float(err @ (self.qbar * err) + dU @ (self.rbar * dU))

    def _solve_soft(self, qp: QpProblem, free):
        """Re-solve with slack on the output bounds, penalty SOFT_PENALTY."""
        cfg = self.cfg
        d = cfg.M * self.model.m
        ns = cfg.P * self.model.p
        H = np.zeros((d + ns, d + ns))
        H[:d, :d] = self._H_reg
        H[d:, d:] = 2.0 * SOFT_PENALTY * np.eye(ns)
        f = np.concatenate([qp.f, np.zeros(ns)])
        A_hard = qp.A_ineq[self._n_out_rows:]
        b_hard = qp.b_ineq[self._n_out_rows:]
        A = np.vstack([
            np.hstack([self.Theta, -np.eye(ns)]),
            np.hstack([-self.Theta, -np.eye(ns)]),
            np.hstack([np.zeros((ns, d)), -np.eye(ns)]),
            np.hstack([A_hard, np.zeros((A_hard.shape[0], ns))]),
        ])
        b = np.concatenate([qp.b_ineq[:ns], qp.b_ineq[ns:2 * ns],
                            np.zeros(ns), b_hard])
        soft = QpProblem(H, f, A, b)
        sol, active, _ = solve_qp(soft, tol=self.qp_tol, max_iter=self.qp_max_iter)
        return sol[:d], sol[d:], active

    def _step_core(self, y_k, ref):
        """Estimator update plus one QP solve; does not commit u_prev."""
        kalman_step(self.estimator, self.u_prev, y_k)
        xhat = self.estimator.xhat
        qp = self.assemble_qp(xhat, ref)
        diag = {"fallback": False, "fallback_failed": False, "slack_max": 0.0}
        try:
            dU, active, _ = solve_qp(qp, tol=self.qp_tol, max_iter=self.qp_max_iter)
        except (InfeasibleError, ConvergenceError):
            # a stalled dual is treated like infeasibility: soften and retry
            diag["fallback"] = True
            try:
                dU, slack, active = self._solve_soft(qp, self._free)
                diag["slack_max"] = float(np.max(slack, initial=0.0))
            except (InfeasibleError, ConvergenceError) as exc:
                diag["fallback_failed"] = True
                diag["error"] = str(exc)
                dU = np.zeros(self.cfg.M * self.model.m)
                active = []
        u_k = self.u_prev + dU[: self.model.m]
        diag["J"] = self.tracking_cost(self._free, self._ref, dU)
        diag["active"] = active
        diag["yhat"] = self._free + self.Theta @ dU
        diag["xhat"] = xhat.copy()
        diag["du"] = dU[: self.model.m].copy()
        return u_k, diag

    def control_step(self, y_k, ref_trajectory):
        """One receding-horizon instant; applies and remembers the move."""
        u_k, diag = self._step_core(y_k, ref_trajectory)
        self.u_prev = u_k
        return u_k, diag


def control_step(ctrl: MpcController, y_k, ref_trajectory):
    return ctrl.control_step(y_k, ref_trajectory)


def assemble_qp(ctrl: MpcController, xhat, ref) -> QpProblem:
    return ctrl.assemble_qp(xhat, ref)
