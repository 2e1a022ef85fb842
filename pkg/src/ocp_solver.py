"""
Finite-horizon optimal control by single shooting
Controls are the only decision variables; states are rollouts of the nominal
dynamics. Per-stage control boxes are handled by L-BFGS-B, a terminal equality
by an augmented Lagrangian, state boxes by squared-hinge penalties.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Protocol, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import Bounds, minimize

from .config import SOLVER_CONFIG
from .errors import NonFiniteObjective


class Dynamics(Protocol):
    def step(self, state: np.ndarray, control: np.ndarray) -> np.ndarray: ...

    def step_with_jacobians(self, state: np.ndarray,
                            control: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]: ...


def _check_symmetric_psd(name: str, matrix: np.ndarray, strict: bool = False) -> None:
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    smallest = np.linalg.eigvalsh(matrix).min()
    if strict and smallest <= 0:
        raise ValueError(f"{name} must be positive definite")
    if smallest < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass
class OcpProblem:
    """
    min  sum_i ||x_i - xr_i||_Q^2 + ||u_i - ur_i||_R^2 + ||x_N - xr_N||_Qf^2
    s.t. x_0 = x0, x_{i+1} = dynamics(x_i, u_i), lower_i <= u_i <= upper_i,
         optionally x_N = terminal_target and soft state bounds on x_1..x_N
    """
    x0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    dynamics: Dynamics
    terminal_target: Optional[np.ndarray] = None
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    state_penalty: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Q_f = np.atleast_2d(np.asarray(self.Q_f, dtype=float))
        self.u_ref = np.atleast_2d(np.asarray(self.u_ref, dtype=float))
        n, m = self.u_ref.shape
        d = self.x0.shape[0]
        self.x_ref = np.asarray(self.x_ref, dtype=float).reshape(n + 1, d)
        self.lower = np.asarray(self.lower, dtype=float).reshape(n, m)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n, m)

        if n < 1:
            raise ValueError("horizon must be positive")
        _check_symmetric_psd("Q", self.Q)
        _check_symmetric_psd("Q_f", self.Q_f)
        _check_symmetric_psd("R", self.R, strict=True)
        if np.any(self.lower > self.upper):
            raise ValueError("control box lower bound exceeds upper bound")
        if self.terminal_target is not None:
            self.terminal_target = np.asarray(self.terminal_target, dtype=float)
        if self.state_lower is not None:
            self.state_lower = np.asarray(self.state_lower, dtype=float)
            self.state_upper = np.asarray(self.state_upper, dtype=float)

    @property
    def horizon(self) -> int:
        return self.u_ref.shape[0]

    @property
    def control_dim(self) -> int:
        return self.u_ref.shape[1]

    @property
    def state_dim(self) -> int:
        return self.x0.shape[0]


@dataclass
class OcpSolution:
    controls: np.ndarray
    states: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    terminal_violation: float = 0.0
    state_violation: float = 0.0


def shift_warm_start(previous: np.ndarray) -> np.ndarray:
    """Drop the first control and repeat the last one"""
    previous = np.asarray(previous, dtype=float)
    if len(previous) == 0:
        raise ValueError("warm start must contain at least one control")
    return np.concatenate([previous[1:], previous[-1:]], axis=0)


class ShootingSolver:
    """
    Single-shooting solver with adjoint gradients.
    One instance per thread; instances share no mutable state.
    """

    def __init__(self, config: Dict = None, max_iter: Optional[int] = None, ftol: Optional[float] = None):
        self.config = {**SOLVER_CONFIG, **(config or {})}
        self.max_iter = max_iter or self.config["online_max_iter"]
        self.ftol = self.config["online_ftol"] if ftol is None else ftol

    def _rollout(self, problem: OcpProblem, controls: np.ndarray,
                 with_jacobians: bool = True):
        n, d, m = problem.horizon, problem.state_dim, problem.control_dim
        states = np.empty((n + 1, d))
        states[0] = problem.x0
        jac_x = np.empty((n, d, d)) if with_jacobians else None
        jac_u = np.empty((n, d, m)) if with_jacobians else None
        for i in range(n):
            if with_jacobians:
                states[i + 1], jac_x[i], jac_u[i] = problem.dynamics.step_with_jacobians(
                    states[i], controls[i]
                )
            else:
                states[i + 1] = problem.dynamics.step(states[i], controls[i])
        if not np.all(np.isfinite(states)):
            raise NonFiniteObjective("rollout diverged; the control split may be infeasible")
        return states, jac_x, jac_u

    def tracking_cost(self, problem: OcpProblem, states: np.ndarray, controls: np.ndarray) -> float:
        """Stage, terminal and state-penalty cost without multiplier terms"""
        dx = states[:-1] - problem.x_ref[:-1]
        du = controls - problem.u_ref
        e_n = states[-1] - problem.x_ref[-1]
        cost = np.einsum("ij,jk,ik->", dx, problem.Q, dx) + np.einsum("ij,jk,ik->", du, problem.R, du)
        cost += e_n @ problem.Q_f @ e_n
        if problem.state_lower is not None and problem.state_penalty > 0:
            over = np.maximum(0.0, states[1:] - problem.state_upper)
            under = np.maximum(0.0, problem.state_lower - states[1:])
            cost += problem.state_penalty * (np.sum(over ** 2) + np.sum(under ** 2))
        return float(cost)

    def evaluate(self, problem: OcpProblem, controls: np.ndarray,
                 multiplier: Optional[np.ndarray] = None,
                 penalty: float = 0.0) -> Tuple[float, np.ndarray]:
        """Merit value and its gradient with respect to the controls (reverse sweep)"""
        controls = np.asarray(controls, dtype=float).reshape(problem.horizon, problem.control_dim)
        states, jac_x, jac_u = self._rollout(problem, controls)

        dx = states[:-1] - problem.x_ref[:-1]
        du = controls - problem.u_ref
        e_n = states[-1] - problem.x_ref[-1]
        value = self.tracking_cost(problem, states, controls)

        grad_x = np.zeros_like(states)
        grad_x[:-1] = 2.0 * dx @ problem.Q
        grad_x[-1] = 2.0 * problem.Q_f @ e_n
        grad_u = 2.0 * du @ problem.R

        if problem.state_lower is not None and problem.state_penalty > 0:
            over = np.maximum(0.0, states[1:] - problem.state_upper)
            under = np.maximum(0.0, problem.state_lower - states[1:])
            grad_x[1:] += 2.0 * problem.state_penalty * (over - under)

        if problem.terminal_target is not None and multiplier is not None:
            c = states[-1] - problem.terminal_target
            value += float(multiplier @ c + 0.5 * penalty * (c @ c))
            grad_x[-1] += multiplier + penalty * c

        if not np.isfinite(value):
            raise NonFiniteObjective("objective is not finite")

        costate = grad_x[-1]
        for i in range(problem.horizon - 1, -1, -1):
            grad_u[i] += jac_u[i].T @ costate
            costate = grad_x[i] + jac_x[i].T @ costate
        return value, grad_u

    def kkt_residual(self, problem: OcpProblem, controls: np.ndarray,
                     multiplier: Optional[np.ndarray] = None, penalty: float = 0.0) -> float:
        """Infinity norm of the box-projected gradient of the merit function"""
        _, grad = self.evaluate(problem, controls, multiplier, penalty)
        projected = controls - np.clip(controls - grad, problem.lower, problem.upper)
        return float(np.max(np.abs(projected)))

    def _minimize(self, problem: OcpProblem, start: np.ndarray,
                  multiplier: Optional[np.ndarray], penalty: float) -> Tuple[np.ndarray, int]:
        """
        L-BFGS-B until the projected gradient meets kkt_tol or the iteration
        budget runs out; an early line-search stop restarts from the iterate
        """
        shape = (problem.horizon, problem.control_dim)
        tol = self.config["kkt_tol"]

        def merit(flat: np.ndarray):
            value, grad = self.evaluate(problem, flat.reshape(shape), multiplier, penalty)
            return value, grad.ravel()

        controls = start
        used = 0
        for _ in range(self.config["lbfgs_restarts"] + 1):
            result = minimize(
                merit,
                controls.ravel(),
                jac=True,
                method="L-BFGS-B",
                bounds=Bounds(problem.lower.ravel(), problem.upper.ravel()),
                options={"maxiter": self.max_iter - used, "ftol": self.ftol, "gtol": tol},
            )
            controls = np.clip(result.x.reshape(shape), problem.lower, problem.upper)
            used += int(result.nit)
            if result.nit == 0 or used >= self.max_iter:
                break
            if self.kkt_residual(problem, controls, multiplier, penalty) <= tol:
                break
            logger.debug(f"L-BFGS-B stopped after {result.nit} iterations ({result.message}), restarting")
        return controls, used

    def solve(self, problem: OcpProblem, warm_start: Optional[np.ndarray] = None) -> OcpSolution:
        """Solve from the warm start, or from the box centers when none is given"""
        if warm_start is None:
            start = 0.5 * (problem.lower + problem.upper)
        else:
            start = np.asarray(warm_start, dtype=float)
            if start.shape != (problem.horizon, problem.control_dim):
                raise ValueError(f"warm start shape {start.shape} does not match the horizon")
            start = np.clip(start, problem.lower, problem.upper)

        start_states, _, _ = self._rollout(problem, start, with_jacobians=False)
        multiplier = None
        penalty = 0.0
        iterations = 0

        if problem.terminal_target is None:
            controls, iterations = self._minimize(problem, start, None, 0.0)
            states, _, _ = self._rollout(problem, controls, with_jacobians=False)
            if self.tracking_cost(problem, states, controls) > self.tracking_cost(problem, start_states, start):
                controls, states = start, start_states
        else:
            multiplier = np.zeros(problem.state_dim)
            penalty = self.config["al_initial_penalty"]
            controls = start
            for round_index in range(self.config["al_rounds"]):
                controls, used = self._minimize(problem, controls, multiplier, penalty)
                iterations += used
                states, _, _ = self._rollout(problem, controls, with_jacobians=False)
                violation = states[-1] - problem.terminal_target
                logger.debug(
                    f"AL round {round_index}: terminal violation {np.max(np.abs(violation)):.2e}, "
                    f"penalty {penalty:.1e}"
                )
                if np.max(np.abs(violation)) <= self.config["al_tol"]:
                    break
                multiplier = multiplier + penalty * violation
                penalty *= self.config["al_growth"]

        states, _, _ = self._rollout(problem, controls, with_jacobians=False)
        terminal_violation = 0.0
        if problem.terminal_target is not None:
            terminal_violation = float(np.max(np.abs(states[-1] - problem.terminal_target)))

        state_violation = 0.0
        if problem.state_lower is not None:
            state_violation = float(np.max(np.maximum(
                0.0, np.maximum(states[1:] - problem.state_upper, problem.state_lower - states[1:])
            )))

        kkt = self.kkt_residual(problem, controls, multiplier, penalty)
        converged = kkt <= self.config["kkt_tol"] and terminal_violation <= self.config["al_tol"]
        return OcpSolution(
            controls=controls,
            states=states,
            objective=self.tracking_cost(problem, states, controls),
            kkt_residual=kkt,
            iterations=iterations,
            converged=converged,
            terminal_violation=terminal_violation,
            state_violation=state_violation,
        )
