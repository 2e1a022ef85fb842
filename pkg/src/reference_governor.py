"""
Reference governor
Offline generation of a trackable reference on tightened state and control sets
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from .config import GOVERNOR_CONFIG, SOLVER_CONFIG
from .errors import Infeasible, NoAuthority, NotAnEquilibrium
from .ocp_solver import OcpProblem, ShootingSolver
from .plant import NominalModel, StateBox


@dataclass(frozen=True)
class TightenedSets:
    """Tightened state box X_r and symmetric control bound of U_r"""
    state_lower: Tuple[float, ...]
    state_upper: Tuple[float, ...]
    control_bound: float

    @property
    def state_box(self) -> StateBox:
        return StateBox(self.state_lower, self.state_upper)


def tighten(box: StateBox, u_max: float, u_max_a: float, factor: float,
            setpoint: Optional[np.ndarray] = None,
            control_factor: Optional[float] = None) -> TightenedSets:
    """
    Scale X about the setpoint by `factor` and U_bar = {||u||_inf <= u_max - u_max_a}
    by `control_factor` (defaults to `factor`)
    """
    control_factor = factor if control_factor is None else control_factor
    for f in (factor, control_factor):
        if not 0 < f <= 1:
            raise ValueError(f"tightening factor must lie in (0, 1], got {f}")
    if u_max - u_max_a <= 0:
        raise NoAuthority(f"u_max_a={u_max_a} leaves no authority under u_max={u_max}")

    lower = np.asarray(box.lower, dtype=float)
    upper = np.asarray(box.upper, dtype=float)
    center = np.zeros_like(lower) if setpoint is None else np.asarray(setpoint, dtype=float)
    return TightenedSets(
        state_lower=tuple(center + factor * (lower - center)),
        state_upper=tuple(center + factor * (upper - center)),
        control_bound=control_factor * (u_max - u_max_a),
    )


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Governor output; indexing past its end returns the setpoint"""
    states: np.ndarray
    controls: np.ndarray
    setpoint_state: np.ndarray
    setpoint_control: np.ndarray
    max_state_violation: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.controls)

    @property
    def flagged(self) -> bool:
        return self.max_state_violation > GOVERNOR_CONFIG["violation_flag"]

    def state_at(self, t: int) -> np.ndarray:
        return self.states[t] if t <= self.horizon else self.setpoint_state

    def control_at(self, t: int) -> np.ndarray:
        return self.controls[t] if t < self.horizon else self.setpoint_control

    def window(self, t: int, length: int) -> Tuple[np.ndarray, np.ndarray]:
        """Reference states x_t..x_{t+length} and controls u_t..u_{t+length-1}"""
        states = np.array([self.state_at(t + i) for i in range(length + 1)])
        controls = np.array([self.control_at(t + i) for i in range(length)])
        return states, controls


class ShiftedDynamics:
    """Nominal model in coordinates centered at the setpoint pair"""

    def __init__(self, model: NominalModel, state_offset: np.ndarray, control_offset: np.ndarray):
        self.model = model
        self.state_offset = np.asarray(state_offset, dtype=float)
        self.control_offset = np.asarray(control_offset, dtype=float)

    def step(self, state: np.ndarray, control: np.ndarray) -> np.ndarray:
        return self.model.step(state + self.state_offset, control + self.control_offset) - self.state_offset

    def step_with_jacobians(self, state: np.ndarray, control: np.ndarray):
        nxt, jac_x, jac_u = self.model.step_with_jacobians(
            state + self.state_offset, control + self.control_offset
        )
        return nxt - self.state_offset, jac_x, jac_u


class ReferenceGovernor:
    """
    Solves the regulation OCP once, offline:
    x_0 = x0 - x^s, x_N = 0, controls in U_r, states penalized outside X_r
    """

    def __init__(self, model: NominalModel, config: Dict = None):
        self.model = model
        self.config = {**GOVERNOR_CONFIG, **SOLVER_CONFIG, **(config or {})}
        self.solver = ShootingSolver(self.config, max_iter=self.config["governor_max_iter"],
                                     ftol=self.config["governor_ftol"])

    def generate(self, x0: np.ndarray, setpoint_state: np.ndarray, setpoint_control: np.ndarray,
                 sets: TightenedSets, Q: np.ndarray, R: np.ndarray,
                 horizon: Optional[int] = None) -> ReferenceTrajectory:
        horizon = horizon or self.config["reference_horizon"]
        x_s = np.asarray(setpoint_state, dtype=float)
        u_s = np.asarray(setpoint_control, dtype=float)
        if not self.model.is_equilibrium(x_s, u_s):
            raise NotAnEquilibrium(f"setpoint {x_s} with input {u_s} is not a nominal equilibrium")

        logger.info(f"Generating reference over {horizon} steps, control bound {sets.control_bound:.4f}")
        d, m = self.model.state_dim, self.model.control_dim
        bound = sets.control_bound
        problem = OcpProblem(
            x0=np.asarray(x0, dtype=float) - x_s,
            Q=Q,
            R=R,
            Q_f=np.zeros((d, d)),
            x_ref=np.zeros((horizon + 1, d)),
            u_ref=np.zeros((horizon, m)),
            lower=np.tile(-bound - u_s, (horizon, 1)),
            upper=np.tile(bound - u_s, (horizon, 1)),
            dynamics=ShiftedDynamics(self.model, x_s, u_s),
            terminal_target=np.zeros(d),
            state_lower=np.asarray(sets.state_lower) - x_s,
            state_upper=np.asarray(sets.state_upper) - x_s,
            state_penalty=self.config["state_penalty"],
        )
        solution = self.solver.solve(problem)

        if solution.terminal_violation > self.config["terminal_tolerance"]:
            raise Infeasible(
                f"terminal violation {solution.terminal_violation:.3e} after "
                f"{self.config['al_rounds']} augmented-Lagrangian rounds",
                solution.terminal_violation,
            )

        controls = solution.controls + u_s
        states = self.model.rollout(np.asarray(x0, dtype=float), controls)
        violation = max(sets.state_box.violation(s) for s in states)
        if violation > self.config["violation_flag"]:
            logger.warning(f"Reference leaves the tightened state box by {violation:.3e}")

        logger.info(
            f"Reference ready: terminal violation {solution.terminal_violation:.2e}, "
            f"{solution.iterations} iterations, converged={solution.converged}"
        )
        return ReferenceTrajectory(
            states=states,
            controls=controls,
            setpoint_state=x_s,
            setpoint_control=u_s,
            max_state_violation=violation,
        )
