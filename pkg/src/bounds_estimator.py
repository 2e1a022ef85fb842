"""
Disturbance bound and learning authority estimation from recorded trajectories
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional

import numpy as np
from loguru import logger

from .errors import EmptyInput, NoAuthority
from .plant import CONTROL_DIM, STATE_DIM, NominalModel, StateBox, TruePlant


@dataclass
class TrajectoryLog:
    """States x_0..x_T and the controls u_0..u_{T-1} applied between them"""
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, STATE_DIM)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1, CONTROL_DIM)
        if len(self.states) != len(self.controls) + 1:
            raise ValueError(
                f"trajectory needs one more state than controls, "
                f"got {len(self.states)} states and {len(self.controls)} controls"
            )

    @property
    def transitions(self) -> int:
        return len(self.controls)


@dataclass(frozen=True)
class AuthorityBounds:
    """w_max bounds ||g h||_2, u_max_a bounds ||g^+ w||_inf"""
    w_max: float
    u_max_a: float
    unmatched: float = 0.0

    def __post_init__(self):
        if self.w_max < 0 or self.u_max_a < 0:
            raise ValueError("bounds must be non-negative")

    def with_margin(self, factor: float) -> "AuthorityBounds":
        return AuthorityBounds(self.w_max, self.u_max_a * factor, self.unmatched)

    def check_authority(self, u_max: float) -> None:
        if self.u_max_a >= u_max:
            raise NoAuthority(
                f"learning authority {self.u_max_a:.4f} leaves no MPC authority under u_max={u_max}"
            )


def estimate_bounds(logs: Iterable[TrajectoryLog], model: NominalModel) -> AuthorityBounds:
    """
    Maximum transition residual w = x_{j+1} - f_bar(x_j, u_j) over all logs:
    Euclidean norm for w_max, infinity norm of g^+ w for u_max_a
    """
    g_d = model.discrete_input_matrix()
    w_max = 0.0
    u_max_a = 0.0
    unmatched = 0.0
    transitions = 0
    for log in logs:
        for j in range(log.transitions):
            w = log.states[j + 1] - model.step(log.states[j], log.controls[j])
            w_a = model.matched_input(log.states[j], log.controls[j], log.states[j + 1])
            w_max = max(w_max, float(np.linalg.norm(w)))
            u_max_a = max(u_max_a, float(np.max(np.abs(w_a))))
            unmatched = max(unmatched, float(np.linalg.norm(w - g_d @ w_a)))
            transitions += 1

    if transitions == 0:
        raise EmptyInput("bounds estimation needs at least one transition")

    logger.info(f"Estimated w_max={w_max:.4f}, u_max_a={u_max_a:.4f} from {transitions} transitions")
    logger.debug(f"Largest residual component outside the range of g: {unmatched:.3e}")
    return AuthorityBounds(w_max=w_max, u_max_a=u_max_a, unmatched=unmatched)


def collect_exploration_logs(plant: TruePlant, box: StateBox, n_trajectories: int,
                             length: int, control_bound: float,
                             seed: Optional[int] = 0, interior: float = 0.9) -> List[TrajectoryLog]:
    """
    Short exploratory runs of the true plant from random starts inside the
    operational box under random bounded controls
    """
    rng = np.random.default_rng(seed)
    lower = np.asarray(box.lower)
    upper = np.asarray(box.upper)
    center = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower) * interior

    logs = []
    for _ in range(n_trajectories):
        states = np.empty((length + 1, STATE_DIM))
        states[0] = center + half * rng.uniform(-1.0, 1.0, STATE_DIM)
        controls = rng.uniform(-control_bound, control_bound, (length, CONTROL_DIM))
        for j in range(length):
            states[j + 1] = plant.step(states[j], controls[j])
        logs.append(TrajectoryLog(states, controls))

    logger.info(f"Collected {n_trajectories} exploration trajectories of length {length}")
    return logs
