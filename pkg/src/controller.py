"""
Online tracking MPC, the tube-MPC baseline and the Deep MPC loop
"""
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from tqdm import tqdm

from .adaptive_net import (
    FeatureSnapshot,
    HiddenLayerTrainer,
    HiddenParams,
    TrainingReport,
    adapt_step,
    columns_within_bound,
    learning_control,
    projection_bound,
    publish_snapshot,
)
from .config import RunConfig
from .errors import NonFiniteObjective, SolverFailed
from .ocp_solver import OcpProblem, OcpSolution, ShootingSolver, shift_warm_start
from .plant import NominalModel, TruePlant, is_admissible
from .reference_governor import ReferenceTrajectory
from .replay_buffer import BufferEntry, ReplayBuffer

MODES = ("deep", "tube")


@dataclass
class StepRecord:
    """Everything observed and decided at one control step"""
    t: int
    state: np.ndarray
    u_a: np.ndarray
    u_m: np.ndarray
    u: np.ndarray
    clipped: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    x_ref: np.ndarray
    u_ref: np.ndarray
    tracking_cost: float
    generation: int = 0
    buffer_size: int = 0
    accepted: bool = False
    k_norm: float = 0.0
    u_tilde: Optional[np.ndarray] = None


@dataclass
class TrainingEvent:
    """One hidden-layer retraining, started at T_k and published at t_j"""
    start_step: int
    swap_step: int
    samples: int
    clipped_fraction: float
    report: Optional[TrainingReport] = None


@dataclass
class ControllerState:
    t: int
    K: np.ndarray
    snapshot: FeatureSnapshot
    reference: ReferenceTrajectory
    warm_start: Optional[np.ndarray] = None
    prev_state: Optional[np.ndarray] = None
    prev_u_m: Optional[np.ndarray] = None
    training_steps: List[int] = field(default_factory=list)
    swap_steps: List[int] = field(default_factory=list)
    events: List[TrainingEvent] = field(default_factory=list)


def build_tracking_problem(x_t: np.ndarray, t: int, u_a: np.ndarray, reference: ReferenceTrajectory,
                           config: RunConfig, u_max_a: float, model: NominalModel) -> OcpProblem:
    """
    Tracking OCP at time t: the first control is coupled to u^a through
    u_{t|t} + u^a in U, the tail lies in U_bar = {||u||_inf <= u_max - u_max_a}
    """
    n = config.horizon
    x_ref, u_ref = reference.window(t, n)
    u_a = np.asarray(u_a, dtype=float)
    tail = config.u_max - u_max_a

    lower = np.full((n, model.control_dim), -tail)
    upper = np.full((n, model.control_dim), tail)
    lower[0] = -config.u_max - u_a
    upper[0] = config.u_max - u_a

    return OcpProblem(
        x0=np.asarray(x_t, dtype=float),
        Q=config.q_matrix(),
        R=config.r_matrix(),
        Q_f=config.qf_matrix(),
        x_ref=x_ref,
        u_ref=u_ref,
        lower=lower,
        upper=upper,
        dynamics=model,
    )


def compose_control(u_a: np.ndarray, u_m: np.ndarray, u_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """u = u^a + u^m with ||u||_inf <= u_max holding after floating-point rounding"""
    u_m = np.array(u_m, dtype=float)
    u = u_a + u_m
    while not is_admissible(u, u_max):
        over = np.abs(u) > u_max
        u_m[over] = np.nextafter(u_m[over], np.sign(-u[over]) * np.inf)
        u = u_a + u_m
    return u, u_m


class DeepMPCController:
    """
    Runs either the Deep MPC loop (adapt, retrain, learn, select experience,
    solve, compose) or the tube-MPC baseline against a shared reference
    """

    def __init__(self, model: NominalModel, reference: ReferenceTrajectory, config: RunConfig,
                 u_max_a: float, mode: str = "deep", hidden: Optional[HiddenParams] = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.model = model
        self.config = config
        self.mode = mode
        self.u_max_a = float(u_max_a)
        self.solver = ShootingSolver(config.model_dump(), max_iter=config.online_max_iter)
        self.trainer = HiddenLayerTrainer(config.model_dump())
        self.buffer = ReplayBuffer(config.model_dump())

        hidden = hidden or HiddenParams.initialize(
            model.state_dim, config.hidden_sizes, seed=config.seed, scale=config.init_scale
        )
        self.column_bound = projection_bound(self.u_max_a, model.control_dim, config.hidden_sizes[-1])
        self.state = ControllerState(
            t=0,
            K=np.zeros((hidden.feature_dim, model.control_dim)),
            snapshot=publish_snapshot(hidden),
            reference=reference,
        )
        self._pending: Optional[Tuple[int, Union[Future, Tuple[HiddenParams, TrainingReport]]]] = None
        self._executor: Optional[ThreadPoolExecutor] = None

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def is_training_step(self, t: int) -> bool:
        period = self.config.training_period
        return self.mode == "deep" and period > 0 and t > 0 and t % period == 0

    # Learning component

    def _adapt(self, x_t: np.ndarray) -> None:
        s = self.state
        if s.prev_state is None:
            return
        s.K = adapt_step(s.K, s.snapshot, s.prev_state, x_t, s.prev_u_m,
                         self.config.theta, self.model, self.column_bound)
        assert columns_within_bound(s.K, self.column_bound), "projection left a column outside its bound"

    def _start_training(self, t: int) -> None:
        samples = self.buffer.snapshot_for_training(self.config.exclude_clipped)
        if not samples:
            logger.warning(f"Skipping hidden-layer training at step {t}: no samples in the buffer")
            return

        assert self._pending is None, "previous retraining has not been published yet"
        s = self.state
        swap_step = t + self.config.swap_delay
        k_frozen = s.K.copy()
        seed = self.config.seed + len(s.events) + 1
        s.training_steps.append(t)
        s.swap_steps.append(swap_step)
        s.events.append(TrainingEvent(t, swap_step, len(samples), self.buffer.clipped_fraction()))

        if self.config.training_mode == "async":
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="hidden-training")
            job = self._executor.submit(self.trainer.train_hidden, samples, k_frozen, s.snapshot.params, seed)
        else:
            job = self.trainer.train_hidden(samples, k_frozen, s.snapshot.params, seed)
        self._pending = (swap_step, job)
        logger.debug(f"Training event at step {t} on {len(samples)} samples, swap at step {swap_step}")

    def _swap_if_due(self, t: int) -> None:
        if self._pending is None or self._pending[0] != t:
            return
        _, job = self._pending
        params, report = job.result() if isinstance(job, Future) else job
        self._pending = None
        s = self.state
        s.snapshot = publish_snapshot(params, s.snapshot)
        s.events[-1].report = report
        self.buffer.refresh(s.snapshot)
        logger.debug(f"Published feature generation {s.snapshot.generation} at step {t}")

    # Control loop

    def _solve(self, x_t: np.ndarray, u_a: np.ndarray) -> OcpSolution:
        s = self.state
        problem = build_tracking_problem(x_t, s.t, u_a, s.reference, self.config, self.u_max_a, self.model)
        warm = shift_warm_start(s.warm_start) if s.warm_start is not None else problem.u_ref
        try:
            solution = self.solver.solve(problem, warm)
        except NonFiniteObjective as e:
            raise SolverFailed(str(e), s.t, self._context(x_t, u_a)) from e

        if not solution.converged:
            message = (f"MPC not converged: KKT residual {solution.kkt_residual:.2e} "
                       f"after {solution.iterations} iterations")
            if self.config.strict_solver:
                raise SolverFailed(message, s.t, self._context(x_t, u_a))
            logger.warning(f"step {s.t}: {message}")
        return solution

    def _context(self, x_t: np.ndarray, u_a: np.ndarray) -> Dict:
        s = self.state
        return {
            "mode": self.mode,
            "state": np.asarray(x_t).tolist(),
            "u_a": np.asarray(u_a).tolist(),
            "generation": s.snapshot.generation,
            "K": s.K.tolist(),
            "u_max_a": self.u_max_a,
        }

    def step(self, x_t: np.ndarray) -> Tuple[np.ndarray, StepRecord]:
        if self.mode == "deep":
            return self.deep_mpc_step(x_t)
        return self.tube_mpc_step(x_t)

    def deep_mpc_step(self, x_t: np.ndarray) -> Tuple[np.ndarray, StepRecord]:
        x_t = np.asarray(x_t, dtype=float)
        s = self.state
        t = s.t

        self._adapt(x_t)
        if self.is_training_step(t):
            self._start_training(t)
        self._swap_if_due(t)

        u_a, clipped = learning_control(s.K, s.snapshot, x_t, self.u_max_a)
        accepted = self.buffer.offer(BufferEntry(x_t.copy(), u_a.copy(), bool(clipped.any()), t), s.snapshot)
        return self._finish_step(x_t, u_a, clipped, accepted)

    def tube_mpc_step(self, x_t: np.ndarray) -> Tuple[np.ndarray, StepRecord]:
        x_t = np.asarray(x_t, dtype=float)
        u_a = np.zeros(self.model.control_dim)
        return self._finish_step(x_t, u_a, np.zeros(self.model.control_dim, dtype=bool), False)

    def _finish_step(self, x_t: np.ndarray, u_a: np.ndarray, clipped: np.ndarray,
                     accepted: bool) -> Tuple[np.ndarray, StepRecord]:
        s = self.state
        solution = self._solve(x_t, u_a)
        u, u_m = compose_control(u_a, solution.controls[0], self.config.u_max)
        assert is_admissible(u, self.config.u_max), "composite control left U"

        x_ref = s.reference.state_at(s.t)
        error = x_t - x_ref
        record = StepRecord(
            t=s.t,
            state=x_t.copy(),
            u_a=u_a,
            u_m=u_m,
            u=u,
            clipped=clipped,
            objective=solution.objective,
            iterations=solution.iterations,
            converged=solution.converged,
            kkt_residual=solution.kkt_residual,
            x_ref=np.array(x_ref, dtype=float),
            u_ref=np.array(s.reference.control_at(s.t), dtype=float),
            tracking_cost=float(error @ self.config.q_matrix() @ error),
            generation=s.snapshot.generation,
            buffer_size=len(self.buffer),
            accepted=accepted,
            k_norm=float(np.max(np.linalg.norm(s.K, axis=0))),
        )

        s.warm_start = solution.controls
        s.prev_state = x_t.copy()
        s.prev_u_m = u_m
        s.t += 1
        return u, record

    def run(self, plant: TruePlant, x0: np.ndarray, steps: int,
            show_progress: bool = False) -> Tuple[List[StepRecord], np.ndarray]:
        """Closed loop against the true plant; returns the records and the final state"""
        records = []
        x = np.asarray(x0, dtype=float)
        try:
            for _ in tqdm(range(steps), desc=f"{self.mode} MPC", disable=not show_progress):
                u, record = self.step(x)
                record.u_tilde = record.u_a + plant.oracle(x)
                records.append(record)
                x = plant.step(x, u)
        except SolverFailed as e:
            logger.error(f"{self.mode} MPC failed at {e}; context: {e.context}")
            raise
        finally:
            self.close()
        return records, x


def run_closed_loop(config: RunConfig, mode: str, model: NominalModel, plant: TruePlant,
                    reference: ReferenceTrajectory, u_max_a: float,
                    show_progress: bool = False) -> List[StepRecord]:
    """Simulate `config.steps` steps of the chosen controller from `config.x0`"""
    controller = DeepMPCController(model, reference, config, u_max_a, mode)
    records, _ = controller.run(plant, np.asarray(config.x0), config.steps, show_progress)
    logger.info(f"Closed loop ({mode}) finished after {len(records)} steps")
    return records
