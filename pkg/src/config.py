"""
Configuration settings for the Deep MPC authority-allocation simulator
"""
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigError

# Project paths
PROJECT_ROOT = Path(__file__).parent.parent
CONFIG_DIR = PROJECT_ROOT / "configs"
OUTPUT_DIR = PROJECT_ROOT / "output"
LOGS_DIR = PROJECT_ROOT / "logs"
OUTPUT_ROOT_ENV = "DEEPMPC_OUTPUT_ROOT"

# Skid-steer robot (non-slip, four wheels)
PLANT_CONFIG = {
    "mass": 15.0,
    "inertia": 0.1,
    "half_track": 0.1,
    "v_r": 0.8,
    "sample_time": 0.05,
    "integrator": "rk4",
    "uncertainty": "rolling_resistance",
}

# Operational region, control set and regulation scenario
CONSTRAINT_CONFIG = {
    "state_lower": (-2.0, -0.5, -np.pi / 2, -1.5, -3.0),
    "state_upper": (1.0, 0.5, np.pi / 2, 1.5, 3.0),
    "u_max": 10.0,
    "u_max_a": 0.6,
    "bound_margin": 1.1,
    "x0": (-1.0, -0.25, np.pi / 4, 0.0, -np.pi / 8),
    "setpoint_state": (0.0, 0.0, 0.0, -0.8, 0.0),
    "setpoint_control": (0.0, 0.0),
}

# Online tracking MPC
MPC_CONFIG = {
    "horizon": 10,
    "q_diag": (0.5, 2.0, 1.0, 0.5, 5.0),
    "r_diag": (1.0, 1.0),
    "qf_scale": 1e5,
}

# Single-shooting solver shared by the governor and the online MPC
SOLVER_CONFIG = {
    "online_max_iter": 200,
    "governor_max_iter": 2000,
    "kkt_tol": 1e-6,
    "online_ftol": 0.0,
    "governor_ftol": 1e-12,
    "lbfgs_restarts": 3,
    "al_rounds": 8,
    "al_initial_penalty": 10.0,
    "al_growth": 10.0,
    "al_tol": 1e-4,
    "strict_solver": False,
}

# Reference governor
GOVERNOR_CONFIG = {
    "reference_horizon": 100,
    "state_tightening": 0.9,
    "control_tightening": 0.9,
    "state_penalty": 1e4,
    "terminal_tolerance": 1e-3,
    "violation_flag": 1e-6,
}

# In-loop network, output-layer adaptation and hidden-layer training
NETWORK_CONFIG = {
    "hidden_sizes": (8, 12, 4),
    "init_scale": 0.5,
    "theta": 0.5,
    "training_period": 20,
    "sgd_lr": 0.01,
    "epochs": 50,
    "full_batch_limit": 64,
    "minibatch_size": 16,
    "swap_delay": 1,
    "training_mode": "sync",
    "exclude_clipped": False,
}

# Replay buffer with singular-value selection
BUFFER_CONFIG = {
    "buffer_capacity": 30,
    "novelty_floor": 1e-3,
}

# Experiment harness
EXPERIMENT_CONFIG = {
    "seed": 0,
    "steps": 100,
    "exploration_trajectories": 40,
    "exploration_length": 5,
    "exploration_control": 1.0,
    "exploration_interior": 0.5,
}

# Logging Configuration
LOGGING_CONFIG = {
    "level": "INFO",
    "format": "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}:{function}:{line} | {message}",
    "rotation": "1 day",
    "retention": "1 week"
}

Vec5 = Tuple[float, float, float, float, float]
Vec2 = Tuple[float, float]


class RunConfig(BaseModel):
    """Every parameter of one experiment in a single validated record"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # plant
    mass: float = PLANT_CONFIG["mass"]
    inertia: float = PLANT_CONFIG["inertia"]
    half_track: float = PLANT_CONFIG["half_track"]
    v_r: float = PLANT_CONFIG["v_r"]
    sample_time: float = PLANT_CONFIG["sample_time"]
    integrator: str = PLANT_CONFIG["integrator"]
    uncertainty: str = PLANT_CONFIG["uncertainty"]

    # sets and scenario
    state_lower: Vec5 = CONSTRAINT_CONFIG["state_lower"]
    state_upper: Vec5 = CONSTRAINT_CONFIG["state_upper"]
    u_max: float = CONSTRAINT_CONFIG["u_max"]
    u_max_a: Optional[float] = CONSTRAINT_CONFIG["u_max_a"]
    bound_margin: float = CONSTRAINT_CONFIG["bound_margin"]
    x0: Vec5 = CONSTRAINT_CONFIG["x0"]
    setpoint_state: Vec5 = CONSTRAINT_CONFIG["setpoint_state"]
    setpoint_control: Vec2 = CONSTRAINT_CONFIG["setpoint_control"]

    # online MPC
    horizon: int = MPC_CONFIG["horizon"]
    q_diag: Vec5 = MPC_CONFIG["q_diag"]
    r_diag: Vec2 = MPC_CONFIG["r_diag"]
    qf_scale: float = MPC_CONFIG["qf_scale"]

    # solver
    online_max_iter: int = SOLVER_CONFIG["online_max_iter"]
    governor_max_iter: int = SOLVER_CONFIG["governor_max_iter"]
    kkt_tol: float = SOLVER_CONFIG["kkt_tol"]
    online_ftol: float = SOLVER_CONFIG["online_ftol"]
    governor_ftol: float = SOLVER_CONFIG["governor_ftol"]
    lbfgs_restarts: int = SOLVER_CONFIG["lbfgs_restarts"]
    al_rounds: int = SOLVER_CONFIG["al_rounds"]
    al_initial_penalty: float = SOLVER_CONFIG["al_initial_penalty"]
    al_growth: float = SOLVER_CONFIG["al_growth"]
    al_tol: float = SOLVER_CONFIG["al_tol"]
    strict_solver: bool = SOLVER_CONFIG["strict_solver"]

    # governor
    reference_horizon: int = GOVERNOR_CONFIG["reference_horizon"]
    state_tightening: float = GOVERNOR_CONFIG["state_tightening"]
    control_tightening: float = GOVERNOR_CONFIG["control_tightening"]
    state_penalty: float = GOVERNOR_CONFIG["state_penalty"]

    # network
    hidden_sizes: Tuple[int, ...] = NETWORK_CONFIG["hidden_sizes"]
    init_scale: float = NETWORK_CONFIG["init_scale"]
    theta: float = NETWORK_CONFIG["theta"]
    training_period: int = NETWORK_CONFIG["training_period"]
    sgd_lr: float = NETWORK_CONFIG["sgd_lr"]
    epochs: int = NETWORK_CONFIG["epochs"]
    full_batch_limit: int = NETWORK_CONFIG["full_batch_limit"]
    minibatch_size: int = NETWORK_CONFIG["minibatch_size"]
    swap_delay: int = NETWORK_CONFIG["swap_delay"]
    training_mode: str = NETWORK_CONFIG["training_mode"]
    exclude_clipped: bool = NETWORK_CONFIG["exclude_clipped"]

    # buffer
    buffer_capacity: int = BUFFER_CONFIG["buffer_capacity"]
    novelty_floor: float = BUFFER_CONFIG["novelty_floor"]

    # experiment
    seed: int = EXPERIMENT_CONFIG["seed"]
    steps: int = EXPERIMENT_CONFIG["steps"]
    exploration_trajectories: int = EXPERIMENT_CONFIG["exploration_trajectories"]
    exploration_length: int = EXPERIMENT_CONFIG["exploration_length"]
    exploration_control: float = EXPERIMENT_CONFIG["exploration_control"]
    exploration_interior: float = EXPERIMENT_CONFIG["exploration_interior"]

    @field_validator("mass", "inertia", "half_track", "v_r", "sample_time", "u_max",
                     "kkt_tol", "al_initial_penalty", "al_tol", "sgd_lr", "exploration_control")
    @classmethod
    def _strictly_positive(cls, value: float) -> float:
        if not np.isfinite(value) or value <= 0:
            raise ValueError("must be finite and strictly positive")
        return value

    @field_validator("horizon", "reference_horizon", "online_max_iter", "governor_max_iter",
                     "al_rounds", "epochs", "full_batch_limit", "minibatch_size",
                     "buffer_capacity", "exploration_trajectories", "exploration_length")
    @classmethod
    def _positive_count(cls, value: int) -> int:
        if value <= 0:
            raise ValueError("must be a positive integer")
        return value

    @field_validator("steps", "training_period", "swap_delay", "seed", "lbfgs_restarts")
    @classmethod
    def _non_negative_count(cls, value: int) -> int:
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @field_validator("state_tightening", "control_tightening", "exploration_interior")
    @classmethod
    def _tightening_factor(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("factor must lie in (0, 1]")
        return value

    @field_validator("theta")
    @classmethod
    def _learning_rate(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("theta must lie in (0, 1)")
        return value

    @field_validator("q_diag")
    @classmethod
    def _psd_weights(cls, value: Vec5) -> Vec5:
        if any(q < 0 for q in value):
            raise ValueError("state weights must be non-negative (Q PSD)")
        return value

    @field_validator("r_diag")
    @classmethod
    def _pd_weights(cls, value: Vec2) -> Vec2:
        if any(r <= 0 for r in value):
            raise ValueError("control weights must be strictly positive (R PD)")
        return value

    @field_validator("qf_scale", "state_penalty", "bound_margin", "novelty_floor", "al_growth",
                     "online_ftol", "governor_ftol")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if not np.isfinite(value) or value < 0:
            raise ValueError("must be finite and non-negative")
        return value

    @field_validator("hidden_sizes")
    @classmethod
    def _layer_sizes(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) < 1 or any(n <= 0 for n in value):
            raise ValueError("hidden layer sizes must be positive")
        return value

    @field_validator("integrator")
    @classmethod
    def _integrator(cls, value: str) -> str:
        if value not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")
        return value

    @field_validator("uncertainty")
    @classmethod
    def _uncertainty(cls, value: str) -> str:
        if value not in ("rolling_resistance", "none"):
            raise ValueError("uncertainty must be 'rolling_resistance' or 'none'")
        return value

    @field_validator("training_mode")
    @classmethod
    def _training_mode(cls, value: str) -> str:
        if value not in ("sync", "async"):
            raise ValueError("training_mode must be 'sync' or 'async'")
        return value

    @model_validator(mode="after")
    def _check_sets(self) -> "RunConfig":
        if self.u_max_a is not None and not 0 <= self.u_max_a < self.u_max:
            raise ValueError(f"u_max_a must satisfy 0 <= u_max_a < u_max ({self.u_max})")
        if any(lo >= hi for lo, hi in zip(self.state_lower, self.state_upper)):
            raise ValueError("state_lower must be strictly below state_upper")
        if self.training_period > 0 and self.swap_delay >= self.training_period:
            # one retraining at a time: the next event would replace an unpublished one
            raise ValueError(
                f"swap_delay ({self.swap_delay}) must be below training_period ({self.training_period})"
            )
        return self

    def q_matrix(self) -> np.ndarray:
        return np.diag(self.q_diag)

    def r_matrix(self) -> np.ndarray:
        return np.diag(self.r_diag)

    def qf_matrix(self) -> np.ndarray:
        return self.qf_scale * np.eye(len(self.q_diag))

    def with_overrides(self, **updates: Any) -> "RunConfig":
        """Return a re-validated copy with some fields replaced"""
        try:
            return RunConfig(**{**self.model_dump(), **updates})
        except ValidationError as e:
            raise ConfigError(str(e)) from e


def output_root() -> Path:
    """Artifact root, overridable through DEEPMPC_OUTPUT_ROOT"""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, OUTPUT_DIR))


def _parse_value(raw: str) -> Union[None, str, list]:
    value = raw.strip()
    if value.lower() in ("none", "null", ""):
        return None
    if "," in value:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse `key = value` lines into a raw dict"""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in RunConfig.model_fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw)
    return values


def load_run_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """Load and validate a run configuration; missing keys take the defaults"""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values = parse_config_text(path.read_text())
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_run_config(config: RunConfig) -> str:
    lines = [f"{key} = {_format_value(value)}" for key, value in config.model_dump().items()]
    return "\n".join(lines) + "\n"


def dump_run_config(config: RunConfig, path: Path) -> Path:
    """Write the config echo; loading it back reproduces the run"""
    path = Path(path)
    path.write_text(format_run_config(config))
    return path
