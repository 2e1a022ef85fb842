"""
Artifact writing and reading for experiment runs
CSV records with round-trip float formatting, JSON metrics and SVG figures
"""
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from loguru import logger  # noqa: E402

from .adaptive_net import (  # noqa: E402
    FeatureSnapshot,
    on_projection_bound,
    parameters_frame,
    parameters_from_frame,
)
from .bounds_estimator import TrajectoryLog  # noqa: E402
from .controller import StepRecord  # noqa: E402
from .plant import CONTROL_NAMES, STATE_NAMES  # noqa: E402
from .reference_governor import ReferenceTrajectory  # noqa: E402

FLOAT_FORMAT = "%.17g"


def _controls(prefix: str) -> List[str]:
    return [f"{prefix}_{name}" for name in CONTROL_NAMES]


# Fixed column order of the per-step CSV
STEP_COLUMNS = [
    "t",
    *STATE_NAMES,
    *(f"ref_{name}" for name in STATE_NAMES),
    *_controls("ref"),
    *_controls("u_a"),
    *_controls("u_m"),
    *_controls("u"),
    *_controls("clip"),
    *_controls("u_tilde"),
    "objective",
    "iterations",
    "converged",
    "kkt_residual",
    "tracking_cost",
    "generation",
    "buffer_size",
    "accepted",
    "k_norm",
]
BOOL_COLUMNS = [*_controls("clip"), "converged", "accepted"]
REFERENCE_COLUMNS = ["t", *STATE_NAMES, *CONTROL_NAMES]
TRAJECTORY_COLUMNS = ["trajectory", "step", *STATE_NAMES, *CONTROL_NAMES]


def records_frame(records: Sequence[StepRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        u_tilde = r.u_tilde if r.u_tilde is not None else np.full(len(CONTROL_NAMES), np.nan)
        rows.append([
            r.t,
            *r.state, *r.x_ref, *r.u_ref,
            *r.u_a, *r.u_m, *r.u,
            *(int(bool(c)) for c in r.clipped),
            *u_tilde,
            r.objective, r.iterations, int(r.converged), r.kkt_residual, r.tracking_cost,
            r.generation, r.buffer_size, int(r.accepted), r.k_norm,
        ])
    return pd.DataFrame(rows, columns=STEP_COLUMNS)


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_steps(records: Sequence[StepRecord], path: Path) -> Path:
    return _write_csv(records_frame(records), path)


def read_steps(path: Path) -> pd.DataFrame:
    """Per-step CSV with booleans restored"""
    frame = _read_csv(path)
    if len(frame):
        for column in BOOL_COLUMNS:
            if column in frame:
                frame[column] = frame[column].astype(bool)
    return frame


def reference_frame(reference: ReferenceTrajectory) -> pd.DataFrame:
    """States x_0..x_N; the control column of the last row is empty"""
    n = reference.horizon
    controls = np.vstack([reference.controls, np.full((1, len(CONTROL_NAMES)), np.nan)])
    data = np.column_stack([np.arange(n + 1), reference.states, controls])
    frame = pd.DataFrame(data, columns=REFERENCE_COLUMNS)
    frame["t"] = frame["t"].astype(int)
    return frame


def read_reference(path: Path, setpoint_state: Iterable[float],
                   setpoint_control: Iterable[float]) -> ReferenceTrajectory:
    frame = _read_csv(path)
    return ReferenceTrajectory(
        states=frame[list(STATE_NAMES)].to_numpy(float),
        controls=frame[list(CONTROL_NAMES)].to_numpy(float)[:-1],
        setpoint_state=np.asarray(setpoint_state, dtype=float),
        setpoint_control=np.asarray(setpoint_control, dtype=float),
    )


def write_trajectory_logs(logs: Sequence[TrajectoryLog], path: Path) -> Path:
    frames = []
    for index, log in enumerate(logs):
        controls = np.vstack([log.controls, np.full((1, len(CONTROL_NAMES)), np.nan)])
        frame = pd.DataFrame(np.column_stack([log.states, controls]),
                             columns=[*STATE_NAMES, *CONTROL_NAMES])
        frame.insert(0, "step", np.arange(len(frame)))
        frame.insert(0, "trajectory", index)
        frames.append(frame)
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    return _write_csv(frame, path)


def read_trajectory_logs(path: Path) -> List[TrajectoryLog]:
    """
    One log per value of the `trajectory` column, rows ordered by `step`;
    the controls of the last row of every trajectory are ignored
    """
    frame = _read_csv(path)
    missing = set(TRAJECTORY_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"trajectory CSV {path} lacks columns {sorted(missing)}")
    logs = []
    for _, group in frame.groupby("trajectory", sort=True):
        group = group.sort_values("step")
        states = group[list(STATE_NAMES)].to_numpy(float)
        controls = group[list(CONTROL_NAMES)].to_numpy(float)[:-1]
        logs.append(TrajectoryLog(states, controls))
    return logs


def write_network(snapshot: FeatureSnapshot, k: np.ndarray, path: Path) -> Path:
    return _write_csv(parameters_frame(snapshot, k), path)


def read_network(path: Path):
    """Hidden parameters and output layer from a network dump"""
    return parameters_from_frame(_read_csv(path))


def write_metrics(metrics: Dict, path: Path) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
    return path


def _time_axis(frame: pd.DataFrame) -> np.ndarray:
    return frame["t"].to_numpy(float)


def plot_state_trajectories(frames: Dict[str, pd.DataFrame], reference: pd.DataFrame, path: Path) -> Path:
    """Overlay of every state under each mode with the governor reference"""
    fig, axes = plt.subplots(len(STATE_NAMES), 1, figsize=(8, 12), sharex=True)
    for ax, name in zip(axes, STATE_NAMES):
        ax.plot(reference["t"], reference[name], "k--", linewidth=1.0, label="reference")
        for mode, frame in frames.items():
            ax.plot(_time_axis(frame), frame[name], label=f"{mode} MPC")
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best")
    axes[-1].set_xlabel("time step")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_learning_signals(frame: pd.DataFrame, u_max_a: float, path: Path) -> Path:
    """u^a against its clip bound and the apparent disturbance u^a + h"""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    t = _time_axis(frame)
    for name in CONTROL_NAMES:
        ax1.plot(t, frame[f"u_a_{name}"], label=f"u^a {name}")
        ax2.plot(t, frame[f"u_tilde_{name}"], label=f"u~ {name}")
    for bound in (-u_max_a, u_max_a):
        ax1.axhline(bound, color="gray", linestyle=":", linewidth=1.0)
    ax1.set_ylabel("learning control")
    ax2.set_ylabel("u^a + h(x)")
    ax2.set_xlabel("time step")
    for ax in (ax1, ax2):
        ax.legend(loc="best")
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_clip_fraction(frame: pd.DataFrame, path: Path, window: int = 10,
                       column_bound: Optional[float] = None) -> Path:
    """
    Share of clip-active learning-control components, raw and rolling mean;
    with a column bound, also whether K sits on its projection bound
    """
    clip = frame[_controls("clip")].astype(float).mean(axis=1)
    fig, ax = plt.subplots(figsize=(8, 3))
    t = _time_axis(frame)
    ax.step(t, clip, where="post", alpha=0.5, label="per step")
    ax.plot(t, clip.rolling(window, min_periods=1).mean(), label=f"rolling mean ({window})")
    if column_bound:
        on_bound = on_projection_bound(frame["k_norm"], column_bound).astype(float)
        ax.step(t, on_bound, where="post", linestyle="--", label="K on projection bound")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("time step")
    ax.set_ylabel("clip-active fraction")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_objective(frames: Dict[str, pd.DataFrame], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    for mode, frame in frames.items():
        ax.semilogy(_time_axis(frame), np.maximum(frame["objective"].to_numpy(float), 1e-16),
                    label=f"{mode} MPC")
    ax.set_xlabel("time step")
    ax.set_ylabel("V_m")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


class RunArtifacts:
    """Layout of one run directory"""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.directory / name

    def steps_path(self, mode: str) -> Path:
        return self.path(f"steps_{mode}.csv")

    def write_reference(self, reference: ReferenceTrajectory) -> Path:
        return _write_csv(reference_frame(reference), self.path("reference.csv"))

    def write_steps(self, mode: str, records: Sequence[StepRecord]) -> Path:
        return write_steps(records, self.steps_path(mode))

    def write_buffer(self, frame: pd.DataFrame) -> Path:
        return _write_csv(frame, self.path("buffer.csv"))

    def write_network(self, snapshot: FeatureSnapshot, k: np.ndarray) -> Path:
        return write_network(snapshot, k, self.path("network.csv"))

    def write_training_events(self, frame: pd.DataFrame) -> Path:
        return _write_csv(frame, self.path("training_events.csv"))

    def write_metrics(self, metrics: Dict) -> Path:
        return write_metrics(metrics, self.path("metrics.json"))

    def write_plots(self, frames: Dict[str, pd.DataFrame], u_max_a: Optional[float],
                    column_bound: Optional[float] = None) -> List[Path]:
        """SVG figures; skipped for empty runs"""
        if not frames or all(len(f) == 0 for f in frames.values()):
            logger.info("No steps recorded, skipping plots")
            return []
        reference = _read_csv(self.path("reference.csv"))
        written = [
            plot_state_trajectories(frames, reference, self.path("states.svg")),
            plot_objective(frames, self.path("objective.svg")),
        ]
        if "deep" in frames and len(frames["deep"]):
            written.append(plot_learning_signals(frames["deep"], u_max_a or 0.0, self.path("learning_control.svg")))
            written.append(plot_clip_fraction(frames["deep"], self.path("clip_fraction.svg"),
                                              column_bound=column_bound))
        logger.info(f"Wrote {len(written)} figures to {self.directory}")
        return written
