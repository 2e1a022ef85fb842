"""
Experiment orchestration
Bounds estimation, reference generation, deep and tube closed loops, artifacts and metrics
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from tqdm import tqdm

from .adaptive_net import PROJECTION_SLACK, on_projection_bound, projection_bound
from .artifacts import RunArtifacts, read_steps, records_frame
from .bounds_estimator import AuthorityBounds, TrajectoryLog, collect_exploration_logs, estimate_bounds
from .config import RunConfig, dump_run_config, load_run_config, output_root
from .controller import MODES, DeepMPCController, StepRecord
from .errors import ConfigError, Infeasible, NoAuthority, SchemaMismatch, SolverFailed
from .plant import CONTROL_NAMES, STATE_NAMES, PlantParams, StateBox, build_plant
from .reference_governor import ReferenceGovernor, ReferenceTrajectory, tighten

U_TILDE_COLUMNS = [f"u_tilde_{name}" for name in CONTROL_NAMES]
CLIP_COLUMNS = [f"clip_{name}" for name in CONTROL_NAMES]
COMPARABLE_KEYS = ("mass", "inertia", "half_track", "v_r", "sample_time", "integrator", "uncertainty",
                   "seed", "steps")


def _float(value) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def _window_mean_inf_norm(frame: pd.DataFrame, start: int, stop: Optional[int] = None) -> float:
    """Mean of ||u~_t||_inf over start <= t < stop"""
    t = frame["t"].to_numpy()
    mask = (t >= start) if stop is None else (t >= start) & (t < stop)
    if not mask.any():
        return float("nan")
    return float(np.abs(frame.loc[mask, U_TILDE_COLUMNS].to_numpy(float)).max(axis=1).mean())


def _last_window_mean_inf_norm(frame: pd.DataFrame, width: int = 20) -> float:
    if len(frame) == 0:
        return float("nan")
    return _window_mean_inf_norm(frame, int(frame["t"].max()) - width + 1)


def clip_active_fraction(frame: pd.DataFrame, after: int = 0) -> float:
    subset = frame[frame["t"] >= after]
    if len(subset) == 0:
        return float("nan")
    return float(subset[CLIP_COLUMNS].astype(float).to_numpy().mean())


def authority_saturated_fraction(frame: pd.DataFrame, column_bound: float, after: int = 0) -> float:
    """
    Share of steps t >= after on which the learning component is at its limit:
    a column of K sits on the projection bound or an output is clipped
    """
    subset = frame[frame["t"] >= after]
    if len(subset) == 0:
        return float("nan")
    on_bound = on_projection_bound(subset["k_norm"], column_bound)
    clipped = subset[CLIP_COLUMNS].astype(bool).to_numpy().any(axis=1)
    return float(np.mean(on_bound | clipped))


def rms_gap(frame_a: pd.DataFrame, frame_b: pd.DataFrame) -> Dict[str, float]:
    """Per-state root-mean-square difference of two trajectories"""
    return {
        name: float(np.sqrt(np.mean((frame_a[name].to_numpy(float) - frame_b[name].to_numpy(float)) ** 2)))
        if len(frame_a) else 0.0
        for name in STATE_NAMES
    }


def rms_reference_deviation(frame: pd.DataFrame) -> Dict[str, float]:
    return {
        name: float(np.sqrt(np.mean((frame[name].to_numpy(float) - frame[f"ref_{name}"].to_numpy(float)) ** 2)))
        if len(frame) else 0.0
        for name in STATE_NAMES
    }


def compare_frames(frame_a: pd.DataFrame, frame_b: pd.DataFrame) -> Dict:
    if list(frame_a.columns) != list(frame_b.columns):
        raise SchemaMismatch("step records have different columns")
    if len(frame_a) != len(frame_b) or not np.array_equal(frame_a["t"].to_numpy(), frame_b["t"].to_numpy()):
        raise SchemaMismatch(f"step records cover different steps ({len(frame_a)} vs {len(frame_b)} rows)")

    def summary(frame: pd.DataFrame) -> Dict:
        return {
            "tracking_cost": float(frame["tracking_cost"].sum()),
            "clip_active_fraction": _float(clip_active_fraction(frame)),
            "u_tilde_first20": _float(_window_mean_inf_norm(frame, 0, 20)),
            "u_tilde_last20": _float(_last_window_mean_inf_norm(frame)),
            "max_abs_u": float(np.abs(frame[[f"u_{n}" for n in CONTROL_NAMES]].to_numpy(float)).max())
            if len(frame) else 0.0,
        }

    return {
        "steps": len(frame_a),
        "rms_gap": rms_gap(frame_a, frame_b),
        "a": summary(frame_a),
        "b": summary(frame_b),
    }


def _run_steps(run_dir: Path, mode: str) -> pd.DataFrame:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    path = run_dir / f"steps_{mode}.csv"
    if not path.exists():
        raise SchemaMismatch(f"{run_dir} has no {path.name}")
    return read_steps(path)


def _run_config(run_dir: Path) -> RunConfig:
    path = run_dir / "config.cfg"
    if not path.exists():
        raise SchemaMismatch(f"{run_dir} is not a run directory (no config.cfg)")
    return load_run_config(path)


def compare_runs(run_a: Path, run_b: Path, mode_a: str = "deep", mode_b: str = "deep") -> Dict:
    """
    Gap and summary metrics between the step records of two run directories.
    Both runs must share plant, seed and number of steps
    """
    run_a, run_b = Path(run_a), Path(run_b)
    config_a, config_b = _run_config(run_a), _run_config(run_b)
    mismatched = [key for key in COMPARABLE_KEYS if getattr(config_a, key) != getattr(config_b, key)]
    if mismatched:
        raise SchemaMismatch(f"runs differ in {', '.join(mismatched)}")

    logger.info(f"Comparing {mode_a} of {run_a} with {mode_b} of {run_b}")
    metrics = compare_frames(_run_steps(run_a, mode_a), _run_steps(run_b, mode_b))
    metrics["runs"] = {"a": f"{run_a}:{mode_a}", "b": f"{run_b}:{mode_b}"}
    return metrics


def acceptance_report(deep: pd.DataFrame, tube: pd.DataFrame, config: RunConfig, u_max_a: float) -> Dict:
    """
    Saturation and adequate-authority quantities with their pass flags.
    Under the column projection |u^a_i| <= W_bar ||phi||, so output clipping
    needs ||phi|| >= sqrt(n_u (1 + n_2 / 4)); with tanh features below that
    norm the learning component saturates on the projection bound instead
    """
    gap = rms_gap(deep, tube)
    deviation = rms_reference_deviation(tube)
    gap_ratio = {name: gap[name] / deviation[name] if deviation[name] > 0 else 0.0 for name in STATE_NAMES}
    closeness = {name: gap[name] <= 0.1 * deviation[name] for name in STATE_NAMES}

    first20 = _window_mean_inf_norm(deep, 0, 20)
    middle = _window_mean_inf_norm(deep, 20, 40)
    last20 = _last_window_mean_inf_norm(deep)
    deep_cost = float(deep["tracking_cost"].sum())
    tube_cost = float(tube["tracking_cost"].sum())

    bound = projection_bound(u_max_a, len(CONTROL_NAMES), config.hidden_sizes[-1])
    clip_after_10 = clip_active_fraction(deep, after=10)
    saturated_after_10 = authority_saturated_fraction(deep, bound, after=10)
    u_columns = [f"u_{n}" for n in CONTROL_NAMES]
    max_u = max(np.abs(deep[u_columns].to_numpy(float)).max(), np.abs(tube[u_columns].to_numpy(float)).max())

    report = {
        "u_max_a": u_max_a,
        "column_bound": bound,
        "clip_active_fraction_after_10": _float(clip_after_10),
        "authority_saturated_fraction_after_10": _float(saturated_after_10),
        "rms_gap": gap,
        "tube_rms_deviation": deviation,
        "rms_gap_ratio": gap_ratio,
        "u_tilde_first20": _float(first20),
        "u_tilde_20_40": _float(middle),
        "u_tilde_last20": _float(last20),
        "tracking_cost_deep": deep_cost,
        "tracking_cost_tube": tube_cost,
        "max_abs_u": float(max_u),
        "max_k_column_norm": float(deep["k_norm"].max()),
        "saturation": {
            "authority_saturated": bool(saturated_after_10 >= 0.5),
            "trajectories_close": bool(all(closeness.values())),
            "u_tilde_persists": bool(last20 >= 0.5 * middle),
        },
        "adequate_authority": {
            "cost_reduced": bool(deep_cost <= 0.8 * tube_cost),
            "u_tilde_decays": bool(last20 <= 0.5 * first20),
        },
        "safety": {
            "control_bound_ok": bool(max_u <= config.u_max),
            "projection_ok": bool(deep["k_norm"].max() <= bound * (1.0 + PROJECTION_SLACK)),
        },
    }

    regime = "saturation" if report["saturation"]["authority_saturated"] else "adequate_authority"
    report["regime"] = regime
    failed = [flag for flag, ok in report[regime].items() if not ok]
    if failed:
        logger.warning(f"{regime} run at u_max_a={u_max_a} misses: {', '.join(failed)}")
    if not all(report["safety"].values()):
        logger.error(f"Safety flags violated: {report['safety']}")
    return report


@dataclass
class RunResult:
    directory: Path
    u_max_a: float
    reference: ReferenceTrajectory
    records: Dict[str, List[StepRecord]] = field(default_factory=dict)
    metrics: Dict = field(default_factory=dict)

    def frame(self, mode: str) -> pd.DataFrame:
        return records_frame(self.records[mode])


class DeepMPCExperiment:
    """
    One experiment: estimate (or take) the learning authority, generate the
    reference on the tightened sets, run the requested controllers and write
    every artifact of the run
    """

    def __init__(self, config: RunConfig = None):
        self.config = config or RunConfig()
        c = self.config
        self.params = PlantParams(c.mass, c.inertia, c.half_track, c.v_r, c.sample_time)
        self.model, self.plant = build_plant(self.params, c.integrator, c.uncertainty)
        self.box = StateBox(tuple(c.state_lower), tuple(c.state_upper))
        self.bounds: Optional[AuthorityBounds] = None
        logger.info(f"Deep MPC experiment initialized (seed {c.seed}, {c.steps} steps)")

    def exploration_logs(self) -> List[TrajectoryLog]:
        c = self.config
        return collect_exploration_logs(
            self.plant, self.box, c.exploration_trajectories, c.exploration_length,
            c.exploration_control, seed=c.seed, interior=c.exploration_interior,
        )

    def estimate_authority(self, logs: Optional[Sequence[TrajectoryLog]] = None) -> AuthorityBounds:
        """Bounds from recorded (or freshly explored) trajectories, times the safety margin"""
        logs = self.exploration_logs() if logs is None else logs
        raw = estimate_bounds(logs, self.model)
        self.bounds = raw.with_margin(self.config.bound_margin)
        logger.info(f"Learning authority u_max_a={self.bounds.u_max_a:.4f} "
                    f"(margin {self.config.bound_margin})")
        return self.bounds

    def resolve_authority(self) -> float:
        if self.config.u_max_a is not None:
            return float(self.config.u_max_a)
        bounds = self.estimate_authority()
        bounds.check_authority(self.config.u_max)
        return bounds.u_max_a

    def generate_reference(self, u_max_a: float) -> ReferenceTrajectory:
        c = self.config
        sets = tighten(self.box, c.u_max, u_max_a, c.state_tightening,
                       setpoint=np.asarray(c.setpoint_state), control_factor=c.control_tightening)
        governor = ReferenceGovernor(self.model, c.model_dump())
        return governor.generate(
            np.asarray(c.x0), np.asarray(c.setpoint_state), np.asarray(c.setpoint_control),
            sets, c.q_matrix(), c.r_matrix(), c.reference_horizon,
        )

    def run_mode(self, mode: str, reference: ReferenceTrajectory, u_max_a: float,
                 artifacts: Optional[RunArtifacts] = None,
                 show_progress: bool = False) -> List[StepRecord]:
        c = self.config
        controller = DeepMPCController(self.model, reference, c, u_max_a, mode)
        records, _ = controller.run(self.plant, np.asarray(c.x0), c.steps, show_progress)
        if artifacts is not None:
            artifacts.write_steps(mode, records)
            if mode == "deep":
                artifacts.write_buffer(controller.buffer.to_frame())
                artifacts.write_network(controller.state.snapshot, controller.state.K)
                artifacts.write_training_events(self._events_frame(controller))
        logger.info(f"{mode} MPC finished {len(records)} steps")
        return records

    @staticmethod
    def _events_frame(controller: DeepMPCController) -> pd.DataFrame:
        rows = []
        for event in controller.state.events:
            report = event.report
            rows.append({
                "start_step": event.start_step,
                "swap_step": event.swap_step,
                "samples": event.samples,
                "clipped_fraction": event.clipped_fraction,
                "initial_loss": report.initial_loss if report else np.nan,
                "final_loss": report.final_loss if report else np.nan,
                "mean_gradient_norm": report.mean_gradient_norm if report else np.nan,
            })
        columns = ["start_step", "swap_step", "samples", "clipped_fraction",
                   "initial_loss", "final_loss", "mean_gradient_norm"]
        return pd.DataFrame(rows, columns=columns)

    def run(self, out_dir: Optional[Path] = None, modes: Sequence[str] = MODES,
            show_progress: bool = False) -> RunResult:
        """Full pipeline; every artifact lands in `out_dir`"""
        for mode in modes:
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}")
        artifacts = RunArtifacts(out_dir or output_root() / f"run_seed{self.config.seed}")
        dump_run_config(self.config, artifacts.path("config.cfg"))

        u_max_a = self.resolve_authority()
        reference = self.generate_reference(u_max_a)
        artifacts.write_reference(reference)

        result = RunResult(directory=artifacts.directory, u_max_a=u_max_a, reference=reference)
        for mode in modes:
            result.records[mode] = self.run_mode(mode, reference, u_max_a, artifacts, show_progress)

        frames = {mode: result.frame(mode) for mode in modes}
        metrics = {
            "u_max_a": u_max_a,
            "steps": self.config.steps,
            "reference_max_state_violation": reference.max_state_violation,
        }
        if self.bounds is not None:
            metrics["estimated_w_max"] = self.bounds.w_max
            metrics["estimated_unmatched"] = self.bounds.unmatched
        if set(MODES) <= set(modes) and self.config.steps > 0:
            metrics["acceptance"] = acceptance_report(frames["deep"], frames["tube"], self.config, u_max_a)
        result.metrics = metrics
        artifacts.write_metrics(metrics)
        artifacts.write_plots(frames, u_max_a, metrics.get("acceptance", {}).get("column_bound"))
        logger.info(f"Run artifacts written to {artifacts.directory}")
        return result

    def sweep(self, values: Sequence[float], out_dir: Optional[Path] = None,
              show_progress: bool = False) -> pd.DataFrame:
        """
        Deep and tube MPC for several learning authorities; each row reports
        ok, infeasible or solver_failed
        """
        out_dir = Path(out_dir or output_root() / "sweep")
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for value in tqdm(values, desc="u_max_a sweep", disable=not show_progress):
            row = {"u_max_a": value, "status": "ok", "tracking_cost_deep": np.nan,
                   "tracking_cost_tube": np.nan, "clip_active_fraction": np.nan, "message": ""}
            try:
                experiment = DeepMPCExperiment(self.config.with_overrides(u_max_a=value))
                reference = experiment.generate_reference(value)
                deep = records_frame(experiment.run_mode("deep", reference, value))
                tube = records_frame(experiment.run_mode("tube", reference, value))
                row["tracking_cost_deep"] = float(deep["tracking_cost"].sum())
                row["tracking_cost_tube"] = float(tube["tracking_cost"].sum())
                row["clip_active_fraction"] = clip_active_fraction(deep)
            except (ConfigError, NoAuthority, Infeasible) as e:
                row["status"], row["message"] = "infeasible", str(e)
                logger.warning(f"u_max_a={value}: {e}")
            except SolverFailed as e:
                row["status"], row["message"] = "solver_failed", str(e)
                logger.warning(f"u_max_a={value}: {e}")
            rows.append(row)

        frame = pd.DataFrame(rows)
        frame.to_csv(out_dir / "sweep.csv", index=False, float_format="%.17g")
        logger.info(f"Sweep over {len(values)} authorities written to {out_dir}")
        return frame
