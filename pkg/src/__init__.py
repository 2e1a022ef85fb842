# Deep MPC authority-allocation simulator
__version__ = "1.0.0"

# Import main components for easy access
from .adaptive_net import FeatureSnapshot, HiddenLayerTrainer, HiddenParams
from .bounds_estimator import AuthorityBounds, TrajectoryLog, estimate_bounds
from .config import RunConfig, load_run_config
from .controller import DeepMPCController, StepRecord, run_closed_loop
from .experiment import DeepMPCExperiment, compare_runs
from .ocp_solver import OcpProblem, OcpSolution, ShootingSolver
from .plant import NominalModel, PlantParams, TruePlant, build_plant
from .reference_governor import ReferenceGovernor, ReferenceTrajectory, tighten
from .replay_buffer import BufferEntry, ReplayBuffer

__all__ = [
    'FeatureSnapshot', 'HiddenLayerTrainer', 'HiddenParams',
    'AuthorityBounds', 'TrajectoryLog', 'estimate_bounds',
    'RunConfig', 'load_run_config',
    'DeepMPCController', 'StepRecord', 'run_closed_loop',
    'DeepMPCExperiment', 'compare_runs',
    'OcpProblem', 'OcpSolution', 'ShootingSolver',
    'NominalModel', 'PlantParams', 'TruePlant', 'build_plant',
    'ReferenceGovernor', 'ReferenceTrajectory', 'tighten',
    'BufferEntry', 'ReplayBuffer',
]
