"""
Exception hierarchy for the Deep MPC simulator
"""
from typing import Any, Dict, Optional


class DeepMPCError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(DeepMPCError, ValueError):
    """Run configuration failed to parse or validate"""


class NonFiniteMatrix(DeepMPCError, ValueError):
    """Matrix contains NaN or Inf entries"""


class RankDeficient(DeepMPCError, ValueError):
    """Matrix is not left invertible"""


class EmptyInput(DeepMPCError, ValueError):
    """No transitions available to estimate bounds"""


class NoAuthority(DeepMPCError, ValueError):
    """Learning authority leaves the MPC without control authority"""


class NotAnEquilibrium(DeepMPCError, ValueError):
    """Setpoint pair is not a fixed point of the nominal model"""


class Infeasible(DeepMPCError):
    """Reference governor could not reach the setpoint"""

    def __init__(self, message: str, terminal_violation: float):
        super().__init__(message)
        self.terminal_violation = terminal_violation


class NonFiniteObjective(DeepMPCError):
    """Shooting rollout diverged"""


class SolverFailed(DeepMPCError):
    """Online MPC problem could not be solved at a given step"""

    def __init__(self, message: str, step: int, context: Optional[Dict[str, Any]] = None):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.context = context or {}


class EmptyBuffer(DeepMPCError, ValueError):
    """Hidden-layer training requested on an empty replay buffer"""


class SchemaMismatch(DeepMPCError, ValueError):
    """Two step-record files cannot be compared"""
