"""
Skid-steer robot model
Continuous-time dynamics, fixed-step discretization, the rolling-resistance uncertainty
and the nominal model seen by the controller
"""
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger

from .config import CONSTRAINT_CONFIG, PLANT_CONFIG
from .linalg import pinv_left

STATE_NAMES = ("x", "y", "theta", "v", "omega")
CONTROL_NAMES = ("F_L", "F_R")
STATE_DIM = len(STATE_NAMES)
CONTROL_DIM = len(CONTROL_NAMES)

Uncertainty = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the robot and the sampling time"""
    mass: float = PLANT_CONFIG["mass"]
    inertia: float = PLANT_CONFIG["inertia"]
    half_track: float = PLANT_CONFIG["half_track"]
    v_r: float = PLANT_CONFIG["v_r"]
    sample_time: float = PLANT_CONFIG["sample_time"]

    def __post_init__(self):
        for name in ("mass", "inertia", "half_track", "v_r", "sample_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"plant parameter {name} must be strictly positive")


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box of states; membership is checked, never enforced"""
    lower: Tuple[float, ...] = CONSTRAINT_CONFIG["state_lower"]
    upper: Tuple[float, ...] = CONSTRAINT_CONFIG["state_upper"]

    def contains(self, state: np.ndarray, tol: float = 0.0) -> bool:
        return self.violation(state) <= tol

    def violation(self, state: np.ndarray) -> float:
        """Largest per-coordinate excursion outside the box (0 inside)"""
        s = np.asarray(state, dtype=float)
        lower = np.asarray(self.lower)
        upper = np.asarray(self.upper)
        return float(np.max(np.maximum(0.0, np.maximum(s - upper, lower - s))))


def is_admissible(control: np.ndarray, u_max: float) -> bool:
    """Control lies in the box U = {||u||_inf <= u_max}"""
    return bool(np.max(np.abs(control)) <= u_max)


def drift_f_ct(state: np.ndarray, params: PlantParams) -> np.ndarray:
    """Drift term of the skid-steer ODE"""
    _, _, theta, v, omega = state
    speed = v + params.v_r
    return np.array([speed * math.cos(theta), speed * math.sin(theta), omega, 0.0, 0.0])


def drift_jacobian(state: np.ndarray, params: PlantParams) -> np.ndarray:
    _, _, theta, v, _ = state
    speed = v + params.v_r
    c, s = math.cos(theta), math.sin(theta)
    jac = np.zeros((STATE_DIM, STATE_DIM))
    jac[0, 2], jac[0, 3] = -speed * s, c
    jac[1, 2], jac[1, 3] = speed * c, s
    jac[2, 4] = 1.0
    return jac


def input_matrix_g(params: PlantParams) -> np.ndarray:
    """Constant continuous-time input matrix (wheel forces to v and omega rates)"""
    g = np.zeros((STATE_DIM, CONTROL_DIM))
    g[3, :] = 1.0 / params.mass
    ratio = params.half_track / params.inertia
    g[4, 0], g[4, 1] = -ratio, ratio
    return g


def rolling_resistance(state: np.ndarray) -> np.ndarray:
    """Rolling-resistance forces R(s) used to generate the matched uncertainty"""
    x, y, theta, v, omega = state
    r1 = -2.0 * math.cos(theta) + omega * y - v * theta + omega
    r2 = 2.0 * (1.0 - math.sin(theta)) + x * v - y - 0.5 * y ** 2
    return np.array([r1, r2])


def uncertainty_h(state: np.ndarray) -> np.ndarray:
    """Matched uncertainty h(s) = -R(s); simulator and test oracles only"""
    return -rolling_resistance(state)


def no_uncertainty(state: np.ndarray) -> np.ndarray:
    return np.zeros(CONTROL_DIM)


class StructuredUncertainty:
    """
    Uncertainty that lies exactly in the span of a feature map,
    h(x) = -K_star^T phi(x); used to validate the weight update law
    """

    def __init__(self, k_star: np.ndarray, feature_map: Callable[[np.ndarray], np.ndarray]):
        self.k_star = np.array(k_star, dtype=float)
        self.feature_map = feature_map

    def __call__(self, state: np.ndarray) -> np.ndarray:
        return -(self.k_star.T @ self.feature_map(state))


class NominalModel:
    """
    Uncertainty-free discrete model f_bar(x, u) = f(x) + g(x) u used by the
    governor, the online MPC and the adaptation law
    """

    def __init__(self, params: Optional[PlantParams] = None, integrator: str = "rk4"):
        if integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {integrator!r}")
        self.params = params or PlantParams()
        self.integrator = integrator
        self.state_dim = STATE_DIM
        self.control_dim = CONTROL_DIM
        self._g = input_matrix_g(self.params)
        # v and omega carry no drift, so a held input is recovered exactly by g_d^+
        self._g_discrete = self.params.sample_time * self._g
        self._g_discrete_pinv = pinv_left(self._g_discrete)

    def derivative(self, state: np.ndarray, control: np.ndarray) -> np.ndarray:
        return drift_f_ct(state, self.params) + self._g @ control

    def input_matrix(self) -> np.ndarray:
        return self._g.copy()

    def discrete_input_matrix(self, state: Optional[np.ndarray] = None) -> np.ndarray:
        """g(x) of the discrete recursion x+ = f(x) + g(x)(u + h(x))"""
        return self._g_discrete.copy()

    def step(self, state: np.ndarray, control: np.ndarray) -> np.ndarray:
        """One sample of length T_s with the input held constant"""
        s = np.asarray(state, dtype=float)
        u = np.asarray(control, dtype=float)
        dt = self.params.sample_time
        k1 = self.derivative(s, u)
        if self.integrator == "euler":
            return s + dt * k1
        k2 = self.derivative(s + 0.5 * dt * k1, u)
        k3 = self.derivative(s + 0.5 * dt * k2, u)
        k4 = self.derivative(s + dt * k3, u)
        return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def step_with_jacobians(self, state: np.ndarray,
                            control: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Next state together with d(next)/d(state) and d(next)/d(control),
        chained through the integrator stages
        """
        s = np.asarray(state, dtype=float)
        u = np.asarray(control, dtype=float)
        dt = self.params.sample_time
        g = self._g
        eye = np.eye(STATE_DIM)

        k1 = self.derivative(s, u)
        a1 = drift_jacobian(s, self.params)
        if self.integrator == "euler":
            return s + dt * k1, eye + dt * a1, dt * g

        s2 = s + 0.5 * dt * k1
        k2 = self.derivative(s2, u)
        a2 = drift_jacobian(s2, self.params)
        s3 = s + 0.5 * dt * k2
        k3 = self.derivative(s3, u)
        a3 = drift_jacobian(s3, self.params)
        s4 = s + dt * k3
        k4 = self.derivative(s4, u)
        a4 = drift_jacobian(s4, self.params)

        j1x, j1u = a1, g
        j2x = a2 @ (eye + 0.5 * dt * j1x)
        j2u = a2 @ (0.5 * dt * j1u) + g
        j3x = a3 @ (eye + 0.5 * dt * j2x)
        j3u = a3 @ (0.5 * dt * j2u) + g
        j4x = a4 @ (eye + dt * j3x)
        j4u = a4 @ (dt * j3u) + g

        nxt = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        jac_x = eye + (dt / 6.0) * (j1x + 2.0 * j2x + 2.0 * j3x + j4x)
        jac_u = (dt / 6.0) * (j1u + 2.0 * j2u + 2.0 * j3u + j4u)
        return nxt, jac_x, jac_u

    def rollout(self, state: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """States x_0..x_N obtained by applying controls u_0..u_{N-1}"""
        controls = np.asarray(controls, dtype=float)
        states = np.empty((len(controls) + 1, STATE_DIM))
        states[0] = state
        for i, u in enumerate(controls):
            states[i + 1] = self.step(states[i], u)
        return states

    def matched_input(self, prev_state: np.ndarray, prev_control: np.ndarray,
                      state: np.ndarray) -> np.ndarray:
        """g^+ (x_t - f_bar(x_{t-1}, u_{t-1})): the input-space disturbance of a transition"""
        residual = np.asarray(state, dtype=float) - self.step(prev_state, prev_control)
        return self._g_discrete_pinv @ residual

    def is_equilibrium(self, state: np.ndarray, control: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(np.max(np.abs(self.step(state, control) - np.asarray(state))) <= tol)


class TruePlant:
    """
    Simulator of the uncertain recursion x+ = f_bar(x, u + h(x)).
    The uncertainty is reachable only through the explicit `oracle` handle.
    """

    def __init__(self, model: NominalModel, uncertainty: Optional[Uncertainty] = None):
        self.model = model
        self._uncertainty = uncertainty if uncertainty is not None else uncertainty_h

    @property
    def oracle(self) -> Uncertainty:
        return self._uncertainty

    def step(self, state: np.ndarray, control: np.ndarray) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        return self.model.step(s, np.asarray(control, dtype=float) + self._uncertainty(s))


def build_plant(params: PlantParams, integrator: str = "rk4",
                uncertainty: str = "rolling_resistance") -> Tuple[NominalModel, TruePlant]:
    """Nominal model for the controller and the simulator sharing its integrator"""
    model = NominalModel(params, integrator)
    if uncertainty == "rolling_resistance":
        plant = TruePlant(model, uncertainty_h)
    elif uncertainty == "none":
        plant = TruePlant(model, no_uncertainty)
    else:
        raise ValueError(f"unknown uncertainty {uncertainty!r}")
    logger.debug(f"Built {integrator} skid-steer plant with {uncertainty} uncertainty")
    return model, plant
