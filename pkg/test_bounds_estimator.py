"""
Tests for disturbance bound and learning authority estimation
"""
import numpy as np
import pytest

from src.bounds_estimator import AuthorityBounds, TrajectoryLog, collect_exploration_logs, estimate_bounds
from src.errors import EmptyInput, NoAuthority
from src.plant import NominalModel, StateBox, TruePlant, no_uncertainty, uncertainty_h


def _logs(plant, seed=0, n=5, length=4):
    return collect_exploration_logs(plant, StateBox(), n, length, control_bound=1.0, seed=seed)


def test_zero_uncertainty_gives_zero_bounds():
    model = NominalModel()
    bounds = estimate_bounds(_logs(TruePlant(model, no_uncertainty)), model)
    assert bounds.w_max == 0.0
    assert bounds.u_max_a == 0.0


def test_constant_matched_disturbance_is_recovered():
    model = NominalModel()
    d = np.array([0.3, -0.5])
    plant = TruePlant(model, lambda x: d)
    bounds = estimate_bounds(_logs(plant), model)
    assert bounds.u_max_a == pytest.approx(0.5, abs=1e-9)
    assert bounds.w_max >= np.linalg.norm(model.discrete_input_matrix() @ d) * (1 - 1e-9)


def test_empty_input_rejected():
    model = NominalModel()
    with pytest.raises(EmptyInput):
        estimate_bounds([], model)
    with pytest.raises(EmptyInput):
        estimate_bounds([TrajectoryLog(np.zeros((1, 5)), np.zeros((0, 2)))], model)


def test_trajectory_log_shape_checked():
    with pytest.raises(ValueError):
        TrajectoryLog(np.zeros((3, 5)), np.zeros((3, 2)))
    assert TrajectoryLog(np.zeros((4, 5)), np.zeros((3, 2))).transitions == 3


def test_margin_and_authority_check():
    bounds = AuthorityBounds(w_max=0.2, u_max_a=5.0).with_margin(1.1)
    assert bounds.u_max_a == pytest.approx(5.5)
    bounds.check_authority(10.0)
    with pytest.raises(NoAuthority):
        AuthorityBounds(w_max=1.0, u_max_a=10.0).check_authority(10.0)
    with pytest.raises(ValueError):
        AuthorityBounds(w_max=-1.0, u_max_a=0.0)


def test_exploration_is_seeded():
    plant = TruePlant(NominalModel())
    first = _logs(plant, seed=3)
    second = _logs(plant, seed=3)
    other = _logs(plant, seed=4)
    assert len(first) == 5
    assert first[0].states.shape == (5, 5)
    assert first[0].controls.shape == (4, 2)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(first[0].states, other[0].states)
    assert np.all(np.abs(first[0].controls) <= 1.0)


def test_rolling_resistance_bound_matches_oracle():
    model = NominalModel()
    plant = TruePlant(model)
    logs = _logs(plant, n=8, length=3)
    bounds = estimate_bounds(logs, model)
    oracle = max(np.max(np.abs(plant.oracle(s))) for log in logs for s in log.states[:-1])
    assert bounds.u_max_a == pytest.approx(oracle, rel=1e-9)


def _manufactured_logs(model, disturbance, n=12, seed=5):
    """One-transition logs whose matched residual is exactly `disturbance(x)`"""
    rng = np.random.default_rng(seed)
    logs = []
    for _ in range(n):
        x = rng.uniform(StateBox().lower, StateBox().upper)
        u = rng.uniform(-1.0, 1.0, 2)
        logs.append(TrajectoryLog(np.vstack([x, model.step(x, u + disturbance(x))]), u[None, :]))
    return logs


def test_appending_trajectories_never_lowers_the_bounds():
    model = NominalModel()
    logs = _logs(TruePlant(model), n=8, length=3)
    partial = estimate_bounds(logs[:3], model)
    full = estimate_bounds(logs, model)
    assert full.w_max >= partial.w_max
    assert full.u_max_a >= partial.u_max_a


def test_doubling_the_uncertainty_doubles_the_authority():
    model = NominalModel()
    single = estimate_bounds(_manufactured_logs(model, uncertainty_h), model)
    double = estimate_bounds(_manufactured_logs(model, lambda x: 2.0 * uncertainty_h(x)), model)
    assert double.u_max_a == pytest.approx(2.0 * single.u_max_a, rel=1e-9)


def test_unmatched_residual_is_reported():
    model = NominalModel()
    calm = estimate_bounds(_logs(TruePlant(model, no_uncertainty)), model)
    assert calm.unmatched == 0.0

    bounds = estimate_bounds(_logs(TruePlant(model)), model)
    assert 0.0 < bounds.unmatched <= bounds.w_max
    assert bounds.with_margin(1.1).unmatched == bounds.unmatched
