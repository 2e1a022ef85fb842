"""
Tests for the online tracking MPC, the tube baseline and the Deep MPC loop
"""
import numpy as np
import pytest

from src.adaptive_net import HiddenParams, project_columns, publish_snapshot
from src.config import RunConfig
from src.controller import DeepMPCController, build_tracking_problem, compose_control, run_closed_loop
from src.plant import NominalModel, StructuredUncertainty, TruePlant, no_uncertainty, uncertainty_h
from src.reference_governor import ReferenceTrajectory

SETPOINT = np.array([0.0, 0.0, 0.0, -0.8, 0.0])
X0 = SETPOINT + np.array([-0.1, 0.05, 0.1, 0.1, -0.1])


def _setpoint_reference(horizon=10):
    return ReferenceTrajectory(np.tile(SETPOINT, (horizon + 1, 1)), np.zeros((horizon, 2)),
                               SETPOINT, np.zeros(2))


def _run(mode, plant, steps=25, u_max_a=0.6, **overrides):
    model = plant.model
    config = RunConfig().with_overrides(**overrides)
    controller = DeepMPCController(model, _setpoint_reference(), config, u_max_a, mode)
    records, final = controller.run(plant, X0, steps)
    return records, final, controller


def _stack(records, name):
    return np.array([getattr(r, name) for r in records])


def test_tracking_problem_couples_first_control_to_learning_input():
    model = NominalModel()
    problem = build_tracking_problem(X0, 0, np.array([0.6, -0.6]), _setpoint_reference(),
                                     RunConfig(), 0.6, model)
    np.testing.assert_allclose(problem.lower[0], [-10.6, -9.4])
    np.testing.assert_allclose(problem.upper[0], [9.4, 10.6])
    np.testing.assert_allclose(problem.lower[1:], -9.4)
    np.testing.assert_allclose(problem.upper[1:], 9.4)
    assert problem.x_ref.shape == (11, 5)
    assert problem.u_ref.shape == (10, 2)


def test_tracking_problem_without_learning_uses_full_box_first():
    problem = build_tracking_problem(X0, 3, np.zeros(2), _setpoint_reference(), RunConfig(), 0.6,
                                     NominalModel())
    np.testing.assert_array_equal(problem.lower[0], [-10.0, -10.0])
    np.testing.assert_array_equal(problem.upper[0], [10.0, 10.0])


def test_tracking_problem_clamps_past_reference_end():
    states = np.tile(SETPOINT, (4, 1))
    states[:3, 0] = [-0.3, -0.2, -0.1]
    reference = ReferenceTrajectory(states, np.ones((3, 2)), SETPOINT, np.zeros(2))
    problem = build_tracking_problem(X0, 2, np.zeros(2), reference, RunConfig(), 0.6, NominalModel())
    np.testing.assert_array_equal(problem.x_ref[0], states[2])
    np.testing.assert_array_equal(problem.x_ref[2:], np.tile(SETPOINT, (9, 1)))
    np.testing.assert_array_equal(problem.u_ref[0], [1.0, 1.0])
    np.testing.assert_array_equal(problem.u_ref[1:], 0.0)


def test_compose_control_stays_in_box():
    u_a = np.array([0.6, -0.6])
    u_m = np.array([9.4, -9.4])
    u, u_m_adj = compose_control(u_a, u_m, 10.0)
    assert np.max(np.abs(u)) <= 10.0
    np.testing.assert_array_equal(u, u_a + u_m_adj)
    np.testing.assert_allclose(u_m_adj, u_m, atol=1e-14)

    inside, _ = compose_control(np.array([0.1, 0.2]), np.array([1.0, -2.0]), 10.0)
    np.testing.assert_allclose(inside, [1.1, -1.8])


def test_zero_uncertainty_deep_matches_tube_bitwise():
    plant = TruePlant(NominalModel(), no_uncertainty)
    deep, deep_final, controller = _run("deep", plant)
    tube, tube_final, _ = _run("tube", plant)

    assert controller.state.training_steps == [20]
    assert controller.state.swap_steps == [21]
    assert deep[21].generation == 1
    for name in ("state", "u", "u_a", "u_m"):
        np.testing.assert_array_equal(_stack(deep, name), _stack(tube, name))
    np.testing.assert_array_equal(deep_final, tube_final)
    np.testing.assert_array_equal(_stack(deep, "u_a"), 0.0)


def test_zero_learning_authority_matches_tube_under_rolling_resistance():
    plant = TruePlant(NominalModel(), uncertainty_h)
    deep, _, _ = _run("deep", plant, u_max_a=0.0)
    tube, _, _ = _run("tube", plant, u_max_a=0.0)
    for name in ("state", "u", "u_a", "u_m"):
        np.testing.assert_array_equal(_stack(deep, name), _stack(tube, name))


def test_controls_respect_bounds_and_clip_exactly():
    plant = TruePlant(NominalModel(), uncertainty_h)
    records, _, _ = _run("deep", plant, steps=40)
    u = _stack(records, "u")
    u_a = _stack(records, "u_a")
    clipped = _stack(records, "clipped")
    assert np.max(np.abs(u)) <= 10.0
    assert np.max(np.abs(u_a)) <= 0.6
    np.testing.assert_array_equal(np.abs(u_a[clipped]), 0.6)
    for r in records:
        np.testing.assert_array_equal(r.u, r.u_a + r.u_m)
        np.testing.assert_allclose(r.u_tilde, r.u_a + uncertainty_h(r.state))


def test_first_step_has_no_learning_input():
    plant = TruePlant(NominalModel(), uncertainty_h)
    records, _, _ = _run("deep", plant, steps=1)
    np.testing.assert_array_equal(records[0].u_a, [0.0, 0.0])
    assert not np.any(np.signbit(records[0].u_a))
    assert records[0].accepted
    assert records[0].buffer_size == 1


def test_runs_are_deterministic():
    plant = TruePlant(NominalModel(), uncertainty_h)
    first, _, _ = _run("deep", plant, steps=25)
    second, _, _ = _run("deep", plant, steps=25)
    for name in ("state", "u", "u_a", "u_m", "objective"):
        np.testing.assert_array_equal(_stack(first, name), _stack(second, name))


def test_async_training_matches_sync():
    plant = TruePlant(NominalModel(), uncertainty_h)
    sync, _, _ = _run("deep", plant, steps=25)
    threaded, _, controller = _run("deep", plant, steps=25, training_mode="async")
    assert controller.state.events[0].report is not None
    for name in ("state", "u", "u_a", "u_m", "generation"):
        np.testing.assert_array_equal(_stack(sync, name), _stack(threaded, name))


def test_zero_steps_produce_no_records():
    model = NominalModel()
    config = RunConfig().with_overrides(steps=0)
    records = run_closed_loop(config, "deep", model, TruePlant(model), _setpoint_reference(), 0.6)
    assert records == []


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        DeepMPCController(NominalModel(), _setpoint_reference(), RunConfig(), 0.6, mode="lqr")


def test_structured_uncertainty_is_cancelled_in_closed_loop():
    model = NominalModel()
    hidden = HiddenParams.initialize(5, seed=3)
    k_star = project_columns(np.random.default_rng(12).normal(size=(5, 2)), 0.1)
    plant = TruePlant(model, StructuredUncertainty(k_star, publish_snapshot(hidden).features))

    config = RunConfig().with_overrides(training_period=0)
    controller = DeepMPCController(model, _setpoint_reference(), config, 0.6, "deep", hidden=hidden)
    records, _ = controller.run(plant, X0, 200)

    residual = np.max(np.abs(_stack(records[-20:], "u_tilde")))
    assert residual < 0.05
    assert not _stack(records, "clipped").any()
    assert controller.state.training_steps == []


def test_every_retraining_is_published_before_the_next_starts():
    plant = TruePlant(NominalModel(), no_uncertainty)
    records, _, controller = _run("deep", plant, steps=70, swap_delay=19)
    assert controller.state.training_steps == [20, 40, 60]
    assert controller.state.swap_steps == [39, 59, 79]
    assert [e.report is not None for e in controller.state.events] == [True, True, False]
    generations = _stack(records, "generation")
    assert generations[38] == 0
    assert generations[39] == 1
    assert generations[59] == 2
    assert generations[-1] == 2
