"""
Tests for the feature map, output-layer adaptation and hidden-layer training
"""
import numpy as np
import pytest

from src.adaptive_net import (
    FeatureSnapshot,
    HiddenLayerTrainer,
    HiddenParams,
    adapt_step,
    columns_within_bound,
    learning_control,
    parameters_frame,
    parameters_from_frame,
    project_columns,
    projection_bound,
    publish_snapshot,
)
from src.errors import EmptyBuffer
from src.plant import NominalModel, StructuredUncertainty

RNG_STATES = np.random.default_rng(11).uniform(
    [-2.0, -0.5, -1.5, -1.5, -3.0], [1.0, 0.5, 1.5, 1.5, 3.0], size=(24, 5)
)


def _zero_params():
    base = HiddenParams.initialize(5, seed=0)
    return HiddenParams(tuple(np.zeros_like(w) for w in base.weights),
                        tuple(np.zeros_like(b) for b in base.biases), base.activations)


def _snapshot(seed=0):
    return publish_snapshot(HiddenParams.initialize(5, seed=seed))


def test_zero_network_features():
    snapshot = FeatureSnapshot(_zero_params())
    np.testing.assert_array_equal(snapshot.features(RNG_STATES[0]), [1.0, 0.0, 0.0, 0.0, 0.0])


def test_features_leading_one_and_bounds():
    snapshot = _snapshot()
    phi = snapshot.features_batch(RNG_STATES)
    assert phi.shape == (len(RNG_STATES), 5)
    np.testing.assert_array_equal(phi[:, 0], 1.0)
    norms = np.sum(phi ** 2, axis=1)
    assert np.all(norms >= 1.0) and np.all(norms < 5.0)
    np.testing.assert_allclose(snapshot.features(RNG_STATES[3]), phi[3], atol=1e-14)


def test_initialization_is_seeded():
    a = HiddenParams.initialize(5, seed=4)
    b = HiddenParams.initialize(5, seed=4)
    assert [w.shape for w in a.weights] == [(5, 8), (8, 12), (12, 4)]
    assert a.activations == ("relu", "relu", "tanh")
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert all(np.max(np.abs(w)) <= 0.5 for w in a.weights)


def test_last_layer_must_be_bounded():
    base = HiddenParams.initialize(5, seed=0)
    with pytest.raises(ValueError):
        HiddenParams(base.weights, base.biases, ("relu", "relu", "relu"))


def test_projection_bound_values():
    assert projection_bound(0.6, 2, 4) == pytest.approx(0.3)
    assert projection_bound(5.0, 2, 4) == pytest.approx(2.5)
    assert projection_bound(1.2, 2, 4) == pytest.approx(2 * projection_bound(0.6, 2, 4))


def test_project_columns_rescales_only_outside():
    k = np.zeros((5, 2))
    k[:2, 0] = [0.36, 0.48]
    k[0, 1] = 0.2
    projected = project_columns(k, 0.3)
    np.testing.assert_allclose(projected[:, 0], 0.5 * k[:, 0])
    np.testing.assert_array_equal(projected[:, 1], k[:, 1])
    assert columns_within_bound(projected, 0.3)


def test_adapt_step_updates_bias_row_for_constant_features():
    model = NominalModel()
    snapshot = FeatureSnapshot(_zero_params())
    x_prev = np.array([-1.0, -0.25, np.pi / 4, 0.0, -np.pi / 8])
    u_m = np.array([1.0, -2.0])
    x_now = model.step(x_prev, u_m + np.array([0.2, -0.1]))
    k = adapt_step(np.zeros((5, 2)), snapshot, x_prev, x_now, u_m, 0.5, model, 0.3)
    np.testing.assert_allclose(k[0], [0.1, -0.05], atol=1e-10)
    np.testing.assert_array_equal(k[1:], 0.0)


def test_adapt_step_zero_innovation_leaves_k_unchanged():
    model = NominalModel()
    snapshot = _snapshot()
    rng = np.random.default_rng(2)
    k_prev = rng.uniform(-0.05, 0.05, size=(5, 2))
    x_prev = RNG_STATES[5]
    u_m = np.array([0.4, 0.9])
    k = adapt_step(k_prev, snapshot, x_prev, model.step(x_prev, u_m), u_m, 0.5, model, 0.3)
    np.testing.assert_array_equal(k, k_prev)


def test_adapt_step_keeps_columns_in_bound():
    model = NominalModel()
    snapshot = _snapshot()
    x_prev = RNG_STATES[1]
    u_m = np.zeros(2)
    x_now = model.step(x_prev, np.array([50.0, -40.0]))
    k = adapt_step(np.zeros((5, 2)), snapshot, x_prev, x_now, u_m, 0.9, model, 0.3)
    assert columns_within_bound(k, 0.3)
    np.testing.assert_allclose(np.linalg.norm(k, axis=0), 0.3)


def test_learning_control_examples():
    snapshot = _snapshot()
    x = RNG_STATES[7]
    u_a, clipped = learning_control(np.zeros((5, 2)), snapshot, x, 0.6)
    np.testing.assert_array_equal(u_a, [0.0, 0.0])
    assert not np.any(np.signbit(u_a))
    assert not clipped.any()

    k = np.zeros((5, 2))
    k[0] = [0.1, -0.05]
    u_a, _ = learning_control(k, snapshot, x, 0.6)
    np.testing.assert_allclose(u_a, [-0.1, 0.05], atol=1e-15)

    k[0] = [-0.9, 0.2]
    u_a, clipped = learning_control(k, snapshot, x, 0.6)
    np.testing.assert_allclose(u_a, [0.6, -0.2], atol=1e-15)
    np.testing.assert_array_equal(clipped, [True, False])


def test_clip_flags_need_authority_and_a_strict_excess():
    snapshot = _snapshot()
    x = RNG_STATES[7]
    k = np.zeros((5, 2))
    u_a, clipped = learning_control(k, snapshot, x, 0.0)
    np.testing.assert_array_equal(u_a, [0.0, 0.0])
    assert not clipped.any()

    k[0] = [0.4, -0.2]
    u_a, clipped = learning_control(k, snapshot, x, 0.0)
    np.testing.assert_array_equal(u_a, [0.0, 0.0])
    assert not clipped.any()

    k[0] = [-0.5, 0.25]
    u_a, clipped = learning_control(k, snapshot, x, 0.5)
    np.testing.assert_array_equal(u_a, [0.5, -0.25])
    assert not clipped.any()


def test_update_law_identifies_structured_uncertainty():
    model = NominalModel()
    snapshot = _snapshot(seed=1)
    rng = np.random.default_rng(5)
    k_star = project_columns(rng.normal(size=(5, 2)), 0.1)
    h = StructuredUncertainty(k_star, snapshot.features)
    k = np.zeros((5, 2))
    residuals = []
    for _ in range(200):
        x_prev = rng.uniform([-2.0, -0.5, -1.5, -1.5, -3.0], [1.0, 0.5, 1.5, 1.5, 3.0])
        u_m = rng.uniform(-2.0, 2.0, 2)
        u_a, clipped = learning_control(k, snapshot, x_prev, 0.6)
        assert not clipped.any()
        x_now = model.step(x_prev, u_m + u_a + h(x_prev))
        residuals.append(np.linalg.norm(model.matched_input(x_prev, u_m, x_now)))
        k = adapt_step(k, snapshot, x_prev, x_now, u_m, 0.5, model, projection_bound(0.6, 2, 4))
    assert max(residuals[-20:]) < 0.05
    assert residuals[-1] < residuals[0]


def test_publish_increments_generation():
    params = HiddenParams.initialize(5, seed=0)
    first = publish_snapshot(params)
    second = publish_snapshot(params, first)
    assert (first.generation, second.generation) == (0, 1)
    np.testing.assert_array_equal(first.features_batch(RNG_STATES), second.features_batch(RNG_STATES))
    with pytest.raises(ValueError):
        second.params.weights[0][0, 0] = 1.0


def test_training_rejects_empty_buffer():
    with pytest.raises(EmptyBuffer):
        HiddenLayerTrainer().train_hidden((), np.zeros((5, 2)), HiddenParams.initialize(5))


def test_perfect_fit_leaves_parameters_in_place():
    snapshot = _snapshot()
    k = project_columns(np.random.default_rng(3).normal(size=(5, 2)), 0.3)
    labels = -(snapshot.features_batch(RNG_STATES) @ k)
    samples = list(zip(RNG_STATES, labels))
    params, report = HiddenLayerTrainer().train_hidden(samples, k, snapshot.params, seed=0)
    assert report.initial_loss < 1e-20
    for new, old in zip(params.weights + params.biases, snapshot.params.weights + snapshot.params.biases):
        np.testing.assert_allclose(new, old, atol=1e-10)


def test_backprop_matches_central_differences():
    trainer = HiddenLayerTrainer()
    params = HiddenParams.initialize(5, seed=8)
    k = project_columns(np.random.default_rng(8).normal(size=(5, 2)), 0.3)
    states = RNG_STATES[:10]
    labels = np.random.default_rng(9).uniform(-0.6, 0.6, size=(10, 2))
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    _, grads_w, grads_b = trainer.loss_and_gradients(states, labels, k, weights, biases, params.activations)

    eps = 1e-6
    analytic, numeric = [], []
    for tensors, grads in ((weights, grads_w), (biases, grads_b)):
        for tensor, grad in zip(tensors, grads):
            for idx in np.ndindex(*tensor.shape):
                original = tensor[idx]
                tensor[idx] = original + eps
                plus, _, _ = trainer.loss_and_gradients(states, labels, k, weights, biases, params.activations)
                tensor[idx] = original - eps
                minus, _, _ = trainer.loss_and_gradients(states, labels, k, weights, biases, params.activations)
                tensor[idx] = original
                analytic.append(grad[idx])
                numeric.append((plus - minus) / (2 * eps))
    analytic, numeric = np.array(analytic), np.array(numeric)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) <= 1e-5


def test_single_pair_loss_decreases_monotonically():
    snapshot = _snapshot(seed=2)
    k = np.full((5, 2), 0.3 / np.sqrt(5))
    samples = [(RNG_STATES[0], np.array([0.3, -0.2]))]
    _, report = HiddenLayerTrainer({"epochs": 200}).train_hidden(samples, k, snapshot.params)
    history = np.array(report.loss_history)
    assert history[-1] < history[0]
    assert np.all(np.diff(history) <= 1e-12)
    assert report.loss_increase < 0


def test_minibatches_used_for_large_buffers():
    snapshot = _snapshot()
    k = np.full((5, 2), 0.1)
    states = np.random.default_rng(0).uniform(-1.0, 1.0, size=(80, 5))
    samples = [(s, np.array([0.1, -0.1])) for s in states]
    params, report = HiddenLayerTrainer({"epochs": 2}).train_hidden(samples, k, snapshot.params, seed=1)
    assert report.samples == 80
    assert len(report.loss_history) == 3
    again, _ = HiddenLayerTrainer({"epochs": 2}).train_hidden(samples, k, snapshot.params, seed=1)
    for a, b in zip(params.weights, again.weights):
        np.testing.assert_array_equal(a, b)


def test_clipped_labels_starve_hidden_gradients():
    u_max_a = 0.6
    bound = projection_bound(u_max_a, 2, 4)
    k = np.full((5, 2), bound / np.sqrt(5))
    base = HiddenParams.initialize(5, seed=3)
    saturated = FeatureSnapshot(HiddenParams(base.weights, base.biases[:-1] + (np.full(4, 50.0),),
                                             base.activations))
    outputs = [learning_control(k, saturated, x, u_max_a) for x in RNG_STATES]
    labels_sat = np.array([u for u, _ in outputs])
    clip_fraction = np.mean([c for _, c in outputs])
    assert clip_fraction >= 0.9

    unsaturated = FeatureSnapshot(HiddenParams(tuple(0.1 * w for w in base.weights),
                                               tuple(0.1 * b for b in base.biases), base.activations))
    error = -(saturated.features_batch(RNG_STATES) @ k) - labels_sat
    labels_unsat = -(unsaturated.features_batch(RNG_STATES) @ k) - error

    trainer = HiddenLayerTrainer()
    sat_norm = trainer.hidden_gradient_norm(list(zip(RNG_STATES, labels_sat)), k, saturated.params)
    unsat_norm = trainer.hidden_gradient_norm(list(zip(RNG_STATES, labels_unsat)), k, unsaturated.params)
    assert unsat_norm > 0
    assert 10 * sat_norm <= unsat_norm


def test_parameter_dump_round_trip():
    snapshot = _snapshot(seed=6)
    k = project_columns(np.random.default_rng(6).normal(size=(5, 2)), 0.3)
    frame = parameters_frame(snapshot, k)
    assert list(frame["tensor"].unique()) == ["W1", "b1", "W2", "b2", "W3", "b3", "K"]
    params, k_back = parameters_from_frame(frame)
    np.testing.assert_array_equal(k_back, k)
    for a, b in zip(params.weights + params.biases, snapshot.params.weights + snapshot.params.biases):
        np.testing.assert_array_equal(a, b)
