"""
In-loop neural network
Hidden layers define the feature map phi_j; the linear output layer K is adapted
every step with a normalized update and column-wise projection; the hidden
layers are retrained intermittently from the replay buffer with K frozen.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from sklearn.utils import gen_batches

from .config import NETWORK_CONFIG
from .errors import EmptyBuffer
from .plant import NominalModel

# Relative slack allowed on ||K^(i)|| <= W_bar after rescaling
PROJECTION_SLACK = 1e-12
SATURATION_RTOL = 1e-6


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, z)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else _relu(z)


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a ** 2
    return (z > 0).astype(float)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class HiddenParams:
    """Weights (in x out) and biases of the hidden layers; rectifiers then a tanh layer"""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))
        if self.activations[-1] != "tanh":
            raise ValueError("the last hidden layer must use a bounded (tanh) activation")

    @classmethod
    def initialize(cls, input_dim: int, sizes: Sequence[int] = NETWORK_CONFIG["hidden_sizes"],
                   seed: int = 0, scale: float = NETWORK_CONFIG["init_scale"]) -> "HiddenParams":
        """Seeded uniform weights and biases in [-scale, scale]"""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        fan_in = input_dim
        for size in sizes:
            weights.append(rng.uniform(-scale, scale, (fan_in, size)))
            biases.append(rng.uniform(-scale, scale, size))
            fan_in = size
        activations = ("relu",) * (len(sizes) - 1) + ("tanh",)
        return cls(tuple(weights), tuple(biases), activations)

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1] + 1

    def forward(self, inputs: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Pre-activations and activations of every layer for a batch of inputs"""
        pre, post = [], [np.atleast_2d(inputs)]
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = post[-1] @ w + b
            pre.append(z)
            post.append(_activate(name, z))
        return pre, post

    def features_batch(self, inputs: np.ndarray) -> np.ndarray:
        _, post = self.forward(inputs)
        last = post[-1]
        return np.hstack([np.ones((last.shape[0], 1)), last])


@dataclass(frozen=True)
class FeatureSnapshot:
    """Immutable hidden layers of generation j"""
    params: HiddenParams
    generation: int = 0

    def features(self, state: np.ndarray) -> np.ndarray:
        """phi_j(x): a leading 1 followed by the tanh-layer outputs"""
        return self.params.features_batch(np.asarray(state, dtype=float))[0]

    def features_batch(self, states: np.ndarray) -> np.ndarray:
        return self.params.features_batch(np.asarray(states, dtype=float))

    @property
    def feature_dim(self) -> int:
        return self.params.feature_dim


def publish_snapshot(params: HiddenParams, previous: Optional[FeatureSnapshot] = None) -> FeatureSnapshot:
    generation = 0 if previous is None else previous.generation + 1
    return FeatureSnapshot(params=params, generation=generation)


def projection_bound(u_max_a: float, n_u: int, n_2: int) -> float:
    """Column norm bound W_bar = u_max_a / sqrt(n_u (1 + 0.25 n_2))"""
    return u_max_a / np.sqrt(n_u * (1.0 + 0.25 * n_2))


def project_columns(matrix: np.ndarray, bound: float) -> np.ndarray:
    """Rescale every column whose Euclidean norm exceeds `bound` back onto the ball"""
    norms = np.linalg.norm(matrix, axis=0)
    scale = np.ones_like(norms)
    outside = norms > bound
    scale[outside] = bound / norms[outside]
    return matrix * scale


def columns_within_bound(matrix: np.ndarray, bound: float) -> bool:
    return bool(np.all(np.linalg.norm(matrix, axis=0) <= bound * (1.0 + PROJECTION_SLACK)))


def on_projection_bound(column_norms: np.ndarray, bound: float) -> np.ndarray:
    """True where a (max) column norm sits on the projection bound; never for a zero bound"""
    column_norms = np.asarray(column_norms, dtype=float)
    if bound <= 0:
        return np.zeros(column_norms.shape, dtype=bool)
    return column_norms >= bound * (1.0 - SATURATION_RTOL)


def adapt_step(k_prev: np.ndarray, snapshot: FeatureSnapshot, x_prev: np.ndarray,
               x_now: np.ndarray, u_m_prev: np.ndarray, theta: float,
               model: NominalModel, column_bound: float) -> np.ndarray:
    """
    K_bar = K + theta / ||phi||^2 * phi (g^+ (x_now - f_bar(x_prev, u_m_prev)))^T,
    followed by the column projection
    """
    phi = snapshot.features(x_prev)
    innovation = model.matched_input(x_prev, u_m_prev, x_now)
    k_bar = k_prev + (theta / (phi @ phi)) * np.outer(phi, innovation)
    return project_columns(k_bar, column_bound)


def learning_control(k: np.ndarray, snapshot: FeatureSnapshot, state: np.ndarray,
                     u_max_a: float) -> Tuple[np.ndarray, np.ndarray]:
    """u^a = clip(-K^T phi(x), +-u_max_a) and the per-input clip-active flags"""
    raw = -(k.T @ snapshot.features(state))
    clipped = (np.abs(raw) > u_max_a) & (u_max_a > 0)
    # adding 0.0 turns -0.0 into 0.0 so a zero learner matches the tube baseline bit for bit
    return np.clip(raw, -u_max_a, u_max_a) + 0.0, clipped


@dataclass
class TrainingReport:
    samples: int
    epochs: int
    initial_loss: float
    final_loss: float
    loss_history: List[float] = field(default_factory=list)
    mean_gradient_norm: float = 0.0

    @property
    def loss_increase(self) -> float:
        if self.initial_loss == 0.0:
            return 0.0
        return self.final_loss / self.initial_loss - 1.0


class HiddenLayerTrainer:
    """
    Fits -K^T phi(x) to stored labels by SGD on the mean squared error,
    with the output layer K frozen
    """

    def __init__(self, config: Dict = None):
        self.config = {**NETWORK_CONFIG, **(config or {})}

    @staticmethod
    def _as_arrays(samples: Sequence[Tuple[np.ndarray, np.ndarray]]) -> Tuple[np.ndarray, np.ndarray]:
        states = np.array([s for s, _ in samples], dtype=float)
        labels = np.array([u for _, u in samples], dtype=float)
        return states, labels

    def loss_and_gradients(self, states: np.ndarray, labels: np.ndarray, k: np.ndarray,
                           weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                           activations: Sequence[str]) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
        n = len(states)
        pre, post = [], [states]
        for w, b, name in zip(weights, biases, activations):
            z = post[-1] @ w + b
            pre.append(z)
            post.append(_activate(name, z))
        phi = np.hstack([np.ones((n, 1)), post[-1]])
        error = -(phi @ k) - labels
        loss = float(np.sum(error ** 2) / n)

        d_phi = -(2.0 / n) * error @ k.T
        d_post = d_phi[:, 1:]
        grads_w = [None] * len(weights)
        grads_b = [None] * len(weights)
        for layer in range(len(weights) - 1, -1, -1):
            d_pre = d_post * _activation_slope(activations[layer], pre[layer], post[layer + 1])
            grads_w[layer] = post[layer].T @ d_pre
            grads_b[layer] = d_pre.sum(axis=0)
            d_post = d_pre @ weights[layer].T
        return loss, grads_w, grads_b

    def loss(self, samples, k: np.ndarray, params: HiddenParams) -> float:
        states, labels = self._as_arrays(samples)
        value, _, _ = self.loss_and_gradients(states, labels, k, params.weights,
                                              params.biases, params.activations)
        return value

    def hidden_gradient_norm(self, samples, k: np.ndarray, params: HiddenParams) -> float:
        """Euclidean norm of the full-batch loss gradient over all hidden parameters"""
        states, labels = self._as_arrays(samples)
        _, gw, gb = self.loss_and_gradients(states, labels, k, params.weights,
                                            params.biases, params.activations)
        return float(np.sqrt(sum(np.sum(g ** 2) for g in gw) + sum(np.sum(g ** 2) for g in gb)))

    def train_hidden(self, samples: Sequence[Tuple[np.ndarray, np.ndarray]], k_frozen: np.ndarray,
              params: HiddenParams, seed: int = 0,
              epochs: Optional[int] = None) -> Tuple[HiddenParams, TrainingReport]:
        if len(samples) == 0:
            raise EmptyBuffer("cannot train hidden layers on an empty buffer")

        epochs = self.config["epochs"] if epochs is None else epochs
        lr = self.config["sgd_lr"]
        states, labels = self._as_arrays(samples)
        n = len(states)
        batch = n if n <= self.config["full_batch_limit"] else self.config["minibatch_size"]
        rng = np.random.default_rng(seed)
        k = np.array(k_frozen, dtype=float)

        weights = [w.copy() for w in params.weights]
        biases = [b.copy() for b in params.biases]
        activations = params.activations

        initial, _, _ = self.loss_and_gradients(states, labels, k, weights, biases, activations)
        history = [initial]
        grad_norms = []
        for _ in range(epochs):
            order = rng.permutation(n)
            for batch_slice in gen_batches(n, batch):
                idx = order[batch_slice]
                _, gw, gb = self.loss_and_gradients(states[idx], labels[idx], k,
                                                    weights, biases, activations)
                grad_norms.append(np.sqrt(sum(np.sum(g ** 2) for g in gw) + sum(np.sum(g ** 2) for g in gb)))
                for layer in range(len(weights)):
                    weights[layer] -= lr * gw[layer]
                    biases[layer] -= lr * gb[layer]
            value, _, _ = self.loss_and_gradients(states, labels, k, weights, biases, activations)
            history.append(value)

        report = TrainingReport(
            samples=n,
            epochs=epochs,
            initial_loss=history[0],
            final_loss=history[-1],
            loss_history=history,
            mean_gradient_norm=float(np.mean(grad_norms)) if grad_norms else 0.0,
        )
        if report.loss_increase > 0.05:
            logger.warning(f"Hidden-layer training raised the loss by {report.loss_increase:.1%}")
        logger.debug(
            f"Trained hidden layers on {n} samples: loss {report.initial_loss:.3e} -> "
            f"{report.final_loss:.3e}, mean gradient norm {report.mean_gradient_norm:.3e}"
        )
        return HiddenParams(tuple(weights), tuple(biases), activations), report


def parameters_frame(snapshot: FeatureSnapshot, k: np.ndarray) -> pd.DataFrame:
    """
    Flat dump, one row per entry: W1, b1, W2, b2, ... then K,
    each tensor in row-major order
    """
    rows = []
    tensors = []
    for layer, (w, b) in enumerate(zip(snapshot.params.weights, snapshot.params.biases), start=1):
        tensors.append((f"W{layer}", np.atleast_2d(w)))
        tensors.append((f"b{layer}", b.reshape(1, -1)))
    tensors.append(("K", np.atleast_2d(k)))
    for name, tensor in tensors:
        for (r, c), value in np.ndenumerate(tensor):
            rows.append({"tensor": name, "row": r, "col": c, "value": float(value)})
    frame = pd.DataFrame(rows, columns=["tensor", "row", "col", "value"])
    frame.attrs["generation"] = snapshot.generation
    return frame


def parameters_from_frame(frame: pd.DataFrame) -> Tuple[HiddenParams, np.ndarray]:
    """Inverse of `parameters_frame`"""
    tensors = {}
    for name, group in frame.groupby("tensor", sort=False):
        shape = (int(group["row"].max()) + 1, int(group["col"].max()) + 1)
        tensor = np.zeros(shape)
        tensor[group["row"].to_numpy(int), group["col"].to_numpy(int)] = group["value"].to_numpy(float)
        tensors[name] = tensor
    layers = sum(1 for name in tensors if name.startswith("W"))
    weights = tuple(tensors[f"W{i}"] for i in range(1, layers + 1))
    biases = tuple(tensors[f"b{i}"][0] for i in range(1, layers + 1))
    activations = ("relu",) * (layers - 1) + ("tanh",)
    return HiddenParams(weights, biases, activations), tensors["K"]
