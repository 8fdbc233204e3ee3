"""Feedforward network with logistic hidden units trained by resilient backpropagation.

The network maps a normalized feature vector to a normalized force. Training
is full-batch: every epoch computes the exact mean-squared-error gradient and
applies one Rprop+ step (sign-based step adaptation with weight backtracking).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import DimensionMismatchError, RejectedInputError, TrainingDivergedError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (10, 5, 1)


def logistic(z: np.ndarray) -> np.ndarray:
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MlpNetwork:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    hidden_activation: str = "logistic"
    output_activation: str = "identity"

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])

    def with_flat_parameters(self, flat: np.ndarray) -> "MlpNetwork":
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            biases.append(flat[pos:pos + b.size].reshape(b.shape).copy())
            pos += b.size
        return MlpNetwork(list(self.layer_sizes), weights, biases, self.hidden_activation, self.output_activation)

    def copy(self) -> "MlpNetwork":
        return self.with_flat_parameters(self.flat_parameters())


@dataclass
class MlpGradient:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(self.weights, self.biases)])


@dataclass
class RpropState:
    step: np.ndarray
    prev_grad: np.ndarray
    prev_delta: np.ndarray
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0

    @classmethod
    def initial(cls, n_parameters: int, eta_plus: float = 1.2, eta_minus: float = 0.5, delta0: float = 0.1,
                delta_min: float = 1e-6, delta_max: float = 50.0) -> "RpropState":
        return cls(
            step=np.full(n_parameters, float(delta0)),
            prev_grad=np.zeros(n_parameters),
            prev_delta=np.zeros(n_parameters),
            eta_plus=eta_plus, eta_minus=eta_minus, delta0=delta0, delta_min=delta_min, delta_max=delta_max,
        )


@dataclass
class TrainConfig:
    hidden_layers: Sequence[int] = DEFAULT_HIDDEN
    max_epochs: int = 10000
    patience: int = 500
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 50.0
    seed: int = 42

    @classmethod
    def from_config(cls, mlp_cfg, seed: int) -> "TrainConfig":
        return cls(hidden_layers=tuple(mlp_cfg.hidden_layers), max_epochs=mlp_cfg.max_epochs,
                   patience=mlp_cfg.patience, eta_plus=mlp_cfg.eta_plus, eta_minus=mlp_cfg.eta_minus,
                   delta0=mlp_cfg.delta0, delta_min=mlp_cfg.delta_min, delta_max=mlp_cfg.delta_max, seed=seed)


@dataclass
class TrainHistory:
    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    best_epoch: int = 1
    stopped_early: bool = False

    def rows(self) -> List[Dict]:
        return [{"epoch": i + 1, "train_mse": t, "validation_mse": v}
                for i, (t, v) in enumerate(zip(self.train_mse, self.validation_mse))]


@dataclass
class MlpModel:
    """Trained network plus the target scaling needed to report forces in newtons"""
    network: MlpNetwork
    target_offset: float = 0.0
    target_scale: float = 1.0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return forward(self.network, np.atleast_2d(X)).ravel() * self.target_scale + self.target_offset


def init_network(input_dim: int, layout: Sequence[int] = DEFAULT_HIDDEN, seed: int = 42) -> MlpNetwork:
    """Weights and biases uniform in +-1/sqrt(fan_in); layout lists the hidden sizes"""
    sizes = [int(input_dim), *[int(s) for s in layout], 1]
    if any(s < 1 for s in sizes):
        raise RejectedInputError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpNetwork(sizes, weights, biases)


def _forward_layers(net: MlpNetwork, X: np.ndarray) -> List[np.ndarray]:
    activations = [X]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ w + b
        activations.append(z if i == last else logistic(z))
    return activations


def forward(net: MlpNetwork, x: np.ndarray):
    """Prediction for one feature vector (scalar) or a batch of rows (vector)"""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise DimensionMismatchError(f"expected {net.input_dim} features, got {x.shape[-1]}")
    out = _forward_layers(net, np.atleast_2d(x))[-1]
    if x.ndim == 1:
        return float(out[0, 0])
    return out[:, 0]


def backprop_gradient(net: MlpNetwork, X: np.ndarray, y: np.ndarray) -> Tuple[MlpGradient, float]:
    """Exact gradient of mean((forward(x) - y)^2) over the batch, and that loss"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    if X.shape[0] == 0:
        raise RejectedInputError("empty batch")
    if X.shape[1] != net.input_dim:
        raise DimensionMismatchError(f"expected {net.input_dim} features, got {X.shape[1]}")
    n = X.shape[0]
    activations = _forward_layers(net, X)
    residual = activations[-1] - y
    loss = float(np.mean(residual ** 2))

    delta = 2.0 * residual / n
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.weights)
    for i in range(len(net.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            a = activations[i]
            delta = (delta @ net.weights[i].T) * a * (1.0 - a)
    return MlpGradient(grad_w, grad_b), loss


def mse(net: MlpNetwork, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((forward(net, np.atleast_2d(X)) - np.asarray(y, dtype=float)) ** 2))


def rprop_step(net: MlpNetwork, grads, state: RpropState) -> Tuple[MlpNetwork, RpropState]:
    """One Rprop+ update; only the signs of the gradients enter the step"""
    g = grads.flat() if isinstance(grads, MlpGradient) else np.asarray(grads, dtype=float)
    if g.shape != state.step.shape:
        raise DimensionMismatchError(f"gradient has {g.size} entries, state has {state.step.size}")

    agreement = g * state.prev_grad
    grow = agreement > 0
    shrink = agreement < 0

    step = state.step.copy()
    step[grow] = np.minimum(step[grow] * state.eta_plus, state.delta_max)
    step[shrink] = np.maximum(step[shrink] * state.eta_minus, state.delta_min)

    delta = -np.sign(g) * step
    delta[shrink] = -state.prev_delta[shrink]

    new_net = net.with_flat_parameters(net.flat_parameters() + delta)
    new_state = RpropState(
        step=step,
        prev_grad=np.where(shrink, 0.0, g),
        prev_delta=delta,
        eta_plus=state.eta_plus, eta_minus=state.eta_minus, delta0=state.delta0,
        delta_min=state.delta_min, delta_max=state.delta_max,
    )
    return new_net, new_state


def target_scaling(y: np.ndarray) -> Tuple[float, float]:
    """Offset and scale mapping the training targets onto [0, 1]"""
    lo, hi = float(np.min(y)), float(np.max(y))
    return lo, (hi - lo) if hi > lo else 1.0


def train_mlp(train: Tuple[np.ndarray, np.ndarray], validation: Tuple[np.ndarray, np.ndarray],
              cfg: Optional[TrainConfig] = None) -> Tuple[MlpModel, TrainHistory]:
    """Full-batch Rprop+ training; returns the weights with the lowest validation MSE"""
    cfg = cfg or TrainConfig()
    X_train, y_train = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=float)
    X_val, y_val = np.asarray(validation[0], dtype=float), np.asarray(validation[1], dtype=float)
    if len(X_train) == 0 or len(X_val) == 0:
        raise RejectedInputError("training and validation sets must be non-empty")
    if cfg.max_epochs < 1:
        raise RejectedInputError("max_epochs must be >= 1")

    offset, scale = target_scaling(y_train)
    t_train = (y_train - offset) / scale
    t_val = (y_val - offset) / scale

    net = init_network(X_train.shape[1], cfg.hidden_layers, cfg.seed)
    state = RpropState.initial(net.n_parameters(), cfg.eta_plus, cfg.eta_minus, cfg.delta0,
                               cfg.delta_min, cfg.delta_max)
    history = TrainHistory()
    best_net, best_val, since_best = net.copy(), np.inf, 0

    for epoch in range(1, cfg.max_epochs + 1):
        grads, train_loss = backprop_gradient(net, X_train, t_train)
        val_loss = mse(net, X_val, t_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(epoch)
        history.train_mse.append(train_loss)
        history.validation_mse.append(val_loss)

        if val_loss < best_val:
            best_net, best_val, since_best = net.copy(), val_loss, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if cfg.patience and since_best >= cfg.patience:
                history.stopped_early = True
                logger.info(f"Early stop at epoch {epoch}, best validation MSE {best_val:.3e} at epoch {history.best_epoch}")
                break

        net, state = rprop_step(net, grads, state)

    logger.info(f"MLP trained: {len(history.train_mse)} epochs, best validation MSE {best_val:.3e}")
    return MlpModel(best_net, offset, scale), history
