"""Stacked Elman recurrent regressor over sequences of contact-patch features.

A sequence is the feature vectors of consecutive revolutions of one schedule
entry; the target is the force of the last revolution. Gradients come from
full backpropagation through time and parameters are updated by minibatch
stochastic gradient descent. Inputs are centred on the mean training step and
targets standardized before the first update.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.mlp_rprop import logistic
from utils.errors import DimensionMismatchError, RejectedInputError, TrainingDivergedError

logger = logging.getLogger(__name__)


@dataclass
class RnnLayer:
    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return self.bias.size


@dataclass
class RnnNetwork:
    layers: List[RnnLayer]
    w_out: np.ndarray
    b_out: np.ndarray
    sequence_length: int = 10
    cell_type: str = "elman"
    activation: str = "logistic"

    @property
    def input_dim(self) -> int:
        return self.layers[0].w_in.shape[0]

    @property
    def hidden_sizes(self) -> List[int]:
        return [layer.size for layer in self.layers]

    def arrays(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.w_in, layer.w_rec, layer.bias])
        return out + [self.w_out, self.b_out]

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat_parameters(self, flat: np.ndarray) -> "RnnNetwork":
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(flat[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        layers = [RnnLayer(*arrays[3 * i:3 * i + 3]) for i in range(len(self.layers))]
        return RnnNetwork(layers, arrays[-2], arrays[-1], self.sequence_length, self.cell_type, self.activation)


@dataclass
class SequenceSample:
    features: np.ndarray
    target: float
    # dataset row of the final revolution, used for split membership
    last_index: int = 0


@dataclass
class RnnTrainConfig:
    hidden_layers: Sequence[int] = (10, 5)
    sequence_length: int = 10
    batch_size: int = 50
    epochs: int = 10000
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    patience: int = 0
    seed: int = 42

    @classmethod
    def from_config(cls, rnn_cfg, seed: int) -> "RnnTrainConfig":
        return cls(hidden_layers=tuple(rnn_cfg.hidden_layers), sequence_length=rnn_cfg.sequence_length,
                   batch_size=rnn_cfg.batch_size, epochs=rnn_cfg.epochs, learning_rate=rnn_cfg.learning_rate,
                   clip_norm=rnn_cfg.clip_norm, patience=rnn_cfg.patience, seed=seed)


@dataclass
class RnnHistory:
    train_mse: List[float] = field(default_factory=list)
    validation_mse: List[float] = field(default_factory=list)
    clipped_batches: int = 0
    best_epoch: int = 0

    def rows(self) -> List[Dict]:
        rows = []
        for i, loss in enumerate(self.train_mse):
            val = self.validation_mse[i] if i < len(self.validation_mse) else float("nan")
            rows.append({"epoch": i + 1, "train_mse": loss, "validation_mse": val})
        return rows


@dataclass
class RnnModel:
    network: RnnNetwork
    target_offset: float = 0.0
    target_scale: float = 1.0
    # per-feature mean of the training steps, subtracted before the first layer
    input_offset: Optional[np.ndarray] = None

    def centered(self, sequences: np.ndarray) -> np.ndarray:
        sequences = np.asarray(sequences, dtype=float)
        if self.input_offset is None:
            return sequences
        return sequences - self.input_offset

    def predict(self, sequences: np.ndarray) -> np.ndarray:
        return rnn_forward(self.network, self.centered(sequences)) * self.target_scale + self.target_offset


def standardize_targets(y: np.ndarray) -> Tuple[float, float]:
    """Mean and standard deviation of the training targets; scale 1 for a constant target"""
    mean, std = float(np.mean(y)), float(np.std(y))
    return mean, std if std > 0 else 1.0


def init_rnn(input_dim: int, hidden_layers: Sequence[int] = (10, 5), sequence_length: int = 10,
             seed: int = 42) -> RnnNetwork:
    if input_dim < 1 or any(h < 1 for h in hidden_layers) or not hidden_layers:
        raise RejectedInputError(f"invalid recurrent layout {input_dim} -> {list(hidden_layers)}")
    rng = np.random.default_rng(seed)
    layers, fan_in = [], input_dim
    for size in hidden_layers:
        layers.append(RnnLayer(
            w_in=rng.uniform(-1, 1, size=(fan_in, size)) / np.sqrt(fan_in),
            w_rec=rng.uniform(-1, 1, size=(size, size)) / np.sqrt(size),
            bias=np.zeros(size),
        ))
        fan_in = size
    w_out = rng.uniform(-1, 1, size=(fan_in, 1)) / np.sqrt(fan_in)
    return RnnNetwork(layers, w_out, np.zeros(1), sequence_length)


def _check_batch(net: RnnNetwork, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1] != net.sequence_length:
        raise DimensionMismatchError(f"expected sequences of length {net.sequence_length}, got {X.shape[1]}")
    if X.shape[2] != net.input_dim:
        raise DimensionMismatchError(f"expected {net.input_dim} features per step, got {X.shape[2]}")
    return X


def _unroll(net: RnnNetwork, X: np.ndarray) -> List[List[np.ndarray]]:
    """Hidden states per layer and step; the state starts at zero for every sequence"""
    batch, steps, _ = X.shape
    states = [[None] * steps for _ in net.layers]
    for t in range(steps):
        below = X[:, t, :]
        for l, layer in enumerate(net.layers):
            previous = states[l][t - 1] if t > 0 else np.zeros((batch, layer.size))
            states[l][t] = logistic(below @ layer.w_in + previous @ layer.w_rec + layer.bias)
            below = states[l][t]
    return states


def rnn_forward(net: RnnNetwork, X: np.ndarray) -> np.ndarray:
    X = _check_batch(net, X)
    states = _unroll(net, X)
    return (states[-1][-1] @ net.w_out + net.b_out)[:, 0]


def predict_rnn(net: RnnNetwork, sequence: np.ndarray) -> float:
    """Output at the final step of one (L, features) sequence"""
    sequence = np.asarray(sequence, dtype=float)
    if sequence.ndim != 2:
        raise DimensionMismatchError("a single sequence must be a (length, features) array")
    return float(rnn_forward(net, sequence)[0])


def bptt_gradient(net: RnnNetwork, X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, float]:
    """Flat gradient of mean((output - y)^2) by backpropagation through time, and that loss"""
    X = _check_batch(net, X)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    batch, steps, _ = X.shape
    states = _unroll(net, X)
    top = states[-1][-1]
    residual = top @ net.w_out + net.b_out - y
    loss = float(np.mean(residual ** 2))

    d_out = 2.0 * residual / batch
    g_w_out = top.T @ d_out
    g_b_out = d_out.sum(axis=0)
    g_layers = [[np.zeros_like(l.w_in), np.zeros_like(l.w_rec), np.zeros_like(l.bias)] for l in net.layers]

    # gradient w.r.t. each layer's output at each step, filled from above
    upstream = [[np.zeros((batch, l.size)) for _ in range(steps)] for l in net.layers]
    upstream[-1][-1] += d_out @ net.w_out.T
    carry = [np.zeros((batch, l.size)) for l in net.layers]

    for t in range(steps - 1, -1, -1):
        for l in range(len(net.layers) - 1, -1, -1):
            layer = net.layers[l]
            h = states[l][t]
            dz = (upstream[l][t] + carry[l]) * h * (1.0 - h)
            below = X[:, t, :] if l == 0 else states[l - 1][t]
            g_layers[l][0] += below.T @ dz
            if t > 0:
                g_layers[l][1] += states[l][t - 1].T @ dz
            g_layers[l][2] += dz.sum(axis=0)
            carry[l] = dz @ layer.w_rec.T
            if l > 0:
                upstream[l - 1][t] += dz @ layer.w_in.T

    flat = [g.ravel() for group in g_layers for g in group] + [g_w_out.ravel(), g_b_out.ravel()]
    return np.concatenate(flat), loss


def build_sequences(features: np.ndarray, targets: np.ndarray, entry_indices: np.ndarray,
                    revolution_indices: np.ndarray, length: int = 10) -> List[SequenceSample]:
    """Sliding windows of `length` consecutive revolutions that stay inside one schedule entry"""
    features = np.asarray(features, dtype=float)
    n = len(features)
    samples = []
    start = 0
    while start < n:
        stop = start + 1
        while (stop < n and entry_indices[stop] == entry_indices[start]
               and revolution_indices[stop] == revolution_indices[stop - 1] + 1):
            stop += 1
        run = stop - start
        if run < length:
            logger.info(f"Entry {entry_indices[start]}: run of {run} revolutions is shorter than {length}, no sequences")
        for end in range(start + length - 1, stop):
            samples.append(SequenceSample(features[end - length + 1:end + 1], float(targets[end]), end))
        start = stop
    return samples


def build_angular_sequences(features: np.ndarray, targets: np.ndarray, n_channels: int) -> List[SequenceSample]:
    """One sequence per revolution, stepping along the angle grid with the channel values as inputs"""
    features = np.asarray(features, dtype=float)
    n, p = features.shape
    if p % n_channels:
        raise DimensionMismatchError(f"{p} features do not split into {n_channels} channels")
    grid = p // n_channels
    stacked = features.reshape(n, n_channels, grid).transpose(0, 2, 1)
    return [SequenceSample(stacked[i], float(targets[i]), i) for i in range(n)]


def stack_sequences(samples: Sequence[SequenceSample]) -> Tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise RejectedInputError("no sequences")
    return np.stack([s.features for s in samples]), np.array([s.target for s in samples])


def train_rnn(sequences: Sequence[SequenceSample], cfg: Optional[RnnTrainConfig] = None,
              validation: Optional[Sequence[SequenceSample]] = None) -> Tuple[RnnModel, RnnHistory]:
    """Minibatch SGD with BPTT over full sequences and gradient-norm clipping"""
    cfg = cfg or RnnTrainConfig()
    X, y = stack_sequences(sequences)
    input_offset = X.reshape(-1, X.shape[2]).mean(axis=0)
    X = X - input_offset
    offset, scale = standardize_targets(y)
    t = (y - offset) / scale
    if validation:
        X_val, y_val = stack_sequences(validation)
        X_val = X_val - input_offset
        t_val = (y_val - offset) / scale

    net = init_rnn(X.shape[2], cfg.hidden_layers, X.shape[1], cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = net.flat_parameters()
    history = RnnHistory()
    best_params, best_val, since_best = params.copy(), np.inf, 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad, loss = bptt_gradient(net, X[batch], t[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            norm = float(np.linalg.norm(grad))
            if cfg.clip_norm and norm > cfg.clip_norm:
                logger.debug(f"Clipping gradient norm {norm:.3f} to {cfg.clip_norm}")
                grad *= cfg.clip_norm / norm
                history.clipped_batches += 1
            params = params - cfg.learning_rate * grad
            net = net.with_flat_parameters(params)
            losses.append(loss * len(batch))
        history.train_mse.append(float(np.sum(losses) / len(X)))

        if validation:
            val_loss = float(np.mean((rnn_forward(net, X_val) - t_val) ** 2))
            if not np.isfinite(val_loss):
                raise TrainingDivergedError(epoch)
            history.validation_mse.append(val_loss)
            if val_loss < best_val:
                best_params, best_val, since_best = params.copy(), val_loss, 0
                history.best_epoch = epoch
            else:
                since_best += 1
                if cfg.patience and since_best >= cfg.patience:
                    logger.info(f"RNN early stop at epoch {epoch}, best validation MSE {best_val:.3e}")
                    break

    if validation:
        net = net.with_flat_parameters(best_params)
    else:
        history.best_epoch = len(history.train_mse)
    if history.clipped_batches:
        logger.info(f"Gradient clipping triggered on {history.clipped_batches} minibatches")
    logger.info(f"RNN trained: {len(history.train_mse)} epochs, final train MSE {history.train_mse[-1]:.3e}")
    return RnnModel(net, offset, scale, input_offset), history
