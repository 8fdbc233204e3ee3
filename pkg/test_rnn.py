import logging

import numpy as np
import pytest

from services.mlp_rprop import MlpNetwork, forward
from services.rnn import (
    RnnTrainConfig,
    SequenceSample,
    bptt_gradient,
    build_angular_sequences,
    build_sequences,
    init_rnn,
    predict_rnn,
    rnn_forward,
    stack_sequences,
    train_rnn,
)
from utils.errors import DimensionMismatchError, RejectedInputError, TrainingDivergedError


def loss(net, X, y):
    return float(np.mean((rnn_forward(net, X) - y) ** 2))


def numeric_gradient(net, X, y, h=1e-6):
    flat = net.flat_parameters()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss(net.with_flat_parameters(up), X, y) - loss(net.with_flat_parameters(down), X, y)) / (2 * h)
    return grad


def random_sequences(n, length, p, seed=0, target=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, length, p))
    y = rng.normal(size=n) if target is None else np.full(n, float(target))
    return [SequenceSample(X[i], float(y[i]), i) for i in range(n)]


def test_sequences_per_entry_length():
    features = np.arange(12, dtype=float)[:, None]
    assert len(build_sequences(features[:10], np.zeros(10), np.zeros(10), np.arange(10))) == 1
    assert len(build_sequences(features, np.zeros(12), np.zeros(12), np.arange(12))) == 3


def test_sequences_never_cross_entry_boundaries():
    features = np.arange(20, dtype=float)[:, None]
    entries = np.repeat([0, 1], 10)
    revolutions = np.tile(np.arange(10), 2)
    samples = build_sequences(features, np.arange(20.0), entries, revolutions)
    assert len(samples) == 2
    assert [s.last_index for s in samples] == [9, 19]
    assert np.array_equal(samples[1].features[:, 0], np.arange(10, 20))
    assert samples[1].target == 19.0


def test_gap_in_revolutions_splits_a_run():
    features = np.zeros((12, 2))
    revolutions = np.array([0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11, 12])
    assert build_sequences(features, np.zeros(12), np.zeros(12), revolutions) == []


def test_short_entry_is_logged(caplog):
    caplog.set_level(logging.INFO, logger="services.rnn")
    samples = build_sequences(np.zeros((7, 3)), np.zeros(7), np.full(7, 4), np.arange(7))
    assert samples == []
    assert "Entry 4: run of 7 revolutions is shorter than 10" in caplog.text


def test_angular_sequences_step_along_the_grid():
    features = np.arange(2 * 3 * 5, dtype=float).reshape(2, 15)
    samples = build_angular_sequences(features, np.array([1.0, 2.0]), n_channels=3)
    assert samples[1].features.shape == (5, 3)
    assert np.array_equal(samples[1].features[2], features[1, [2, 7, 12]])
    with pytest.raises(DimensionMismatchError):
        build_angular_sequences(features, np.zeros(2), n_channels=4)


def test_bptt_matches_finite_differences():
    for instance in range(50):
        net = init_rnn(3, (2,), sequence_length=3, seed=instance)
        net = net.with_flat_parameters(net.flat_parameters() + np.random.default_rng(instance).normal(0, 0.3, net.flat_parameters().size))
        X, y = stack_sequences(random_sequences(4, 3, 3, seed=instance))
        analytic, _ = bptt_gradient(net, X, y)
        assert np.allclose(analytic, numeric_gradient(net, X, y), rtol=1e-4, atol=1e-8)


def test_bptt_matches_finite_differences_for_stacked_layers():
    for instance in range(5):
        net = init_rnn(4, (5, 3), sequence_length=6, seed=100 + instance)
        X, y = stack_sequences(random_sequences(5, 6, 4, seed=instance))
        analytic, value = bptt_gradient(net, X, y)
        assert value == pytest.approx(loss(net, X, y))
        assert np.allclose(analytic, numeric_gradient(net, X, y), rtol=1e-4, atol=1e-8)


def test_zero_network_outputs_zero():
    net = init_rnn(142, seed=1)
    zero = net.with_flat_parameters(np.zeros(net.flat_parameters().size))
    sequence = np.random.default_rng(0).normal(size=(10, 142))
    assert predict_rnn(zero, sequence) == 0.0


def test_without_recurrence_matches_feedforward_network():
    net = init_rnn(6, (4, 3), sequence_length=10, seed=2)
    for layer in net.layers:
        layer.w_rec[:] = 0.0
        layer.bias[:] = np.random.default_rng(3).normal(size=layer.size)
    net.b_out[:] = 0.25
    mlp = MlpNetwork([6, 4, 3, 1], [l.w_in for l in net.layers] + [net.w_out],
                     [l.bias for l in net.layers] + [net.b_out])
    x = np.random.default_rng(4).normal(size=6)
    assert predict_rnn(net, np.tile(x, (10, 1))) == pytest.approx(forward(mlp, x), abs=1e-12)


def test_output_depends_on_step_order():
    net = init_rnn(3, (10, 5), seed=5)
    sequence = np.random.default_rng(5).normal(size=(10, 3))
    permuted = np.concatenate([sequence[8::-1], sequence[9:]])
    assert predict_rnn(net, sequence) != pytest.approx(predict_rnn(net, permuted), abs=1e-12)


def test_predictions_do_not_leak_between_sequences():
    net = init_rnn(3, seed=6)
    X, _ = stack_sequences(random_sequences(8, 10, 3, seed=6))
    batch = rnn_forward(net, X)
    alone = [predict_rnn(net, X[i]) for i in range(8)]
    assert np.allclose(batch, alone, rtol=1e-12, atol=1e-14)
    assert np.allclose(rnn_forward(net, X[::-1]), batch[::-1], rtol=1e-12, atol=1e-14)


def test_wrong_sequence_shape_is_rejected():
    net = init_rnn(3, seed=0)
    with pytest.raises(DimensionMismatchError):
        predict_rnn(net, np.zeros((9, 3)))
    with pytest.raises(DimensionMismatchError):
        predict_rnn(net, np.zeros((10, 4)))
    with pytest.raises(RejectedInputError):
        init_rnn(3, ())


def test_constant_targets_are_fitted():
    samples = random_sequences(40, 10, 3, seed=7, target=-2288.0)
    cfg = RnnTrainConfig(batch_size=5, epochs=300, learning_rate=0.1, seed=7)
    model, history = train_rnn(samples, cfg)
    assert history.train_mse[-1] < 1e-4
    X, _ = stack_sequences(samples)
    assert np.allclose(model.predict(X), -2288.0, atol=0.05)


def test_training_is_deterministic_per_seed():
    samples = random_sequences(30, 10, 3, seed=8)
    cfg = RnnTrainConfig(batch_size=7, epochs=5, learning_rate=0.05, seed=8)
    a, _ = train_rnn(samples, cfg)
    b, _ = train_rnn(samples, cfg)
    c, _ = train_rnn(samples, RnnTrainConfig(batch_size=7, epochs=5, learning_rate=0.05, seed=9))
    assert np.array_equal(a.network.flat_parameters(), b.network.flat_parameters())
    assert not np.array_equal(a.network.flat_parameters(), c.network.flat_parameters())


def test_validation_selects_best_epoch():
    samples = random_sequences(40, 10, 3, seed=10)
    cfg = RnnTrainConfig(batch_size=10, epochs=20, learning_rate=0.1, seed=10)
    model, history = train_rnn(samples[:30], cfg, validation=samples[30:])
    assert len(history.validation_mse) == 20
    assert history.validation_mse[history.best_epoch - 1] == min(history.validation_mse)
    X_val, y_val = stack_sequences(samples[30:])
    t_val = (y_val - model.target_offset) / model.target_scale
    assert loss(model.network, model.centered(X_val), t_val) == pytest.approx(min(history.validation_mse))


def test_clipping_is_counted():
    samples = random_sequences(20, 10, 3, seed=11, target=1.0)
    samples[0] = SequenceSample(samples[0].features, 1000.0, 0)
    _, history = train_rnn(samples, RnnTrainConfig(batch_size=20, epochs=3, clip_norm=1e-3, seed=11))
    assert history.clipped_batches == 3


def test_nan_loss_raises_diverged_error():
    samples = random_sequences(10, 10, 3, seed=12)
    samples[4].features[3, 1] = np.nan
    with pytest.raises(TrainingDivergedError):
        train_rnn(samples, RnnTrainConfig(batch_size=10, epochs=2))


def test_inputs_are_centred_and_targets_standardized():
    samples = random_sequences(30, 10, 3, seed=13)
    for s in samples:
        s.features += 5.0
    model, _ = train_rnn(samples, RnnTrainConfig(batch_size=10, epochs=2, seed=13))
    X, y = stack_sequences(samples)
    assert np.allclose(model.input_offset, X.reshape(-1, 3).mean(axis=0))
    assert model.target_offset == pytest.approx(np.mean(y))
    assert model.target_scale == pytest.approx(np.std(y))
    expected = rnn_forward(model.network, X - model.input_offset) * model.target_scale + model.target_offset
    assert np.allclose(model.predict(X), expected, rtol=0.0, atol=1e-12)
