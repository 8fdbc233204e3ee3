import numpy as np
import pytest

from services.mlp_rprop import (
    MlpNetwork,
    RpropState,
    TrainConfig,
    backprop_gradient,
    forward,
    init_network,
    logistic,
    mse,
    rprop_step,
    train_mlp,
)
from utils.errors import DimensionMismatchError, RejectedInputError, TrainingDivergedError


def numeric_gradient(net, X, y, h=1e-6):
    flat = net.flat_parameters()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (mse(net.with_flat_parameters(up), X, y) - mse(net.with_flat_parameters(down), X, y)) / (2 * h)
    return grad


def test_init_is_deterministic_and_shaped():
    a = init_network(142, seed=3)
    b = init_network(142, seed=3)
    c = init_network(142, seed=4)
    assert [w.shape for w in a.weights] == [(142, 10), (10, 5), (5, 1), (1, 1)]
    assert a.layer_sizes == [142, 10, 5, 1, 1]
    assert np.array_equal(a.flat_parameters(), b.flat_parameters())
    assert not np.array_equal(a.flat_parameters(), c.flat_parameters())
    bound = 1.0 / np.sqrt(142)
    assert np.all(np.abs(a.weights[0]) <= bound)


def test_init_rejects_empty_layer():
    with pytest.raises(RejectedInputError):
        init_network(142, (10, 0, 1))


def test_zero_network_outputs_zero():
    net = init_network(213, seed=1)
    zero = net.with_flat_parameters(np.zeros(net.n_parameters()))
    assert forward(zero, np.random.default_rng(0).normal(size=213)) == 0.0


def test_hidden_unit_with_zero_weights_emits_half():
    net = MlpNetwork([3, 1, 1], [np.zeros((3, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    assert forward(net, np.array([4.0, -2.0, 7.0])) == 0.5


def test_hand_computed_two_two_one_network():
    w1 = np.array([[0.5, -1.0], [2.0, 0.25]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[1.5], [-0.75]])
    b2 = np.array([0.3])
    net = MlpNetwork([2, 2, 1], [w1, w2], [b1, b2])
    x = np.array([0.4, -0.6])
    h1 = 1.0 / (1.0 + np.exp(-(0.5 * 0.4 + 2.0 * -0.6 + 0.1)))
    h2 = 1.0 / (1.0 + np.exp(-(-1.0 * 0.4 + 0.25 * -0.6 - 0.2)))
    assert forward(net, x) == pytest.approx(1.5 * h1 - 0.75 * h2 + 0.3, abs=1e-12)


def test_forward_rejects_wrong_dimension():
    with pytest.raises(DimensionMismatchError):
        forward(init_network(142), np.zeros(213))


def test_logistic_is_stable_for_large_inputs():
    values = logistic(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(values, np.array([0.0, 0.5, 1.0]))


def test_gradient_matches_finite_differences():
    for instance in range(100):
        rng = np.random.default_rng(instance)
        net = init_network(4, (5, 3, 1), seed=instance)
        X = rng.normal(size=(6, 4))
        y = rng.normal(size=6)
        grads, _ = backprop_gradient(net, X, y)
        assert np.allclose(grads.flat(), numeric_gradient(net, X, y), rtol=1e-4, atol=1e-8)


def test_gradient_vanishes_at_exact_fit():
    net = init_network(5, seed=2)
    X = np.random.default_rng(2).normal(size=(8, 5))
    grads, loss = backprop_gradient(net, X, forward(net, X))
    assert loss == 0.0
    assert not np.any(grads.flat())


def test_gradient_is_invariant_to_batch_duplication():
    net = init_network(5, seed=6)
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(7, 5)), rng.normal(size=7)
    single, _ = backprop_gradient(net, X, y)
    doubled, _ = backprop_gradient(net, np.vstack([X, X]), np.concatenate([y, y]))
    assert np.allclose(single.flat(), doubled.flat(), rtol=1e-12, atol=1e-15)


def test_rprop_ignores_zero_gradients():
    net = init_network(3, (2,), seed=0)
    grads = np.zeros(net.n_parameters())
    grads[0] = 1.0
    new_net, _ = rprop_step(net, grads, RpropState.initial(net.n_parameters()))
    before, after = net.flat_parameters(), new_net.flat_parameters()
    assert np.array_equal(before[1:], after[1:])
    assert after[0] == pytest.approx(before[0] - 0.1)


def test_rprop_update_depends_only_on_signs():
    net = init_network(3, (2,), seed=0)
    grads = np.random.default_rng(1).normal(size=net.n_parameters())
    state = RpropState.initial(net.n_parameters())
    small, _ = rprop_step(net, grads, state)
    large, _ = rprop_step(net, grads * 1000.0, state)
    assert np.array_equal(small.flat_parameters(), large.flat_parameters())


def test_rprop_steps_grow_then_backtrack():
    net = init_network(3, (2,), seed=0)
    n = net.n_parameters()
    state = RpropState.initial(n)
    net1, state = rprop_step(net, np.ones(n), state)
    assert np.allclose(state.step, 0.1)
    net2, state = rprop_step(net1, np.ones(n), state)
    assert np.allclose(state.step, 0.12)
    assert np.allclose(net2.flat_parameters(), net.flat_parameters() - 0.22)

    net3, state = rprop_step(net2, -np.ones(n), state)
    assert np.allclose(state.step, 0.06)
    assert np.allclose(net3.flat_parameters(), net1.flat_parameters())
    assert not np.any(state.prev_grad)


def test_rprop_step_sizes_stay_bounded():
    net = init_network(4, (3,), seed=0)
    state = RpropState.initial(net.n_parameters(), delta_max=0.5)
    rng = np.random.default_rng(9)
    for i in range(300):
        grads = np.sign(rng.normal(size=net.n_parameters())) if i % 2 else np.ones(net.n_parameters())
        net, state = rprop_step(net, grads, state)
        assert np.all(state.step >= state.delta_min) and np.all(state.step <= state.delta_max)


def toy_linear_task(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 2))
    return X, 0.3 * X[:, 0]


def test_learns_linear_toy_regression():
    X, y = toy_linear_task()
    cfg = TrainConfig(hidden_layers=(10, 5), max_epochs=2000, patience=0, seed=1)
    model, history = train_mlp((X[:150], y[:150]), (X[150:], y[150:]), cfg)
    assert min(history.validation_mse) < 1e-4
    assert np.mean((model.predict(X[150:]) - y[150:]) ** 2) < 1e-4 * 0.3 ** 2


def test_constant_target_gives_constant_predictor():
    X, _ = toy_linear_task()
    y = np.full(len(X), 2500.0)
    model, history = train_mlp((X[:150], y[:150]), (X[150:], y[150:]), TrainConfig(max_epochs=1000, seed=2))
    assert history.validation_mse[history.best_epoch - 1] < 1e-6
    assert np.allclose(model.predict(X[150:]), 2500.0, atol=0.01)


def test_best_validation_model_is_returned():
    X, y = toy_linear_task(seed=3)
    model, history = train_mlp((X[:150], y[:150]), (X[150:], y[150:]), TrainConfig(max_epochs=50, seed=3))
    assert len(history.train_mse) == 50
    best = history.validation_mse[history.best_epoch - 1]
    assert best == min(history.validation_mse)
    assert best <= history.validation_mse[0]
    t_val = (y[150:] - model.target_offset) / model.target_scale
    assert mse(model.network, X[150:], t_val) == pytest.approx(best)


def test_early_stopping_respects_patience():
    X, y = toy_linear_task(seed=4)
    noise = np.random.default_rng(4).normal(0.0, 0.1, size=len(y))
    cfg = TrainConfig(max_epochs=10000, patience=20, seed=4)
    _, history = train_mlp((X[:20], y[:20] + noise[:20]), (X[150:], y[150:]), cfg)
    assert history.stopped_early
    assert len(history.train_mse) == history.best_epoch + 20


def test_training_is_deterministic():
    X, y = toy_linear_task(seed=5)
    cfg = TrainConfig(max_epochs=100, seed=5)
    a, _ = train_mlp((X[:150], y[:150]), (X[150:], y[150:]), cfg)
    b, _ = train_mlp((X[:150], y[:150]), (X[150:], y[150:]), cfg)
    assert np.array_equal(a.network.flat_parameters(), b.network.flat_parameters())


def test_nan_loss_raises_diverged_error():
    X, y = toy_linear_task()
    X[3, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as excinfo:
        train_mlp((X[:150], y[:150]), (X[150:], y[150:]), TrainConfig(max_epochs=10))
    assert excinfo.value.epoch == 1
