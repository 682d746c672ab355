import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dropzoom.data import Dataset
from dropzoom.nn import (AdamConfig, AdamState, DivergedError, MlpConfig, MlpModel, NumericError, ShapeError,
                         TrainConfig, adam_step, backward, bce_cost, binary_accuracy, evaluate, fit_arrays,
                         forward, init_model, mse_cost, sample_masks, sigmoid, train, xavier_init)


def _numeric(model, x, y, loss_fn, masks=None, eps=1e-6):
    params = [p.copy() for p in model.params()]
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + eps
            hi = loss_fn(forward(model.with_params(params), x, masks=masks), y)
            p[idx] = old - eps
            lo = loss_fn(forward(model.with_params(params), x, masks=masks), y)
            p[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def _max_rel(a_list, n_list):
    return max(float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-7)))
               for a, n in zip(a_list, n_list))


def test_config_validation():
    with pytest.raises(ValueError):
        MlpConfig(input_dim=0)
    with pytest.raises(ValueError):
        MlpConfig(input_dim=2, dropout_rate=1.0)
    with pytest.raises(ValueError):
        MlpConfig(input_dim=2, output_activation="softmax")
    assert MlpConfig(3, hidden_layers=2, hidden_units=5).layer_sizes == [3, 5, 5, 1]


def test_model_shape_checked():
    cfg = MlpConfig(2, 1, 3)
    with pytest.raises(ShapeError):
        MlpModel(cfg, [np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])


def test_xavier_bounds_and_determinism():
    w = xavier_init(30, 20, np.random.default_rng(0))
    limit = np.sqrt(6 / 50)
    assert w.shape == (30, 20)
    assert np.all(np.abs(w) <= limit)
    assert np.abs(w).max() > 0.9 * limit
    a, b = init_model(MlpConfig(4, init_seed=7)), init_model(MlpConfig(4, init_seed=7))
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert all(not b.any() for b in a.biases)


def test_forward_matches_hand_computation():
    cfg = MlpConfig(2, hidden_layers=1, hidden_units=2)
    w0 = np.array([[1.0, -1.0], [2.0, 0.5]])
    b0 = np.array([0.0, 0.25])
    w1 = np.array([[1.5], [-2.0]])
    b1 = np.array([0.1])
    model = MlpModel(cfg, [w0, w1], [b0, b1])
    x = np.array([[1.0, 1.0], [-1.0, 0.5]])
    # row 0: z = [3, -0.25] -> relu [3, 0] -> 4.5 + 0.1
    # row 1: z = [0, 1.5]  -> relu [0, 1.5] -> -3 + 0.1
    expected = 1 / (1 + np.exp(-np.array([4.6, -2.9])))
    np.testing.assert_allclose(forward(model, x), expected, rtol=1e-15)


def test_sigmoid_stable_at_extremes():
    z = np.array([-1000.0, 0.0, 1000.0])
    s = sigmoid(z)
    assert np.all(np.isfinite(s))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


def test_bce_clamps_and_is_nonnegative():
    assert bce_cost([1.0, 0.0], [1, 0]) >= 0
    assert np.isfinite(bce_cost([0.0], [1]))
    np.testing.assert_allclose(bce_cost([0.0], [1]), -np.log(1e-7))
    np.testing.assert_allclose(bce_cost([0.8, 0.3], [1, 0]), -(np.log(0.8) + np.log(0.7)) / 2)
    with pytest.raises(ShapeError):
        bce_cost([0.5, 0.5], [1])


def test_accuracy_threshold_ties_to_one():
    assert binary_accuracy([0.5, 0.49, 0.9], [1, 0, 0]) == pytest.approx(200 / 3)


def test_masks_are_inverted_dropout():
    model = init_model(MlpConfig(3, hidden_layers=2, hidden_units=50, dropout_rate=0.4))
    masks = sample_masks(model, 200, np.random.default_rng(0))
    assert len(masks) == 2
    for m in masks:
        assert set(np.unique(m)) <= {0.0, 1 / 0.6}
        assert abs(np.mean(m == 0) - 0.4) < 0.02
    assert sample_masks(init_model(MlpConfig(3, dropout_rate=0.0)), 5, np.random.default_rng(0)) is None


def test_eval_mode_ignores_dropout():
    model = init_model(MlpConfig(3, dropout_rate=0.5, init_seed=1))
    x = np.random.default_rng(0).normal(size=(10, 3))
    np.testing.assert_array_equal(forward(model, x), forward(model, x))
    noisy = forward(model, x, rng=np.random.default_rng(1))
    assert not np.allclose(noisy, forward(model, x))


def test_gradients_with_dropout_masks():
    rng = np.random.default_rng(3)
    model = init_model(MlpConfig(3, hidden_layers=3, hidden_units=7, dropout_rate=0.3, init_seed=2))
    x = rng.normal(size=(6, 3))
    y = (rng.random(6) < 0.5).astype(float)
    masks = sample_masks(model, 6, rng)
    analytic = backward(model, x, y, masks=masks)
    assert _max_rel(analytic, _numeric(model, x, y, bce_cost, masks)) < 1e-4


@pytest.mark.parametrize("output", ["identity", "sigmoid"])
def test_mse_gradients(output):
    rng = np.random.default_rng(4)
    model = init_model(MlpConfig(2, hidden_layers=2, hidden_units=5, output_activation=output, init_seed=5))
    x = rng.normal(size=(7, 2))
    y = rng.random(7)
    assert _max_rel(backward(model, x, y, loss="mse"), _numeric(model, x, y, mse_cost)) < 1e-4


def test_zero_hidden_layers_is_logistic_regression():
    model = init_model(MlpConfig(2, hidden_layers=0))
    x = np.array([[1.0, 2.0]])
    grads = backward(model, x, np.array([1.0]))
    h = forward(model, x)
    np.testing.assert_allclose(grads[0][:, 0], (h - 1.0) * x[0])


def test_backward_rejects_bad_shapes():
    model = init_model(MlpConfig(3))
    with pytest.raises(ShapeError):
        forward(model, np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        backward(model, np.zeros((4, 3)), np.zeros(3))


def test_adam_step_does_not_mutate_inputs():
    p = [np.ones((2, 2))]
    g = [np.full((2, 2), 0.5)]
    state = AdamState.zeros_like(p)
    new_p, new_state = adam_step(p, g, state, AdamConfig())
    assert np.array_equal(p[0], np.ones((2, 2)))
    assert state.t == 0 and new_state.t == 1
    # first step moves each weight by lr against the gradient sign
    np.testing.assert_allclose(new_p[0], 1 - 0.001, rtol=1e-7)


def test_adam_step_rejects_non_finite():
    p = [np.zeros(3), np.zeros(2)]
    g = [np.zeros(3), np.array([0.0, np.nan])]
    with pytest.raises(NumericError) as info:
        adam_step(p, g, AdamState.zeros_like(p), AdamConfig())
    assert info.value.layer == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.integers(1, 20))
def test_adam_step_size_bounded(grad_values, steps):
    # with constant gradients the bias-corrected step never exceeds the learning rate (plus rounding)
    g = [np.array(grad_values)]
    p = [np.zeros(len(grad_values))]
    state = AdamState.zeros_like(p)
    for _ in range(steps):
        new_p, state = adam_step(p, g, state, AdamConfig())
        assert np.all(np.abs(new_p[0] - p[0]) <= 0.001 * (1 + 1e-9))
        p = new_p


def _blobs(m=200, seed=0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(1.5, 0.5, (m // 2, 2)), rng.normal(-1.5, 0.5, (m // 2, 2))])
    y = np.concatenate([np.ones(m // 2), np.zeros(m // 2)])
    return Dataset(x, y, ("a", "b"))


def test_training_is_deterministic_and_learns():
    ds = _blobs()
    cfg = MlpConfig(2, 2, 8, 0.1, init_seed=1)
    tcfg = TrainConfig(epochs=20, batch_size=32, shuffle_seed=2, dropout_seed=3)
    m1, met1 = train(cfg, tcfg, ds, ds)
    m2, met2 = train(cfg, tcfg, ds, ds)
    assert met1 == met2
    assert all(np.array_equal(p, q) for p, q in zip(m1.params(), m2.params()))
    assert met1.accuracy == 100.0
    assert met1.cost < bce_cost(forward(init_model(cfg), ds.features), ds.labels)


def test_final_partial_batch_is_trained():
    # 5 rows with batch 4: the lone fifth row must still move the weights
    ds = _blobs(10)
    x, y = ds.features[:5], ds.labels[:5]
    model = init_model(MlpConfig(2, 1, 4))
    full = fit_arrays(model, x, y, TrainConfig(epochs=1, batch_size=4))
    four = fit_arrays(model, x[:4], y[:4], TrainConfig(epochs=1, batch_size=4))
    assert not all(np.array_equal(p, q) for p, q in zip(full.params(), four.params()))
    # input model untouched
    assert all(np.array_equal(p, q) for p, q in zip(model.params(), init_model(MlpConfig(2, 1, 4)).params()))


def test_divergence_is_reported():
    x = np.array([[1e200, -1e200]])
    model = init_model(MlpConfig(2, 1, 4, output_activation="identity"))
    with pytest.raises((DivergedError, NumericError)):
        fit_arrays(model, x, np.array([1e300]), TrainConfig(epochs=3, batch_size=1), loss="mse")


def test_evaluate_reports_percent():
    ds = _blobs()
    met = evaluate(init_model(MlpConfig(2, 1, 4)), ds.features, ds.labels)
    assert 0 <= met.accuracy <= 100 and met.cost > 0


def test_xavier_variance():
    w = xavier_init(100, 100, np.random.default_rng(0))
    assert abs(w.var() / 0.01 - 1) < 0.2


def test_first_adam_step_is_minus_lr_sign():
    new, _ = adam_step([np.array([0.0])], [np.array([4.0])], AdamState.zeros_like([np.zeros(1)]), AdamConfig())
    assert new[0][0] == pytest.approx(-0.001, rel=1e-6)
