import math

import numpy as np
import pytest

from pdprog.nnet import (
    ACTIVATIONS,
    EARLY_STOP_MIN_DELTA,
    EARLY_STOP_PATIENCE,
    ELU_ALPHA,
    LEAKY_SLOPE,
    NADAM_BETA1,
    NADAM_BETA2,
    NADAM_EPS,
    NadamState,
    NetConfig,
    NetModel,
    TrainingDivergedError,
    backward,
    build_net,
    draw_dropout_masks,
    forward,
    loss_with_masks,
    mse_loss,
    nadam_step,
    predict_net,
    train_net,
)


def _config(**overrides):
    base = dict(
        n_layers=2,
        base_width=8,
        taper=True,
        taper_size=0.5,
        dropout_rate=0.25,
        activation="relu",
        learning_rate=1e-3,
        epochs=5,
        batch_size=4,
        seed=0,
    )
    base.update(overrides)
    return NetConfig(**base)


def test_hidden_widths_taper():
    assert _config(n_layers=3, base_width=64, taper_size=0.5).hidden_widths() == (64, 32, 16)
    assert _config(n_layers=3, base_width=64, taper_size=0.2).hidden_widths() == (64, 13, 3)
    assert _config(n_layers=3, taper=False, base_width=16).hidden_widths() == (16, 16, 16)
    # the floor: widths never taper below one unit
    assert _config(n_layers=5, base_width=2, taper_size=0.2).hidden_widths() == (2, 1, 1, 1, 1)


def test_build_net_shapes_and_glorot_bounds():
    cfg = _config(n_layers=2, base_width=8)
    model = build_net(cfg, n_features=5)
    dims = [5, 8, 4, 1]
    assert [w.shape for w in model.weights] == [(5, 8), (8, 4), (4, 1)]
    assert [b.shape for b in model.biases] == [(8,), (4,), (1,)]
    for w, fan_in, fan_out in zip(model.weights, dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        assert np.all(np.abs(w) <= limit)
    assert all(np.all(b == 0.0) for b in model.biases)
    assert model.prelu_slopes is None


def test_build_net_is_deterministic():
    cfg = _config(activation="prelu")
    a = build_net(cfg, 7)
    b = build_net(cfg, 7)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    np.testing.assert_array_equal(a.prelu_slopes, np.full(2, 0.25))


def test_unknown_activation_rejected():
    with pytest.raises(ValueError, match="unknown activation"):
        build_net(_config(activation="swish"), 3)


def test_activation_values():
    z = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    checks = {
        "relu": np.maximum(z, 0.0),
        "elu": np.where(z > 0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0))),
        "leaky_relu": np.where(z > 0, z, LEAKY_SLOPE * z),
        "tanh": np.tanh(z),
        "sigmoid": 1.0 / (1.0 + np.exp(-z)),
    }
    for kind, want in checks.items():
        cfg = _config(n_layers=1, base_width=5, activation=kind, dropout_rate=0.0)
        model = build_net(cfg, 5)
        model.weights[0] = np.eye(5)
        model.weights[1] = np.ones((5, 1))
        got = forward(model, z)
        assert got == pytest.approx(float(want.sum()), rel=1e-12)


def test_prelu_uses_learned_slope():
    cfg = _config(n_layers=1, base_width=1, activation="prelu", dropout_rate=0.0)
    model = build_net(cfg, 1)
    model.weights[0] = np.array([[1.0]])
    model.weights[1] = np.array([[1.0]])
    model.prelu_slopes[0] = 0.3
    assert forward(model, np.array([-2.0])) == pytest.approx(-0.6)
    assert forward(model, np.array([2.0])) == pytest.approx(2.0)


def test_mse_loss_definition():
    rng = np.random.default_rng(0)
    a = rng.normal(size=17)
    b = rng.normal(size=17)
    want = sum((x - y) ** 2 for x, y in zip(a, b)) / 17
    assert mse_loss(a, b) == pytest.approx(want, rel=1e-14)


def _fd_check(model, X, y, masks, rel_tol=1e-4):
    """Central finite differences on every parameter vs backward()."""
    grads, _ = backward(model, X, y, masks)
    params = model.params()
    analytic = grads.as_list()
    eps = 1e-6
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_p = p.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            keep = flat_p[i]
            flat_p[i] = keep + eps
            hi = loss_with_masks(model, X, y, masks)
            flat_p[i] = keep - eps
            lo = loss_with_masks(model, X, y, masks)
            flat_p[i] = keep
            fd = (hi - lo) / (2 * eps)
            denom = max(abs(fd), abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(fd - flat_g[i]) / denom)
    assert worst <= rel_tol, f"max relative gradient error {worst:.3e}"


def _kink_safe(model, X, masks, threshold=1e-3):
    """True when no hidden pre-activation sits within `threshold` of zero.

    relu/leaky/prelu have a kink at z=0 where finite differences straddle
    two linear pieces; nets sampled onto the kink are re-drawn, not tested.
    """
    from pdprog.nnet import _forward_batch

    _, caches, _ = _forward_batch(model, np.asarray(X, dtype=np.float64), masks)
    return all(np.min(np.abs(z)) >= threshold for _, z, _, _ in caches)


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_backward_matches_finite_differences(activation):
    rng = np.random.default_rng(hash(activation) % (2**32))
    for attempt in range(20):
        cfg = _config(
            n_layers=int(rng.integers(1, 4)),
            base_width=int(rng.integers(2, 9)),
            taper=bool(rng.random() < 0.5),
            dropout_rate=float(rng.uniform(0.0, 0.5)),
            activation=activation,
            seed=int(rng.integers(0, 2**31)),
        )
        n, d = 6, 4
        model = build_net(cfg, d, rng=rng)
        X = rng.normal(size=(n, d))
        y = rng.normal(size=n)
        masks = draw_dropout_masks(model, n, rng)
        if activation in ("relu", "leaky_relu", "prelu") and not _kink_safe(
            model, X, masks
        ):
            continue
        _fd_check(model, X, y, masks)
        return
    pytest.fail("no kink-safe configuration found in 20 attempts")


def test_backward_without_dropout_matches_fd():
    rng = np.random.default_rng(42)
    cfg = _config(activation="tanh", dropout_rate=0.0, n_layers=3, base_width=5)
    model = build_net(cfg, 3, rng=rng)
    X = rng.normal(size=(8, 3))
    y = rng.normal(size=8)
    _fd_check(model, X, y, None)


def test_nadam_single_step_oracle():
    p = np.array([1.0])
    g = np.array([0.5])
    state = NadamState.for_params([p])
    nadam_step([p], [g], state, lr=0.01)
    b1, b2 = NADAM_BETA1, NADAM_BETA2
    m = (1 - b1) * 0.5
    v = (1 - b2) * 0.25
    m_hat = m / (1 - b1**2)
    update = 0.01 * (b1 * m_hat + (1 - b1) * 0.5 / (1 - b1)) / (
        math.sqrt(v / (1 - b2)) + NADAM_EPS
    )
    assert p[0] == pytest.approx(1.0 - update, abs=1e-15)
    assert state.t == 1


def test_nadam_updates_in_place():
    p = np.array([1.0, 2.0])
    state = NadamState.for_params([p])
    out, _ = nadam_step([p], [np.array([0.1, -0.2])], state, lr=0.1)
    assert out[0] is p
    assert not np.array_equal(p, [1.0, 2.0])


def _reference_train(X, y, cfg):
    """train_net restated with the plain reference ops, same draw order."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = build_net(cfg, X.shape[1], rng=rng)
    y_center = float(y.mean())
    y_sd = float(y.std())
    y_scale = y_sd if y_sd > 0.0 else 1.0
    ys = (y - y_center) / y_scale
    model.y_center = y_center
    model.y_scale = y_scale
    widths = cfg.hidden_widths()
    rate = cfg.dropout_rate
    params = model.params()
    state = NadamState.for_params(params)
    trace = []
    best = math.inf
    best_epoch = -1
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        Xs = X[order]
        yss = ys[order]
        epoch_masks = [rng.random((n, w)) >= rate for w in widths]
        for start in range(0, n, cfg.batch_size):
            end = min(start + cfg.batch_size, n)
            bm = [mk[start:end] for mk in epoch_masks]
            grads, _ = backward(model, Xs[start:end], yss[start:end], bm)
            nadam_step(params, grads.as_list(), state, cfg.learning_rate)
        loss = loss_with_masks(model, X, ys, None)
        trace.append(loss)
        if loss < best - EARLY_STOP_MIN_DELTA:
            best = loss
            best_epoch = epoch
        elif epoch - best_epoch >= EARLY_STOP_PATIENCE:
            break
    model.loss_trace = tuple(trace)
    return model


@pytest.mark.parametrize(
    "activation,dropout,n_layers",
    [("relu", 0.3, 2), ("prelu", 0.2, 2), ("tanh", 0.0, 1), ("elu", 0.4, 3)],
)
def test_trainer_matches_reference_implementation(activation, dropout, n_layers):
    # the compiled training path must agree with the plain numpy restatement
    # to float rounding; a drift here means the two implementations diverged
    rng = np.random.default_rng(0)
    X = rng.normal(size=(24, 5))
    y = rng.normal(size=24) + X[:, 0]
    cfg = _config(
        activation=activation,
        dropout_rate=dropout,
        n_layers=n_layers,
        base_width=6,
        epochs=6,
        batch_size=8,
        seed=12,
    )
    fast = train_net(X, y, cfg)
    ref = _reference_train(X, y, cfg)
    assert len(fast.loss_trace) == len(ref.loss_trace)
    np.testing.assert_allclose(fast.loss_trace, ref.loss_trace, rtol=1e-9, atol=1e-12)
    for wf, wr in zip(fast.weights, ref.weights):
        np.testing.assert_allclose(wf, wr, rtol=1e-9, atol=1e-12)
    for bf, br in zip(fast.biases, ref.biases):
        np.testing.assert_allclose(bf, br, rtol=1e-9, atol=1e-12)
    if fast.prelu_slopes is not None:
        np.testing.assert_allclose(
            fast.prelu_slopes, ref.prelu_slopes, rtol=1e-9, atol=1e-12
        )
    np.testing.assert_allclose(
        predict_net(fast, X), predict_net(ref, X), rtol=1e-9, atol=1e-10
    )


def test_training_is_deterministic():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 4))
    y = rng.normal(size=20)
    cfg = _config(epochs=4, seed=9)
    a = train_net(X, y, cfg)
    b = train_net(X, y, cfg)
    assert a.loss_trace == b.loss_trace
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)


def test_prediction_maps_back_to_target_units():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(30, 3))
    y = rng.normal(size=30) * 4.0 + 100.0  # far from z-scored range
    cfg = _config(epochs=3, dropout_rate=0.1)
    model = train_net(X, y, cfg)
    assert model.y_center == pytest.approx(y.mean())
    assert model.y_scale == pytest.approx(y.std())
    preds = predict_net(model, X)
    # an untrained-ish net predicts near the center in target units
    assert np.all(np.abs(preds - 100.0) < 50.0)


def test_early_stopping_on_plateau():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    # zero learning rate: loss can never improve, patience alone decides
    cfg = _config(learning_rate=0.0, epochs=500, dropout_rate=0.0)
    model = train_net(X, y, cfg)
    assert len(model.loss_trace) == EARLY_STOP_PATIENCE + 1
    assert len(set(model.loss_trace)) == 1


def test_divergence_raises():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(16, 3)) * 10
    y = rng.normal(size=16)
    cfg = _config(learning_rate=1e12, epochs=50, activation="relu", dropout_rate=0.0)
    with pytest.raises(TrainingDivergedError):
        train_net(X, y, cfg)


def test_forward_eval_is_deterministic_train_needs_rng():
    model = build_net(_config(), 4)
    x = np.zeros(4)
    assert forward(model, x) == forward(model, x)
    with pytest.raises(ValueError, match="rng"):
        forward(model, x, train_mode=True)


def test_json_round_trip_preserves_predictions():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(10, 4))
    y = rng.normal(size=10)
    model = train_net(X, y, _config(activation="prelu", epochs=2))
    back = NetModel.from_json_dict(model.to_json_dict())
    np.testing.assert_array_equal(predict_net(back, X), predict_net(model, X))


def test_zero_dropout_mask_is_identity():
    rng = np.random.default_rng(6)
    cfg = _config(dropout_rate=0.0)
    model = build_net(cfg, 4, rng=rng)
    X = rng.normal(size=(7, 4))
    y = rng.normal(size=7)
    masks = draw_dropout_masks(model, 7, rng)
    assert all(np.all(m) for m in masks)
    g_masked, loss_masked = backward(model, X, y, masks)
    g_plain, loss_plain = backward(model, X, y, None)
    assert loss_masked == loss_plain
    for a, b in zip(g_masked.as_list(), g_plain.as_list()):
        np.testing.assert_array_equal(a, b)
