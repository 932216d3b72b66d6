import math

import numpy as np
import pytest

from spkcount.crnn import (
    CrnnConfig,
    NumericalError,
    TrainConfig,
    build,
    conv_stack,
    forward,
    loss_and_grads,
    make_windows,
    param_shapes,
    predict_counts,
    train,
)

FULL = CrnnConfig()


def tiny(kernel_size=3, **kw):
    base = dict(kernel_size=kernel_size, conv_channels=(3, 2, 3, 2), n_freq=17, lstm_hidden=5, n_frames=10)
    base.update(kw)
    return CrnnConfig(**base)


def hand_count(k, widths, f_out, hidden, n_in=4):
    total, c_in = 0, n_in
    for c in widths:
        total += k * k * c_in * c + c
        c_in = c
    d = f_out * widths[-1]
    total += d * 4 * hidden + hidden * 4 * hidden + 4 * hidden
    return total + hidden * 6 + 6


def test_lstm_input_width():
    assert FULL.pooled_freq == 33
    assert FULL.lstm_input == 2112
    assert param_shapes(FULL)["lstm0.wx"] == (2112, 160)


def test_parameter_count_k3():
    params = build(FULL, seed=0)
    assert params.n_parameters == 476342
    assert params.n_parameters == hand_count(3, (64, 32, 128, 64), 33, 40)


@pytest.mark.parametrize("k", [5, 7])
def test_parameter_count_other_kernels(k):
    assert build(CrnnConfig(kernel_size=k)).n_parameters == hand_count(k, (64, 32, 128, 64), 33, 40)


def test_config_validation():
    with pytest.raises(ValueError):
        CrnnConfig(kernel_size=4)
    with pytest.raises(ValueError):
        CrnnConfig(n_classes=5)
    assert CrnnConfig.from_dict(FULL.to_dict()) == FULL


def test_build_is_deterministic():
    a, b = build(FULL, seed=3), build(FULL, seed=3)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a.tensors)
    c = build(FULL, seed=4)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a.tensors)


def test_rows_are_distributions():
    x = np.abs(np.random.default_rng(0).standard_normal((12, 513, 4))) * 5
    probs = forward(build(FULL, seed=1), x)
    assert probs.shape == (12, 6)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_forward_rejects_wrong_shape():
    with pytest.raises(ValueError):
        forward(build(tiny()), np.zeros((10, 16, 4)))


@pytest.mark.parametrize("k", [3, 5, 7])
def test_look_ahead_bound(k):
    params = build(tiny(k), seed=k, dtype=np.float64)
    rng = np.random.default_rng(k)
    x = rng.standard_normal((20, 17, 4))
    y = forward(params, x)
    reach = 2 * (k - 1)
    for t in (0, 3, 7):
        xp = x.copy()
        xp[t + reach + 1 :] += rng.standard_normal(xp[t + reach + 1 :].shape)
        assert np.array_equal(forward(params, xp)[: t + 1], y[: t + 1])
        xq = x.copy()
        xq[t + reach] += 1.0
        assert not np.array_equal(forward(params, xq)[t], y[t])


def test_zero_input_steady_state_before_lstm():
    k = 3
    params = build(tiny(k), seed=0, dtype=np.float64)
    params.tensors["conv0.b"][:] = 0.5
    seq = conv_stack(params, np.zeros((16, 17, 4)))
    head = 4 * (k // 2)
    clean = seq[head : 16 - head]
    assert np.array_equal(clean, np.broadcast_to(clean[0], clean.shape))
    assert not np.array_equal(seq[0], clean[0])
    # constant input to the recurrent layer drives the output to a fixed distribution
    long = forward(params, np.zeros((200, 17, 4)))
    np.testing.assert_allclose(long[150:190], np.broadcast_to(long[150], (40, 6)), atol=1e-9)


def test_predict_counts_tie_rule_and_oracle():
    assert predict_counts(np.full((3, 6), 1 / 6)).tolist() == [0, 0, 0]
    assert predict_counts(np.eye(6)).tolist() == list(range(6))
    assert predict_counts(np.array([[0.1, 0.4, 0.4, 0.1, 0, 0]])).tolist() == [1]
    rng = np.random.default_rng(0)
    probs = rng.integers(0, 4, (200, 6)).astype(float)
    oracle = [min(i for i in range(6) if row[i] == row.max()) for row in probs]
    assert predict_counts(probs).tolist() == oracle


def test_whole_model_gradient_matches_finite_differences():
    params = build(tiny(3, conv_channels=(2, 2), pool_sizes=(2,), pool_after=(1,), n_freq=7), seed=2,
                   dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 6, 7, 4))
    y = rng.integers(0, 6, (2, 6))
    _, _, grads = loss_and_grads(params, x, y)
    eps = 1e-6
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _, _ = loss_and_grads(params, x, y)
            flat[i] = orig - eps
            lm, _, _ = loss_and_grads(params, x, y)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            ana = grads[name].reshape(-1)[i]
            assert abs(num - ana) <= 1e-5 * max(abs(num), abs(ana), 1e-4), name


def test_untrained_loss_near_ln6():
    rng = np.random.default_rng(0)
    x = np.abs(rng.standard_normal((4, 30, 513, 4))).astype(np.float32)
    y = rng.integers(0, 6, (4, 30))
    loss, _, _ = loss_and_grads(build(FULL, seed=0), x, y)
    assert abs(loss - math.log(6)) < 0.2


def test_one_step_changes_every_tensor():
    params = build(tiny(), seed=0)
    before = params.copy()
    rng = np.random.default_rng(0)
    data = (np.abs(rng.standard_normal((4, 10, 17, 4))).astype(np.float32), rng.integers(0, 6, (4, 10)))
    train(params, data, TrainConfig(epochs=1, batch_size=4))
    for k in params.tensors:
        assert np.any(params[k] != before[k]), k


def test_training_is_deterministic():
    rng = np.random.default_rng(1)
    data = (np.abs(rng.standard_normal((6, 10, 17, 4))).astype(np.float32), rng.integers(0, 6, (6, 10)))
    runs = [train(build(tiny(), seed=5), data, TrainConfig(epochs=2, batch_size=4, seed=9)) for _ in range(2)]
    for k in runs[0].params.tensors:
        assert runs[0].params[k].tobytes() == runs[1].params[k].tobytes()
    assert runs[0].history == runs[1].history
    assert [row[0] for row in runs[0].history] == [1, 2]


def test_train_rejects_empty_and_wrong_length():
    with pytest.raises(ValueError):
        train(build(tiny()), [], TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train(build(tiny()), (np.zeros((2, 9, 17, 4)), np.zeros((2, 9), int)), TrainConfig(epochs=1))


def test_nan_loss_aborts():
    params = build(tiny())
    params.tensors["dense.b"][0] = np.nan
    with pytest.raises(NumericalError):
        train(params, (np.zeros((2, 10, 17, 4)), np.zeros((2, 10), int)), TrainConfig(epochs=1))


def test_overfit_eight_sequences():
    cfg = CrnnConfig(kernel_size=3, conv_channels=(8, 8, 16, 8), n_freq=33, lstm_hidden=40, n_frames=10)
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 6, (8, 10))
    x = np.abs(rng.standard_normal((8, 10, 33, 4))).astype(np.float32)
    x[..., 0] += counts[:, :, None]  # make the count visible so the net can fit it
    state = train(build(cfg, seed=0), (x, counts), TrainConfig(epochs=200, batch_size=8, lr=3e-3))
    assert state.history[-1][2] >= 0.95


def test_make_windows():
    feats = np.arange(25)[:, None, None] * np.ones((1, 3, 4))
    wins = make_windows(feats, np.arange(25), 10)
    assert len(wins) == 2 and wins[1][1].tolist() == list(range(10, 20))
    assert len(make_windows(feats, np.arange(25), 10, stride=5)) == 4
