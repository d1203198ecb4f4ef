import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbfi.learner import (
    MlpModel,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    forward,
    gradients,
    init_mlp,
    loss,
    one_hot,
    predict_topk,
    train,
)


def test_init_shapes():
    m = init_mlp(100, 100, 20)
    assert m.w1.shape == (100, 100) and m.b1.shape == (100,)
    assert m.w2.shape == (20, 100) and m.b2.shape == (20,)
    assert np.all(np.isfinite(m.w1)) and np.all(np.isfinite(m.w2))


def test_init_deterministic_and_seeded():
    a, b, c = init_mlp(10, 7, 3, seed=4), init_mlp(10, 7, 3, seed=4), init_mlp(10, 7, 3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert not np.array_equal(a.w1, c.w1)


def test_init_glorot_statistics():
    m = init_mlp(200, 300, 20, seed=1)
    limit = math.sqrt(6 / 500)
    assert np.abs(m.w1).max() <= limit
    n = m.w1.size
    # uniform(-a, a) has variance a^2 / 3
    assert abs(m.w1.mean()) <= 3 * math.sqrt(limit ** 2 / 3 / n)


def test_init_errors():
    with pytest.raises(ValueError):
        init_mlp(0, 3, 2)
    with pytest.raises(ValueError):
        init_mlp(3, 3, 2, lambda_reg=-1)


def _zero_model(d, h, k, lam=0.0):
    return MlpModel(np.zeros((h, d)), np.zeros(h), np.zeros((k, h)), np.zeros(k), lam)


def test_zero_weights_uniform_output(rng):
    r = forward(_zero_model(5, 4, 6), rng.normal(size=(3, 5)))
    assert np.allclose(r, 1 / 6, atol=1e-15)


def test_hand_computed_forward():
    m = MlpModel(
        w1=np.array([[0.5, -1.0], [2.0, 0.25]]), b1=np.array([0.1, -0.3]),
        w2=np.array([[1.0, -2.0], [-0.5, 0.75]]), b2=np.array([0.2, 0.0]),
    )
    x = np.array([1.0, 2.0])
    # hidden pre-activations: 0.5 - 2 + 0.1 = -1.4 and 2 + 0.5 - 0.3 = 2.2
    s1 = 1 / (1 + math.exp(1.4))
    s2 = 1 / (1 + math.exp(-2.2))
    z1 = s1 - 2 * s2 + 0.2
    z2 = -0.5 * s1 + 0.75 * s2
    e1, e2 = math.exp(z1), math.exp(z2)
    expected = np.array([e1 / (e1 + e2), e2 / (e1 + e2)])
    assert np.allclose(forward(m, x), expected, rtol=0, atol=1e-12)


def test_forward_dimension_check():
    with pytest.raises(ValueError):
        forward(init_mlp(3, 2, 2), np.zeros(4))


def test_softmax_normalized_over_many_inputs():
    rng = np.random.default_rng(0)
    m = init_mlp(12, 9, 20, seed=3)
    m.w2 *= 5
    r = forward(m, rng.normal(scale=10.0, size=(10_000, 12)))
    assert np.allclose(r.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((r > 0) & (r < 1))


def test_one_hot_rows():
    y = one_hot([2, 0, 1], 4)
    assert np.array_equal(y.sum(axis=1), np.ones(3))
    assert np.array_equal(y.argmax(axis=1), [2, 0, 1])


def test_loss_perfect_prediction_is_zero():
    m = _zero_model(3, 2, 2)
    m.b2[:] = [1000.0, 0.0]  # softmax output is exactly (1, 0)
    assert loss(m, np.zeros((4, 3)), one_hot([0, 0, 0, 0], 2)) == 0.0


def test_loss_two_ln_two():
    assert loss(_zero_model(3, 2, 2), np.zeros((1, 3)), [[1.0, 0.0]]) == pytest.approx(1.386294, abs=1e-6)
    assert loss(_zero_model(3, 2, 2), np.zeros((1, 3)), [[1.0, 0.0]]) == pytest.approx(2 * math.log(2), rel=1e-12)


def test_loss_categorical_variant():
    m = _zero_model(3, 2, 4)
    m.loss_kind = "categorical"
    assert loss(m, np.zeros((2, 3)), one_hot([1, 3], 4)) == pytest.approx(math.log(4), rel=1e-12)


def test_loss_regularization_term(rng):
    m = _zero_model(3, 2, 2, lam=0.3)
    m.b2[:] = [1000.0, 0.0]
    m.w1[:] = rng.normal(size=m.w1.shape)
    # w2 = 0 so w1 does not change the output; only the penalty remains
    assert loss(m, rng.normal(size=(5, 3)), one_hot([0] * 5, 2)) == pytest.approx(0.3 * np.sum(m.w1 ** 2), rel=1e-12)


def test_regularization_gradient_is_two_lambda_w(rng):
    m = init_mlp(4, 3, 5, lambda_reg=0.0, seed=2)
    X, Y = rng.normal(size=(6, 4)), one_hot(rng.integers(0, 5, 6), 5)
    base = gradients(m, X, Y)
    m.lambda_reg = 0.7
    reg = gradients(m, X, Y)
    assert np.allclose(reg[0] - base[0], 1.4 * m.w1, rtol=0, atol=1e-14)
    assert np.allclose(reg[2] - base[2], 1.4 * m.w2, rtol=0, atol=1e-14)
    assert np.array_equal(reg[1], base[1]) and np.array_equal(reg[3], base[3])


def _fd_max_rel_error(m, X, Y, step=1e-5):
    grads = gradients(m, X, Y)
    num, den = 0.0, 0.0
    for p, g in zip(m.params(), grads):
        for i in np.ndindex(p.shape):
            orig = p[i]
            p[i] = orig + step
            up = loss(m, X, Y)
            p[i] = orig - step
            down = loss(m, X, Y)
            p[i] = orig
            fd = (up - down) / (2 * step)
            num = max(num, abs(fd - g[i]))
            den = max(den, abs(fd), abs(g[i]))
    return num / den


@pytest.mark.parametrize("kind", ["binary", "categorical"])
def test_gradient_matches_finite_differences(kind):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        d, h, k, n = rng.integers(2, 6), rng.integers(2, 6), rng.integers(2, 6), rng.integers(1, 8)
        m = init_mlp(d, h, k, lambda_reg=float(rng.uniform(0, 0.1)), seed=seed, loss_kind=kind)
        m.b1 = rng.normal(size=h)
        m.b2 = rng.normal(size=k)
        X, Y = rng.normal(size=(n, d)), one_hot(rng.integers(0, k, n), k)
        worst = max(worst, _fd_max_rel_error(m, X, Y))
    assert worst < 1e-5


def test_gradient_check_at_perfect_fit():
    rng = np.random.default_rng(7)
    m = init_mlp(3, 4, 3, lambda_reg=0.0, seed=7)
    X = rng.normal(size=(5, 3))
    Y = one_hot(np.argmax(forward(m, X), axis=1), 3)
    assert _fd_max_rel_error(m, X, Y) < 1e-5


def test_predict_topk_cases(rng):
    m = init_mlp(6, 5, 7, seed=8)
    x = rng.normal(size=(40, 6))
    full = predict_topk(m, x, 7)
    assert all(sorted(row) == list(range(7)) for row in full.tolist())
    assert np.array_equal(predict_topk(m, x, 1)[:, 0], np.argmax(forward(m, x), axis=1))
    r = forward(m, x)
    for row, probs in zip(predict_topk(m, x, 3), r):
        ref = sorted(range(7), key=lambda j: (-probs[j], j))[:3]
        assert row.tolist() == ref
    with pytest.raises(ValueError):
        predict_topk(m, x, 8)


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    X += np.where(y[:, None] == 1, 0.5, -0.5)  # widen the margin
    return X, y


def test_train_separable_reaches_full_accuracy():
    X, y = _separable()
    hyper = TrainConfig(lr=0.5, batch_size=16, max_epochs=200, patience=200, lambda_reg=0.0, hidden_dim=4)
    m, rep = train(X, y, X, y, 2, hyper)
    assert accuracy(m, X, y) == 1.0
    assert 1 <= rep.epochs <= 200
    assert all(np.isfinite(rep.train_loss)) and all(np.isfinite(rep.val_loss))


def test_train_bit_identical_reruns():
    X, y = _separable(300, seed=1)
    hyper = TrainConfig(max_epochs=30, hidden_dim=5, seed=11)
    m1, r1 = train(X[:200], y[:200], X[200:], y[200:], 2, hyper)
    m2, r2 = train(X[:200], y[:200], X[200:], y[200:], 2, hyper)
    assert r1 == r2
    assert all(np.array_equal(a, b) for a, b in zip(m1.params(), m2.params()))


def test_train_returns_best_validation_epoch():
    X, y = _separable(300, seed=2)
    m, rep = train(X[:200], y[:200], X[200:], y[200:], 2, TrainConfig(max_epochs=40, patience=3, hidden_dim=3))
    assert rep.val_loss[rep.best_epoch - 1] == min(rep.val_loss)
    assert loss(m, X[200:], one_hot(y[200:], 2)) == pytest.approx(min(rep.val_loss), rel=1e-12)
    assert rep.stopping_epoch == rep.epochs
    assert [r["epoch"] for r in rep.rows()] == list(range(1, rep.epochs + 1))


def test_regularization_shrinks_weights():
    X, y = _separable(200, seed=3)
    norms = []
    for lam in (0.0, 1e-3, 1.0, 1e3):
        # one step size for every run, small enough to be stable at lambda = 1e3
        hyper = TrainConfig(lr=2.5e-4, batch_size=32, max_epochs=100, patience=100, lambda_reg=lam, hidden_dim=4)
        m, _ = train(X, y, X, y, 2, hyper)
        norms.append(np.sum(m.w1 ** 2) + np.sum(m.w2 ** 2))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_train_divergence_raises():
    X, y = _separable(100)
    with pytest.raises(TrainingDiverged):
        train(X, y, X, y, 2, TrainConfig(lr=1e308, max_epochs=5, lambda_reg=1.0, hidden_dim=3))


def test_empty_batch_rejected():
    m = init_mlp(2, 2, 2)
    with pytest.raises(ValueError):
        loss(m, np.zeros((0, 2)), np.zeros((0, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_loss_finite_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = init_mlp(4, 3, 5, seed=seed % 1000)
    m.w2 *= rng.uniform(0, 100)
    X, Y = rng.normal(scale=50, size=(8, 4)), one_hot(rng.integers(0, 5, 8), 5)
    v = loss(m, X, Y)
    assert np.isfinite(v) and v >= 0
