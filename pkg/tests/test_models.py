import numpy as np
import pytest

from oracles import cnn_oracle, fd_gradients, interp_oracle, knn_oracle
from rsslab.errors import DimensionMismatch, Diverged, LengthMismatch, ShapeError, ValidationError
from rsslab.models import (
    FingerprintDb,
    TrainConfig,
    cnn_backward,
    cnn_forward,
    evaluate,
    init_cnn,
    knn_interp_predict,
    knn_predict,
    loss_and_grads,
    train_cnn,
)
from rsslab.models.cnn import RECEPTIVE_FIELD, _forward, cnn_feature_maps, zeros_like


def random_db(seed, ints=False):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 80))
    a = int(rng.integers(1, 5))
    rss = rng.integers(-80, -40, size=(m, a)).astype(float) if ints else rng.uniform(-90, -30, size=(m, a))
    return rss, rng.uniform(0, 6, size=(m, 2)), rng


def test_knn_examples():
    db = FingerprintDb([[-40, -50], [-70, -40]], [(0, 0), (4, 6)], k=1, m_interp=1)
    assert tuple(knn_predict(db, [-41, -51])) == (0, 0)
    assert tuple(knn_predict(db, [-70, -40])) == (4, 6)
    db2 = FingerprintDb([[-40, -50], [-70, -40]], [(0, 0), (4, 6)], k=2, m_interp=2)
    assert tuple(knn_interp_predict(db2, [-55, -45])) == pytest.approx((2, 3))
    assert tuple(knn_interp_predict(db2, [-70, -40])) == (4, 6)


@pytest.mark.parametrize("seed", range(10))
def test_knn_and_interp_match_linear_scan(seed):
    # half the databases are integer valued so distance ties are common
    rss, pos, rng = random_db(seed, ints=seed % 2 == 1)
    k = int(rng.integers(1, min(7, len(rss)) + 1))
    m = int(rng.integers(1, k + 1))
    db = FingerprintDb(rss, pos, k=k, m_interp=m)
    q = rss[rng.integers(0, len(rss), 200)]
    if seed % 2:
        q = q + rng.integers(-3, 4, size=q.shape)
    else:
        q[20:] += rng.normal(0, 5, size=q[20:].shape)  # first 20 are exact matches
    got_knn, got_int = knn_predict(db, q), knn_interp_predict(db, q)
    for i in range(len(q)):
        np.testing.assert_allclose(got_knn[i], knn_oracle(rss, pos, k, q[i]), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(got_int[i], interp_oracle(rss, pos, m, q[i], db.eps_d), rtol=1e-12, atol=1e-12)


def test_interp_m1_equals_knn_k1():
    rss, pos, rng = random_db(3)
    q = rng.uniform(-90, -30, size=(200, rss.shape[1]))
    np.testing.assert_array_equal(knn_interp_predict(FingerprintDb(rss, pos, k=1, m_interp=1), q),
                                  knn_predict(FingerprintDb(rss, pos, k=1, m_interp=1), q))


def test_knn_errors():
    with pytest.raises(ValidationError):
        FingerprintDb([[-40.0]], [(0, 0)], k=2, m_interp=1)
    with pytest.raises(ValidationError):
        FingerprintDb([[-40.0], [-50.0]], [(0, 0), (1, 1)], k=1, m_interp=2)
    with pytest.raises(DimensionMismatch):
        knn_predict(FingerprintDb([[-40.0, -50.0]], [(0, 0)], k=1, m_interp=1), [-40.0])


def test_param_count_and_receptive_field():
    assert init_cnn(3).num_parameters == 3018
    assert RECEPTIVE_FIELD == 37


@pytest.mark.parametrize("seed,length", [(11, 50), (0, 37), (5, 64)])
def test_forward_matches_direct_summation(seed, length):
    m = init_cnn(3, seed)
    X = np.random.default_rng(seed).normal(size=(4, 3, length))
    np.testing.assert_allclose(cnn_forward(m, X), cnn_oracle(m.weights, m.biases, X), rtol=1e-12, atol=1e-14)


def test_single_precision_close():
    m = init_cnn(3, 2)
    X = np.random.default_rng(2).normal(size=(8, 3, 50))
    np.testing.assert_allclose(cnn_forward(m, X, single_precision=True), cnn_forward(m, X), atol=1e-5)


def test_zero_weights_and_bias_passthrough():
    m = zeros_like(init_cnn(3))
    X = np.random.default_rng(0).normal(size=(5, 3, 50))
    assert np.all(cnn_forward(m, X) == 0)
    m.biases[-1][:] = (1.25, -0.5)
    np.testing.assert_array_equal(cnn_forward(m, X), np.tile([1.25, -0.5], (5, 1)))


def test_translation_consistency():
    m = init_cnn(3, 4)
    X = np.random.default_rng(4).normal(size=(2, 3, 80))
    s = 7
    a = cnn_feature_maps(m, X[:, :, s:s + 60])
    b = cnn_feature_maps(m, X[:, :, :70])
    n = min(a.shape[2], b.shape[2] - s)
    np.testing.assert_allclose(a[:, :, :n], b[:, :, s:s + n], rtol=1e-12, atol=1e-12)


def test_shape_errors():
    m = init_cnn(3)
    with pytest.raises(ShapeError):
        cnn_forward(m, np.zeros((1, 3, RECEPTIVE_FIELD - 1)))
    with pytest.raises(ShapeError):
        cnn_forward(m, np.zeros((1, 4, 50)))
    with pytest.raises(ShapeError):
        cnn_forward(m, np.zeros((3, 50)))
    with pytest.raises(ShapeError):
        loss_and_grads(m, np.zeros((2, 3, 50)), np.zeros((3, 2)))


def rel_err(a, n):
    den = np.maximum(np.abs(a), np.abs(n))
    return np.where(den > 0, np.abs(a - n) / np.where(den > 0, den, 1.0), 0.0)


@pytest.mark.parametrize("seed", [0, 6])
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = init_cnn(3, seed)
    X, Y = rng.normal(size=(2, 3, 50)), rng.uniform(size=(2, 2))
    _, g = loss_and_grads(m, X, Y)
    fd = fd_gradients(m.weights, m.biases, X, Y)
    assert fd.size == 3018
    assert rel_err(g.to_vector(), fd).max() < 1e-4


def test_zero_error_batch_has_zero_gradient():
    m = init_cnn(3, 1)
    X = np.random.default_rng(1).normal(size=(3, 3, 50))
    _, g = loss_and_grads(m, X, cnn_forward(m, X))
    assert np.all(g.to_vector() == 0)


def test_gradient_linear_in_loss_scale():
    m = init_cnn(3, 2)
    X = np.random.default_rng(2).normal(size=(3, 3, 50))
    _, cache = _forward(m, X)
    d = np.random.default_rng(3).normal(size=(3, 2))
    np.testing.assert_allclose(cnn_backward(m, cache, 3.0 * d).to_vector(),
                               3.0 * cnn_backward(m, cache, d).to_vector(), rtol=1e-12, atol=1e-15)


def linear_task(n, seed):
    # one AP whose RSS is linear in x; label is (x / 5, const) in [0, 1] units of a 5 m room
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 5, n)
    X = ((x - 2.5) / 1.5)[:, None, None] + rng.normal(0, 0.01, size=(n, 1, 50))
    return X, np.column_stack([x / 5, np.full(n, 0.5)])


def test_linear_task_converges():
    X, Y = linear_task(256, 0)
    res = train_cnn(X, Y, TrainConfig(epochs=200, seed=0))
    Xt, Yt = linear_task(200, 1)
    rmse_m = 5.0 * np.sqrt(np.mean(np.sum((cnn_forward(res.model, Xt) - Yt) ** 2, axis=1)))
    assert rmse_m < 0.05
    assert res.history[-1] <= res.history[0]
    assert len(res.history) == 201


def test_training_deterministic_and_lr_zero():
    X, Y = linear_task(64, 2)
    a = train_cnn(X, Y, TrainConfig(epochs=3, seed=5)).model
    b = train_cnn(X, Y, TrainConfig(epochs=3, seed=5)).model
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    same = train_cnn(X, Y, TrainConfig(epochs=3, learning_rate=0.0, seed=5)).model
    np.testing.assert_array_equal(same.to_vector(), init_cnn(1, 5).to_vector())
    sgd = train_cnn(X, Y, TrainConfig(epochs=2, learning_rate=0.0, optimizer="sgd", seed=5)).model
    np.testing.assert_array_equal(sgd.to_vector(), init_cnn(1, 5).to_vector())


def test_diverged():
    X, Y = linear_task(32, 3)
    with pytest.raises(Diverged):
        train_cnn(X, Y * 1e200, TrainConfig(epochs=2, optimizer="sgd", learning_rate=1e10))


@pytest.mark.parametrize("kw", [dict(learning_rate=-1), dict(batch_size=0), dict(optimizer="rmsprop"),
                                dict(lr_schedule="step"), dict(init="xavier")])
def test_train_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_evaluate_examples():
    r = evaluate([[1.0, 2.0]], [[1.0, 2.0]])
    assert (r.mean_l2_m, r.std_l2_m) == (0.0, 0.0)
    r = evaluate([[3.0, 4.0]], [[0.0, 0.0]])
    assert (r.mean_l2_m, r.std_l2_m, r.per_axis_mae_m) == (5.0, 0.0, (3.0, 4.0))
    rng = np.random.default_rng(0)
    p, t = rng.normal(size=(100, 2)), rng.normal(size=(100, 2))
    e = [float(np.hypot(*(a - b))) for a, b in zip(p, t)]
    r = evaluate(p, t)
    assert r.mean_l2_m == pytest.approx(sum(e) / 100, rel=1e-12)
    assert r.std_l2_m == pytest.approx(np.sqrt(sum((v - sum(e) / 100) ** 2 for v in e) / 100), rel=1e-12)
    with pytest.raises(LengthMismatch):
        evaluate([[0, 0]], [[0, 0], [1, 1]])
    with pytest.raises(LengthMismatch):
        evaluate(np.zeros((0, 2)), np.zeros((0, 2)))
