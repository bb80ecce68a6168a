import numpy as np
import pytest

from acnn import numeric
from acnn.errors import InvalidArgument, ShapeError

from oracles import central_difference


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        numeric.dense(np.zeros((2, 3)), np.zeros((4, 1)), np.zeros(1))


def test_dense_gradients():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    proj = rng.normal(size=(3, 2))
    _, cache = numeric.dense(x, w, b)
    dx, dw, db = numeric.dense_backward(cache, proj, w)
    assert np.allclose(dx, central_difference(lambda v: (numeric.dense(v, w, b)[0] * proj).sum(), x), atol=1e-8)
    assert np.allclose(dw, central_difference(lambda v: (numeric.dense(x, v, b)[0] * proj).sum(), w), atol=1e-8)
    assert np.allclose(db, proj.sum(0))


def test_batch_norm_training_normalizes():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 3)) * [1, 5, 0.1] + [2, -1, 7]
    stats = numeric.RunningStats.fresh(3, np.float64)
    y, _ = numeric.batch_norm(x, np.ones(3), np.zeros(3), stats, True)
    assert np.allclose(y.mean(0), 0, atol=1e-12)
    assert np.allclose(y.var(0), x.var(0) / (x.var(0) + 1e-5), atol=1e-12)
    assert np.allclose(stats.mean, 0.1 * x.mean(0))
    assert np.allclose(stats.var, 0.9 + 0.1 * x.var(0))


def test_batch_norm_eval_uses_running_stats():
    stats = numeric.RunningStats(np.array([1.0]), np.array([4.0]))
    y, _ = numeric.batch_norm(np.array([[3.0]]), np.array([2.0]), np.array([0.5]), stats, False)
    assert y[0, 0] == pytest.approx(2.0 * 2.0 / np.sqrt(4.0 + 1e-5) + 0.5)


def test_relu_subgradient_zero():
    y, mask = numeric.relu(np.array([-1.0, 0.0, 2.0]))
    assert y.tolist() == [0, 0, 2]
    assert numeric.relu_backward(mask, np.ones(3)).tolist() == [0, 0, 1]


def test_dropout_modes():
    rng = np.random.default_rng(2)
    x = np.ones((1000, 10))
    y, keep = numeric.dropout(x, 0.5, rng, True)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    assert numeric.dropout(x, 0.5, rng, False)[0] is x
    assert np.all(numeric.dropout(x, 1.0, rng, True)[0] == 0)
    with pytest.raises(InvalidArgument):
        numeric.dropout(x, 1.5, rng, True)


def test_softmax_cross_entropy_values():
    loss, grad = numeric.softmax_cross_entropy(np.zeros((2, 4)), np.array([0, 3]))
    assert loss == pytest.approx(np.log(4))
    assert np.allclose(grad.sum(axis=-1), 0)
    big = np.array([[1000.0, 0.0]])
    loss, _ = numeric.softmax_cross_entropy(big, np.array([0]))
    assert np.isfinite(loss) and loss < 1e-12


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(3, 5, 4))
    labels = rng.integers(0, 4, size=(3, 5))
    _, grad = numeric.softmax_cross_entropy(logits, labels)
    fd = central_difference(lambda v: numeric.softmax_cross_entropy(v, labels)[0], logits)
    assert np.allclose(grad, fd, atol=1e-8)


def test_softmax_cross_entropy_shape_check():
    with pytest.raises(ShapeError):
        numeric.softmax_cross_entropy(np.zeros((2, 3)), np.zeros(3, int))


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -0.1, 2.0])}
    st = numeric.AdamState(lr=0.01)
    numeric.adam_step(p, g, st)
    assert np.allclose(p["w"], [1 - 0.01, -2 + 0.01, 3 - 0.01], atol=1e-7)
    assert st.step == 1


def test_adam_minimizes_quadratic():
    p = {"w": np.array([5.0, -3.0])}
    st = numeric.AdamState(lr=0.1)
    for _ in range(500):
        numeric.adam_step(p, {"w": 2 * p["w"]}, st)
    assert np.all(np.abs(p["w"]) < 1e-2)


def test_lr_schedule():
    st = numeric.AdamState(lr=1.0, decay=0.7, decay_every=20)
    assert st.lr_at(0) == 1.0 and st.lr_at(19) == 1.0
    assert st.lr_at(20) == pytest.approx(0.7)
    assert st.lr_at(45) == pytest.approx(0.49)


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        numeric.adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, numeric.AdamState())
