import numpy as np
import pytest

from snaplab import models
from snaplab import tensor as T
from snaplab.errors import ConfigError, DimensionError
from snaplab.rng import Rng


def test_mlp_s_shapes_and_count():
    m = models.mlp_s(64, 10, Rng(0))
    assert [p.shape for p in m.parameters()] == [(64, 64), (64,), (64, 64), (64,), (64, 10), (10,)]
    assert m.parameter_count == 64 * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10
    assert m.forward(np.zeros((3, 64), dtype=np.float32)).shape == (3, 10)


def test_forward_rejects_wrong_width():
    m = models.mlp_s(64, 10, Rng(0))
    with pytest.raises(DimensionError):
        m.forward(np.zeros((2, 63), dtype=np.float32))


def test_kaiming_uniform_variance_and_zero_bias():
    # Monte Carlo: uniform(-b, b) with b = sqrt(6/fan_in) has variance 2/fan_in
    m = models.init("mlp", [400, 500, 3], Rng(1))
    w, b = m.parameters()[0].value, m.parameters()[1].value
    assert abs(w.var() - 2.0 / 400) / (2.0 / 400) < 0.02
    assert np.abs(w).max() <= np.sqrt(6.0 / 400)
    assert not np.any(b)


def test_init_is_seeded():
    a = models.mlp_s(16, 4, Rng(7)).get_weights()
    b = models.mlp_s(16, 4, Rng(7)).get_weights()
    c = models.mlp_s(16, 4, Rng(8)).get_weights()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])


def test_cnn_forward_shape():
    m = models.init("cnn", (8, 8, 10), Rng(0))
    assert m.input_dim == 64
    assert m.forward(np.zeros((2, 64), dtype=np.float32)).shape == (2, 10)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        models.init("resnet", [4, 2], 0)


def test_weights_round_trip():
    m = models.mlp_s(8, 3, Rng(0))
    other = models.mlp_s(8, 3, Rng(1))
    other.set_weights(m.get_weights())
    x = np.random.default_rng(0).uniform(size=(4, 8)).astype(np.float32)
    assert np.array_equal(m.logits(x), other.logits(x))
    with pytest.raises(DimensionError):
        other.set_weights([np.zeros((2, 2))] * 6)


def test_frozen_blocks_parameter_grads():
    m = models.mlp_s(4, 2, Rng(0))
    x = T.Node(np.ones((1, 4), dtype=np.float32), requires_grad=True)
    with m.frozen():
        T.backward(T.sum(m.forward(x)))
    assert x.grad is not None
    assert all(p.grad is None or not np.any(p.grad) for p in m.parameters())


def test_sgd_step_recurrence():
    theta = T.parameter(np.array([1.0, -2.0]))
    v = [np.zeros(2)]
    lr, mom, wd = 0.1, 0.9, 0.01
    grads = [np.array([0.5, 0.5]), np.array([-1.0, 2.0])]
    th_ref, v_ref = np.array([1.0, -2.0]), np.zeros(2)
    for g in grads:
        models.sgd_step([theta], [g], v, lr, mom, wd)
        v_ref = mom * v_ref + g + wd * th_ref
        th_ref = th_ref - lr * v_ref
        np.testing.assert_allclose(theta.value, th_ref, rtol=1e-12)


def test_sgd_rejects_nonpositive_lr():
    with pytest.raises(ConfigError):
        models.sgd_step([T.parameter(np.zeros(1))], [np.zeros(1)], [np.zeros(1)], 0.0)


def test_step_schedule_decay_epoch():
    assert models.lr_schedule("step", 95, 120, 0.1, milestones=(96,)) == pytest.approx(0.1)
    assert models.lr_schedule("step", 96, 120, 0.1, milestones=(96,)) == pytest.approx(0.01)
    assert models.lr_schedule("step", 0, 10, 0.05) == 0.05


def test_cyclic_schedule_triangle():
    assert models.lr_schedule("cyclic", 0, 10, 0.2) == 0.0
    assert models.lr_schedule("cyclic", 4, 10, 0.2) == pytest.approx(0.2)
    assert models.lr_schedule("cyclic", 2, 10, 0.2) == pytest.approx(0.1)
    assert models.lr_schedule("cyclic", 7, 10, 0.2) == pytest.approx(0.1)
    assert models.lr_schedule("cyclic", 10, 10, 0.2) == 0.0


def test_schedule_errors():
    with pytest.raises(ConfigError):
        models.lr_schedule("cosine", 1, 10, 0.1)
    with pytest.raises(ConfigError):
        models.lr_schedule("step", 11, 10, 0.1)
