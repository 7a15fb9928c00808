import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reluzono.config import settings
from reluzono.data import Dataset
from reluzono.errors import DivergenceDetected, InvalidParameter, LabelsNotBinary, SchemaMismatch
from reluzono.losses import LossKind, get_loss
from reluzono.network import (
    ShallowReluNet,
    accuracy,
    empirical_loss,
    forward,
    gradient_descent,
    init_network,
    loss_gradients,
    pm_half,
    predict,
    read_checkpoint,
    write_checkpoint,
)


def gaussian(n, d, seed=0, binary=False):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((n, d))
    y = (gen.random(n) > 0.5).astype(float) if binary else gen.standard_normal(n)
    return Dataset(x, y)


def random_net(m, p, seed=0):
    gen = np.random.default_rng(seed)
    return ShallowReluNet(gen.standard_normal((m, p)), gen.standard_normal(m), float(gen.standard_normal()))


# losses ############################


def test_unknown_loss():
    with pytest.raises(InvalidParameter):
        get_loss("hinge")


@given(st.floats(-50, 50), st.sampled_from([0.0, 1.0]))
def test_logistic_derivative_matches_finite_difference(pred, y):
    loss = get_loss(LossKind.LOGISTIC)
    h = 1e-6
    p = np.array([pred])
    fd = (loss.value(p + h, y) - loss.value(p - h, y)) / (2 * h)
    assert loss.derivative(p, y)[0] == pytest.approx(fd[0], abs=1e-6)


def test_logistic_is_stable_for_huge_logits():
    loss = get_loss(LossKind.LOGISTIC)
    values = loss.value(np.array([1e4, -1e4]), np.array([1.0, 0.0]))
    assert np.all(np.isfinite(values))
    np.testing.assert_allclose(values, 0.0, atol=1e-12)
    assert loss.value(np.array([-1e4]), np.array([1.0]))[0] == pytest.approx(1e4)


def test_l1_has_no_second_derivative():
    with pytest.raises(NotImplementedError):
        get_loss("l1").second_derivative(np.zeros(1), np.zeros(1))


# the network #######################


def test_forward_by_hand():
    net = ShallowReluNet([[1.0, -1.0], [-2.0, 0.5]], [2.0, -1.0], 0.5)
    # x = 3: preactivations 2 and -5.5
    assert forward(net, [3.0]) == pytest.approx(4.5)


def test_zero_preactivation_is_off():
    net = ShallowReluNet([[1.0, -1.0]], [1.0], 0.0)
    assert forward(net, [1.0]) == 0.0


def test_network_validation():
    with pytest.raises(InvalidParameter):
        ShallowReluNet(np.ones((2, 3)), np.ones(3))
    with pytest.raises(InvalidParameter):
        ShallowReluNet(np.ones((1, 3)), [np.inf])


def test_network_dataset_mismatch():
    with pytest.raises(InvalidParameter):
        predict(random_net(2, 4), gaussian(5, 2))


def test_checkpoint_file(tmp_path):
    net = random_net(3, 4)
    path = tmp_path / "net.json"
    write_checkpoint(net, path)
    back = read_checkpoint(path)
    np.testing.assert_array_equal(back.W, net.W)
    np.testing.assert_array_equal(back.v, net.v)
    assert back.c == net.c and back.use_bias == net.use_bias


def test_checkpoint_with_wrong_sizes():
    doc = random_net(3, 4).to_json()
    doc["m"] = 2
    with pytest.raises(SchemaMismatch):
        ShallowReluNet.from_json(doc)


def test_pm_half():
    np.testing.assert_array_equal(pm_half(4), [1, 1, -1, -1])
    np.testing.assert_array_equal(pm_half(3), [1, 1, -1])
    np.testing.assert_array_equal(pm_half(1), [1])


def test_accuracy():
    ds = Dataset(np.array([[1.0], [-1.0], [2.0]]), np.array([1.0, 0.0, 0.0]))
    net = ShallowReluNet([[1.0, 0.0]], [1.0], 0.0)
    assert accuracy(net, ds) == pytest.approx(2 / 3)
    with pytest.raises(LabelsNotBinary):
        accuracy(net, ds.with_y([0.5, 0.0, 1.0]))


# gradients #########################


@pytest.mark.parametrize("kind", [LossKind.MSE, LossKind.LOGISTIC])
def test_gradients_match_finite_differences(kind):
    ds = gaussian(12, 3, seed=1, binary=kind is LossKind.LOGISTIC)
    net = random_net(4, 4, seed=2)
    grads = loss_gradients(net, ds, kind)
    h = 1e-6

    def perturbed(**changes):
        return empirical_loss(net.with_params(**changes), ds, kind)

    for j in range(net.m):
        for k in range(net.p):
            step = np.zeros_like(net.W)
            step[j, k] = h
            fd = (perturbed(W=net.W + step) - perturbed(W=net.W - step)) / (2 * h)
            assert grads.W[j, k] == pytest.approx(fd, rel=1e-4, abs=1e-7)
        step_v = np.zeros_like(net.v)
        step_v[j] = h
        fd = (perturbed(v=net.v + step_v) - perturbed(v=net.v - step_v)) / (2 * h)
        assert grads.v[j] == pytest.approx(fd, rel=1e-4, abs=1e-7)
    fd = (perturbed(c=net.c + h) - perturbed(c=net.c - h)) / (2 * h)
    assert grads.c == pytest.approx(fd, rel=1e-4, abs=1e-7)
    assert grads.loss == pytest.approx(empirical_loss(net, ds, kind))


# gradient descent ##################


def test_init_network_zero_bias_column_and_seeded():
    ds = gaussian(6, 2)
    a = init_network(ds, 4, seed=3)
    b = init_network(ds, 4, seed=3)
    np.testing.assert_array_equal(a.W, b.W)
    np.testing.assert_array_equal(a.W[:, -1], 0.0)
    assert a.c == 0.0
    fixed = init_network(ds, 4, seed=3, v_fixed=pm_half(4))
    np.testing.assert_array_equal(fixed.v, pm_half(4))


def test_gradient_descent_reduces_the_loss():
    ds = gaussian(20, 2, seed=4)
    start = empirical_loss(init_network(ds, 8, seed=0), ds, "mse")
    net = gradient_descent(ds, 8, "mse", lr=0.05, steps=500, seed=0)
    assert empirical_loss(net, ds, "mse") < start


def test_one_gradient_step_follows_loss_gradients():
    ds = gaussian(10, 2, seed=9)
    start = init_network(ds, 3, seed=2)
    grads = loss_gradients(start, ds, "mse")
    net = gradient_descent(ds, 3, "mse", lr=0.1, steps=1, seed=2)
    np.testing.assert_allclose(net.W, start.W - 0.1 * grads.W)
    np.testing.assert_allclose(net.v, start.v - 0.1 * grads.v)
    assert net.c == pytest.approx(start.c - 0.1 * grads.c)


def test_gradient_descent_with_fixed_output_weights():
    ds = gaussian(10, 2, seed=5)
    net = gradient_descent(ds, 4, "mse", lr=0.01, steps=50, seed=0, train_v=False)
    np.testing.assert_array_equal(net.v, pm_half(4))


def test_gradient_descent_log(tmp_path):
    ds = gaussian(10, 2, seed=6)
    path = tmp_path / "gd.jsonl"
    seen = []
    with settings.override(log_every=10):
        gradient_descent(ds, 3, "mse", lr=0.01, steps=25, seed=0, log_path=path, on_log=lambda s, v: seen.append(s))
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert [entry["step"] for entry in lines] == [0, 10, 20, 25]
    assert seen == [0, 10, 20, 25]


def test_gradient_descent_divergence():
    ds = gaussian(10, 2, seed=7)
    with settings.override(divergence_loss=1e6):
        with pytest.raises(DivergenceDetected):
            gradient_descent(ds.with_y(ds.y * 100.0), 4, "mse", lr=10.0, steps=1000, seed=0)


def test_gradient_descent_is_deterministic():
    ds = gaussian(10, 2, seed=8)
    a = gradient_descent(ds, 3, "l1", lr=0.01, steps=30, seed=4)
    b = gradient_descent(ds, 3, "l1", lr=0.01, steps=30, seed=4)
    np.testing.assert_array_equal(a.W, b.W)
    np.testing.assert_array_equal(a.v, b.v)
