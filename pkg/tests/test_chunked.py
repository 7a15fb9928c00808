import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reluzono.chunked import chunked_fit, plan_chunks
from reluzono.data import Dataset, gen_synthetic
from reluzono.errors import BoundaryTie, InvalidParameter, NotGeneralPosition
from reluzono.network import empirical_loss


def gaussian(n, d, seed=0):
    gen = np.random.default_rng(seed)
    return Dataset(gen.standard_normal((n, d)), gen.standard_normal(n))


@given(st.integers(0, 10_000), st.integers(1, 14), st.integers(1, 3))
def test_interpolates_every_label(seed, n, d):
    ds = gaussian(n, d, seed)
    net, plan = chunked_fit(ds)
    assert net.m == 2 * math.ceil(n / (d + 1))
    assert plan.n_chunks == math.ceil(n / (d + 1))
    np.testing.assert_allclose(net.outputs(ds.xbar), ds.y, atol=1e-6 * (1 + np.abs(ds.y).max()))


def test_synthetic_task_fit_has_zero_loss():
    ds = gen_synthetic(3, 4, seed=2)
    net, _ = chunked_fit(ds)
    assert empirical_loss(net, ds, "mse") == pytest.approx(0.0, abs=1e-10)


def test_partial_last_chunk():
    ds = gaussian(7, 2, seed=1)
    net, plan = chunked_fit(ds)
    assert [end - start for start, end in plan.chunk_bounds] == [3, 3, 1]
    assert net.m == 6


def test_earlier_chunks_stay_fitted():
    ds = gaussian(10, 1, seed=3)
    seen = []

    def check(k, net):
        done = plan_chunks(ds).order[: plan_chunks(ds).chunk_bounds[k][1]]
        np.testing.assert_allclose(net.outputs(ds.xbar[:, done]), ds.y[done], atol=1e-6)
        seen.append(k)

    chunked_fit(ds, on_chunk=check)
    assert seen == [0, 1, 2, 3, 4]


def test_unit_pairs_are_off_on_earlier_chunks():
    ds = gaussian(9, 2, seed=4)
    net, plan = chunked_fit(ds)
    pre = net.preactivations(ds.xbar)
    for k in range(1, plan.n_chunks):
        start, _ = plan.chunk_bounds[k]
        earlier = plan.order[:start]
        assert np.all(pre[2 * k : 2 * k + 2][:, earlier] <= 0)


def test_plan_sorts_by_last_coordinate():
    ds = gaussian(8, 2, seed=5)
    plan = plan_chunks(ds)
    coord = ds.x[plan.order, -1]
    assert np.all(np.diff(coord) >= 0)
    assert plan.alphas == sorted(plan.alphas)
    assert plan.alphas[0] < coord[0]


def test_needs_a_bias():
    gen = np.random.default_rng(0)
    with pytest.raises(InvalidParameter):
        chunked_fit(Dataset(gen.standard_normal((4, 2)), np.zeros(4), use_bias=False))


def test_tie_across_a_boundary():
    ds = Dataset(np.array([[0.0], [1.0], [1.0], [2.0]]), np.zeros(4))
    with pytest.raises(BoundaryTie):
        chunked_fit(ds)


def test_collinear_chunk():
    ds = Dataset(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([1.0, 0.0, 1.0]))
    with pytest.raises(NotGeneralPosition):
        chunked_fit(ds)
