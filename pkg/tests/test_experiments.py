import csv
import io

import numpy as np
import pytest

from reluzono.config import settings
from reluzono.data import Dataset, SetCoverInstance, gen_collinear_dataset, gen_synthetic
from reluzono.errors import InvalidParameter
from reluzono.experiments import (
    BENCH_COLUMNS,
    Method,
    MethodParams,
    hardness_table,
    run_bench,
    run_method,
    stability_trials,
    write_bench_csv,
)
from reluzono.network import empirical_loss


def two_singletons():
    # the only cover takes both subsets
    return SetCoverInstance(2, (frozenset({1}), frozenset({2})))


def binary_task(seed=0):
    gen = np.random.default_rng(seed)
    x = gen.standard_normal((12, 2))
    return Dataset(x, (x[:, 0] * x[:, 1] > 0).astype(float))


@pytest.mark.parametrize("method", list(Method))
def test_every_method_runs(method):
    ds = gen_synthetic(2, 1, seed=0)
    params = MethodParams(max_steps=20, steps=200, lr=0.01)
    outcome = run_method(method, ds, 2, "mse", None, seed=0, params=params)
    assert np.isfinite(outcome.loss)
    assert outcome.loss == pytest.approx(empirical_loss(outcome.net, ds, "mse"))
    if method in (Method.CHUNKED, Method.GD):
        assert outcome.qp_solves == 0 and outcome.trace is None
    else:
        assert outcome.qp_solves > 0 and outcome.pattern_json is not None


def test_chunked_ignores_m():
    ds = gen_synthetic(2, 2, seed=1)
    outcome = run_method("chunked", ds, 1, "mse", None, seed=0)
    assert outcome.net.m == 4
    assert outcome.loss == pytest.approx(0.0, abs=1e-10)


def test_accuracy_only_for_binary_labels():
    ds = binary_task()
    outcome = run_method("gls", ds, 2, "logistic", None, seed=0, params=MethodParams(max_steps=5))
    assert 0.0 <= outcome.accuracy(ds) <= 1.0
    regression = gen_synthetic(2, 1, seed=0)
    assert run_method("chunked", regression, 1, "mse", None, 0).accuracy(regression) is None


# stability #########################


def test_tiny_perturbations_keep_generic_chambers():
    gen = np.random.default_rng(3)
    ds = Dataset(gen.standard_normal((6, 2)), gen.standard_normal(6))
    report = stability_trials(ds, None, trials=3, seed=0, compare_loss="mse")
    assert report.fraction_identical == 1.0
    assert report.chambers == 32
    assert len(report.perturbed_losses) == 3
    assert report.max_loss_change is not None and report.max_loss_change < 1e-2


def test_degenerate_data_changes_under_perturbation():
    report = stability_trials(gen_collinear_dataset(0.0), 0.01, trials=3)
    assert report.identical == 0
    assert report.to_json()["fraction_identical"] == 0.0


def test_degenerate_data_has_no_certified_radius():
    with pytest.raises(InvalidParameter):
        stability_trials(gen_collinear_dataset(0.0), None, trials=2)


# hardness ##########################


@pytest.mark.parametrize("variant", ["degenerate", "general_position"])
def test_loss_threshold_matches_cover_existence(variant):
    rows = hardness_table(two_singletons(), variant)
    assert [row.t for row in rows] == [1, 2]
    assert [row.cover_exists for row in rows] == [False, True]
    assert all(row.agrees for row in rows)


@pytest.mark.parametrize(
    "universe, subsets, variant, smallest",
    [
        (2, [{1}, {1}, {1, 2}], "degenerate", 1),
        (2, [{1}, {1}, {1, 2}], "general_position", 1),
        (3, [{1, 2}, {1, 2}, {1, 3}], "degenerate", 2),
        (3, [{1, 2}, {1, 2}, {1, 3}], "general_position", 2),
        (3, [{3}, {1, 3}, {2}], "general_position", 2),
    ],
)
def test_repeated_rows_keep_the_equivalence(universe, subsets, variant, smallest):
    instance = SetCoverInstance(universe, tuple(frozenset(s) for s in subsets))
    rows = hardness_table(instance, variant)
    assert [row.cover_exists for row in rows] == [t >= smallest for t in (1, 2, 3)]
    assert all(row.agrees for row in rows)


def test_adversarial_perturbation_breaks_the_equivalence():
    rows = hardness_table(two_singletons(), "adversarial_perturbed")
    assert rows[0].loss_within and not rows[0].cover_exists
    assert not rows[0].agrees


# bench #############################


def test_bench_on_synthetic_data():
    rows = run_bench(["gls", "random-vertex"], [2], [0, 1], "mse", d=2, m_gen=1, params=MethodParams(max_steps=10))
    assert [(row.method, row.m, row.d, row.m_gen_or_N) for row in rows] == [("gls", 2, 2, 1), ("random-vertex", 2, 2, 1)]
    assert all(row.median_acc is None for row in rows)


def test_bench_on_a_fixed_dataset_reports_accuracy():
    ds = binary_task(1)
    seen = []
    rows = run_bench(["chunked"], [1], [0, 1], "mse", dataset=ds, on_row=seen.append)
    assert rows == seen
    assert rows[0].m_gen_or_N == ds.n
    assert rows[0].median_acc is not None and 0.0 <= rows[0].median_acc <= 1.0
    assert rows[0].std_loss == pytest.approx(0.0)


def test_bench_process_pool_keeps_grid_order():
    args = (["gls", "mgls", "random-vertex"], [1, 2], [0, 1], "mse")
    kwargs = dict(d=2, m_gen=1, params=MethodParams(max_steps=10))
    sequential = run_bench(*args, **kwargs)
    seen = []
    with settings.override(workers=2):
        pooled = run_bench(*args, **kwargs, on_row=seen.append)
    assert pooled == sequential
    assert seen == pooled


def test_bench_needs_data():
    with pytest.raises(InvalidParameter):
        run_bench(["gls"], [2], [0], "mse", d=2)


def test_bench_csv():
    rows = run_bench(["chunked"], [1], [0], "mse", dataset=binary_task(2))
    out = io.StringIO()
    write_bench_csv(rows, out)
    parsed = list(csv.DictReader(io.StringIO(out.getvalue())))
    assert list(parsed[0]) == BENCH_COLUMNS
    assert parsed[0]["method"] == "chunked"
