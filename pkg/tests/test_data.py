import numpy as np
import pytest
from hypothesis import given, strategies as st

from reluzono.config import settings
from reluzono.data import (
    Dataset,
    PerturbationSpec,
    SetCoverInstance,
    SetCoverVariant,
    adversarial_weights,
    check_general_position,
    cover_weights,
    find_cover,
    gen_collinear_dataset,
    gen_flat_dataset,
    gen_set_cover_dataset,
    gen_synthetic,
    gen_synthetic_task,
    is_general_position,
    min_cover_size,
    perturb,
    read_dataset,
    read_set_cover,
    stability_radius,
    write_dataset,
    write_set_cover,
)
from reluzono.errors import ComplexityRefused, InvalidDeltas, InvalidParameter, SchemaMismatch
from reluzono.network import ShallowReluNet, empirical_loss


def gaussian(n, d, seed=0, use_bias=True):
    gen = np.random.default_rng(seed)
    return Dataset(gen.standard_normal((n, d)), gen.standard_normal(n), use_bias)


def small_instance():
    # universe {1, 2}; the third subset alone is a cover
    return SetCoverInstance(2, (frozenset({1}), frozenset({2}), frozenset({1, 2})))


# dataset ###########################


def test_dataset_rejects_mismatched_labels():
    with pytest.raises(InvalidParameter):
        Dataset(np.zeros((3, 2)), np.zeros(2))


def test_dataset_rejects_non_finite():
    with pytest.raises(InvalidParameter):
        Dataset(np.array([[1.0], [np.nan]]), np.zeros(2))


def test_dataset_arrays_are_frozen():
    ds = gaussian(4, 2)
    with pytest.raises(ValueError):
        ds.x[0, 0] = 1.0
    with pytest.raises(ValueError):
        ds.xbar[0, 0] = 1.0


def test_xbar_appends_ones_with_bias():
    ds = gaussian(5, 3)
    assert ds.p == 4
    assert ds.xbar.shape == (4, 5)
    np.testing.assert_array_equal(ds.xbar[-1], np.ones(5))
    np.testing.assert_array_equal(ds.xbar[:3], ds.x.T)


def test_xbar_is_raw_without_bias():
    ds = gaussian(5, 3, use_bias=False)
    assert ds.p == 3
    np.testing.assert_array_equal(ds.xbar, ds.x.T)


def test_dataset_file_round_trip(tmp_path):
    ds = gaussian(6, 2)
    path = tmp_path / "ds.json"
    write_dataset(ds, path)
    assert read_dataset(path).same_as(ds)


def test_dataset_rejects_wrong_schema():
    doc = gaussian(3, 1).to_json()
    doc["schema"] = "something-else/2"
    with pytest.raises(SchemaMismatch):
        Dataset.from_json(doc)


def test_dataset_rejects_inconsistent_declared_sizes():
    doc = gaussian(3, 1).to_json()
    doc["n"] = 4
    with pytest.raises(SchemaMismatch):
        Dataset.from_json(doc)


def test_subset_keeps_bias_flag():
    ds = gaussian(6, 2, use_bias=False)
    sub = ds.subset([0, 2])
    assert sub.n == 2 and not sub.use_bias
    np.testing.assert_array_equal(sub.x, ds.x[[0, 2]])


# general position ##################


def test_gaussian_data_is_in_general_position():
    report = check_general_position(gaussian(8, 2))
    assert report.general
    assert not report.probabilistic
    assert report.checked == 56  # C(8, 3)
    assert report.min_singular > 0


def test_collinear_examples_are_not_in_general_position():
    assert not is_general_position(gen_collinear_dataset(0.0))


def test_lifted_collinear_examples_still_degenerate():
    # four of the five points stay on the line
    assert not is_general_position(gen_collinear_dataset(0.5))


def test_flat_examples_are_not_in_general_position():
    # four vectors in a plane of R^3: any three are dependent
    assert not is_general_position(gen_flat_dataset(0.0))


def test_exhaustive_check_refuses_above_cap():
    with settings.override(subset_cap=10):
        with pytest.raises(ComplexityRefused):
            check_general_position(gaussian(8, 2))


def test_sampled_check_is_flagged_probabilistic():
    with settings.override(subset_cap=10):
        report = check_general_position(gaussian(8, 2), exhaustive=False, samples=50)
    assert report.probabilistic
    assert report.general
    assert report.checked == 50


def test_stability_radius_zero_for_degenerate_data():
    assert stability_radius(gen_collinear_dataset(0.0)) == 0.0


def test_stability_radius_positive_for_generic_data():
    assert stability_radius(gaussian(6, 2)) > 0


# perturbation ######################


def test_perturbation_needs_positive_epsilon():
    with pytest.raises(InvalidParameter):
        PerturbationSpec(0.0)


@given(st.floats(1e-6, 1.0), st.integers(0, 2**32))
def test_perturbation_stays_in_ball(epsilon, seed):
    ds = gaussian(7, 3)
    moved = perturb(ds, PerturbationSpec(epsilon, seed))
    shift = np.linalg.norm(moved.x - ds.x, axis=1)
    assert np.all(shift <= epsilon * (1 + 1e-12))
    np.testing.assert_array_equal(moved.y, ds.y)
    assert moved.use_bias == ds.use_bias


def test_small_perturbations_keep_general_position():
    for seed in range(20):
        ds = gaussian(8, 2, seed=seed)
        moved = perturb(ds, PerturbationSpec(stability_radius(ds), seed))
        assert is_general_position(moved), seed


def test_perturbation_is_seeded():
    ds = gaussian(5, 2)
    a = perturb(ds, PerturbationSpec(0.1, 3))
    b = perturb(ds, PerturbationSpec(0.1, 3))
    c = perturb(ds, PerturbationSpec(0.1, 4))
    assert a.same_as(b)
    assert not a.same_as(c)


# synthetic data ####################


def test_synthetic_size_and_labels():
    ds, target = gen_synthetic_task(3, 2, seed=5)
    assert (ds.n, ds.d) == (8, 3)
    assert target.m == 2
    np.testing.assert_allclose(ds.y, target.outputs(ds.xbar))


def test_synthetic_is_deterministic():
    assert gen_synthetic(2, 3, 11).same_as(gen_synthetic(2, 3, 11))
    assert not gen_synthetic(2, 3, 11).same_as(gen_synthetic(2, 3, 12))


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(InvalidParameter):
        gen_synthetic(0, 2, 0)


def test_small_examples_shapes():
    d1 = gen_collinear_dataset(0.0)
    assert (d1.n, d1.d, d1.use_bias) == (5, 2, True)
    d2 = gen_flat_dataset(0.1)
    assert (d2.n, d2.d, d2.use_bias) == (4, 3, False)
    assert d2.x[1, 2] == 0.1
    with pytest.raises(InvalidParameter):
        gen_collinear_dataset(-1.0)


# set cover #########################


def test_set_cover_sizes():
    inst = small_instance()
    assert inst.d == 5
    assert inst.n == 7
    assert inst.gamma == pytest.approx(0.01 / 9)
    ds = gen_set_cover_dataset(inst)
    assert (ds.n, ds.d, ds.use_bias) == (7, 5, False)
    np.testing.assert_allclose(ds.y, [inst.gamma, 1.0, inst.gamma, inst.gamma, inst.gamma, 0.0, 0.0])


def test_element_examples_mark_their_subsets():
    ds = gen_set_cover_dataset(small_instance())
    # element 1 is in subsets 0 and 2, element 2 in subsets 1 and 2
    np.testing.assert_array_equal(ds.x[5], [0, 1, 1, 0, 1])
    np.testing.assert_array_equal(ds.x[6], [0, 1, 0, 1, 1])


def test_min_cover_and_find_cover():
    inst = small_instance()
    assert min_cover_size(inst) == 1
    assert find_cover(inst, 1) == (2,)
    assert find_cover(inst, 0) is None
    singletons = SetCoverInstance(3, (frozenset({1}), frozenset({2}), frozenset({3}), frozenset({1, 2})))
    assert min_cover_size(singletons) == 2
    assert find_cover(singletons, 1) is None
    assert find_cover(singletons, 2) == (2, 3)


@pytest.mark.parametrize("cover", [(2,), (0, 1), (0, 1, 2)])
def test_cover_weights_reach_the_cover_loss(cover):
    inst = small_instance()
    ds = gen_set_cover_dataset(inst)
    net = ShallowReluNet(cover_weights(inst, cover), [1.0], 0.0, use_bias=False)
    assert empirical_loss(net, ds, "mse") == pytest.approx(len(cover) * inst.gamma**2 / ds.n)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cover_weights_on_noisy_variant(seed):
    inst = small_instance()
    ds = gen_set_cover_dataset(inst, SetCoverVariant.GENERAL_POSITION, seed=seed)
    net = ShallowReluNet(cover_weights(inst, (0, 1), "general_position"), [1.0], 0.0, use_bias=False)
    assert empirical_loss(net, ds, "mse") == pytest.approx(2 * inst.gamma**2 / ds.n)


def test_noisy_variant_is_in_general_position():
    for seed in range(50):
        ds = gen_set_cover_dataset(small_instance(), "general_position", seed=seed)
        assert is_general_position(ds), seed


def test_adversarial_variant_breaks_the_threshold():
    inst = small_instance()
    ds = gen_set_cover_dataset(inst, SetCoverVariant.ADVERSARIAL, epsilon=1e-3)
    net = ShallowReluNet(adversarial_weights(inst, 1e-3), [1.0], 0.0, use_bias=False)
    assert empirical_loss(net, ds, "mse") == pytest.approx(inst.gamma**2 / ds.n)


@pytest.mark.parametrize("delta1, delta2", [(0.05, 0.01), (0.0, 0.05), (0.01, 0.5)])
def test_bad_deltas(delta1, delta2):
    with pytest.raises(InvalidDeltas):
        gen_set_cover_dataset(small_instance(), "general_position", delta1, delta2)


def test_set_cover_refuses_huge_reductions():
    inst = SetCoverInstance(1, tuple(frozenset({1}) for _ in range(63)))
    with pytest.raises(ComplexityRefused):
        gen_set_cover_dataset(inst)


def test_set_cover_validation():
    with pytest.raises(InvalidParameter):
        SetCoverInstance(2, (frozenset({3}),))
    with pytest.raises(InvalidParameter):
        SetCoverInstance(2, ())


@pytest.mark.parametrize("subsets", [[{1}, {2}, {1, 2}], [{1}, {3}, {1, 3}], [{2}, {3}, {2, 3}]])
def test_set_cover_rejects_uncovered_elements(subsets):
    with pytest.raises(InvalidParameter, match="in no subset"):
        SetCoverInstance(3, tuple(frozenset(s) for s in subsets))


def test_set_cover_file_round_trip(tmp_path):
    inst = small_instance()
    path = tmp_path / "inst.json"
    write_set_cover(inst, path)
    assert read_set_cover(path) == inst
