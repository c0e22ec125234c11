import math

import numpy as np
import pytest

from bench import SpinGlassConfig, generate_spin_glass
from concentration import BoundParams, corollary2_bound
from conftest import binary_chain, random_model
from errors import CorruptTableError, InvalidArgumentError, UnsupportedModelError
from gumbel import RngStream
from model import DiscreteModel, config_index, iter_configurations, log_partition_exact, potential
from perturbation import (
    PerturbationKind,
    PerturbationTable,
    deviation_experiment,
    draw_perturbation,
    estimate_expected_vj,
    gradient_check,
    perturbed_max_full,
    perturbed_value,
    reference_expectation,
    replicate_sample_means,
    v_j,
)
from solvers import map_bruteforce


def test_table_sizes(rng):
    model = DiscreteModel(domains=[(0, 1), (0, 1)])
    assert draw_perturbation(model, PerturbationKind.LOWDIM, rng).m == 4
    assert draw_perturbation(model, PerturbationKind.FULL, rng).m == 4
    assert draw_perturbation(random_model(0, (2, 3, 4)), "lowdim", rng).m == 9


def test_grid_lowdim_table(rng):
    model = generate_spin_glass(SpinGlassConfig(rows=10, cols=10, seed=1))
    table = draw_perturbation(model, PerturbationKind.LOWDIM, rng)
    assert table.m == 200
    assert -0.3 <= table.values.mean() <= 0.3


def test_perturbed_value_with_zero_perturbation():
    model = DiscreteModel(domains=[(0, 1), (0, 1)])
    table = PerturbationTable(PerturbationKind.LOWDIM, model.sizes, np.zeros(4))
    assert perturbed_value(model, table, (1, 0)) == 0.0


def test_perturbed_value_adds_coordinate_draws():
    model = DiscreteModel(domains=[(0, 1), (0, 1)], offset=1.0)
    table = PerturbationTable(PerturbationKind.LOWDIM, model.sizes, [0.2, 0.0, 0.0, -0.1])
    assert perturbed_value(model, table, (0, 1)) == pytest.approx(1.1)


def test_perturbed_value_matches_recomputation(three_var_model, rng):
    full = draw_perturbation(three_var_model, PerturbationKind.FULL, rng)
    low = draw_perturbation(three_var_model, PerturbationKind.LOWDIM, rng)
    for x in iter_configurations(three_var_model):
        theta = potential(three_var_model, x)
        assert perturbed_value(three_var_model, full, x) == pytest.approx(
            theta + full.values[config_index(three_var_model, x)])
        expected = theta + sum(low.coordinate(i)[v] for i, v in enumerate(x))
        assert perturbed_value(three_var_model, low, x) == pytest.approx(expected)


def test_corrupt_tables():
    model = DiscreteModel(domains=[(0, 1), (0, 1, 2)])
    with pytest.raises(CorruptTableError):
        PerturbationTable(PerturbationKind.LOWDIM, model.sizes, np.zeros(4))
    other = PerturbationTable(PerturbationKind.LOWDIM, (2, 2), np.zeros(4))
    with pytest.raises(CorruptTableError):
        perturbed_value(model, other, (0, 0))
    full = PerturbationTable(PerturbationKind.FULL, model.sizes, np.zeros(6))
    with pytest.raises(CorruptTableError):
        full.coordinate(0)


def test_v1_without_perturbation_is_map(three_var_model):
    assert v_j(three_var_model, (), None).value == pytest.approx(map_bruteforce(three_var_model).value)


def test_v_past_last_coordinate_is_potential(three_var_model, rng):
    table = draw_perturbation(three_var_model, PerturbationKind.LOWDIM, rng)
    result = v_j(three_var_model, (1, 2, 0), table)
    assert result.value == pytest.approx(potential(three_var_model, (1, 2, 0)))
    assert result.argmax == (1, 2, 0)


def test_v2_matches_suffix_enumeration(three_var_model, rng):
    table = draw_perturbation(three_var_model, PerturbationKind.LOWDIM, rng)
    prefix = (1,)
    best = max(
        potential(three_var_model, prefix + (a, b)) + table.coordinate(1)[a] + table.coordinate(2)[b]
        for a in range(3) for b in range(2)
    )
    result = v_j(three_var_model, prefix, table)
    assert result.value == pytest.approx(best)
    assert result.argmax[0] == 1
    # a table over the suffix coordinates only gives the same value
    assert v_j(three_var_model, prefix, table.restrict(1)).value == pytest.approx(best)


def test_v_j_rejects_full_tables(three_var_model, rng):
    with pytest.raises(UnsupportedModelError):
        v_j(three_var_model, (), draw_perturbation(three_var_model, PerturbationKind.FULL, rng))


def test_v1_is_monotone_in_entries_and_scores(three_var_model, rng):
    table = draw_perturbation(three_var_model, PerturbationKind.LOWDIM, rng)
    base = v_j(three_var_model, (), table).value
    for i, k in enumerate(three_var_model.sizes):
        for label in range(k):
            assert v_j(three_var_model, (), table.bumped(i, label, 0.1)).value >= base
            assert v_j(three_var_model, (), table.bumped(i, label, -0.1)).value <= base
    shifts = [np.zeros(k) for k in three_var_model.sizes]
    shifts[1][2] = 0.3
    assert v_j(three_var_model.fold_unary(shifts), (), table).value >= base


def test_single_sample_estimate_is_the_draw(three_var_model):
    report = estimate_expected_vj(three_var_model, (), 1, 1, 0.05, RngStream(1), keep_samples=True)
    assert report.sample_mean == report.raw_samples[0]
    assert report.solver_calls == 1


def test_estimate_radius(three_var_model, rng):
    report = estimate_expected_vj(three_var_model, (0,), 2, 40, 0.1, rng)
    assert report.radius == pytest.approx(corollary2_bound(BoundParams(a2=2, b=1.0, M=40, delta=0.1)))
    assert report.to_dict()["prefix"] == [0]
    with pytest.raises(InvalidArgumentError):
        estimate_expected_vj(three_var_model, (0,), 1, 40, 0.1, rng)


def test_single_variable_expectation_is_log_partition():
    model = DiscreteModel(domains=[(0, 1)])
    report = estimate_expected_vj(model, (), 1, 10 ** 5, 0.05, RngStream(8))
    assert report.sample_mean == pytest.approx(math.log(2), abs=0.02)


def test_estimate_agrees_with_high_sample_reference(three_var_model):
    report = estimate_expected_vj(three_var_model, (), 1, 10 ** 5, 0.05, RngStream(12))
    reference = reference_expectation(three_var_model, 10 ** 6, RngStream(13))
    spread = 3 * math.hypot(report.standard_error, reference.standard_error)
    assert abs(report.sample_mean - reference.mean) <= spread


def test_lowdim_expectation_upper_bounds_log_partition(grid_2x2):
    reference = reference_expectation(grid_2x2, 20000, RngStream(21))
    assert reference.mean >= log_partition_exact(grid_2x2) - 3 * reference.standard_error


def test_full_perturbation_max_estimates_log_partition(grid_2x2):
    mean, se = perturbed_max_full(grid_2x2, 10 ** 5, RngStream(4))
    assert mean == pytest.approx(log_partition_exact(grid_2x2), abs=0.03)
    assert se < 0.01


@pytest.mark.parametrize("seed, sizes", [(30, (2,)), (31, (2, 2)), (32, (2, 2, 2)), (33, (2, 2, 2, 2)),
                                         (34, (2, 2, 2, 2))])
def test_full_perturbation_max_on_random_models(seed, sizes):
    model = random_model(seed, sizes)
    mean, _ = perturbed_max_full(model, 10 ** 5, RngStream(seed))
    assert mean == pytest.approx(log_partition_exact(model), abs=0.03)


def test_deviation_experiment_centering(three_var_model):
    reference, deviations = deviation_experiment(three_var_model, [1, 10], 200, RngStream(5), reference_M=20000)
    assert len(deviations[1]) == 200
    ones = np.array([d.value for d in deviations[1]])
    tens = np.array([d.value for d in deviations[10]])
    assert abs(ones.mean()) <= 3 * (math.pi / math.sqrt(6)) * math.sqrt(3) / math.sqrt(200)
    assert tens.var() < ones.var()
    assert all(d.reference_mean == reference.mean for d in deviations[10])


def test_deviation_tail_frequencies_decay(three_var_model):
    _, deviations = deviation_experiment(three_var_model, [1], 400, RngStream(6), reference_M=20000)
    values = np.abs([d.value for d in deviations[1]])
    sd = values.std()
    counts = [np.sum(values >= r) for r in np.linspace(sd, 4 * sd, 7)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]


def test_replicates_do_not_depend_on_worker_count(three_var_model):
    serial = replicate_sample_means(three_var_model, [1, 5], 6, RngStream(77), workers=1)
    parallel = replicate_sample_means(three_var_model, [1, 5], 6, RngStream(77), workers=2)
    np.testing.assert_array_equal(serial, parallel)


def test_replicates_follow_the_parent_stream(three_var_model):
    parent = RngStream(77)
    first = replicate_sample_means(three_var_model, [1, 5], 6, parent.spawn(0), workers=1)
    again = replicate_sample_means(three_var_model, [1, 5], 6, parent.spawn(0), workers=1)
    second = replicate_sample_means(three_var_model, [1, 5], 6, parent.spawn(1), workers=1)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, second)
    # rows of one parent are independent streams, not copies
    assert len({tuple(row) for row in first}) == 6


def test_deviation_experiment_cells_differ_by_parent_stream(three_var_model):
    parent = RngStream(5)
    _, a = deviation_experiment(three_var_model, [1], 20, parent.spawn(0), reference_M=200, workers=1)
    _, b = deviation_experiment(three_var_model, [1], 20, parent.spawn(1), reference_M=200, workers=1)
    _, c = deviation_experiment(three_var_model, [1], 20, parent.spawn(0), reference_M=200, workers=1)

    def means(deviations):
        return [d.value + d.reference_mean for d in deviations[1]]

    assert means(a) == means(c)
    assert all(x != pytest.approx(y) for x, y in zip(means(a), means(b)))


def test_gradient_is_indicator_of_maximizer():
    rng = RngStream(99)
    for k in range(50):
        model = random_model(k, (2, 3, 2))
        table = draw_perturbation(model, PerturbationKind.LOWDIM, rng.spawn(k))
        i = k % model.n
        label = (k // model.n) % model.sizes[i]
        check = gradient_check(model, table, (i, label))
        assert check.passed, check


def test_gradient_check_on_binary_chain(rng):
    model = binary_chain([0.3, -0.2, 0.1], [1.0, 0.5])
    table = draw_perturbation(model, PerturbationKind.LOWDIM, rng)
    argmax = v_j(model, (), table).argmax
    hit = gradient_check(model, table, (0, argmax[0]))
    miss = gradient_check(model, table, (0, 1 - argmax[0]), solver="mincut")
    assert hit.indicator == 1.0 and hit.passed
    assert miss.indicator == 0.0 and miss.passed
