import json
import math

import numpy as np
import pytest

from concentration import (
    BoundParams,
    LogConcaveDensitySpec,
    ScalarFunctionSpec,
    bound_branches,
    check_gumbel_poincare,
    check_modified_log_sobolev,
    check_poincare,
    constant_function,
    corollary2_bound,
    epsilon_delta_plan,
    exp_moment_bound,
    exp_moment_monte_carlo,
    function_suite,
    gaussian_density,
    gumbel_density,
    gumbel_poincare_constant,
    gumbel_weight_lower_bound,
    laplace_density,
    linear_function,
    mlsi_prefactor,
    sweep_poincare_constant,
    two_sided_bound,
)
from conftest import binary_chain
from errors import DomainError, InvalidArgumentError
from gumbel import GUMBEL_VARIANCE, RngStream
from perturbation import vj_samples


# ----------------------------------------------------------------------------
# closed-form bounds
# ----------------------------------------------------------------------------

def test_radius_closed_form():
    r = corollary2_bound(BoundParams(a2=4, b=1, M=20, delta=0.05))
    assert r == pytest.approx(max(math.log(20), math.sqrt(4 * math.log(20))))
    assert r == pytest.approx(3.4617, abs=1e-4)


def test_radius_vanishes_as_delta_approaches_one():
    assert corollary2_bound(BoundParams(a2=4, b=1, M=20, delta=1 - 1e-12)) < 1e-5


def test_radius_monotonicity():
    base = BoundParams(a2=4, b=1, M=20, delta=0.05)
    r = corollary2_bound(base)
    assert corollary2_bound(BoundParams(4, 1, 40, 0.05)) < r
    assert corollary2_bound(BoundParams(8, 1, 20, 0.05)) > r
    assert corollary2_bound(BoundParams(4, 3, 20, 0.05)) > r
    assert corollary2_bound(BoundParams(4, 1, 20, 0.01)) > r


@pytest.mark.parametrize("args", [(-1, 1, 10, 0.1), (1, 0, 10, 0.1), (1, 1, 0, 0.1), (1, 1, 10, 0.0), (1, 1, 10, 1.0)])
def test_invalid_bound_params(args):
    with pytest.raises(InvalidArgumentError):
        BoundParams(*args)


def test_two_sided_bound_for_large_model():
    assert two_sided_bound(10 ** 4, 10, 0.05) == pytest.approx(math.sqrt(20 * 10 ** 4 / 10 * math.log(40)), rel=1e-12)
    assert two_sided_bound(10 ** 4, 10, 0.05) == pytest.approx(271.6, abs=0.05)
    assert two_sided_bound(1, 10 ** 12, 0.05) < 1e-4


def test_two_sided_bound_matches_per_step_form():
    n, j, M, delta = 5, 2, 30, 0.1
    expected = max(20 / M * math.log(2 / delta), math.sqrt(20 * (n - j + 1) / M * math.log(2 / delta)))
    assert two_sided_bound(n - j + 1, M, delta) == pytest.approx(expected)


def test_branches_cross_at_predicted_sample_count():
    delta = 0.05
    crossing = 20 * math.log(2 / delta)
    linear, root = bound_branches(BoundParams(a2=1, b=1, M=crossing, delta=delta / 2))
    assert linear == pytest.approx(root)
    linear, root = bound_branches(BoundParams(a2=1, b=1, M=2 * crossing, delta=delta / 2))
    assert root > linear


def test_exp_moment_bound():
    assert exp_moment_bound(BoundParams(1, 1, 1, 0.5), 0.0) == 1.0
    assert exp_moment_bound(BoundParams(1, 1, 1, 0.5), 0.1) == pytest.approx(math.exp(0.05))
    assert exp_moment_bound(BoundParams(1, 1, 1, 0.5), 0.1) == pytest.approx(1.0513, abs=1e-4)
    with pytest.raises(DomainError):
        exp_moment_bound(BoundParams(1, 1, 1, 0.5), 0.2)
    with pytest.raises(DomainError):
        exp_moment_bound(BoundParams(1, 2, 1, 0.5), -0.1)


def test_exp_moment_bound_holds_for_perturbed_max():
    model = binary_chain([0.4, -0.3], [1.0])
    samples = vj_samples(model, (), 10 ** 6, RngStream(55))
    lam = 1 / 20
    empirical = exp_moment_monte_carlo(samples, lam)
    assert empirical <= exp_moment_bound(BoundParams(a2=2, b=1, M=1, delta=0.5), lam) * 1.01
    assert empirical >= 1.0


def test_plan_with_loose_epsilon_needs_one_sample():
    plan = epsilon_delta_plan((2, 2, 2), 1e6, 0.1)
    assert plan.M == [1, 1, 1]
    assert plan.total_solver_calls == 9


def test_plan_single_variable_matches_linear_scan():
    epsilon, delta_prime = 0.5, 0.1
    plan = epsilon_delta_plan((3,), epsilon, delta_prime)
    M = 1
    while two_sided_bound(1, M, delta_prime) > epsilon:
        M += 1
    assert plan.M == [M]
    assert plan.per_step_delta == delta_prime
    assert plan.ratio_factor == pytest.approx(math.exp(1.0))


def test_plan_is_nonincreasing_in_j():
    plan = epsilon_delta_plan((2,) * 6, 0.3, 0.05)
    assert all(a >= b for a, b in zip(plan.M, plan.M[1:]))
    assert plan.M[0] > plan.M[-1]
    for j, M in enumerate(plan.M, start=1):
        assert two_sided_bound(6 - j + 1, M, 0.05 / 6) <= 0.3
        assert M == 1 or two_sided_bound(6 - j + 1, M - 1, 0.05 / 6) > 0.3


@pytest.mark.parametrize("args", [((), 0.1, 0.1), ((2,), 0.0, 0.1), ((2,), 0.1, 1.0)])
def test_invalid_plans(args):
    with pytest.raises(InvalidArgumentError):
        epsilon_delta_plan(*args)


# ----------------------------------------------------------------------------
# densities and test functions
# ----------------------------------------------------------------------------

@pytest.mark.parametrize("factory", [gaussian_density, laplace_density, gumbel_density])
def test_densities_are_normalized(factory):
    assert factory().validate() == pytest.approx(1.0, abs=1e-6)


def test_unnormalized_density_is_rejected():
    dens = LogConcaveDensitySpec("half", lambda y: 0.5 * np.square(y), lambda y: y,
                                 lambda y: np.ones_like(np.asarray(y, dtype=float)), 0.0, (-12.0, 12.0))
    with pytest.raises(InvalidArgumentError):
        dens.validate()


def test_function_suite():
    suite = function_suite()
    assert len(suite) == 10
    assert len({f.name for f in suite}) == 10
    y = np.linspace(-8, 8, 4001)
    h = 1e-5
    for f in suite:
        np.testing.assert_allclose(f.dh(y), (f.h(y + h) - f.h(y - h)) / (2 * h), atol=1e-7, err_msg=f.name)
        assert np.max(np.abs(f.dh(y))) <= f.derivative_bound + 1e-12, f.name


# ----------------------------------------------------------------------------
# Poincare
# ----------------------------------------------------------------------------

def test_constant_function_has_zero_variance():
    report = check_poincare(gaussian_density(), constant_function(2.0), 0.0)
    assert report.lhs == pytest.approx(0.0, abs=1e-12)
    assert report.rhs == 0.0
    assert report.ratio == 0.0
    assert report.holds


def test_gaussian_linear_case_is_tight():
    report = check_poincare(gaussian_density(), linear_function(), 0.0)
    assert report.lhs == pytest.approx(1.0, abs=1e-8)
    assert report.rhs == pytest.approx(1.0, abs=1e-8)
    assert report.ratio == pytest.approx(1.0, abs=1e-6)
    assert report.verdict == "holds"
    assert report.quadrature_error <= 1e-8


def test_gumbel_density_at_half():
    tanh = function_suite()[0]
    report = check_poincare(gumbel_density(), tanh, 0.5)
    assert report.ratio <= 1.0
    assert report.holds


@pytest.mark.parametrize("h", function_suite(), ids=lambda f: f.name)
def test_laplace_suite_at_half(h):
    report = check_poincare(laplace_density(), h, 0.5)
    assert report.ratio <= 1.0
    assert report.holds


@pytest.mark.parametrize("h", function_suite(), ids=lambda f: f.name)
def test_gaussian_suite_brascamp_lieb(h):
    assert check_poincare(gaussian_density(), h, 0.0).holds


def test_vanishing_weight_is_rejected():
    with pytest.raises(InvalidArgumentError):
        check_poincare(laplace_density(), linear_function(), 0.0)


def test_poincare_preconditions():
    with pytest.raises(InvalidArgumentError):
        check_poincare(gaussian_density(), linear_function(), 1.0)
    bad = ScalarFunctionSpec("exp", np.exp, np.exp, decays=False)
    with pytest.raises(InvalidArgumentError):
        check_poincare(gaussian_density(), bad, 0.5)
    with pytest.raises(InvalidArgumentError):
        check_gumbel_poincare(bad)


def test_gumbel_poincare_linear():
    report = check_gumbel_poincare(linear_function())
    assert report.lhs == pytest.approx(GUMBEL_VARIANCE, abs=1e-7)
    assert report.rhs == pytest.approx(4.0, abs=1e-8)
    assert report.ratio == pytest.approx(0.4112, abs=1e-4)


def test_gumbel_poincare_constant_function():
    report = check_gumbel_poincare(constant_function())
    assert report.ratio == 0.0
    assert report.holds


@pytest.mark.parametrize("h", function_suite(), ids=lambda f: f.name)
def test_gumbel_poincare_suite(h):
    report = check_gumbel_poincare(h)
    assert report.ratio <= 1.0
    assert report.verdict == "holds"


def test_report_serializes():
    report = check_gumbel_poincare(function_suite()[2])
    data = json.loads(json.dumps(report.to_dict()))
    assert set(data) == {"inequality", "parameters", "lhs", "rhs", "ratio", "quadrature_error", "verdict"}
    assert data["parameters"] == {"h": "arctan"}


def test_poincare_constant_sweep():
    sweep = sweep_poincare_constant(0.01)
    assert sweep.best_eta == pytest.approx(0.5)
    assert sweep.best_constant == pytest.approx(4.0)
    assert np.all(sweep.constants >= 4.0 - 1e-12)
    assert gumbel_poincare_constant(0.25) == pytest.approx(1 / (0.75 * 0.25))
    with pytest.raises(DomainError):
        gumbel_poincare_constant(1.0)


@pytest.mark.parametrize("eta", [0.1, 0.3, 0.5, 0.6, 0.75, 0.9])
def test_weight_lower_bound_matches_closed_form(eta):
    lower = eta if eta <= 0.5 else (4 * eta - 1) / (4 * eta)
    numeric = gumbel_weight_lower_bound(eta)
    assert numeric >= lower - 1e-12
    assert numeric == pytest.approx(lower, abs=1e-6)


# ----------------------------------------------------------------------------
# modified log-Sobolev
# ----------------------------------------------------------------------------

def test_log_sobolev_prefactor():
    assert mlsi_prefactor(0.1) == pytest.approx(4.672, abs=1e-3)
    assert mlsi_prefactor(0.1) < 5
    assert mlsi_prefactor(0.0) == 2.0


def test_log_sobolev_at_zero_lambda():
    report = check_modified_log_sobolev(function_suite()[0], 0.0, 0.1)
    assert report.lhs == pytest.approx(0.0, abs=1e-14)
    assert report.rhs == 0.0
    assert report.holds


@pytest.mark.parametrize("h", function_suite(), ids=lambda f: f.name)
def test_log_sobolev_suite(h):
    report = check_modified_log_sobolev(h, 0.01, 0.1)
    assert report.lhs <= report.rhs
    assert report.lhs > 0
    assert report.holds


def test_log_sobolev_rejects_large_lambda():
    with pytest.raises(DomainError):
        check_modified_log_sobolev(function_suite()[0], 0.2, 0.1)
    with pytest.raises(DomainError):
        check_modified_log_sobolev(function_suite()[0], 0.01, 1.0)
