"""
End-to-end properties at full sample sizes. Run with ``pytest -m slow``.
"""

import math

import pytest

from src.chase_phase.analysis.catalan import brute_force_catalan, weighted_catalan_table
from src.chase_phase.analysis.contfrac import critical_lambda, estimate_M, evaluate_f
from src.chase_phase.analysis.rates import ArithmeticMode, RateProfile, StepWeights, check_hypotheses
from src.chase_phase.common import RUN_DEFAULTS
from src.chase_phase.simulation.jumpchain import (
    lemma_bound_check,
    reach_probability_exact,
    reach_probability_oracle,
    renewal_frequencies,
)
from src.chase_phase.simulation.treesim import expected_B_estimate, line_reach_chi_square, truncated_series

pytestmark = pytest.mark.slow


def test_catalan_table_matches_enumeration(acceptance_profiles):
    for profile in acceptance_profiles:
        weights = StepWeights(profile, ArithmeticMode.EXACT)
        table = weighted_catalan_table(weights, 8)
        for k in range(9):
            assert table.values[k] == brute_force_catalan(weights, k)


def test_renewal_frequencies_match_catalan(acceptance_profiles):
    """18 comparisons at N = 10^6: all within 4 stderr and at most one outside 3."""
    n_runs = 1_000_000
    outside_three = 0
    for seed, profile in enumerate(acceptance_profiles):
        catalan = weighted_catalan_table(StepWeights(profile), 6)
        frequencies = renewal_frequencies(profile, n_runs, 6, seed=seed)
        for k in range(1, 7):
            p = float(catalan.values[k])
            stderr = math.sqrt(p * (1.0 - p) / n_runs)
            deviation = abs(frequencies.frequency(k) - p)
            assert deviation <= 4 * stderr + 1.0 / n_runs
            outside_three += deviation > 3 * stderr + 1.0 / n_runs
    assert outside_three <= 1


@pytest.mark.parametrize("d, expected", [(2, 3 - 2 * math.sqrt(2)), (3, 5 - 2 * math.sqrt(6))])
def test_critical_scale_closed_form(d, expected):
    result = critical_lambda(RateProfile.constant(1, 0), d)
    assert abs(result.t_star - expected) <= 1e-6


def test_continued_fraction_matches_power_series(acceptance_profiles):
    """At half the radius the terms fall at least like 2^-k, so 200 terms leave nothing."""
    for profile in acceptance_profiles:
        weights = StepWeights(profile, ArithmeticMode.FLOAT)
        z = 0.5 * estimate_M(weights, 1e-6).value
        evaluation = evaluate_f(weights, z)
        assert evaluation.converged
        series = weighted_catalan_table(StepWeights(profile, ArithmeticMode.LOG), 200).series(z)
        assert abs(evaluation.value - series) <= 1e-9


def test_reach_matches_absorbing_chain(acceptance_profiles):
    for profile in acceptance_profiles:
        for k in range(1, 6):
            exact = float(reach_probability_exact(profile, k))
            assert reach_probability_oracle(profile, k) == pytest.approx(exact, rel=1e-10)


def test_lemma_ratios_bounded(unit_profile):
    phase = RUN_DEFAULTS["phase"]
    hypotheses = check_hypotheses(unit_profile, phase["hypothesis_ell_max"], phase["hypothesis_k_probe"])
    report = lemma_bound_check(unit_profile, 30, hypotheses.c, hypotheses.m, hypotheses)
    assert report.status == "checked"
    assert report.all_bounded
    assert report.sandwich_holds


def test_tree_mean_matches_series_subcritical(subcritical_profile):
    estimate = expected_B_estimate(subcritical_profile, 2, 20, runs=100_000, seed=7)
    assert estimate.within_3_stderr
    assert estimate.lower_bound <= estimate.series


def test_truncated_series_grows_supercritical(no_death_profile):
    values = [truncated_series(no_death_profile, 2, cap) for cap in (10, 15, 20)]
    assert values[1] > 2 * values[0]
    assert values[2] > 2 * values[1]


def test_line_tree_reproduces_reach_distribution(mixed_profile):
    passes = sum(
        line_reach_chi_square(mixed_profile, 100_000, seed=repetition).p_value > 0.01
        for repetition in range(20)
    )
    assert passes >= 19
