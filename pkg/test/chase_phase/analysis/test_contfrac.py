import math
from fractions import Fraction

import pytest

from src.chase_phase.analysis.catalan import root_test_estimate, weighted_catalan_table
from src.chase_phase.analysis.contfrac import (
    EvalStatus,
    Verdict,
    approximants,
    classify_phase,
    comparison_bounds,
    constant_profile_g,
    constant_profile_radius,
    critical_lambda,
    default_t_min,
    estimate_M,
    evaluate_f,
    tail_index,
)
from src.chase_phase.analysis.rates import ArithmeticMode, RateProfile, StepWeights
from src.chase_phase.exceptions import InvalidParameterError, PreconditionError


def _float_weights(profile: RateProfile) -> StepWeights:
    return StepWeights(profile, ArithmeticMode.FLOAT)


def test_tail_index_decreasing_tail(unit_profile):
    """a_j = 1/((j+3)(j+4)); a_j * 10 <= 1/4 first holds at j = 3."""
    assert tail_index(StepWeights(unit_profile), 10.0) == 3


def test_tail_index_constant_tail(no_death_profile):
    weights = StepWeights(no_death_profile)
    assert tail_index(weights, 1.0) == 0
    assert tail_index(weights, 2.0) is None


def test_tail_index_zero_lambda_tail():
    """lambda = [1, 1] then 0: a = [1/4, 1/2, 0, ...], so at z = 1 index 1 is the last violation."""
    profile = RateProfile(lambda_head=(1, 1), lambda_tail=0)
    assert tail_index(StepWeights(profile), 1.0) == 2
    assert tail_index(StepWeights(profile), 0.25) == 0


def test_tail_index_rejects_nonpositive_z(unit_profile):
    with pytest.raises(InvalidParameterError):
        tail_index(StepWeights(unit_profile), 0.0)


def test_evaluate_f_matches_closed_form(no_death_profile):
    result = evaluate_f(_float_weights(no_death_profile), 0.5)
    assert result.status is EvalStatus.CONVERGED
    assert result.value == pytest.approx(1.1715728752538097, rel=1e-10)
    assert result.value == pytest.approx(constant_profile_g(1.0, 0.5), rel=1e-10)


def test_evaluate_f_diverges_past_radius(no_death_profile):
    result = evaluate_f(_float_weights(no_death_profile), 1.5)
    assert result.status is EvalStatus.DIVERGED
    assert result.value is None
    assert result.tail_index is None


def test_evaluate_f_zero_lambda_is_one(frozen_profile):
    result = evaluate_f(_float_weights(frozen_profile), 100.0)
    assert result.converged
    assert result.value == 1.0


def test_evaluate_f_inconclusive_at_n_max(no_death_profile):
    """At the radius itself the approximants creep toward 2 too slowly to pass the Cauchy test."""
    result = evaluate_f(_float_weights(no_death_profile), 1.0, n_max=4096)
    assert result.status is EvalStatus.INCONCLUSIVE
    assert "n_max" in result.reason


def test_evaluate_f_domain(no_death_profile):
    weights = _float_weights(no_death_profile)
    with pytest.raises(InvalidParameterError):
        evaluate_f(weights, -1.0)
    with pytest.raises(InvalidParameterError):
        evaluate_f(weights, 0.5, tol=0.0)


def test_approximants_first_terms(no_death_profile):
    """F_1 = 1, F_2 = 1/(1 - z/4)."""
    values = approximants(_float_weights(no_death_profile), 0.5, 3)
    assert values[0] == 1.0
    assert values[1] == pytest.approx(8 / 7)
    assert values[2] == pytest.approx(1 / (1 - 0.125 / (1 - 0.125)))


def test_estimate_M_no_death(no_death_profile):
    estimate = estimate_M(_float_weights(no_death_profile), 1e-4)
    assert estimate.is_point
    assert estimate.value == pytest.approx(1.0, abs=1e-3)
    assert estimate.lower < 1.0 < estimate.upper


def test_estimate_M_near_two():
    lam = 0.1716
    estimate = estimate_M(_float_weights(RateProfile.constant(lam, 0)), 1e-5)
    assert estimate.value == pytest.approx(constant_profile_radius(lam), abs=1e-3)
    assert estimate.value == pytest.approx(2.0, abs=1e-3)


def test_estimate_M_two_site_profile():
    """g(z) = (1 - z/2) / (1 - 3z/4) has its pole at 4/3."""
    profile = RateProfile(lambda_head=(1, 1), lambda_tail=0)
    estimate = estimate_M(_float_weights(profile), 1e-6)
    assert estimate.value == pytest.approx(4 / 3, abs=1e-5)


def test_estimate_M_zero_lambda(frozen_profile):
    estimate = estimate_M(_float_weights(frozen_profile), 1e-4)
    assert estimate.value == math.inf
    assert estimate.to_dict()["value"] == math.inf


def test_classify_no_death_coexists(no_death_profile):
    result = classify_phase(no_death_profile, 2, estimate=False)
    assert result.verdict is Verdict.EXPECTED_COEXISTENCE
    assert result.evidence["g_at_d"]["status"] is EvalStatus.DIVERGED
    assert not result.hypotheses.consistent


def test_classify_subcritical(subcritical_profile):
    """M = 1.05^2 / 0.2 = 5.5125 sits between 5 and 6."""
    assert classify_phase(subcritical_profile, 5, estimate=False).verdict is Verdict.NO_EXPECTED_COEXISTENCE
    assert classify_phase(subcritical_profile, 6, estimate=False).verdict is Verdict.EXPECTED_COEXISTENCE


def test_classify_unit_profile_no_coexistence_at_two(unit_profile):
    """Every a_j z stays below 1/4 for z <= 3, so M > 3."""
    result = classify_phase(unit_profile, 2)
    assert result.verdict is Verdict.NO_EXPECTED_COEXISTENCE
    assert result.M_estimate.value > 3.0


def test_classify_frozen(frozen_profile):
    result = classify_phase(frozen_profile, 7)
    assert result.verdict is Verdict.NO_EXPECTED_COEXISTENCE
    assert result.to_dict()["verdict"] is Verdict.NO_EXPECTED_COEXISTENCE


def test_classify_rejects_d_below_two(unit_profile):
    with pytest.raises(InvalidParameterError):
        classify_phase(unit_profile, 1)


def test_verdict_levels_are_ordered():
    assert (
        Verdict.NO_EXPECTED_COEXISTENCE.level
        < Verdict.BOUNDARY_INCONCLUSIVE.level
        < Verdict.EXPECTED_COEXISTENCE.level
    )


@pytest.mark.parametrize("d, expected", [(2, 3 - 2 * math.sqrt(2)), (3, 5 - 2 * math.sqrt(6))])
def test_critical_lambda_constant_family(no_death_profile, d, expected):
    """(1 + t)^2 / (4t) = d at the critical scale."""
    result = critical_lambda(no_death_profile, d, tol=1e-6)
    assert result.t_star == pytest.approx(expected, abs=1e-5)
    assert result.lower <= result.t_star <= result.upper


def test_critical_lambda_pure_rho_profile_uses_unit_direction():
    result = critical_lambda(RateProfile.constant(0, 0), 2, tol=1e-6)
    assert result.t_star == pytest.approx(3 - 2 * math.sqrt(2), abs=1e-5)


def test_critical_lambda_without_flip(no_death_profile):
    with pytest.raises(PreconditionError):
        critical_lambda(no_death_profile, 2, t_min=0.5, t_max=1.0)


def test_critical_lambda_domain(no_death_profile):
    with pytest.raises(InvalidParameterError):
        critical_lambda(no_death_profile, 1)
    with pytest.raises(InvalidParameterError):
        critical_lambda(no_death_profile, 2, t_min=1.0, t_max=0.5)


def test_comparison_bounds_bracket_M(unit_profile):
    tol = 1e-4
    full = estimate_M(_float_weights(unit_profile), tol)
    bounds = comparison_bounds(unit_profile, 4, tol)
    assert bounds.cutoff == 4
    assert bounds.lower.value <= full.value + tol
    assert full.value <= bounds.upper.value + tol


def test_constant_profile_closed_forms():
    assert constant_profile_radius(1.0) == 1.0
    assert constant_profile_radius(0.0) == math.inf
    assert constant_profile_radius(float(Fraction(1, 20))) == pytest.approx(5.5125)
    assert constant_profile_g(1.0, 1.0) == 2.0
    assert constant_profile_g(1.0, 2.0) == math.inf
    assert constant_profile_g(0.0, 5.0) == 1.0
    with pytest.raises(InvalidParameterError):
        constant_profile_radius(-1.0)


def test_evaluate_f_matches_plain_approximants(no_death_profile):
    """The depth-doubling loop and the plain recursion produce the same F_n."""
    weights = _float_weights(no_death_profile)
    result = evaluate_f(weights, 0.5, tol=1e-300, n_max=40)
    assert result.status is EvalStatus.INCONCLUSIVE
    assert result.depth == result.state.n == 40
    assert result.value == pytest.approx(approximants(weights, 0.5, 40)[-1], rel=1e-12)


def test_approximant_gaps_shrink_past_the_tail_index(unit_profile, no_death_profile):
    """Once a_j z <= 1/4 for good, |F_{n+1} - F_n| is eventually nonincreasing."""
    for profile, z in ((unit_profile, 6.0), (no_death_profile, 0.9)):
        weights = _float_weights(profile)
        J = tail_index(StepWeights(profile), z)
        assert J is not None
        values = approximants(weights, z, 200)
        gaps = [abs(b - a) for a, b in zip(values, values[1:])]
        compared = 0
        for i in range(J + 2, len(gaps) - 1):
            if gaps[i + 1] < 1e-13:
                break
            assert gaps[i + 1] <= gaps[i] * (1 + 1e-9)
            compared += 1
        assert compared >= 5
        assert gaps[-1] < 1e-10


@pytest.mark.parametrize("profile_name", ["unit_profile", "no_death_profile", "mixed_profile"])
def test_root_test_agrees_with_bisection(request, profile_name):
    """At k_max = 400 the root-test estimate sits within 5% of the bisection value."""
    profile = request.getfixturevalue(profile_name)
    table = weighted_catalan_table(StepWeights(profile, ArithmeticMode.LOG), 400)
    root_test = root_test_estimate(table, 20)
    estimate = estimate_M(_float_weights(profile), 1e-4, root_test)
    assert estimate.root_test_gap is not None
    assert estimate.root_test_gap < 0.05


@pytest.mark.parametrize(
    "profile_name, d", [("unit_profile", 2), ("mixed_profile", 3), ("subcritical_profile", 6)]
)
def test_classify_ignores_head_padding(request, profile_name, d):
    """Padding the heads with tail values describes the same profile."""
    profile = request.getfixturevalue(profile_name)
    plain = classify_phase(profile, d, check=False)
    padded = classify_phase(profile.extended_head(30), d, check=False)
    assert padded.verdict is plain.verdict
    assert padded.M_estimate.value == pytest.approx(plain.M_estimate.value, rel=1e-12)
    assert padded.profile_fingerprint == plain.profile_fingerprint


def test_default_t_min_follows_branching():
    assert default_t_min(2) == pytest.approx(1e-3)
    assert default_t_min(500) == pytest.approx(1 / 4000)


def test_critical_lambda_large_branching(no_death_profile):
    """t* = 2d - 1 - 2 sqrt(d(d - 1)) is about 8.35e-4 at d = 300, below 1e-3."""
    d = 300
    expected = 2 * d - 1 - 2 * math.sqrt(d * (d - 1))
    assert expected < 1e-3
    result = critical_lambda(no_death_profile, d, tol=1e-9)
    assert result.t_star == pytest.approx(expected, rel=1e-4)
