"""
The invariant suite behind ``verify``: every cross-check between the exact computations,
the independent oracles and the simulators, run for one profile at a chosen budget.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from scipy import stats

from src.chase_phase.analysis.catalan import brute_force_catalan, weighted_catalan_table
from src.chase_phase.analysis.rates import ArithmeticMode, HypothesisReport, RateProfile, StepWeights, check_hypotheses
from src.chase_phase.common import LOGGER_NAME, RUN_DEFAULTS, version_stamp
from src.chase_phase.exceptions import InvalidParameterError
from src.chase_phase.simulation.jumpchain import (
    lemma_bound_check,
    reach_probability_oracle,
    reach_table,
    renewal_frequencies,
)
from src.chase_phase.simulation.treesim import expected_B_estimate

logger = logging.getLogger(LOGGER_NAME)

BUDGETS: dict = RUN_DEFAULTS["verify"]
PHASE_DEFAULTS: dict = RUN_DEFAULTS["phase"]

ORACLE_K_MAX: int = 8
REACH_ORACLE_K_MAX: int = 5
RENEWAL_K_MAX: int = 6
REACH_RTOL: float = 1e-10
RENEWAL_FAMILY_ALPHA: float = 1e-3


class CheckStatus(Enum):
    PASS = "pass"
    FAIL = "fail"
    FLAGGED = "flagged"
    SKIPPED = "skipped"


@dataclass
class CheckResult:
    name: str
    status: CheckStatus
    reason: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "reason": self.reason, "detail": self.detail}


@dataclass
class VerificationReport:
    budget: str
    profile_fingerprint: str
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        """No check failed; flagged hypotheses and skipped checks do not fail the suite."""
        return all(check.status is not CheckStatus.FAIL for check in self.checks)

    def check(self, name: str) -> CheckResult:
        return next(c for c in self.checks if c.name == name)

    def rows(self) -> list[dict]:
        return [{"check": c.name, "status": c.status, "reason": c.reason} for c in self.checks]

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "profile_fingerprint": self.profile_fingerprint,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "version": version_stamp(),
        }


def _status(ok: bool) -> CheckStatus:
    return CheckStatus.PASS if ok else CheckStatus.FAIL


def check_hypothesis_probe(profile: RateProfile) -> tuple[CheckResult, HypothesisReport]:
    report = check_hypotheses(
        profile, int(PHASE_DEFAULTS["hypothesis_ell_max"]), int(PHASE_DEFAULTS["hypothesis_k_probe"])
    )
    if report.consistent:
        return CheckResult("hypotheses", CheckStatus.PASS, detail=report.to_dict()), report
    reason = f"growth: {report.growth_status}; decay: {report.decay_status}"
    return CheckResult("hypotheses", CheckStatus.FLAGGED, reason, report.to_dict()), report


def check_catalan_oracle(profile: RateProfile, k_max: int) -> CheckResult:
    """Exact DP table against brute-force Dyck enumeration."""
    weights = StepWeights(profile, ArithmeticMode.EXACT)
    k_top = min(k_max, ORACLE_K_MAX)
    table = weighted_catalan_table(weights, k_top)
    mismatches = [k for k in range(k_top + 1) if table.values[k] != brute_force_catalan(weights, k)]
    reason = f"mismatch at k = {mismatches}" if mismatches else ""
    return CheckResult("catalan_oracle", _status(not mismatches), reason, {"k_max": k_top})


def check_reach_oracle(profile: RateProfile) -> CheckResult:
    """Reach DP against the absorbing-chain linear solve."""
    table = reach_table(profile, REACH_ORACLE_K_MAX, ArithmeticMode.EXACT)
    errors = {}
    for k in range(1, REACH_ORACLE_K_MAX + 1):
        exact = float(table.p_reach[k])
        oracle = reach_probability_oracle(profile, k)
        errors[k] = abs(exact - oracle) / max(abs(exact), 1e-300) if exact else abs(oracle)
    worst = max(errors.values())
    ok = worst <= REACH_RTOL
    reason = "" if ok else f"relative error {worst:.3g} exceeds {REACH_RTOL:g}"
    return CheckResult("reach_oracle", _status(ok), reason, {"relative_error": errors})


def check_reach_sandwich(profile: RateProfile, k_max: int) -> CheckResult:
    """P(Y >= k) nonincreasing in k and bounded below by C_k."""
    table = reach_table(profile, k_max, ArithmeticMode.EXACT)
    catalan = weighted_catalan_table(StepWeights(profile, ArithmeticMode.EXACT), k_max)
    bad_order = [k for k in range(1, k_max) if table.p_reach[k + 1] > table.p_reach[k]]
    bad_sandwich = [k for k in range(1, k_max + 1) if catalan.values[k] > table.p_reach[k]]
    problems = []
    if bad_order:
        problems.append(f"P(Y>=k) increases at k = {bad_order}")
    if bad_sandwich:
        problems.append(f"C_k > P(Y>=k) at k = {bad_sandwich}")
    return CheckResult("reach_sandwich", _status(not problems), "; ".join(problems), {"k_max": k_max})


def renewal_z_threshold(n_tests: int, alpha: float = RENEWAL_FAMILY_ALPHA) -> float:
    """Two-sided Bonferroni threshold: n_tests comparisons together fail with probability <= alpha."""
    if n_tests < 1:
        raise InvalidParameterError("n_tests", n_tests, "need at least one comparison")
    return float(stats.norm.isf(alpha / (2 * n_tests)))


def check_renewal_mc(profile: RateProfile, n_runs: int, seed: int, threads: Optional[int]) -> CheckResult:
    """
    Jump-chain renewal frequencies against C_k.

    Rows with C_k in {0, 1} have no sampling noise and must match exactly. The rest are
    z-tested together at family-wise level RENEWAL_FAMILY_ALPHA.
    """
    catalan = weighted_catalan_table(StepWeights(profile, ArithmeticMode.EXACT), RENEWAL_K_MAX)
    frequencies = renewal_frequencies(profile, n_runs, RENEWAL_K_MAX, seed, threads)
    detail, outside, mismatched, tested = {}, [], [], []
    for k in range(1, RENEWAL_K_MAX + 1):
        p = float(catalan.values[k])
        stderr = math.sqrt(p * (1.0 - p) / n_runs)
        observed = frequencies.frequency(k)
        detail[k] = {"C_k": p, "frequency": observed, "stderr": stderr}
        if stderr == 0.0:
            if observed != p:
                mismatched.append(k)
        else:
            tested.append(k)

    z_score = renewal_z_threshold(len(tested)) if tested else None
    for k in tested:
        row = detail[k]
        if abs(row["frequency"] - row["C_k"]) > z_score * row["stderr"]:
            outside.append(k)

    problems = []
    if outside:
        problems.append(f"outside {z_score:.3g} stderr at k = {outside}")
    if mismatched:
        problems.append(f"degenerate C_k not matched exactly at k = {mismatched}")
    return CheckResult(
        "renewal_mc", _status(not problems), "; ".join(problems), {"N": n_runs, "z": z_score, "k": detail}
    )


def check_lemma_ratios(profile: RateProfile, k_max: int, hypotheses: HypothesisReport) -> CheckResult:
    report = lemma_bound_check(profile, k_max, hypotheses.c, hypotheses.m, hypotheses)
    if report.c0 is None:
        return CheckResult("lemma_ratios", CheckStatus.SKIPPED, report.status)
    problems = []
    if not report.all_bounded:
        problems.append(f"ratio above c0 = {report.c0:.6g}")
    if not report.sandwich_holds:
        problems.append("C_k > P(Y>=k)")
    if not report.lower_bound_holds:
        problems.append("C_{k-1}/(1+lambda_1+rho_1) > P(Y=k)")
    detail = {"c0": report.c0, "c0_displayed": report.c0_displayed, "max_ratio": max(
        (row.ratio for row in report.rows if row.ratio is not None), default=None
    )}
    return CheckResult("lemma_ratios", _status(not problems), "; ".join(problems), detail)


def check_series_agreement(
    profile: RateProfile, d: int, depth_cap: int, runs: int, seed: int, threads: Optional[int]
) -> CheckResult:
    """Tree simulator mean blue count within 3 standard errors of the truncated series."""
    estimate = expected_B_estimate(profile, d, depth_cap, runs, seed, threads)
    detail = estimate.to_dict()
    if estimate.within_3_stderr:
        return CheckResult("series_agreement", CheckStatus.PASS, detail=detail)
    return CheckResult("series_agreement", CheckStatus.FAIL, f"gap {estimate.gap:.6g}", detail)


def verify_profile(
    profile: RateProfile,
    budget: str = "default",
    seed: int = 0,
    threads: Optional[int] = None,
    d: Optional[int] = None,
) -> VerificationReport:
    """
    Run the invariant suite.

    A profile outside the hypotheses is flagged and the checks that rely on them (lemma
    ratios, series agreement) are skipped with the reason.

    :param budget: "quick", "default" or "full", sizes taken from config/defaults.json
    :param d: branching factor for the series check; defaults to the budget's
    """
    if budget not in BUDGETS:
        raise InvalidParameterError("budget", budget, f"one of {sorted(BUDGETS)}")
    sizes = BUDGETS[budget]
    k_max = int(sizes["k_max"])
    d = d or int(sizes["d"])
    logger.info(f"Verifying profile {profile.fingerprint()} at budget '{budget}'")

    hypothesis_check, hypotheses = check_hypothesis_probe(profile)
    checks = [
        hypothesis_check,
        check_catalan_oracle(profile, k_max),
        check_reach_oracle(profile),
        check_reach_sandwich(profile, k_max),
        check_renewal_mc(profile, int(sizes["mc_runs"]), seed, threads),
    ]
    if hypotheses.consistent:
        checks.append(check_lemma_ratios(profile, k_max, hypotheses))
        checks.append(
            check_series_agreement(profile, d, int(sizes["depth_cap"]), int(sizes["tree_runs"]), seed, threads)
        )
    else:
        reason = f"skipped: hypothesis flagged ({hypothesis_check.reason})"
        checks.append(CheckResult("lemma_ratios", CheckStatus.SKIPPED, reason))
        checks.append(CheckResult("series_agreement", CheckStatus.SKIPPED, reason))

    report = VerificationReport(budget, profile.fingerprint(), checks)
    for check in checks:
        if check.status is CheckStatus.FAIL:
            logger.warning(f"Check {check.name} failed: {check.reason}")
    logger.info(f"Verification {'passed' if report.passed else 'failed'} ({len(checks)} checks)")
    return report
