"""
The continued fraction f(z) = 1/(1 - a_0 z/(1 - a_1 z/(1 - ...))) and the phase test.

f agrees with the generating function g(z) = sum C_k z^k inside its radius of convergence M,
and expected coexistence on the d-ary tree holds iff M <= d, i.e. iff g(d) is infinite.
All evaluation happens on the positive real axis.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from src.chase_phase.analysis.catalan import RootTestResult, root_test_estimate, weighted_catalan_table
from src.chase_phase.analysis.rates import (
    ArithmeticMode,
    HypothesisReport,
    RateProfile,
    StepWeights,
    check_hypotheses,
)
from src.chase_phase.common import LOGGER_NAME, RUN_DEFAULTS
from src.chase_phase.exceptions import (
    InvalidParameterError,
    NonMonotoneVerdictError,
    PreconditionError,
)

logger = logging.getLogger(LOGGER_NAME)

CONTFRAC_DEFAULTS: dict = RUN_DEFAULTS["contfrac"]
PHASE_DEFAULTS: dict = RUN_DEFAULTS["phase"]
CRITICAL_DEFAULTS: dict = RUN_DEFAULTS["critical"]

RENORM_HIGH: float = 2.0**512
RENORM_LOW: float = 2.0**-512
BLOCK: int = 1 << 14
ROOT_TEST_MARGIN: float = 0.95


class EvalStatus(Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    INCONCLUSIVE = "Inconclusive"


class Verdict(Enum):
    EXPECTED_COEXISTENCE = "ExpectedCoexistence"
    NO_EXPECTED_COEXISTENCE = "NoExpectedCoexistence"
    BOUNDARY_INCONCLUSIVE = "BoundaryInconclusive"

    @property
    def level(self) -> float:
        """Ordering used by the monotonicity check along a scaling family."""
        return {
            Verdict.NO_EXPECTED_COEXISTENCE: 0.0,
            Verdict.BOUNDARY_INCONCLUSIVE: 0.5,
            Verdict.EXPECTED_COEXISTENCE: 1.0,
        }[self]


@dataclass
class ApproximantState:
    """Numerators and denominators of the three-term recursion at depth n."""

    A_prev: float = 1.0
    A_curr: float = 0.0
    B_prev: float = 0.0
    B_curr: float = 1.0
    n: int = 0

    @property
    def value(self) -> float:
        return self.A_curr / self.B_curr

    def advance(self, alpha: float) -> None:
        """X_n = X_{n-1} + alpha_n X_{n-2}, with unit partial denominators."""
        self.A_prev, self.A_curr = self.A_curr, self.A_curr + alpha * self.A_prev
        self.B_prev, self.B_curr = self.B_curr, self.B_curr + alpha * self.B_prev
        self.n += 1

    def renormalize(self) -> None:
        """Rescale A and B jointly by a power of two when B leaves [2^-512, 2^512]."""
        magnitude = abs(self.B_curr)
        if magnitude == 0.0 or RENORM_LOW <= magnitude <= RENORM_HIGH:
            return
        _, exponent = math.frexp(magnitude)
        self.A_prev = math.ldexp(self.A_prev, -exponent)
        self.A_curr = math.ldexp(self.A_curr, -exponent)
        self.B_prev = math.ldexp(self.B_prev, -exponent)
        self.B_curr = math.ldexp(self.B_curr, -exponent)


@dataclass
class FEvaluation:
    status: EvalStatus
    z: float
    value: Optional[float] = None
    depth: int = 0
    tail_index: Optional[int] = None
    reason: str = ""
    state: Optional[ApproximantState] = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status is EvalStatus.CONVERGED

    @property
    def diverged(self) -> bool:
        return self.status is EvalStatus.DIVERGED

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "z": self.z,
            "value": self.value,
            "depth": self.depth,
            "tail_index": self.tail_index,
            "reason": self.reason,
        }


def _last_head_violation(weights: StepWeights, z: Fraction, head: int) -> int:
    last = -1
    for j in range(head):
        if weights.a(j) * z > Fraction(1, 4):
            last = j
    return last


def tail_index(
    weights: StepWeights, z: float, probe_horizon: Optional[int] = None
) -> Optional[int]:
    """
    Smallest J with a_j z <= 1/4 for every j >= J, or None when none exists within the horizon.

    Beyond the head every a_j follows the tail formula: zero when the lambda tail is zero,
    constant when the rho tail is zero, and strictly decreasing otherwise. Comparisons are
    exact rational arithmetic.
    """
    if z <= 0:
        raise InvalidParameterError("z", z, "z must be positive")
    probe_horizon = probe_horizon or int(CONTFRAC_DEFAULTS["probe_horizon"])
    exact = StepWeights(weights.profile, ArithmeticMode.EXACT)
    profile = exact.profile
    z_exact = Fraction(z)
    quarter = Fraction(1, 4)
    head = profile.head_length

    def inside(j: int) -> bool:
        return exact.a(j) * z_exact <= quarter

    last_violation = _last_head_violation(exact, z_exact, head)
    if profile.lambda_tail == 0:
        return last_violation + 1
    if profile.rho_tail == 0:
        return last_violation + 1 if inside(head) else None

    # strictly decreasing tail: binary search for the first index inside the disk
    if not inside(probe_horizon):
        return None
    if inside(head):
        return last_violation + 1
    lo, hi = head, probe_horizon
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return hi


def evaluate_f(
    weights: StepWeights,
    z: float,
    tol: Optional[float] = None,
    n_max: Optional[int] = None,
    divergence_threshold: Optional[float] = None,
    tail: Optional[int] = -1,
) -> FEvaluation:
    """
    Run the approximant recursion at z with depth doubling.

    Converged: |F_n - F_{n/2}| <= tol * max(1, |F_n|) with n/2 past the tail index.
    Diverged: some B_n <= 0 (a pole of an approximant at or before z) or F_n above the
    divergence threshold. Inconclusive: n_max reached.

    :param tail: precomputed tail index; -1 means compute it here
    """
    tol = tol if tol is not None else CONTFRAC_DEFAULTS["tol"]
    n_max = n_max or int(CONTFRAC_DEFAULTS["n_max"])
    threshold = divergence_threshold or CONTFRAC_DEFAULTS["divergence_threshold"]
    if tol <= 0:
        raise InvalidParameterError("tol", tol, "tolerance must be positive")
    if z <= 0:
        raise InvalidParameterError("z", z, "z must be positive")

    J = tail_index(weights, z) if tail == -1 else tail
    # F_1 = 1
    state = ApproximantState(A_prev=0.0, A_curr=1.0, B_prev=1.0, B_curr=1.0, n=1)
    checkpoints: dict[int, float] = {1: 1.0}
    next_check = 2

    def finish(status: EvalStatus, value: Optional[float], reason: str) -> FEvaluation:
        return FEvaluation(status, z, value, state.n, J, reason, state)

    while state.n < n_max:
        stop = min(state.n + BLOCK, n_max)
        # alpha_m = -a_{m-2} z for m in [n+1, stop]
        alphas = -z * weights.a_block(state.n - 1, stop - 1)
        for alpha in alphas.tolist():
            state.advance(alpha)
            n = state.n
            if state.B_curr <= 0.0:
                return finish(EvalStatus.DIVERGED, None, f"B_{n} <= 0")
            state.renormalize()
            value = state.value
            if value > threshold:
                return finish(EvalStatus.DIVERGED, None, f"F_{n} above {threshold:g}")
            if n == next_check:
                half = n // 2
                if J is not None and half >= J + 1:
                    if abs(value - checkpoints[half]) <= tol * max(1.0, abs(value)):
                        return finish(EvalStatus.CONVERGED, value, "depth-doubling")
                checkpoints[n] = value
                next_check *= 2

    reason = "no tail index" if J is None else f"n_max={n_max} reached"
    return finish(EvalStatus.INCONCLUSIVE, state.value, reason)


def approximants(weights: StepWeights, z: float, n: int) -> list[float]:
    """F_1..F_n by the plain recursion, without convergence tests."""
    state = ApproximantState()
    values = []
    for m in range(1, n + 1):
        state.advance(1.0 if m == 1 else -float(weights.a(m - 2)) * z)
        state.renormalize()
        values.append(state.value)
    return values


@dataclass
class MEstimate:
    """The radius of convergence, as a point when bisection closed and an interval otherwise."""

    lower: float
    upper: float
    tol: float
    probes: list[FEvaluation] = field(default_factory=list)
    root_test: Optional[float] = None

    @property
    def is_point(self) -> bool:
        return math.isinf(self.lower) or self.upper - self.lower <= self.tol

    @property
    def value(self) -> float:
        if math.isinf(self.lower):
            return math.inf
        if math.isinf(self.upper):
            return self.lower
        return 0.5 * (self.lower + self.upper)

    @property
    def root_test_gap(self) -> Optional[float]:
        """Relative gap between the bisection point and the root-test estimate."""
        if self.root_test is None or math.isinf(self.value) or math.isinf(self.root_test):
            return None
        return abs(self.root_test - self.value) / self.value

    def to_dict(self) -> dict:
        result = {
            "value": self.value if self.is_point else None,
            "interval": [self.lower, self.upper],
            "tol": self.tol,
            "root_test": self.root_test,
            "root_test_gap": self.root_test_gap,
            "probes": [[p.z, p.status] for p in self.probes],
        }
        return result


def estimate_M(
    weights: StepWeights,
    tol: float,
    root_test: Optional[RootTestResult] = None,
    bracket_limit: Optional[float] = None,
    cf_tol: Optional[float] = None,
    n_max: Optional[int] = None,
) -> MEstimate:
    """
    Bisect on z between the largest Converged and the smallest Diverged probe.

    Bracketing doubles z upward from 1 until a probe diverges, then halves downward from
    there until one converges; Inconclusive probes are skipped while bracketing. An
    Inconclusive probe during bisection stops the refinement and the estimate is returned as
    an interval.

    :param tol: width of the final bracket
    :param cf_tol: Cauchy tolerance of each evaluate_f probe
    """
    if tol <= 0:
        raise InvalidParameterError("tol", tol, "tolerance must be positive")
    bracket_limit = bracket_limit or CONTFRAC_DEFAULTS["bracket_limit"]
    rt_value = root_test.M_estimate if root_test is not None else None
    if weights.u(0) == 0:
        # a_0 = 0: f is identically 1
        return MEstimate(math.inf, math.inf, tol, [], rt_value)

    probes: list[FEvaluation] = []
    seen: dict[float, FEvaluation] = {}

    def probe(z: float) -> FEvaluation:
        if z not in seen:
            seen[z] = evaluate_f(weights, z, tol=cf_tol, n_max=n_max)
            probes.append(seen[z])
            logger.debug(f"estimate_M probe z={z:.17g}: {seen[z].status.value}")
        return seen[z]

    lo, hi = 0.0, math.inf
    z = 1.0
    while math.isinf(hi):
        if z > bracket_limit:
            logger.info(f"No divergence up to z={bracket_limit:g}; M reported as [{lo:g}, inf)")
            return MEstimate(lo, math.inf, tol, probes, rt_value)
        result = probe(z)
        if result.converged:
            lo = z
        elif result.diverged:
            hi = z
        z *= 2.0

    z = hi
    while lo == 0.0:
        z *= 0.5
        if z < 1.0 / bracket_limit:
            return MEstimate(0.0, hi, tol, probes, rt_value)
        result = probe(z)
        if result.converged:
            lo = z
        elif result.diverged:
            hi = z

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        result = probe(mid)
        if result.converged:
            lo = mid
        elif result.diverged:
            hi = mid
        else:
            logger.info(f"Inconclusive probe at z={mid:.17g}; M reported as an interval")
            break

    estimate = MEstimate(lo, hi, tol, probes, rt_value)
    gap = estimate.root_test_gap
    if gap is not None and gap > 0.05:
        logger.warning(
            f"Root test M={rt_value:.6g} and bisection M={estimate.value:.6g} differ by {gap:.1%}"
        )
    return estimate


@dataclass
class PhaseVerdict:
    verdict: Verdict
    M_estimate: Optional[MEstimate]
    d: int
    tol: float
    evidence: dict
    profile_fingerprint: str
    hypotheses: Optional[HypothesisReport] = None

    def to_dict(self) -> dict:
        result = {
            "verdict": self.verdict,
            "d": self.d,
            "tol": self.tol,
            "M_estimate": self.M_estimate.to_dict() if self.M_estimate else None,
            "evidence": self.evidence,
            "profile_fingerprint": self.profile_fingerprint,
        }
        if self.hypotheses is not None:
            result["hypotheses"] = self.hypotheses.to_dict()
        return result


def classify_phase(
    profile: RateProfile,
    d: int,
    tol: Optional[float] = None,
    estimate: bool = True,
    check: bool = True,
    cf_tol: Optional[float] = None,
    n_max: Optional[int] = None,
) -> PhaseVerdict:
    """
    Decide whether M <= d.

    g(d) diverging witnesses coexistence; g converging at both d and d + tol witnesses its
    absence. Anything else is BoundaryInconclusive, unless the bisection estimate or the
    root test places M below d - tol.

    :param estimate: also bisect for M (skipped by scans that only need the verdict)
    :param check: attach the hypothesis report
    """
    if d < 2:
        raise InvalidParameterError("d", d, "the phase criterion needs d >= 2")
    tol = tol if tol is not None else PHASE_DEFAULTS["tol"]
    if tol <= 0:
        raise InvalidParameterError("tol", tol, "tolerance must be positive")

    hypotheses = None
    if check:
        hypotheses = check_hypotheses(
            profile, PHASE_DEFAULTS["hypothesis_ell_max"], PHASE_DEFAULTS["hypothesis_k_probe"]
        )
        if not hypotheses.consistent:
            logger.warning("Phase verdict issued although a hypothesis is violated at probed range")

    weights = StepWeights(profile, ArithmeticMode.FLOAT)
    f_at_d = evaluate_f(weights, float(d), tol=cf_tol, n_max=n_max)
    f_above = evaluate_f(weights, float(d) + tol, tol=cf_tol, n_max=n_max)

    table = weighted_catalan_table(
        StepWeights(profile, ArithmeticMode.LOG), PHASE_DEFAULTS["root_test_k_max"]
    )
    root_test = root_test_estimate(table, PHASE_DEFAULTS["root_test_window"])
    m_estimate = (
        estimate_M(weights, tol, root_test, cf_tol=cf_tol, n_max=n_max) if estimate else None
    )

    if f_at_d.diverged:
        verdict = Verdict.EXPECTED_COEXISTENCE
    elif f_at_d.converged and f_above.converged:
        verdict = Verdict.NO_EXPECTED_COEXISTENCE
        if m_estimate is not None and m_estimate.upper < d + tol:
            logger.warning(f"Converged at d + tol but bisection puts M below {m_estimate.upper:.6g}")
            verdict = Verdict.BOUNDARY_INCONCLUSIVE
    elif m_estimate is not None and m_estimate.is_point and m_estimate.upper <= d - tol:
        verdict = Verdict.EXPECTED_COEXISTENCE
    elif root_test.M_estimate <= ROOT_TEST_MARGIN * (d - tol):
        # root test only breaks ties toward coexistence, outside its agreement band
        verdict = Verdict.EXPECTED_COEXISTENCE
    else:
        verdict = Verdict.BOUNDARY_INCONCLUSIVE

    evidence = {
        "g_at_d": f_at_d.to_dict(),
        "g_at_d_plus_tol": f_above.to_dict(),
        "root_test": root_test.M_estimate,
        "root_test_k_max": table.k_max,
        "tolerances": {
            "phase_tol": tol,
            "contfrac_tol": cf_tol or CONTFRAC_DEFAULTS["tol"],
            "n_max": n_max or CONTFRAC_DEFAULTS["n_max"],
            "divergence_threshold": CONTFRAC_DEFAULTS["divergence_threshold"],
        },
    }
    logger.info(f"Phase verdict for d={d}: {verdict.value}")
    return PhaseVerdict(verdict, m_estimate, d, tol, evidence, profile.fingerprint(), hypotheses)


@dataclass
class CriticalResult:
    t_star: float
    lower: float
    upper: float
    d: int
    probes: list[tuple[float, str]]

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "interval": [self.lower, self.upper],
            "d": self.d,
            "probes": [list(p) for p in self.probes],
        }


def default_t_min(d: int) -> float:
    """Lower end of the scale search; 1 / (8d) sits below the rho = 0 boundary t* ~ 1 / (4d) at large d."""
    return min(float(CRITICAL_DEFAULTS["t_min"]), 1.0 / (8 * d))


def critical_lambda(
    profile: RateProfile,
    d: int,
    t_min: Optional[float] = None,
    t_max: Optional[float] = None,
    tol: Optional[float] = None,
    grid_points: Optional[int] = None,
    phase_tol: Optional[float] = None,
) -> CriticalResult:
    """
    Locate the scale t* at which the verdict for t * lambda flips.

    The lambda vector of ``profile`` defines the direction (lambda = 1 for a pure rho
    profile); rho is held fixed.

    :raises PreconditionError: when the verdicts at t_min and t_max agree
    :raises NonMonotoneVerdictError: when the grid probes are not monotone in t
    """
    if d < 2:
        raise InvalidParameterError("d", d, "the phase criterion needs d >= 2")
    t_min = t_min if t_min is not None else default_t_min(d)
    t_max = t_max if t_max is not None else CRITICAL_DEFAULTS["t_max"]
    tol = tol if tol is not None else CRITICAL_DEFAULTS["tol"]
    grid_points = grid_points or int(CRITICAL_DEFAULTS["grid_points"])
    if not 0 < t_min < t_max:
        raise InvalidParameterError("scale_search", (t_min, t_max), "need 0 < t_min < t_max")

    if all(x == 0 for x in profile.lambda_head) and profile.lambda_tail == 0:
        profile = RateProfile(lambda_tail=1, rho_head=profile.rho_head, rho_tail=profile.rho_tail)
    check_hypotheses(
        profile, PHASE_DEFAULTS["hypothesis_ell_max"], PHASE_DEFAULTS["hypothesis_k_probe"]
    )

    probes: list[tuple[float, str]] = []

    def verdict_at(t: float) -> Verdict:
        result = classify_phase(profile.scaled_lambda(t), d, phase_tol, estimate=False, check=False)
        probes.append((t, result.verdict.value))
        logger.debug(f"critical_lambda probe t={t:.17g}: {result.verdict.value}")
        return result.verdict

    grid = np.geomspace(t_min, t_max, max(grid_points, 2)).tolist()
    verdicts = [verdict_at(t) for t in grid]
    if verdicts[0] is verdicts[-1]:
        raise PreconditionError(
            f"Verdict {verdicts[0].value} at both ends of [{t_min:g}, {t_max:g}]; no flip to locate"
        )
    levels = [v.level for v in verdicts]
    increasing = levels[-1] > levels[0]
    steps = np.diff(levels)
    if (increasing and np.any(steps < 0)) or (not increasing and np.any(steps > 0)):
        raise NonMonotoneVerdictError(sorted(probes))

    # first adjacent grid pair whose verdicts differ
    i = next(i for i in range(len(grid) - 1) if verdicts[i] is not verdicts[i + 1])
    lo, hi = grid[i], grid[i + 1]
    v_lo, v_hi = verdicts[i], verdicts[i + 1]
    if v_lo is Verdict.BOUNDARY_INCONCLUSIVE:
        return CriticalResult(lo, lo, lo, d, sorted(probes))
    if v_hi is Verdict.BOUNDARY_INCONCLUSIVE:
        return CriticalResult(hi, hi, hi, d, sorted(probes))

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        v_mid = verdict_at(mid)
        if v_mid is v_lo:
            lo = mid
        elif v_mid is v_hi:
            hi = mid
        else:
            return CriticalResult(mid, lo, hi, d, sorted(probes))

    t_star = 0.5 * (lo + hi)
    logger.info(f"Critical scale for d={d}: t*={t_star:.17g} (width {hi - lo:.3g})")
    return CriticalResult(t_star, lo, hi, d, sorted(probes))


@dataclass
class ComparisonBounds:
    """M of the rho-cutoff profile (a lower bound on M) and of the lambda-cutoff profile (upper)."""

    cutoff: int
    lower: MEstimate
    upper: MEstimate

    def to_dict(self) -> dict:
        return {"cutoff": self.cutoff, "lower": self.lower.to_dict(), "upper": self.upper.to_dict()}


def comparison_bounds(
    profile: RateProfile, m: int, tol: float, cf_tol: Optional[float] = None
) -> ComparisonBounds:
    """
    Bracket M by truncated profiles.

    Zeroing rho beyond m can only raise every C_k. Zeroing lambda beyond m while moving the
    dropped rate into death at m + 1 can only lower it. Hence M(rho cut) <= M <= M(lambda cut),
    and both truncations have eventually constant tails.
    """
    rho_cut = StepWeights(profile.with_rho_cutoff(m), ArithmeticMode.FLOAT)
    lam_cut = StepWeights(profile.with_compensated_lambda_cutoff(m), ArithmeticMode.FLOAT)
    return ComparisonBounds(
        cutoff=m,
        lower=estimate_M(rho_cut, tol, cf_tol=cf_tol),
        upper=estimate_M(lam_cut, tol, cf_tol=cf_tol),
    )


def constant_profile_radius(lam: float) -> float:
    """M = (1 + lam)^2 / (4 lam) for lambda = lam and rho = 0."""
    if lam < 0:
        raise InvalidParameterError("lam", lam)
    if lam == 0:
        return math.inf
    return (1.0 + lam) ** 2 / (4.0 * lam)


def constant_profile_g(lam: float, z: float) -> float:
    """g(z) = (1 - sqrt(1 - 4az)) / (2az) with a = lam / (1 + lam)^2, for z <= M."""
    a = lam / (1.0 + lam) ** 2
    if a == 0 or z == 0:
        return 1.0
    disc = 1.0 - 4.0 * a * z
    if disc < 0:
        return math.inf
    return 2.0 / (1.0 + math.sqrt(disc))
