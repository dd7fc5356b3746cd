"""
The half-line process through its jump chain.

The gap between the red frontier and the blue position moves up (red spreads), down (blue
advances) or is killed (some red site between them dies). Starting from gap 1, a down-step
that lands on gap 1 after k blue advances is the renewal event at k, whose probability is the
weighted Catalan number C_k. Y is the furthest site blue reaches.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from scipy import linalg

from src.chase_phase.analysis.catalan import weighted_catalan_table
from src.chase_phase.analysis.rates import (
    ArithmeticMode,
    HypothesisReport,
    RateProfile,
    StepWeights,
    check_hypotheses,
)
from src.chase_phase.common import LOGGER_NAME, RUN_DEFAULTS, Real
from src.chase_phase.exceptions import InvalidParameterError
from src.chase_phase.simulation.seeding import check_seed, child_generator, run_batches

logger = logging.getLogger(LOGGER_NAME)

SIMULATION_DEFAULTS: dict = RUN_DEFAULTS["simulation"]


class Move(Enum):
    UP = "up"
    DOWN = "down"
    KILL = "kill"


@dataclass(frozen=True)
class StepDistribution:
    p_up: Real
    p_down: Real
    p_kill: Real


def step_distribution(
    profile: RateProfile, j: int, mode: ArithmeticMode = ArithmeticMode.EXACT
) -> StepDistribution:
    """Transition probabilities out of gap j >= 1."""
    if j < 1:
        raise InvalidParameterError("j", j, "the living chain has gap >= 1")
    weights = StepWeights(profile, mode)
    total = weights.denominator(j)
    lam = weights.lam(j)
    death = weights.death(j)
    one = Fraction(1) if weights.exact else 1.0
    p_up = lam / total
    p_down = one / total
    # the complement keeps the exact sum at 1
    p_kill = death / total if weights.exact else max(0.0, 1.0 - p_up - p_down)
    return StepDistribution(p_up, p_down, p_kill)


@dataclass
class JumpState:
    """Living chain state. gap == 0 is absorbing."""

    gap: int = 1
    step: int = 0
    renewals: list[int] = field(default_factory=lambda: [0])
    frontier: int = 1

    @property
    def blue(self) -> int:
        """Blue position, i.e. the number of down-steps so far."""
        return self.frontier - self.gap


@dataclass
class TrajectorySummary:
    seed: int
    renewals: tuple[int, ...]
    killed: bool
    frontier: int
    blue: int
    reached_target: bool
    steps: int
    exhausted: bool

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "renewals": list(self.renewals),
            "killed": self.killed,
            "frontier": self.frontier,
            "blue": self.blue,
            "reached_target": self.reached_target,
            "steps": self.steps,
            "exhausted": self.exhausted,
        }


def _probability_arrays(profile: RateProfile, max_gap: int) -> tuple[np.ndarray, np.ndarray]:
    """p_up and p_up + p_down indexed by gap 0..max_gap (gap 0 unused)."""
    weights = StepWeights(profile, ArithmeticMode.FLOAT)
    lam, death = weights.rate_block(1, max_gap + 1)
    total = 1.0 + lam + death
    p_up = np.concatenate(([0.0], lam / total))
    p_move = np.concatenate(([0.0], (lam + 1.0) / total))
    return p_up, p_move


def simulate_jump_chain(
    profile: RateProfile, seed: int, max_steps: int, k_target: int
) -> TrajectorySummary:
    """
    One trajectory of the jump chain from gap 1.

    Stops when the chain is absorbed, when blue has passed k_target (no later renewal can be
    at an index <= k_target), or after max_steps steps (flagged as exhausted).
    """
    if max_steps < 1:
        raise InvalidParameterError("max_steps", max_steps)
    rng = np.random.default_rng(check_seed(seed))
    weights = StepWeights(profile, ArithmeticMode.FLOAT)
    state = JumpState()
    killed = False
    while state.step < max_steps:
        g = state.gap
        total = weights.denominator(g)
        p_up = weights.lam(g) / total
        p_down = 1.0 / total
        x = rng.random()
        state.step += 1
        if x < p_up:
            state.gap += 1
            state.frontier += 1
        elif x < p_up + p_down:
            state.gap -= 1
            if state.gap == 0:
                break
            if state.gap == 1:
                state.renewals.append(state.blue)
            if state.blue > k_target:
                break
        else:
            killed = True
            state.gap = 0
            break
    exhausted = state.gap > 0 and state.step >= max_steps and state.blue <= k_target
    if exhausted:
        logger.warning(f"Jump chain with seed {seed} exhausted max_steps={max_steps}")
    return TrajectorySummary(
        seed=seed,
        renewals=tuple(state.renewals),
        killed=killed,
        frontier=state.frontier,
        blue=state.blue,
        reached_target=state.frontier >= k_target,
        steps=state.step,
        exhausted=exhausted,
    )


def _renewal_batch(
    batch_index: int, start: int, size: int, master_seed: int, profile: RateProfile, k_max: int
) -> np.ndarray:
    """
    Renewal counts for one batch, all trajectories advanced in lock step.

    A renewal at k needs exactly k ups before it, so a trajectory is retired once it has made
    more than k_max up-steps; this bounds every trajectory by 2 k_max + 2 steps.
    """
    rng = child_generator(master_seed, batch_index)
    p_up, p_move = _probability_arrays(profile, k_max + 2)
    counts = np.zeros(k_max + 1, dtype=np.int64)
    counts[0] = size
    gap = np.ones(size, dtype=np.int64)
    ups = np.zeros(size, dtype=np.int64)
    downs = np.zeros(size, dtype=np.int64)
    while gap.size:
        x = rng.random(gap.size)
        up = x < p_up[gap]
        down = ~up & (x < p_move[gap])
        gap = gap + up - down
        ups = ups + up
        downs = downs + down
        renewal = down & (gap == 1)
        np.add.at(counts, downs[renewal], 1)
        # killed, caught up, or past the last renewal index of interest
        alive = (up | down) & (gap > 0) & (ups <= k_max)
        gap, ups, downs = gap[alive], ups[alive], downs[alive]
    return counts


@dataclass
class RenewalFrequencies:
    n_runs: int
    counts: list[int]
    seed: int

    def frequency(self, k: int) -> float:
        return self.counts[k] / self.n_runs

    def stderr(self, k: int) -> float:
        p = self.frequency(k)
        return math.sqrt(p * (1.0 - p) / self.n_runs)

    def rows(self) -> list[dict]:
        return [
            {"k": k, "frequency": self.frequency(k), "stderr": self.stderr(k), "N": self.n_runs}
            for k in range(len(self.counts))
        ]


def renewal_frequencies(
    profile: RateProfile,
    n_runs: int,
    k_max: int,
    seed: int,
    threads: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> RenewalFrequencies:
    """Monte Carlo frequency of the renewal event at k = 0..k_max over n_runs trajectories."""
    if n_runs < 1:
        raise InvalidParameterError("n_runs", n_runs)
    if k_max < 0:
        raise InvalidParameterError("k_max", k_max)
    batch_size = batch_size or int(SIMULATION_DEFAULTS["batch_size"])
    results = run_batches(
        _renewal_batch, n_runs, batch_size, seed, threads, profile=profile, k_max=k_max
    )
    counts = np.sum(results, axis=0)
    logger.info(f"Simulated {n_runs} jump-chain trajectories up to k={k_max}")
    return RenewalFrequencies(n_runs, [int(c) for c in counts], seed)


def renewal_probability_exact(profile: RateProfile, k: int) -> Fraction:
    """P(renewal at k) = C_k."""
    if k < 0:
        raise InvalidParameterError("k", k)
    return weighted_catalan_table(StepWeights(profile, ArithmeticMode.EXACT), k).values[k]


def sigma_of_ell(profile: RateProfile, ell: int, mode: ArithmeticMode = ArithmeticMode.EXACT) -> Real:
    """prod_{n=1}^{ell} 1/(1 + D_n): blue crosses ell red sites before any of them dies."""
    if ell < 1:
        raise InvalidParameterError("ell", ell)
    death = StepWeights(profile, mode).death
    one = Fraction(1) if mode is ArithmeticMode.EXACT else 1.0
    result = one
    for n in range(1, ell + 1):
        result /= one + death(n)
    return result


@dataclass
class PathWeightAccounting:
    """Per-height visit counts of a living path and its probability."""

    height_profile: dict[int, int]
    up_profile: dict[int, int]
    p_of_path: Real


def path_weight_accounting(
    profile: RateProfile, moves: list[Move], mode: ArithmeticMode = ArithmeticMode.EXACT
) -> PathWeightAccounting:
    """
    p(J) = prod_i lambda_i^{ups from i} * prod_j (1 + lambda_j + D_j)^{-visits to j}
    for a living path given as up/down moves from gap 1.
    """
    weights = StepWeights(profile, mode)
    visits: dict[int, int] = {}
    ups: dict[int, int] = {}
    height = 1
    for move in moves:
        if height < 1 or move is Move.KILL:
            raise InvalidParameterError("moves", move, "not a living path")
        visits[height] = visits.get(height, 0) + 1
        if move is Move.UP:
            ups[height] = ups.get(height, 0) + 1
            height += 1
        else:
            height -= 1
    if height < 1:
        raise InvalidParameterError("moves", moves, "path leaves the living states")
    p: Real = Fraction(1) if weights.exact else 1.0
    for i, count in ups.items():
        p *= weights.lam(i) ** count
    for j, count in visits.items():
        p /= weights.denominator(j) ** count
    return PathWeightAccounting(visits, ups, p)


@dataclass
class ReachTable:
    """P(Y >= k) for k = 0..k_max, with the decomposition terms q(k, ell) and sigma(ell)."""

    p_reach: dict[int, Real]
    q: dict[tuple[int, int], Real]
    sigma: dict[int, Real]
    mode: ArithmeticMode

    @property
    def k_max(self) -> int:
        return max(self.p_reach)

    def p_exact(self, k: int) -> Real:
        """P(Y = k); needs k + 1 in the table."""
        return self.p_reach[k] - self.p_reach[k + 1]

    def rows(self) -> list[dict]:
        return [{"k": k, "P(Y>=k)": self.p_reach[k]} for k in sorted(self.p_reach)]


def reach_table(
    profile: RateProfile, k_max: int, mode: ArithmeticMode = ArithmeticMode.EXACT
) -> ReachTable:
    """
    P(Y >= k) for every k <= k_max by one forward DP over (ups, downs).

    W(u, d) is the mass of living paths with u up-steps and d down-steps (gap 1 + u - d >= 1).
    The frontier reaches k with the up-step into u = k - 1; the gap is then ell = k - d and
    blue must cross ell sites before any dies, contributing q(k, ell) = W * p_up * sigma(ell).
    """
    if k_max < 1:
        raise InvalidParameterError("k_max", k_max, "need k_max >= 1")
    weights = StepWeights(profile, mode)
    zero = Fraction(0) if weights.exact else 0.0
    one = Fraction(1) if weights.exact else 1.0

    sigma: dict[int, Real] = {}
    acc = one
    for ell in range(1, k_max + 1):
        acc /= one + weights.death(ell)
        sigma[ell] = acc

    def p_up(g: int) -> Real:
        return weights.lam(g) / weights.denominator(g)

    def p_down(g: int) -> Real:
        return one / weights.denominator(g)

    p_reach: dict[int, Real] = {0: one, 1: sigma[1]}
    q: dict[tuple[int, int], Real] = {(1, 1): sigma[1]}
    row = [one]  # W(u, d) for d = 0..u at the current u
    for u in range(0, k_max - 1):
        # close row u under down-steps that keep the gap >= 1
        for d in range(1, u + 1):
            row[d] += row[d - 1] * p_down(2 + u - d)
        # up-steps into row u + 1, which is where the frontier reaches k = u + 2
        arrivals = [row[d] * p_up(1 + u - d) for d in range(u + 1)]
        k = u + 2
        total = zero
        for d, mass in enumerate(arrivals):
            ell = k - d
            q[(k, ell)] = mass * sigma[ell]
            total += q[(k, ell)]
        p_reach[k] = total
        row = [*arrivals, zero]
    logger.debug(f"Reach table to k={k_max} in {mode.value} mode")
    return ReachTable(p_reach, q, sigma, mode)


def reach_probability_exact(
    profile: RateProfile, k: int, mode: ArithmeticMode = ArithmeticMode.EXACT
) -> Real:
    """P(Y >= k); k = 1 reduces to 1 / (1 + D_1)."""
    if k < 1:
        raise InvalidParameterError("k", k, "k >= 1")
    if k == 1:
        return sigma_of_ell(profile, 1, mode)
    return reach_table(profile, k, mode).p_reach[k]


def reach_probability_oracle(profile: RateProfile, k: int) -> float:
    """
    P(Y >= k) by a linear solve over (blue position b, red frontier r), 0 <= b < r <= k.

    With gap g = r - b, red spreads at rate lambda_g while r < k, blue advances at rate 1
    and some red site dies at total rate D_g. Reaching b = k is success; any death, or blue
    catching the frontier short of k, is failure.
    """
    if k < 1:
        raise InvalidParameterError("k", k, "k >= 1")
    states = [(b, r) for r in range(1, k + 1) for b in range(r)]
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    matrix = np.eye(n)
    rhs = np.zeros(n)
    for (b, r), i in index.items():
        g = r - b
        lam = float(profile.lam(g)) if r < k else 0.0
        death = float(profile.cumulative_death(g))
        total = lam + 1.0 + death
        if lam > 0:
            matrix[i, index[(b, r + 1)]] -= lam / total
        if b + 1 == k:
            rhs[i] += 1.0 / total
        elif b + 1 < r:
            matrix[i, index[(b + 1, r)]] -= 1.0 / total
    solution = linalg.solve(matrix, rhs)
    return float(solution[index[(0, 1)]])


@dataclass
class LemmaRow:
    k: int
    p_reach: float
    c_k: float
    ratio: Optional[float]
    bounded: Optional[bool]
    bounded_displayed: Optional[bool]
    sandwich: bool
    lower_bound: float
    p_equal: float
    lower_ok: bool


@dataclass
class LemmaReport:
    """Ratios P(Y >= k) / (k^{1+m} C_k) against the constant c0."""

    c: float
    m: float
    c0: Optional[float]
    c0_displayed: Optional[float]
    r_ell: dict[int, float]
    rows: list[LemmaRow]
    status: str
    hypotheses: Optional[HypothesisReport] = None

    @property
    def all_bounded(self) -> Optional[bool]:
        flags = [row.bounded for row in self.rows if row.bounded is not None]
        return all(flags) if flags else None

    @property
    def sandwich_holds(self) -> bool:
        return all(row.sandwich for row in self.rows)

    @property
    def lower_bound_holds(self) -> bool:
        return all(row.lower_ok for row in self.rows)

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "m": self.m,
            "c0": self.c0,
            "c0_displayed": self.c0_displayed,
            "status": self.status,
            "all_bounded": self.all_bounded,
            "sandwich_holds": self.sandwich_holds,
            "lower_bound_holds": self.lower_bound_holds,
            "r_ell": self.r_ell,
            "rows": [vars(row) for row in self.rows],
        }


def _lemma_constants(
    profile: RateProfile, c: float, m: float, ell_max: int
) -> tuple[float, float, dict[int, float]]:
    """(effective c0, displayed c0, per-ell exact factors r_ell)."""
    lam = [None, *(profile.lam(i) for i in range(1, ell_max + 1))]
    death = [profile.cumulative_death(i) for i in range(ell_max + 1)]
    lam_1 = lam[1]
    top = (1 + lam[1] + death[1]) * (1 + lam[2] + death[2])
    f_2 = top / ((1 + death[2]) * (1 + death[1]))
    c0_displayed = c * float(f_2)

    # max_i lambda_i / lambda_1 over the head and the tail
    lam_ratio = max([*profile.lambda_head, profile.lambda_tail]) / lam_1
    renewal_factor = (1 + lam[1] + death[1]) * (1 + lam[2] + death[2]) ** 2 / lam_1
    c_eff = max(c, *(float(ell) ** -m for ell in (2, 3, 4)))
    c0 = c_eff * float(f_2) * float(lam_ratio) * float(renewal_factor)

    r_ell: dict[int, float] = {2: 1.0}
    product = Fraction(1)
    for ell in range(3, ell_max + 1):
        if ell - 2 >= 3:
            j = ell - 2
            product *= 1 + lam[j] / (1 + death[j])
        r = (lam[ell - 1] / lam_1) * top * product / ((1 + death[ell - 1]) * (1 + death[ell]))
        r_ell[ell] = float(r)
    return c0, c0_displayed, r_ell


def lemma_bound_check(
    profile: RateProfile,
    k_max: int,
    c: float,
    m: float,
    hypotheses: Optional[HypothesisReport] = None,
) -> LemmaReport:
    """
    For k = 2..k_max report P(Y >= k) / (k^{1+m} C_k) with the flag ratio <= c0, the sandwich
    C_k <= P(Y >= k), and the lower bound C_{k-1} / (1 + lambda_1 + rho_1) <= P(Y = k).

    Violations are data. When a hypothesis is violated the ratio flags are reported but not
    attributed to the lemma.
    """
    if k_max < 2:
        raise InvalidParameterError("k_max", k_max, "need k_max >= 2")
    if hypotheses is None:
        hypotheses = check_hypotheses(profile, max(k_max, 5), max(2 * k_max, 2))

    catalan = weighted_catalan_table(StepWeights(profile, ArithmeticMode.EXACT), k_max)
    reach = reach_table(profile, k_max + 1)
    lam_1 = profile.lam(1)
    first_exit = 1 + lam_1 + profile.rho(1)

    if lam_1 == 0:
        c0 = c0_displayed = None
        r_ell: dict[int, float] = {}
        status = "skipped: lambda_1 = 0, every C_k with k >= 1 vanishes"
    else:
        c0, c0_displayed, r_ell = _lemma_constants(profile, c, m, k_max)
        status = "checked" if hypotheses.consistent else (
            f"hypothesis violated (growth: {hypotheses.growth_status}; "
            f"decay: {hypotheses.decay_status}); ratios reported, not attributed to the lemma"
        )

    rows = []
    for k in range(2, k_max + 1):
        p = reach.p_reach[k]
        c_k = catalan.values[k]
        ratio = bounded = bounded_displayed = None
        if c0 is not None and c_k > 0:
            ratio = float(p / c_k) / k ** (1 + m)
            bounded = ratio <= c0
            bounded_displayed = ratio <= c0_displayed
        lower = catalan.values[k - 1] / first_exit
        p_equal = reach.p_exact(k)
        rows.append(
            LemmaRow(
                k=k,
                p_reach=float(p),
                c_k=float(c_k),
                ratio=ratio,
                bounded=bounded,
                bounded_displayed=bounded_displayed,
                sandwich=c_k <= p,
                lower_bound=float(lower),
                p_equal=float(p_equal),
                lower_ok=lower <= p_equal,
            )
        )
    report = LemmaReport(c, m, c0, c0_displayed, r_ell, rows, status, hypotheses)
    if report.all_bounded is False:
        logger.warning(f"Lemma ratio exceeds c0={c0:.6g} ({status})")
    return report


def reach_rows(
    table: ReachTable,
    catalan_values: list,
    frequencies: Optional[RenewalFrequencies] = None,
) -> list[dict]:
    """CSV rows: k, C_k, P(Y >= k), MC estimate, stderr, N."""
    rows = []
    for k in range(1, table.k_max + 1):
        row: dict[str, Union[int, Real, None]] = {
            "k": k,
            "C_k": catalan_values[k] if k < len(catalan_values) else None,
            "P(Y>=k)": table.p_reach[k],
            "MC": None,
            "stderr": None,
            "N": None,
        }
        if frequencies is not None and k < len(frequencies.counts):
            row.update(
                {"MC": frequencies.frequency(k), "stderr": frequencies.stderr(k), "N": frequencies.n_runs}
            )
        rows.append(row)
    return rows
