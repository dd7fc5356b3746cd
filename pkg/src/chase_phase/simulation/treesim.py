"""
Continuous-time simulation of distance-dependent chase-escape on a depth-truncated d-ary tree.

Vertices are (depth, index) pairs. The extra blue vertex sits at depth 0, the root at depth 1,
and vertex (n, i) has children (n + 1, i * d + c) for c < d. Nothing below depth_cap is ever
instantiated.

A red vertex u at distance l(u) from its deepest blue ancestor spreads to each white child at
rate lambda_l, dies at rate rho_l, and is captured at rate 1 when its parent is blue (l = 1).
Events are sampled from per-class rate sums (one class per kind and distance).
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy import stats

from src.chase_phase.analysis.catalan import weighted_catalan_table
from src.chase_phase.analysis.rates import ArithmeticMode, RateProfile, StepWeights
from src.chase_phase.common import LOGGER_NAME, RUN_DEFAULTS
from src.chase_phase.exceptions import InvalidParameterError, InvariantViolationError
from src.chase_phase.simulation.jumpchain import reach_table
from src.chase_phase.simulation.seeding import check_seed, child_seed, run_batches

logger = logging.getLogger(LOGGER_NAME)

SIMULATION_DEFAULTS: dict = RUN_DEFAULTS["simulation"]

Vertex = tuple[int, int]
BASE: Vertex = (0, 0)
ROOT: Vertex = (1, 0)


class Color(Enum):
    WHITE = "w"
    BLUE = "b"
    RED = "r"
    DEAD = "†"


class EventKind(Enum):
    SPREAD = "spread"
    CAPTURE = "capture"
    DEATH = "death"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    vertex: Vertex
    source: Optional[Vertex] = None
    time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vertex": list(self.vertex),
            "source": list(self.source) if self.source else None,
            "time": self.time,
        }


class IndexedSet:
    """Set with O(1) add, remove and uniform pick."""

    def __init__(self):
        self._items: list = []
        self._pos: dict = {}

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item) -> bool:
        return item in self._pos

    def __iter__(self):
        return iter(self._items)

    def add(self, item) -> None:
        if item not in self._pos:
            self._pos[item] = len(self._items)
            self._items.append(item)

    def discard(self, item) -> None:
        pos = self._pos.pop(item, None)
        if pos is None:
            return
        last = self._items.pop()
        if pos < len(self._items):
            self._items[pos] = last
            self._pos[last] = pos

    def pick(self, x: float):
        """Element at uniform position x in [0, 1)."""
        return self._items[min(int(x * len(self._items)), len(self._items) - 1)]


class TreeState:
    """
    Sparse occupancy of the truncated tree.

    ``blue_depth`` caches, for each red vertex, the depth of its deepest blue ancestor, so
    l(u) = depth(u) - blue_depth[u]. Red vertices below a dead vertex can never turn blue;
    they are kept ``detached`` and carry no events.
    """

    def __init__(self, d: int, depth_cap: int):
        if d < 1:
            raise InvalidParameterError("d", d, "branching factor must be >= 1")
        if depth_cap < 1:
            raise InvalidParameterError("depth_cap", depth_cap, "depth_cap must be >= 1")
        self.d = d
        self.depth_cap = depth_cap
        self.states: dict[Vertex, Color] = {BASE: Color.BLUE, ROOT: Color.RED}
        self.blue_depth: dict[Vertex, int] = {ROOT: 0}
        self.red_by_ell: dict[int, IndexedSet] = {}
        self.spread_by_ell: dict[int, IndexedSet] = {}
        self.detached: set[Vertex] = set()
        self.per_depth_blue: list[int] = [1] + [0] * depth_cap
        self._activate(ROOT)

    def color(self, v: Vertex) -> Color:
        return self.states.get(v, Color.WHITE)

    def parent(self, v: Vertex) -> Vertex:
        depth, index = v
        if depth <= 1:
            return BASE
        return (depth - 1, index // self.d)

    def children(self, v: Vertex) -> list[Vertex]:
        depth, index = v
        if depth == 0:
            return [ROOT]
        if depth >= self.depth_cap:
            return []
        return [(depth + 1, index * self.d + c) for c in range(self.d)]

    def ell(self, u: Vertex) -> int:
        return u[0] - self.blue_depth[u]

    @property
    def blue_count(self) -> int:
        return sum(self.per_depth_blue)

    def _activate(self, u: Vertex) -> None:
        ell = self.ell(u)
        self.red_by_ell.setdefault(ell, IndexedSet()).add(u)
        pairs = self.spread_by_ell.setdefault(ell, IndexedSet())
        for c in self.children(u):
            if c not in self.states:
                pairs.add((u, c))

    def _deactivate(self, u: Vertex) -> None:
        ell = self.ell(u)
        if ell in self.red_by_ell:
            self.red_by_ell[ell].discard(u)
        if ell in self.spread_by_ell:
            pairs = self.spread_by_ell[ell]
            for c in self.children(u):
                pairs.discard((u, c))

    def _descendants(self, u: Vertex):
        """Instantiated non-white descendants of u, depth first."""
        stack = [c for c in self.children(u) if c in self.states]
        while stack:
            v = stack.pop()
            yield v
            stack.extend(c for c in self.children(v) if c in self.states)

    def apply(self, event: Event, index: int = 0) -> None:
        """Apply an event after checking it is legal in the current state."""
        if event.kind is EventKind.SPREAD:
            self.apply_spread(event.source, event.vertex, index)
        elif event.kind is EventKind.CAPTURE:
            self.apply_capture(event.vertex, index)
        else:
            self.apply_death(event.vertex, index)

    def apply_spread(self, u: Vertex, c: Vertex, index: int = 0) -> None:
        if self.color(u) is not Color.RED:
            raise InvariantViolationError(index, f"spread from non-red vertex {u}")
        if c not in self.children(u):
            raise InvariantViolationError(index, f"{c} is not a child of {u} within the depth cap")
        if self.color(c) is not Color.WHITE:
            raise InvariantViolationError(index, f"spread into non-white vertex {c}")
        ell = self.ell(u)
        if ell in self.spread_by_ell:
            self.spread_by_ell[ell].discard((u, c))
        self.states[c] = Color.RED
        self.blue_depth[c] = self.blue_depth[u]
        if u in self.detached:
            self.detached.add(c)
        else:
            self._activate(c)

    def apply_capture(self, u: Vertex, index: int = 0) -> None:
        if self.color(u) is not Color.RED:
            raise InvariantViolationError(index, f"capture of non-red vertex {u}")
        if self.color(self.parent(u)) is not Color.BLUE:
            raise InvariantViolationError(index, f"capture of {u} whose parent is not blue")
        self._deactivate(u)
        self.states[u] = Color.BLUE
        del self.blue_depth[u]
        self.per_depth_blue[u[0]] += 1
        # every red vertex below u now has u as its deepest blue ancestor
        for v in self._descendants(u):
            if self.states[v] is not Color.RED:
                continue
            if v in self.detached:
                self.blue_depth[v] = u[0]
            else:
                self._deactivate(v)
                self.blue_depth[v] = u[0]
                self._activate(v)

    def apply_death(self, u: Vertex, index: int = 0) -> None:
        if self.color(u) is not Color.RED:
            raise InvariantViolationError(index, f"death of non-red vertex {u}")
        if u not in self.detached:
            self._deactivate(u)
        self.states[u] = Color.DEAD
        del self.blue_depth[u]
        self.detached.discard(u)
        for v in self._descendants(u):
            if self.states[v] is Color.RED and v not in self.detached:
                self._deactivate(v)
                self.detached.add(v)

    def check_coherence(self, index: int = 0) -> None:
        """Cached l(u) equals the brute-force walk for every red vertex."""
        for v, color in self.states.items():
            if color is Color.RED:
                expected = nearest_blue_distance_bruteforce(self, v)
                if self.ell(v) != expected:
                    raise InvariantViolationError(
                        index, f"cached distance {self.ell(v)} for {v}, walk gives {expected}"
                    )

    def rate_classes(self, lam: list[float], rho: list[float]) -> list[tuple[float, EventKind, int]]:
        """Nonzero (total rate, kind, distance) classes, in a deterministic order."""
        classes = []
        for ell, reds in self.red_by_ell.items():
            n = len(reds)
            if not n:
                continue
            if ell == 1:
                classes.append((float(n), EventKind.CAPTURE, ell))
            if rho[ell] > 0.0:
                classes.append((rho[ell] * n, EventKind.DEATH, ell))
        for ell, pairs in self.spread_by_ell.items():
            if len(pairs) and lam[ell] > 0.0:
                classes.append((lam[ell] * len(pairs), EventKind.SPREAD, ell))
        return classes


def nearest_blue_distance_bruteforce(state: TreeState, u: Vertex) -> int:
    distance = 0
    v = u
    while state.color(v) is not Color.BLUE:
        v = state.parent(v)
        distance += 1
    return distance


def nearest_blue_distance(state: TreeState, u: Vertex) -> int:
    """depth(u) minus the depth of the deepest blue ancestor; cached for red vertices."""
    if state.color(u) is Color.RED:
        return state.ell(u)
    return nearest_blue_distance_bruteforce(state, u)


@dataclass
class SimOutcome:
    seed: int
    blue_count: int
    reached_cap: bool
    per_depth_blue: list[int]
    events: int
    exhausted: bool
    wall_time: float = 0.0
    sim_time: float = 0.0
    event_log: Optional[list[Event]] = field(default=None, repr=False)

    @property
    def max_blue_depth(self) -> int:
        return max(depth for depth, count in enumerate(self.per_depth_blue) if count)

    def row(self) -> dict:
        """CSV row; wall time is left out so reruns are byte-identical."""
        return {
            "seed": self.seed,
            "blue_count": self.blue_count,
            "reached_cap": self.reached_cap,
            "events": self.events,
        }


def _rates_by_distance(profile: RateProfile, depth_cap: int) -> tuple[list[float], list[float]]:
    lam = [0.0] + [float(profile.lam(i)) for i in range(1, depth_cap + 1)]
    rho = [0.0] + [float(profile.rho(i)) for i in range(1, depth_cap + 1)]
    return lam, rho


def simulate_tree(
    profile: RateProfile,
    d: int,
    depth_cap: int,
    seed: int,
    max_events: Optional[int] = None,
    audit: bool = False,
    record: bool = False,
) -> SimOutcome:
    """
    One Gillespie run until no transition is active or max_events events have fired.

    :param audit: check legality and distance-cache coherence after every event
    :param record: keep the event log on the outcome
    """
    max_events = max_events or int(SIMULATION_DEFAULTS["max_events"])
    started = time.perf_counter()
    rng = np.random.default_rng(check_seed(seed))
    state = TreeState(d, depth_cap)
    lam, rho = _rates_by_distance(profile, depth_cap)
    log: Optional[list[Event]] = [] if record else None
    clock = 0.0
    events = 0

    while events < max_events:
        classes = state.rate_classes(lam, rho)
        total = sum(rate for rate, _, _ in classes)
        if total <= 0.0:
            break
        clock += rng.exponential(1.0 / total)
        x = rng.random() * total
        for rate, kind, ell in classes:
            if x < rate:
                break
            x -= rate
        pick = rng.random()
        if kind is EventKind.SPREAD:
            source, target = state.spread_by_ell[ell].pick(pick)
            event = Event(kind, target, source, clock)
        else:
            event = Event(kind, state.red_by_ell[ell].pick(pick), None, clock)
        state.apply(event, events)
        events += 1
        if log is not None:
            log.append(event)
        if audit:
            state.check_coherence(events)

    exhausted = events >= max_events and bool(state.rate_classes(lam, rho))
    if exhausted:
        logger.warning(f"Tree run with seed {seed} stopped at max_events={max_events}")
    wall_time = time.perf_counter() - started
    return SimOutcome(
        seed=seed,
        blue_count=state.blue_count,
        reached_cap=state.per_depth_blue[depth_cap] > 0,
        per_depth_blue=list(state.per_depth_blue),
        events=events,
        exhausted=exhausted,
        wall_time=wall_time,
        sim_time=clock,
        event_log=log,
    )


@dataclass
class ReplayReport:
    events_checked: int
    blue_count: int
    per_depth_blue: list[int]


def replay_event_log(events: list[Event], d: int, depth_cap: int) -> ReplayReport:
    """
    Re-execute a recorded event log from the initial condition.

    :raises InvariantViolationError: at the first illegal event or stale distance cache
    """
    state = TreeState(d, depth_cap)
    state.check_coherence(0)
    for i, event in enumerate(events, start=1):
        state.apply(event, i)
        state.check_coherence(i)
    return ReplayReport(len(events), state.blue_count, list(state.per_depth_blue))


def _tree_batch(
    batch_index: int,
    start: int,
    size: int,
    master_seed: int,
    profile: RateProfile,
    d: int,
    depth_cap: int,
    max_events: Optional[int],
) -> list[SimOutcome]:
    return [
        simulate_tree(profile, d, depth_cap, child_seed(master_seed, run), max_events)
        for run in range(start, start + size)
    ]


def simulate_runs(
    profile: RateProfile,
    d: int,
    depth_cap: int,
    runs: int,
    seed: int,
    threads: Optional[int] = None,
    max_events: Optional[int] = None,
    batch_size: int = 1000,
) -> list[SimOutcome]:
    """Independent runs, run i seeded by child_seed(seed, i) so any batching gives the same list."""
    if runs < 1:
        raise InvalidParameterError("runs", runs, "need at least one run")
    started = time.perf_counter()
    batches = run_batches(
        _tree_batch,
        runs,
        batch_size,
        seed,
        threads,
        profile=profile,
        d=d,
        depth_cap=depth_cap,
        max_events=max_events,
    )
    outcomes = [outcome for batch in batches for outcome in batch]
    logger.info(f"{runs} tree runs (d={d}, depth_cap={depth_cap}) in {time.perf_counter() - started:.1f}s")
    return outcomes


def truncated_series(profile: RateProfile, d: int, depth_cap: int) -> float:
    """E|B restricted to depth <= depth_cap| = 1 + sum_{n=1}^{cap} d^{n-1} P(Y >= n)."""
    table = reach_table(profile, max(depth_cap, 1), ArithmeticMode.FLOAT)
    return 1.0 + sum(d ** (n - 1) * table.p_reach[n] for n in range(1, depth_cap + 1))


@dataclass
class BEstimate:
    mc_mean: float
    stderr: float
    series: float
    series_displayed: float
    lower_bound: float
    runs: int
    d: int
    depth_cap: int
    outcomes: list[SimOutcome] = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return self.mc_mean - self.series

    @property
    def within_3_stderr(self) -> bool:
        return abs(self.gap) <= 3.0 * self.stderr

    def to_dict(self) -> dict:
        return {
            "mc_mean": self.mc_mean,
            "stderr": self.stderr,
            "series": self.series,
            "series_displayed": self.series_displayed,
            "lower_bound": self.lower_bound,
            "gap": self.gap,
            "within_3_stderr": self.within_3_stderr,
            "runs": self.runs,
            "d": self.d,
            "depth_cap": self.depth_cap,
            "reached_cap_fraction": (
                sum(o.reached_cap for o in self.outcomes) / len(self.outcomes) if self.outcomes else None
            ),
        }


def expected_B_estimate(
    profile: RateProfile,
    d: int,
    depth_cap: int,
    runs: int,
    seed: int,
    threads: Optional[int] = None,
    max_events: Optional[int] = None,
) -> BEstimate:
    """
    Monte Carlo mean of blue_count against the truncated series.

    Also reports the displayed form 1 + sum_{k <= cap} P(Y = k) d^k and the renewal lower
    bound 1 + sum_{n=1}^{cap} d^{n-1} C_{n-1} / (1 + lambda_1 + rho_1).
    """
    outcomes = simulate_runs(profile, d, depth_cap, runs, seed, threads, max_events)
    counts = np.asarray([o.blue_count for o in outcomes], dtype=float)
    mean = float(counts.mean())
    stderr = float(counts.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0

    table = reach_table(profile, depth_cap + 1, ArithmeticMode.FLOAT)
    series = 1.0 + sum(d ** (n - 1) * table.p_reach[n] for n in range(1, depth_cap + 1))
    p_equal = [table.p_exact(k) for k in range(depth_cap + 1)]
    series_displayed = 1.0 + sum(p * d**k for k, p in enumerate(p_equal))

    catalan = weighted_catalan_table(StepWeights(profile, ArithmeticMode.LOG), max(depth_cap - 1, 0))
    first_exit = float(1 + profile.lam(1) + profile.rho(1))
    lower_bound = 1.0 + sum(
        d ** (n - 1) * math.exp(catalan.log_values[n - 1]) / first_exit for n in range(1, depth_cap + 1)
    )

    estimate = BEstimate(mean, stderr, series, series_displayed, lower_bound, runs, d, depth_cap, outcomes)
    if not estimate.within_3_stderr:
        logger.warning(f"MC mean {mean:.6g} is {estimate.gap:+.3g} from the series {series:.6g}")
    return estimate


@dataclass
class ChiSquareResult:
    statistic: float
    p_value: float
    dof: int
    labels: list[str]
    observed: list[int]
    expected: list[float]

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "dof": self.dof,
            "bins": dict(zip(self.labels, zip(self.observed, self.expected))),
        }


def _merge_small_bins(
    labels: list[str], observed: list[int], expected: list[float], minimum: float
) -> tuple[list[str], list[int], list[float]]:
    """Fold bins with expected count below ``minimum`` into their left neighbour, from the top."""
    labels, observed, expected = list(labels), list(observed), list(expected)
    i = len(expected) - 1
    while i > 0:
        if expected[i] < minimum:
            expected[i - 1] += expected.pop(i)
            observed[i - 1] += observed.pop(i)
            labels[i - 1] = f"{labels[i - 1]}+{labels.pop(i)}"
        i -= 1
    while len(expected) > 1 and expected[0] < minimum:
        head_expected, head_observed, head_label = expected.pop(0), observed.pop(0), labels.pop(0)
        expected[0] += head_expected
        observed[0] += head_observed
        labels[0] = f"{head_label}+{labels[0]}"
    return labels, observed, expected


def line_reach_chi_square(
    profile: RateProfile,
    runs: int,
    seed: int,
    depth_cap: int = 8,
    bins: int = 7,
    threads: Optional[int] = None,
) -> ChiSquareResult:
    """
    Chi-square test of the tree simulator at d = 1 against the exact reach distribution,
    over Y = 0..bins-1 and Y >= bins.
    """
    if depth_cap < bins:
        raise InvalidParameterError("depth_cap", depth_cap, f"need depth_cap >= {bins}")
    outcomes = simulate_runs(profile, 1, depth_cap, runs, seed, threads)
    y = np.minimum([o.max_blue_depth for o in outcomes], bins)
    observed = np.bincount(y, minlength=bins + 1).tolist()

    table = reach_table(profile, bins, ArithmeticMode.EXACT)
    probabilities = [float(1 - table.p_reach[1])]
    probabilities += [float(table.p_exact(k)) for k in range(1, bins)]
    probabilities.append(float(table.p_reach[bins]))
    expected = [p * runs for p in probabilities]
    labels = [str(k) for k in range(bins)] + [f">={bins}"]

    labels, observed, expected = _merge_small_bins(labels, observed, expected, 5.0)
    if len(expected) < 2:
        return ChiSquareResult(0.0, 1.0, 0, labels, observed, expected)
    # rescale so both sides sum to the same total exactly
    scale = sum(observed) / sum(expected)
    expected = [e * scale for e in expected]
    statistic, p_value = stats.chisquare(observed, expected)
    return ChiSquareResult(float(statistic), float(p_value), len(expected) - 1, labels, observed, expected)


def truncation_diagnostic(
    profile: RateProfile, d: int, caps: tuple[int, ...], runs: int, seed: int, threads: Optional[int] = None
) -> dict[int, float]:
    """Fraction of runs whose blue front reaches the cap, for several caps. Reported, not asserted."""
    result = {}
    for cap in caps:
        outcomes = simulate_runs(profile, d, cap, runs, seed, threads)
        result[cap] = sum(o.reached_cap for o in outcomes) / runs
    return result
