"""
Weighted Catalan numbers.

C_k sums, over all Dyck paths of length 2k, the product of u(j) for each rise from height j
and v(j) for each fall from height j+1 to j. The production path is a forward DP over
(step, height); brute-force enumeration is kept as an oracle for small k.
"""

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from src.chase_phase.analysis.rates import ArithmeticMode, StepWeights
from src.chase_phase.common import LOGGER_NAME, Real
from src.chase_phase.exceptions import (
    EnumerationLimitError,
    InsufficientDataError,
    InvalidParameterError,
    NumericalUnderflowError,
)

logger = logging.getLogger(LOGGER_NAME)

ENUMERATION_LIMIT: int = 16


class Step(Enum):
    RISE = "U"
    FALL = "D"


@dataclass(frozen=True)
class DyckPath:
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        height = 0
        for step in self.steps:
            height += 1 if step is Step.RISE else -1
            if height < 0:
                raise InvalidParameterError("steps", self.as_string(), "path dips below height 0")
        if height != 0:
            raise InvalidParameterError("steps", self.as_string(), "path does not return to 0")

    @classmethod
    def from_string(cls, text: str) -> "DyckPath":
        """Build from a word over {U, D}, e.g. "UUDD"."""
        return cls(tuple(Step(ch) for ch in text.upper()))

    def as_string(self) -> str:
        return "".join(step.value for step in self.steps)

    @property
    def k(self) -> int:
        return len(self.steps) // 2

    @property
    def height(self) -> int:
        """Maximum height reached."""
        best = height = 0
        for step in self.steps:
            height += 1 if step is Step.RISE else -1
            best = max(best, height)
        return best


def path_weight(path: DyckPath, weights: StepWeights) -> Real:
    """Product of u(j) over rises from height j and v(j) over falls from j+1 to j."""
    result: Real = Fraction(1) if weights.exact else 1.0
    height = 0
    for step in path.steps:
        if step is Step.RISE:
            result *= weights.u(height)
            height += 1
        else:
            height -= 1
            result *= weights.v(height)
    return result


def _dyck_words(k: int) -> Iterator[tuple[Step, ...]]:
    prefix: list[Step] = []

    def extend(rises: int, falls: int) -> Iterator[tuple[Step, ...]]:
        if rises == k and falls == k:
            yield tuple(prefix)
            return
        if rises < k:
            prefix.append(Step.RISE)
            yield from extend(rises + 1, falls)
            prefix.pop()
        if falls < rises:
            prefix.append(Step.FALL)
            yield from extend(rises, falls + 1)
            prefix.pop()

    yield from extend(0, 0)


def enumerate_dyck_paths(k: int) -> Iterator[DyckPath]:
    """
    Yield every Dyck path of length 2k exactly once, in lexicographic order with U < D.

    :raises EnumerationLimitError: for k above ENUMERATION_LIMIT
    """
    if k < 0:
        raise InvalidParameterError("k", k)
    if k > ENUMERATION_LIMIT:
        raise EnumerationLimitError(k, ENUMERATION_LIMIT)
    for word in _dyck_words(k):
        yield DyckPath(word)


def brute_force_catalan(weights: StepWeights, k: int, max_height: Optional[int] = None) -> Real:
    """Sum of path weights over Dyck paths of length 2k, optionally of height <= max_height."""
    total: Real = Fraction(0) if weights.exact else 0.0
    for path in enumerate_dyck_paths(k):
        if max_height is None or path.height <= max_height:
            total += path_weight(path, weights)
    return total


def ordinary_catalan(k: int) -> int:
    return math.comb(2 * k, k) // (k + 1)


def log_of(value: Real) -> float:
    """Natural log that survives rationals far below the float range."""
    if value == 0:
        return -math.inf
    if isinstance(value, Fraction):
        return math.log(value.numerator) - math.log(value.denominator)
    return math.log(value)


@dataclass
class CatalanTable:
    """C_0..C_K with the arithmetic mode and the fingerprint of the generating profile."""

    values: list
    log_values: list[float]
    mode: ArithmeticMode
    weights_fingerprint: str
    max_a: float = field(default=0.0)

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> Real:
        return self.values[k]

    def upper_bound(self, k: int) -> float:
        """Cat_k * (max_j a_j)^k, the trivial upper bound on C_k."""
        return ordinary_catalan(k) * self.max_a**k

    def inverse_root(self, k: int) -> float:
        """C_k^{-1/k}; inf when C_k = 0."""
        if k < 1:
            raise InvalidParameterError("k", k, "the root test starts at k = 1")
        log_c = self.log_values[k]
        return math.inf if log_c == -math.inf else math.exp(-log_c / k)

    def series(self, z: float, k_max: Optional[int] = None) -> float:
        """Partial sum of C_k z^k for k <= k_max."""
        if z <= 0:
            return 1.0
        top = self.k_max if k_max is None else min(k_max, self.k_max)
        logs = np.asarray(self.log_values[: top + 1]) + np.arange(top + 1) * math.log(z)
        return float(np.sum(np.exp(logs)))

    def rows(self) -> list[dict]:
        """CSV rows: k, C_k, C_k^{-1/k}."""
        return [
            {
                "k": k,
                "C_k": self.values[k],
                "C_k^{-1/k}": None if k == 0 else self.inverse_root(k),
            }
            for k in range(self.k_max + 1)
        ]


def _exact_table(weights: StepWeights, k_max: int) -> list[Fraction]:
    u = weights.u_sequence(k_max)
    v = weights.v_sequence(k_max)
    row = [Fraction(0)] * (k_max + 1)
    row[0] = Fraction(1)
    values = [Fraction(1)]
    for n in range(2 * k_max):
        nxt = [Fraction(0)] * (k_max + 1)
        # heights above the remaining return distance cannot come back to 0
        top = min(n, 2 * k_max - n)
        for h in range(top + 1):
            w = row[h]
            if not w:
                continue
            if h < k_max:
                nxt[h + 1] += w * u[h]
            if h > 0:
                nxt[h - 1] += w * v[h - 1]
        row = nxt
        if n % 2 == 1:
            values.append(row[0])
    return values


def _float_table(weights: StepWeights, k_max: int, rescale: bool) -> tuple[list[float], list[float]]:
    u = np.asarray(weights.u_sequence(k_max), dtype=float)
    v = np.asarray(weights.v_sequence(k_max), dtype=float)
    row = np.zeros(k_max + 1)
    row[0] = 1.0
    log_scale = 0.0
    values = [1.0]
    log_values = [0.0]
    for n in range(2 * k_max):
        nxt = np.zeros_like(row)
        nxt[1:] += row[:-1] * u
        nxt[:-1] += row[1:] * v
        row = nxt
        if rescale:
            peak = row.max()
            if peak > 0.0:
                row /= peak
                log_scale += math.log(peak)
        if n % 2 == 1:
            c = row[0]
            log_c = math.log(c) + log_scale if c > 0.0 else -math.inf
            log_values.append(log_c)
            values.append(math.exp(log_c) if rescale else float(c))
    return values, log_values


def weighted_catalan_table(weights: StepWeights, k_max: int) -> CatalanTable:
    """
    C_0..C_{k_max} by forward DP over (step, height), in the mode of ``weights``.

    :raises NumericalUnderflowError: in float mode when a positive C_k rounds to 0
    """
    if k_max < 0:
        raise InvalidParameterError("k_max", k_max)
    mode = weights.mode
    if mode is ArithmeticMode.EXACT:
        values = _exact_table(weights, k_max)
        log_values = [log_of(c) for c in values]
    else:
        values, log_values = _float_table(weights, k_max, rescale=mode is ArithmeticMode.LOG)
        if mode is ArithmeticMode.FLOAT and weights.u(0) > 0:
            # C_k > 0 for every k whenever lambda_1 > 0
            for k, c in enumerate(values):
                if c == 0.0:
                    raise NumericalUnderflowError(k, mode.value)

    table = CatalanTable(
        values=values,
        log_values=log_values,
        mode=mode,
        weights_fingerprint=weights.profile.fingerprint(),
        max_a=float(weights.max_a(max(k_max, weights.profile.head_length + 1))),
    )
    logger.debug(f"Catalan table to k={k_max} in {mode.value} mode for {table.weights_fingerprint}")
    return table


@dataclass
class RootTestResult:
    M_estimate: float
    inverse_roots: list[tuple[int, float]]
    window: int

    def to_dict(self) -> dict:
        return {
            "M_estimate": self.M_estimate,
            "window": self.window,
            "inverse_roots": {k: r for k, r in self.inverse_roots},
        }


def root_test_estimate(table: CatalanTable, window: int) -> RootTestResult:
    """
    1 / max C_k^{1/k} over the trailing window, a lower-confidence estimate of M.

    Returns M = inf when the table vanishes for every k >= 1.
    """
    if window < 2:
        raise InvalidParameterError("window", window, "need at least two terms")
    if table.k_max < window:
        raise InsufficientDataError(f"table has {table.k_max} terms, window needs {window}")

    inverse_roots = [(k, table.inverse_root(k)) for k in range(1, table.k_max + 1)]
    trailing = [r for _, r in inverse_roots[-window:]]
    if all(math.isinf(r) for _, r in inverse_roots):
        return RootTestResult(math.inf, inverse_roots, window)
    if any(math.isinf(r) for r in trailing):
        raise InsufficientDataError(f"trailing window of {window} terms contains zeros")
    return RootTestResult(min(trailing), inverse_roots, window)
