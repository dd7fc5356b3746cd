"""
Rate vectors of distance-dependent chase-escape and the quantities derived from them.

A rate vector (lambda_1, lambda_2, ...) is stored as a finite head followed by a constant
tail. Indices are 1-based throughout. Values are held as exact rationals; float views are
produced on demand by ``StepWeights`` in the requested arithmetic mode.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from cachetools import LRUCache, cachedmethod

from src.chase_phase.common import LOGGER_NAME, Real, fingerprint
from src.chase_phase.exceptions import InvalidParameterError, InvalidProfileError

logger = logging.getLogger(LOGGER_NAME)

Number = Union[int, float, str, Fraction]

MEMO_SIZE: int = 1 << 16

CONSISTENT: str = "consistent at probed range"


class ArithmeticMode(Enum):
    """How weights and Catalan numbers are computed."""

    EXACT = "exact"
    FLOAT = "float"
    LOG = "log"  # floating point with per-step rescaling, tracked in log space


class Which(Enum):
    LAMBDA = "lambda"
    RHO = "rho"


def to_fraction(value: Number, field_name: str = "rate", index: Optional[int] = None) -> Fraction:
    """
    Convert a user-supplied rate to an exact rational.

    Floats go through their shortest repr so that 0.1716 becomes 1716/10000 rather than
    the binary expansion.
    """
    if isinstance(value, bool):
        raise InvalidProfileError(field_name, index, f"expected a number, got {value!r}")
    try:
        if isinstance(value, Fraction):
            result = value
        elif isinstance(value, int):
            result = Fraction(value)
        elif isinstance(value, float):
            if not math.isfinite(value):
                raise InvalidProfileError(field_name, index, f"rate must be finite, got {value!r}")
            result = Fraction(repr(value))
        elif isinstance(value, str):
            result = Fraction(value.strip())
        else:
            raise InvalidProfileError(field_name, index, f"expected a number, got {value!r}")
    except (ValueError, ZeroDivisionError) as e:
        raise InvalidProfileError(field_name, index, f"not a decimal: {value!r}") from e
    if result < 0:
        raise InvalidProfileError(field_name, index, f"rate must be nonnegative, got {value}")
    return result


def _coerce_head(values, field_name: str) -> tuple[Fraction, ...]:
    return tuple(to_fraction(v, field_name, i) for i, v in enumerate(values, start=1))


@dataclass(frozen=True)
class RateProfile:
    """
    The rate vectors lambda and rho, each a finite head plus a constant tail.

    Heads may be empty, in which case the tail applies from index 1.
    """

    lambda_head: tuple[Fraction, ...] = ()
    lambda_tail: Fraction = Fraction(0)
    rho_head: tuple[Fraction, ...] = ()
    rho_tail: Fraction = Fraction(0)
    name: Optional[str] = None
    _rho_prefix: tuple[Fraction, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "lambda_head", _coerce_head(self.lambda_head, "lambda.head"))
        object.__setattr__(self, "rho_head", _coerce_head(self.rho_head, "rho.head"))
        object.__setattr__(self, "lambda_tail", to_fraction(self.lambda_tail, "lambda.tail"))
        object.__setattr__(self, "rho_tail", to_fraction(self.rho_tail, "rho.tail"))
        prefix = [Fraction(0)]
        for rho in self.rho_head:
            prefix.append(prefix[-1] + rho)
        object.__setattr__(self, "_rho_prefix", tuple(prefix))

    @classmethod
    def constant(cls, lam: Number, rho: Number, name: Optional[str] = None) -> "RateProfile":
        """Profile with lambda_i = lam and rho_i = rho for every i >= 1."""
        return cls(lambda_tail=lam, rho_tail=rho, name=name)

    @property
    def head_length(self) -> int:
        """Index beyond which both vectors are constant."""
        return max(len(self.lambda_head), len(self.rho_head))

    def rate_at(self, which: Which, i: int) -> Fraction:
        if i < 1:
            raise InvalidParameterError("i", i, "rate indices are 1-based")
        head, tail = (
            (self.lambda_head, self.lambda_tail)
            if which is Which.LAMBDA
            else (self.rho_head, self.rho_tail)
        )
        return head[i - 1] if i <= len(head) else tail

    def lam(self, i: int) -> Fraction:
        return self.rate_at(Which.LAMBDA, i)

    def rho(self, i: int) -> Fraction:
        return self.rate_at(Which.RHO, i)

    def cumulative_death(self, j: int) -> Fraction:
        if j < 0:
            raise InvalidParameterError("j", j, "D_j is defined for j >= 0")
        n_head = len(self.rho_head)
        if j <= n_head:
            return self._rho_prefix[j]
        return self._rho_prefix[n_head] + (j - n_head) * self.rho_tail

    def scaled_lambda(self, t: Number) -> "RateProfile":
        """The member t * lambda of the one-parameter family through this profile."""
        scale = to_fraction(t, "scale")
        return RateProfile(
            lambda_head=tuple(scale * x for x in self.lambda_head),
            lambda_tail=scale * self.lambda_tail,
            rho_head=self.rho_head,
            rho_tail=self.rho_tail,
            name=self.name,
        )

    def with_lambda_cutoff(self, m: int) -> "RateProfile":
        """Same profile with lambda_i = 0 for every i > m."""
        if m < 0:
            raise InvalidParameterError("m", m)
        head = tuple(self.lam(i) for i in range(1, m + 1))
        return RateProfile(head, Fraction(0), self.rho_head, self.rho_tail, self.name)

    def with_compensated_lambda_cutoff(self, m: int) -> "RateProfile":
        """
        lambda_i = 0 for i > m, with the largest dropped lambda added to rho_{m+1}.

        Every u(j) and v(j) of the result is at most the matching weight of this profile,
        so every C_k can only decrease.
        """
        cut = self.with_lambda_cutoff(m)
        dropped = max([self.lam(i) for i in range(m + 1, len(self.lambda_head) + 1)] + [self.lambda_tail])
        rho_head = [self.rho(i) for i in range(1, max(m + 1, len(self.rho_head)) + 1)]
        rho_head[m] += dropped
        return RateProfile(cut.lambda_head, Fraction(0), tuple(rho_head), self.rho_tail, self.name)

    def with_rho_cutoff(self, m: int) -> "RateProfile":
        """Same profile with rho_i = 0 for every i > m."""
        if m < 0:
            raise InvalidParameterError("m", m)
        head = tuple(self.rho(i) for i in range(1, m + 1))
        return RateProfile(self.lambda_head, self.lambda_tail, head, Fraction(0), self.name)

    def extended_head(self, n: int) -> "RateProfile":
        """Equivalent profile whose heads are padded with tail values up to length n."""
        lam_head = tuple(self.lam(i) for i in range(1, max(n, len(self.lambda_head)) + 1))
        rho_head = tuple(self.rho(i) for i in range(1, max(n, len(self.rho_head)) + 1))
        return RateProfile(lam_head, self.lambda_tail, rho_head, self.rho_tail, self.name)

    def canonical(self) -> "RateProfile":
        """Representation with trailing head entries equal to the tail removed."""
        lam_head = list(self.lambda_head)
        while lam_head and lam_head[-1] == self.lambda_tail:
            lam_head.pop()
        rho_head = list(self.rho_head)
        while rho_head and rho_head[-1] == self.rho_tail:
            rho_head.pop()
        return RateProfile(tuple(lam_head), self.lambda_tail, tuple(rho_head), self.rho_tail, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lambda": {"head": list(self.lambda_head), "tail": self.lambda_tail},
            "rho": {"head": list(self.rho_head), "tail": self.rho_tail},
        }

    def fingerprint(self) -> str:
        """Hash of the canonical rate data; the name does not participate."""
        payload = self.canonical().to_dict()
        payload.pop("name")
        return fingerprint(payload)


def rate_at(profile: RateProfile, which: Union[Which, str], i: int) -> Fraction:
    return profile.rate_at(Which(which), i)


def cumulative_death(profile: RateProfile, j: int) -> Fraction:
    """D_j = rho_1 + ... + rho_j, closed form beyond the head."""
    return profile.cumulative_death(j)


class CumulativeDeath:
    """Memoized D_j in a chosen arithmetic mode, safe for concurrent readers."""

    def __init__(self, profile: RateProfile, mode: ArithmeticMode = ArithmeticMode.EXACT):
        self.profile = profile
        self.mode = mode
        self._cache: LRUCache = LRUCache(maxsize=MEMO_SIZE)
        self._lock = threading.Lock()

    @cachedmethod(lambda self: self._cache, lock=lambda self: self._lock)
    def __call__(self, j: int) -> Real:
        value = self.profile.cumulative_death(j)
        return value if self.mode is ArithmeticMode.EXACT else float(value)

    def __getstate__(self):
        return {"profile": self.profile, "mode": self.mode}

    def __setstate__(self, state):
        self.__init__(state["profile"], state["mode"])


class StepWeights:
    """
    The weights u(j), v(j) and a(j) = u(j) v(j).

    u(j) = lambda_{j+1} / (1 + lambda_{j+1} + D_{j+1})
    v(j) = 1 / (1 + lambda_{j+2} + D_{j+2}), also defined at j = -1
    """

    def __init__(self, profile: RateProfile, mode: ArithmeticMode = ArithmeticMode.EXACT):
        self.profile = profile
        self.mode = mode
        self.death = CumulativeDeath(profile, mode)
        self._cache: LRUCache = LRUCache(maxsize=MEMO_SIZE)
        self._lock = threading.Lock()

    def __getstate__(self):
        return {"profile": self.profile, "mode": self.mode}

    def __setstate__(self, state):
        self.__init__(state["profile"], state["mode"])

    @property
    def exact(self) -> bool:
        return self.mode is ArithmeticMode.EXACT

    def _num(self, value: Fraction) -> Real:
        return value if self.exact else float(value)

    def lam(self, i: int) -> Real:
        return self._num(self.profile.lam(i))

    def denominator(self, i: int) -> Real:
        """1 + lambda_i + D_i, the total jump rate out of gap i."""
        return self._denominator(i)

    @cachedmethod(lambda self: self._cache, lock=lambda self: self._lock)
    def _denominator(self, i: int) -> Real:
        return self._num(1 + self.profile.lam(i) + self.profile.cumulative_death(i))

    def u(self, j: int) -> Real:
        if j < 0:
            raise InvalidParameterError("j", j, "u(j) is defined for j >= 0")
        return self.lam(j + 1) / self.denominator(j + 1)

    def v(self, j: int) -> Real:
        if j < -1:
            raise InvalidParameterError("j", j, "v(j) is defined for j >= -1")
        one = Fraction(1) if self.exact else 1.0
        return one / self.denominator(j + 2)

    def a(self, j: int) -> Real:
        if j < 0:
            raise InvalidParameterError("j", j, "a(j) is defined for j >= 0")
        return self.u(j) * self.v(j)

    def u_sequence(self, n: int) -> list:
        return [self.u(j) for j in range(n)]

    def v_sequence(self, n: int) -> list:
        return [self.v(j) for j in range(n)]

    def a_sequence(self, n: int) -> list:
        return [self.a(j) for j in range(n)]

    def rate_block(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Float arrays of lambda_i and D_i for 1-based i in [start, stop)."""
        profile = self.profile
        index = np.arange(start, stop)
        lam = np.full(index.shape, float(profile.lambda_tail))
        n_lam = len(profile.lambda_head)
        if start <= n_lam:
            lam[: n_lam - start + 1] = [float(x) for x in profile.lambda_head[start - 1 :]][
                : len(index)
            ]
        n_rho = len(profile.rho_head)
        prefix = np.asarray([float(x) for x in profile._rho_prefix])
        clipped = np.minimum(index, n_rho)
        death = prefix[clipped] + np.maximum(index - n_rho, 0) * float(profile.rho_tail)
        return lam, death

    def a_block(self, start: int, stop: int) -> np.ndarray:
        """Float array of a_j for j in [start, stop)."""
        lam1, death1 = self.rate_block(start + 1, stop + 1)
        lam2, death2 = self.rate_block(start + 2, stop + 2)
        return lam1 / (1.0 + lam1 + death1) / (1.0 + lam2 + death2)

    def max_a(self, n: int) -> Real:
        """max_{j < n} a(j); the tail beyond the head is monotone so n past the head suffices."""
        zero = Fraction(0) if self.exact else 0.0
        return max(self.a_sequence(n), default=zero)


def step_weights(
    profile: RateProfile, j: int, mode: ArithmeticMode = ArithmeticMode.EXACT
) -> tuple[Real, Real, Real]:
    """Return (u(j), v(j), a(j)). Requests at j = -1 are rejected since u and a need j >= 0."""
    weights = StepWeights(profile, mode)
    return weights.u(j), weights.v(j), weights.a(j)


@dataclass
class HypothesisReport:
    """Empirical evidence for the growth and decay hypotheses over a probed range."""

    ell_values: list[int]
    products: list[float]
    c: float
    m: float
    growth_status: str
    a_values: list[float]
    decay_status: str
    ell_max: int
    k_probe: int

    @property
    def growth_consistent(self) -> bool:
        return self.growth_status == CONSISTENT

    @property
    def decay_consistent(self) -> bool:
        return self.decay_status == CONSISTENT

    @property
    def consistent(self) -> bool:
        return self.growth_consistent and self.decay_consistent

    def bound(self, ell: int) -> float:
        return self.c * ell**self.m

    def to_dict(self) -> dict:
        return {
            "ell_max": self.ell_max,
            "k_probe": self.k_probe,
            "c": self.c,
            "m": self.m,
            "growth_status": self.growth_status,
            "decay_status": self.decay_status,
            "products": dict(zip(self.ell_values, self.products)),
        }


def _growth_products(profile: RateProfile, ell_max: int) -> tuple[list[int], list[float]]:
    # prod_{i=3}^{ell-2} (1 + lambda_i / (1 + D_i)), accumulated in log space
    ells = list(range(5, ell_max + 1))
    log_terms = [
        math.log1p(float(profile.lam(i) / (1 + profile.cumulative_death(i))))
        for i in range(3, ell_max - 1)
    ]
    cumulative = np.concatenate(([0.0], np.cumsum(log_terms)))
    # ell = 5 uses the single factor i = 3
    return ells, [float(math.exp(cumulative[ell - 4])) for ell in ells]


def _fit_polynomial_bound(ells: list[int], products: list[float]) -> tuple[float, float]:
    log_p = np.log(np.asarray(products))
    if np.allclose(log_p, 0.0):
        return 1.0, 0.0
    log_ell = np.log(np.asarray(ells, dtype=float))
    if len(ells) == 1:
        m = max(float(log_p[0] / log_ell[0]), 0.0)
        return 1.0, m
    slope, intercept = np.polyfit(log_ell, log_p, 1)
    m = max(float(slope), 0.0)
    c = float(np.exp(intercept))
    # inflate c so c * ell^m dominates at every probed ell
    c = max(c, float(np.max(np.exp(log_p - m * log_ell))))
    return c, m


def _growth_status(ells: list[int], products: list[float]) -> str:
    ell_max = ells[-1]
    if ell_max < 20:
        return CONSISTENT
    log_p = {ell: math.log(p) for ell, p in zip(ells, products)}

    def local_exponent(lo: int, hi: int) -> float:
        return (log_p[hi] - log_p[lo]) / math.log(hi / lo)

    quarter, half = max(ell_max // 4, 5), max(ell_max // 2, 5)
    s_mid = local_exponent(quarter, half)
    s_end = local_exponent(half, ell_max)
    # a polynomial bound has a stable local exponent; exponential growth doubles it
    if s_end > 1.5 * s_mid + 0.1 and s_end > 0.5:
        return f"violated at ℓ = {ell_max}"
    return CONSISTENT


def _decay_status(a_values: list[float]) -> str:
    k_probe = len(a_values) - 1
    if max(a_values) == 0.0:
        return CONSISTENT
    half = k_probe // 2
    tail = a_values[half:]
    nonincreasing = all(later <= earlier * (1 + 1e-12) for earlier, later in zip(tail, tail[1:]))
    if nonincreasing and a_values[-1] <= 0.75 * a_values[half]:
        return CONSISTENT
    return f"violated at j = {k_probe}"


def check_hypotheses(profile: RateProfile, ell_max: int, k_probe: int) -> HypothesisReport:
    """
    Probe the polynomial growth hypothesis on prod (1 + lambda_i/(1 + D_i)) for
    ell = 5..ell_max and the decay hypothesis a_j -> 0 for j = 0..k_probe.

    A violated hypothesis is reported, never raised.
    """
    if ell_max < 5:
        raise InvalidParameterError("ell_max", ell_max, "the growth hypothesis starts at ell = 5")
    if k_probe < 2:
        raise InvalidParameterError("k_probe", k_probe, "need at least three a_j values")

    ells, products = _growth_products(profile, ell_max)
    c, m = _fit_polynomial_bound(ells, products)
    growth_status = _growth_status(ells, products)

    weights = StepWeights(profile, ArithmeticMode.FLOAT)
    a_values = weights.a_sequence(k_probe + 1)
    decay_status = _decay_status(a_values)

    if growth_status != CONSISTENT:
        logger.warning(f"Growth hypothesis {growth_status} for profile {profile.fingerprint()}")
    if decay_status != CONSISTENT:
        logger.warning(f"Decay hypothesis {decay_status} for profile {profile.fingerprint()}")
    logger.debug(f"Fitted polynomial bound c={c:.6g}, m={m:.6g} over ell <= {ell_max}")

    return HypothesisReport(
        ell_values=ells,
        products=products,
        c=c,
        m=m,
        growth_status=growth_status,
        a_values=a_values,
        decay_status=decay_status,
        ell_max=ell_max,
        k_probe=k_probe,
    )
