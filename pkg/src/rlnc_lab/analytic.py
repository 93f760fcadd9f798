"""Closed-form and recursive expected completion delays.

Notation used throughout: ``P`` source packets, relay (RS) success
probability ``p0`` on the BS->RS hop, receiver success probabilities
``p = (p_1, ..., p_R)`` on the RS->receiver hops. Receivers are indexed
from 0 in code.

Two schemes are covered:

* no buffer: the relay forwards a packet only in the slot it arrives;
* with buffer: the relay stores up to ``P`` packets and broadcasts a fresh
  combination of its buffer every slot.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .combinatorics import reg_incomplete_beta_series, schroeder_count, to_fraction

__all__ = [
    "Scenario",
    "SchroederWeights",
    "delay_nobuffer_single",
    "delay_broadcast_system",
    "delay_nobuffer_system",
    "schroeder_weights",
    "delay_withbuffer_single_closed",
    "delay_withbuffer_single_recursive",
    "prob_relay_ahead",
    "expected_max_geometric",
    "relay_lag_correction",
    "broadcast_side_bound",
    "single_receiver_bound",
    "lower_bound_system",
    "DEFAULT_TAIL_TOL",
]

DEFAULT_TAIL_TOL = 1e-12
MAX_INCLUSION_EXCLUSION_R = 20


def _check_prob(x, name: str) -> None:
    if not 0 < x <= 1:
        raise ValueError(f"{name} must lie in (0, 1], got {x!r}")


@dataclass(frozen=True)
class Scenario:
    """One relay network configuration.

    Parameters
    ----------
    P : int
        Number of source packets, at least 1.
    p0 : float
        BS->RS packet success probability, in (0, 1].
    p : sequence of float
        RS->receiver success probabilities, one per receiver, each in (0, 1].
    """

    P: int
    p0: float
    p: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(self.p))
        if int(self.P) != self.P or self.P < 1:
            raise ValueError(f"P must be a positive integer, got {self.P!r}")
        _check_prob(self.p0, "p0")
        if len(self.p) < 1:
            raise ValueError("at least one receiver probability is required")
        for r, pr in enumerate(self.p):
            _check_prob(pr, f"p[{r}]")

    @property
    def R(self) -> int:
        return len(self.p)

    @classmethod
    def uniform(cls, P: int, p0: float, pr: float, R: int) -> "Scenario":
        return cls(P, p0, (pr,) * R)


# ---------------------------------------------------------------------------
# No buffer at the relay
# ---------------------------------------------------------------------------

def delay_nobuffer_single(s: Scenario, r: int = 0) -> float:
    """Expected delay at receiver ``r`` without relay buffering: ``P / (p0 p_r)``.

    The delay is negative binomial with success probability ``p0 * p_r``.
    """
    return s.P / (s.p0 * s.p[r])


def delay_broadcast_system(P: int, p: Sequence[float], tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    r"""Expected system delay of perfect RLNC in direct wireless broadcast.

    .. math:: P + \sum_{d \ge 0} \Bigl(1 - \prod_r I_{p_r}(P, d+1)\Bigr)

    The series is cut once three consecutive summands fall below ``tail_tol``.
    This is also the expected number of relay broadcasts in the no-buffer
    scheme, and the ``p0 = 1`` special case of the buffered scheme.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    if len(p) < 1:
        raise ValueError("at least one receiver probability is required")
    for r, pr in enumerate(p):
        _check_prob(pr, f"p[{r}]")
    groups = Counter(float(pr) for pr in p)
    count = 256
    while True:
        log_prod = np.zeros(count)
        for pr, mult in groups.items():
            log_prod += mult * np.log(reg_incomplete_beta_series(pr, P, count))
        summand = -np.expm1(log_prod)
        small = summand < tail_tol
        run = small[:-2] & small[1:-1] & small[2:]
        hits = np.flatnonzero(run)
        if hits.size:
            return P + math.fsum(summand[: hits[0] + 3].tolist())
        count *= 2


def delay_nobuffer_system(s: Scenario, tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Expected system delay without relay buffering.

    The relay forwards exactly the packets it receives, so the number of
    BS transmissions is the broadcast delay inflated by ``1 / p0``.
    """
    return delay_broadcast_system(s.P, s.p, tail_tol) / s.p0


# ---------------------------------------------------------------------------
# With buffer at the relay, single receiver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchroederWeights:
    """Weighted Schröder path sums for one (p0, p_r) pair.

    ``values[i]`` is

    .. math:: \\sum_{j=0}^{i} T_{i,j} (p_0 p_r)^i / (p_0 p_r - p_0 - p_r)^{i+j+1}

    for ``i = 0..n``; ``exact`` holds the same numbers as ``Fraction`` when
    requested.
    """

    p0: float
    pr: float
    values: tuple
    exact: tuple | None = None

    @property
    def delta(self) -> float:
        """Probability that at least one of the two hops succeeds."""
        return self.p0 + self.pr - self.p0 * self.pr

    def partial_sums(self) -> np.ndarray:
        """``out[k] = values[0] + ... + values[k-1]``, with ``out[0] = 0``."""
        return np.concatenate(([0.0], np.cumsum(self.values)))


def _weights_recursion(p0, pr, n, one):
    delta = p0 + pr - p0 * pr
    c = -(p0 * pr) / delta
    b = [-one / delta]
    for i in range(1, n + 1):
        conv = sum((b[j] * b[i - j - 1] for j in range(i)), 0 * one)
        b.append(c * (b[i - 1] + conv))
    return b


def schroeder_weights(p0: float, pr: float, n: int, exact: bool = False) -> SchroederWeights:
    """Weights ``B(0..n)`` from the quadratic recursion.

    ``B(0) = -1/Δ`` with ``Δ = p0 + p_r - p0 p_r`` and
    ``B(i) = -(p0 p_r / Δ) (B(i-1) + Σ_{j<i} B(j) B(i-j-1))``.
    """
    _check_prob(p0, "p0")
    _check_prob(pr, "pr")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    values = tuple(_weights_recursion(float(p0), float(pr), n, 1.0))
    exact_values = None
    if exact:
        exact_values = tuple(_weights_recursion(to_fraction(p0), to_fraction(pr), n, Fraction(1)))
    return SchroederWeights(float(p0), float(pr), values, exact_values)


def _closed_form_sum(P: int, p0: Fraction, pr: Fraction) -> Fraction:
    # sum_{i<=P-2} sum_{j<=i} (P-i-1) T_{i,j} x^i / (-Δ)^{i+j+1}, with x = p0 pr.
    # All terms share the denominator den_x^(P-2) * num_Δ^(2P-3); accumulate
    # integer numerators so that no intermediate gcd reductions are needed.
    if P < 2:
        return Fraction(0)
    x = p0 * pr
    delta = p0 + pr - x
    xn, xd = x.numerator, x.denominator
    dn, dd = delta.numerator, delta.denominator
    top_i = P - 2
    top_k = 2 * P - 3
    xn_pow = [xn**k for k in range(top_i + 1)]
    xd_pow = [xd**k for k in range(top_i + 1)]
    dn_pow = [dn**k for k in range(top_k + 1)]
    neg_dd_pow = [(-dd) ** k for k in range(top_k + 1)]
    acc = 0
    for i in range(top_i + 1):
        head = (P - i - 1) * xn_pow[i] * xd_pow[top_i - i]
        for j in range(i + 1):
            k = i + j + 1
            acc += head * schroeder_count(i, j) * neg_dd_pow[k] * dn_pow[top_k - k]
    return Fraction(acc, xd_pow[top_i] * dn_pow[top_k])


def delay_withbuffer_single_closed(P: int, p0, pr, exact: bool = False):
    """Expected delay at one receiver with relay buffering, explicit Schröder-sum form.

    .. math::

        \\frac{P}{p_0} + \\frac{P}{p_r} - 1
        + \\sum_{i=0}^{P-2}\\sum_{j=0}^{i}
          \\frac{(P-i-1) T_{i,j} (p_0 p_r)^i}{(p_0 p_r - p_0 - p_r)^{i+j+1}}

    The double sum alternates in sign with terms far larger than the result,
    so it is always evaluated in exact rational arithmetic. Returns a float,
    or the exact ``Fraction`` when ``exact`` is set.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    _check_prob(p0, "p0")
    _check_prob(pr, "pr")
    a, b = to_fraction(p0), to_fraction(pr)
    value = P / a + P / b - 1 + _closed_form_sum(P, a, b)
    return value if exact else float(value)


def delay_withbuffer_single_recursive(P: int, p0, pr, exact: bool = False):
    """Same quantity as :func:`delay_withbuffer_single_closed`, by increments.

    Starts from ``1/p0 + 1/p_r - 1`` for one packet and adds
    ``1/p0 + 1/p_r + B(0) + ... + B(k-1)`` to go from ``k`` to ``k+1`` packets.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    w = schroeder_weights(p0, pr, max(P - 2, 0), exact=exact)
    if exact:
        a, b, bs = to_fraction(p0), to_fraction(pr), w.exact
        total = 1 / a + 1 / b - 1
        run = Fraction(0)
    else:
        a, b, bs = float(p0), float(pr), w.values
        total = 1 / a + 1 / b - 1
        run = 0.0
    for k in range(1, P):
        run += bs[k - 1]
        total += 1 / a + 1 / b + run
    return total


def _relay_ahead_sequence(n: int, p0: float, pr: float) -> np.ndarray:
    # out[k-1] = Pr(relay's (k+1)-th arrival is later than receiver's k-th), k = 1..n
    w = schroeder_weights(p0, pr, max(n - 1, 0))
    cums = np.cumsum(w.values)[:n]
    return 1.0 / (1.0 - p0) + p0 / (1.0 - p0) * cums


def prob_relay_ahead(P: int, p0, pr, exact: bool = False):
    """Probability that receiver ``r`` gets its ``P``-th packet before the relay gets its ``P+1``-th.

    Equals ``1/(1-p0) + p0/(1-p0) * (B(0) + ... + B(P-1))``. Only defined
    for ``p0 < 1``; with a perfect first hop the relay is never behind.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    _check_prob(p0, "p0")
    _check_prob(pr, "pr")
    if p0 >= 1:
        raise ValueError("prob_relay_ahead requires p0 < 1")
    if exact:
        w = schroeder_weights(p0, pr, P - 1, exact=True)
        a = to_fraction(p0)
        return 1 / (1 - a) + a / (1 - a) * sum(w.exact, Fraction(0))
    return float(_relay_ahead_sequence(P, float(p0), float(pr))[P - 1])


# ---------------------------------------------------------------------------
# With buffer, several receivers: bounds
# ---------------------------------------------------------------------------

def expected_max_geometric(p: Sequence[float]) -> float:
    """Mean of the maximum of independent geometric variables on {1, 2, ...}.

    Min-max inclusion-exclusion over receiver subsets; capped at 20
    receivers because the sum has ``2^R - 1`` terms.
    """
    R = len(p)
    if R < 1:
        raise ValueError("need at least one probability")
    if R > MAX_INCLUSION_EXCLUSION_R:
        raise ValueError(f"expected_max_geometric supports at most {MAX_INCLUSION_EXCLUSION_R} receivers, got {R}")
    for r, pr in enumerate(p):
        _check_prob(pr, f"p[{r}]")
    miss = [1.0 - float(pr) for pr in p]
    terms = []
    for size in range(1, R + 1):
        sign = 1.0 if size % 2 else -1.0
        for subset in itertools.combinations(miss, size):
            terms.append(sign / (1.0 - math.prod(subset)))
    return math.fsum(terms)


def _correction_increments(P: int, p0: float, p: Sequence[float]) -> np.ndarray:
    # inc[j-1] = prod_r Pr(S_{j+1} > T_{j,r}), j = 1..P-1
    prod = np.ones(max(P - 1, 0))
    if P < 2:
        return prod
    for pr, mult in Counter(float(x) for x in p).items():
        prod *= _relay_ahead_sequence(P - 1, p0, pr) ** mult
    return prod


def relay_lag_correction(P: int, p0: float, p: Sequence[float]) -> float:
    r"""Extra delay caused by an imperfect BS->RS hop, in product-form approximation.

    .. math::

        (1/p_0 - 1)\Bigl(1 + \sum_{j=1}^{P-1} \prod_r
            \Pr(S_{j+1} > T_{j,r})\Bigr)

    Zero when ``p0 = 1``; nondecreasing in ``P``.
    """
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    _check_prob(p0, "p0")
    for r, pr in enumerate(p):
        _check_prob(pr, f"p[{r}]")
    if p0 >= 1:
        return 0.0
    inc = _correction_increments(P, float(p0), p)
    return (1.0 / p0 - 1.0) * (1.0 + math.fsum(inc.tolist()))


def broadcast_side_bound(P: int, p0: float, p: Sequence[float], tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Broadcast delay plus :func:`relay_lag_correction`."""
    return delay_broadcast_system(P, p, tail_tol) + relay_lag_correction(P, p0, p)


def single_receiver_bound(P: int, p0: float, p: Sequence[float]) -> float:
    """Largest single-receiver buffered delay, i.e. the worst receiver alone."""
    return max(delay_withbuffer_single_closed(P, p0, pr) for pr in set(float(x) for x in p))


def lower_bound_system(P: int, p0: float, p: Sequence[float], tail_tol: float = DEFAULT_TAIL_TOL) -> float:
    """Lower bound (proved for two receivers) on the buffered system delay.

    Maximum of :func:`single_receiver_bound` and :func:`broadcast_side_bound`.
    For more than two receivers the broadcast side is an approximation that
    is not guaranteed to stay below the true delay.
    """
    return max(single_receiver_bound(P, p0, p), broadcast_side_bound(P, p0, p, tail_tol))
