"""Exact combinatorial primitives behind the delay formulas.

Everything here returns Python ``int`` (arbitrary precision) except the
incomplete beta partial sums, which are evaluated in floating point from
their defining negative-binomial series.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

__all__ = [
    "binom",
    "schroeder_count",
    "schroeder_row_sum",
    "narayana",
    "reg_incomplete_beta",
    "reg_incomplete_beta_series",
    "to_fraction",
]


def binom(n: int, k: int) -> int:
    """Binomial coefficient C(n, k); zero when ``k > n``."""
    if n < 0 or k < 0:
        raise ValueError(f"binom needs nonnegative arguments, got ({n}, {k})")
    return math.comb(n, k)


def schroeder_count(i: int, j: int) -> int:
    r"""Number of Schröder paths from (0,0) to (i,i) using exactly ``i + j`` steps.

    Steps are (+1,0), (0,+1) and (+1,+1) and the path stays in ``x >= y``.
    A path with ``i + j`` steps has ``i - j`` diagonal steps, so

    .. math:: T_{i,j} = \frac{1}{j+1}\binom{i+j}{i}\binom{i}{j}.
    """
    if i < 0 or j < 0:
        raise ValueError(f"schroeder_count needs nonnegative arguments, got ({i}, {j})")
    if j > i:
        raise ValueError(f"schroeder_count requires j <= i, got ({i}, {j})")
    num = math.comb(i + j, i) * math.comb(i, j)
    q, rem = divmod(num, j + 1)
    assert rem == 0
    return q


def schroeder_row_sum(i: int) -> int:
    """Total number of Schröder paths to (i,i): the large Schröder number."""
    return sum(schroeder_count(i, j) for j in range(i + 1))


def narayana(n: int, k: int) -> int:
    """Narayana number N(n, k) = C(n,k) C(n,k-1) / n, for ``1 <= k <= n``."""
    if n < 1 or not 1 <= k <= n:
        raise ValueError(f"narayana requires 1 <= k <= n, got ({n}, {k})")
    q, rem = divmod(math.comb(n, k) * math.comb(n, k - 1), n)
    assert rem == 0
    return q


def _check_prob(p: float, name: str = "p") -> None:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {p!r}")


def _log_terms(p: float, n_packets: int, count: int) -> np.ndarray:
    # log of C(P+j-1, P-1) p^P (1-p)^j for j = 0..count-1
    j = np.arange(count, dtype=float)
    lg = np.array([math.lgamma(n_packets + k) - math.lgamma(k + 1) for k in range(count)])
    return lg - math.lgamma(n_packets) + n_packets * math.log(p) + j * math.log1p(-p)


def reg_incomplete_beta(p: float, n_packets: int, d: int) -> float:
    r"""Partial negative-binomial sum :math:`I_p(P, d+1)`.

    .. math:: \sum_{j=0}^{d} \binom{P+j-1}{P-1} p^P (1-p)^j

    i.e. the probability of collecting ``n_packets`` successes within
    ``n_packets + d`` Bernoulli(p) trials. Evaluated term by term (log-space
    magnitudes, ``math.fsum`` accumulation) rather than via a continued
    fraction, so it matches the defining series.
    """
    _check_prob(p)
    if n_packets < 1:
        raise ValueError(f"n_packets must be >= 1, got {n_packets}")
    if d < 0:
        raise ValueError(f"d must be >= 0, got {d}")
    if p == 1.0:
        return 1.0
    total = math.fsum(np.exp(_log_terms(p, n_packets, d + 1)).tolist())
    return min(total, 1.0)


def reg_incomplete_beta_series(p: float, n_packets: int, count: int) -> np.ndarray:
    """Vector of ``reg_incomplete_beta(p, n_packets, d)`` for ``d = 0..count-1``."""
    _check_prob(p)
    if p == 1.0:
        return np.ones(count)
    terms = np.exp(_log_terms(p, n_packets, count))
    return np.minimum(np.cumsum(terms), 1.0)


def to_fraction(x) -> Fraction:
    """Exact rational for a probability given as int, Fraction, str or float.

    Floats are read through their shortest repr, so ``0.1`` becomes ``1/10``
    rather than the nearest binary fraction.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, np.floating)):
        return Fraction(repr(float(x)))
    return Fraction(x)
