import math
from collections import Counter
from functools import lru_cache

import pytest
from hypothesis import given, strategies as st

from rlnc_lab.combinatorics import (
    binom,
    narayana,
    reg_incomplete_beta,
    reg_incomplete_beta_series,
    schroeder_count,
    schroeder_row_sum,
)


def pascal_row(n):
    row = [1]
    for _ in range(n):
        row = [a + b for a, b in zip([0] + row, row + [0])]
    return row


def schroeder_paths_by_length(i):
    """Enumerate every Schröder path (0,0)->(i,i) staying in x >= y; count by step number."""
    counts = Counter()

    def walk(x, y, steps):
        if (x, y) == (i, i):
            counts[steps] += 1
            return
        for dx, dy in ((1, 0), (0, 1), (1, 1)):
            nx, ny = x + dx, y + dy
            if nx <= i and ny <= i and nx >= ny:
                walk(nx, ny, steps + 1)

    walk(0, 0, 0)
    return counts


def dyck_paths_by_peaks(n):
    counts = Counter()

    def walk(seq, up, down):
        if up == n and down == n:
            peaks = sum(1 for a, b in zip(seq, seq[1:]) if a == "U" and b == "D")
            counts[peaks] += 1
            return
        if up < n:
            walk(seq + "U", up + 1, down)
        if down < up:
            walk(seq + "D", up, down + 1)

    walk("", 0, 0)
    return counts


def test_binom_examples():
    assert binom(5, 2) == 10
    assert binom(7, 0) == 1
    assert binom(3, 5) == 0
    assert binom(9, 4) == pascal_row(9)[4] == 126


@pytest.mark.parametrize("n", range(0, 25))
def test_binom_matches_pascal(n):
    assert [binom(n, k) for k in range(n + 1)] == pascal_row(n)


def test_binom_big_exact():
    assert binom(200, 100) == math.factorial(200) // (math.factorial(100) ** 2)


def test_schroeder_examples():
    assert schroeder_count(5, 0) == 1
    assert schroeder_count(2, 1) == 3
    assert schroeder_count(3, 2) == 10
    with pytest.raises(ValueError):
        schroeder_count(2, 3)


@pytest.mark.parametrize("i", range(0, 9))
def test_schroeder_matches_enumeration(i):
    counts = schroeder_paths_by_length(i)
    for j in range(i + 1):
        assert schroeder_count(i, j) == counts[i + j]
    assert schroeder_row_sum(i) == sum(counts.values())


def test_schroeder_row_sums():
    assert [schroeder_row_sum(i) for i in range(1, 4)] == [2, 6, 22]


def test_narayana_examples():
    assert narayana(6, 1) == 1
    assert narayana(3, 2) == 3
    assert narayana(4, 2) == 6
    for bad in [(3, 0), (3, 4)]:
        with pytest.raises(ValueError):
            narayana(*bad)


@pytest.mark.parametrize("n", range(1, 9))
def test_narayana_counts_dyck_peaks(n):
    counts = dyck_paths_by_peaks(n)
    assert [narayana(n, k) for k in range(1, n + 1)] == [counts[k] for k in range(1, n + 1)]


@pytest.mark.parametrize("n", range(1, 13))
def test_narayana_symmetry(n):
    for k in range(1, n + 1):
        assert narayana(n, k) == narayana(n, n + 1 - k)


def test_reg_incomplete_beta_examples():
    assert reg_incomplete_beta(0.5, 1, 0) == pytest.approx(0.5, abs=1e-15)
    assert reg_incomplete_beta(0.5, 1, 1) == pytest.approx(0.75, abs=1e-15)
    assert reg_incomplete_beta(1.0, 7, 3) == 1.0
    with pytest.raises(ValueError):
        reg_incomplete_beta(0.0, 3, 2)


@given(st.floats(0.01, 1.0), st.integers(0, 200))
def test_reg_incomplete_beta_single_packet_is_geometric_cdf(p, d):
    assert reg_incomplete_beta(p, 1, d) == pytest.approx(1 - (1 - p) ** (d + 1), abs=1e-12)


@given(st.floats(0.05, 0.99), st.integers(1, 30), st.integers(0, 60))
def test_reg_incomplete_beta_monotone(p, n_packets, d):
    a = reg_incomplete_beta(p, n_packets, d)
    assert 0.0 <= a <= 1.0
    assert reg_incomplete_beta(p, n_packets, d + 1) >= a
    assert reg_incomplete_beta(min(p + 0.01, 1.0), n_packets, d) >= a - 1e-15


def test_reg_incomplete_beta_exact_small_case():
    # P=3, d=2, p=1/3: sum_j C(j+2,2) (1/3)^3 (2/3)^j
    exact = sum(math.comb(j + 2, 2) * (2 / 3) ** j for j in range(3)) / 27
    assert reg_incomplete_beta(1 / 3, 3, 2) == pytest.approx(exact, rel=1e-14)


def test_reg_incomplete_beta_tends_to_one():
    assert reg_incomplete_beta(0.3, 10, 400) == pytest.approx(1.0, abs=1e-12)


def test_series_matches_scalar():
    series = reg_incomplete_beta_series(0.6, 5, 20)
    for d in range(20):
        assert series[d] == pytest.approx(reg_incomplete_beta(0.6, 5, d), abs=1e-14)
