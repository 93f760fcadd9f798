"""Absorbing Markov chains of the buffered relay scheme.

A state records how many packets the relay (``s0``) and each receiver
(``s1..sR``) hold. Coordinates never decrease, so lexicographic order is a
topological order: every non-self transition goes to a strictly larger
index and a strictly larger coordinate sum. The fundamental-matrix
quantities (expected absorption time, visit probabilities) are therefore
obtained by one substitution sweep instead of inverting ``I - Q``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, TextIO

import numpy as np

from .combinatorics import to_fraction

__all__ = [
    "StateSpaceTooLarge",
    "AbsorbingChain",
    "FinishOrder",
    "DEFAULT_STATE_CAP",
    "multi_state_count",
    "broadcast_state_count",
    "build_chain_single",
    "build_chain_multi",
    "build_chain_broadcast",
    "absorption_times",
    "expected_absorption_time",
    "visit_probabilities",
    "transition_flows",
    "finish_order_probs",
    "finish_order_excess",
    "prob_relay_ahead_joint",
    "broadcast_residual",
]

DEFAULT_STATE_CAP = 10**6


class StateSpaceTooLarge(ValueError):
    """Raised before building a chain whose state count exceeds the cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"chain would have {count} states, above the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True, eq=False)
class AbsorbingChain:
    """Sparse absorbing chain with states in topological (lexicographic) order.

    Attributes
    ----------
    states : ndarray of int, shape (n, d)
        State tuples; row order is the topological order.
    src, dst : ndarray of int
        Transition endpoints, sorted by ``(src, dst)``.
    prob : ndarray
        Transition probabilities (``float`` or ``object`` holding ``Fraction``).
    start : int
        Index of the all-zero state.
    absorbing : tuple of int
        Indices of absorbing states; they carry no outgoing transitions.
    """

    states: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    start: int
    absorbing: tuple
    P: int
    relay: bool = True

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def exact(self) -> bool:
        return self.prob.dtype == object

    @property
    def levels(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def self_loops(self) -> np.ndarray:
        zero = Fraction(0) if self.exact else 0.0
        out = np.full(self.n_states, zero, dtype=self.prob.dtype)
        loop = self.src == self.dst
        out[self.src[loop]] = self.prob[loop]
        return out

    def row_sums(self) -> np.ndarray:
        if self.exact:
            out = [Fraction(0)] * self.n_states
            for s, p in zip(self.src.tolist(), self.prob.tolist()):
                out[s] += p
            return np.array(out, dtype=object)
        return np.bincount(self.src, weights=self.prob, minlength=self.n_states)

    def index_of(self, state: Sequence[int]) -> int:
        hits = np.flatnonzero((self.states == np.asarray(state)).all(axis=1))
        if hits.size == 0:
            raise KeyError(tuple(state))
        return int(hits[0])

    def transitions(self):
        """Iterate ``(from_state, to_state, prob)`` with states as tuples."""
        for s, d, p in zip(self.src.tolist(), self.dst.tolist(), self.prob.tolist()):
            yield tuple(self.states[s].tolist()), tuple(self.states[d].tolist()), p

    def dump_edges(self, fh: TextIO) -> None:
        """Write a tab-separated edge list ``from_state  to_state  prob``."""
        for a, b, p in self.transitions():
            fh.write(f"{a}\t{b}\t{p}\n")


@dataclass(frozen=True)
class FinishOrder:
    """Which of two receivers collects its last packet last.

    ``tie`` is the probability both finish in the same slot; ``r1_last``
    (``r2_last``) the probability receiver 1 (2) finishes strictly after
    the other.
    """

    tie: float
    r1_last: float
    r2_last: float


def _layer_width(s0: int, P: int) -> int:
    return min(s0, P) + 1


def multi_state_count(P: int, R: int, extended: bool = False) -> int:
    top = P + 1 if extended else P
    return sum(_layer_width(s0, P) ** R for s0 in range(top + 1))


def broadcast_state_count(P: int, R: int) -> int:
    return (P + 1) ** R


def _probs(p0, p, exact: bool):
    if exact:
        return to_fraction(p0), [to_fraction(x) for x in p]
    return float(p0), [float(x) for x in p]


def _check_probs(p0, p):
    if not 0 < p0 <= 1:
        raise ValueError(f"p0 must lie in (0, 1], got {p0!r}")
    if len(p) < 1:
        raise ValueError("at least one receiver probability is required")
    for r, x in enumerate(p):
        if not 0 < x <= 1:
            raise ValueError(f"p[{r}] must lie in (0, 1], got {x!r}")


def _finalize(states, src, dst, prob, absorbing_mask, P, relay) -> AbsorbingChain:
    keep = prob != 0
    src, dst, prob = src[keep], dst[keep], prob[keep]
    order = np.lexsort((dst, src))
    return AbsorbingChain(
        states=states,
        src=src[order],
        dst=dst[order],
        prob=prob[order],
        start=0,
        absorbing=tuple(np.flatnonzero(absorbing_mask).tolist()),
        P=P,
        relay=relay,
    )


def _const(n: int, value, dtype) -> np.ndarray:
    out = np.empty(n, dtype=dtype)
    out[:] = [value] * n if dtype == object else value
    return out


def build_chain_single(P: int, p0, pr, exact: bool = False) -> AbsorbingChain:
    """Relay/receiver chain for one receiver, states ``(i, j)`` with ``0 <= j <= i <= P``.

    From ``(i, i)`` with ``i < P`` the receiver can only move together with
    the relay; from ``(i, j)`` with ``j < i < P`` both hops act
    independently; once the relay holds all ``P`` packets only the receiver
    moves. ``(P, P)`` is the single absorbing state.
    """
    _check_probs(p0, [pr])
    a, b = _probs(p0, [pr], exact)
    b = b[0]
    states = [(i, j) for i in range(P + 1) for j in range(i + 1)]
    index = {s: k for k, s in enumerate(states)}
    src, dst, prob = [], [], []

    def add(s, t, q):
        src.append(index[s])
        dst.append(index[t])
        prob.append(q)

    for i, j in states:
        if j == i < P:
            add((i, j), (i, j), 1 - a)
            add((i, j), (i + 1, j), a * (1 - b))
            add((i, j), (i + 1, j + 1), a * b)
        elif j < i < P:
            add((i, j), (i, j), (1 - a) * (1 - b))
            add((i, j), (i + 1, j), a * (1 - b))
            add((i, j), (i, j + 1), (1 - a) * b)
            add((i, j), (i + 1, j + 1), a * b)
        elif j < i == P:
            add((i, j), (i, j), 1 - b)
            add((i, j), (i, j + 1), b)
    dtype = object if exact else float
    arr = np.array(states, dtype=np.int64)
    return _finalize(
        arr,
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(prob, dtype=dtype),
        (arr[:, 0] == P) & (arr[:, 1] == P),
        P,
        relay=True,
    )


def _expand_receivers(src, coords, prob, recv_caps, p, col0, dtype):
    # Branch each partial transition on every receiver that can still gain a packet.
    one = Fraction(1) if dtype == object else 1.0
    for r, pr in enumerate(p):
        col = col0 + r
        elig = coords[:, col] < recv_caps
        stay = prob * np.where(elig, _const(len(prob), 1 - pr, dtype), _const(len(prob), one, dtype))
        moved_coords = coords[elig].copy()
        moved_coords[:, col] += 1
        moved = prob[elig] * pr
        src = np.concatenate((src, src[elig]))
        coords = np.concatenate((coords, moved_coords))
        prob = np.concatenate((stay, moved))
        recv_caps = np.concatenate((recv_caps, recv_caps[elig]))
    return src, coords, prob


def build_chain_multi(
    P: int,
    p0,
    p: Sequence,
    extended: bool = False,
    state_cap: int = DEFAULT_STATE_CAP,
    exact: bool = False,
) -> AbsorbingChain:
    """Chain of the buffered scheme with ``R = len(p)`` receivers.

    States are ``(s0, s1, ..., sR)`` with ``0 <= s_r <= s0 <= P``; there are
    ``sum_{s0=0}^{P} (s0+1)^R`` of them. In one slot the relay gains a packet
    with probability ``p0`` (while ``s0 < P``), and every receiver holding
    fewer packets than the relay after that update gains one with
    probability ``p_r``. A receiver level with the relay can therefore only
    advance in a slot where the relay does.

    With ``extended`` the relay may go on to ``s0 = P + 1`` (receivers stay
    capped at ``P``); this layer only serves to observe when the relay's
    ``(P+1)``-th packet would arrive. Every state with all receivers at
    ``P`` is absorbing.
    """
    _check_probs(p0, p)
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    R = len(p)
    count = multi_state_count(P, R, extended)
    if count > state_cap:
        raise StateSpaceTooLarge(count, state_cap)
    a, probs = _probs(p0, p, exact)
    dtype = object if exact else float
    relay_top = P + 1 if extended else P

    layers = []
    offsets = {}
    total = 0
    for s0 in range(relay_top + 1):
        w = _layer_width(s0, P)
        grid = np.indices((w,) * R).reshape(R, -1).T
        layers.append(np.column_stack((np.full(len(grid), s0), grid)))
        offsets[s0] = total
        total += len(grid)
    states = np.concatenate(layers).astype(np.int64)

    absorbing = (states[:, 1:] == P).all(axis=1)
    live = np.flatnonzero(~absorbing)
    s0 = states[live, 0]
    can_grow = s0 < relay_top
    n = len(live)
    one = Fraction(1) if exact else 1.0
    # relay outcome first: stays (prob 1-p0, or 1 when capped) or grows (p0)
    stay_prob = np.where(can_grow, _const(n, 1 - a, dtype), _const(n, one, dtype))
    grow = np.flatnonzero(can_grow)
    src = np.concatenate((live, live[grow]))
    coords = np.concatenate((states[live], states[live[grow]]))
    coords[n:, 0] += 1
    prob = np.concatenate((stay_prob, _const(len(grow), a, dtype)))
    recv_caps = np.minimum(coords[:, 0], P)

    src, coords, prob = _expand_receivers(src, coords, prob, recv_caps, probs, 1, dtype)

    off = np.array([offsets[k] for k in range(relay_top + 1)], dtype=np.int64)
    width = np.minimum(coords[:, 0], P) + 1
    dst = off[coords[:, 0]]
    for r in range(R):
        dst = dst + coords[:, 1 + r] * width ** (R - 1 - r)
    return _finalize(states, src, dst, prob.astype(dtype), absorbing, P, relay=True)


def build_chain_broadcast(
    P: int, p: Sequence, state_cap: int = DEFAULT_STATE_CAP, exact: bool = False
) -> AbsorbingChain:
    """Direct broadcast chain: states ``(s1..sR)`` in ``[0, P]^R``.

    Each slot every unfinished receiver independently gains a packet with
    probability ``p_r``. This is the buffered chain with a perfect first hop.
    """
    _check_probs(1.0, p)
    if P < 1:
        raise ValueError(f"P must be >= 1, got {P}")
    R = len(p)
    count = broadcast_state_count(P, R)
    if count > state_cap:
        raise StateSpaceTooLarge(count, state_cap)
    _, probs = _probs(1, p, exact)
    dtype = object if exact else float
    states = np.indices((P + 1,) * R).reshape(R, -1).T.astype(np.int64)
    absorbing = (states == P).all(axis=1)
    live = np.flatnonzero(~absorbing)
    one = Fraction(1) if exact else 1.0
    src, coords, prob = _expand_receivers(
        live, states[live].copy(), _const(len(live), one, dtype), np.full(len(live), P), probs, 0, dtype
    )
    dst = np.zeros(len(src), dtype=np.int64)
    for r in range(R):
        dst = dst + coords[:, r] * (P + 1) ** (R - 1 - r)
    return _finalize(states, src, dst, prob.astype(dtype), absorbing, P, relay=False)


# ---------------------------------------------------------------------------
# Solves
# ---------------------------------------------------------------------------

def _moving(c: AbsorbingChain):
    mv = c.src != c.dst
    return c.src[mv], c.dst[mv], c.prob[mv]


def _leave_probs(c: AbsorbingChain):
    loops = c.self_loops()
    absorbing = np.zeros(c.n_states, dtype=bool)
    absorbing[list(c.absorbing)] = True
    one = Fraction(1) if c.exact else 1.0
    leave = one - loops
    bad = ~absorbing & (leave == 0)
    if bad.any():
        raise ValueError(f"state {tuple(c.states[np.flatnonzero(bad)[0]])} never leaves but is not absorbing")
    return leave, absorbing


def _level_groups(c: AbsorbingChain):
    lv = c.levels
    order = np.argsort(lv, kind="stable")
    bounds = np.flatnonzero(np.diff(lv[order])) + 1
    return np.split(order, bounds)


def absorption_times(c: AbsorbingChain) -> np.ndarray:
    """Expected number of steps to absorption from every state."""
    leave, absorbing = _leave_probs(c)
    src, dst, prob = _moving(c)
    if c.exact:
        t = [Fraction(0)] * c.n_states
        by_src = {}
        for s, d, q in zip(src.tolist(), dst.tolist(), prob.tolist()):
            by_src.setdefault(s, []).append((d, q))
        for s in range(c.n_states - 1, -1, -1):
            if absorbing[s]:
                continue
            acc = Fraction(1)
            for d, q in by_src.get(s, ()):
                acc += q * t[d]
            t[s] = acc / leave[s]
        return np.array(t, dtype=object)

    t = np.zeros(c.n_states)
    src_level = c.levels[src]
    order = np.argsort(src_level, kind="stable")
    src, dst, prob, src_level = src[order], dst[order], prob[order], src_level[order]
    cuts = np.searchsorted(src_level, np.arange(c.levels.max() + 2))
    for group in reversed(_level_groups(c)):
        lvl = c.levels[group[0]]
        lo, hi = cuts[lvl], cuts[lvl + 1]
        acc = np.ones(len(group))
        if hi > lo:
            contrib = np.bincount(src[lo:hi], weights=prob[lo:hi] * t[dst[lo:hi]], minlength=c.n_states)
            acc = acc + contrib[group]
        vals = acc / leave[group]
        vals[absorbing[group]] = 0.0
        t[group] = vals
    return t


def expected_absorption_time(c: AbsorbingChain):
    """Expected number of slots from the all-zero state to absorption."""
    return absorption_times(c)[c.start]


def visit_probabilities(c: AbsorbingChain) -> np.ndarray:
    """Probability that a path from the start state ever enters each state."""
    leave, absorbing = _leave_probs(c)
    src, dst, prob = _moving(c)
    if c.exact:
        v = [Fraction(0)] * c.n_states
        v[c.start] = Fraction(1)
        by_dst = {}
        for s, d, q in zip(src.tolist(), dst.tolist(), prob.tolist()):
            by_dst.setdefault(d, []).append((s, q))
        for d in range(c.n_states):
            if d == c.start:
                continue
            v[d] = sum((v[s] * q / leave[s] for s, q in by_dst.get(d, ())), Fraction(0))
        return np.array(v, dtype=object)

    v = np.zeros(c.n_states)
    v[c.start] = 1.0
    exit_prob = prob / leave[src]
    dst_level = c.levels[dst]
    order = np.argsort(dst_level, kind="stable")
    src, dst, exit_prob, dst_level = src[order], dst[order], exit_prob[order], dst_level[order]
    cuts = np.searchsorted(dst_level, np.arange(c.levels.max() + 2))
    for group in _level_groups(c):
        lvl = c.levels[group[0]]
        lo, hi = cuts[lvl], cuts[lvl + 1]
        if hi > lo:
            inflow = np.bincount(dst[lo:hi], weights=v[src[lo:hi]] * exit_prob[lo:hi], minlength=c.n_states)
            v[group] = inflow[group]
        v[c.start] = 1.0
    return v


def transition_flows(c: AbsorbingChain, visits: np.ndarray | None = None):
    """Probability that each non-self transition is ever taken.

    Returns ``(src, dst, flow)`` with ``flow = visit(src) * prob / (1 - self_loop(src))``.
    Because coordinates only grow, each such transition is taken at most once.
    """
    if visits is None:
        visits = visit_probabilities(c)
    leave, _ = _leave_probs(c)
    src, dst, prob = _moving(c)
    return src, dst, visits[src] * prob / leave[src]


def _entry_probability(c: AbsorbingChain, from_mask, to_mask, visits=None):
    src, dst, flow = transition_flows(c, visits)
    sel = from_mask[src] & to_mask[dst]
    if c.exact:
        return sum(flow[sel].tolist(), Fraction(0))
    return float(np.sum(flow[sel]))


def _finish_order(c: AbsorbingChain, col: int) -> FinishOrder:
    s1, s2 = c.states[:, col], c.states[:, col + 1]
    P = c.P
    visits = visit_probabilities(c)
    both_open = (s1 < P) & (s2 < P)
    tie = _entry_probability(c, both_open, (s1 == P) & (s2 == P), visits)
    r2_last = _entry_probability(c, s1 < P, (s1 == P) & (s2 < P), visits)
    r1_last = _entry_probability(c, s2 < P, (s2 == P) & (s1 < P), visits)
    return FinishOrder(tie=tie, r1_last=r1_last, r2_last=r2_last)


def finish_order_probs(P: int, p0, p1, p2, exact: bool = False) -> FinishOrder:
    """Finish-order probabilities of two receivers under the buffered relay scheme.

    ``r2_last`` is the probability of ever entering a state where receiver 1
    is done and receiver 2 is not; since coordinates never decrease, that
    entry happens at most once and the entry-transition flows add up without
    double counting.
    """
    return _finish_order(build_chain_multi(P, p0, (p1, p2), exact=exact), 1)


def _broadcast_finish_order(P: int, p1, p2, exact: bool = False) -> FinishOrder:
    return _finish_order(build_chain_broadcast(P, (p1, p2), exact=exact), 0)


def finish_order_excess(P: int, p0, p1, p2, exact: bool = False):
    """Finish-order discrepancy between the relay network and direct broadcast.

    Weighted difference of the tie / receiver-1-last / receiver-2-last
    probabilities of the relay chain and of the perfect-first-hop broadcast
    chain. Its partial sums from ``P = 2`` onwards are the gap between the
    exact two-receiver delay and its broadcast-plus-relay-lag decomposition.
    """
    if exact:
        a, b = to_fraction(p1), to_fraction(p2)
    else:
        a, b = float(p1), float(p2)
    relay = finish_order_probs(P, p0, p1, p2, exact=exact)
    direct = _broadcast_finish_order(P, p1, p2, exact=exact)
    union = a + b - a * b
    w_tie = (1 - a) * (1 - b) * (a + b) / (a * b * union)
    w_r1 = a * (1 - b) / (b * union)
    w_r2 = (1 - a) * b / (a * union)
    return (
        (relay.tie - direct.tie) * w_tie
        + (direct.r1_last - relay.r1_last) * w_r1
        + (direct.r2_last - relay.r2_last) * w_r2
    )


def prob_relay_ahead_joint(
    P: int, p0, p: Sequence, state_cap: int = DEFAULT_STATE_CAP, exact: bool = False
):
    """Probability that the relay's ``(P+1)``-th packet arrives after every receiver holds ``P``.

    Computed on the extended chain: flow into the all-receivers-done layer
    through transitions that leave the relay at ``s0 <= P``.
    """
    c = build_chain_multi(P, p0, p, extended=True, state_cap=state_cap, exact=exact)
    done = (c.states[:, 1:] == P).all(axis=1)
    return _entry_probability(c, ~done, done & (c.states[:, 0] <= P))


def broadcast_residual(
    P: int, p0, p: Sequence, state_cap: int = DEFAULT_STATE_CAP, exact: bool = False
):
    """Exact delay minus broadcast delay minus the exact relay-lag term.

    ``E[D_P] - E[D^_P] - (1/p0 - 1)(1 + sum_{j<P} Pr(S_{j+1} > max_r T_{j,r}))``.
    For two receivers this is the cumulative finish-order excess; for more
    receivers its sign is only conjectured to be nonnegative.
    """
    a = to_fraction(p0) if exact else float(p0)
    delay = expected_absorption_time(build_chain_multi(P, p0, p, state_cap=state_cap, exact=exact))
    direct = expected_absorption_time(build_chain_broadcast(P, p, state_cap=state_cap, exact=exact))
    lag = 1
    for j in range(1, P):
        lag += prob_relay_ahead_joint(j, p0, p, state_cap=state_cap, exact=exact)
    return delay - direct - (1 / a - 1) * lag
