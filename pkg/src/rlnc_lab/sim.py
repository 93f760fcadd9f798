"""Monte Carlo simulation of the slotted two-hop relay protocol.

Three relay behaviours are simulated:

``nobuffer``
    The relay forwards a packet only in the slot it arrives.
``withbuffer``
    The relay keeps up to ``P`` packets and sends a fresh combination of its
    buffer every slot. Simulated at rank level: a receiver gains a packet
    whenever it hears the relay and the relay knows more than it does.
``fbpf``
    Fewest-broadcast-packet-first: the relay stores every packet it fetches
    and rebroadcasts the one sent the fewest times so far (oldest first on
    ties). A receiver only gains from packet ids it has not heard before.

Within a slot the BS->RS reception is resolved first, then the relay
broadcasts, then the receivers listen. Delays count slots from 1.

Reproducibility
---------------
Trials are simulated in fixed-size blocks of :data:`BLOCK_SIZE` lanes. Block
``k`` draws from ``SeedSequence(seed, spawn_key=(k,))`` and trial ``i`` is
lane ``i % BLOCK_SIZE`` of block ``i // BLOCK_SIZE``. Every slot draws one
uniform per lane for the BS->RS hop and one per lane and receiver for the
RS->receiver hops, so a lane only ever reads its own numbers. A trial is
therefore a function of ``(seed, trial index)`` alone: it does not depend on
the requested trial count, on thread count or on scheduling. All three
schemes read the same numbers in the same layout, which makes their
comparisons use common random numbers.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .analytic import Scenario

__all__ = [
    "SCHEMES",
    "BLOCK_SIZE",
    "THREADS_ENV",
    "RngSpec",
    "TrialOutcome",
    "TrialBatch",
    "DelayStats",
    "simulate_nobuffer",
    "simulate_withbuffer",
    "simulate_fbpf",
    "simulate_block",
    "withbuffer_step",
    "run_trials",
    "trial_outcome",
    "summarize",
    "run_batch",
    "resolve_threads",
]

SCHEMES = ("nobuffer", "withbuffer", "fbpf")
BLOCK_SIZE = 2048
THREADS_ENV = "RLNC_LAB_THREADS"


@dataclass(frozen=True)
class RngSpec:
    """Master seed for a batch of trials.

    Parameters
    ----------
    seed : int
        Non-negative master seed, below ``2**64``.
    """

    seed: int = 0

    def __post_init__(self):
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")

    def block_generator(self, block: int) -> np.random.Generator:
        """Generator feeding lanes ``block*BLOCK_SIZE ... (block+1)*BLOCK_SIZE - 1``."""
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=(int(block),)))


@dataclass(frozen=True)
class TrialOutcome:
    """Result of one simulated trial.

    Attributes
    ----------
    system_delay : int
        Slot in which the last receiver completed.
    per_receiver_delay : tuple of int
        Completion slot of each receiver.
    relay_received_count : int
        Packets the relay fetched from the BS up to and including the
        system completion slot.
    """

    system_delay: int
    per_receiver_delay: tuple
    relay_received_count: int


@dataclass(frozen=True)
class TrialBatch:
    """Column-wise outcomes of many trials; row ``i`` is one trial."""

    system_delay: np.ndarray
    per_receiver_delay: np.ndarray
    relay_received_count: np.ndarray

    def __len__(self) -> int:
        return len(self.system_delay)

    def outcome(self, i: int) -> TrialOutcome:
        return TrialOutcome(
            int(self.system_delay[i]),
            tuple(int(x) for x in self.per_receiver_delay[i]),
            int(self.relay_received_count[i]),
        )

    def head(self, n: int) -> "TrialBatch":
        return TrialBatch(self.system_delay[:n], self.per_receiver_delay[:n], self.relay_received_count[:n])

    @staticmethod
    def concat(parts) -> "TrialBatch":
        parts = list(parts)
        return TrialBatch(
            np.concatenate([b.system_delay for b in parts]),
            np.concatenate([b.per_receiver_delay for b in parts]),
            np.concatenate([b.relay_received_count for b in parts]),
        )


@dataclass(frozen=True)
class DelayStats:
    """Sample statistics of one metric over a batch of trials.

    ``stderr`` is ``sqrt(variance / trials)``. With a single trial the
    variance is undefined; it is then reported as 0 and ``stderr_defined``
    is False.
    """

    mean: float
    variance: float
    stderr: float
    trials: int
    seed: int
    scheme: str
    metric: str
    stderr_defined: bool = True

    def scaled(self, factor: float) -> "DelayStats":
        """Statistics of the metric divided by ``factor`` (e.g. per packet)."""
        return replace(
            self,
            mean=self.mean / factor,
            variance=self.variance / factor**2,
            stderr=self.stderr / factor,
        )


# --- per-slot kernels --------------------------------------------------------

class _Lanes:
    """Bookkeeping shared by the three kernels."""

    def __init__(self, s: Scenario, rng: np.random.Generator, n: int):
        self.s = s
        self.rng = rng
        self.n = n
        self.R = s.R
        self.p = np.asarray(s.p, dtype=float)
        self.count = np.zeros((n, self.R), dtype=np.int64)
        self.done_at = np.zeros((n, self.R), dtype=np.int64)
        self.fetched = np.zeros(n, dtype=np.int64)
        self.fetched_at_end = np.zeros(n, dtype=np.int64)
        self.finished = np.zeros(n, dtype=bool)
        self.slot = 0

    def draw(self):
        self.slot += 1
        u0 = self.rng.random(self.n)
        u = self.rng.random((self.n, self.R))
        return u0 < self.s.p0, u < self.p

    def settle(self, relay_got: np.ndarray) -> bool:
        """Record completions after this slot; return True when every lane is done."""
        self.fetched += relay_got
        newly = (self.count >= self.s.P) & (self.done_at == 0)
        self.done_at[newly] = self.slot
        all_done = (self.done_at > 0).all(axis=1)
        just = all_done & ~self.finished
        self.fetched_at_end[just] = self.fetched[just]
        self.finished |= all_done
        return bool(self.finished.all())

    def result(self) -> TrialBatch:
        return TrialBatch(self.done_at.max(axis=1), self.done_at, self.fetched_at_end)


def _kernel_nobuffer(s: Scenario, rng: np.random.Generator, n: int) -> TrialBatch:
    lanes = _Lanes(s, rng, n)
    while True:
        relay_got, heard = lanes.draw()
        gain = heard & relay_got[:, None] & (lanes.count < s.P)
        lanes.count += gain
        if lanes.settle(relay_got):
            return lanes.result()


def withbuffer_step(P: int, relay: np.ndarray, count: np.ndarray,
                    relay_got: np.ndarray, heard: np.ndarray) -> None:
    """Advance buffering-relay lanes by one slot, in place.

    The relay rank grows on a BS->RS success while below ``P``. A receiver
    that hears the relay gains a packet when its rank is below the relay's
    updated rank, so a receiver level with the relay needs the relay to have
    grown in the same slot.
    """
    relay += relay_got & (relay < P)
    count += heard & (count < relay[:, None])


def _kernel_withbuffer(s: Scenario, rng: np.random.Generator, n: int) -> TrialBatch:
    lanes = _Lanes(s, rng, n)
    relay = np.zeros(n, dtype=np.int64)
    while True:
        relay_got, heard = lanes.draw()
        withbuffer_step(s.P, relay, lanes.count, relay_got, heard)
        if lanes.settle(relay_got):
            return lanes.result()


def _kernel_fbpf(s: Scenario, rng: np.random.Generator, n: int, inspect=None) -> TrialBatch:
    lanes = _Lanes(s, rng, n)
    cap = max(4 * s.P, 16)
    sent = np.full((n, cap), np.iinfo(np.int64).max, dtype=np.int64)
    has = np.zeros((n, s.R, cap), dtype=bool)
    held = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    while True:
        relay_got, heard = lanes.draw()
        if held.max() + 1 > cap:
            grow = cap
            sent = np.concatenate([sent, np.full((n, grow), np.iinfo(np.int64).max, dtype=np.int64)], axis=1)
            has = np.concatenate([has, np.zeros((n, s.R, grow), dtype=bool)], axis=2)
            cap += grow
        arrivals = rows[relay_got]
        sent[arrivals, held[arrivals]] = 0
        held += relay_got
        live = held > 0
        # argmin returns the first minimum, i.e. the oldest packet among ties
        pick = np.argmin(sent, axis=1)
        sent[rows[live], pick[live]] += 1
        fresh = ~has[rows, :, pick]
        gain = heard & live[:, None] & fresh & (lanes.count < s.P)
        b, r = np.nonzero(gain)
        has[b, r, pick[b]] = True
        lanes.count += gain
        if lanes.settle(relay_got):
            if inspect is not None:
                inspect(has, lanes.count)
            return lanes.result()


_KERNELS: dict[str, Callable[[Scenario, np.random.Generator, int], TrialBatch]] = {
    "nobuffer": _kernel_nobuffer,
    "withbuffer": _kernel_withbuffer,
    "fbpf": _kernel_fbpf,
}


def _kernel(scheme: str):
    try:
        return _KERNELS[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}") from None


def simulate_block(scheme: str, s: Scenario, rng: np.random.Generator, n: int) -> TrialBatch:
    """Simulate ``n`` lanes of ``scheme`` driven by a single generator."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return _kernel(scheme)(s, rng, n)


def simulate_nobuffer(s: Scenario, rng: np.random.Generator) -> TrialOutcome:
    """One trial of the forward-on-arrival relay."""
    return simulate_block("nobuffer", s, rng, 1).outcome(0)


def simulate_withbuffer(s: Scenario, rng: np.random.Generator) -> TrialOutcome:
    """One trial of the buffering relay that recodes every slot."""
    return simulate_block("withbuffer", s, rng, 1).outcome(0)


def simulate_fbpf(s: Scenario, rng: np.random.Generator) -> TrialOutcome:
    """One trial of the fewest-broadcast-packet-first relay."""
    return simulate_block("fbpf", s, rng, 1).outcome(0)


# --- batches -----------------------------------------------------------------

def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit argument, else ``RLNC_LAB_THREADS``, else 1.

    A value of 0 means one worker per CPU.
    """
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "1").strip() or "1"
        try:
            threads = int(raw)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValueError("thread count must be non-negative")
    return threads or (os.cpu_count() or 1)


def _as_rng_spec(rng) -> RngSpec:
    return rng if isinstance(rng, RngSpec) else RngSpec(int(rng))


def run_trials(scheme: str, s: Scenario, trials: int, rng: RngSpec | int = 0,
               threads: int | None = None) -> TrialBatch:
    """Simulate trials ``0 .. trials-1`` and return their outcomes in index order."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    kernel = _kernel(scheme)
    spec = _as_rng_spec(rng)
    n_blocks = -(-trials // BLOCK_SIZE)

    def one(block: int) -> TrialBatch:
        return kernel(s, spec.block_generator(block), BLOCK_SIZE)

    workers = min(resolve_threads(threads), n_blocks)
    if workers == 1:
        parts = [one(k) for k in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(n_blocks)))
    return TrialBatch.concat(parts).head(trials)


def trial_outcome(scheme: str, s: Scenario, rng: RngSpec | int, index: int) -> TrialOutcome:
    """Recompute the single trial ``index`` of a batch without running the others."""
    spec = _as_rng_spec(rng)
    block, lane = divmod(int(index), BLOCK_SIZE)
    return _kernel(scheme)(s, spec.block_generator(block), BLOCK_SIZE).outcome(lane)


def summarize(values: np.ndarray, *, seed: int, scheme: str, metric: str) -> DelayStats:
    """Exact integer moments turned into :class:`DelayStats`.

    Sums of integer samples and their squares are formed as Python integers,
    so the result does not depend on summation order.
    """
    x = np.asarray(values, dtype=np.int64)
    n = len(x)
    if n < 1:
        raise ValueError("no samples")
    sx = int(x.sum())
    sxx = int((x * x).sum())
    mean = sx / n
    if n == 1:
        return DelayStats(mean, 0.0, 0.0, 1, seed, scheme, metric, stderr_defined=False)
    variance = (n * sxx - sx * sx) / (n * (n - 1))
    return DelayStats(mean, variance, (variance / n) ** 0.5, n, seed, scheme, metric)


def run_batch(scheme: str, s: Scenario, trials: int, rng: RngSpec | int = 0,
              threads: int | None = None) -> dict[str, DelayStats]:
    """Simulate a batch and summarise every metric it supports.

    Returns
    -------
    dict
        ``"system_delay"``, one ``"receiver_delay[r]"`` per receiver and, for
        ``fbpf`` only, ``"buffer"`` (packets fetched by the relay up to system
        completion). Values are in slots or packets, not normalised by ``P``.
    """
    spec = _as_rng_spec(rng)
    batch = run_trials(scheme, s, trials, spec, threads)
    stats = {"system_delay": summarize(batch.system_delay, seed=spec.seed, scheme=scheme, metric="system_delay")}
    for r in range(s.R):
        name = f"receiver_delay[{r}]"
        stats[name] = summarize(batch.per_receiver_delay[:, r], seed=spec.seed, scheme=scheme, metric=name)
    if scheme == "fbpf":
        stats["buffer"] = summarize(batch.relay_received_count, seed=spec.seed, scheme=scheme, metric="buffer")
    return stats
