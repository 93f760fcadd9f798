"""Acceptance criteria, each run at its stated tolerance with a runtime budget."""
import itertools
import os
import subprocess
import sys
import time

import numpy as np

from rlnc_lab.analytic import (
    Scenario,
    broadcast_side_bound,
    delay_broadcast_system,
    delay_nobuffer_system,
    delay_withbuffer_single_closed,
    delay_withbuffer_single_recursive,
    expected_max_geometric,
    lower_bound_system,
    prob_relay_ahead,
)
from rlnc_lab.markov import (
    build_chain_multi,
    build_chain_single,
    expected_absorption_time,
    finish_order_excess,
    prob_relay_ahead_joint,
)
from rlnc_lab.sim import run_batch
from rlnc_lab.sweep import preset, run_sweeps

GRID_ODD = [0.1, 0.3, 0.5, 0.7, 0.9]
GRID_EPS = [0.3, 0.5, 0.7, 0.9]


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    @property
    def ok(self):
        return self.elapsed < self.seconds

    def __str__(self):
        return f"{self.elapsed:.1f}s of {self.seconds}s"


def test_criterion_01_closed_recursive_chain_agree(criterion):
    clock = Budget(10)
    worst, exact_mismatch = 0.0, []
    for p0, pr in itertools.product(GRID_ODD, repeat=2):
        for P in range(1, 13):
            closed = delay_withbuffer_single_closed(P, p0, pr)
            rec = delay_withbuffer_single_recursive(P, p0, pr)
            chain = expected_absorption_time(build_chain_single(P, p0, pr))
            worst = max(worst, abs(rec - closed) / closed, abs(chain - closed) / closed)
            if P <= 8:
                q = delay_withbuffer_single_closed(P, p0, pr, exact=True)
                if not (q == delay_withbuffer_single_recursive(P, p0, pr, exact=True)
                        == expected_absorption_time(build_chain_single(P, p0, pr, exact=True))):
                    exact_mismatch.append((P, p0, pr))
    ok = worst <= 1e-9 and not exact_mismatch and clock.ok
    criterion(1, ok, f"max relative deviation {worst:.2e} (<= 1e-9), "
                     f"rational mismatches {len(exact_mismatch)} for P <= 8, {clock}")


def test_criterion_02_fig2a_endpoint(criterion):
    clock = Budget(1)
    near = delay_nobuffer_system(Scenario.uniform(10, 0.75, 0.99, 10)) / 10
    at_one = delay_nobuffer_system(Scenario.uniform(10, 0.75, 1.0, 10)) / 10
    rel = abs(near - 4 / 3) / (4 / 3)
    ok = rel <= 0.02 and abs(at_one - 4 / 3) <= 1e-12 and clock.ok
    criterion(2, ok, f"p_r=0.99 gives {near:.4f} per packet, {100 * rel:.2f}% from 1.3333 (needs <= 2%); "
                     f"p_r=1 gives {at_one:.12f}; {clock}")


def test_criterion_03_fig2b_endpoint(criterion):
    clock = Budget(30)
    p = [0.75] * 10
    analytic = delay_broadcast_system(10, p) / 10
    sim = run_batch("withbuffer", Scenario(10, 1.0, tuple(p)), 100_000, 0)["system_delay"].scaled(10)
    z = abs(sim.mean - analytic) / sim.stderr
    ok = abs(analytic - 1.69) <= 0.01 and z <= 4 and clock.ok
    criterion(3, ok, f"broadcast delay {analytic:.4f} per packet (1.69 +- 0.01); "
                     f"simulated {sim.mean:.4f} is {z:.2f} stderr away (<= 4); {clock}")


def test_criterion_04_table1_buffer(criterion):
    clock = Budget(120)
    targets = {0.5: 1.293, 0.8: 1.559, 1.0: 1.698}
    got = {p0: run_batch("fbpf", Scenario.uniform(10, p0, 0.75, 10), 100_000, 0)["buffer"].scaled(10).mean
           for p0 in targets}
    ok = all(abs(got[p0] - t) <= 0.03 for p0, t in targets.items()) and clock.ok
    text = ", ".join(f"p0={p0}: {got[p0]:.4f} vs {t}" for p0, t in targets.items())
    criterion(4, ok, f"{text} (+- 0.03); {clock}")


def test_criterion_05_scheme_ordering(criterion):
    clock = Budget(300)
    (spec,) = preset("fig2a")
    rows = run_sweeps([spec])
    sim = {(r.p_desc, r.scheme): r for r in rows if r.estimator == "simulation" and r.metric == "system_delay"}
    inversions, separated, points = [], 0, sorted({k[0] for k in sim}, key=float)
    for pd in points:
        for lo, hi in (("withbuffer", "fbpf"), ("fbpf", "nobuffer")):
            a, b = sim[(pd, lo)], sim[(pd, hi)]
            se = float(np.hypot(a.stderr, b.stderr))
            gap = b.value - a.value
            if gap < -4 * se or (abs(gap) > 5 * se and gap <= 4 * se):
                inversions.append((pd, lo, hi, gap / se))
            if gap > 5 * se:
                separated += 1
    ok = not inversions and clock.ok
    criterion(5, ok, f"{len(points)} grid points x 2 pairs: {separated} strictly separated (> 5 stderr), "
                     f"{len(inversions)} violations {inversions}; {clock}")


def test_criterion_06_multi_receiver_chain_vs_simulation(criterion):
    clock = Budget(180)
    n_states = build_chain_multi(2, 0.75, (0.75, 0.75)).n_states
    details, ok = [], n_states == 14
    for P, R in [(2, 2), (3, 2), (4, 2), (2, 3)]:
        exact = expected_absorption_time(build_chain_multi(P, 0.75, (0.75,) * R))
        st = run_batch("withbuffer", Scenario.uniform(P, 0.75, 0.75, R), 1_000_000, 0)["system_delay"]
        z = abs(st.mean - exact) / st.stderr
        ok &= z <= 4
        details.append(f"(P={P},R={R}) {z:.2f} stderr")
    ok &= clock.ok
    criterion(6, ok, f"P=2 two-receiver chain has {n_states} states; " + ", ".join(details) + f" (<= 4); {clock}")


def test_criterion_07_bound_suite(criterion):
    clock = Budget(60)
    p = (0.75, 0.85)
    worst_violation, worst_p1, tight = -np.inf, 0.0, None
    for p0 in (0.65, 0.8, 0.95):
        for P in range(1, 13):
            exact = expected_absorption_time(build_chain_multi(P, p0, p))
            worst_violation = max(worst_violation, lower_bound_system(P, p0, p) - exact)
            if P == 1:
                formula = 1 / p0 + expected_max_geometric(p) - 1
                worst_p1 = max(worst_p1, abs(broadcast_side_bound(1, p0, p) - exact), abs(formula - exact))
            if p0 == 0.95 and P == 12:
                tight = abs(broadcast_side_bound(P, p0, p) - exact) / exact
    ok = worst_violation <= 1e-12 and worst_p1 <= 1e-12 and tight <= 0.03 and clock.ok
    criterion(7, ok, f"max(bound - exact) {worst_violation:.2e} (<= 0); P=1 deviation {worst_p1:.1e}; "
                     f"broadcast bound {100 * tight:.2f}% below exact at p0=0.95, P=12 (<= 3%); {clock}")


def test_criterion_08_excess_suite(criterion):
    clock = Budget(60)
    zero_dev = 0.0
    for P in range(1, 7):
        for a, b in itertools.product(GRID_EPS, repeat=2):
            zero_dev = max(zero_dev, abs(finish_order_excess(P, 1.0, a, b)))
            zero_dev = max(zero_dev, abs(finish_order_excess(P, a, 1.0, 1.0)))
    lowest = np.inf
    for p0, p1, p2 in itertools.product(GRID_EPS, repeat=3):
        running = 0.0
        for P in range(2, 7):
            running += finish_order_excess(P, p0, p1, p2)
            lowest = min(lowest, running)
    ok = zero_dev <= 1e-12 and lowest >= -1e-10 and clock.ok
    criterion(8, ok, f"degenerate-channel excess {zero_dev:.1e} (<= 1e-12); "
                     f"smallest cumulative excess {lowest:.3e} (>= -1e-10); {clock}")


def test_criterion_09_relay_ahead_probability(criterion):
    clock = Budget(60)
    grid = [round(0.1 * k, 1) for k in range(1, 10)]
    closed_dev = max(abs(prob_relay_ahead(1, p0, pr) - pr / (p0 + pr - p0 * pr))
                     for p0, pr in itertools.product(grid, repeat=2))
    joint_dev = max(abs(prob_relay_ahead_joint(P, p0, (pr,)) - prob_relay_ahead(P, p0, pr))
                    for p0, pr in itertools.product(GRID_ODD, repeat=2) for P in range(1, 7))
    product_gap = max(prob_relay_ahead(P, p0, p1) * prob_relay_ahead(P, p0, p2)
                      - prob_relay_ahead_joint(P, p0, (p1, p2))
                      for p0, p1, p2 in itertools.product(GRID_EPS, repeat=3) for P in range(1, 7))
    ok = closed_dev <= 1e-12 and joint_dev <= 1e-9 and product_gap <= 1e-12 and clock.ok
    criterion(9, ok, f"P=1 closed form deviation {closed_dev:.1e} (<= 1e-12); single-receiver joint deviation "
                     f"{joint_dev:.1e} (<= 1e-9); max(product - joint) {product_gap:.2e} (<= 0); {clock}")


def test_criterion_10_deterministic_csv(criterion, tmp_path):
    clock = Budget(300)
    outputs = {}
    for threads in ("1", "4", "0"):
        out = tmp_path / f"fig2a_{threads}.csv"
        env = {**os.environ, "RLNC_LAB_THREADS": threads}
        subprocess.run([sys.executable, "-m", "rlnc_lab", "preset", "fig2a", "--seed", "42", "--out", str(out)],
                       check=True, env=env)
        outputs[threads] = out.read_bytes()
    identical = len(set(outputs.values())) == 1
    ok = identical and clock.ok
    criterion(10, ok, f"fig2a CSVs for thread counts 1, 4, max identical: {identical} "
                      f"({len(outputs['1'])} bytes); {clock}")
