"""Cross-validation report: independent estimators checked against each other.

Each check evaluates one relation on a grid and records the worst deviation
seen. Checks marked informational are reported but never fail the run.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from .analytic import (
    Scenario,
    delay_broadcast_system,
    delay_nobuffer_system,
    delay_withbuffer_single_closed,
    delay_withbuffer_single_recursive,
    lower_bound_system,
    prob_relay_ahead,
)
from .markov import (
    broadcast_residual,
    build_chain_broadcast,
    build_chain_multi,
    build_chain_single,
    expected_absorption_time,
    finish_order_excess,
    prob_relay_ahead_joint,
)
from .sim import run_batch

__all__ = ["ValidationGrid", "CheckResult", "ValidationReport", "validate", "CHECKS"]


@dataclass(frozen=True)
class ValidationGrid:
    """Scenario grid and Monte Carlo budget for :func:`validate`."""

    probs: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    max_P: int = 12
    small_probs: tuple = (0.3, 0.5, 0.7, 0.9)
    small_max_P: int = 6
    trials: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    detail: str = ""
    informational: bool = False

    def line(self) -> str:
        status = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        text = f"{status} {self.name}: max deviation {self.deviation:.3g} (tolerance {self.tolerance:.3g})"
        return text + (f" - {self.detail}" if self.detail else "")


@dataclass
class ValidationReport:
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed or r.informational for r in self.results)

    def failures(self) -> list:
        return [r for r in self.results if not (r.passed or r.informational)]

    def text(self) -> str:
        lines = [r.line() for r in self.results]
        lines.append(f"{len(self.results) - len(self.failures())}/{len(self.results)} checks passed")
        return "\n".join(lines) + "\n"


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _check_closed_vs_recursive(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, pr in itertools.product(g.probs, repeat=2):
        for P in range(1, g.max_P + 1):
            worst = max(worst, _rel(delay_withbuffer_single_recursive(P, p0, pr),
                                    delay_withbuffer_single_closed(P, p0, pr)))
    return CheckResult("closed_vs_recursive", worst <= 1e-9, worst, 1e-9)


def _check_closed_vs_chain(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, pr in itertools.product(g.probs, repeat=2):
        for P in range(1, g.max_P + 1):
            chain = expected_absorption_time(build_chain_single(P, p0, pr))
            worst = max(worst, _rel(chain, delay_withbuffer_single_closed(P, p0, pr)))
    return CheckResult("closed_vs_chain", worst <= 1e-9, worst, 1e-9)


def _check_broadcast_series_vs_chain(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for R in (1, 2, 3):
        for p in itertools.product(g.small_probs[::2], repeat=R):
            for P in range(1, 5):
                chain = expected_absorption_time(build_chain_broadcast(P, p))
                worst = max(worst, abs(chain - delay_broadcast_system(P, p)))
    return CheckResult("broadcast_series_vs_chain", worst <= 1e-9, worst, 1e-9)


def _check_joint_vs_single_receiver(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, pr in itertools.product(g.small_probs, repeat=2):
        for P in range(1, g.small_max_P + 1):
            worst = max(worst, abs(prob_relay_ahead_joint(P, p0, (pr,)) - prob_relay_ahead(P, p0, pr)))
    return CheckResult("joint_vs_single_receiver_recursion", worst <= 1e-9, worst, 1e-9)


def _check_joint_product_inequality(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, p1, p2 in itertools.product(g.small_probs, repeat=3):
        for P in range(1, 5):
            gap = prob_relay_ahead(P, p0, p1) * prob_relay_ahead(P, p0, p2) - prob_relay_ahead_joint(P, p0, (p1, p2))
            worst = max(worst, gap)
    return CheckResult("joint_at_least_product", worst <= 1e-12, max(worst, 0.0), 1e-12)


def _check_lower_bound(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, p1, p2 in itertools.product(g.small_probs, repeat=3):
        for P in range(1, 5):
            chain = expected_absorption_time(build_chain_multi(P, p0, (p1, p2)))
            worst = max(worst, lower_bound_system(P, p0, (p1, p2)) - chain)
    return CheckResult("lower_bound_below_chain", worst <= 1e-9, max(worst, 0.0), 1e-9)


def _check_excess_cumulative(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for p0, p1, p2 in itertools.product(g.small_probs, repeat=3):
        running = 0.0
        for P in range(2, g.small_max_P + 1):
            running += finish_order_excess(P, p0, p1, p2)
            worst = max(worst, -running)
    return CheckResult("excess_cumulative_nonnegative", worst <= 1e-10, max(worst, 0.0), 1e-10)


def _check_residual_three_receivers(g: ValidationGrid) -> CheckResult:
    lowest = float("inf")
    for p0 in g.small_probs[::2]:
        for p in itertools.product(g.small_probs[::2], repeat=3):
            for P in range(2, 4):
                lowest = min(lowest, broadcast_residual(P, p0, p))
    return CheckResult("residual_three_receivers", lowest >= -1e-10, max(-lowest, 0.0), 1e-10,
                       detail=f"smallest residual {lowest:.3g}", informational=True)


def _within(stats, target: float, k: float = 4.0) -> float:
    return abs(stats.mean - target) / stats.stderr / k


def _check_simulation_vs_chain(g: ValidationGrid) -> CheckResult:
    worst = 0.0
    for P, R in [(2, 1), (2, 2), (3, 2)]:
        s = Scenario.uniform(P, 0.75, 0.75, R)
        exact = expected_absorption_time(build_chain_multi(P, 0.75, s.p))
        worst = max(worst, _within(run_batch("withbuffer", s, g.trials, g.seed)["system_delay"], exact))
    return CheckResult("withbuffer_simulation_vs_chain", worst <= 1.0, worst, 1.0,
                       detail="deviation in units of 4 standard errors")


def _check_nobuffer_simulation(g: ValidationGrid) -> CheckResult:
    s = Scenario.uniform(10, 0.75, 0.75, 10)
    worst = _within(run_batch("nobuffer", s, g.trials, g.seed)["system_delay"], delay_nobuffer_system(s))
    return CheckResult("nobuffer_simulation_vs_analytic", worst <= 1.0, worst, 1.0,
                       detail="deviation in units of 4 standard errors")


def _check_bracketing(g: ValidationGrid) -> CheckResult:
    worst = float("-inf")
    for pr in (0.5, 0.75, 0.95):
        s = Scenario.uniform(10, 0.75, pr, 10)
        st = {k: run_batch(k, s, g.trials, g.seed)["system_delay"] for k in ("withbuffer", "fbpf", "nobuffer")}
        for lo, hi in (("withbuffer", "fbpf"), ("fbpf", "nobuffer")):
            se = (st[lo].stderr ** 2 + st[hi].stderr ** 2) ** 0.5
            worst = max(worst, (st[lo].mean - st[hi].mean) / max(se, 1e-300))
    return CheckResult("bracketing_withbuffer_fbpf_nobuffer", worst <= 4.0, worst, 4.0,
                       detail="largest violation in combined standard errors")


CHECKS: dict[str, Callable[[ValidationGrid], CheckResult]] = {
    "closed_vs_recursive": _check_closed_vs_recursive,
    "closed_vs_chain": _check_closed_vs_chain,
    "broadcast_series_vs_chain": _check_broadcast_series_vs_chain,
    "joint_vs_single_receiver_recursion": _check_joint_vs_single_receiver,
    "joint_at_least_product": _check_joint_product_inequality,
    "lower_bound_below_chain": _check_lower_bound,
    "excess_cumulative_nonnegative": _check_excess_cumulative,
    "residual_three_receivers": _check_residual_three_receivers,
    "withbuffer_simulation_vs_chain": _check_simulation_vs_chain,
    "nobuffer_simulation_vs_analytic": _check_nobuffer_simulation,
    "bracketing_withbuffer_fbpf_nobuffer": _check_bracketing,
}


def validate(grid: ValidationGrid | None = None, only: list[str] | None = None) -> ValidationReport:
    """Run the cross-check suite (or the named subset) and collect results."""
    grid = grid or ValidationGrid()
    names = list(CHECKS) if only is None else only
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    report = ValidationReport()
    for name in names:
        report.results.append(CHECKS[name](grid))
    return report
