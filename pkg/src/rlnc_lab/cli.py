"""Command-line front end: ``rlnc-lab <verb> [options]``.

Verbs ``analytic``, ``chain`` and ``simulate`` evaluate one scenario,
``sweep`` runs a JSON config, ``preset`` runs a built-in figure or table and
``validate`` runs the cross-check suite. Result verbs print CSV to stdout or
write it to ``--out``.

Exit status: 0 on success, 1 when validation fails, 2 on a configuration or
usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .analytic import DEFAULT_TAIL_TOL, Scenario
from .markov import DEFAULT_STATE_CAP, build_chain_multi
from .sim import SCHEMES
from .sweep import (
    PRESETS,
    ConfigError,
    Series,
    SweepSpec,
    emit_csv,
    format_csv,
    load_config,
    preset,
    run_sweep,
    run_sweeps,
)
from .validate import CHECKS, ValidationGrid, validate

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trials", type=int, default=None, help="Monte Carlo trials (default 100000)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p.add_argument("--tail-tol", type=float, default=None, help=f"series tail tolerance (default {DEFAULT_TAIL_TOL:g})")
    p.add_argument("--state-cap", type=int, default=None, help=f"largest chain to build (default {DEFAULT_STATE_CAP})")
    p.add_argument("--exact", action="store_true", default=None, help="rational arithmetic where supported")


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--P", type=int, required=True, help="number of source packets")
    p.add_argument("--p0", type=float, required=True, help="BS->relay success probability")
    p.add_argument("--pr", type=float, help="success probability shared by all receivers (with --R)")
    p.add_argument("--R", type=int, help="number of receivers (with --pr)")
    p.add_argument("--p", help="comma-separated per-receiver success probabilities")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlnc-lab", description="Completion delay of RLNC over a full-duplex relay.")
    parser.add_argument("-v", "--verbose", action="store_true", help="more logging")
    sub = parser.add_subparsers(dest="verb", required=True)

    a = sub.add_parser("analytic", help="closed forms, series and bounds for one scenario")
    _scenario_args(a)
    _common(a)

    c = sub.add_parser("chain", help="exact Markov-chain delays for one scenario")
    _scenario_args(c)
    _common(c)
    c.add_argument("--dump-edges", metavar="PATH", help="write the buffered-relay chain as a tab-separated edge list")

    s = sub.add_parser("simulate", help="Monte Carlo delays for one scenario")
    _scenario_args(s)
    _common(s)
    s.add_argument("--scheme", choices=SCHEMES, action="append", help="scheme to simulate (repeatable; default all)")

    w = sub.add_parser("sweep", help="run a JSON sweep config")
    w.add_argument("config")
    _common(w)

    pr = sub.add_parser("preset", help="reproduce a built-in figure or table")
    pr.add_argument("name", choices=PRESETS)
    _common(pr)

    v = sub.add_parser("validate", help="run the cross-validation suite")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--check", action="append", choices=list(CHECKS), help="run only this check (repeatable)")
    return parser


def _scenario(ns) -> Scenario:
    if ns.p is not None:
        if ns.pr is not None or ns.R is not None:
            raise ConfigError("give either --p or --pr with --R, not both")
        try:
            p = tuple(float(x) for x in ns.p.split(","))
        except ValueError:
            raise ConfigError(f"--p must be comma-separated numbers, got {ns.p!r}") from None
    elif ns.pr is not None and ns.R is not None:
        if ns.R < 1:
            raise ConfigError("--R must be at least 1")
        p = (ns.pr,) * ns.R
    else:
        raise ConfigError("receiver probabilities missing: give --p or --pr with --R")
    try:
        return Scenario(ns.P, ns.p0, p)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _overrides(ns) -> dict:
    out = {"trials": ns.trials, "seed": ns.seed, "tail_tol": ns.tail_tol,
           "state_cap": ns.state_cap, "exact": ns.exact}
    for key, value in out.items():
        if key in ("trials", "state_cap") and value is not None and value < 1:
            raise ConfigError(f"--{key.replace('_', '-')} must be positive")
        if key == "seed" and value is not None and not 0 <= value < 2**64:
            raise ConfigError("--seed must lie in [0, 2**64)")
    return {k: v for k, v in out.items() if v is not None}


def _single_point(ns, triples) -> SweepSpec:
    s = _scenario(ns)
    series = tuple(Series(*t) for t in triples(s))
    return replace(SweepSpec(base=s, series=series), **_overrides(ns))


def _analytic_series(s: Scenario):
    out = [("nobuffer", "analytic", "system_delay")]
    out += [("nobuffer", "analytic", f"receiver_delay[{r}]") for r in range(s.R)]
    out += [("withbuffer", "analytic", "system_delay")]
    out += [("withbuffer", "analytic", f"receiver_delay[{r}]") for r in range(s.R)]
    out += [("withbuffer", "analytic", m) for m in ("lower_bound", "broadcast_bound", "single_bound")]
    return out


def _chain_series(s: Scenario):
    out = []
    for scheme in ("nobuffer", "withbuffer"):
        out.append((scheme, "chain", "system_delay"))
        out += [(scheme, "chain", f"receiver_delay[{r}]") for r in range(s.R)]
    return out


def _simulate_series(schemes):
    def triples(s: Scenario):
        out = []
        for scheme in schemes:
            out.append((scheme, "simulation", "system_delay"))
            out += [(scheme, "simulation", f"receiver_delay[{r}]") for r in range(s.R)]
            if scheme == "fbpf":
                out.append((scheme, "simulation", "buffer"))
        return out
    return triples


def _write(rows, out) -> None:
    if out:
        emit_csv(rows, out)
    else:
        sys.stdout.write(format_csv(rows))


def _run(ns) -> int:
    if ns.verb == "validate":
        if ns.trials < 1:
            raise ConfigError("--trials must be positive")
        report = validate(ValidationGrid(trials=ns.trials, seed=ns.seed), only=ns.check)
        sys.stdout.write(report.text())
        return EXIT_OK if report.passed else EXIT_FAILED
    if ns.verb == "analytic":
        rows = run_sweep(_single_point(ns, _analytic_series))
    elif ns.verb == "chain":
        spec = _single_point(ns, _chain_series)
        if ns.dump_edges:
            s = spec.base
            chain = build_chain_multi(s.P, s.p0, s.p, state_cap=spec.state_cap)
            with open(ns.dump_edges, "w", encoding="utf-8", newline="") as fh:
                chain.dump_edges(fh)
        rows = run_sweep(spec)
    elif ns.verb == "simulate":
        rows = run_sweep(_single_point(ns, _simulate_series(ns.scheme or SCHEMES)))
    elif ns.verb == "sweep":
        rows = run_sweep(replace(load_config(ns.config), **_overrides(ns)))
    else:
        rows = run_sweeps(preset(ns.name, **_overrides(ns)))
    _write(rows, ns.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(ns)
    except ConfigError as err:
        print(f"rlnc-lab: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as err:
        print(f"rlnc-lab: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
