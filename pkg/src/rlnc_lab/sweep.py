"""Parameter sweeps, built-in experiment presets and CSV results.

A sweep varies one parameter of a base scenario over a grid and evaluates a
list of *series* at every grid point. A series is a ``(scheme, estimator,
metric)`` triple:

* scheme: ``nobuffer``, ``withbuffer`` or ``fbpf``;
* estimator: ``analytic`` (closed forms and series), ``chain`` (exact
  absorbing Markov chain) or ``simulation`` (Monte Carlo);
* metric: ``system_delay``, ``receiver_delay[r]``, ``buffer``,
  ``lower_bound``, ``broadcast_bound`` or ``single_bound``.

Every value is reported per packet, i.e. divided by ``P``. A combination that
cannot be evaluated at a grid point (chain too large, no closed form, metric
not defined for the scheme) still yields a row, with an empty value and the
metric tagged ``<metric>[skipped:<reason>]``, so the row count is always
grid size times series count.

Config files are JSON objects; see :func:`load_config` for the keys.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

from .analytic import (
    DEFAULT_TAIL_TOL,
    Scenario,
    broadcast_side_bound,
    delay_broadcast_system,
    delay_nobuffer_single,
    delay_nobuffer_system,
    delay_withbuffer_single_closed,
    lower_bound_system,
    single_receiver_bound,
)
from .markov import (
    DEFAULT_STATE_CAP,
    StateSpaceTooLarge,
    build_chain_broadcast,
    build_chain_multi,
    build_chain_single,
    expected_absorption_time,
)
from .sim import SCHEMES, run_batch

__all__ = [
    "ESTIMATORS",
    "CSV_HEADER",
    "ConfigError",
    "Series",
    "SweepSpec",
    "ResultRow",
    "load_config",
    "parse_config",
    "preset",
    "PRESETS",
    "run_sweep",
    "run_sweeps",
    "evaluate_point",
    "emit_csv",
    "format_csv",
    "read_csv",
    "describe_p",
]

log = logging.getLogger(__name__)

ESTIMATORS = ("analytic", "chain", "simulation")
SWEEP_PARAMS = ("P", "p0", "p_r", "p")
BOUND_METRICS = ("lower_bound", "broadcast_bound", "single_bound")
CSV_HEADER = ("scheme", "estimator", "P", "R", "p0", "p_desc", "metric", "value", "stderr", "trials", "seed")
DEFAULT_TRIALS = 100_000
_RECEIVER_METRIC = re.compile(r"^receiver_delay(?:\[(\d+)\])?$")


class ConfigError(ValueError):
    """Invalid sweep configuration; the message names the offending field."""


@dataclass(frozen=True)
class Series:
    scheme: str
    estimator: str
    metric: str = "system_delay"


@dataclass(frozen=True)
class SweepSpec:
    """A validated sweep.

    Parameters
    ----------
    base : Scenario
        Scenario at which the non-swept parameters are fixed.
    param : str or None
        Swept parameter: ``"P"``, ``"p0"``, ``"p_r"`` (all receivers alike)
        or ``"p"`` (a full receiver list per grid point). None for a single
        point.
    values : tuple
        Grid values of ``param``.
    series : tuple of Series
    trials, seed, tail_tol, state_cap, exact
        Estimator settings; ``exact`` switches chain and closed-form
        estimators to rational arithmetic where supported.
    """

    base: Scenario
    param: str | None = None
    values: tuple = ()
    series: tuple = ()
    trials: int = DEFAULT_TRIALS
    seed: int = 0
    tail_tol: float = DEFAULT_TAIL_TOL
    state_cap: int = DEFAULT_STATE_CAP
    exact: bool = False
    name: str = ""

    def grid(self) -> list[Scenario]:
        if self.param is None:
            return [self.base]
        out = []
        for v in self.values:
            if self.param == "P":
                out.append(replace(self.base, P=int(v)))
            elif self.param == "p0":
                out.append(replace(self.base, p0=float(v)))
            elif self.param == "p_r":
                out.append(replace(self.base, p=(float(v),) * self.base.R))
            else:
                out.append(replace(self.base, p=tuple(float(x) for x in v)))
        return out

    @property
    def schemes(self) -> tuple:
        return tuple(dict.fromkeys(s.scheme for s in self.series))

    @property
    def estimators(self) -> tuple:
        return tuple(dict.fromkeys(s.estimator for s in self.series))


@dataclass(frozen=True)
class ResultRow:
    """One CSV row. ``stderr``, ``trials`` and ``seed`` are None for exact estimators."""

    scheme: str
    estimator: str
    P: int
    R: int
    p0: float
    p_desc: str
    metric: str
    value: float | None
    stderr: float | None = None
    trials: int | None = None
    seed: int | None = None

    @property
    def skipped(self) -> bool:
        return "[skipped:" in self.metric


def _sig10(x: float | None) -> float | None:
    return None if x is None else float(f"{x:.10g}")


def describe_p(p: Sequence[float]) -> str:
    """Compact receiver-probability descriptor.

    ``"0.75"`` when all receivers agree, ``"cycle(0.9;0.8)"`` for a repeated
    pattern, otherwise the full ``;``-separated list.
    """
    p = [f"{x:.10g}" for x in p]
    for k in range(1, len(p) + 1):
        if len(p) % k == 0 and p == p[:k] * (len(p) // k):
            break
    if k == 1:
        return p[0]
    if k < len(p):
        return "cycle(" + ";".join(p[:k]) + ")"
    return ";".join(p)


# --- config ------------------------------------------------------------------

def _need(obj: dict, key: str, kind, where: str):
    if key not in obj:
        raise ConfigError(f"{where}: missing field {key!r}")
    value = obj[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"{where}: field {key!r} must be {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


def _as_list(value, key: str) -> list:
    if isinstance(value, str):
        return [value]
    if isinstance(value, list) and value:
        return value
    raise ConfigError(f"field {key!r} must be a string or a nonempty list")


def _normalize_metric(metric: str, R: int, where: str) -> str:
    m = _RECEIVER_METRIC.match(metric)
    if m:
        r = int(m.group(1) or 0)
        if r >= R:
            raise ConfigError(f"{where}: receiver index {r} out of range for R={R}")
        return f"receiver_delay[{r}]"
    if metric in ("system_delay", "buffer") + BOUND_METRICS:
        return metric
    raise ConfigError(f"{where}: unknown metric {metric!r}")


def _series(obj: dict, R: int) -> tuple:
    if "series" in obj:
        raw = obj["series"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("field 'series' must be a nonempty list")
        out = []
        for k, item in enumerate(raw):
            where = f"series[{k}]"
            if not isinstance(item, dict):
                raise ConfigError(f"{where}: must be an object")
            out.append((item.get("scheme"), item.get("estimator"), item.get("metric", "system_delay"), where))
    else:
        schemes = _as_list(obj.get("schemes", obj.get("scheme")), "scheme")
        estimators = _as_list(obj.get("estimators", obj.get("estimator")), "estimator")
        metrics = _as_list(obj.get("metrics", obj.get("metric", "system_delay")), "metric")
        out = [(s, e, m, "scheme/estimator/metric") for s, e, m in product(schemes, estimators, metrics)]
    result = []
    for scheme, estimator, metric, where in out:
        if scheme not in SCHEMES:
            raise ConfigError(f"{where}: unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
        if estimator not in ESTIMATORS:
            raise ConfigError(f"{where}: unknown estimator {estimator!r}; expected one of {', '.join(ESTIMATORS)}")
        if not isinstance(metric, str):
            raise ConfigError(f"{where}: metric must be a string")
        result.append(Series(scheme, estimator, _normalize_metric(metric, R, where)))
    return tuple(result)


def _grid_values(sweep: dict) -> tuple[str, tuple]:
    param = sweep.get("param")
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep: field 'param' must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}")
    if "values" in sweep:
        values = sweep["values"]
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep: field 'values' must be a nonempty list")
    else:
        start = _need(sweep, "start", float, "sweep")
        stop = _need(sweep, "stop", float, "sweep")
        step = _need(sweep, "step", float, "sweep")
        if step <= 0 or stop < start:
            raise ConfigError("sweep: need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + k * step, 10) for k in range(n)]
        if param == "P":
            values = [int(v) for v in values]
    return param, tuple(tuple(v) if isinstance(v, list) else v for v in values)


def parse_config(obj: dict, name: str = "") -> SweepSpec:
    """Validate a decoded config object and build a :class:`SweepSpec`.

    Recognised keys: ``P``, ``p0``, one of ``p_r`` (with ``R``) or ``p``
    (receiver list); ``sweep`` (``param`` plus ``values`` or
    ``start``/``stop``/``step``); either ``series`` (list of objects with
    ``scheme``, ``estimator``, ``metric``) or ``scheme(s)``/``estimator(s)``
    and optionally ``metric(s)``, crossed; ``trials``, ``seed``, ``tail_tol``,
    ``state_cap``, ``exact``.
    """
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    P = _need(obj, "P", int, "config")
    p0 = _need(obj, "p0", float, "config")
    if "p" in obj:
        p = obj["p"]
        if not isinstance(p, list) or not p:
            raise ConfigError("config: field 'p' must be a nonempty list")
        if "R" in obj and obj["R"] != len(p):
            raise ConfigError("config: field 'R' disagrees with len(p)")
    else:
        R = _need(obj, "R", int, "config")
        if R < 1:
            raise ConfigError("config: field 'R' must be at least 1")
        p = [_need(obj, "p_r", float, "config")] * R
    try:
        base = Scenario(P, p0, tuple(p))
    except ValueError as err:
        raise ConfigError(f"config: {err}") from None

    param, values = None, ()
    if "sweep" in obj:
        if not isinstance(obj["sweep"], dict):
            raise ConfigError("config: field 'sweep' must be an object")
        param, values = _grid_values(obj["sweep"])
    series = _series(obj, base.R)

    trials = obj.get("trials", DEFAULT_TRIALS)
    if isinstance(trials, float) and trials.is_integer():
        trials = int(trials)
    if not isinstance(trials, int) or isinstance(trials, bool) or trials < 1:
        raise ConfigError(f"config: field 'trials' must be a positive integer, got {trials!r}")
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"config: field 'seed' must be an integer in [0, 2**64), got {seed!r}")
    tail_tol = obj.get("tail_tol", DEFAULT_TAIL_TOL)
    if not isinstance(tail_tol, (int, float)) or not 0 < tail_tol < 1:
        raise ConfigError(f"config: field 'tail_tol' must lie in (0, 1), got {tail_tol!r}")
    state_cap = obj.get("state_cap", DEFAULT_STATE_CAP)
    if isinstance(state_cap, float) and state_cap.is_integer():
        state_cap = int(state_cap)
    if not isinstance(state_cap, int) or state_cap < 1:
        raise ConfigError(f"config: field 'state_cap' must be a positive integer, got {state_cap!r}")
    exact = obj.get("exact", False)
    if not isinstance(exact, bool):
        raise ConfigError("config: field 'exact' must be true or false")

    spec = SweepSpec(base, param, values, series, trials, seed, float(tail_tol), state_cap, exact, name)
    for k, v in enumerate(values):
        try:
            replace(spec, values=(v,)).grid()
        except (ValueError, TypeError) as err:
            raise ConfigError(f"sweep.values[{k}]: invalid {param} value {v!r}: {err}") from None
    return spec


def load_config(path: str | Path) -> SweepSpec:
    """Read a JSON sweep config; errors carry the path and line or field."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror or err}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from None
    try:
        return parse_config(obj, name=path.stem)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from None


# --- presets -----------------------------------------------------------------

_FIG2_SERIES = [
    ("nobuffer", "analytic", "system_delay"),
    ("nobuffer", "analytic", "receiver_delay"),
    ("withbuffer", "analytic", "receiver_delay"),
    ("withbuffer", "analytic", "lower_bound"),
    ("nobuffer", "simulation", "system_delay"),
    ("withbuffer", "simulation", "system_delay"),
    ("fbpf", "simulation", "system_delay"),
    ("fbpf", "simulation", "receiver_delay"),
]

_BOUND_SERIES = [
    ("withbuffer", "analytic", "lower_bound"),
    ("withbuffer", "analytic", "broadcast_bound"),
    ("withbuffer", "analytic", "single_bound"),
]


def _series_objs(triples):
    return [{"scheme": s, "estimator": e, "metric": m} for s, e, m in triples]


def _preset_configs(name: str) -> list[dict]:
    if name == "fig2a":
        return [{"P": 10, "R": 10, "p0": 0.75, "p_r": 0.75,
                 "sweep": {"param": "p_r", "start": 0.5, "stop": 0.95, "step": 0.05},
                 "series": _series_objs(_FIG2_SERIES)}]
    if name == "fig2b":
        return [{"P": 10, "R": 10, "p0": 0.75, "p_r": 0.75,
                 "sweep": {"param": "p0", "start": 0.5, "stop": 1.0, "step": 0.05},
                 "series": _series_objs(_FIG2_SERIES)}]
    if name == "table1":
        return [{"P": 10, "R": 10, "p0": 0.5, "p_r": 0.75,
                 "sweep": {"param": "p0", "values": [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]},
                 "series": _series_objs([("fbpf", "simulation", "buffer")])}]
    if name == "fig4":
        series = [("withbuffer", "chain", "system_delay")] + _BOUND_SERIES
        return [{"P": 1, "p0": p0, "p": [0.75, 0.85],
                 "sweep": {"param": "P", "start": 1, "stop": 50, "step": 1},
                 "series": _series_objs(series)} for p0 in (0.65, 0.8, 0.95)]
    if name == "fig5":
        series = [("withbuffer", "simulation", "system_delay"), ("withbuffer", "chain", "system_delay")] + _BOUND_SERIES
        settings = [(0.75, [0.9, 0.8, 0.7, 0.6]), (0.7, [0.75]), (0.95, [0.9])]
        out = []
        for R in (20, 100):
            for p0, pattern in settings:
                p = [pattern[r % len(pattern)] for r in range(R)]
                out.append({"P": 1, "p0": p0, "p": p,
                            "sweep": {"param": "P", "values": [1, 5, 10, 20, 30, 40, 50]},
                            "series": _series_objs(series)})
        return out
    raise ConfigError(f"unknown preset {name!r}; expected one of {', '.join(PRESETS)}")


PRESETS = ("fig2a", "fig2b", "table1", "fig4", "fig5")


def preset(name: str, **overrides) -> list[SweepSpec]:
    """Built-in sweeps reproducing a figure or table.

    ``overrides`` replace config keys (e.g. ``trials``, ``seed``) in every
    sweep of the preset.
    """
    configs = _preset_configs(name)
    clean = {k: v for k, v in overrides.items() if v is not None}
    return [parse_config({**cfg, **clean}, name=name) for cfg in configs]


# --- evaluation --------------------------------------------------------------

class _Skip(Exception):
    pass


def _num(x) -> float:
    return float(x) if isinstance(x, Fraction) else x


def _chain_time(chain) -> float:
    return _num(expected_absorption_time(chain))


def _analytic(scheme: str, metric: str, s: Scenario, spec: SweepSpec) -> float:
    r = _receiver_index(metric)
    if scheme == "nobuffer":
        if metric == "system_delay":
            return delay_nobuffer_system(s, spec.tail_tol)
        if r is not None:
            return delay_nobuffer_single(s, r)
    elif scheme == "withbuffer":
        if r is not None:
            return _num(delay_withbuffer_single_closed(s.P, s.p0, s.p[r], exact=spec.exact))
        if metric == "system_delay":
            if s.R == 1:
                return _num(delay_withbuffer_single_closed(s.P, s.p0, s.p[0], exact=spec.exact))
            if s.p0 == 1:
                return delay_broadcast_system(s.P, s.p, spec.tail_tol)
            raise _Skip("no_closed_form")
        if metric == "lower_bound":
            return lower_bound_system(s.P, s.p0, s.p, spec.tail_tol)
        if metric == "broadcast_bound":
            return broadcast_side_bound(s.P, s.p0, s.p, spec.tail_tol)
        if metric == "single_bound":
            return single_receiver_bound(s.P, s.p0, s.p)
    else:
        raise _Skip("simulation_only")
    raise _Skip("not_defined")


def _chain(scheme: str, metric: str, s: Scenario, spec: SweepSpec) -> float:
    r = _receiver_index(metric)
    cap, exact = spec.state_cap, spec.exact
    if metric in BOUND_METRICS:
        raise _Skip("analytic_only")
    try:
        if scheme == "nobuffer":
            # every relay success triggers one broadcast slot of the direct chain
            p = s.p if r is None else (s.p[r],)
            return _chain_time(build_chain_broadcast(s.P, p, state_cap=cap, exact=exact)) / s.p0
        if scheme == "withbuffer":
            if r is not None:
                return _chain_time(build_chain_single(s.P, s.p0, s.p[r], exact=exact))
            return _chain_time(build_chain_multi(s.P, s.p0, s.p, state_cap=cap, exact=exact))
    except StateSpaceTooLarge:
        raise _Skip("state_cap") from None
    raise _Skip("simulation_only")


def _receiver_index(metric: str) -> int | None:
    m = _RECEIVER_METRIC.match(metric)
    return int(m.group(1)) if m else None


def evaluate_point(s: Scenario, spec: SweepSpec, sim_cache: dict | None = None) -> list[ResultRow]:
    """Rows for every series of ``spec`` at scenario ``s``, in series order."""
    sim_cache = {} if sim_cache is None else sim_cache
    desc = describe_p(s.p)
    rows = []
    for ser in spec.series:
        base = dict(scheme=ser.scheme, estimator=ser.estimator, P=s.P, R=s.R, p0=_sig10(s.p0), p_desc=desc)
        try:
            if ser.estimator == "simulation":
                if ser.metric in BOUND_METRICS:
                    raise _Skip("analytic_only")
                if ser.metric == "buffer" and ser.scheme != "fbpf":
                    raise _Skip("fbpf_only")
                key = (s, ser.scheme)
                if key not in sim_cache:
                    sim_cache[key] = run_batch(ser.scheme, s, spec.trials, spec.seed)
                st = sim_cache[key][ser.metric].scaled(s.P)
                rows.append(ResultRow(**base, metric=ser.metric, value=_sig10(st.mean),
                                      stderr=_sig10(st.stderr), trials=st.trials, seed=spec.seed))
                continue
            if ser.metric == "buffer":
                raise _Skip("simulation_only")
            fn = _analytic if ser.estimator == "analytic" else _chain
            value = fn(ser.scheme, ser.metric, s, spec) / s.P
            rows.append(ResultRow(**base, metric=ser.metric, value=_sig10(value)))
        except _Skip as why:
            log.warning("skipping %s/%s/%s at P=%d R=%d p0=%g p=%s: %s",
                        ser.scheme, ser.estimator, ser.metric, s.P, s.R, s.p0, desc, why)
            rows.append(ResultRow(**base, metric=f"{ser.metric}[skipped:{why}]", value=None))
    return rows


def run_sweep(spec: SweepSpec) -> list[ResultRow]:
    """Evaluate every series at every grid point, in grid order."""
    rows = []
    cache: dict = {}
    for s in spec.grid():
        rows.extend(evaluate_point(s, spec, cache))
        cache.clear()
    return rows


def run_sweeps(specs: Iterable[SweepSpec]) -> list[ResultRow]:
    return [row for spec in specs for row in run_sweep(spec)]


# --- CSV ---------------------------------------------------------------------

def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def format_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow([_cell(getattr(row, f)) for f in CSV_HEADER])
    return buf.getvalue()


def emit_csv(rows: Iterable[ResultRow], path: str | Path) -> None:
    """Write rows as UTF-8 CSV with LF line endings."""
    text = format_csv(rows)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as err:
        raise OSError(err.errno, f"cannot write CSV: {err.strerror}", str(path)) from None


def _parse_cell(name: str, text: str):
    if text == "":
        return None
    if name in ("P", "R", "trials", "seed"):
        return int(text)
    if name in ("p0", "value", "stderr"):
        return float(text)
    return text


def read_csv(path: str | Path) -> list[ResultRow]:
    """Parse a file written by :func:`emit_csv`."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        return [ResultRow(**{k: _parse_cell(k, v) for k, v in zip(CSV_HEADER, line)}) for line in reader]
