"""Experiment sweeps, CSV output and log-log scaling fits."""

from __future__ import annotations

import ast
import csv
import enum
import math
import operator
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import linregress

from .baselines import beb_execute, folklore_execute, stb_execute
from .bounds import analyze_trace, write_trace
from .cab import CabParams, cab_execute
from .channel import ChannelParams, EngineMode, make_rng
from .results import CSV_HEADER, TrialResult, fmt_num

THREADS_ENV = "COLLISION_BENCH_THREADS"


class ConfigError(ValueError):
    pass


class Protocol(enum.Enum):
    CAB = "CAB"
    BEB = "BEB"
    STB = "STB"
    FOLKLORE = "Folklore"

    @classmethod
    def parse(cls, text) -> "Protocol":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        for p in cls:
            if p.value.lower() == key or p.name.lower() == key:
                return p
        raise ConfigError(f"unknown protocol {text!r}")


# safe arithmetic over n and C -----------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "ln": math.log, "log2": math.log2,
          "lg": math.log2, "exp": math.exp}


def eval_expr(text: str, **names: float) -> float:
    """Evaluate an arithmetic expression such as ``n^0.5`` or ``n*sqrt(C)``.

    ``^`` means power.  Only numbers, the given names and a few math
    functions are allowed.
    """
    src = str(text).strip().replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in names:
                return float(names[node.id])
            raise ConfigError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ConfigError(f"unsupported syntax in {text!r}")

    try:
        return float(ev(tree))
    except (ArithmeticError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot evaluate {text!r}: {exc}") from exc


# experiment definition ------------------------------------------------------

@dataclass
class ExperimentSpec:
    protocol: Protocol = Protocol.CAB
    n_values: list[int] = field(default_factory=lambda: [256])
    c_values: list[str] = field(default_factory=lambda: ["1"])
    seeds: int = 1
    base_seed: int = 0
    engine: EngineMode = EngineMode.AGGREGATE
    cab_params: CabParams = field(default_factory=CabParams)
    trace: bool = False
    output_path: str | None = None
    kappa: float = 2.0

    def grid(self) -> list[tuple[int, float]]:
        """Resolved (n, C) pairs in output order; validates the whole spec."""
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        if not self.n_values or not self.c_values:
            raise ConfigError("n and C lists must be non-empty")
        out = []
        for n in self.n_values:
            if int(n) != n or n < 2:
                raise ConfigError(f"n must be an integer >= 2, got {n}")
            for expr in self.c_values:
                C = eval_expr(expr, n=n)
                try:
                    ChannelParams(C, self.kappa).validate_for(int(n))
                except ValueError as exc:
                    raise ConfigError(f"n={n}, C={expr}: {exc}") from None
                out.append((int(n), C))
        return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    try:
        return _BOOL[str(text).strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {text!r}") from None


def _split_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    parts = [t.strip() for t in str(text).replace(";", ",").split(",")]
    return [p for p in parts if p]


def _parse_int(key, text) -> int:
    try:
        v = float(eval_expr(text)) if not str(text).strip().isdigit() else int(text)
    except ConfigError:
        raise ConfigError(f"{key}: not an integer: {text!r}") from None
    if int(v) != v:
        raise ConfigError(f"{key}: not an integer: {text!r}")
    return int(v)


_KEY_ALIASES = {"n_values": "n", "c_values": "C", "c_list": "C", "output_path": "out",
                "output": "out", "base-seed": "base_seed", "cost": "C"}
_KNOWN = {"protocol", "n", "C", "seeds", "base_seed", "engine", "d", "c", "trace", "out",
          "kappa", "initial_window", "pessimistic_sampling", "min_window_floor"}


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = _KEY_ALIASES.get(key, key)
            if key not in _KNOWN:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val.strip().strip('"').strip("'")
    return values


def build_spec(values: dict) -> ExperimentSpec:
    """Turn raw key/value strings (config file merged with flags) into a spec."""
    unknown = set(values) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    spec = ExperimentSpec()
    cab = {}
    try:
        if "protocol" in values:
            spec.protocol = Protocol.parse(values["protocol"])
        if "n" in values:
            spec.n_values = [_parse_int("n", t) for t in _split_list(values["n"])]
        if "C" in values:
            spec.c_values = _split_list(values["C"])
        if "seeds" in values:
            spec.seeds = _parse_int("seeds", values["seeds"])
        if "base_seed" in values:
            spec.base_seed = _parse_int("base_seed", values["base_seed"])
        if "engine" in values:
            spec.engine = EngineMode.parse(values["engine"])
        if "trace" in values:
            spec.trace = _parse_bool(values["trace"])
        if "out" in values:
            spec.output_path = str(values["out"])
        if "kappa" in values:
            spec.kappa = float(values["kappa"])
        for key in ("d", "c", "initial_window", "min_window_floor"):
            if key in values:
                cab[key] = float(eval_expr(values[key]))
        if "pessimistic_sampling" in values:
            cab["pessimistic_sampling"] = _parse_bool(values["pessimistic_sampling"])
        spec.cab_params = CabParams(**cab)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec.grid()
    return spec


# running --------------------------------------------------------------------

def _float_bits(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def trial_rng(spec: ExperimentSpec, n: int, C: float, seed: int):
    # keyed by values, not list positions, so a row does not depend on its neighbours
    proto = list(Protocol).index(spec.protocol)
    return make_rng(seed, proto, n, _float_bits(C))


_RUNNERS = {Protocol.CAB: None, Protocol.BEB: beb_execute, Protocol.STB: stb_execute,
            Protocol.FOLKLORE: folklore_execute}


def run_trial(spec: ExperimentSpec, n: int, C: float, seed: int) -> TrialResult:
    rng = trial_rng(spec, n, C, seed)
    params = ChannelParams(C, spec.kappa)
    if spec.protocol is Protocol.CAB:
        res = cab_execute(n, params, spec.cab_params, spec.engine, rng, seed=seed,
                          trace=spec.trace)
    else:
        res = _RUNNERS[spec.protocol](n, params, spec.engine, rng, seed=seed, trace=spec.trace)
    if res.trace is not None:
        if res.trace.n_slots:
            rep = analyze_trace(res.trace, C)
            res.contention_summary = (rep.sum_con, rep.delta_min)
            res.extras["trace_report"] = rep.as_dict()
        if spec.output_path:
            tdir = Path(str(spec.output_path) + ".traces")
            tdir.mkdir(parents=True, exist_ok=True)
            write_trace(res.trace, tdir / f"{res.protocol}_n{n}_C{fmt_num(C)}_s{seed}.txt")
        res.trace = None
    return res


def _run_packed(args):
    return run_trial(*args)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            k = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        return max(1, k)
    return max(1, os.cpu_count() or 1)


def run_experiment(spec: ExperimentSpec, *, workers: int | None = None) -> list[TrialResult]:
    """Run every (n, C, seed) of the spec, in that order.

    Rows are written to ``spec.output_path`` as they complete; parallel runs
    merge in the same order, so output files are identical to serial runs.
    """
    jobs = [(spec, n, C, spec.base_seed + i) for n, C in spec.grid() for i in range(spec.seeds)]
    workers = thread_count() if workers is None else max(1, workers)
    workers = min(workers, len(jobs))
    out = None
    if spec.output_path:
        Path(spec.output_path).parent.mkdir(parents=True, exist_ok=True)
        out = open(spec.output_path, "w", newline="")
        out.write(",".join(CSV_HEADER) + "\n")
    results = []
    try:
        if workers == 1:
            it = map(_run_packed, jobs)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            it = pool.map(_run_packed, jobs, chunksize=max(1, len(jobs) // (8 * workers)))
        try:
            for res in it:
                results.append(res)
                if out is not None:
                    out.write(res.csv_row() + "\n")
                    out.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if out is not None:
            out.close()
    return results


def read_results_csv(path) -> list[TrialResult]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {header}")
        for rec in reader:
            if not rec:
                continue
            d = dict(zip(CSV_HEADER, rec))
            rows.append(TrialResult(
                protocol=d["protocol"], n=int(d["n"]), C=float(d["C"]), seed=int(d["seed"]),
                makespan=int(d["makespan"]), collisions=int(d["collisions"]),
                collision_cost=float(d["collision_cost"]), successes=int(d["successes"]),
                incomplete=_parse_bool(d["incomplete"])))
    return rows


# scaling fits ---------------------------------------------------------------

@dataclass
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    x_label: str
    y_label: str
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept,
                "r_squared": self.r_squared, "x": self.x_label, "y": self.y_label,
                "points": int(len(self.x))}

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.exponent


def fit_scaling(results, x: str = "n*sqrt(C)", y: str = "makespan") -> ScalingFit:
    """Least squares of ln(median y) on ln(x); the median is taken over all
    results sharing the same x value."""
    groups: dict[float, list[float]] = {}
    for r in results:
        xv = eval_expr(x, n=r.n, C=r.C)
        try:
            yv = float(getattr(r, y))
        except AttributeError:
            raise ConfigError(f"unknown result field {y!r}") from None
        groups.setdefault(xv, []).append(yv)
    if len(groups) < 3:
        raise ConfigError(f"need at least 3 distinct x values, got {len(groups)}")
    xs = np.array(sorted(groups))
    ys = np.array([np.median(groups[k]) for k in xs])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ConfigError("log-log fit needs positive x and median y")
    lx, ly = np.log(xs), np.log(ys)
    reg = linregress(lx, ly)
    r2 = min(1.0, max(0.0, float(reg.rvalue) ** 2))
    return ScalingFit(float(reg.slope), float(reg.intercept), r2, x, y, xs, ys)


def write_plot_data(fit: ScalingFit, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,median_y,fitted_y\n")
        for xv, yv, fv in zip(fit.x, fit.y, fit.predict(fit.x)):
            fh.write(f"{fmt_num(xv)},{fmt_num(yv)},{fmt_num(float(fv))}\n")
