"""Command-line driver, run configuration, curve serialization and the comparison harness.

Configuration documents are JSON objects::

    {
      "command": "replica",
      "ensemble": {"structure": "row", "alpha": 4,
                   "law_s": {"kind": "uniform", "min": 1, "max": 5}},
      "grid": {"lambda_min": 0.5, "lambda_max": 40, "n_points": 1000, "epsilon": 1e-6},
      "sampling": {"N": 500, "n_samples": 100, "base_seed": 0},
      "solver": {"damping": 0.5, "tolerance": 1e-12},
      "output": {"path": "curve.csv", "format": "csv"}
    }

``structure`` is one of ``row``, ``column``, ``kronecker`` or ``mp`` (the last
takes a scalar ``v`` instead of laws). Laws are ``uniform`` (``min``/``max``),
``constant`` (``value``) or ``discrete`` (``values``); a bare number means a
constant law. Missing sections take defaults, and every unknown key is rejected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from itertools import combinations
from typing import Any

import numpy as np

from .baseline import empirical_density, trace_form_curve
from .bp import BP_DEFAULT_EPSILON, BP_DEFAULT_SOLVER, bp_average_curve
from .core import DEFAULT_SOLVER, METHODS, DensityCurve, LambdaGrid, SolverConfig
from .ensembles import (
    COLUMN,
    KRONECKER,
    ROW,
    UNIT,
    Constant,
    Discrete,
    EnsembleSpec,
    HyperparameterLaw,
    Uniform,
    build_covariance_factors,
)
from .errors import ConfigError, DomainError, NoSupportDetected, WishartDensityError
from .replica import (
    DEFAULT_EPSILON,
    inverse_moments_case1,
    mp_density_curve,
    portfolio_quantities,
    replica_density_curve,
)

COMMANDS = ("replica", "bp", "exact", "mp", "trace", "moments", "compare")
FORMATS = ("csv", "json")
CSV_COLUMNS = ("lambda", "rho", "re_chi_w", "im_chi_w", "iterations", "converged")
DEFAULT_THRESHOLD = 1e-3
DEFAULT_FAILURE_FRACTION = 0.05

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - uninstalled source tree
        return "0.1.0"


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class GridConfig:
    lambda_min: float | None = None
    lambda_max: float | None = None
    n_points: int = 1000
    epsilon: float | None = None


@dataclass(frozen=True)
class SamplingConfig:
    N: int = 500
    n_samples: int = 100
    base_seed: int = 0

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.n_samples)]


@dataclass(frozen=True)
class OutputConfig:
    path: str | None = None
    format: str = "csv"


@dataclass(frozen=True)
class CompareConfig:
    methods: tuple = ("replica", "bp", "exact")
    threshold: float = DEFAULT_THRESHOLD


@dataclass(frozen=True)
class RunConfig:
    command: str
    ensemble: EnsembleSpec
    grid: GridConfig = GridConfig()
    sampling: SamplingConfig = SamplingConfig()
    solver: SolverConfig | None = None
    output: OutputConfig = OutputConfig()
    compare: CompareConfig = CompareConfig()
    threads: int = 1
    max_failure_fraction: float = DEFAULT_FAILURE_FRACTION

    def solver_for(self, method: str) -> SolverConfig:
        if self.solver is not None:
            return self.solver
        return BP_DEFAULT_SOLVER if method == "bp" else DEFAULT_SOLVER

    def epsilon_for(self, method: str) -> float:
        if self.grid.epsilon is not None:
            return self.grid.epsilon
        return BP_DEFAULT_EPSILON if method == "bp" else DEFAULT_EPSILON

    def lambda_grid(self, method: str = "replica") -> LambdaGrid:
        lo, hi = self.grid.lambda_min, self.grid.lambda_max
        d_lo, d_hi = default_lambda_range(self.ensemble)
        lo = d_lo if lo is None else lo
        hi = d_hi if hi is None else hi
        return LambdaGrid.linspace(lo, hi, self.grid.n_points, self.epsilon_for(method))

    def echo(self) -> dict:
        """Fully defaulted configuration as a JSON-ready dict."""
        out = {
            "command": self.command,
            "ensemble": ensemble_to_dict(self.ensemble),
            "grid": asdict(self.grid),
            "sampling": asdict(self.sampling),
            "output": asdict(self.output),
            "compare": {"methods": list(self.compare.methods), "threshold": self.compare.threshold},
            "threads": self.threads,
            "max_failure_fraction": self.max_failure_fraction,
        }
        if self.solver is not None:
            out["solver"] = asdict(self.solver)
        return out


def default_lambda_range(spec: EnsembleSpec) -> tuple[float, float]:
    """A window that surely covers the support: ``(1 + sqrt(alpha))^2 max(s) max(t)`` padded by 20%."""
    top = (1 + math.sqrt(spec.alpha)) ** 2 * spec.law_s.support[1] * spec.law_t.support[1]
    top = max(top, 1e-3)
    return 1e-3 * top, 1.2 * top


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    return value


def _reject_unknown(doc: dict, allowed, path: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _number(value, path, *, integer=False, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and not value > 0:
        raise ConfigError(path, f"must be > 0, got {value!r}")
    return int(value) if integer else float(value)


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def parse_law(doc, path: str) -> HyperparameterLaw:
    if isinstance(doc, (int, float)) and not isinstance(doc, bool):
        doc = {"kind": "constant", "value": doc}
    doc = _expect_mapping(doc, path)
    kind = doc.get("kind")
    try:
        if kind == "uniform":
            _reject_unknown(doc, {"kind", "min", "max"}, path)
            return Uniform(_number(doc.get("min"), f"{path}.min"), _number(doc.get("max"), f"{path}.max"))
        if kind == "constant":
            _reject_unknown(doc, {"kind", "value"}, path)
            return Constant(_number(doc.get("value"), f"{path}.value"))
        if kind == "discrete":
            _reject_unknown(doc, {"kind", "values"}, path)
            vals = doc.get("values")
            if not isinstance(vals, list):
                raise ConfigError(f"{path}.values", "expected a list")
            return Discrete(tuple(_number(v, f"{path}.values[{i}]") for i, v in enumerate(vals)))
    except WishartDensityError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc
    raise ConfigError(f"{path}.kind", f"expected uniform, constant or discrete, got {kind!r}")


def law_to_dict(law: HyperparameterLaw) -> dict:
    if isinstance(law, Uniform):
        return {"kind": "uniform", "min": law.lo, "max": law.hi}
    if isinstance(law, Constant):
        return {"kind": "constant", "value": law.value}
    return {"kind": "discrete", "values": list(law.values)}


def parse_ensemble(doc, path: str = "ensemble") -> EnsembleSpec:
    doc = _expect_mapping(doc, path)
    structure = doc.get("structure", ROW)
    allowed = {"structure", "alpha"}
    if structure == "mp":
        allowed |= {"v"}
    elif structure == ROW:
        allowed |= {"law_s"}
    elif structure == COLUMN:
        allowed |= {"law_t"}
    elif structure == KRONECKER:
        allowed |= {"law_s", "law_t", "rotate_rows", "rotate_cols"}
    else:
        raise ConfigError(f"{path}.structure", f"unknown structure {structure!r}")
    _reject_unknown(doc, allowed, path)
    if "alpha" not in doc:
        raise ConfigError(f"{path}.alpha", "required")
    alpha = _number(doc["alpha"], f"{path}.alpha", positive=True)
    law_s = parse_law(doc["law_s"], f"{path}.law_s") if "law_s" in doc else UNIT
    law_t = parse_law(doc["law_t"], f"{path}.law_t") if "law_t" in doc else UNIT
    if structure == "mp":
        v = _number(doc.get("v", 1.0), f"{path}.v", positive=True)
        return EnsembleSpec.marchenko_pastur(alpha, v)
    if structure == ROW:
        return EnsembleSpec.row_variance(alpha, law_s)
    if structure == COLUMN:
        return EnsembleSpec.column_variance(alpha, law_t)
    return EnsembleSpec.kronecker(alpha, law_s, law_t,
                                  _bool(doc.get("rotate_rows", False), f"{path}.rotate_rows"),
                                  _bool(doc.get("rotate_cols", False), f"{path}.rotate_cols"))


def ensemble_to_dict(spec: EnsembleSpec) -> dict:
    out: dict[str, Any] = {"structure": spec.structure, "alpha": spec.alpha}
    if spec.structure in (ROW, KRONECKER):
        out["law_s"] = law_to_dict(spec.law_s)
    if spec.structure in (COLUMN, KRONECKER):
        out["law_t"] = law_to_dict(spec.law_t)
    if spec.structure == KRONECKER:
        out["rotate_rows"] = spec.rotate_rows
        out["rotate_cols"] = spec.rotate_cols
    return out


def _parse_section(doc, cls, path, numeric):
    doc = _expect_mapping(doc, path)
    names = {f.name for f in fields(cls)}
    _reject_unknown(doc, names, path)
    kwargs = {}
    for key, val in doc.items():
        kind = numeric.get(key)
        p = f"{path}.{key}"
        if kind == "bool":
            kwargs[key] = _bool(val, p)
        elif kind == "int":
            kwargs[key] = _number(val, p, integer=True)
        elif kind == "float":
            kwargs[key] = _number(val, p, allow_none=True)
        else:
            kwargs[key] = val
    return kwargs


def parse_config(document) -> RunConfig:
    """Validate a JSON document (text or already-decoded dict) into a :class:`RunConfig`."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"malformed JSON: {exc}") from exc
    doc = _expect_mapping(document, "")
    _reject_unknown(doc, {"command", "ensemble", "grid", "sampling", "solver", "output", "compare",
                          "threads", "max_failure_fraction"}, "")
    command = doc.get("command", "replica")
    if command not in COMMANDS:
        raise ConfigError("command", f"expected one of {COMMANDS}, got {command!r}")
    if "ensemble" not in doc:
        raise ConfigError("ensemble", "required")
    spec = parse_ensemble(doc["ensemble"])

    g = _parse_section(doc.get("grid", {}), GridConfig, "grid",
                       {"lambda_min": "float", "lambda_max": "float", "n_points": "int",
                        "epsilon": "float"})
    grid = GridConfig(**g)
    if grid.lambda_min is not None and grid.lambda_min < 0:
        raise ConfigError("grid.lambda_min", "must be >= 0")
    if grid.lambda_min is not None and grid.lambda_max is not None and not grid.lambda_min < grid.lambda_max:
        raise ConfigError("grid.lambda_max", "lambda_min must be smaller than lambda_max")
    if grid.n_points < 2:
        raise ConfigError("grid.n_points", "must be >= 2")
    if grid.epsilon is not None and not grid.epsilon > 0:
        raise ConfigError("grid.epsilon", "must be > 0")

    s = _parse_section(doc.get("sampling", {}), SamplingConfig, "sampling",
                       {"N": "int", "n_samples": "int", "base_seed": "int"})
    sampling = SamplingConfig(**s)
    if command in ("bp", "exact", "trace") and sampling.N < 2:
        raise ConfigError("sampling.N", "must be >= 2")
    if sampling.n_samples < 1:
        raise ConfigError("sampling.n_samples", "must be >= 1")
    if sampling.base_seed < 0:
        raise ConfigError("sampling.base_seed", "must be >= 0")

    solver = None
    if "solver" in doc:
        sv = _parse_section(doc["solver"], SolverConfig, "solver",
                            {"damping": "float", "tolerance": "float", "max_iterations": "int",
                             "warm_start": "bool", "anderson_depth": "int", "anderson_start": "float"})
        try:
            solver = SolverConfig(**sv)
        except WishartDensityError as exc:
            raise ConfigError("solver", str(exc)) from exc

    o = _parse_section(doc.get("output", {}), OutputConfig, "output", {})
    output = OutputConfig(**o)
    if output.format not in FORMATS:
        raise ConfigError("output.format", f"expected csv or json, got {output.format!r}")
    if output.path is not None and not isinstance(output.path, str):
        raise ConfigError("output.path", "expected a string")

    c = _parse_section(doc.get("compare", {}), CompareConfig, "compare", {"threshold": "float"})
    methods = tuple(c.get("methods", CompareConfig.methods))
    for i, m in enumerate(methods):
        if m not in ("replica", "bp", "exact", "mp", "trace"):
            raise ConfigError(f"compare.methods[{i}]", f"unknown method {m!r}")
    threshold = c.get("threshold", DEFAULT_THRESHOLD)
    if not threshold > 0:
        raise ConfigError("compare.threshold", "must be > 0")

    threads = _number(doc.get("threads", 1), "threads", integer=True)
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    frac = _number(doc.get("max_failure_fraction", DEFAULT_FAILURE_FRACTION), "max_failure_fraction")
    if not 0 <= frac <= 1:
        raise ConfigError("max_failure_fraction", "must lie in [0, 1]")
    return RunConfig(command, spec, grid, sampling, solver, output, CompareConfig(methods, threshold),
                     threads, frac)


# -- edges and comparison ----------------------------------------------------


def estimate_support_edges(curve: DensityCurve, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """Outermost crossings of ``rho = threshold``, linearly interpolated between grid points."""
    if not threshold > 0:
        raise DomainError("threshold must be > 0")
    lam, rho = curve.valid()
    if lam.size < 10:
        raise NoSupportDetected(f"need >= 10 converged points, have {lam.size}")
    above = np.flatnonzero(rho > threshold)
    if above.size == 0:
        raise NoSupportDetected(f"density never exceeds {threshold:g}")

    def cross(i, j):
        r0, r1 = rho[i], rho[j]
        if r1 == r0:
            return float(lam[i])
        return float(lam[i] + (threshold - r0) * (lam[j] - lam[i]) / (r1 - r0))

    first, last = above[0], above[-1]
    lo = cross(first - 1, first) if first > 0 else float(lam[0])
    hi = cross(last, last + 1) if last < lam.size - 1 else float(lam[-1])
    return lo, hi


@dataclass
class CompareReport:
    labels: list[str]
    edges: dict = field(default_factory=dict)
    masses: dict = field(default_factory=dict)
    sup_norm: dict = field(default_factory=dict)
    l1: dict = field(default_factory=dict)
    bulk: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def distance(self, a: str, b: str, kind: str = "sup") -> float:
        table = self.sup_norm if kind == "sup" else self.l1
        return table[(a, b)] if (a, b) in table else table[(b, a)]

    def to_dict(self) -> dict:
        def pairs(t):
            return {f"{a}|{b}": v for (a, b), v in t.items()}

        return {
            "labels": self.labels,
            "edges": {k: (list(v) if v is not None else None) for k, v in self.edges.items()},
            "masses": self.masses,
            "sup_norm": pairs(self.sup_norm),
            "l1": pairs(self.l1),
            "bulk": {f"{a}|{b}": (list(v) if v is not None else None) for (a, b), v in self.bulk.items()},
            "moments": self.moments,
            "notes": self.notes,
        }


def _resample(curve: DensityCurve, x: np.ndarray) -> np.ndarray:
    lam, rho = curve.valid()
    out = np.interp(x, lam, rho)
    out[(x < lam[0]) | (x > lam[-1])] = np.nan
    return out


def _resolution(curve: DensityCurve) -> float:
    lam, _ = curve.valid()
    return float(np.max(np.diff(lam))) if lam.size > 1 else np.inf


def _curve_moments(curve: DensityCurve, spec) -> dict:
    out = {}
    try:
        out["mass"] = curve.mass()
        out["first"] = curve.moment(1)
    except WishartDensityError:
        return out
    if spec is not None:
        out["first_expected"] = spec.alpha * spec.v
        if spec.alpha > 1 and spec.structure == ROW and spec.law_s.support[0] > 0:
            lam, rho = curve.valid()
            pos = lam > 0
            out["inverse_first"] = float(np.trapezoid(rho[pos] / lam[pos], lam[pos]))
            out["inverse_second"] = float(np.trapezoid(rho[pos] / lam[pos] ** 2, lam[pos]))
            m1, m2 = inverse_moments_case1(spec.law_s, spec.alpha)
            out["inverse_first_expected"] = m1
            out["inverse_second_expected"] = m2
    return out


def compare(curves, grid: LambdaGrid, labels=None, threshold: float = DEFAULT_THRESHOLD,
            spec: EnsembleSpec | None = None) -> CompareReport:
    """Pairwise bulk-restricted distances between curves resampled onto ``grid``.

    The bulk of a pair is the intersection of both detected supports, shrunk on
    each side by two of the coarsest grid spacings involved. Pairs without a
    common bulk are noted in the report instead of raising.
    """
    curves = list(curves)
    if len(curves) < 2:
        raise ValueError("compare needs at least two curves")
    labels = list(labels) if labels is not None else [f"{c.method}{i}" for i, c in enumerate(curves)]
    x = grid.lambdas
    report = CompareReport(labels)
    values = {}
    for lab, c in zip(labels, curves):
        try:
            report.edges[lab] = estimate_support_edges(c, threshold)
        except NoSupportDetected as exc:
            report.edges[lab] = None
            report.notes.append(f"{lab}: {exc}")
        try:
            report.masses[lab] = c.mass()
        except WishartDensityError:
            report.masses[lab] = float("nan")
        report.moments[lab] = _curve_moments(c, spec if spec is not None else c.ensemble)
        values[lab] = _resample(c, x)
    res = {lab: _resolution(c) for lab, c in zip(labels, curves)}
    grid_res = float(np.max(np.diff(x))) if x.size > 1 else 0.0
    for (a, ca), (b, cb) in combinations(zip(labels, curves), 2):
        ea, eb = report.edges[a], report.edges[b]
        key = (a, b)
        if ea is None or eb is None:
            report.sup_norm[key] = report.l1[key] = float("nan")
            report.bulk[key] = None
            continue
        margin = 2.0 * max(res[a], res[b], grid_res)
        lo, hi = max(ea[0], eb[0]) + margin, min(ea[1], eb[1]) - margin
        mask = (x >= lo) & (x <= hi) & np.isfinite(values[a]) & np.isfinite(values[b])
        if not lo < hi or mask.sum() < 1:
            report.sup_norm[key] = report.l1[key] = float("nan")
            report.bulk[key] = None
            report.notes.append(f"{a} and {b}: supports do not overlap in a common bulk")
            continue
        diff = np.abs(values[a][mask] - values[b][mask])
        report.bulk[key] = (float(lo), float(hi))
        report.sup_norm[key] = float(diff.max())
        report.l1[key] = float(np.trapezoid(diff, x[mask])) if mask.sum() > 1 else 0.0
    return report


# -- serialization -----------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def curve_metadata(curve: DensityCurve) -> dict:
    meta = {"method": curve.method, "tool_version": _version()}
    if isinstance(curve.ensemble, EnsembleSpec):
        meta["ensemble"] = ensemble_to_dict(curve.ensemble)
    for key, val in curve.metadata.items():
        meta[key] = _jsonable(val)
    return meta


def _jsonable(val):
    if isinstance(val, np.ndarray):
        return [_jsonable(v) for v in val.tolist()]
    if isinstance(val, (list, tuple)):
        return [_jsonable(v) for v in val]
    if isinstance(val, dict):
        return {str(k): _jsonable(v) for k, v in val.items()}
    if isinstance(val, (np.integer,)):
        return int(val)
    if isinstance(val, (float, np.floating)):
        return None if not math.isfinite(float(val)) else float(val)
    return val


def write_curve_csv(curve: DensityCurve, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for lam, rho, chi, it, ok in zip(curve.lambdas, curve.rho, curve.chi_w, curve.iterations,
                                     curve.converged):
        w.writerow([_fmt(lam), _fmt(rho), _fmt(chi.real), _fmt(chi.imag), int(it), int(bool(ok))])


def read_curve_csv(stream, method: str = "replica", ensemble=None) -> DensityCurve:
    rows = list(csv.reader(stream))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"expected header {','.join(CSV_COLUMNS)}")
    data = rows[1:]
    lam = np.array([float(r[0]) for r in data])
    rho = np.array([float(r[1]) for r in data])
    chi = np.array([complex(float(r[2]), float(r[3])) for r in data])
    its = np.array([int(r[4]) for r in data])
    ok = np.array([r[5] == "1" for r in data])
    return DensityCurve(lam, rho, chi, its, ok, method, ensemble)


def _num_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def curve_to_json(curve: DensityCurve) -> dict:
    return {
        "metadata": curve_metadata(curve),
        "entries": [
            {"lambda": float(lam), "rho": _num_or_none(rho), "re_chi_w": _num_or_none(chi.real),
             "im_chi_w": _num_or_none(chi.imag), "iterations": int(it), "converged": bool(ok)}
            for lam, rho, chi, it, ok in zip(curve.lambdas, curve.rho, curve.chi_w,
                                             curve.iterations, curve.converged)
        ],
    }


def write_curve_json(curve: DensityCurve, stream) -> None:
    json.dump(curve_to_json(curve), stream, indent=1, allow_nan=False)
    stream.write("\n")


def read_curve_json(stream) -> DensityCurve:
    doc = json.load(stream)
    meta = doc.get("metadata", {})
    ent = doc["entries"]

    def col(key):
        return np.array([np.nan if e[key] is None else e[key] for e in ent], dtype=float)

    ensemble = None
    if "ensemble" in meta:
        ensemble = parse_ensemble(meta["ensemble"])
    method = meta.get("method", "replica")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return DensityCurve(col("lambda"), col("rho"), col("re_chi_w") + 1j * col("im_chi_w"),
                        np.array([e["iterations"] for e in ent], dtype=int),
                        np.array([e["converged"] for e in ent], dtype=bool), method, ensemble,
                        {k: v for k, v in meta.items() if k not in ("method", "ensemble")})


def write_curve(curve: DensityCurve, stream, fmt: str) -> None:
    (write_curve_json if fmt == "json" else write_curve_csv)(curve, stream)


# -- commands ----------------------------------------------------------------


def _executor(cfg: RunConfig):
    return ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None


def run_method(cfg: RunConfig, method: str) -> DensityCurve:
    """Produce the density curve of ``method`` for the configured ensemble."""
    spec = cfg.ensemble
    grid = cfg.lambda_grid(method)
    solver = cfg.solver_for(method)
    if method == "replica":
        return replica_density_curve(spec, grid, solver)
    if method == "mp":
        if not (isinstance(spec.law_s, Constant) and isinstance(spec.law_t, Constant)):
            raise ConfigError("ensemble", "the closed form needs constant laws")
        return mp_density_curve(spec.alpha, spec.v, grid, spec)
    if method == "trace":
        f = build_covariance_factors(spec, cfg.sampling.N, cfg.sampling.base_seed)
        m = f.M if f.W is not None else f.s_draws
        th = f.theta if f.U is not None else f.t_draws
        curve = trace_form_curve(m, th, grid, solver, spec)
        curve.metadata.update(seed=cfg.sampling.base_seed, N=cfg.sampling.N)
        return curve
    ex = _executor(cfg)
    try:
        if method == "bp":
            return bp_average_curve(spec, cfg.sampling.N, grid, cfg.sampling.seeds, solver, ex)
        if method == "exact":
            edges = None
            if cfg.grid.lambda_min is not None or cfg.grid.lambda_max is not None:
                edges = np.linspace(grid.lambdas[0], grid.lambdas[-1], cfg.grid.n_points + 1)
            h = empirical_density(spec, cfg.sampling.N, cfg.sampling.n_samples,
                                  cfg.sampling.seeds, edges, executor=ex)
            return h.to_curve(spec)
    finally:
        if ex is not None:
            ex.shutdown()
    raise ConfigError("command", f"no curve for method {method!r}")


def run_moments(cfg: RunConfig) -> dict:
    spec = cfg.ensemble
    if spec.structure != ROW:
        raise ConfigError("ensemble.structure", "moment identities are available for row variances")
    m = inverse_moments_case1(spec.law_s, spec.alpha)
    p = portfolio_quantities(spec.law_s, spec.alpha)
    return {"inverse_first": m.m1, "inverse_second": m.m2, "epsilon_min": p.epsilon_min, "q_w": p.q_w}


def run_compare(cfg: RunConfig) -> tuple[CompareReport, list[DensityCurve]]:
    methods = list(cfg.compare.methods)
    curves = [run_method(cfg, m) for m in methods]
    grid = cfg.lambda_grid("replica")
    return compare(curves, grid, methods, cfg.compare.threshold, cfg.ensemble), curves


def _parse_grid_flag(text: str):
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError("grid", f"expected min:max:n, got {text!r}")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError("grid", f"expected min:max:n, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wishart-density",
                                 description="Eigenvalue densities of structured Wishart matrices.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration (use - for stdin)")
    ap.add_argument("--out", help="output path (default: stdout)")
    ap.add_argument("--format", choices=FORMATS)
    ap.add_argument("--seed", type=int, help="base seed; sample i uses seed + i")
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--grid", help="lambda grid as min:max:n")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--n", type=int, dest="N")
    ap.add_argument("--threads", type=int)
    return ap


def _load_document(path: str | None) -> dict:
    if path is None:
        raise ConfigError("ensemble", "a --config document is required")
    text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON: {exc}") from exc
    return _expect_mapping(doc, "")


def config_from_args(args) -> RunConfig:
    doc = _load_document(args.config)
    doc["command"] = args.command
    for section in ("grid", "sampling", "output"):
        doc.setdefault(section, {})
        _expect_mapping(doc[section], section)
    if args.grid is not None:
        lo, hi, n = _parse_grid_flag(args.grid)
        doc["grid"].update(lambda_min=lo, lambda_max=hi, n_points=n)
    if args.epsilon is not None:
        doc["grid"]["epsilon"] = args.epsilon
    if args.seed is not None:
        doc["sampling"]["base_seed"] = args.seed
    if args.samples is not None:
        doc["sampling"]["n_samples"] = args.samples
    if args.N is not None:
        doc["sampling"]["N"] = args.N
    if args.out is not None:
        doc["output"]["path"] = args.out
    if args.format is not None:
        doc["output"]["format"] = args.format
    if args.threads is not None:
        doc["threads"] = args.threads
    return parse_config(doc)


def _emit(text: str, path: str | None):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _render_table(rows: dict, fmt: str, meta: dict) -> str:
    if fmt == "json":
        return json.dumps({"metadata": meta, "values": rows}, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in rows.items():
        w.writerow([k, _fmt(v)])
    return buf.getvalue()


def _render_report(report: CompareReport, fmt: str, meta: dict) -> str:
    if fmt == "json":
        return json.dumps({"metadata": meta, "report": _jsonable(report.to_dict())}, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["a", "b", "sup_norm", "l1", "bulk_min", "bulk_max"])
    for (a, b), sup in report.sup_norm.items():
        bulk = report.bulk[(a, b)] or (float("nan"), float("nan"))
        w.writerow([a, b, _fmt(sup), _fmt(report.l1[(a, b)]), _fmt(bulk[0]), _fmt(bulk[1])])
    return buf.getvalue()


def execute(cfg: RunConfig) -> tuple[str, float]:
    """Run ``cfg``; returns the rendered output and the non-converged fraction."""
    fmt = cfg.output.format
    meta = {"config": cfg.echo(), "tool_version": _version(),
            "realized_alpha": cfg.ensemble.realized_alpha(cfg.sampling.N)}
    if cfg.command == "moments":
        return _render_table(run_moments(cfg), fmt, meta), 0.0
    if cfg.command == "compare":
        report, curves = run_compare(cfg)
        failed = max(1.0 - c.n_converged / len(c) for c in curves)
        return _render_report(report, fmt, meta), failed
    curve = run_method(cfg, cfg.command)
    curve.metadata.setdefault("realized_alpha", meta["realized_alpha"])
    buf = io.StringIO()
    write_curve(curve, buf, fmt)
    return buf.getvalue(), 1.0 - curve.n_converged / len(curve)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        text, failed = execute(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except WishartDensityError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    try:
        _emit(text, cfg.output.path)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if failed > cfg.max_failure_fraction:
        print(f"non-converged fraction {failed:.3f} exceeds {cfg.max_failure_fraction:.3f}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
