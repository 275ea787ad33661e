"""Batch driver: sweeps over eps and levels, printing Error/Order/It tables.

Examples::

    rdspls --preset table1 --levels 1-4
    rdspls --mesh shishkin --eps 1e-8,1e-12 --levels 2-5 --trial lump --format markdown
    rdspls --config run.cfg --out results.csv

A config file holds ``key = value`` lines using the long flag names
(``mesh = shishkin``, ``eps = 1e-4,1e-6``); command-line flags override it.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .mesh import build_hierarchy, level_to_n
from .multilevel import ConvergenceError, MultilevelContext, SolveReport, make_preconditioner
from .problems import C_MAX, C_MIN, ManufacturedProblem, balanced_error, convergence_order, p1_errors, q_norm_error
from .spls import SPLSDiscretization, upcg_solve

MESH_FAMILIES = ("uniform", "shishkin")
TRIALS = ("orth", "lump", "conforming")
PRECONDITIONERS = ("sbvp", "sbvp-diag", "bvp", "mg-gs", "exact", "none")
FORMATS = ("csv", "markdown")
WEIGHTS = ("reaction", "l2")
CSV_HEADER = ("level", "N", "eps", "error", "order", "iterations", "wall_time_s")

PRESETS = {
    "table1": dict(mesh_family="uniform", trial="orth", eps_list=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)),
    "table2": dict(mesh_family="shishkin", trial="orth", eps_list=(1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14)),
    "table3": dict(mesh_family="shishkin", trial="lump", eps_list=(1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14)),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep.  ``tol`` is ``"standard"`` or a fixed float.

    ``weight`` and ``gamma_c_star`` configure the multilevel preconditioners
    (inner product behind the level projections, and ``c*`` in the gamma
    schedule); ``lambda_c_star`` is the ``c*`` of the Shishkin transition
    point.  ``seed`` drives the random start vectors of condition-number
    diagnostics; the sweeps themselves draw no random numbers.
    """

    mesh_family: str = "uniform"
    eps_list: tuple[float, ...] = (1e-1,)
    levels: tuple[int, ...] = (1, 2, 3)
    trial: str = "orth"
    precond: str = "sbvp"
    tol: str | float = "standard"
    output: str = "csv"
    seed: int = 0
    weight: str = "reaction"
    gamma_c_star: float = C_MAX
    lambda_c_star: float = C_MIN
    maxiter: int = 10000
    timing: bool = True
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        object.__setattr__(self, "levels", tuple(sorted(set(int(k) for k in self.levels))))
        for name, value, allowed in (
            ("mesh", self.mesh_family, MESH_FAMILIES),
            ("trial", self.trial, TRIALS),
            ("precond", self.precond, PRECONDITIONERS),
            ("format", self.output, FORMATS),
            ("weight", self.weight, WEIGHTS),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {', '.join(allowed)}; got {value!r}")
        if any(not (e > 0 and math.isfinite(e)) for e in self.eps_list):
            raise ConfigError("every eps must be a positive finite number")
        min_level = 1 if self.mesh_family == "shishkin" else 0
        if any(k < min_level for k in self.levels):
            raise ConfigError(f"{self.mesh_family} levels must be >= {min_level}")
        if self.tol != "standard" and not (isinstance(self.tol, float) and self.tol > 0):
            raise ConfigError(f"tol must be 'standard' or a positive number; got {self.tol!r}")
        if not (self.gamma_c_star > 0 and self.lambda_c_star > 0):
            raise ConfigError("c_star values must be positive")
        if self.maxiter < 1 or self.jobs < 1:
            raise ConfigError("maxiter and jobs must be positive")

    def tolerance(self, eps: float) -> float:
        """Stopping tolerance on ``||q_j||_Q`` for one value of ``eps``."""
        if self.tol != "standard":
            return float(self.tol)
        if self.mesh_family == "uniform":
            return 1e-8
        return 1e-10 if eps >= 1e-8 else 1e-16


@dataclass
class ResultRow:
    level: int
    N: int
    eps: float
    error: float
    order: float | None = None
    iterations: int | None = None
    wall_time_s: float | None = None
    failure: str | None = None
    report: SolveReport | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.failure is None


def _preconditioner(cfg: ExperimentConfig, hierarchy, disc, problem):
    if cfg.precond in ("exact", "none"):
        return make_preconditioner(cfg.precond, op=disc.A_opt)
    ctx = MultilevelContext(hierarchy, disc.eps, cfg.gamma_c_star, problem.c, cfg.weight)
    return make_preconditioner(cfg.precond, ctx)


def solve_case(cfg: ExperimentConfig, eps: float, level: int) -> ResultRow:
    """Assemble and solve one ``(eps, level)`` cell; failures become marked rows."""
    start = time.perf_counter()
    N = level_to_n(level)
    try:
        shishkin = cfg.mesh_family == "shishkin"
        hierarchy = build_hierarchy(
            level, cfg.mesh_family, eps if shishkin else None, cfg.lambda_c_star if shishkin else None
        )
        mesh = hierarchy.finest
        problem = ManufacturedProblem(eps)
        disc = SPLSDiscretization(mesh, eps, problem.c, problem.f)
        P = _preconditioner(cfg, hierarchy, disc, problem)
        p, report, trial = upcg_solve(disc, cfg.trial, P, cfg.tolerance(eps), cfg.maxiter)
        if cfg.trial == "conforming":
            metrics = p1_errors(problem, mesh, disc.V.extend(p))
            report.q_norm_error, report.balanced_error = metrics.q_norm_error, metrics.balanced_error
        else:
            fp = trial.to_fluxpair(p)
            report.q_norm_error = q_norm_error(problem, mesh, fp)
            report.balanced_error = balanced_error(problem, mesh, fp.scalar, fp.vec_x, fp.vec_y)
    except (ConvergenceError, ArithmeticError, ValueError, RuntimeError) as exc:
        report = getattr(exc, "report", None)
        iterations = report.iterations if report is not None else None
        return ResultRow(level, N, eps, math.nan, None, iterations, None, f"{type(exc).__name__}: {exc}", report)
    error = report.balanced_error if shishkin else report.q_norm_error
    elapsed = time.perf_counter() - start if cfg.timing else None
    return ResultRow(level, N, eps, error, None, report.iterations, elapsed, None, report)


def _solve_args(args):
    return solve_case(*args)


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Rows sorted by ``(eps, level)`` in the order given; orders filled per eps."""
    cases = [(cfg, eps, level) for eps in cfg.eps_list for level in cfg.levels]
    if cfg.jobs > 1 and len(cases) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_solve_args, cases))
    else:
        rows = [solve_case(*c) for c in cases]
    for i in range(len(cfg.eps_list)):
        block = rows[i * len(cfg.levels) : (i + 1) * len(cfg.levels)]
        for prev, cur in zip(block, block[1:]):
            if prev.ok and cur.ok and cur.level == prev.level + 1:
                (cur.order,) = convergence_order([prev.error, cur.error], cfg.mesh_family, [prev.level, cur.level])
        for row in block:
            if row.report is not None:
                row.report.order = row.order
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6g}"
    return str(x)


def emit_table(rows: Sequence[ResultRow], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")
    out = []
    head = ["Level", "N", "Error", "Order", "It", "Time (s)"]
    for eps in dict.fromkeys(r.eps for r in rows):
        body = [
            [str(r.level), str(r.N), _fmt(r.error) if r.ok else "failed", _fmt(r.order) or "-",
             _fmt(r.iterations), _fmt(r.wall_time_s)]
            for r in rows
            if r.eps == eps
        ]
        width = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
        line = lambda cells: "| " + " | ".join(c.rjust(n) for c, n in zip(cells, width)) + " |"
        out += [f"### eps = {eps:g}", "", line(head), "|" + "|".join("-" * (n + 2) for n in width) + "|"]
        out += [line(b) for b in body] + [""]
    return "\n".join(out)


def parse_levels(text: str) -> tuple[int, ...]:
    """``"1-6"``, ``"2,4,5"`` or a mix such as ``"1-3,6"``."""
    levels = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            levels += list(range(int(lo), int(hi) + 1)) if sep else [int(lo)]
        except ValueError:
            raise ConfigError(f"bad level specification {text!r}") from None
    return tuple(levels)


def parse_eps(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(e) for e in str(text).split(",") if e.strip())
    except ValueError:
        raise ConfigError(f"bad eps list {text!r}") from None


def parse_tol(text) -> str | float:
    if str(text).strip() == "standard":
        return "standard"
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"tol must be 'standard' or a number; got {text!r}") from None


def _parse_bool(text) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# flag name -> (config field, parser)
_KEYS = {
    "mesh": ("mesh_family", str),
    "eps": ("eps_list", parse_eps),
    "levels": ("levels", parse_levels),
    "trial": ("trial", str),
    "precond": ("precond", str),
    "tol": ("tol", parse_tol),
    "format": ("output", str),
    "seed": ("seed", int),
    "weight": ("weight", str),
    "gamma-cstar": ("gamma_c_star", float),
    "lambda-cstar": ("lambda_c_star", float),
    "maxiter": ("maxiter", int),
    "timing": ("timing", _parse_bool),
    "jobs": ("jobs", int),
}


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into config fields."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or key not in _KEYS and key != "preset":
            raise ConfigError(f"{path}:{lineno}: expected 'key = value' with a known key, got {raw!r}")
        if key == "preset":
            out.update(_preset(value.strip()))
            continue
        name, parse = _KEYS[key]
        try:
            out[name] = parse(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def _preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return dict(PRESETS[name], levels=(1, 2, 3, 4, 5, 6))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdspls", description=__doc__.split("\n\n")[0])
    p.add_argument("--preset", choices=sorted(PRESETS), help="eps list, mesh and trial of a standard table")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--mesh", choices=MESH_FAMILIES)
    p.add_argument("--eps", help="comma-separated list, e.g. 1e-4,1e-6")
    p.add_argument("--levels", help="range or list, e.g. 1-6 or 2,4")
    p.add_argument("--trial", choices=TRIALS)
    p.add_argument("--precond", choices=PRECONDITIONERS)
    p.add_argument("--tol", help="'standard' (per-family rule) or a number")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--seed", type=int)
    p.add_argument("--weight", choices=WEIGHTS, help="inner product of the multilevel projections")
    p.add_argument("--gamma-cstar", type=float, help="c* in the gamma schedule")
    p.add_argument("--lambda-cstar", type=float, help="c* in the Shishkin transition point")
    p.add_argument("--maxiter", type=int)
    p.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                   help="leave wall_time_s empty so output is byte-reproducible")
    p.add_argument("--jobs", type=int, help="worker processes for the sweep")
    p.add_argument("--out", help="write the table here instead of stdout")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if args.preset:
        values.update(_preset(args.preset))
    if args.config:
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    for key, (name, parse) in _KEYS.items():
        raw = getattr(args, key.replace("-", "_"), None)
        if raw is not None:
            values[name] = parse(raw) if isinstance(raw, str) else raw
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in values.items() if k in known})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"rdspls: configuration error: {exc}", file=sys.stderr)
        return 2
    rows = run_experiment(cfg)
    text = emit_table(rows, cfg.output)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if not r.ok]
    for r in failed:
        print(f"rdspls: eps={r.eps:g} level={r.level} failed: {r.failure}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
