"""Cantilever benchmark: reference solutions, repeated-run experiments and summaries."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .driver import TrParams, run_dftr, run_dftr_no_reweight
from .errors import ConfigError, InvalidParameterError
from .problems import DEFAULT_X0, CantileverConfig, cantilever_problem
from .sf import run_sf
from .subproblem import SolverOptions

METHODS = ("sf", "dftr", "dftr_r")
RUN_COLUMNS = (
    "method", "sigma", "n_mc", "seed", "error_x", "error_f", "full_evals", "g_calls",
    "termination", "wall_ms", "x_opt", "f_opt", "status",
)
SUMMARY_COLUMNS = (
    "sigma", "n_mc", "method", "repetitions", "avg_error", "avg_error_f",
    "avg_full_evals", "failure_rate",
)
FIXTURE = "benchmark_solutions.json"
ORACLE_LABEL = "oracle"


def fmt(value):
    """Lossless text for CSV cells (17 significant digits for floats)."""
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (list, tuple)):
        return " ".join(fmt(float(v)) for v in value)
    return str(value)


def normalize_method(name):
    key = name.strip().lower().replace("-", "_")
    if key not in METHODS:
        raise ConfigError(f"unknown method {name!r}; expected one of sf, dftr, dftr-r", key="method")
    return key


def sigma_key(sigma):
    """Fixture key for ``sigma`` (shortest round-trip text)."""
    return repr(float(sigma))


def failure_probability(problem, x, n, rng, batch=1_000_000):
    """Plain Monte Carlo ``P(x)`` in batches; returns ``(p_hat, std_err)``."""
    x = np.asarray(x, dtype=float)
    hits = 0
    done = 0
    while done < n:
        k = min(batch, n - done)
        z = problem.dist.sample(x, k, rng)
        hits += int(np.count_nonzero(problem.limit(z) < 0))
        done += k
    p = hits / n
    return p, float(np.sqrt(p * (1 - p) / n))


def grid_oracle(cfg, n=1_000_000, points=41, seed=0, batch=250_000):
    """Cheapest grid point of the design box whose estimated ``P`` is at most ``theta``.

    Every grid point uses the same standard-normal draws (common random
    numbers), so the feasibility map is consistent across the grid.
    """
    problem = cantilever_problem(cfg)
    lo, hi = problem.space.lower, problem.space.upper
    ws = np.linspace(lo[0], hi[0], points)
    ts = np.linspace(lo[1], hi[1], points)
    dist = problem.dist
    counts = np.zeros((points, points), dtype=np.int64)
    gen = rngmod.stream(seed, ORACLE_LABEL, 1)
    done = 0
    while done < n:
        k = min(batch, n - done)
        u = gen.standard_normal((k, dist.z_dim))
        for i, w in enumerate(ws):
            for j, t in enumerate(ts):
                z = dist.from_standard(np.array([w, t]), u)
                counts[i, j] += np.count_nonzero(problem.limit(z) < 0)
        done += k
    p = counts / n
    cost = ws[:, None] * ts[None, :]
    feasible = p <= cfg.theta
    if not feasible.any():
        raise ConfigError("no grid point satisfies the reliability constraint", key="theta")
    masked = np.where(feasible, cost, np.inf)
    i, j = np.unravel_index(np.argmin(masked), masked.shape)
    return {
        "x": [float(ws[i]), float(ts[j])],
        "f": float(cost[i, j]),
        "p_hat": float(p[i, j]),
        "spacing": [float(ws[1] - ws[0]), float(ts[1] - ts[0])],
        "n": int(n),
        "points": int(points),
    }


BENCHMARK_STARTS = ((2.5, 2.5), (3.5, 3.5), (2.0, 3.5), (3.5, 2.0), (3.0, 3.0))


def benchmark_solution(cfg=None, n_ref=5_000_000, rng=0, starts=BENCHMARK_STARTS, solver_opts=None, with_grid=True):
    """Reference optimum: best feasible SF solution over several starts.

    Returns a dict with the solution, per-start results, an independent
    ``P`` check at ``10^6`` samples and (optionally) the grid oracle.
    """
    cfg = cfg or CantileverConfig()
    if n_ref < 1_000_000:
        raise InvalidParameterError(f"n_ref must be at least 10^6, got {n_ref}")
    problem = cantilever_problem(cfg)
    streams = rngmod.as_streams(rng)
    runs = []
    for k, x0 in enumerate(starts):
        res = run_sf(problem, x0, n_ref, solver_opts, rng=streams.child_seed(f"start-{k}"))
        runs.append(res)
    feasible = [r for r in runs if r.p_hat_accept is not None]
    if not feasible:
        raise ConfigError("no start produced a feasible solution", key="theta")
    best = min(feasible, key=lambda r: (r.f_opt, tuple(r.x_opt)))
    p_check, se_check = failure_probability(problem, best.x_opt, 1_000_000, rngmod.stream(streams.seed, ORACLE_LABEL, 2))
    out = {
        "sigma": cfg.sigma_wt,
        "theta": cfg.theta,
        "n_ref": int(n_ref),
        "seed": streams.seed,
        "x": best.x_opt,
        "f": best.f_opt,
        "p_hat_ref": best.p_hat_accept,
        "p_check": p_check,
        "p_check_std_err": se_check,
        "starts": [
            {"x0": list(x0), "x_opt": r.x_opt, "f_opt": r.f_opt, "p_hat": r.p_hat_accept, "full_evals": r.full_evals}
            for x0, r in zip(starts, runs)
        ],
    }
    if with_grid:
        out["grid_oracle"] = grid_oracle(cfg, seed=streams.seed)
    return out


def load_benchmarks(path=None):
    if path is None:
        text = resources.files("dftr_rbo").joinpath("data", FIXTURE).read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def cached_benchmark(sigma, path=None):
    table = load_benchmarks(path)
    key = sigma_key(sigma)
    if key not in table:
        raise ConfigError(f"no cached benchmark solution for sigma={sigma}", key="sigma")
    return table[key]


@dataclass(frozen=True)
class ExperimentSpec:
    method: str
    n_mc: int
    sigma_wt: float
    repetitions: int = 20
    seed_base: int = 0
    x_0: tuple = DEFAULT_X0
    tr_params: TrParams = field(default_factory=TrParams)
    sf_options: Optional[SolverOptions] = None
    workers: int = 1
    theta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "method", normalize_method(self.method))
        if self.repetitions < 1:
            raise InvalidParameterError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.n_mc < 1:
            raise InvalidParameterError(f"n_mc must be >= 1, got {self.n_mc}")


@dataclass
class ExperimentSummary:
    method: str
    sigma: float
    n_mc: int
    repetitions: int
    avg_error: float
    avg_error_f: float
    avg_full_evals: float
    failure_rate: float
    rows: list

    def summary_row(self):
        return {
            "sigma": self.sigma, "n_mc": self.n_mc, "method": self.method, "repetitions": self.repetitions,
            "avg_error": self.avg_error, "avg_error_f": self.avg_error_f,
            "avg_full_evals": self.avg_full_evals, "failure_rate": self.failure_rate,
        }


def solve_once(method, problem, x_0, n_mc, seed, tr_params, sf_options=None):
    if method == "sf":
        return run_sf(problem, x_0, n_mc, sf_options, rng=seed)
    params = replace(tr_params, n_mc=n_mc)
    if method == "dftr_r":
        return run_dftr(problem, x_0, params, rng=seed)
    return run_dftr_no_reweight(problem, x_0, params, rng=seed)


def _one_run(args):
    spec, seed, x_bench, f_bench = args
    cfg = CantileverConfig(sigma_wt=spec.sigma_wt, theta=spec.theta)
    problem = cantilever_problem(cfg)
    row = {"method": spec.method, "sigma": spec.sigma_wt, "n_mc": spec.n_mc, "seed": seed}
    start = time.perf_counter()
    try:
        res = solve_once(spec.method, problem, spec.x_0, spec.n_mc, seed, spec.tr_params, spec.sf_options)
    except Exception as exc:  # recorded per row, excluded from means
        row.update(error_x=float("nan"), error_f=float("nan"), full_evals=0, g_calls=0,
                   termination="error", x_opt=[], f_opt=float("nan"), status=f"{type(exc).__name__}: {exc}")
    else:
        x = np.asarray(res.x_opt)
        row.update(
            error_x=float(np.linalg.norm(x - x_bench)),
            error_f=float(abs(res.f_opt - f_bench)),
            full_evals=res.counters["full_evals"],
            g_calls=res.counters["g_calls"],
            termination=res.termination,
            x_opt=res.x_opt,
            f_opt=res.f_opt,
            status="ok",
        )
    row["wall_ms"] = (time.perf_counter() - start) * 1e3
    return row


def run_experiment(spec, benchmark=None, per_run_csv=None, summary_csv=None):
    """Run ``spec.repetitions`` independent solves with seeds ``seed_base + i``.

    ``benchmark`` is a dict with ``"x"`` and ``"f"``; by default the cached
    reference for ``spec.sigma_wt`` is used.
    """
    if benchmark is None:
        benchmark = cached_benchmark(spec.sigma_wt)
    x_bench = np.asarray(benchmark["x"], dtype=float)
    f_bench = float(benchmark["f"])
    jobs = [(spec, spec.seed_base + i, x_bench, f_bench) for i in range(spec.repetitions)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    summary = summarize(spec.method, spec.sigma_wt, spec.n_mc, rows)
    if per_run_csv is not None:
        write_rows(per_run_csv, rows)
    if summary_csv is not None:
        write_summary(summary_csv, [summary])
    return summary


def summarize(method, sigma, n_mc, rows):
    ok = [r for r in rows if r["status"] == "ok"]
    nan = float("nan")
    return ExperimentSummary(
        method=method,
        sigma=sigma,
        n_mc=n_mc,
        repetitions=len(rows),
        avg_error=float(np.mean([r["error_x"] for r in ok])) if ok else nan,
        avg_error_f=float(np.mean([r["error_f"] for r in ok])) if ok else nan,
        avg_full_evals=float(np.mean([r["full_evals"] for r in ok])) if ok else nan,
        failure_rate=1.0 - len(ok) / len(rows),
        rows=rows,
    )


def write_rows(path, rows, append=False):
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RUN_COLUMNS)
        for r in rows:
            w.writerow([fmt(r[c]) for c in RUN_COLUMNS])


def write_summary(path, summaries):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            row = s.summary_row()
            w.writerow([fmt(row[c]) for c in SUMMARY_COLUMNS])


def oracle_probabilities(cfg, points, n=1_000_000, seed=0, batch=250_000):
    """``P`` at each design in ``points`` from one shared set of ``n`` draws.

    The standard-normal draws are generated once per batch and shifted to
    every design, so auditing many solutions costs one sampling pass.
    """
    problem = cantilever_problem(cfg)
    dist = problem.dist
    points = np.atleast_2d(np.asarray(points, dtype=float))
    hits = np.zeros(len(points), dtype=np.int64)
    gen = rngmod.stream(seed, ORACLE_LABEL, 3)
    done = 0
    while done < n:
        k = min(batch, n - done)
        u = dist.standard_draws(k, gen)
        for i, x in enumerate(points):
            hits[i] += np.count_nonzero(problem.limit(dist.from_standard(x, u)) < 0)
        done += k
    return hits / n


def oracle_feasible(cfg, points, n=1_000_000, seed=0, factor=1.2):
    """``(passes, p_hat)`` arrays for the check ``P(x) <= factor * theta``."""
    p = oracle_probabilities(cfg, points, n=n, seed=seed)
    return p <= factor * cfg.theta, p
