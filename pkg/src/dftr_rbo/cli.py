"""Command-line front-end: ``solve``, ``experiment``, ``benchmark-solution``, ``list-problems``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .benchmark import (
    ExperimentSpec,
    benchmark_solution,
    cached_benchmark,
    normalize_method,
    run_experiment,
    write_rows,
    write_summary,
)
from .driver import NORMAL_TERMINATIONS, TrParams
from .errors import ConfigError, InvalidParameterError, RboError
from .problems import DEFAULT_X0, REGISTRY, CantileverConfig, cantilever_problem, gaussian_tail_problem
from .subproblem import SolverOptions

log = logging.getLogger("dftr_rbo")

OUTPUT_ENV = "RBO_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2

_TR = TrParams()
_SOLVER = SolverOptions()

# every accepted key with its default; the effective config is this dict updated in order
DEFAULTS = {
    "problem": "cantilever",
    "method": "dftr_r",
    "sigma": 0.1,
    "theta": 0.1,
    "n_mc": _TR.n_mc,
    "seed": 0,
    "x0": None,
    "rho_0": _TR.rho_0,
    "rho_min": _TR.rho_min,
    "eps_star": None,
    "omega_plus": _TR.omega_plus,
    "omega_minus": _TR.omega_minus,
    "delta": _TR.delta,
    "m": _TR.m,
    "max_outer": _TR.max_outer,
    "acceptance_mode": _TR.acceptance_mode,
    "recycle_acceptance": _TR.recycle_acceptance,
    "common_random_numbers": _TR.common_random_numbers,
    "kkt_tol": _SOLVER.kkt_tol,
    "n_starts": _SOLVER.n_starts,
    "max_sqp_iters": _SOLVER.max_sqp_iters,
    "workers": None,
    "output_dir": "results",
    "result_file": "result.json",
    "trace_file": "trace.jsonl",
    "methods": ["sf", "dftr", "dftr_r"],
    "sigmas": [0.1],
    "n_values": [10_000],
    "repetitions": 20,
    "seed_base": 0,
    "n_ref": 5_000_000,
    "benchmark_file": None,
    "verbosity": 0,
}

_LISTS = {"x0", "methods", "sigmas", "n_values"}
_INTS = {"n_mc", "seed", "m", "max_outer", "n_starts", "max_sqp_iters", "workers", "repetitions", "seed_base", "n_ref", "verbosity"}
_BOOLS = {"recycle_acceptance", "common_random_numbers"}
_STRS = {"problem", "method", "acceptance_mode", "output_dir", "result_file", "trace_file", "benchmark_file"}


def _scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(key, value):
    """Type-check one config entry; raises ConfigError naming the key."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}", key=key)
    if value is None:
        return None
    try:
        if key in _LISTS:
            if isinstance(value, str):
                value = [_scalar(v.strip()) for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                value = [value]
            if key == "methods":
                return [normalize_method(str(v)) for v in value]
            if key == "n_values":
                return [int(v) for v in value]
            return [float(v) for v in value]
        if key in _BOOLS:
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if key in _INTS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if key in _STRS:
            if key == "method":
                return normalize_method(str(value))
            return str(value)
        if isinstance(value, bool):
            raise ValueError(value)
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {value!r}", key=key) from exc


def parse_config_text(text, fmt="kv"):
    """Parse a flat ``key = value`` document (``#`` comments) or its JSON mirror."""
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return {k: _coerce(k, v) for k, v in data.items()}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _coerce(key, _scalar(value) if key not in _LISTS else value)
    return out


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, "json" if path.suffix == ".json" else "kv")


def effective_config(file_values=None, overrides=None, env=None):
    """Defaults, then ``RBO_OUTPUT_DIR``, then the config file, then command-line flags."""
    env = os.environ if env is None else env
    cfg = dict(DEFAULTS)
    if env.get(OUTPUT_ENV):
        cfg["output_dir"] = env[OUTPUT_ENV]
    for layer in (file_values or {}, overrides or {}):
        for k, v in layer.items():
            cfg[k] = _coerce(k, v)
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    if cfg["x0"] is None:
        cfg["x0"] = list(DEFAULT_X0) if cfg["problem"] == "cantilever" else [3.0]
    if cfg["problem"] not in REGISTRY:
        raise ConfigError(f"unknown problem {cfg['problem']!r}; choose from {sorted(REGISTRY)}", key="problem")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    return cfg


def dump_config(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True)


def build_problem(cfg):
    if cfg["problem"] == "cantilever":
        return cantilever_problem(CantileverConfig(sigma_wt=cfg["sigma"], theta=cfg["theta"]))
    return gaussian_tail_problem(theta=cfg["theta"], dim=len(cfg["x0"]))


def build_tr_params(cfg):
    solver = SolverOptions(kkt_tol=cfg["kkt_tol"], n_starts=cfg["n_starts"], max_sqp_iters=cfg["max_sqp_iters"])
    return TrParams(
        rho_0=cfg["rho_0"], rho_min=cfg["rho_min"], eps_star=cfg["eps_star"],
        omega_plus=cfg["omega_plus"], omega_minus=cfg["omega_minus"], delta=cfg["delta"],
        m=cfg["m"], n_mc=cfg["n_mc"], max_outer=cfg["max_outer"],
        acceptance_mode=cfg["acceptance_mode"], recycle_acceptance=cfg["recycle_acceptance"],
        common_random_numbers=cfg["common_random_numbers"], workers=cfg["workers"], solver=solver,
    )


def _output_dir(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(cfg):
    from .driver import run_dftr, run_dftr_no_reweight
    from .sf import run_sf

    problem = build_problem(cfg)
    params = build_tr_params(cfg)
    out = _output_dir(cfg)
    trace_lines = []

    def trace(rec):
        trace_lines.append(json.dumps(rec.to_dict(), sort_keys=True))
        log.info("iteration %d: x=%s f=%.6g", rec.k, rec.x_next, rec.f_next if rec.f_next is not None else float("nan"))

    method = cfg["method"]
    if method == "sf":
        result = run_sf(problem, cfg["x0"], cfg["n_mc"], params.solver, rng=cfg["seed"], workers=cfg["workers"], trace=trace)
    elif method == "dftr_r":
        result = run_dftr(problem, cfg["x0"], params, rng=cfg["seed"], trace=trace)
    else:
        result = run_dftr_no_reweight(problem, cfg["x0"], params, rng=cfg["seed"], trace=trace)
    (out / cfg["result_file"]).write_text(result.to_json() + "\n")
    (out / cfg["trace_file"]).write_text("".join(line + "\n" for line in trace_lines))
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    print(f"{result.method}: x_opt={result.x_opt} f_opt={result.f_opt!r} termination={result.termination} "
          f"full_evals={result.full_evals}")
    return EXIT_OK if result.termination in NORMAL_TERMINATIONS else EXIT_FAILURE


def experiment_matrix(cfg):
    return [(m, s, n) for s in cfg["sigmas"] for n in cfg["n_values"] for m in cfg["methods"]]


def cmd_experiment(cfg, dry_run=False):
    matrix = experiment_matrix(cfg)
    if dry_run:
        for m, s, n in matrix:
            print(f"method={m} sigma={s!r} n_mc={n} repetitions={cfg['repetitions']} seeds={cfg['seed_base']}..{cfg['seed_base'] + cfg['repetitions'] - 1}")
        return EXIT_OK
    params = build_tr_params(cfg)
    out = _output_dir(cfg)
    solver = params.solver
    summaries = []
    rows = []
    for m, s, n in matrix:
        bench = cached_benchmark(s, cfg["benchmark_file"])
        spec = ExperimentSpec(
            method=m, n_mc=n, sigma_wt=s, repetitions=cfg["repetitions"], seed_base=cfg["seed_base"],
            x_0=tuple(cfg["x0"]), tr_params=dataclasses.replace(params, workers=1), sf_options=solver,
            workers=cfg["workers"], theta=cfg["theta"],
        )
        summary = run_experiment(spec, benchmark=bench)
        log.info("%s sigma=%g n=%d: avg_error=%.4g avg_full_evals=%.4g", m, s, n, summary.avg_error, summary.avg_full_evals)
        summaries.append(summary)
        rows.extend(summary.rows)
    write_rows(out / "runs.csv", rows)
    write_summary(out / "summary.csv", summaries)
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    for s in summaries:
        print(f"{s.method} sigma={s.sigma!r} n_mc={s.n_mc}: avg_error={s.avg_error!r} "
              f"avg_full_evals={s.avg_full_evals!r} failure_rate={s.failure_rate!r}")
    if all(r["status"] != "ok" for r in rows):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_benchmark_solution(cfg):
    out = _output_dir(cfg)
    result = benchmark_solution(CantileverConfig(sigma_wt=cfg["sigma"], theta=cfg["theta"]),
                                n_ref=cfg["n_ref"], rng=cfg["seed"])
    path = out / "benchmark_solution.json"
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(f"x={result['x']} f={result['f']!r} p_check={result['p_check']!r} -> {path}")
    return EXIT_OK


def cmd_list_problems(cfg=None):
    for name in sorted(REGISTRY):
        doc = (REGISTRY[name].__doc__ or "").strip().splitlines()[0]
        print(f"{name}: {doc}")
    return EXIT_OK


def _flag_overrides(args):
    keys = ("problem", "method", "sigma", "theta", "n_mc", "seed", "x0", "workers", "output_dir",
            "methods", "sigmas", "n_values", "repetitions", "seed_base", "n_ref", "benchmark_file")
    out = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        out[k] = _coerce(k, _scalar(v.strip()) if k not in _LISTS else v)
    if args.verbose:
        out["verbosity"] = args.verbose
    return out


def build_parser():
    parser = argparse.ArgumentParser(prog="dftr-rbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value file, or JSON when the name ends in .json")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("--problem", choices=sorted(REGISTRY))
        p.add_argument("--sigma", type=float, help="standard deviation of W and T")
        p.add_argument("--theta", type=float, help="failure-probability target")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="threads (solve) or processes (experiment); default: all cores")
        p.add_argument("--output-dir", dest="output_dir", help=f"output directory (env {OUTPUT_ENV})")
        p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("solve", help="run one optimization")
    common(p)
    p.add_argument("--method", help="sf, dftr or dftr-r")
    p.add_argument("--n", "--n-mc", dest="n_mc", type=int, help="Monte Carlo sample size")
    p.add_argument("--x0", help="starting design, comma separated")

    p = sub.add_parser("experiment", help="repeated runs against the cached benchmark solution")
    common(p)
    p.add_argument("--methods", help="comma separated subset of sf, dftr, dftr-r")
    p.add_argument("--sigmas", help="comma separated")
    p.add_argument("--n-values", dest="n_values", help="comma separated sample sizes")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed-base", dest="seed_base", type=int)
    p.add_argument("--benchmark-file", dest="benchmark_file", help="benchmark JSON (default: packaged cache)")
    p.add_argument("--dry-run", action="store_true", help="print the planned runs and exit")

    p = sub.add_parser("benchmark-solution", help="compute a reference optimum with large-sample SF")
    common(p)
    p.add_argument("--n-ref", dest="n_ref", type=int)

    sub.add_parser("list-problems", help="list built-in problems")
    return parser


def main(argv: Optional[list] = None):
    args = build_parser().parse_args(argv)
    if args.command == "list-problems":
        return cmd_list_problems()
    try:
        file_values = load_config(args.config) if args.config else {}
        cfg = effective_config(file_values, _flag_overrides(args))
        logging.basicConfig(level=logging.WARNING - 10 * min(cfg["verbosity"], 2), format="%(message)s")
        if args.print_config:
            print(dump_config(cfg))
            return EXIT_OK
        if args.command == "solve":
            build_tr_params(cfg)
            return cmd_solve(cfg)
        if args.command == "experiment":
            build_tr_params(cfg)
            return cmd_experiment(cfg, dry_run=args.dry_run)
        return cmd_benchmark_solution(cfg)
    except (ConfigError, InvalidParameterError) as exc:
        key = getattr(exc, "key", None)
        prefix = f"config error ({key}): " if key else "config error: "
        print(prefix + str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except RboError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
