"""Acceptance criteria, one test per criterion.

Each test appends a ``[PASS]``/``[FAIL]`` line that is printed in the
terminal summary, then asserts.  The repeated-run experiments are shared
through session fixtures.
"""

import json
import math
import time

import numpy as np
import pytest

from dftr_rbo import cli
from dftr_rbo import rng as rngmod
from dftr_rbo.benchmark import ExperimentSpec, cached_benchmark, oracle_feasible, run_experiment
from dftr_rbo.driver import TrParams, run_dftr
from dftr_rbo.errors import SurrogateFailureError
from dftr_rbo.problems import CantileverConfig, cantilever_problem, gaussian_tail_problem
from dftr_rbo.reliability import EvalCounters, full_evaluation, reweighted_evaluation
from dftr_rbo.sf import sf_gradient
from dftr_rbo.stochastic import CostFunction, DesignSpace
from dftr_rbo.subproblem import SubproblemSpec, solve_subproblem
from dftr_rbo.surrogate import DesignSample, fit_quadratic, loo_error, sample_ball, surr_constr
from dftr_rbo.surrogate import QuadraticSurrogate

from conftest import ACCEPTANCE_LINES, norm_cdf, norm_pdf

REPS = 20


def verdict(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _experiment(method, sigma, n_mc):
    spec = ExperimentSpec(method=method, n_mc=n_mc, sigma_wt=sigma, repetitions=REPS, seed_base=0)
    start = time.perf_counter()
    summary = run_experiment(spec)
    return summary, time.perf_counter() - start


@pytest.fixture(scope="session")
def table2_sigma_01():
    return {m: _experiment(m, 0.1, 10_000) for m in ("dftr_r", "sf", "dftr")}


@pytest.fixture(scope="session")
def table2_sigma_001():
    return _experiment("dftr_r", 0.01, 100_000)


def test_criterion_1_single_full_evaluation():
    prob = cantilever_problem()
    bad = []
    for seed in range(5):
        res = run_dftr(prob, [2.5, 2.5], TrParams(), rng=seed)
        c, s = res.counters, res.stats
        if c["full_evals"] != s["surr_constr_calls"] + s["acceptance_checks"] or c["g_calls"] != c["full_evals"] * 10_000:
            bad.append(seed)
    verdict(1, not bad, f"full_evals = surr_constr calls + acceptance checks and g_calls = full_evals * n_mc "
                        f"on 5/5 seeds" if not bad else f"identity broken for seeds {bad}")


def test_criterion_2_table2_ordering(table2_sigma_01):
    ev = {m: s.avg_full_evals for m, (s, _) in table2_sigma_01.items()}
    wall = sum(t for _, t in table2_sigma_01.values())
    checks = {
        "ordering dftr-r < sf < dftr": ev["dftr_r"] < ev["sf"] < ev["dftr"],
        "dftr-r in [10, 150]": 10 <= ev["dftr_r"] <= 150,
        "sf in [40, 400]": 40 <= ev["sf"] <= 400,
        "dftr in [150, 1500]": 150 <= ev["dftr"] <= 1500,
        "runtime <= 10 min": wall <= 600,
    }
    failed = [k for k, ok in checks.items() if not ok]
    detail = (f"avg full evals dftr-r={ev['dftr_r']:.1f} sf={ev['sf']:.1f} dftr={ev['dftr']:.1f}, "
              f"wall {wall:.0f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))
    verdict(2, not failed, detail)


def test_criterion_3_small_sigma(table2_sigma_001):
    summary, wall = table2_sigma_001
    ok = 5 <= summary.avg_full_evals <= 60 and wall <= 1800
    verdict(3, ok, f"dftr-r at sigma=0.01, N=1e5: avg full evals {summary.avg_full_evals:.1f} "
                   f"(target [5, 60]), wall {wall:.0f}s")


def test_criterion_4_accuracy_parity(table2_sigma_01):
    err = {m: s.avg_error for m, (s, _) in table2_sigma_01.items()}
    parity = err["dftr_r"] <= 2 * err["dftr"] and err["dftr"] <= 2 * err["dftr_r"]
    vs_sf = err["dftr_r"] <= err["sf"]
    detail = (f"avg error dftr-r={err['dftr_r']:.4f} dftr={err['dftr']:.4f} sf={err['sf']:.4f}; "
              f"factor-2 parity {'holds' if parity else 'fails'}, dftr-r <= sf {'holds' if vs_sf else 'fails'}")
    verdict(4, parity and vs_sf, detail)


def test_criterion_5_estimator_suite():
    start = time.perf_counter()
    failures = []
    # MC unbiasedness, 200 seeds, q in {-1.2816, 0}
    for q in (-1.2816, 0.0):
        prob = gaussian_tail_problem(a=q)
        est = np.array([full_evaluation(prob, [0.0], 10_000, np.random.default_rng(s)).p_hat for s in range(200)])
        if abs(est.mean() - norm_cdf(q)) > 4 * est.std(ddof=1) / math.sqrt(200):
            failures.append(f"MC bias at q={q}")
    # reweighting against fresh MC, 100 seeds
    prob = gaussian_tail_problem(a=-1.2816)
    agree = 0
    for seed in range(100):
        ev = full_evaluation(prob, [0.0], 10_000, np.random.default_rng(seed))
        rw = reweighted_evaluation(ev, prob.dist, [0.3])
        fresh = full_evaluation(prob, [0.3], 10_000, np.random.default_rng(10_000 + seed))
        agree += abs(rw.p_hat - fresh.p_hat) <= 3 * math.hypot(rw.std_err, fresh.std_err)
    if agree < 95:
        failures.append(f"reweighting agreement {agree}/100")
    # score-function gradient, 200 seeds
    g = np.array([sf_gradient(prob, [0.0], 10_000, np.random.default_rng(s)).grad_p[0] for s in range(200)])
    if abs(g.mean() + norm_pdf(-1.2816)) > 4 * g.std(ddof=1) / math.sqrt(200):
        failures.append("SF gradient bias")
    wall = time.perf_counter() - start
    if wall > 120:
        failures.append(f"runtime {wall:.0f}s")
    verdict(5, not failures, f"MC unbiased, reweighting agreement {agree}/100, SF gradient unbiased, "
                             f"wall {wall:.1f}s" + (f"; failed: {failures}" if failures else ""))


def test_criterion_6_surrogate_suite():
    failures = []
    space = DesignSpace.unbounded(2)
    worst_coef = worst_loo = 0.0
    for seed in range(10):
        c = np.random.default_rng(seed).uniform(-3, 3, 2)
        r = 10.0 ** np.random.default_rng(seed).uniform(-4, 0)
        pts = sample_ball(c, r, 20, space, np.random.default_rng(100 + seed))
        vals = 1 + 2 * pts[:, 0] + 3 * pts[:, 1] ** 2
        sample = DesignSample(pts, vals, c, r)
        s = fit_quadratic(sample)
        probe = sample_ball(c, r, 10, space, np.random.default_rng(200 + seed))
        worst_coef = max(worst_coef, np.abs(s(probe) - (1 + 2 * probe[:, 0] + 3 * probe[:, 1] ** 2)).max())
        worst_loo = max(worst_loo, loo_error(sample))
    p = sample_ball(np.zeros(2), 1.0, 20, space, np.random.default_rng(0))
    unit = DesignSample(p, 1 + 2 * p[:, 0] + 3 * p[:, 1] ** 2, np.zeros(2), 1.0)
    coef_err = np.abs(fit_quadratic(unit).coeffs - [1, 2, 0, 0, 0, 3]).max()
    if coef_err > 1e-8 or worst_coef > 1e-8:
        failures.append(f"recovery error {max(coef_err, worst_coef):.2e}")
    if worst_loo > 1e-8:
        failures.append(f"LOO {worst_loo:.2e}")
    prob = cantilever_problem()
    outcomes = []
    for seed, x in enumerate([(2.5, 2.5), (2.2, 2.2), (2.12, 2.1), (3.0, 2.0), (2.3, 2.05)]):
        try:
            out = surr_constr(prob, x, 0.1, 0.01, 0.9, 20, 10_000, rngmod.SeedStreams(seed), rho_min_guard=1e-6)
            ok = out.surrogate.loo_error < 0.01
            outcomes.append("certified")
        except SurrogateFailureError as exc:
            ok = exc.radius < 1e-6
            outcomes.append("guard")
        if not ok:
            failures.append(f"certification at {x}")
    verdict(6, not failures, f"coefficient recovery {coef_err:.1e}, prediction {worst_coef:.1e}, LOO {worst_loo:.1e}, "
                             f"certification outcomes {outcomes}" + (f"; failed: {failures}" if failures else ""))


def _surrogate(a0, b):
    return QuadraticSurrogate(np.zeros(2), 1.0, np.array([a0, b[0], b[1], 0.0, 0.0, 0.0]))


def test_criterion_7_subproblem_kkt():
    box = DesignSpace.unbounded(2)
    lin = SubproblemSpec(CostFunction(lambda x: float(x[0] + x[1]), lambda x: np.ones(2)), _surrogate(-1.0, (0, 0)),
                         np.zeros(2), 1.0, box)
    r1 = solve_subproblem(lin)
    e1 = np.abs(r1.x_next + 1 / math.sqrt(2)).max()
    act = SubproblemSpec(CostFunction(lambda x: float(-x[0]), lambda x: np.array([-1.0, 0.0])), _surrogate(0.0, (1, 0)),
                         np.zeros(2), 1.0, box)
    r2 = solve_subproblem(act)
    e2 = abs(r2.x_next[0])
    ok = e1 <= 1e-6 and e2 <= 1e-6 and abs(r1.f_value + math.sqrt(2)) <= 1e-6
    verdict(7, ok, f"linear-over-ball error {e1:.1e}, active-linear x1 error {e2:.1e}")


def test_criterion_8_feasibility_audit(table2_sigma_01, table2_sigma_001):
    start = time.perf_counter()
    rates = {}
    groups = {(m, 0.1): s for m, (s, _) in table2_sigma_01.items()}
    groups[("dftr_r", 0.01)] = table2_sigma_001[0]
    for (method, sigma), summary in groups.items():
        xs = [r["x_opt"] for r in summary.rows if r["status"] == "ok"]
        passes, _ = oracle_feasible(CantileverConfig(sigma_wt=sigma), xs, n=1_000_000, seed=2024)
        rates[f"{method}@{sigma}"] = passes.sum() / summary.repetitions
    wall = time.perf_counter() - start
    ok = all(v >= 0.9 for v in rates.values()) and wall <= 300
    verdict(8, ok, "oracle pass rates " + ", ".join(f"{k}={v:.2f}" for k, v in rates.items()) + f", wall {wall:.0f}s")


def test_criterion_9_determinism(tmp_path, capsys):
    mismatched = []
    for method in ("dftr-r", "sf", "dftr"):
        for workers in (1, 4):
            blobs = []
            for k in range(2):
                out = tmp_path / f"{method}-{workers}-{k}"
                code = cli.main(["solve", "--method", method, "--seed", "7", "--workers", str(workers),
                                 "--output-dir", str(out)])
                blobs.append((out / "result.json").read_bytes() if code == 0 else None)
            if blobs[0] is None or blobs[0] != blobs[1]:
                mismatched.append(f"{method}/workers={workers}")
    capsys.readouterr()
    verdict(9, not mismatched, "solve result JSON byte-identical for dftr-r, sf, dftr with workers 1 and 4"
            if not mismatched else f"mismatch: {mismatched}")
