"""Derivative-free trust-region driver for reliability-based optimization.

Each outer iteration builds a certified quadratic surrogate of the
log-constraint around the current iterate, minimizes the cost over the
trust region subject to the surrogate, and accepts the step only if the
estimated constraint at the new point is negative.  Accepted steps expand
the radius, rejected ones contract it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import InfeasibleSubproblemError, InvalidParameterError, SurrogateFailureError
from .reliability import EvalCounters, evaluate_samples, full_evaluation, log_constraint, reweighted_evaluation
from .stochastic import cost_eval
from .subproblem import SolverOptions, SubproblemSpec, solve_subproblem
from .surrogate import surr_constr

TERMINATIONS = ("inner_point", "f_stall", "rho_floor", "max_outer", "surrogate_failure")
NORMAL_TERMINATIONS = ("inner_point", "f_stall", "rho_floor", "max_outer")
ACCEPTANCE_MODES = ("full", "reweighted")
STEP_TEST_RADII = ("subproblem", "expanded")

# a step counts as interior when shorter than this fraction of the radius
INNER_POINT_MARGIN = 1.0 - 1e-6


@dataclass(frozen=True)
class TrParams:
    """Trust-region parameters; defaults follow the reference benchmark settings.

    ``eps_star=None`` means ``0.1 * theta`` of the problem being solved.
    """

    rho_0: float = 0.1
    rho_min: float = 1e-6
    eps_star: Optional[float] = None
    omega_plus: float = 1.1
    omega_minus: float = 0.9
    delta: float = 1e-4
    m: int = 20
    n_mc: int = 10_000
    max_outer: int = 500
    acceptance_mode: str = "full"
    recycle_acceptance: bool = False
    common_random_numbers: bool = True
    step_test_radius: str = "subproblem"
    workers: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not (0.0 < self.omega_minus < 1.0):
            raise InvalidParameterError(f"omega_minus must lie in (0, 1), got {self.omega_minus}")
        if not self.omega_plus > 1.0:
            raise InvalidParameterError(f"omega_plus must exceed 1, got {self.omega_plus}")
        if not (0.0 < self.rho_min < self.rho_0):
            raise InvalidParameterError(
                f"need 0 < rho_min < rho_0, got rho_min={self.rho_min}, rho_0={self.rho_0}"
            )
        if self.eps_star is not None and not self.eps_star > 0:
            raise InvalidParameterError(f"eps_star must be positive, got {self.eps_star}")
        if not self.delta >= 0:
            raise InvalidParameterError(f"delta must be nonnegative, got {self.delta}")
        if self.m < 2 or self.n_mc < 1 or self.max_outer < 1 or self.workers < 1:
            raise InvalidParameterError("m >= 2, n_mc >= 1, max_outer >= 1 and workers >= 1 are required")
        if self.acceptance_mode not in ACCEPTANCE_MODES:
            raise InvalidParameterError(f"acceptance_mode must be one of {ACCEPTANCE_MODES}")
        if self.step_test_radius not in STEP_TEST_RADII:
            raise InvalidParameterError(f"step_test_radius must be one of {STEP_TEST_RADII}")

    def eps_for(self, theta):
        return 0.1 * theta if self.eps_star is None else self.eps_star


@dataclass(frozen=True)
class IterationRecord:
    k: int
    x_k: list
    f_k: float
    x_next: Optional[list]
    f_next: Optional[float]
    rho_before: float
    rho_after: float
    p_hat_accept: Optional[float]
    accepted: bool
    inner_rejections: int
    full_evals_so_far: int
    surrogate: Optional[dict]

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RunResult:
    method: str
    x_opt: list
    f_opt: float
    p_hat_accept: Optional[float]
    termination: str
    iterations: tuple
    counters: dict
    stats: dict

    def __post_init__(self):
        if self.termination not in TERMINATIONS:
            raise InvalidParameterError(f"unknown termination {self.termination!r}")

    @property
    def full_evals(self):
        return self.counters["full_evals"]

    def to_dict(self):
        out = asdict(self)
        out["iterations"] = [it.to_dict() for it in self.iterations]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _FreshValues:
    """Constraint values from a separate full evaluation at every point."""

    def __init__(self, problem, n, streams, counters, crn, workers):
        self.problem = problem
        self.n = n
        self.streams = streams
        self.counters = counters
        self.crn = crn
        self.workers = workers

    def __call__(self, points):
        sampling = self.streams[rngmod.SAMPLING]
        dist = self.problem.dist
        if self.crn:
            seed = int(sampling.integers(0, 2**63 - 1))
            # same draws as restarting default_rng(seed) at every point, generated once
            split = hasattr(dist, "standard_draws")
            u = dist.standard_draws(self.n, np.random.default_rng(seed)) if split else None
        vals = []
        for x in points:
            if self.crn and split:
                x = self.problem.space.check(x)
                ev = evaluate_samples(self.problem, x, dist.from_standard(x, u), counters=self.counters,
                                      workers=self.workers)
            else:
                gen = np.random.default_rng(seed) if self.crn else sampling
                ev = full_evaluation(self.problem, x, self.n, gen, counters=self.counters, workers=self.workers)
            vals.append(log_constraint(ev.p_hat, self.problem.theta, self.n))
        return np.array(vals)


def _run(problem, x_0, params, rng, reweight, values_fn=None, trace=None):
    streams = rngmod.as_streams(rng)
    counters = EvalCounters()
    theta = problem.theta
    eps_star = params.eps_for(theta)
    n = params.n_mc
    opts = params.solver
    if values_fn is None and not reweight:
        values_fn = _FreshValues(problem, n, streams, counters, params.common_random_numbers, params.workers)
    acceptance_mode = params.acceptance_mode if reweight and values_fn is None else "full"

    x_k = problem.space.check(x_0).copy()
    f_k = cost_eval(problem, x_k)
    rho = params.rho_0
    records = []
    accepted_points = []  # (f, x, p_hat)
    surr_calls = 0
    center_evals = 0
    acceptance_checks = 0
    carried = None
    termination = "max_outer"
    x_opt, f_opt, p_opt = x_k, f_k, None

    def finish_abnormal(status):
        if accepted_points:
            f_b, x_b, p_b = min(accepted_points, key=lambda t: (t[0], tuple(t[1])))
            return status, x_b, f_b, p_b
        return status, x_k, f_k, None

    for k in range(params.max_outer):
        rho_before = rho
        rejections = 0
        outcome = None
        stop = None
        while True:
            if rho < params.rho_min:
                stop = finish_abnormal("rho_floor")
                break
            try:
                outcome = surr_constr(
                    problem, x_k, rho, eps_star, params.omega_minus, params.m, n, streams,
                    rho_min_guard=params.rho_min, counters=counters, evaluation=carried,
                    values_fn=values_fn, workers=params.workers,
                )
            except SurrogateFailureError:
                surr_calls += 1
                center_evals += carried is None and values_fn is None
                stop = finish_abnormal("surrogate_failure")
                break
            surr_calls += 1
            center_evals += carried is None and values_fn is None
            carried = None
            rho = outcome.radius
            spec = SubproblemSpec(problem.cost, outcome.surrogate, x_k, rho, problem.space)
            try:
                sub = solve_subproblem(spec, opts, streams[rngmod.MULTI_START])
            except InfeasibleSubproblemError:
                sub = None
            if sub is None or not sub.feasible:
                rho *= params.omega_minus
                rejections += 1
                continue
            x_new = sub.x_next
            if acceptance_mode == "full":
                acc = full_evaluation(problem, x_new, n, streams[rngmod.SAMPLING], counters=counters,
                                      workers=params.workers)
                acceptance_checks += 1
                p_acc = acc.p_hat
            else:
                acc = None
                p_acc = reweighted_evaluation(outcome.evaluation, problem.dist, x_new, counters=counters).p_hat
            if log_constraint(p_acc, theta, n) < 0:
                rho_used = rho
                rho *= params.omega_plus
                break
            rho *= params.omega_minus
            rejections += 1

        if stop is not None:
            termination, x_opt, f_opt, p_opt = stop
            records.append(IterationRecord(
                k=k, x_k=x_k.tolist(), f_k=f_k, x_next=None, f_next=None,
                rho_before=rho_before, rho_after=rho, p_hat_accept=None, accepted=False,
                inner_rejections=rejections, full_evals_so_far=counters.full_evals,
                surrogate=outcome.surrogate.to_record() if outcome is not None else None,
            ))
            if trace is not None:
                trace(records[-1])
            break

        f_new = cost_eval(problem, x_new)
        accepted_points.append((f_new, x_new, p_acc))
        records.append(IterationRecord(
            k=k, x_k=x_k.tolist(), f_k=f_k, x_next=x_new.tolist(), f_next=f_new,
            rho_before=rho_before, rho_after=rho, p_hat_accept=p_acc, accepted=True,
            inner_rejections=rejections, full_evals_so_far=counters.full_evals,
            surrogate=outcome.surrogate.to_record(),
        ))
        if trace is not None:
            trace(records[-1])

        step = float(np.linalg.norm(x_new - x_k))
        test_radius = rho_used * INNER_POINT_MARGIN if params.step_test_radius == "subproblem" else rho
        done = None
        if step < test_radius:
            done = "inner_point"
        elif abs(f_new - f_k) <= params.delta:
            done = "f_stall"
        elif rho < params.rho_min:
            done = "rho_floor"
        carried = acc if (params.recycle_acceptance and acc is not None and values_fn is None) else None
        x_k, f_k = x_new, f_new
        x_opt, f_opt, p_opt = x_new, f_new, p_acc
        if done is not None:
            termination = done
            break
    else:
        termination = "max_outer"

    return RunResult(
        method="dftr_r" if reweight else "dftr",
        x_opt=np.asarray(x_opt, dtype=float).tolist(),
        f_opt=float(f_opt),
        p_hat_accept=p_opt,
        termination=termination,
        iterations=tuple(records),
        counters=counters.snapshot(),
        stats={
            "surr_constr_calls": surr_calls,
            "center_evaluations": int(center_evals),
            "acceptance_checks": acceptance_checks,
            "outer_iterations": len(records),
        },
    )


def run_dftr(problem, x_0, params=None, rng=0, values_fn=None, trace=None):
    """Trust-region RBO with sample reweighting (one full evaluation per surrogate).

    Parameters
    ----------
    problem : RboProblem
    x_0 : array_like
        Starting design; need not be feasible.
    params : TrParams, optional
    rng : int or SeedStreams
        Base seed; sampling, ball points and multi-starts use separate streams.
    values_fn : callable, optional
        Replaces Monte Carlo constraint values at surrogate points (verification
        with analytic constraints).  Acceptance then also uses full evaluations.
    trace : callable, optional
        Receives each :class:`IterationRecord` as it is produced.
    """
    return _run(problem, x_0, params or TrParams(), rng, reweight=True, values_fn=values_fn, trace=trace)


def run_dftr_no_reweight(problem, x_0, params=None, rng=0, values_fn=None, trace=None):
    """Same iteration as :func:`run_dftr` but every surrogate point gets its own full evaluation.

    With ``params.common_random_numbers`` the points of one certification pass
    share a sample stream (each evaluation still calls the limit state).
    """
    result = _run(problem, x_0, params or TrParams(), rng, reweight=False, values_fn=values_fn, trace=trace)
    return replace(result, method="dftr")
