"""Score-function gradients of the failure probability and the SF baseline solver.

Differentiating ``P(x) = E_x[I(z)]`` under the integral gives
``grad P(x) = E_x[I(z) * grad_x log q(z; x)]``, estimated on the same
samples as ``P`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .driver import IterationRecord, RunResult
from .errors import InvalidParameterError
from .reliability import EvalCounters, evaluate_samples, log_constraint, p_floor
from .sqp import sqp_minimize
from .stochastic import cost_eval
from .subproblem import SolverOptions

# line-search floor and step-length stop for the SF solve
SF_MIN_STEP = 1e-6
SF_STEP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SfGradientEstimate:
    x: np.ndarray
    p_hat: float
    grad_p: np.ndarray
    grad_c: np.ndarray
    n: int
    std_err_grad: np.ndarray


def sf_from_evaluation(problem, evaluation):
    """Score-function gradient from an existing full evaluation (no extra limit-state calls)."""
    x = evaluation.center
    n = evaluation.n
    failed = evaluation.indicator.astype(bool)
    if failed.any():
        terms = problem.dist.score(evaluation.samples[failed], x)
        grad_p = terms.sum(axis=0) / n
        # second moment of I * score over all n samples
        second = (terms * terms).sum(axis=0) / n
        std_err = np.sqrt(np.maximum(second - grad_p**2, 0.0) / n)
    else:
        grad_p = np.zeros(x.size)
        std_err = np.zeros(x.size)
    grad_c = grad_p / max(evaluation.p_hat, p_floor(n))
    return SfGradientEstimate(x=x, p_hat=evaluation.p_hat, grad_p=grad_p, grad_c=grad_c, n=n, std_err_grad=std_err)


def sf_gradient(problem, x, n, rng, counters=None, workers=1):
    """One full evaluation at ``x`` and the score-function estimate of ``grad P``.

    ``grad_c = grad_p / max(p_hat, 0.5/n)`` is the gradient of the floored
    log-constraint.
    """
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    x = problem.space.check(x)
    samples = problem.dist.sample(x, n, rng)
    ev = evaluate_samples(problem, x, samples, counters=counters, workers=workers)
    return sf_from_evaluation(problem, ev)


class _SfConstraint:
    """``c(x)`` and ``grad c(x)`` from score-function estimates, cached by design vector.

    With ``crn`` every estimate restarts the same stream, so ``c`` is a
    deterministic function of ``x``; otherwise each new point draws fresh
    samples from one continuing stream.
    """

    def __init__(self, problem, n, seed, counters, workers, crn=True):
        self.problem = problem
        self.n = n
        self.seed = seed
        self.counters = counters
        self.workers = workers
        self.crn = crn
        self._stream = np.random.default_rng(seed)
        self._cache = {}

    def estimate(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self._cache:
            gen = np.random.default_rng(self.seed) if self.crn else self._stream
            self._cache[key] = sf_gradient(self.problem, x, self.n, gen, counters=self.counters, workers=self.workers)
        return self._cache[key]

    def __call__(self, x):
        est = self.estimate(x)
        c = log_constraint(est.p_hat, self.problem.theta, self.n)
        return np.array([c]), est.grad_c[None, :]


def run_sf(
    problem,
    x_0,
    n,
    solver_opts=None,
    rng=0,
    delta=None,
    max_iter=None,
    workers=1,
    trace=None,
    common_random_numbers=True,
    min_step=SF_MIN_STEP,
    step_tol=SF_STEP_TOL,
):
    """SQP on ``min f(x)`` s.t. ``c(x) <= 0`` with score-function constraint gradients.

    By default all constraint evaluations of one run use the same random
    stream, so ``c`` is a deterministic function of ``x`` during line
    searches.  The run ends on SQP convergence, when the line search step
    falls below ``min_step``, when an accepted step is shorter than
    ``step_tol * (1 + |x|_inf)``, or (if ``delta`` is given) once a feasible
    step changes the cost by at most ``delta``; all of these report
    ``f_stall``.  Hitting ``max_iter`` major iterations reports
    ``max_outer``.  The returned design is the best iterate whose own
    estimate satisfied ``c < 0``.
    """
    opts = solver_opts or SolverOptions()
    max_iter = opts.max_sqp_iters if max_iter is None else max_iter
    streams = rngmod.as_streams(rng)
    counters = EvalCounters()
    seed = int(streams[rngmod.COMMON_NUMBERS].integers(0, 2**63 - 1))
    cons = _SfConstraint(problem, n, seed, counters, workers, crn=common_random_numbers)
    x0 = problem.space.check(x_0)

    feasible = []
    records = []

    def note(x, f, c):
        if c[0] < 0:
            feasible.append((f, tuple(x), np.array(x), cons.estimate(x).p_hat))

    def stop_test(x_old, f_old, c_old, x_new, f_new, c_new):
        note(x_new, f_new, c_new)
        rec = IterationRecord(
            k=len(records), x_k=list(map(float, x_old)), f_k=float(f_old),
            x_next=list(map(float, x_new)), f_next=float(f_new),
            rho_before=float("nan"), rho_after=float("nan"),
            p_hat_accept=cons.estimate(x_new).p_hat, accepted=bool(c_new[0] < 0),
            inner_rejections=0, full_evals_so_far=counters.full_evals, surrogate=None,
        )
        records.append(rec)
        if trace is not None:
            trace(rec)
        return delta is not None and c_new[0] < 0 and abs(f_new - f_old) <= delta

    c0, _ = cons(x0)
    note(x0, cost_eval(problem, x0), c0)
    res = sqp_minimize(
        problem.cost.eval,
        problem.cost.eval_gradient,
        cons,
        x0,
        problem.space.lower,
        problem.space.upper,
        kkt_tol=opts.kkt_tol,
        max_iter=max_iter,
        stop_test=stop_test,
        min_step=min_step,
        step_tol=step_tol,
    )
    termination = "max_outer" if res.status == "max_iter" else "f_stall"
    if feasible:
        f_opt, _, x_opt, p_opt = min(feasible, key=lambda t: (t[0], t[1]))
    else:
        x_opt, f_opt, p_opt = res.x, res.f, None
    return RunResult(
        method="sf",
        x_opt=np.asarray(x_opt, dtype=float).tolist(),
        f_opt=float(f_opt),
        p_hat_accept=p_opt,
        termination=termination,
        iterations=tuple(records),
        counters=counters.snapshot(),
        stats={"sqp_status": res.status, "sqp_iterations": res.iterations, "kkt_residual": res.kkt_residual},
    )
