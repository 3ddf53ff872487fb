"""Monte Carlo failure-probability estimation with sample reweighting.

A *full* evaluation draws fresh samples at a design and calls the limit
state on each of them.  A *reweighted* evaluation reuses the samples of a
full evaluation at a nearby centre, weighting each one by the likelihood
ratio ``q(z; x) / q(z; x_c)``; it never calls the limit state.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, TaintedSampleError

ESS_FRACTION = 0.1


@dataclass
class EvalCounters:
    """Running totals of estimator work; one instance per optimization run."""

    full_evals: int = 0
    reweighted_evals: int = 0
    g_calls: int = 0

    def snapshot(self):
        return {"full_evals": self.full_evals, "reweighted_evals": self.reweighted_evals, "g_calls": self.g_calls}


@dataclass(frozen=True, eq=False)
class ReliabilityEvaluation:
    center: np.ndarray
    samples: np.ndarray
    g_values: np.ndarray
    indicator: np.ndarray
    p_hat: float
    std_err: float

    @property
    def n(self):
        return self.g_values.size


@dataclass(frozen=True, eq=False)
class ReweightedEstimate:
    x: np.ndarray
    p_hat: float
    std_err: float
    ess: float
    n: int
    weights_min: float
    weights_max: float
    weights_mean: float
    degenerate: bool = False

    @property
    def weights_summary(self):
        return {"min": self.weights_min, "max": self.weights_max, "mean": self.weights_mean}


def _limit_values(limit, samples, workers):
    n = samples.shape[0]
    if workers <= 1 or n < 2 * workers:
        return limit(samples)
    # chunks are contiguous index ranges and are concatenated in order
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [samples[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(limit, chunks))
    return np.concatenate(parts)


def evaluate_samples(problem, x, samples, counters=None, workers=1):
    """Evaluate the limit state on given samples drawn at ``x``."""
    samples = np.asarray(samples, dtype=float)
    g = np.asarray(_limit_values(problem.limit, samples, workers), dtype=float)
    if counters is not None:
        counters.full_evals += 1
        counters.g_calls += samples.shape[0]
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise TaintedSampleError(bad[0], g[bad[0]])
    indicator = (g < 0).astype(np.int8)
    p_hat = float(np.mean(indicator))
    n = g.size
    return ReliabilityEvaluation(
        center=np.array(x, dtype=float),
        samples=samples,
        g_values=g,
        indicator=indicator,
        p_hat=p_hat,
        std_err=float(np.sqrt(p_hat * (1.0 - p_hat) / n)),
    )


def full_evaluation(problem, x, n, rng, counters=None, workers=1):
    """Plain Monte Carlo estimate of ``P(x)`` from ``n`` fresh samples.

    Parameters
    ----------
    problem : RboProblem
    x : array_like
        Design at which samples are drawn; must lie in the design box.
    n : int
        Sample count.
    rng : numpy.random.Generator
        Stream the samples are drawn from.
    counters : EvalCounters, optional
        Incremented by one full evaluation and ``n`` limit-state calls.
    workers : int
        Number of threads the limit-state calls are split across.  Samples are
        drawn before splitting, so the result does not depend on ``workers``.

    Raises
    ------
    TaintedSampleError
        If the limit state is non-finite on some sample.
    """
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    x = problem.space.check(x)
    samples = problem.dist.sample(x, n, rng)
    return evaluate_samples(problem, x, samples, counters=counters, workers=workers)


def log_weights(dist, samples, x, center):
    if hasattr(dist, "log_ratio"):
        return dist.log_ratio(samples, x, center)
    return dist.log_density(samples, x) - dist.log_density(samples, center)


def reweighted_evaluation(evaluation, dist, x, counters=None, ess_floor=None):
    """Estimate ``P(x)`` from the samples of ``evaluation`` via likelihood ratios.

    The standard error is that of the mean of ``I(z) r(z)`` (sample standard
    deviation over ``sqrt(N)``).  When the effective sample size falls below
    ``ess_floor`` (default ``N/10``) the estimate is flagged ``degenerate``.
    """
    x = np.asarray(x, dtype=float)
    w = np.exp(log_weights(dist, evaluation.samples, x, evaluation.center))
    n = evaluation.n
    iw = evaluation.indicator * w
    p_hat = float(np.mean(iw))
    std_err = float(np.std(iw, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    floor = ESS_FRACTION * n if ess_floor is None else ess_floor
    if counters is not None:
        counters.reweighted_evals += 1
    return ReweightedEstimate(
        x=x,
        p_hat=p_hat,
        std_err=std_err,
        ess=ess,
        n=n,
        weights_min=float(w.min()),
        weights_max=float(w.max()),
        weights_mean=float(w.mean()),
        degenerate=ess < floor,
    )


def reweighted_probabilities(evaluation, dist, points, counters=None):
    """Vector of reweighted ``p_hat`` values at each row of ``points``."""
    return np.array([reweighted_evaluation(evaluation, dist, x, counters=counters).p_hat for x in points])


def p_floor(n):
    return 0.5 / n


def log_constraint(p_hat, theta, n):
    """``ln(max(p_hat, 0.5/n)) - ln(theta)``.

    The half-count floor keeps the constraint finite when no failure was
    observed; it is monotone nondecreasing in ``p_hat``.
    """
    if not (0.0 < theta < 1.0):
        raise InvalidParameterError(f"theta must lie in (0, 1), got {theta}")
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    return float(np.log(max(p_hat, p_floor(n))) - np.log(theta))


def evaluation_summary(evaluation: Optional[ReliabilityEvaluation]):
    if evaluation is None:
        return None
    return {
        "center": evaluation.center.tolist(),
        "n": evaluation.n,
        "p_hat": evaluation.p_hat,
        "std_err": evaluation.std_err,
    }
