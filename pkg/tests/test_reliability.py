import math

import numpy as np
import pytest

from dftr_rbo.errors import InvalidParameterError, TaintedSampleError
from dftr_rbo.problems import ShiftedThreshold, cantilever_problem, gaussian_tail_problem
from dftr_rbo.reliability import (
    EvalCounters,
    full_evaluation,
    log_constraint,
    p_floor,
    reweighted_evaluation,
)
from dftr_rbo.stochastic import AffineMap, CostFunction, DesignSpace, GaussianFamily, LimitState, RboProblem

from conftest import norm_cdf

# P(2, 3) for the cantilever at sigma = 0.1: 758 failures in 10^7 samples drawn
# with MT19937 (numpy RandomState, seed 20240917), independent of PCG64.
ORACLE_P_2_3 = 7.58e-05
ORACLE_SE_2_3 = 2.753075632088592e-06


def constant_problem(value, dim=1):
    space = DesignSpace(np.full(dim, -5.0), np.full(dim, 5.0))
    dist = GaussianFamily(AffineMap.selecting(np.zeros(dim), tuple(range(dim))), np.ones(dim))
    limit = LimitState(lambda z: np.full(np.atleast_2d(z).shape[0], value))
    return RboProblem(space, CostFunction(lambda x: 0.0), dist, limit, theta=0.1)


def test_always_failing_limit_state():
    ev = full_evaluation(constant_problem(-1.0), [0.0], 1000, np.random.default_rng(0))
    assert ev.p_hat == 1.0 and ev.std_err == 0.0


def test_never_failing_limit_state():
    ev = full_evaluation(constant_problem(1.0), [0.0], 1000, np.random.default_rng(0))
    assert ev.p_hat == 0.0


def test_evaluation_invariants(cantilever):
    ev = full_evaluation(cantilever, [2.1, 2.1], 5000, np.random.default_rng(2))
    np.testing.assert_array_equal(ev.indicator == 1, ev.g_values < 0)
    assert ev.p_hat == ev.indicator.sum() / ev.n
    assert ev.std_err == pytest.approx(math.sqrt(ev.p_hat * (1 - ev.p_hat) / ev.n))


def test_cantilever_against_independent_oracle(cantilever):
    ev = full_evaluation(cantilever, [2.0, 3.0], 100_000, np.random.default_rng(2024))
    # the 10^5-sample estimate is far noisier than the oracle, so the band uses both errors
    se = math.sqrt(ORACLE_P_2_3 * (1 - ORACLE_P_2_3) / 100_000 + ORACLE_SE_2_3**2)
    assert abs(ev.p_hat - ORACLE_P_2_3) <= 3 * se


def test_counters_and_tainted_samples():
    counters = EvalCounters()
    full_evaluation(constant_problem(1.0), [0.0], 100, np.random.default_rng(0), counters=counters)
    assert counters.snapshot() == {"full_evals": 1, "reweighted_evals": 0, "g_calls": 100}

    def g(z):
        out = np.atleast_2d(z)[:, 0].copy()
        out[7] = np.nan
        return out

    base = constant_problem(1.0)
    bad = RboProblem(base.space, base.cost, base.dist, LimitState(g), theta=0.1)
    with pytest.raises(TaintedSampleError) as info:
        full_evaluation(bad, [0.0], 20, np.random.default_rng(0))
    assert info.value.index == 7


def test_invalid_sample_count(tail):
    with pytest.raises(InvalidParameterError):
        full_evaluation(tail, [0.0], 0, np.random.default_rng(0))


def test_workers_do_not_change_results(cantilever):
    a = full_evaluation(cantilever, [2.1, 2.2], 10_001, np.random.default_rng(5), workers=1)
    b = full_evaluation(cantilever, [2.1, 2.2], 10_001, np.random.default_rng(5), workers=4)
    assert a.g_values.tobytes() == b.g_values.tobytes()


def test_reweighting_at_center_is_exact(cantilever):
    ev = full_evaluation(cantilever, [2.1, 2.1], 10_000, np.random.default_rng(1))
    rw = reweighted_evaluation(ev, cantilever.dist, ev.center)
    assert rw.p_hat == ev.p_hat
    assert rw.weights_min == rw.weights_max == 1.0
    assert rw.ess == pytest.approx(ev.n)


def test_reweighting_makes_no_limit_state_calls(cantilever):
    counters = EvalCounters()
    ev = full_evaluation(cantilever, [2.1, 2.1], 10_000, np.random.default_rng(1), counters=counters)
    before = counters.g_calls
    for dx in np.linspace(-0.05, 0.05, 7):
        reweighted_evaluation(ev, cantilever.dist, ev.center + dx, counters=counters)
    assert counters.g_calls == before
    assert counters.reweighted_evals == 7


def test_unmoved_coordinate_keeps_unit_weights():
    # design coordinate 1 does not enter the mean map
    dist = GaussianFamily(AffineMap([0.0], [[1.0, 0.0]]), [1.0])
    prob = RboProblem(DesignSpace([-5, -5], [5, 5]), CostFunction(lambda x: 0.0), dist,
                      LimitState(ShiftedThreshold(-1.0)), theta=0.1)
    ev = full_evaluation(prob, [0.0, 0.0], 1000, np.random.default_rng(0))
    rw = reweighted_evaluation(ev, dist, [0.0, 2.5])
    assert rw.weights_min == rw.weights_max == 1.0
    assert rw.p_hat == ev.p_hat


def test_reweighting_vs_fresh_mc_over_seeds():
    prob = gaussian_tail_problem(a=-1.2816)
    agree = 0
    for seed in range(100):
        ev = full_evaluation(prob, [0.0], 10_000, np.random.default_rng(seed))
        rw = reweighted_evaluation(ev, prob.dist, [0.3])
        fresh = full_evaluation(prob, [0.3], 10_000, np.random.default_rng(10_000 + seed))
        agree += abs(rw.p_hat - fresh.p_hat) <= 3 * math.hypot(rw.std_err, fresh.std_err)
    assert agree >= 95


def test_degenerate_weights_flagged():
    prob = gaussian_tail_problem(a=-1.2816)
    ev = full_evaluation(prob, [0.0], 2000, np.random.default_rng(0))
    far = reweighted_evaluation(ev, prob.dist, [3.0])
    near = reweighted_evaluation(ev, prob.dist, [0.1])
    assert far.degenerate and far.ess < 200
    assert not near.degenerate


def test_ess_formula(cantilever):
    ev = full_evaluation(cantilever, [2.1, 2.1], 2000, np.random.default_rng(0))
    x = np.array([2.15, 2.08])
    rw = reweighted_evaluation(ev, cantilever.dist, x)
    w = np.exp(cantilever.dist.log_density(ev.samples, x) - cantilever.dist.log_density(ev.samples, ev.center))
    assert rw.ess == pytest.approx(w.sum() ** 2 / (w * w).sum(), rel=1e-10)
    assert rw.p_hat == pytest.approx(np.mean(ev.indicator * w), rel=1e-10)


def test_log_constraint_examples():
    assert log_constraint(0.1, 0.1, 10_000) == 0.0
    assert log_constraint(0.0, 0.1, 10_000) == pytest.approx(math.log(5e-5) - math.log(0.1))
    assert log_constraint(0.0, 0.1, 10_000) == pytest.approx(-7.6009, abs=1e-4)
    assert log_constraint(0.2, 0.1, 10_000) == pytest.approx(math.log(2.0))
    assert p_floor(10_000) == 5e-5


def test_log_constraint_monotone():
    ps = np.linspace(0, 1, 501)
    vals = [log_constraint(p, 0.1, 1000) for p in ps]
    assert np.all(np.diff(vals) >= 0)


@pytest.mark.parametrize("q", [-1.2816, 0.0])
def test_mc_unbiased_over_seeds(q):
    prob = gaussian_tail_problem(a=q)
    est = np.array([full_evaluation(prob, [0.0], 10_000, np.random.default_rng(s)).p_hat for s in range(200)])
    se = est.std(ddof=1) / math.sqrt(est.size)
    assert abs(est.mean() - norm_cdf(q)) <= 4 * se
