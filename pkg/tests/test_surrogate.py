import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dftr_rbo import rng as rngmod
from dftr_rbo.errors import InfeasibleRegionError, InvalidParameterError, PoisednessError, SurrogateFailureError
from dftr_rbo.reliability import EvalCounters
from dftr_rbo.stochastic import DesignSpace
from dftr_rbo.surrogate import (
    DesignSample,
    fit_quadratic,
    loo_error,
    n_basis,
    quadratic_basis,
    sample_ball,
    surr_constr,
)

UNBOUNDED2 = DesignSpace.unbounded(2)


def quad_values(pts):
    pts = np.atleast_2d(pts)
    return 1 + 2 * pts[:, 0] + 3 * pts[:, 1] ** 2


def ball_sample(center, radius, m, seed, fn=quad_values):
    pts = sample_ball(center, radius, m, UNBOUNDED2, np.random.default_rng(seed))
    return DesignSample(pts, fn(pts), center, radius)


def test_basis_ordering():
    row = quadratic_basis([[2.0, 3.0]])[0]
    np.testing.assert_array_equal(row, [1, 2, 3, 4, 6, 9])
    assert n_basis(2) == 6 and n_basis(5) == 21


def test_sample_ball_rejects_zero_radius():
    with pytest.raises(InvalidParameterError):
        sample_ball([0.0, 0.0], 0.0, 5, UNBOUNDED2, np.random.default_rng(0))


def test_sample_ball_uniform_in_disk():
    pts = sample_ball([0.0, 0.0], 1.0, 100_000, UNBOUNDED2, np.random.default_rng(0))
    assert np.all(np.linalg.norm(pts, axis=1) <= 1.0)
    frac = np.mean(np.linalg.norm(pts, axis=1) <= 0.5)
    assert abs(frac - 0.25) <= 0.01


def test_sample_ball_respects_box_at_boundary():
    box = DesignSpace([1.0, 1.0], [4.0, 4.0])
    pts = sample_ball([1.0, 2.0], 0.5, 500, box, np.random.default_rng(0))
    assert np.all(pts >= box.lower) and np.all(pts <= box.upper)
    assert np.all(np.linalg.norm(pts - [1.0, 2.0], axis=1) <= 0.5)


def test_sample_ball_missing_box():
    box = DesignSpace([1.0, 1.0], [4.0, 4.0])
    with pytest.raises(InfeasibleRegionError):
        sample_ball([0.0, 0.0], 0.5, 5, box, np.random.default_rng(0))


def test_exact_quadratic_recovery():
    sample = ball_sample(np.zeros(2), 1.0, 20, 1)
    s = fit_quadratic(sample)
    np.testing.assert_allclose(s.coeffs, [1, 2, 0, 0, 0, 3], atol=1e-8)
    assert np.abs(s(sample.points) - sample.values).max() <= 1e-10


def test_exact_quadratic_recovery_away_from_origin_small_radius():
    c = np.array([2.3, -1.7])
    sample = ball_sample(c, 1e-3, 20, 2)
    s = fit_quadratic(sample)
    probe = c + np.array([[3e-4, -2e-4], [0.0, 0.0]])
    np.testing.assert_allclose(s(probe), quad_values(probe), atol=1e-9)
    np.testing.assert_allclose(s.gradient(c), [2.0, 6 * c[1]], rtol=1e-6)


def test_constant_values():
    sample = ball_sample(np.array([0.5, 0.5]), 0.3, 20, 3, fn=lambda p: np.full(len(p), 4.0))
    s = fit_quadratic(sample)
    assert s.coeffs[0] == pytest.approx(4.0, abs=1e-10)
    assert np.abs(s.coeffs[1:]).max() <= 1e-10


def test_too_few_points():
    sample = ball_sample(np.zeros(2), 1.0, n_basis(2) - 1, 4)
    with pytest.raises(InvalidParameterError):
        fit_quadratic(sample)


def test_rank_deficient_design():
    pts = np.column_stack([np.linspace(-1, 1, 10), np.zeros(10)])  # collinear
    sample = DesignSample(pts, quad_values(pts), np.zeros(2), 1.0)
    with pytest.raises(PoisednessError):
        fit_quadratic(sample)


def test_loo_exact_quadratic():
    assert loo_error(ball_sample(np.zeros(2), 1.0, 20, 5)) <= 1e-8


def test_loo_perturbed_positive():
    sample = ball_sample(np.zeros(2), 1.0, 20, 6)
    vals = sample.values.copy()
    vals[3] += 0.01
    assert loo_error(DesignSample(sample.points, vals, sample.center, 1.0)) > 0


def test_loo_needs_one_extra_point():
    with pytest.raises(InvalidParameterError):
        loo_error(ball_sample(np.zeros(2), 1.0, n_basis(2), 7))


def test_loo_matches_brute_force():
    sample = ball_sample(np.zeros(2), 1.0, 12, 8, fn=lambda p: np.sin(3 * p[:, 0]) + p[:, 1] ** 3)
    worst = 0.0
    for k in range(12):
        keep = np.arange(12) != k
        s = fit_quadratic(DesignSample(sample.points[keep], sample.values[keep], sample.center, 1.0))
        worst = max(worst, abs(sample.values[k] - s(sample.points[k])))
    assert loo_error(sample) == pytest.approx(worst, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(shift=st.lists(st.floats(-10, 10), min_size=2, max_size=2), seed=st.integers(0, 1000))
def test_affine_invariance(shift, seed):
    shift = np.array(shift)
    base = ball_sample(np.zeros(2), 0.5, 20, seed, fn=lambda p: np.exp(p[:, 0]) - p[:, 1] ** 2)
    moved = DesignSample(base.points + shift, base.values, shift, 0.5)
    a, b = fit_quadratic(base), fit_quadratic(moved)
    probe = sample_ball(np.zeros(2), 0.5, 10, UNBOUNDED2, np.random.default_rng(seed + 1))
    np.testing.assert_allclose(a(probe), b(probe + shift), atol=1e-10)
    np.testing.assert_allclose(a.gradient(np.zeros(2)), b.gradient(shift), atol=1e-9)


def test_record_roundtrip_fields():
    s = fit_quadratic(ball_sample(np.zeros(2), 1.0, 20, 9)).with_loo_error(0.5)
    rec = s.to_record()
    assert set(rec) == {"center", "radius", "coeffs", "loo_error"} and rec["loo_error"] == 0.5


def _streams(seed=0):
    return rngmod.SeedStreams(seed)


def test_surr_constr_exact_quadratic_single_pass(cantilever):
    out = surr_constr(cantilever, [2.5, 2.5], 0.1, 0.01, 0.9, 20, 10_000, _streams(),
                      values_fn=lambda pts: quad_values(pts))
    assert out.radius == 0.1 and out.passes == 1 and out.evaluation is None
    assert out.surrogate.loo_error < 0.01


def test_surr_constr_infinite_eps_single_pass(cantilever):
    counters = EvalCounters()
    out = surr_constr(cantilever, [2.1, 2.1], 0.1, math.inf, 0.9, 20, 10_000, _streams(), counters=counters)
    assert out.radius == 0.1 and out.passes == 1
    assert counters.full_evals == 1 and counters.g_calls == 10_000


def test_surr_constr_cantilever_table_settings(cantilever):
    counters = EvalCounters()
    out = surr_constr(cantilever, [2.2, 2.2], 0.1, 0.01, 0.9, 20, 10_000, _streams(1), counters=counters)
    assert math.isfinite(out.radius) and 0 < out.radius <= 0.1
    assert out.surrogate.loo_error < 0.01
    assert counters.g_calls == 10_000 and counters.full_evals == 1
    assert np.all(np.linalg.norm(out.points - [2.2, 2.2], axis=1) <= out.radius * (1 + 1e-12))
    assert np.array_equal(out.points[-1], [2.2, 2.2])


def test_surr_constr_guard(cantilever):
    rough = np.random.default_rng(0)
    with pytest.raises(SurrogateFailureError) as info:
        surr_constr(cantilever, [2.2, 2.2], 0.1, 0.01, 0.5, 20, 10_000, _streams(),
                    rho_min_guard=1e-3, values_fn=lambda pts: rough.standard_normal(len(pts)))
    assert info.value.radius < 1e-3


def test_surr_constr_validates(cantilever):
    with pytest.raises(InvalidParameterError):
        surr_constr(cantilever, [2.2, 2.2], 0.1, 0.01, 1.2, 20, 100, _streams())
    with pytest.raises(InvalidParameterError):
        surr_constr(cantilever, [2.2, 2.2], 0.1, 0.01, 0.9, 6, 100, _streams())
