"""Quadratic regression surrogates of the log-constraint on a trust region.

Coefficients are fitted in local coordinates ``u = (x - center) / radius``
so the design matrix stays well conditioned for tiny radii; the global
coefficient vector over the monomial basis is derived on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InfeasibleRegionError, InvalidParameterError, PoisednessError, SurrogateFailureError
from .reliability import full_evaluation, log_constraint, log_weights

POISEDNESS_RETRIES = 3


def n_basis(dim):
    return (dim + 1) * (dim + 2) // 2


def _pairs(dim):
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def quadratic_basis(points):
    """Rows ``[1, x_1..x_d, x_1^2, x_1 x_2, ..., x_d^2]`` (graded lexicographic)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = points.shape
    cols = [np.ones(m)]
    cols.extend(points[:, i] for i in range(d))
    cols.extend(points[:, i] * points[:, j] for i, j in _pairs(d))
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class DesignSample:
    """Regression data ``(points, values)`` inside the ball ``O(center, radius)``."""

    points: np.ndarray
    values: np.ndarray
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if self.points.shape[0] != self.values.size:
            raise InvalidParameterError("points and values must have the same length")
        if self.points.shape[1] != self.center.size:
            raise InvalidParameterError("points and center must share the design dimension")
        if not self.radius > 0:
            raise InvalidParameterError(f"radius must be positive, got {self.radius}")

    @property
    def dim(self):
        return self.center.size

    def local_points(self):
        return (self.points - self.center) / self.radius


@dataclass(frozen=True, eq=False)
class QuadraticSurrogate:
    """``s(x) = a0 + b.u + 0.5 u'Hu`` with ``u = (x - center) / radius``."""

    center: np.ndarray
    radius: float
    local_coeffs: np.ndarray
    loo_error: float = float("nan")

    @property
    def dim(self):
        return self.center.size

    @property
    def _parts(self):
        d = self.dim
        a = self.local_coeffs
        b = a[1 : d + 1]
        h = np.zeros((d, d))
        for k, (i, j) in enumerate(_pairs(d)):
            if i == j:
                h[i, i] = 2.0 * a[d + 1 + k]
            else:
                h[i, j] = h[j, i] = a[d + 1 + k]
        return a[0], b, h

    @property
    def coeffs(self):
        """Coefficients over the global basis ``[1, x_1..x_d, x_1^2, x_1 x_2, ..., x_d^2]``."""
        a0, b, h = self._parts
        c, r = self.center, self.radius
        q = h / r**2
        const = a0 - b @ c / r + 0.5 * c @ q @ c
        lin = b / r - q @ c
        quad = [0.5 * q[i, i] if i == j else q[i, j] for i, j in _pairs(self.dim)]
        return np.concatenate([[const], lin, quad])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.radius
        a0, b, h = self._parts
        if u.ndim == 1:
            return float(a0 + b @ u + 0.5 * u @ h @ u)
        return a0 + u @ b + 0.5 * np.einsum("ij,jk,ik->i", u, h, u)

    def gradient(self, x):
        u = (np.asarray(x, dtype=float) - self.center) / self.radius
        _, b, h = self._parts
        return (b + h @ u) / self.radius

    def hessian(self):
        return self._parts[2] / self.radius**2

    def with_loo_error(self, loo):
        return QuadraticSurrogate(self.center, self.radius, self.local_coeffs, float(loo))

    def to_record(self):
        return {
            "center": self.center.tolist(),
            "radius": float(self.radius),
            "coeffs": self.coeffs.tolist(),
            "loo_error": float(self.loo_error),
        }


def sample_ball(center, radius, count, space, rng, max_draws=1_000_000):
    """Uniform points in ``O(center, radius)`` intersected with the design box.

    Rejection sampling against the box; raises :class:`InfeasibleRegionError`
    when the intersection is empty.
    """
    center = np.asarray(center, dtype=float)
    if not radius > 0:
        raise InvalidParameterError(f"radius must be positive, got {radius}")
    if count < 1:
        raise InvalidParameterError(f"count must be >= 1, got {count}")
    d = center.size
    nearest = space.clip(center)
    if np.linalg.norm(nearest - center) > radius:
        raise InfeasibleRegionError(f"ball of radius {radius} around {center.tolist()} misses the design box")
    out = []
    have = 0
    drawn = 0
    while have < count:
        batch = max(2 * (count - have), 16)
        direction = rng.standard_normal((batch, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radius * rng.random(batch) ** (1.0 / d)
        pts = center + direction * r[:, None]
        pts = pts[np.all((pts >= space.lower) & (pts <= space.upper), axis=1)]
        out.append(pts[: count - have])
        have += min(len(pts), count - have)
        drawn += batch
        if have < count and drawn > max_draws:
            raise InfeasibleRegionError(
                f"rejection sampling accepted {have}/{count} points after {drawn} draws; "
                "ball and box barely intersect"
            )
    return np.concatenate(out)[:count]


def _check_poised(phi):
    if np.linalg.matrix_rank(phi) < phi.shape[1]:
        raise PoisednessError(f"design matrix of shape {phi.shape} is rank deficient")


def fit_quadratic(sample):
    """Least-squares quadratic through ``sample``.

    Raises
    ------
    InvalidParameterError
        If fewer points than basis functions are supplied.
    PoisednessError
        If the design matrix is rank deficient.
    """
    m, d = sample.points.shape
    nb = n_basis(d)
    if m < nb:
        raise InvalidParameterError(f"need at least {nb} points for a quadratic in {d} dimensions, got {m}")
    phi = quadratic_basis(sample.local_points())
    _check_poised(phi)
    coef = np.linalg.lstsq(phi, sample.values, rcond=None)[0]
    return QuadraticSurrogate(sample.center.copy(), float(sample.radius), coef)


def loo_error(sample):
    """Maximum leave-one-out prediction error ``max_m |y_m - s^m(x_m)|``."""
    m, d = sample.points.shape
    nb = n_basis(d)
    if m - 1 < nb:
        raise InvalidParameterError(f"leave-one-out fits need at least {nb + 1} points, got {m}")
    phi = quadratic_basis(sample.local_points())
    y = sample.values
    worst = 0.0
    keep = np.ones(m, dtype=bool)
    for k in range(m):
        keep[k] = False
        sub = phi[keep]
        _check_poised(sub)
        coef = np.linalg.lstsq(sub, y[keep], rcond=None)[0]
        worst = max(worst, abs(y[k] - phi[k] @ coef))
        keep[k] = True
    return float(worst)


@dataclass
class SurrogateOutcome:
    """Result of :func:`surr_constr`."""

    surrogate: QuadraticSurrogate
    radius: float
    evaluation: object
    passes: int
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.surrogate, self.radius, self.evaluation))


def reweighted_constraint_values(problem, evaluation, points, counters=None):
    """Log-constraint at each point from one centre evaluation."""
    n = evaluation.n
    out = np.empty(len(points))
    for k, x in enumerate(points):
        w = np.exp(log_weights(problem.dist, evaluation.samples, x, evaluation.center))
        out[k] = log_constraint(float(np.mean(evaluation.indicator * w)), problem.theta, n)
    if counters is not None:
        counters.reweighted_evals += len(points)
    return out


def surr_constr(
    problem,
    x_c,
    rho_max,
    eps_star,
    omega,
    m,
    n_mc,
    rng,
    rho_min_guard=1e-6,
    counters=None,
    evaluation=None,
    values_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    workers=1,
):
    """Certified quadratic surrogate of the log-constraint around ``x_c``.

    One full evaluation is made at ``x_c`` (skipped when ``evaluation`` is
    passed in); constraint values at the ``m - 1`` random ball points and at
    ``x_c`` come from reweighting its samples.  The radius contracts by
    ``omega`` and the ball points are redrawn until the leave-one-out error
    drops below ``eps_star``.

    ``values_fn`` replaces the reweighting route entirely: it receives the
    ``(m, d)`` point matrix and returns constraint values.  No centre
    evaluation is made in that case and ``evaluation`` is returned as ``None``.

    ``rng`` is a mapping with ``"sampling"`` and ``"ball-points"`` generators
    (see :class:`dftr_rbo.rng.SeedStreams`).

    Returns
    -------
    SurrogateOutcome
        Unpacks as ``(surrogate, radius, evaluation)``.

    Raises
    ------
    SurrogateFailureError
        When the radius falls below ``rho_min_guard`` before certification.
    """
    x_c = problem.space.check(x_c)
    d = x_c.size
    if not rho_max > 0:
        raise InvalidParameterError(f"rho_max must be positive, got {rho_max}")
    if not eps_star > 0:
        raise InvalidParameterError(f"eps_star must be positive, got {eps_star}")
    if not 0.0 < omega < 1.0:
        raise InvalidParameterError(f"omega must lie in (0, 1), got {omega}")
    if m <= n_basis(d):
        raise InvalidParameterError(f"m must exceed the basis size {n_basis(d)}, got {m}")

    if values_fn is None and evaluation is None:
        evaluation = full_evaluation(problem, x_c, n_mc, rng["sampling"], counters=counters, workers=workers)

    rho = float(rho_max)
    passes = 0
    last_loo = None
    while True:
        if rho < rho_min_guard:
            raise SurrogateFailureError(
                f"surrogate not certified before radius fell below {rho_min_guard:g} "
                f"(last leave-one-out error {last_loo})",
                radius=rho,
                loo_error=last_loo,
            )
        passes += 1
        for attempt in range(POISEDNESS_RETRIES + 1):
            pts = sample_ball(x_c, rho, m - 1, problem.space, rng["ball-points"])
            pts = np.vstack([pts, x_c])
            if values_fn is None:
                vals = reweighted_constraint_values(problem, evaluation, pts, counters=counters)
            else:
                vals = np.asarray(values_fn(pts), dtype=float)
            sample = DesignSample(pts, vals, x_c, rho)
            try:
                surrogate = fit_quadratic(sample)
                loo = loo_error(sample)
                break
            except PoisednessError:
                if attempt == POISEDNESS_RETRIES:
                    raise
        last_loo = loo
        if loo < eps_star:
            return SurrogateOutcome(surrogate.with_loo_error(loo), rho, evaluation, passes, pts, vals)
        rho *= omega
