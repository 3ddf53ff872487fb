"""Problem data for reliability-based optimization.

A problem couples a deterministic cost ``f(x)`` over a box-shaped design
space with a design-dependent uncertainty model ``q(z; x)`` and a limit
state ``g(z)`` that does not depend on the design.  Failure is the event
``g(z) < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, runtime_checkable

import numpy as np

from .errors import DomainError, InvalidParameterError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class DesignSpace:
    """Box ``lower <= x <= upper``; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise InvalidParameterError("lower and upper must be 1-D arrays of equal, positive length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise InvalidParameterError("bounds must not be NaN")
        if not np.all(lower < upper):
            raise InvalidParameterError("lower[i] < upper[i] must hold for every coordinate")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x):
        return np.minimum(np.maximum(x, self.lower), self.upper)

    def check(self, x):
        """Return ``x`` as a float array or raise :class:`DomainError`."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DomainError(f"design vector has shape {x.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"design vector {x.tolist()} is not finite")
        if not self.contains(x):
            raise DomainError(
                f"design vector {x.tolist()} outside bounds "
                f"[{self.lower.tolist()}, {self.upper.tolist()}]"
            )
        return x


def central_difference(func, x, step_scale=1e-6):
    """Central-difference gradient with step ``step_scale * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step_scale * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (func(x + e) - func(x - e)) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class CostFunction:
    """Deterministic cost with an optional analytic gradient."""

    func: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def eval(self, x):
        return float(self.func(np.asarray(x, dtype=float)))

    def eval_gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(x), dtype=float)
        return central_difference(self.eval, x)


@runtime_checkable
class ParametricDistribution(Protocol):
    """Design-dependent density ``q(z; x)``.

    ``log_density`` and ``score`` accept a single ``z`` of shape ``(z_dim,)``
    or a batch of shape ``(n, z_dim)``.
    """

    z_dim: int

    def sample(self, x, n, rng) -> np.ndarray: ...

    def log_density(self, z, x) -> np.ndarray: ...

    def score(self, z, x) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> offset + matrix @ x``."""

    offset: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        offset = np.atleast_1d(np.asarray(self.offset, dtype=float)).copy()
        matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float)).copy()
        if matrix.shape[0] != offset.size:
            raise InvalidParameterError("matrix rows must match the offset length")
        offset.setflags(write=False)
        matrix.setflags(write=False)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def selecting(cls, offset, positions, dim=None):
        """Map design coordinate ``j`` onto z-coordinate ``positions[j]``; others stay at ``offset``."""
        offset = np.asarray(offset, dtype=float)
        dim = len(positions) if dim is None else dim
        matrix = np.zeros((offset.size, dim))
        for j, i in enumerate(positions):
            matrix[i, j] = 1.0
        return cls(offset, matrix)

    def __call__(self, x):
        return self.offset + self.matrix @ np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class GaussianFamily:
    """Independent Gaussians with design-dependent means ``mean_map(x)`` and fixed ``sigma``."""

    mean_map: AffineMap
    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float)).copy()
        if sigma.shape != self.mean_map.offset.shape:
            raise InvalidParameterError("sigma must have one entry per z-coordinate")
        if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
            raise InvalidParameterError(f"sigma entries must be positive and finite, got {sigma.tolist()}")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @property
    def z_dim(self):
        return self.sigma.size

    @property
    def dim(self):
        return self.mean_map.matrix.shape[1]

    def mean(self, x):
        return self.mean_map(x)

    def sample(self, x, n, rng):
        return self.from_standard(x, self.standard_draws(n, rng))

    # location-scale split of sample(): common-random-number passes draw once
    def standard_draws(self, n, rng):
        return rng.standard_normal((int(n), self.z_dim))

    def from_standard(self, x, u):
        return self.mean(x) + self.sigma * u

    def log_density(self, z, x):
        u = (np.asarray(z, dtype=float) - self.mean(x)) / self.sigma
        return -0.5 * np.sum(u * u, axis=-1) - np.sum(np.log(self.sigma)) - 0.5 * self.z_dim * LOG_2PI

    def score(self, z, x):
        # d/dx log q = A^T (z - mu) / sigma^2
        r = (np.asarray(z, dtype=float) - self.mean(x)) / self.sigma**2
        return r @ self.mean_map.matrix

    def log_ratio(self, z, x, x_ref):
        """``log q(z; x) - log q(z; x_ref)`` computed from the moving coordinates only."""
        z = np.asarray(z, dtype=float)
        mu, mu_ref = self.mean(x), self.mean(x_ref)
        moved = mu != mu_ref
        if not np.any(moved):
            return np.zeros(z.shape[:-1])
        s = self.sigma[moved]
        u = (z[..., moved] - mu[moved]) / s
        u_ref = (z[..., moved] - mu_ref[moved]) / s
        return -0.5 * np.sum(u * u - u_ref * u_ref, axis=-1)


def make_gaussian_family(mean_map, sigma):
    """Build an independent-Gaussian :class:`GaussianFamily`.

    Parameters
    ----------
    mean_map : AffineMap or (offset, matrix) tuple
        Design-to-mean map.
    sigma : array_like
        Standard deviations, one per z-coordinate; all must be positive.
    """
    if not isinstance(mean_map, AffineMap):
        offset, matrix = mean_map
        mean_map = AffineMap(offset, matrix)
    return GaussianFamily(mean_map, sigma)


@dataclass(frozen=True)
class LimitState:
    """Limit state ``g(z)``; failure is ``g(z) < 0``.

    With ``vectorized=True`` the callable maps an ``(n, z_dim)`` array to
    ``n`` values, otherwise it is applied row by row.
    """

    func: Callable[[np.ndarray], object]
    vectorized: bool = True

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            return float(np.asarray(self.func(z[None, :] if self.vectorized else z)).reshape(-1)[0])
        if self.vectorized:
            return np.asarray(self.func(z), dtype=float).reshape(z.shape[0])
        return np.array([float(self.func(row)) for row in z])


@dataclass(frozen=True, eq=False)
class RboProblem:
    """``min f(x) over the design box s.t. ln P(x) - ln theta <= 0``."""

    space: DesignSpace
    cost: CostFunction
    dist: ParametricDistribution
    limit: LimitState
    theta: float
    name: str = field(default="")

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise InvalidParameterError(f"theta must lie in (0, 1), got {self.theta}")


def cost_eval(problem, x):
    """``f(x)``; raises :class:`DomainError` outside the design box."""
    return problem.cost.eval(problem.space.check(x))
