"""Built-in problems: the cantilever beam benchmark and small verification problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .stochastic import AffineMap, CostFunction, DesignSpace, GaussianFamily, LimitState, RboProblem

# z = (E, X, Y, W, T)
Z_NAMES = ("E", "X", "Y", "W", "T")
DEFAULT_BOX = ((1.0, 1.0), (4.0, 4.0))
DEFAULT_X0 = (2.5, 2.5)


@dataclass(frozen=True)
class CantileverConfig:
    length: float = 100.0
    d_o: float = 6.0
    e_mean: float = 29e6
    e_sd: float = 1.45e6
    load_mean: float = 500.0
    load_sd: float = 25.0
    sigma_wt: float = 0.1
    theta: float = 0.1

    def __post_init__(self):
        for name in ("length", "d_o", "e_mean", "e_sd", "load_mean", "load_sd", "sigma_wt"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.theta < 1:
            raise InvalidParameterError(f"theta must lie in (0, 1), got {self.theta}")


@dataclass(frozen=True)
class CantileverLimitState:
    """``g = D_o - 4 L^3 / (E W T) * sqrt((Y / T^2)^2 + (X / W^2)^2)``; rows are ``(E, X, Y, W, T)``."""

    length: float = 100.0
    d_o: float = 6.0

    def deflection(self, z):
        z = np.atleast_2d(z)
        e, x, y, w, t = z.T
        return 4.0 * self.length**3 / (e * w * t) * np.sqrt((y / t**2) ** 2 + (x / w**2) ** 2)

    def __call__(self, z):
        return self.d_o - self.deflection(z)


def _area(x):
    return float(x[0] * x[1])


def _area_grad(x):
    return np.array([x[1], x[0]])


def cantilever_problem(cfg=None, box=DEFAULT_BOX):
    """Cantilever beam RBO: minimize ``w * t`` with ``P(deflection > D_o) <= theta``.

    Design ``(w, t)`` sets the means of the width and height; ``E``, ``X``,
    ``Y`` keep fixed Gaussian laws.
    """
    cfg = cfg or CantileverConfig()
    mean0 = np.array([cfg.e_mean, cfg.load_mean, cfg.load_mean, 0.0, 0.0])
    sigma = np.array([cfg.e_sd, cfg.load_sd, cfg.load_sd, cfg.sigma_wt, cfg.sigma_wt])
    dist = GaussianFamily(AffineMap.selecting(mean0, (3, 4)), sigma)
    return RboProblem(
        space=DesignSpace(box[0], box[1]),
        cost=CostFunction(_area, _area_grad),
        dist=dist,
        limit=LimitState(CantileverLimitState(cfg.length, cfg.d_o)),
        theta=cfg.theta,
        name="cantilever",
    )


@dataclass(frozen=True)
class ShiftedThreshold:
    """``g(z) = z_0 - a``: failure when a unit-variance coordinate falls below ``a``."""

    a: float = 0.0

    def __call__(self, z):
        return np.atleast_2d(z)[:, 0] - self.a


def _sum_sq(x):
    return float(np.sum((np.asarray(x) - 1.0) ** 2))


def _sum_sq_grad(x):
    return 2.0 * (np.asarray(x) - 1.0)


def gaussian_tail_problem(a=-1.2816, theta=0.1, dim=1, box=(-5.0, 5.0)):
    """``z ~ N(x_0, 1)``, failure ``z < a``, cost ``sum (x_i - 1)^2``.

    ``P(x) = Phi(a - x_0)`` is known in closed form, which makes this family
    useful for estimator and driver checks.
    """
    dist = GaussianFamily(AffineMap.selecting([0.0], (0,), dim=dim), [1.0])
    return RboProblem(
        space=DesignSpace(np.full(dim, box[0]), np.full(dim, box[1])),
        cost=CostFunction(_sum_sq, _sum_sq_grad),
        dist=dist,
        limit=LimitState(ShiftedThreshold(a)),
        theta=theta,
        name="gaussian-tail",
    )


REGISTRY = {
    "cantilever": cantilever_problem,
    "gaussian-tail": gaussian_tail_problem,
}
