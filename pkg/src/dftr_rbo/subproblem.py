"""Trust-region subproblem: ``min f(x)`` s.t. ``s(x) <= 0``, ``|x - x_k| <= rho``, box.

The problem is solved in local coordinates ``u = (x - x_k) / rho`` so that
the ball is the unit ball whatever the radius.  The ball is imposed as the
smooth constraint ``|u|^2 - 1 <= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSubproblemError, InvalidParameterError
from .sqp import sqp_minimize
from .stochastic import DesignSpace
from .surrogate import sample_ball

TOL_C = 1e-8
TOL_R = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-8
    n_starts: int = 5
    max_sqp_iters: int = 200

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise InvalidParameterError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.n_starts < 1:
            raise InvalidParameterError(f"n_starts must be >= 1, got {self.n_starts}")
        if self.max_sqp_iters < 1:
            raise InvalidParameterError(f"max_sqp_iters must be >= 1, got {self.max_sqp_iters}")


@dataclass(frozen=True, eq=False)
class SubproblemSpec:
    cost: object
    surrogate: object
    center: np.ndarray
    radius: float
    box: DesignSpace

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", center)
        if not self.radius > 0:
            raise InvalidParameterError(f"radius must be positive, got {self.radius}")
        if not self.box.contains(center):
            raise InvalidParameterError(f"center {center.tolist()} outside the design box")


@dataclass(frozen=True, eq=False)
class SubproblemResult:
    x_next: np.ndarray
    f_value: float
    kkt_residual: float
    feasible: bool
    surrogate_value: float
    active_set: dict
    starts_converged: int


def _feasible(spec, x):
    return (
        spec.surrogate(x) <= TOL_C
        and np.linalg.norm(x - spec.center) <= spec.radius * (1.0 + TOL_R)
        and spec.box.contains(x)
    )


def _tidy(spec, x):
    """Pull round-off violations of the ball and box back onto them."""
    x = spec.box.clip(x)
    step = x - spec.center
    dist = np.linalg.norm(step)
    if dist > spec.radius:
        x = spec.box.clip(spec.center + step * (spec.radius / dist))
    return x


class _Scaled:
    """Objective and constraints in local coordinates."""

    def __init__(self, spec, objective):
        self.spec = spec
        self.c = spec.center
        self.r = spec.radius
        self.objective = objective
        g0 = objective.eval_gradient(spec.center)
        # unit change of f across the ball; leave f alone when it is flat at the centre
        spread = self.r * float(np.abs(g0).max())
        self.fscale = 1.0 / spread if spread > 1e-12 else 1.0
        self.lower = (spec.box.lower - self.c) / self.r
        self.upper = (spec.box.upper - self.c) / self.r

    def to_x(self, u):
        return self.c + self.r * u

    def fun(self, u):
        return self.fscale * self.objective.eval(self.to_x(u))

    def grad(self, u):
        return self.fscale * self.r * self.objective.eval_gradient(self.to_x(u))

    def constraints(self, u):
        x = self.to_x(u)
        s = self.spec.surrogate
        vals = np.array([s(x), u @ u - 1.0])
        jac = np.vstack([self.r * s.gradient(x), 2.0 * u])
        return vals, jac


class _SurrogateObjective:
    def __init__(self, surrogate):
        self.s = surrogate

    def eval(self, x):
        return self.s(x)

    def eval_gradient(self, x):
        return self.s.gradient(x)


class _BallOnly(_Scaled):
    def constraints(self, u):
        return np.array([u @ u - 1.0]), (2.0 * u)[None, :]


def _starts(spec, n_starts, rng):
    pts = [spec.center]
    if n_starts > 1:
        pts.extend(sample_ball(spec.center, spec.radius, n_starts - 1, spec.box, rng))
    return pts


def _active(spec, x):
    flags = {
        "surrogate": bool(abs(spec.surrogate(x)) <= 1e-6),
        "ball": bool(abs(np.linalg.norm(x - spec.center) - spec.radius) <= 1e-6 * spec.radius),
    }
    for i in range(spec.center.size):
        flags[f"box_{i}"] = bool(
            abs(x[i] - spec.box.lower[i]) <= 1e-12 * (1 + abs(x[i]))
            or abs(x[i] - spec.box.upper[i]) <= 1e-12 * (1 + abs(x[i]))
        )
    return flags


def _run(scaled, u0, opts):
    res = sqp_minimize(
        scaled.fun,
        scaled.grad,
        scaled.constraints,
        u0,
        scaled.lower,
        scaled.upper,
        kkt_tol=opts.kkt_tol,
        max_iter=opts.max_sqp_iters,
    )
    return _tidy(scaled.spec, scaled.to_x(res.x)), res


def solve_subproblem(spec, opts=None, rng=None):
    """Solve the trust-region subproblem by multi-start SQP.

    Starts are the centre plus ``opts.n_starts - 1`` uniform ball points
    drawn from ``rng``.  The feasible result with least cost wins (ties broken
    lexicographically on ``(f, x)``).  When no start ends feasible, each
    start is re-run minimizing the surrogate over the ball; if the surrogate
    is positive at all of those minimizers :class:`InfeasibleSubproblemError`
    is raised, otherwise the main solve restarts from the feasible points
    found and, failing that, the least-infeasible point comes back with
    ``feasible=False``.
    """
    opts = opts or SolverOptions()
    if rng is None:
        rng = np.random.default_rng(0)
    scaled = _Scaled(spec, spec.cost)
    starts = _starts(spec, opts.n_starts, rng)

    runs = []
    for x0 in starts:
        x, res = _run(scaled, (x0 - spec.center) / spec.radius, opts)
        runs.append((x, res))
    best = _pick(spec, runs, opts)
    if best is not None:
        return best

    phase1 = _BallOnly(spec, _SurrogateObjective(spec.surrogate))
    minimizers = [_run(phase1, (x0 - spec.center) / spec.radius, opts)[0] for x0 in starts]
    s_min = [spec.surrogate(x) for x in minimizers]
    if min(s_min) > TOL_C:
        raise InfeasibleSubproblemError(
            f"surrogate positive throughout the trust region (smallest value found {min(s_min):.6g})",
            min_surrogate=float(min(s_min)),
        )
    for x0, sv in zip(minimizers, s_min):
        if sv <= TOL_C:
            runs.append(_run(scaled, (x0 - spec.center) / spec.radius, opts))
            runs.append((x0, None))
    best = _pick(spec, runs, opts)
    if best is not None:
        return best
    x = min((r[0] for r in runs), key=lambda x: max(spec.surrogate(x), 0.0))
    return SubproblemResult(
        x_next=x,
        f_value=spec.cost.eval(x),
        kkt_residual=float("inf"),
        feasible=False,
        surrogate_value=float(spec.surrogate(x)),
        active_set=_active(spec, x),
        starts_converged=0,
    )


def _pick(spec, runs, opts):
    feasible = [(spec.cost.eval(x), tuple(x), x, res) for x, res in runs if _feasible(spec, x)]
    if not feasible:
        return None
    converged = sum(1 for _, _, _, res in feasible if res is not None and res.kkt_residual <= opts.kkt_tol)
    f, _, x, res = min(feasible, key=lambda t: (t[0], t[1]))
    return SubproblemResult(
        x_next=x,
        f_value=f,
        kkt_residual=float(res.kkt_residual) if res is not None else float("inf"),
        feasible=True,
        surrogate_value=float(spec.surrogate(x)),
        active_set=_active(spec, x),
        starts_converged=converged,
    )
