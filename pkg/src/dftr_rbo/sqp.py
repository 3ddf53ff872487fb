"""Dense SQP for small smooth inequality-constrained problems.

Solves ``min f(x)`` subject to ``c(x) <= 0`` and ``lower <= x <= upper``
using a damped-BFGS approximation of the Lagrangian Hessian, an l1 exact
penalty merit function with Armijo backtracking and a second-order
correction, and an elastic QP subproblem solved by a primal active-set
method.  Box constraints are linear and are kept satisfied at every iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

_ELASTIC_CURVATURE = 1e-8


class QPNotConverged(RuntimeError):
    pass


def _solve_eqp(G, g, A):
    """Minimize ``0.5 p'Gp + g'p`` s.t. ``A p = 0``; returns ``(p, lam)`` with ``Gp + g + A'lam = 0``."""
    n = G.shape[0]
    k = A.shape[0]
    if k == 0:
        try:
            return np.linalg.solve(G, -g), np.zeros(0)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(G, -g, rcond=None)[0], np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = G
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([-g, np.zeros(k)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(G, c, A, b, x0, max_iter=None, tol=1e-12):
    """Strictly convex QP ``min 0.5 x'Gx + c'x`` s.t. ``A x <= b`` from a feasible ``x0``.

    Primal active-set method.  Returns ``(x, lam)`` with one nonnegative
    multiplier per row of ``A``.
    """
    x = np.array(x0, dtype=float)
    m, n = A.shape
    if max_iter is None:
        max_iter = 10 * (n + m) + 50
    scale = 1.0 + np.abs(b) + np.abs(A) @ np.abs(x)
    slack = b - A @ x
    working = [i for i in range(m) if abs(slack[i]) <= tol * scale[i]]
    # keep the initial working set linearly independent
    if working:
        kept = []
        for i in working:
            trial = A[kept + [i]]
            if np.linalg.matrix_rank(trial) == len(kept) + 1 and len(kept) < n:
                kept.append(i)
        working = kept
    lam = np.zeros(m)
    for _ in range(max_iter):
        grad = G @ x + c
        Aw = A[working] if working else np.zeros((0, n))
        p, lam_w = _solve_eqp(G, grad, Aw)
        if np.linalg.norm(p, np.inf) <= tol * (1.0 + np.linalg.norm(x, np.inf)):
            if not working or lam_w.min() >= -tol * (1.0 + np.abs(lam_w).max()):
                lam = np.zeros(m)
                lam[working] = np.maximum(lam_w, 0.0)
                return x, lam
            working.pop(int(np.argmin(lam_w)))
            continue
        Ap = A @ p
        alpha = 1.0
        blocking = None
        for i in range(m):
            if i in working or Ap[i] <= tol * (1.0 + np.linalg.norm(p) * np.linalg.norm(A[i])):
                continue
            step = max(b[i] - A[i] @ x, 0.0) / Ap[i]
            if step < alpha:
                alpha, blocking = step, i
        x = x + alpha * p
        if blocking is not None:
            working.append(blocking)
    raise QPNotConverged(f"active-set QP did not converge in {max_iter} iterations")


@dataclass
class NlpResult:
    x: np.ndarray
    f: float
    constraints: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    converged: bool
    iterations: int
    status: str
    history: list = field(default_factory=list, repr=False)

    @property
    def max_violation(self):
        return float(max(0.0, self.constraints.max())) if self.constraints.size else 0.0


def kkt_residual(x, g, c, J, lam, lower, upper, bound_tol=1e-12):
    """Max of stationarity (box multipliers eliminated), primal violation and complementarity."""
    r = g + J.T @ lam
    with np.errstate(invalid="ignore"):
        at_lo = np.isfinite(lower) & (x <= lower + bound_tol * (1.0 + np.abs(lower)))
        at_up = np.isfinite(upper) & (x >= upper - bound_tol * (1.0 + np.abs(upper)))
    stat = np.abs(r)
    stat = np.where(at_lo, np.maximum(-r, 0.0), stat)
    stat = np.where(at_up, np.maximum(r, 0.0), stat)
    res = float(stat.max()) if stat.size else 0.0
    if c.size:
        res = max(res, float(np.maximum(c, 0.0).max()), float(np.abs(lam * c).max()))
    return res


def sqp_minimize(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    constraints: Callable[[np.ndarray], tuple],
    x0,
    lower,
    upper,
    kkt_tol=1e-8,
    max_iter=200,
    penalty0=10.0,
    elastic_weight=1e4,
    armijo=1e-4,
    min_step=1e-10,
    step_tol=0.0,
    stop_test: Optional[Callable] = None,
):
    """Minimize ``fun`` subject to ``constraints(x)[0] <= 0`` and box bounds.

    ``constraints(x)`` returns ``(values, jacobian)`` in one call so that
    expensive estimators can share work between the two.

    ``stop_test(x_old, f_old, c_old, x_new, f_new, c_new)`` is called after
    every accepted step; a truthy return value ends the run with status
    ``"stop_test"``.  An accepted step with ``|dx|_inf <= step_tol * (1 + |x|_inf)``
    ends it with status ``"small_step"``.

    Statuses: ``"converged"``, ``"stop_test"``, ``"small_step"``,
    ``"line_search"``, ``"max_iter"``, ``"qp_failure"``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.minimum(np.maximum(np.asarray(x0, dtype=float), lower), upper)
    n = x.size
    f = fun(x)
    g = grad(x)
    c, J = constraints(x)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    J = np.atleast_2d(np.asarray(J, dtype=float)).reshape(c.size, n)
    mc = c.size
    B = np.eye(n)
    mu = penalty0
    lam = np.zeros(mc)
    history = []

    finite_lo = np.flatnonzero(np.isfinite(lower))
    finite_up = np.flatnonzero(np.isfinite(upper))

    def merit(fv, cv):
        return fv + mu * float(np.maximum(cv, 0.0).sum())

    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        # elastic QP in (p, t): c + J p - t <= 0, t >= 0, box on p
        nv = n + 1
        G = np.zeros((nv, nv))
        G[:n, :n] = B
        G[n, n] = _ELASTIC_CURVATURE
        q = np.concatenate([g, [elastic_weight * max(1.0, np.abs(g).max())]])
        rows = [np.hstack([J, -np.ones((mc, 1))])]
        rhs = [-c]
        rows.append(np.eye(1, nv, n) * -1.0)
        rhs.append(np.zeros(1))
        if finite_lo.size:
            rows.append(-np.eye(n, nv)[finite_lo])
            rhs.append(x[finite_lo] - lower[finite_lo])
        if finite_up.size:
            rows.append(np.eye(n, nv)[finite_up])
            rhs.append(upper[finite_up] - x[finite_up])
        A = np.vstack(rows)
        bvec = np.concatenate(rhs)
        start = np.zeros(nv)
        start[n] = max(0.0, float(c.max())) if mc else 0.0
        try:
            sol, qlam = solve_qp(G, q, A, bvec, start)
        except QPNotConverged:
            status = "qp_failure"
            break
        p = sol[:n]
        lam = qlam[:mc]

        res = kkt_residual(x, g, c, J, lam, lower, upper)
        history.append({"x": x.copy(), "f": f, "kkt": res})
        if res <= kkt_tol:
            status = "converged"
            break

        mu = max(mu, 1.5 * float(lam.max()) if mc else mu)
        phi0 = merit(f, c)
        dphi = float(g @ p) - mu * float(np.maximum(c, 0.0).sum())
        dphi = min(dphi, -0.5 * float(p @ B @ p))

        alpha = 1.0
        accepted = False
        x_new = None
        while alpha >= min_step:
            trial = np.minimum(np.maximum(x + alpha * p, lower), upper)
            f_t = fun(trial)
            c_t, J_t = constraints(trial)
            c_t = np.atleast_1d(np.asarray(c_t, dtype=float))
            if np.isfinite(f_t) and merit(f_t, c_t) <= phi0 + armijo * alpha * dphi:
                x_new, f_new, c_new, J_new = trial, f_t, c_t, J_t
                accepted = True
                break
            if alpha == 1.0 and mc:
                # second-order correction on constraints that the QP made active
                act = np.flatnonzero((lam > 0) | (c + J @ p >= -1e-12 * (1.0 + np.abs(c))))
                if act.size:
                    Ja = J[act]
                    try:
                        corr = -Ja.T @ np.linalg.solve(Ja @ Ja.T, c_t[act] - (c[act] + Ja @ p))
                    except np.linalg.LinAlgError:
                        corr = None
                    if corr is not None:
                        trial = np.minimum(np.maximum(x + p + corr, lower), upper)
                        f_s = fun(trial)
                        c_s, J_s = constraints(trial)
                        c_s = np.atleast_1d(np.asarray(c_s, dtype=float))
                        if np.isfinite(f_s) and merit(f_s, c_s) <= phi0 + armijo * dphi:
                            x_new, f_new, c_new, J_new = trial, f_s, c_s, J_s
                            accepted = True
                            break
            alpha *= 0.5
        if not accepted:
            status = "line_search"
            break

        J_new = np.atleast_2d(np.asarray(J_new, dtype=float)).reshape(mc, n)
        g_new = grad(x_new)
        s = x_new - x
        y = (g_new + J_new.T @ lam) - (g + J.T @ lam)
        sBs = float(s @ B @ s)
        if sBs > 0:
            sy = float(s @ y)
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y = theta * y + (1.0 - theta) * (B @ s)
                sy = float(s @ y)
            Bs = B @ s
            if sy > 0:
                B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy

        stop = stop_test is not None and stop_test(x, f, c, x_new, f_new, c_new)
        small = np.abs(s).max() <= step_tol * (1.0 + np.abs(x).max())
        x, f, g, c, J = x_new, f_new, g_new, c_new, J_new
        if stop:
            status = "stop_test"
            break
        if small:
            status = "small_step"
            break

    res = kkt_residual(x, g, c, J, lam, lower, upper)
    return NlpResult(
        x=x,
        f=float(f),
        constraints=c,
        multipliers=lam,
        kkt_residual=res,
        converged=status == "converged" or res <= kkt_tol,
        iterations=it,
        status=status,
        history=history,
    )
