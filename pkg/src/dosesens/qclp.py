"""Minimize a linear function over plane ∩ weighted-ball ∩ box.

The continuous subproblems of the weak-null search all have the form

    minimize    c @ x
    subject to  sum(x) = total
                sum(a_i * (x_i - center_i)^2) <= budget      (a_i > 0)
                l_i <= x_i <= u_i,

a convex program with one linear equality, one convex quadratic ball and
coordinate bounds.  Strategy:

1. feasibility screens (box vs plane, then the projection of the plane-box
   set onto the ball);
2. a closed-form KKT candidate ignoring the box (two multipliers solved
   exactly); if it lands inside the box it is optimal;
3. otherwise a one-dimensional dual search on the ball multiplier nu, with
   the plane multiplier lambda resolved by a nested root-find; the
   coordinate minimizers are clip(center - (c + lambda)/(2 nu a), l, u).

A final polish redistributes the tiny equality residual of the nested
root-find across the coordinates with the smallest reduced costs, which
leaves the objective unchanged to first order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import SolverError

_NU_GUARD = 1e50
_BRENTQ_KW = dict(maxiter=256, xtol=1e-300, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class QclpResult:
    status: str  # "optimal" or "infeasible"
    value: float
    x: np.ndarray | None


_INFEASIBLE = QclpResult(status="infeasible", value=math.inf, x=None)


def _clip_point(center, c, a, nu, lam, l, u):
    return np.clip(center - (c + lam) / (2.0 * nu * a), l, u)


def _solve_plane(center, c, a, nu, l, u, total):
    """Find lambda with sum(x(nu, lambda)) = total; returns (x, lambda)."""
    lam_all_hi = float(np.min(-c - 2.0 * nu * a * (u - center))) - 1.0
    lam_all_lo = float(np.max(-c - 2.0 * nu * a * (l - center))) + 1.0

    def residual(lam):
        return float(np.sum(_clip_point(center, c, a, nu, lam, l, u)) - total)

    # residual is nonincreasing in lambda: >= 0 at lam_all_hi (x = u),
    # <= 0 at lam_all_lo (x = l); guard the no-sign-change edge cases where
    # the plane touches a box corner to rounding precision
    if residual(lam_all_hi) <= 0.0:
        return u.copy(), lam_all_hi
    if residual(lam_all_lo) >= 0.0:
        return l.copy(), lam_all_lo
    lam = optimize.brentq(residual, lam_all_hi, lam_all_lo, **_BRENTQ_KW)
    x = _clip_point(center, c, a, nu, lam, l, u)
    return x, lam


def _polish_equality(x, c, lam, l, u, total):
    """Absorb the residual of sum(x) = total along near-zero reduced costs."""
    x = x.copy()
    residual = total - float(np.sum(x))
    if residual == 0.0:
        return x
    for i in np.argsort(np.abs(c + lam)):
        room = (u[i] - x[i]) if residual > 0 else (x[i] - l[i])
        step = math.copysign(min(abs(residual), room), residual)
        x[i] += step
        residual -= step
        if abs(residual) <= 1e-15 * max(1.0, abs(total)):
            break
    return x


def project_plane_box(center, a, l, u, total):
    """Minimize sum(a*(x-center)^2) on the plane-box set; (x, value)."""
    theta_all_u = float(np.min(2.0 * a * (center - u))) - 1.0
    theta_all_l = float(np.max(2.0 * a * (center - l))) + 1.0

    def residual(theta):
        return float(np.sum(np.clip(center - theta / (2.0 * a), l, u)) - total)

    if residual(theta_all_u) <= 0.0:
        x = u.copy()
    elif residual(theta_all_l) >= 0.0:
        x = l.copy()
    else:
        theta = optimize.brentq(residual, theta_all_u, theta_all_l, **_BRENTQ_KW)
        x = np.clip(center - theta / (2.0 * a), l, u)
        x = _polish_equality(x, np.zeros_like(x), 0.0, l, u, total)
    return x, float(np.sum(a * (x - center) ** 2))


def minimize_linear(
    c,
    l,
    u,
    a,
    center,
    budget: float,
    total: float,
    feas_tol: float = 1e-9,
) -> QclpResult:
    """Solve the plane-ball-box linear minimization; see module docstring."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    a = np.asarray(a, dtype=float)
    center = np.asarray(center, dtype=float)
    budget = float(budget)
    total = float(total)
    if np.any(a <= 0) or budget < 0:
        raise SolverError("ball weights must be positive and budget nonnegative")
    if np.any(l > u + 1e-15 * np.maximum(1.0, np.abs(u))):
        return _INFEASIBLE

    eq_slack = feas_tol * max(1.0, abs(total))
    if float(np.sum(l)) > total + eq_slack or float(np.sum(u)) < total - eq_slack:
        return _INFEASIBLE

    proj, qmin = project_plane_box(center, a, l, u, total)
    budget_slack = feas_tol * max(1.0, budget)
    if qmin > budget + budget_slack:
        return _INFEASIBLE
    if qmin >= budget - budget_slack:
        # the feasible set is (numerically) the single projection point
        return QclpResult(status="optimal", value=float(c @ proj), x=proj)

    c_spread = float(np.max(c) - np.min(c))
    c_scale = float(np.max(np.abs(c)))
    if c_spread <= 1e-15 * max(1.0, c_scale):
        # objective constant on the plane: c @ x = c_mean * total + spread-noise
        return QclpResult(status="optimal", value=float(c @ proj), x=proj)

    # ---- closed form ignoring the box ------------------------------------
    s0 = total - float(np.sum(center))
    inv_a = 1.0 / a
    A1 = float(np.sum(inv_a))
    Ac = float(np.sum(c * inv_a))
    Acc = float(np.sum(c * c * inv_a))
    var_c = max(Acc - Ac * Ac / A1, 0.0)
    ball_slack = budget - s0 * s0 / A1
    if ball_slack > 0.0 and var_c > 0.0:
        nu = math.sqrt(var_c / (4.0 * ball_slack))
        lam = (-2.0 * nu * s0 - Ac) / A1
        x = center - (c + lam) / (2.0 * nu * a)
        if np.all(x >= l) and np.all(x <= u):
            return QclpResult(status="optimal", value=float(c @ x), x=x)

    # ---- dual search on the ball multiplier ------------------------------
    radius = math.sqrt(budget / float(np.min(a))) if budget > 0 else 0.0
    obj_scale = max(c_scale * max(radius, 1.0), 1.0)
    nu_floor = 1e-12 * obj_scale / max(budget, 1e-300)

    def quad_at(nu):
        x, lam = _solve_plane(center, c, a, nu, l, u, total)
        x = _polish_equality(x, c, lam, l, u, total)
        return x, float(np.sum(a * (x - center) ** 2))

    x_lo, q_lo = quad_at(nu_floor)
    if q_lo <= budget + budget_slack:
        return QclpResult(status="optimal", value=float(c @ x_lo), x=x_lo)

    nu_lo, nu_hi = nu_floor, nu_floor
    for _ in range(220):
        nu_lo = nu_hi
        nu_hi *= 8.0
        _, q_hi = quad_at(nu_hi)
        if q_hi <= budget:
            break
        if nu_hi > _NU_GUARD:
            # quad(x(nu)) -> qmin <= budget as nu -> inf; numerically stuck
            return QclpResult(status="optimal", value=float(c @ proj), x=proj)
    else:
        return QclpResult(status="optimal", value=float(c @ proj), x=proj)

    nu_root = optimize.brentq(
        lambda nu: quad_at(nu)[1] - budget, nu_lo, nu_hi, **_BRENTQ_KW
    )
    x, quad = quad_at(nu_root)
    if quad > budget + budget_slack:
        # step to the feasible side of the bracket
        for _ in range(60):
            nu_root = 0.5 * (nu_root + nu_hi)
            x, quad = quad_at(nu_root)
            if quad <= budget + budget_slack:
                break
        else:
            raise SolverError("dual search failed to recover a feasible point")
    return QclpResult(status="optimal", value=float(c @ x), x=x)
