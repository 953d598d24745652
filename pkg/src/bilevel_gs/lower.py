"""Doubly regularized lower-level solves.

For fixed upper variables x and parameters alpha, beta > 0, the lower level

    minimize_y  F(y) = g(x, y) + e_alpha h(G(x, y)) + (beta/2) |y|^2

is smooth and strongly convex.  Its gradient needs one prox evaluation,
grad F(y) = grad_y g + J_G' p + beta y  with  p = (G(x,y) - prox)/alpha,
and on the stable active face the prox is the projection onto the critical
cone of h, so an exact generalized Hessian is available:

    H = hess_yy g + sum_i p_i hess_yy g_i + beta I + J_G' B_z B_z' J_G / alpha.

A damped (semismooth) Newton iteration on F therefore converges in a
handful of steps even at tiny alpha, where first-order methods stall on the
1/alpha conditioning.  The dual is recovered as p = (G(x,y) - w)/alpha.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import poly
from .errors import ConvergenceError
from .poly import DEFAULT_TOL_ACT

MAX_ITER_DEFAULT = 50_000


@dataclass
class LowerLevelOracles:
    """Derivative oracle bundle for one lower-level problem family.

    All callables take (x, y) except the contractions, which also take the
    dual vector p: G_hess_yy_contract(x, y, p) = sum_i p_i hess_yy g_i and
    G_mixed_contract(x, y, p) = d/dx (J_G(x, y)' p), an (m, n) matrix.
    """

    g_val: Callable
    g_grad_y: Callable
    g_hess_yy: Callable
    g_mixed_xy: Callable
    G_val: Callable
    G_jac_y: Callable
    G_jac_x: Callable
    G_hess_yy_contract: Callable
    G_mixed_contract: Callable
    h: object
    n: int
    m: int
    s: int


@dataclass
class PrimalDualSolution:
    """Converged primal-dual point of the regularized lower level at x."""

    y: np.ndarray
    p: np.ndarray
    w_prox: np.ndarray
    active: poly.ActiveSets
    rep: poly.MultiplierRepresentation
    grad_norm: float
    alpha: float
    beta: float
    x: np.ndarray
    iterations: int = 0

    def to_dict(self):
        return {
            "y": self.y.tolist(),
            "p": self.p.tolist(),
            "w_prox": self.w_prox.tolist(),
            "I_active": self.active.I_active.tolist(),
            "J_active": self.active.J_active.tolist(),
            "grad_norm": self.grad_norm,
            "alpha": self.alpha,
            "beta": self.beta,
            "x": self.x.tolist(),
            "iterations": self.iterations,
            "rep_degenerate": bool(self.rep.degenerate),
        }


def solve_regularized(oracles, x, alpha, beta, tol_ll=None, y0=None,
                      max_iter=MAX_ITER_DEFAULT, tol_act=DEFAULT_TOL_ACT):
    """Solve the doubly regularized lower-level problem at x.

    Newton-with-backtracking on the envelope-smoothed objective; terminates
    when |grad F(y)| <= tol_ll (default 1e-9 * (1 + |grad F(y0)|)).  Raises
    ConvergenceError carrying the best iterate when the cap is hit.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    x = np.asarray(x, dtype=float).ravel()
    m = oracles.m
    y = np.zeros(m) if y0 is None else np.array(y0, dtype=float).ravel()
    if y.size != m:
        raise ValueError(f"y0 has dimension {y.size}, expected {m}")
    h = oracles.h

    def envelope_objective(yv):
        z = oracles.G_val(x, yv)
        w, env = poly.prox(h, z, alpha)
        F = float(oracles.g_val(x, yv)) + env + 0.5 * beta * float(yv @ yv)
        return F, z, w

    F, z, w = envelope_objective(y)
    gn0 = None
    newton_cap = min(500, max_iter)
    fallbacks = 0
    it = 0
    grad = None

    for it in range(newton_cap):
        p = (z - w) / alpha
        Jg = np.atleast_2d(oracles.G_jac_y(x, y))
        grad = oracles.g_grad_y(x, y) + Jg.T @ p + beta * y
        gn = float(np.linalg.norm(grad))
        if gn0 is None:
            gn0 = gn
            if tol_ll is None:
                tol_ll = 1e-9 * (1.0 + gn0)
        if gn <= tol_ll:
            break

        H = np.atleast_2d(oracles.g_hess_yy(x, y)) \
            + np.atleast_2d(oracles.G_hess_yy_contract(x, y, p)) \
            + beta * np.eye(m)
        act = poly.active_sets(h, w, tol_act)
        Bz = poly.critical_cone_basis(h, w, active=act).B_z
        if Bz.shape[1]:
            U = Jg.T @ Bz
            H = H + (U @ U.T) / alpha

        d = _solve_spd(H, -grad)
        gd = float(grad @ d)
        if not np.isfinite(gd) or gd >= 0:
            d = -grad
            gd = -gn * gn

        accepted = False
        for direction, slope in ((d, gd), (-grad, -gn * gn)):
            t = 1.0
            while t >= 1e-14:
                y_t = y + t * direction
                F_t, z_t, w_t = envelope_objective(y_t)
                if F_t <= F + 1e-4 * t * slope + 1e-14 * (1 + abs(F)):
                    accepted = True
                    break
                if t == 1.0:
                    # endgame acceptance: gradient contraction without
                    # measurable objective decrease (roundoff regime)
                    g_t = oracles.g_grad_y(x, y_t) \
                        + np.atleast_2d(oracles.G_jac_y(x, y_t)).T @ ((z_t - w_t) / alpha) \
                        + beta * y_t
                    if np.linalg.norm(g_t) <= 0.9 * gn:
                        accepted = True
                        break
                t *= 0.5
            if accepted:
                break
        if not accepted:
            fallbacks += 1
            if fallbacks >= 2:
                break
            continue
        y, F, z, w = y_t, F_t, z_t, w_t

    p = (z - w) / alpha
    Jg = np.atleast_2d(oracles.G_jac_y(x, y))
    grad = oracles.g_grad_y(x, y) + Jg.T @ p + beta * y
    gn = float(np.linalg.norm(grad))
    if tol_ll is None:
        tol_ll = 1e-9 * (1.0 + gn)
    act = poly.active_sets(h, w, tol_act)
    rep = poly.multiplier_representation(h, w, p, active=act)
    sol = PrimalDualSolution(y=y, p=p, w_prox=w, active=act, rep=rep,
                             grad_norm=gn, alpha=float(alpha), beta=float(beta),
                             x=x, iterations=it + 1)
    if gn > tol_ll:
        raise ConvergenceError(
            f"lower-level solve stalled at |grad|={gn:.3e} > tol {tol_ll:.3e}",
            solution=sol, residual=gn)
    return sol


def _solve_spd(H, rhs):
    """Cholesky solve with escalating jitter on numerical indefiniteness."""
    jitter = 0.0
    scale = float(np.max(np.abs(np.diag(H)))) or 1.0
    for _ in range(6):
        try:
            L = np.linalg.cholesky(H + jitter * np.eye(H.shape[0]) if jitter else H)
            d = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            return d
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-12 * scale)
    d, *_ = np.linalg.lstsq(H, rhs, rcond=None)
    return d


def lagrangian_value(oracles, x, y, p, alpha, beta):
    """Regularized Lagrangian g + (beta/2)|y|^2 + <G, p> - h*(p) - (alpha/2)|p|^2.

    Raises InvalidDualError when p lies outside dom h*.
    """
    x = np.asarray(x, float).ravel()
    y = np.asarray(y, float).ravel()
    p = np.asarray(p, float).ravel()
    hstar = poly.require_conjugate_value(oracles.h, p)
    G = oracles.G_val(x, y)
    return (float(oracles.g_val(x, y)) + 0.5 * beta * float(y @ y)
            + float(G @ p) - hstar - 0.5 * alpha * float(p @ p))
