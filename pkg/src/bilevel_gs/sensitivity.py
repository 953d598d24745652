"""Solution-mapping Jacobians and hyper-gradients.

At a converged regularized primal-dual point (y, p) for x, the Jacobian of
the mapping x -> (y, p) is

    grad_S = -B (B' A B)^{-1} B' [ mixed ; J_Gx ],

    A = [ H_L   J_G' ]        H_L   = hess_yy g + sum_i p_i hess_yy g_i + beta I
        [ J_G  -alpha I ],    mixed = d/dx (grad_y g + J_G' p)

with B = blockdiag(I_m, B_z) and B_z an orthonormal basis of the critical
cone K_{h*} at the prox point.  The top m rows are the primal sensitivity
grad_Y feeding the hyper-gradient; the remaining s rows are grad_P.

The alpha = beta = 0 assembly (`jacobian_actual_limit`) reproduces the
Jacobian of the unregularized solution mapping when it exists and is a
diagnostic only: it is expected to fail with IllConditionedError when the
underlying well-posedness condition does not hold.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import get_lapack_funcs

from . import poly
from .errors import IllConditionedError
from .lower import solve_regularized


@dataclass
class SensitivityConfig:
    """Tolerances shared by the Jacobian assembly and its diagnostics."""

    cond_limit: float = 1e12
    tol_act: float = poly.DEFAULT_TOL_ACT
    ri_scale: float = 10.0
    fd_step: float = 1e-5


DEFAULT_CONFIG = SensitivityConfig()


@dataclass
class SensitivityResult:
    A: np.ndarray
    B: np.ndarray
    grad_S: np.ndarray
    grad_Y: np.ndarray
    grad_P: np.ndarray
    cond_BAB: float
    ri_flag: bool


@dataclass
class HyperGradient:
    """Composite gradient of x -> f(x, Y_{alpha,beta}(x)) at one point."""

    w: np.ndarray
    f_val: float
    y_used: np.ndarray
    solution: object = None
    sensitivity: SensitivityResult = field(default=None, repr=False)


def _assemble(oracles, sol, alpha_in_A, beta_in_H, config):
    x, y, p = sol.x, sol.y, sol.p
    m, s = oracles.m, oracles.s
    H_L = np.atleast_2d(oracles.g_hess_yy(x, y)) \
        + np.atleast_2d(oracles.G_hess_yy_contract(x, y, p)) \
        + beta_in_H * np.eye(m)
    Jg = np.atleast_2d(oracles.G_jac_y(x, y))
    A = np.zeros((m + s, m + s))
    A[:m, :m] = H_L
    A[:m, m:] = Jg.T
    A[m:, :m] = Jg
    if alpha_in_A:
        A[m:, m:] = -alpha_in_A * np.eye(s)
    Bz = poly.critical_cone_basis(oracles.h, sol.w_prox, active=sol.active).B_z
    k = Bz.shape[1]
    B = np.zeros((m + s, m + k))
    B[:m, :m] = np.eye(m)
    B[m:, m:] = Bz
    BtAB = np.zeros((m + k, m + k))
    BtAB[:m, :m] = H_L
    U = Jg.T @ Bz
    BtAB[:m, m:] = U
    BtAB[m:, :m] = U.T
    if alpha_in_A:
        BtAB[m:, m:] = -alpha_in_A * np.eye(k)
    rhs = np.vstack([
        np.atleast_2d(oracles.g_mixed_xy(x, y))
        + np.atleast_2d(oracles.G_mixed_contract(x, y, p)),
        np.atleast_2d(oracles.G_jac_x(x, y)),
    ])
    Bt_rhs = np.vstack([rhs[:m], Bz.T @ rhs[m:]])
    return A, B, Bz, BtAB, Bt_rhs, rhs


def _solve_reduced(BtAB, Bt_rhs, config):
    """Symmetric-indefinite solve with a 1-norm condition estimate."""
    lu, piv = scipy.linalg.lu_factor(BtAB)
    gecon = get_lapack_funcs("gecon", (BtAB,))
    anorm = np.linalg.norm(BtAB, 1)
    rcond, _ = gecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / float(rcond)
    if not np.isfinite(cond) or cond > config.cond_limit:
        raise IllConditionedError(
            f"reduced sensitivity system has condition estimate {cond:.3e} "
            f"beyond limit {config.cond_limit:.1e}", cond=cond)
    X = scipy.linalg.lu_solve((lu, piv), Bt_rhs)
    return X, cond


def _ri_flag(oracles, sol, config):
    """Active sets stable when the tolerance moves an order of magnitude."""
    try:
        lo = poly.active_sets(oracles.h, sol.w_prox,
                              sol.active.tol_act / config.ri_scale)
        hi = poly.active_sets(oracles.h, sol.w_prox,
                              sol.active.tol_act * config.ri_scale)
    except Exception:
        return False
    return (np.array_equal(lo.I_active, hi.I_active)
            and np.array_equal(lo.J_active, hi.J_active))


def jacobian(oracles, sol, config=DEFAULT_CONFIG):
    """Jacobian of the regularized primal-dual solution mapping at sol.x."""
    if sol.alpha <= 0 or sol.beta <= 0:
        raise ValueError("jacobian needs a solution with alpha, beta > 0")
    A, B, Bz, BtAB, Bt_rhs, _ = _assemble(oracles, sol, sol.alpha, sol.beta, config)
    X, cond = _solve_reduced(BtAB, Bt_rhs, config)
    m = oracles.m
    grad_Y = -X[:m]
    grad_P = -(Bz @ X[m:])
    grad_S = np.vstack([grad_Y, grad_P])
    return SensitivityResult(A=A, B=B, grad_S=grad_S, grad_Y=grad_Y,
                             grad_P=grad_P, cond_BAB=cond,
                             ri_flag=_ri_flag(oracles, sol, config))


def jacobian_actual_limit(oracles, sol, config=DEFAULT_CONFIG):
    """Diagnostic alpha = beta = 0 assembly at a small-regularization point.

    May legitimately raise IllConditionedError; that is the degeneracy
    signal for the unregularized mapping.
    """
    A, B, Bz, BtAB, Bt_rhs, _ = _assemble(oracles, sol, 0.0, 0.0, config)
    X, cond = _solve_reduced(BtAB, Bt_rhs, config)
    m = oracles.m
    grad_Y = -X[:m]
    grad_P = -(Bz @ X[m:])
    return SensitivityResult(A=A, B=B, grad_S=np.vstack([grad_Y, grad_P]),
                             grad_Y=grad_Y, grad_P=grad_P, cond_BAB=cond,
                             ri_flag=_ri_flag(oracles, sol, config))


def hyper_gradient(problem, x, alpha, beta, tol_ll=None, y0=None,
                   config=DEFAULT_CONFIG):
    """Gradient of the regularized hyper-objective via the chain rule:
    w = grad_x f + grad_Y' grad_y f at y = Y_{alpha,beta}(x)."""
    sol = solve_regularized(problem.lower, x, alpha, beta, tol_ll=tol_ll, y0=y0)
    sres = jacobian(problem.lower, sol, config)
    xv = sol.x
    w = problem.f_grad_x(xv, sol.y) + sres.grad_Y.T @ problem.f_grad_y(xv, sol.y)
    return HyperGradient(w=w, f_val=float(problem.f_val(xv, sol.y)),
                         y_used=sol.y, solution=sol, sensitivity=sres)
