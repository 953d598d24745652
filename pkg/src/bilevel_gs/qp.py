"""Dense small-scale convex QP solver and minimum-norm-point machinery.

The solver handles

    minimize    0.5 x'Px + q'x
    subject to  G_in x <= h_in,   A_eq x = b_eq

with P symmetric positive semidefinite, via a Mehrotra predictor-corrector
interior-point method on the dense KKT system.  It is the workhorse behind
generic proximal subproblems, the sampled SQP direction problem, and the
multiplier-representation solves.  Everything is deterministic: no
randomization, fixed pivot rules through LAPACK.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


_DEF_TOL = 1e-8
_DEF_MAX_ITER = 200


@dataclass
class DenseQP:
    """Data of a dense convex QP.  Empty blocks may be None."""

    P: np.ndarray
    q: np.ndarray
    G_in: np.ndarray = None
    h_in: np.ndarray = None
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {self.P.shape}")
        sym_err = np.max(np.abs(self.P - self.P.T)) if n else 0.0
        if sym_err > 1e-12 * max(1.0, np.max(np.abs(self.P))):
            raise ValueError(f"P is not symmetric (max asymmetry {sym_err:.2e})")
        if self.G_in is None or np.size(self.G_in) == 0:
            self.G_in = np.zeros((0, n))
            self.h_in = np.zeros(0)
        else:
            self.G_in = np.atleast_2d(np.asarray(self.G_in, dtype=float))
            self.h_in = np.asarray(self.h_in, dtype=float).ravel()
        if self.A_eq is None or np.size(self.A_eq) == 0:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.G_in.shape[1] != n or self.G_in.shape[0] != self.h_in.size:
            raise ValueError("inequality block dimensions inconsistent")
        if self.A_eq.shape[1] != n or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("equality block dimensions inconsistent")

    @property
    def n(self):
        return self.q.size


@dataclass
class QPSolution:
    primal: np.ndarray
    dual_ineq: np.ndarray
    dual_eq: np.ndarray
    kkt_residual: float
    status: str  # "optimal" | "infeasible" | "max_iter"
    iterations: int = 0
    obj: float = field(default=np.nan)


def _kkt_residual(qp, x, z, y, s):
    """Scaled max KKT residual (stationarity, feasibility, complementarity)."""
    rd = qp.P @ x + qp.q + qp.G_in.T @ z + qp.A_eq.T @ y
    dd = 1.0 + np.max(np.abs(qp.q)) if qp.q.size else 1.0
    res = np.max(np.abs(rd)) / dd if rd.size else 0.0
    dp = 1.0
    if qp.h_in.size:
        dp = max(dp, np.max(np.abs(qp.h_in)))
    if qp.b_eq.size:
        dp = max(dp, np.max(np.abs(qp.b_eq)))
    if qp.A_eq.shape[0]:
        res = max(res, np.max(np.abs(qp.A_eq @ x - qp.b_eq)) / dp)
    if qp.G_in.shape[0]:
        res = max(res, np.max(np.abs(qp.G_in @ x + s - qp.h_in)) / dp)
        obj_scale = 1.0 + abs(0.5 * x @ (qp.P @ x) + qp.q @ x)
        res = max(res, float(s @ z) / max(1, s.size) / obj_scale)
    return float(res)


def _solve_unconstrained(qp, tol):
    x, *_ = np.linalg.lstsq(qp.P, -qp.q, rcond=None)
    res = np.max(np.abs(qp.P @ x + qp.q)) / (1.0 + np.max(np.abs(qp.q), initial=0.0))
    status = "optimal" if res <= max(tol, 1e-10) else "max_iter"
    return QPSolution(x, np.zeros(0), np.zeros(0), float(res), status, 0,
                      obj=float(0.5 * x @ (qp.P @ x) + qp.q @ x))


def _solve_equality(qp, tol):
    n, me = qp.n, qp.A_eq.shape[0]
    K = np.zeros((n + me, n + me))
    K[:n, :n] = qp.P
    K[:n, n:] = qp.A_eq.T
    K[n:, :n] = qp.A_eq
    rhs = np.concatenate([-qp.q, qp.b_eq])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x, y = sol[:n], sol[n:]
    res = _kkt_residual(qp, x, np.zeros(0), y, np.zeros(0))
    feas = np.max(np.abs(qp.A_eq @ x - qp.b_eq)) / (1.0 + np.max(np.abs(qp.b_eq), initial=0.0))
    if feas > 1e-6:
        return QPSolution(x, np.zeros(0), y, res, "infeasible", 0)
    status = "optimal" if res <= max(tol, 1e-9) else "max_iter"
    return QPSolution(x, np.zeros(0), y, res, status, 0,
                      obj=float(0.5 * x @ (qp.P @ x) + qp.q @ x))


def solve_qp(problem, tol=_DEF_TOL, max_iter=_DEF_MAX_ITER, x0=None):
    """Solve a dense convex QP with certified KKT residual.

    Returns a QPSolution whose ``status`` is "optimal" only when the scaled
    stationarity, feasibility, and complementarity residuals are all below
    ``tol``.  Detected primal infeasibility yields status "infeasible";
    hitting the iteration cap yields "max_iter" with the best iterate found.
    """
    qp = problem
    n, mi, me = qp.n, qp.G_in.shape[0], qp.A_eq.shape[0]
    if mi == 0 and me == 0:
        return _solve_unconstrained(qp, tol)
    if mi == 0:
        return _solve_equality(qp, tol)

    G, h, A, b = qp.G_in, qp.h_in, qp.A_eq, qp.b_eq
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    y = np.zeros(me)
    e = h - G @ x
    shift = max(0.0, -float(np.min(e))) + 1.0
    s = e + shift
    z = np.ones(mi)

    delta = 1e-11 * max(1.0, np.max(np.abs(qp.P)), np.max(np.abs(G)))
    dual_scale0 = 1.0 + np.max(np.abs(qp.q))
    best = None
    status = "max_iter"
    it = 0

    for it in range(1, max_iter + 1):
        rd = qp.P @ x + qp.q + G.T @ z + A.T @ y
        rp = A @ x - b if me else np.zeros(0)
        rc = G @ x + s - h
        mu = float(s @ z) / mi
        res = _kkt_residual(qp, x, z, y, s)
        if best is None or res < best[0]:
            best = (res, x.copy(), z.copy(), y.copy(), s.copy())
        if res <= tol:
            status = "optimal"
            break
        # divergence heuristic: exploding duals with stuck primal feasibility
        if max(np.max(np.abs(z)), np.max(np.abs(y), initial=0.0)) > 1e10 * dual_scale0:
            prim_res = np.max(np.abs(np.minimum(h - G @ x, 0.0)))
            if me:
                prim_res = max(prim_res, np.max(np.abs(A @ x - b)))
            if prim_res > 1e2 * tol:
                status = "infeasible"
                break

        scale_P = max(1.0, float(np.max(np.abs(qp.P))) if n else 1.0)
        with np.errstate(all="ignore"):
            D = np.minimum(z / s, 1e14 * scale_P)
        M = qp.P + (G.T * D) @ G
        if me:
            K = np.zeros((n + me, n + me))
            K[:n, :n] = M
            K[:n, n:] = A.T
            K[n:, :n] = A
        else:
            K = M
        lu = piv = None
        bump = delta * max(1.0, float(np.max(np.abs(np.diag(M)))) / scale_P)
        for _ in range(5):
            K_try = K.copy()
            K_try[np.diag_indices(n)] += bump
            if me:
                K_try[range(n, n + me), range(n, n + me)] -= bump
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    lu_try, piv_try = scipy.linalg.lu_factor(K_try)
                except (ValueError, np.linalg.LinAlgError):
                    lu_try = np.array([np.nan])
            if np.all(np.isfinite(lu_try)):
                lu, piv, K = lu_try, piv_try, K_try
                break
            bump *= 1e4
        if lu is None:
            break

        def newton(rhs4):
            with np.errstate(all="ignore"):
                rhs_x = -rd - G.T @ (rhs4 / s + D * rc)
                rhs = np.concatenate([rhs_x, -rp]) if me else rhs_x
                if not np.all(np.isfinite(rhs)):
                    return None
                sol = scipy.linalg.lu_solve((lu, piv), rhs)
                corr = rhs - K @ sol
                if np.all(np.isfinite(corr)):
                    sol = sol + scipy.linalg.lu_solve((lu, piv), corr)
                dx = sol[:n]
                dy = sol[n:] if me else np.zeros(0)
                ds = -rc - G @ dx
                dz = rhs4 / s - D * ds
            if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)):
                return None
            return dx, dy, ds, dz

        # predictor
        step = newton(-(s * z))
        if step is None:
            break
        dx, dy, ds, dz = step
        a_p = _max_step(s, ds)
        a_d = _max_step(z, dz)
        mu_aff = float((s + a_p * ds) @ (z + a_d * dz)) / mi
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0
        # corrector
        step = newton(-(s * z) + sigma * mu - ds * dz)
        if step is None:
            break
        dx, dy, ds, dz = step
        a_p = min(1.0, 0.99 * _max_step(s, ds))
        a_d = min(1.0, 0.99 * _max_step(z, dz))
        if max(a_p, a_d) < 1e-13:
            break
        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        z = z + a_d * dz

    if status == "max_iter" and best is not None:
        res, x, z, y, s = best
        if res <= tol:
            status = "optimal"
    res = _kkt_residual(qp, x, z, y, s)
    obj = float(0.5 * x @ (qp.P @ x) + qp.q @ x)
    return QPSolution(x, z, y, res, status, it, obj=obj)


def _max_step(v, dv):
    """Largest step in [0, 1e10] keeping v + a*dv >= 0."""
    neg = dv < 0
    if not np.any(neg):
        return 1e10
    return float(np.min(-v[neg] / dv[neg]))


def min_norm_point(points, tol=None, max_major=None):
    """Minimum-norm element of the convex hull of ``points``.

    Wolfe's minimum-norm-point scheme on the Gram matrix; ties in vertex
    selection are broken by lowest index.  Returns ``(w, weights)`` with
    ``w = sum_i weights_i * points_i`` and weights on the unit simplex, with
    the Wolfe criterion <w, p_i> >= |w|^2 - tol certified for all i.
    """
    V = np.atleast_2d(np.asarray(points, dtype=float))
    k = V.shape[0]
    if k == 0:
        raise ValueError("min_norm_point needs at least one point")
    Q = V @ V.T
    if tol is None:
        tol = 1e-10 * (1.0 + float(np.max(np.diag(Q))))
    if max_major is None:
        max_major = 10 * k + 50

    S = [int(np.argmin(np.diag(Q)))]
    lam = np.array([1.0])

    for _ in range(max_major):
        w = lam @ V[S]
        dots = V @ w
        wn2 = float(w @ w)
        j = int(np.argmin(dots))
        if dots[j] >= wn2 - tol or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        # minor cycle: restrict to the affine minimizer over S, dropping
        # vertices until the affine solution is feasible for the simplex
        for _ in range(2 * k + 10):
            mu = _affine_min_norm(Q, S)
            if np.all(mu >= -1e-14):
                lam = np.maximum(mu, 0.0)
                lam /= lam.sum()
                break
            diff = lam - mu
            mask = diff > 1e-15
            theta = float(np.min(lam[mask] / diff[mask]))
            theta = min(max(theta, 0.0), 1.0)
            lam = (1 - theta) * lam + theta * mu
            keep = lam > 1e-14
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            S = [S[i] for i in range(len(S)) if keep[i]]
            lam = lam[keep]
            lam /= lam.sum()

    w = lam @ V[S]
    weights = np.zeros(k)
    for i, idx in enumerate(S):
        weights[idx] += lam[i]
    return w, weights


def _affine_min_norm(Q, S):
    """Weights minimizing |sum mu_i p_i| over sum mu_i = 1 (signs free)."""
    ns = len(S)
    K = np.zeros((ns + 1, ns + 1))
    K[:ns, :ns] = Q[np.ix_(S, S)]
    K[:ns, ns] = 1.0
    K[ns, :ns] = 1.0
    rhs = np.zeros(ns + 1)
    rhs[ns] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:ns]
