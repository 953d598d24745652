"""Derivative self-checks and smoothness diagnostics.

Central finite differences validate every analytic oracle a problem supplies,
and the solution-mapping Jacobian is compared against differences of the
lower-level solve itself.  These run in the test suite and behind the CLI
`check` command.
"""

from dataclasses import dataclass, field

import numpy as np

from .sensitivity import DEFAULT_CONFIG, jacobian
from .lower import solve_regularized


def fd_gradient(fun, x, step):
    x = np.asarray(x, float)
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def fd_jacobian(fun, x, step):
    x = np.asarray(x, float)
    cols = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        cols.append((np.asarray(fun(x + e), float) - np.asarray(fun(x - e), float))
                    / (2 * step))
    return np.stack(cols, axis=-1)


def _rel_err(approx, exact):
    scale = 1.0 + np.max(np.abs(exact))
    return float(np.max(np.abs(approx - exact)) / scale)


@dataclass
class CheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def passed(self):
        return all(v <= self.tol for v in self.errors.values())

    def worst(self):
        if not self.errors:
            return None, 0.0
        key = max(self.errors, key=self.errors.get)
        return key, self.errors[key]

    def to_dict(self):
        key, val = self.worst()
        return {"passed": self.passed, "tol": self.tol, "errors": self.errors,
                "worst_component": key, "worst_error": val}


def oracle_self_check(problem, n_points=20, seed=0, tol=1e-6, step=1e-6,
                      x_scale=1.0, y_scale=1.0):
    """Compare all supplied analytic derivatives to central differences at
    random points; max relative error per component."""
    rng = np.random.default_rng(seed)
    o = problem.lower
    errs = {}

    def track(name, err):
        errs[name] = max(errs.get(name, 0.0), err)

    for _ in range(n_points):
        x = x_scale * rng.standard_normal(o.n)
        y = y_scale * rng.standard_normal(o.m)
        p = np.abs(rng.standard_normal(o.s))

        track("g_grad_y", _rel_err(
            fd_gradient(lambda yv: o.g_val(x, yv), y, step), o.g_grad_y(x, y)))
        track("g_hess_yy", _rel_err(
            fd_jacobian(lambda yv: o.g_grad_y(x, yv), y, step),
            np.atleast_2d(o.g_hess_yy(x, y))))
        track("g_mixed_xy", _rel_err(
            fd_jacobian(lambda xv: o.g_grad_y(xv, y), x, step),
            np.atleast_2d(o.g_mixed_xy(x, y))))
        track("G_jac_y", _rel_err(
            fd_jacobian(lambda yv: o.G_val(x, yv), y, step),
            np.atleast_2d(o.G_jac_y(x, y))))
        track("G_jac_x", _rel_err(
            fd_jacobian(lambda xv: o.G_val(xv, y), x, step),
            np.atleast_2d(o.G_jac_x(x, y))))
        track("G_hess_yy_contract", _rel_err(
            fd_jacobian(lambda yv: np.atleast_2d(o.G_jac_y(x, yv)).T @ p, y, step),
            np.atleast_2d(o.G_hess_yy_contract(x, y, p))))
        track("G_mixed_contract", _rel_err(
            fd_jacobian(lambda xv: np.atleast_2d(o.G_jac_y(xv, y)).T @ p, x, step),
            np.atleast_2d(o.G_mixed_contract(x, y, p))))
        track("f_grad_x", _rel_err(
            fd_gradient(lambda xv: problem.f_val(xv, y), x, step),
            problem.f_grad_x(x, y)))
        track("f_grad_y", _rel_err(
            fd_gradient(lambda yv: problem.f_val(x, yv), y, step),
            problem.f_grad_y(x, y)))
        for k, (c_val, c_grad) in enumerate(problem.constraints):
            track(f"c{k}_grad", _rel_err(
                fd_gradient(c_val, x, step), c_grad(x)))
    return CheckReport(errors=errs, tol=tol)


def jacobian_fd_check(problem, x, alpha, beta, tol_ll=1e-11, step=None,
                      config=DEFAULT_CONFIG):
    """Componentwise relative error of grad_S against central differences of
    the lower-level solve over x.  Returns (max_rel_err, result)."""
    x = np.asarray(x, float)
    if step is None:
        step = config.fd_step * (1.0 + float(np.linalg.norm(x)))
    sol = solve_regularized(problem.lower, x, alpha, beta, tol_ll=tol_ll)
    res = jacobian(problem.lower, sol, config)

    def stacked(xv):
        s = solve_regularized(problem.lower, xv, alpha, beta, tol_ll=tol_ll,
                              y0=sol.y)
        return np.concatenate([s.y, s.p])

    fd = fd_jacobian(stacked, x, step)
    scale = 1.0 + np.max(np.abs(fd))
    err = float(np.max(np.abs(fd - res.grad_S)) / scale)
    return err, res


def ri_statistics(problem, n_points=100, seed=0, alpha=0.1, beta=0.1,
                  x_center=None, radius=1.0, config=DEFAULT_CONFIG):
    """Sample points around a center and report how often the active sets
    are tolerance-stable (ri_flag) and the multiplier representation is
    nondegenerate."""
    rng = np.random.default_rng(seed)
    n = problem.lower.n
    center = np.zeros(n) if x_center is None else np.asarray(x_center, float)
    stats = {"n_points": n_points, "ri_true": 0, "degenerate_rep": 0,
             "failures": 0}
    for _ in range(n_points):
        x = center + radius * rng.standard_normal(n)
        try:
            sol = solve_regularized(problem.lower, x, alpha, beta)
            res = jacobian(problem.lower, sol, config)
        except Exception:
            stats["failures"] += 1
            continue
        stats["ri_true"] += int(res.ri_flag)
        stats["degenerate_rep"] += int(sol.rep.degenerate)
    return stats
