"""Built-in benchmark problems with analytic oracles and synthetic data.

Contains the two analytic fixtures with known regularized solution mappings,
a ridge fixture for linear-algebra cross-checks, elastic-net hyperparameter
tuning (composite and split lower-level encodings), response-perturbation
data poisoning, and the grid / random search baselines.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import poly
from .lower import LowerLevelOracles, solve_regularized

N_TRUE_NONZEROS = 15


@dataclass
class BilevelProblem:
    """Upper-level oracle bundle around a lower-level problem family.

    ``sense`` is "min" or "max"; maximization problems carry a negated f in
    the oracles and report the un-negated value through `report_objective`.
    Constraints are pairs (c_k, grad c_k) of callables of x.
    """

    lower: LowerLevelOracles
    f_val: Callable
    f_grad_x: Callable
    f_grad_y: Callable
    constraints: List[Tuple[Callable, Callable]] = field(default_factory=list)
    name: str = ""
    sense: str = "min"
    extras: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.lower.n

    @property
    def m(self):
        return self.lower.m

    @property
    def r(self):
        return len(self.constraints)

    def report_objective(self, f_internal):
        return -f_internal if self.sense == "max" else f_internal


# -- Example 1: minimize x*y subject to the vacuous constraint x^2 >= 0 ------


def make_example1(f_val=None, f_grad_x=None, f_grad_y=None):
    """g = x*y, G = (0, -x^2), h = z1 + indicator(z2 <= 0); the regularized
    primal-dual mapping is (-x/beta, 1, 0) for every alpha."""
    h = poly.EpiPolyhedralFn([(np.array([1.0, 0.0]), 0.0)],
                             [(np.array([0.0, 1.0]), 0.0)])
    zero_m = np.zeros((1, 1))

    oracles = LowerLevelOracles(
        g_val=lambda x, y: float(x[0] * y[0]),
        g_grad_y=lambda x, y: np.array([x[0]]),
        g_hess_yy=lambda x, y: zero_m,
        g_mixed_xy=lambda x, y: np.array([[1.0]]),
        G_val=lambda x, y: np.array([0.0, -x[0] ** 2]),
        G_jac_y=lambda x, y: np.zeros((2, 1)),
        G_jac_x=lambda x, y: np.array([[0.0], [-2.0 * x[0]]]),
        G_hess_yy_contract=lambda x, y, p: zero_m,
        G_mixed_contract=lambda x, y, p: zero_m,
        h=h, n=1, m=1, s=2)

    if f_val is None:
        f_val = lambda x, y: float(y[0])
        f_grad_x = lambda x, y: np.zeros(1)
        f_grad_y = lambda x, y: np.ones(1)
    return BilevelProblem(oracles, f_val, f_grad_x, f_grad_y, name="example1")


def example1_solution(x, alpha, beta):
    """Analytic S_{alpha,beta}(x) = (-x/beta, 1, 0)."""
    return -x / beta, np.array([1.0, 0.0])


# -- Example 3: minimize y^2 over a lower level with two linear constraints --


def make_example3():
    """g = y^2 + x*y, G = (x+y-1, x-y-100), h = indicator((-inf,0]^2), f = y^2."""
    h = poly.nonpos_indicator(2)
    zero_m = np.zeros((1, 1))
    oracles = LowerLevelOracles(
        g_val=lambda x, y: float(y[0] ** 2 + x[0] * y[0]),
        g_grad_y=lambda x, y: np.array([2.0 * y[0] + x[0]]),
        g_hess_yy=lambda x, y: np.array([[2.0]]),
        g_mixed_xy=lambda x, y: np.array([[1.0]]),
        G_val=lambda x, y: np.array([x[0] + y[0] - 1.0, x[0] - y[0] - 100.0]),
        G_jac_y=lambda x, y: np.array([[1.0], [-1.0]]),
        G_jac_x=lambda x, y: np.array([[1.0], [1.0]]),
        G_hess_yy_contract=lambda x, y, p: zero_m,
        G_mixed_contract=lambda x, y, p: zero_m,
        h=h, n=1, m=1, s=2)
    return BilevelProblem(
        oracles,
        f_val=lambda x, y: float(y[0] ** 2),
        f_grad_x=lambda x, y: np.zeros(1),
        f_grad_y=lambda x, y: np.array([2.0 * y[0]]),
        name="example3")


def example3_breakpoints(alpha, beta):
    x1 = (2.0 + beta) / (1.0 + beta)
    x2 = (1.0 + 100.0 * (2 * alpha + beta * alpha + 1)) / (3 * alpha + alpha * beta + 2)
    return x1, x2


def example3_solution(x, alpha, beta):
    """Analytic piecewise-linear Y_{alpha,beta}(x)."""
    x1, x2 = example3_breakpoints(alpha, beta)
    if x <= x1:
        return -x / (2.0 + beta)
    if x < x2:
        return (1.0 - (alpha + 1.0) * x) / (2 * alpha + alpha * beta + 1.0)
    return (-99.0 - alpha * x) / (2 * alpha + alpha * beta + 2.0)


def example3_branch_slope(x, alpha, beta):
    x1, x2 = example3_breakpoints(alpha, beta)
    if x <= x1:
        return -1.0 / (2.0 + beta)
    if x < x2:
        return -(alpha + 1.0) / (2 * alpha + alpha * beta + 1.0)
    return -alpha / (2 * alpha + alpha * beta + 2.0)


# -- ridge fixture ------------------------------------------------------------


def make_ridge(m=6, n=2, seed=0):
    """g = |A y - b - C x|^2 with h the zero function: a smooth strongly
    convex fixture with analytic sensitivity (2A'A + beta I)^{-1} 2A'C."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m + 2, m))
    b = rng.standard_normal(m + 2)
    C = rng.standard_normal((m + 2, n))
    h = poly.zero_fn(1)
    zero_mixed = np.zeros((m, n))

    def resid(x, y):
        return A @ y - b - C @ x

    oracles = LowerLevelOracles(
        g_val=lambda x, y: float(resid(x, y) @ resid(x, y)),
        g_grad_y=lambda x, y: 2.0 * A.T @ resid(x, y),
        g_hess_yy=lambda x, y: 2.0 * A.T @ A,
        g_mixed_xy=lambda x, y: -2.0 * A.T @ C,
        G_val=lambda x, y: np.zeros(1),
        G_jac_y=lambda x, y: np.zeros((1, m)),
        G_jac_x=lambda x, y: np.zeros((1, n)),
        G_hess_yy_contract=lambda x, y, p: np.zeros((m, m)),
        G_mixed_contract=lambda x, y, p: zero_mixed,
        h=h, n=n, m=m, s=1)
    return BilevelProblem(
        oracles,
        f_val=lambda x, y: float(y @ y),
        f_grad_x=lambda x, y: np.zeros(n),
        f_grad_y=lambda x, y: 2.0 * y,
        name="ridge", extras={"A": A, "b": b, "C": C})


def ridge_solution(problem, x, beta):
    A, b, C = (problem.extras[k] for k in ("A", "b", "C"))
    H = 2.0 * A.T @ A + beta * np.eye(A.shape[1])
    return np.linalg.solve(H, 2.0 * A.T @ (b + C @ np.asarray(x, float)))


# -- synthetic regression data -------------------------------------------------


@dataclass
class SyntheticRegressionData:
    """Train/validation/test splits from an AR(1)-correlated Gaussian design."""

    A_train: np.ndarray
    A_val: np.ndarray
    A_test: np.ndarray
    b_train: np.ndarray
    b_val: np.ndarray
    b_test: np.ndarray
    x_true: np.ndarray
    seed: int
    d: int
    n_tr: int
    n_val: int
    n_test: int
    snr: float

    def manifest(self):
        return {"seed": self.seed, "d": self.d, "n_tr": self.n_tr,
                "n_val": self.n_val, "n_test": self.n_test, "snr": self.snr}

    def export_csv(self, out_dir):
        """Columnar CSV bundle plus a JSON manifest (full-precision floats)."""
        os.makedirs(out_dir, exist_ok=True)
        for split in ("train", "val", "test"):
            A = getattr(self, f"A_{split}")
            b = getattr(self, f"b_{split}")
            M = np.column_stack([A, b])
            np.savetxt(os.path.join(out_dir, f"{split}.csv"), M,
                       delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(out_dir, "x_true.csv"), self.x_true,
                   delimiter=",", fmt="%.17g")
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(self.manifest(), fh, indent=1)

    @classmethod
    def import_csv(cls, in_dir):
        with open(os.path.join(in_dir, "manifest.json")) as fh:
            man = json.load(fh)
        splits = {}
        for split in ("train", "val", "test"):
            M = np.loadtxt(os.path.join(in_dir, f"{split}.csv"), delimiter=",",
                           ndmin=2)
            splits[f"A_{split}"] = M[:, :-1]
            splits[f"b_{split}"] = M[:, -1]
        x_true = np.loadtxt(os.path.join(in_dir, "x_true.csv"), delimiter=",")
        return cls(A_train=splits["A_train"], A_val=splits["A_val"],
                   A_test=splits["A_test"], b_train=splits["b_train"],
                   b_val=splits["b_val"], b_test=splits["b_test"],
                   x_true=x_true, **man)


def ar1_covariance(d, rho=0.5):
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def generate_regression_data(d=100, n_tr=100, n_val=100, n_test=300, snr=2.0,
                             seed=0):
    """Rows ~ N(0, Sigma) with Sigma_jk = 0.5^|j-k|; the true model has 15
    unit components; noise variance is x'Sigma x / snr for all splits.

    All splits come from one seeded stream in a fixed order (train, val,
    test designs, then the three noise vectors).
    """
    if d < N_TRUE_NONZEROS:
        raise ValueError(f"d must be at least {N_TRUE_NONZEROS}")
    rng = np.random.default_rng(seed)
    Sigma = ar1_covariance(d)
    L = np.linalg.cholesky(Sigma)
    A_tr = rng.standard_normal((n_tr, d)) @ L.T
    A_val = rng.standard_normal((n_val, d)) @ L.T
    A_test = rng.standard_normal((n_test, d)) @ L.T
    x_true = np.zeros(d)
    x_true[:N_TRUE_NONZEROS] = 1.0
    sig2 = float(x_true @ Sigma @ x_true) / snr
    sig = math.sqrt(sig2)
    b_tr = A_tr @ x_true + sig * rng.standard_normal(n_tr)
    b_val = A_val @ x_true + sig * rng.standard_normal(n_val)
    b_test = A_test @ x_true + sig * rng.standard_normal(n_test)
    return SyntheticRegressionData(A_tr, A_val, A_test, b_tr, b_val, b_test,
                                   x_true, seed, d, n_tr, n_val, n_test, snr)


# -- elastic net ----------------------------------------------------------------


def make_elastic_net(data, encoding="composite"):
    """Tune (lam1, lam2) of an elastic net on a validation split.

    Upper variables are lam = (lam1, lam2) entering exponentially.  The
    composite encoding keeps the trained coefficients as the lower variable
    with G = (e^lam1 x', -e^lam1 x') and pair-max h; the split encoding uses
    (x+, x-) >= 0 with a smooth objective and orthant-indicator h.
    """
    if encoding == "composite":
        return _elastic_net_composite(data)
    if encoding == "split":
        return _elastic_net_split(data)
    raise ValueError(f"unknown encoding {encoding!r}")


def _val_error_fns(data, to_coefficients):
    Av, bv = data.A_val, data.b_val
    n_val = bv.size

    def f_val(x, y):
        r = Av @ to_coefficients(y) - bv
        return float(r @ r) / n_val

    return f_val


def _elastic_net_composite(data):
    A, b = data.A_train, data.b_train
    d = data.d
    AtA2 = 2.0 * A.T @ A
    Atb2 = 2.0 * A.T @ b
    h = poly.l1_pair(d, weight=1.0)
    Av, bv = data.A_val, data.b_val
    n_val = data.n_val

    def g_val(x, y):
        r = A @ y - b
        return float(r @ r) + 0.5 * math.exp(x[1]) * float(y @ y)

    def g_grad_y(x, y):
        return AtA2 @ y - Atb2 + math.exp(x[1]) * y

    def g_hess_yy(x, y):
        return AtA2 + math.exp(x[1]) * np.eye(d)

    def g_mixed_xy(x, y):
        M = np.zeros((d, 2))
        M[:, 1] = math.exp(x[1]) * y
        return M

    def G_val(x, y):
        e1 = math.exp(x[0])
        return np.concatenate([e1 * y, -e1 * y])

    def G_jac_y(x, y):
        e1 = math.exp(x[0])
        return np.vstack([e1 * np.eye(d), -e1 * np.eye(d)])

    def G_jac_x(x, y):
        e1 = math.exp(x[0])
        M = np.zeros((2 * d, 2))
        M[:d, 0] = e1 * y
        M[d:, 0] = -e1 * y
        return M

    def G_mixed_contract(x, y, p):
        e1 = math.exp(x[0])
        M = np.zeros((d, 2))
        M[:, 0] = e1 * (p[:d] - p[d:])
        return M

    oracles = LowerLevelOracles(
        g_val=g_val, g_grad_y=g_grad_y, g_hess_yy=g_hess_yy,
        g_mixed_xy=g_mixed_xy, G_val=G_val, G_jac_y=G_jac_y, G_jac_x=G_jac_x,
        G_hess_yy_contract=lambda x, y, p: np.zeros((d, d)),
        G_mixed_contract=G_mixed_contract, h=h, n=2, m=d, s=2 * d)

    def f_val(x, y):
        r = Av @ y - bv
        return float(r @ r) / n_val

    def f_grad_y(x, y):
        return 2.0 / n_val * Av.T @ (Av @ y - bv)

    return BilevelProblem(
        oracles, f_val=f_val, f_grad_x=lambda x, y: np.zeros(2),
        f_grad_y=f_grad_y, name="elastic_net_composite",
        extras={"data": data, "encoding": "composite"})


def _elastic_net_split(data):
    A, b = data.A_train, data.b_train
    d = data.d
    m = 2 * d
    AtA2 = 2.0 * A.T @ A
    Atb2 = 2.0 * A.T @ b
    h = poly.nonpos_indicator(m)
    Av, bv = data.A_val, data.b_val
    n_val = data.n_val
    ones = np.ones(m)

    def split(y):
        return y[:d], y[d:]

    def g_val(x, y):
        yp, ym = split(y)
        u = yp - ym
        r = A @ u - b
        return (float(r @ r) + math.exp(x[0]) * float(np.sum(yp + ym))
                + 0.5 * math.exp(x[1]) * float(u @ u))

    def g_grad_y(x, y):
        yp, ym = split(y)
        u = yp - ym
        core = AtA2 @ u - Atb2 + math.exp(x[1]) * u
        return np.concatenate([core, -core]) + math.exp(x[0]) * ones

    def g_hess_yy(x, y):
        M = AtA2 + math.exp(x[1]) * np.eye(d)
        return np.block([[M, -M], [-M, M]])

    def g_mixed_xy(x, y):
        yp, ym = split(y)
        u = yp - ym
        M = np.zeros((m, 2))
        M[:, 0] = math.exp(x[0])
        M[:d, 1] = math.exp(x[1]) * u
        M[d:, 1] = -math.exp(x[1]) * u
        return M

    oracles = LowerLevelOracles(
        g_val=g_val, g_grad_y=g_grad_y, g_hess_yy=g_hess_yy,
        g_mixed_xy=g_mixed_xy,
        G_val=lambda x, y: -y,
        G_jac_y=lambda x, y: -np.eye(m),
        G_jac_x=lambda x, y: np.zeros((m, 2)),
        G_hess_yy_contract=lambda x, y, p: np.zeros((m, m)),
        G_mixed_contract=lambda x, y, p: np.zeros((m, 2)),
        h=h, n=2, m=m, s=m)

    def f_val(x, y):
        yp, ym = split(y)
        r = Av @ (yp - ym) - bv
        return float(r @ r) / n_val

    def f_grad_y(x, y):
        yp, ym = split(y)
        core = 2.0 / n_val * Av.T @ (Av @ (yp - ym) - bv)
        return np.concatenate([core, -core])

    return BilevelProblem(
        oracles, f_val=f_val, f_grad_x=lambda x, y: np.zeros(2),
        f_grad_y=f_grad_y, name="elastic_net_split",
        extras={"data": data, "encoding": "split"})


# -- data poisoning ---------------------------------------------------------------


def make_data_poisoning(data, c_budget=100.0, lambda1=math.exp(3.0),
                        lambda2=math.exp(2.0)):
    """Attacker perturbs training responses within |w|^2 <= c to maximize the
    validation error of the retrained elastic net (lam1, lam2 fixed).

    Maximization is handled by negating f internally; sense="max".
    """
    A, b = data.A_train, data.b_train
    d = data.d
    n = data.n_tr
    AtA2 = 2.0 * A.T @ A
    h = poly.l1_pair(d, weight=lambda1)
    Av, bv = data.A_val, data.b_val
    n_val = data.n_val

    def g_val(x, y):
        r = A @ y - b - x
        return float(r @ r) + 0.5 * lambda2 * float(y @ y)

    def g_grad_y(x, y):
        return 2.0 * A.T @ (A @ y - b - x) + lambda2 * y

    oracles = LowerLevelOracles(
        g_val=g_val, g_grad_y=g_grad_y,
        g_hess_yy=lambda x, y: AtA2 + lambda2 * np.eye(d),
        g_mixed_xy=lambda x, y: -2.0 * A.T,
        G_val=lambda x, y: np.concatenate([y, -y]),
        G_jac_y=lambda x, y: np.vstack([np.eye(d), -np.eye(d)]),
        G_jac_x=lambda x, y: np.zeros((2 * d, n)),
        G_hess_yy_contract=lambda x, y, p: np.zeros((d, d)),
        G_mixed_contract=lambda x, y, p: np.zeros((d, n)),
        h=h, n=n, m=d, s=2 * d)

    def f_val(x, y):  # negated validation error (internal minimization)
        r = Av @ y - bv
        return -float(r @ r) / n_val

    def f_grad_y(x, y):
        return -2.0 / n_val * Av.T @ (Av @ y - bv)

    def c_val(x):
        return float(x @ x) - c_budget

    def c_grad(x):
        return 2.0 * np.asarray(x, float)

    return BilevelProblem(
        oracles, f_val=f_val, f_grad_x=lambda x, y: np.zeros(n),
        f_grad_y=f_grad_y, constraints=[(c_val, c_grad)],
        name="data_poisoning", sense="max",
        extras={"data": data, "c_budget": c_budget,
                "lambda1": lambda1, "lambda2": lambda2})


# -- retraining and error metrics ---------------------------------------------


TINY_REG = 1e-8


def retrain_coefficients(problem, x, alpha=TINY_REG, beta=TINY_REG, y0=None,
                         tol_ll=None):
    """Near-exact lower-level solve at x (the retraining convention for all
    reported errors), returning model coefficients in R^d."""
    sol = solve_regularized(problem.lower, x, alpha, beta, tol_ll=tol_ll, y0=y0)
    return coefficients_from_y(problem, sol.y), sol


def coefficients_from_y(problem, y):
    if problem.extras.get("encoding") == "split":
        d = y.size // 2
        return y[:d] - y[d:]
    return y


def regression_errors(data, coef):
    rv = data.A_val @ coef - data.b_val
    rt = data.A_test @ coef - data.b_test
    return float(rv @ rv) / data.n_val, float(rt @ rt) / data.n_test


# -- baselines -----------------------------------------------------------------


def grid_search_baseline(data, grid_lo=-5.0, grid_hi=5.0, grid_n=21,
                         encoding="composite", alpha=TINY_REG, beta=TINY_REG):
    """Exhaustive validation-error search over a lam1 x lam2 grid using the
    near-exact lower-level solver.  Returns (best_value, best_point)."""
    problem = make_elastic_net(data, encoding)
    vals = np.linspace(grid_lo, grid_hi, grid_n)
    best_val, best_lam = poly.INF, None
    y_warm = None
    for i, l1 in enumerate(vals):
        sweep = vals if i % 2 == 0 else vals[::-1]  # snake order for warm starts
        for l2 in sweep:
            lam = np.array([l1, l2])
            coef, sol = retrain_coefficients(problem, lam, alpha, beta, y0=y_warm)
            y_warm = sol.y
            err, _ = regression_errors(data, coef)
            if err < best_val:
                best_val, best_lam = err, lam
    return best_val, best_lam


def random_search_baseline(problem, n_points=2000, seed=0, alpha=TINY_REG,
                           beta=TINY_REG):
    """Uniform search in the feasible ball of the single quadratic constraint
    |w|^2 <= c.  Returns (best_value, best_point) in the problem's sense."""
    c = problem.extras["c_budget"]
    data = problem.extras["data"]
    n = problem.n
    rng = np.random.default_rng(seed)
    best_val, best_w = None, None
    y_warm = None
    sign = -1.0 if problem.sense == "max" else 1.0
    for k in range(n_points):
        if k == 0:
            w = np.zeros(n)
        else:
            u = rng.standard_normal(n)
            u /= np.linalg.norm(u)
            w = math.sqrt(c) * rng.uniform() ** (1.0 / n) * u
        coef, sol = retrain_coefficients(problem, w, alpha, beta, y0=y_warm)
        y_warm = sol.y
        err, _ = regression_errors(data, coef)
        if best_val is None or sign * err < sign * best_val:
            best_val, best_w = err, w
    return best_val, best_w


_BUILTIN_MAKERS = {
    "example1": lambda **kw: make_example1(),
    "example3": lambda **kw: make_example3(),
    "ridge": lambda **kw: make_ridge(**kw),
}


def builtin_problem(name, data=None, **kwargs):
    """Instantiate a built-in problem by name (data-backed ones need `data`)."""
    if name in _BUILTIN_MAKERS:
        return _BUILTIN_MAKERS[name](**kwargs)
    if name in ("elastic-net", "elastic_net"):
        return make_elastic_net(data, kwargs.get("encoding", "composite"))
    if name in ("data-poisoning", "data_poisoning"):
        keys = ("c_budget", "lambda1", "lambda2")
        return make_data_poisoning(data, **{k: kwargs[k] for k in keys if k in kwargs})
    raise ValueError(f"unknown problem {name!r}")
