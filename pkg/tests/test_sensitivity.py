"""Jacobian assembly vs analytic slopes, finite differences, and degeneracy."""

import numpy as np
import pytest

from bilevel_gs.checks import jacobian_fd_check
from bilevel_gs.errors import IllConditionedError
from bilevel_gs.lower import solve_regularized
from bilevel_gs.problems import (example3_branch_slope, generate_regression_data,
                                 make_data_poisoning, make_elastic_net,
                                 make_example1, make_example3, make_ridge,
                                 ridge_solution)
from bilevel_gs.sensitivity import (SensitivityConfig, hyper_gradient, jacobian,
                                    jacobian_actual_limit)


@pytest.mark.parametrize("x", [-1.0, 0.0, 2.0])
@pytest.mark.parametrize("beta", [1.0, 0.25])
def test_example1_grad_Y(x, beta):
    prob = make_example1()
    sol = solve_regularized(prob.lower, [x], 0.5, beta, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    assert abs(res.grad_Y[0, 0] - (-1.0 / beta)) < 1e-9
    np.testing.assert_allclose(res.grad_P, np.zeros((2, 1)), atol=1e-9)
    # A symmetric within 1e-10
    assert np.max(np.abs(res.A - res.A.T)) < 1e-10


@pytest.mark.parametrize("x", [1.0, 2.0, 30.0, 60.0])
def test_example3_branch_slopes(x):
    alpha = beta = 0.1
    prob = make_example3()
    sol = solve_regularized(prob.lower, [x], alpha, beta, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    assert abs(res.grad_Y[0, 0] - example3_branch_slope(x, alpha, beta)) < 1e-8


def test_ridge_jacobian_analytic_and_fd():
    prob = make_ridge(m=6, n=2, seed=2)
    A = prob.extras["A"]
    C = prob.extras["C"]
    beta, alpha = 0.3, 0.5
    x = np.array([0.4, -1.2])
    sol = solve_regularized(prob.lower, x, alpha, beta, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    H = 2 * A.T @ A + beta * np.eye(A.shape[1])
    expect = np.linalg.solve(H, 2 * A.T @ C)
    np.testing.assert_allclose(res.grad_Y, expect, atol=1e-8)
    err, _ = jacobian_fd_check(prob, x, alpha, beta)
    assert err <= 1e-4


def test_block_consistency_indicator_case():
    # for h = indicator((-inf,0]^s), B'AB equals the bordered active matrix
    prob = make_example3()
    alpha = beta = 0.1
    x = 30.0  # middle branch: first constraint active
    sol = solve_regularized(prob.lower, [x], alpha, beta, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    xv = np.array([x])
    Jg = prob.lower.G_jac_y(xv, sol.y)
    act = sol.active.I_active
    expect = np.block([
        [2.0 + beta * np.eye(1), Jg[act].T],
        [Jg[act], -alpha * np.eye(act.size)]])
    BtAB = res.B.T @ res.A @ res.B
    np.testing.assert_allclose(BtAB, expect, atol=1e-12)


def test_hyper_gradient_example1():
    prob = make_example1()  # f = y
    hg = hyper_gradient(prob, [1.5], 0.3, 0.5, tol_ll=1e-12)
    assert abs(hg.w[0] - (-1.0 / 0.5)) < 1e-9


def test_hyper_gradient_example3_first_branch():
    prob = make_example3()  # f = y^2
    alpha = beta = 0.1
    x = 1.0
    hg = hyper_gradient(prob, [x], alpha, beta, tol_ll=1e-12)
    Y = -x / (2 + beta)
    expect = 2.0 * Y * (-1.0 / (2 + beta))
    assert abs(hg.w[0] - expect) < 1e-9


def test_hyper_gradient_ridge_fd():
    prob = make_ridge(m=5, n=2, seed=5)  # f = |y|^2
    alpha, beta = 0.2, 0.4
    x = np.array([0.1, 0.7])
    hg = hyper_gradient(prob, x, alpha, beta, tol_ll=1e-12)

    def composed(xv):
        s = solve_regularized(prob.lower, xv, alpha, beta, tol_ll=1e-12)
        return float(s.y @ s.y)

    from bilevel_gs.checks import fd_gradient
    fd = fd_gradient(composed, x, 1e-6)
    np.testing.assert_allclose(hg.w, fd, atol=1e-4)


def test_jacobian_convergence_thm5_semantics():
    # Example 3 interior, schedule alpha=beta=10^-k: slope -> -1/2 monotonically
    prob = make_example3()
    errs = []
    for k in range(1, 7):
        ab = 10.0 ** (-k)
        sol = solve_regularized(prob.lower, [1.0], ab, ab, tol_ll=1e-13)
        res = jacobian(prob.lower, sol)
        errs.append(abs(res.grad_Y[0, 0] + 0.5))
    assert all(errs[i + 1] < errs[i] for i in range(len(errs) - 1))
    assert errs[-1] <= 1e-4


def test_jacobian_actual_limit_example3():
    prob = make_example3()
    sol = solve_regularized(prob.lower, [1.0], 1e-5, 1e-5, tol_ll=1e-13)
    res = jacobian_actual_limit(prob.lower, sol)
    assert abs(res.grad_Y[0, 0] + 0.5) < 1e-10


def test_jacobian_actual_limit_ridge():
    prob = make_ridge(m=5, n=2, seed=8)
    A, C = prob.extras["A"], prob.extras["C"]
    x = np.array([1.0, -0.5])
    sol = solve_regularized(prob.lower, x, 1e-7, 1e-7, tol_ll=1e-12)
    res = jacobian_actual_limit(prob.lower, sol)
    expect = np.linalg.solve(2 * A.T @ A, 2 * A.T @ C)
    np.testing.assert_allclose(res.grad_Y, expect, atol=1e-6)


def test_basis_invariance_of_formula():
    # two different bases of the same subspace give identical grad_S
    prob = make_example3()
    alpha = beta = 0.1
    sol = solve_regularized(prob.lower, [30.0], alpha, beta, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    rng = np.random.default_rng(0)
    mk = res.B.shape[1]
    R = rng.standard_normal((mk, mk))
    R = R @ R.T + mk * np.eye(mk)  # invertible mixing
    B2 = res.B @ R
    rhs = np.vstack([
        prob.lower.g_mixed_xy(sol.x, sol.y)
        + prob.lower.G_mixed_contract(sol.x, sol.y, sol.p),
        prob.lower.G_jac_x(sol.x, sol.y)])
    grad_S2 = -B2 @ np.linalg.solve(B2.T @ res.A @ B2, B2.T @ rhs)
    np.testing.assert_allclose(grad_S2, res.grad_S, atol=1e-8)


def test_ill_conditioned_raises():
    prob = make_example3()
    sol = solve_regularized(prob.lower, [1.0], 0.1, 0.1, tol_ll=1e-12)
    tight = SensitivityConfig(cond_limit=1.0)
    with pytest.raises(IllConditionedError):
        jacobian(prob.lower, sol, tight)


def test_ri_flag_true_on_clean_branch_interior():
    prob = make_example3()
    sol = solve_regularized(prob.lower, [1.0], 0.1, 0.1, tol_ll=1e-12)
    res = jacobian(prob.lower, sol)
    assert res.ri_flag


def test_elastic_net_split_fd_suite_small():
    data = generate_regression_data(d=16, n_tr=24, n_val=20, n_test=20, seed=0)
    prob = make_elastic_net(data, "split")
    alpha = beta = 0.05
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(6):
        lam = rng.uniform(-1.0, 1.0, size=2)
        err, res = jacobian_fd_check(prob, lam, alpha, beta)
        if res.ri_flag:
            checked += 1
            assert err <= 1e-4
    assert checked >= 3


def test_elastic_net_composite_fd():
    data = generate_regression_data(d=16, n_tr=24, n_val=20, n_test=20, seed=3)
    prob = make_elastic_net(data, "composite")
    err, res = jacobian_fd_check(prob, np.array([0.5, 0.0]), 0.05, 0.05)
    if res.ri_flag:
        assert err <= 1e-4


def test_poisoning_fixture_jacobian_fd():
    data = generate_regression_data(d=8, n_tr=12, n_val=10, n_test=10, seed=4)
    prob = make_data_poisoning(data, c_budget=5.0, lambda1=2.0, lambda2=1.0)
    rng = np.random.default_rng(2)
    w = 0.3 * rng.standard_normal(data.n_tr)
    err, res = jacobian_fd_check(prob, w, 0.01, 0.01)
    assert err <= 1e-4
