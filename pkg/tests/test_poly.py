"""Epi-polyhedral function calculus: evaluation, prox, multipliers, cones."""

import itertools
import math

import numpy as np
import pytest

from bilevel_gs import poly
from bilevel_gs.errors import (InfeasibleFunctionError, InfeasiblePointError,
                               NotASubgradientError)
from bilevel_gs.poly import (INF, EpiPolyhedralFn, NonposIndicator, PairMaxSum,
                             SeparableSum, active_sets, conjugate_value,
                             coordinate_max, critical_cone_basis, evaluate,
                             from_config, hinge, l1_pair, moreau_gradient,
                             multiplier_representation, nonpos_indicator, prox,
                             zero_fn)


def example1_h():
    """h(z1,z2) = z1 + indicator(z2 <= 0)."""
    return EpiPolyhedralFn([(np.array([1.0, 0.0]), 0.0)],
                           [(np.array([0.0, 1.0]), 0.0)])


def brute_grid_prox(h, z, lam, lo=-6.0, hi=6.0, rounds=10, n=25):
    """2-D grid-refinement oracle for prox (feasible points only)."""
    best, best_val = None, INF
    center = np.array(z, float)
    width = hi - lo
    for _ in range(rounds):
        g1 = np.linspace(center[0] - width / 2, center[0] + width / 2, n)
        g2 = np.linspace(center[1] - width / 2, center[1] + width / 2, n)
        for w1, w2 in itertools.product(g1, g2):
            w = np.array([w1, w2])
            val = evaluate(h, w)
            if val == INF:
                continue
            val = val + np.sum((w - z) ** 2) / (2 * lam)
            if val < best_val:
                best_val, best = val, w
        center = best
        width = width / (n - 1) * 4
    return best, best_val


# -- evaluate ---------------------------------------------------------------


def test_evaluate_single_linear_piece():
    h = EpiPolyhedralFn([(np.array([1.0, 0.0]), 0.0)])
    assert evaluate(h, [3.0, 5.0]) == 3.0


def test_evaluate_example1_encoding():
    h = example1_h()
    assert evaluate(h, [2.0, -1.0]) == 2.0
    assert evaluate(h, [2.0, 1.0]) == INF


def test_evaluate_max_two_pieces():
    h = coordinate_max(2)
    assert evaluate(h, [-1.0, 4.0]) == 4.0


def test_evaluate_dimension_mismatch():
    with pytest.raises(ValueError):
        evaluate(coordinate_max(2), [1.0, 2.0, 3.0])


def test_nondecreasing_rejected_at_construction():
    with pytest.raises(ValueError):
        EpiPolyhedralFn([(np.array([1.0, -0.5]), 0.0)])
    with pytest.raises(ValueError):
        EpiPolyhedralFn([(np.array([1.0]), 0.0)], [(np.array([-1.0]), 0.0)])


# -- active sets --------------------------------------------------------------


def test_active_sets_tie():
    act = active_sets(coordinate_max(2), [1.0, 1.0], 1e-6)
    assert set(act.J_active) == {0, 1}
    assert act.I_active.size == 0


def test_active_sets_example1_origin():
    act = active_sets(example1_h(), [0.0, 0.0])
    assert set(act.J_active) == {0}
    assert set(act.I_active) == {0}


def test_active_sets_tolerance_inclusion():
    # within the band: both active; exact-arithmetic oracle at tol 0 says one
    act = active_sets(coordinate_max(2), [1.0, 1.0 - 1e-9], 1e-6)
    assert set(act.J_active) == {0, 1}
    act0 = active_sets(coordinate_max(2), [1.0, 1.0 - 1e-9], 0.0)
    assert set(act0.J_active) == {0}


def test_active_sets_infeasible_point():
    with pytest.raises(InfeasiblePointError):
        active_sets(example1_h(), [0.0, 1.0])


# -- prox / envelope ----------------------------------------------------------


def test_prox_nonpos_indicator_projection():
    h = nonpos_indicator(3)
    z = np.array([2.0, -1.0, 0.5])
    w, val = prox(h, z, 0.5)
    np.testing.assert_allclose(w, [0.0, -1.0, 0.0])
    assert abs(val - (2.0 ** 2 + 0.5 ** 2) / (2 * 0.5)) < 1e-12


def test_prox_l1_pair_soft_threshold():
    # pair encoding of |t| at t = 3, lam = 1: the max-attaining prox
    # coordinate is the scalar soft threshold 2
    h = l1_pair(1)
    w, _ = prox(h, np.array([3.0, -3.0]), 1.0)
    assert abs(w[0] - 2.0) < 1e-12
    # oracle: scalar soft-thresholding away from the kink region
    for t, lam in [(3.0, 1.0), (2.0, 0.5), (1.4, 1.0)]:
        soft = t - lam
        w, _ = prox(h, np.array([t, -t]), lam)
        assert abs(w[0] - soft) < 1e-12
    for t, lam in [(-3.0, 1.0), (-2.0, 0.5)]:
        soft = t + lam
        w, _ = prox(h, np.array([t, -t]), lam)
        assert abs(-w[1] - soft) < 1e-12


def test_prox_max_pair_derived_value():
    h = coordinate_max(2)
    w, val = prox(h, [2.0, 0.0], 1.0)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-9)
    assert abs(val - 1.5) < 1e-9
    # brute-force 2-D grid refinement oracle
    w_o, val_o = brute_grid_prox(h, [2.0, 0.0], 1.0)
    assert abs(val - val_o) < 1e-6


def test_prox_generic_epigraph_qp_matches_closed_forms():
    rng = np.random.default_rng(0)
    for _ in range(25):
        lam = float(rng.uniform(0.2, 3.0))
        z = rng.uniform(-3, 3, size=2)
        h_fast = coordinate_max(2)
        w_fast, v_fast = prox(h_fast, z, lam)
        w_gen, v_gen = prox(h_fast.as_generic(), z, lam)
        np.testing.assert_allclose(w_fast, w_gen, atol=1e-6)
        assert abs(v_fast - v_gen) < 1e-6


def test_prox_empty_domain_raises():
    # a zero row with negative offset makes dom h empty
    h = EpiPolyhedralFn([(np.array([1.0]), 0.0)], [(np.array([0.0]), -1.0)])
    with pytest.raises(InfeasibleFunctionError):
        prox(h, [0.0], 1.0)


def test_moreau_gradient_indicator_values():
    h = nonpos_indicator(1)
    assert abs(moreau_gradient(h, [2.0], 0.5)[0] - 4.0) < 1e-12
    assert moreau_gradient(h, [-1.0], 0.5)[0] == 0.0


@pytest.mark.parametrize("maker", [
    lambda: nonpos_indicator(3),
    lambda: l1_pair(2, weight=1.5),
    lambda: coordinate_max(3),
    lambda: hinge(1),
    lambda: example1_h(),
])
def test_moreau_gradient_matches_finite_differences(maker):
    h = maker()
    rng = np.random.default_rng(42)
    lam = 0.7
    for _ in range(12):
        z = rng.uniform(-2, 2, size=h.s)
        p = moreau_gradient(h, z, lam)
        assert np.min(p) >= -1e-10  # nondecreasing envelope
        step = 1e-6
        for i in range(h.s):
            e = np.zeros(h.s)
            e[i] = step
            _, up = prox(h, z + e, lam)
            _, dn = prox(h, z - e, lam)
            fd = (up - dn) / (2 * step)
            assert abs(p[i] - fd) < 1e-5


def test_envelope_minorant_property():
    rng = np.random.default_rng(5)
    for maker in [lambda: nonpos_indicator(2), lambda: coordinate_max(3),
                  lambda: l1_pair(2)]:
        h = maker()
        for _ in range(20):
            z = rng.uniform(-2, 0, size=h.s)  # feasible for the indicator too
            hz = evaluate(h, z)
            if hz == INF:
                continue
            for lam in (0.1, 1.0, 5.0):
                _, env = prox(h, z, lam)
                assert env <= hz + 1e-10


def test_prox_optimality_via_representation():
    # (z - w)/lam must be a subgradient of h at w
    rng = np.random.default_rng(9)
    for maker in [lambda: coordinate_max(3), lambda: l1_pair(2, 2.0),
                  lambda: nonpos_indicator(2), lambda: example1_h()]:
        h = maker()
        for _ in range(10):
            z = rng.uniform(-2, 2, size=h.s)
            lam = float(rng.uniform(0.3, 2.0))
            w, _ = prox(h, z, lam)
            p = (z - w) / lam
            rep = multiplier_representation(h, w, p)
            assert rep.residual <= 1e-6


# -- multiplier representation -------------------------------------------------


def test_rep_unique_active_piece():
    h = coordinate_max(2)
    rep = multiplier_representation(h, [1.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(rep.sigma, [1.0], atol=1e-10)
    assert rep.tau.size == 0


def test_rep_tie_interpolated():
    h = coordinate_max(2)
    rep = multiplier_representation(h, [1.0, 1.0], [0.3, 0.7])
    np.testing.assert_allclose(np.sort(rep.sigma), [0.3, 0.7], atol=1e-8)
    assert abs(rep.sigma.sum() - 1.0) < 1e-10


def test_rep_example1_boundary_degenerate():
    h = example1_h()
    rep = multiplier_representation(h, [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(rep.sigma, [1.0], atol=1e-10)
    np.testing.assert_allclose(rep.tau, [0.0], atol=1e-10)
    assert rep.degenerate  # tau_1 = 0 on an active row


def test_rep_rejects_non_subgradient():
    h = coordinate_max(2)
    with pytest.raises(NotASubgradientError):
        multiplier_representation(h, [1.0, 0.0], [0.0, 1.0])


def test_rep_reconstruction_residual():
    rng = np.random.default_rng(3)
    h = EpiPolyhedralFn([(np.array([1.0, 0.2]), 0.0), (np.array([0.1, 1.0]), 0.3)],
                        [(np.array([0.5, 0.5]), 2.0)])
    z = np.array([1.0, 1.0])
    act = active_sets(h, z, tol_act=10.0)  # force everything active
    for _ in range(5):
        sig = rng.dirichlet([1, 1])
        tau = rng.uniform(0, 1, size=1)
        p = sig @ h.A + tau @ h.B
        rep = multiplier_representation(h, z, p, active=act)
        recon = rep.sigma @ h.A[act.J_active] + rep.tau @ h.B[act.I_active]
        assert np.linalg.norm(recon - p) <= 1e-8


# -- critical cone -------------------------------------------------------------


def test_cone_single_piece_no_rows():
    h = EpiPolyhedralFn([(np.array([1.0, 1.0]), 0.0)])
    cb = critical_cone_basis(h, [0.0, 0.0])
    assert cb.rank == 0 and cb.B_z.shape == (2, 0)


def test_cone_truncated_identity_for_indicator():
    h = nonpos_indicator(3)
    cb = critical_cone_basis(h, [0.0, -1.0, 0.0])
    assert cb.rank == 2
    np.testing.assert_allclose(cb.B_z[:, 0], [1, 0, 0])
    np.testing.assert_allclose(cb.B_z[:, 1], [0, 0, 1])


def test_cone_pair_tie_direction():
    h = coordinate_max(2)
    cb = critical_cone_basis(h, [1.0, 1.0])
    assert cb.rank == 1
    v = cb.B_z[:, 0]
    np.testing.assert_allclose(np.abs(v), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert abs(v[0] + v[1]) < 1e-12
    # nullspace oracle: rows stack is a^1 - a^2 = (1, -1)
    assert abs(v @ np.array([1.0, 1.0])) < 1e-10


def test_cone_orthonormal_and_perp_to_nullspace():
    rng = np.random.default_rng(17)
    h = EpiPolyhedralFn([(rng.uniform(0, 1, 4), 0.0) for _ in range(3)],
                        [(rng.uniform(0, 1, 4), 0.0) for _ in range(2)])
    z = np.zeros(4)
    act = active_sets(h, z, tol_act=1e-6)
    cb = critical_cone_basis(h, z, active=act)
    Bz = cb.B_z
    np.testing.assert_allclose(Bz.T @ Bz, np.eye(cb.rank), atol=1e-12)
    R = h.cone_rows(act)
    # sample the nullspace of R and verify orthogonality
    _, sv, Vt = np.linalg.svd(R)
    null = Vt[np.sum(sv > 1e-12):]
    for v in null:
        assert np.max(np.abs(Bz.T @ v)) <= 1e-10


def test_pairmax_structured_matches_generic():
    h = l1_pair(3, weight=2.0)
    g = h.as_generic()
    rng = np.random.default_rng(8)
    for _ in range(10):
        z = rng.uniform(-2, 2, 6)
        lam = float(rng.uniform(0.2, 2.0))
        assert abs(evaluate(h, z) - evaluate(g, z)) < 1e-12
        wf, vf = prox(h, z, lam)
        wg, vg = prox(g, z, lam)
        np.testing.assert_allclose(wf, wg, atol=1e-6)
        assert abs(vf - vg) < 1e-6
        cb_f = critical_cone_basis(h, wf)
        cb_g = critical_cone_basis(g, wg)
        assert cb_f.rank == cb_g.rank


# -- conjugate -----------------------------------------------------------------


def test_conjugate_values():
    assert conjugate_value(nonpos_indicator(2), [1.0, 0.0]) == 0.0
    assert conjugate_value(nonpos_indicator(2), [-1.0, 0.0]) == INF
    assert conjugate_value(coordinate_max(2), [0.5, 0.5]) == 0.0
    assert conjugate_value(coordinate_max(2), [2.0, 0.0]) == INF
    # generic path: h(z) = max(z - 1, 0): h*(p) = p for p in [0, 1]
    h = EpiPolyhedralFn([(np.array([1.0]), 1.0), (np.array([0.0]), 0.0)])
    assert abs(conjugate_value(h, [0.5]) - 0.5) < 1e-7
    assert conjugate_value(h, [2.0]) == INF


# -- separable sums и config -----------------------------------------------------


def test_separable_sum_active_and_prox():
    h = SeparableSum([coordinate_max(2), nonpos_indicator(1)],
                     [np.array([0, 1]), np.array([2])])
    act = active_sets(h, [1.0, 1.0, 0.0])
    assert set(act.J_active) == {0, 1, 2}  # both maxes + the indicator zero piece
    assert set(act.I_active) == {0}
    w, val = prox(h, [2.0, 0.0, 3.0], 1.0)
    np.testing.assert_allclose(w, [1.0, 0.0, 0.0], atol=1e-9)
    assert abs(val - (1.5 + 4.5)) < 1e-9


def test_from_config_explicit_and_presets():
    h = from_config({"max_pieces": [{"a": [1.0, 0.0], "alpha": 0.0}],
                     "dom_rows": [{"b": [0.0, 1.0], "beta": 0.0}]})
    assert evaluate(h, [2.0, -1.0]) == 2.0
    h2 = from_config({"preset": "l1_pair", "dim": 2, "weight": 3.0})
    assert isinstance(h2, PairMaxSum)
    assert evaluate(h2, [1.0, 0.0, -1.0, 0.0]) == 3.0
    with pytest.raises(ValueError):
        from_config({"preset": "nope"})


def test_zero_fn_prox_identity():
    h = zero_fn(3)
    w, val = prox(h, [1.0, -2.0, 0.5], 0.3)
    np.testing.assert_allclose(w, [1.0, -2.0, 0.5])
    assert val == 0.0
