"""Proper nondecreasing epi-polyhedral functions and their calculus.

A function here is h(z) = max_j (<a_j, z> - alpha_j) on the polyhedral
domain {z : <b_i, z> <= beta_i}, with all a_j, b_i >= 0 so that h is
nondecreasing.  The module provides evaluation, active index sets,
proximal points / Moreau envelopes, nonnegative multiplier representations
of subgradients, conjugate values, and orthonormal bases of the critical
cone K_{h*} -- the ingredients of the solution-mapping Jacobian.

Besides the generic max-pieces representation (`EpiPolyhedralFn`), two
vectorized structured forms cover the shapes that dominate the built-in
problems: the indicator of the nonpositive orthant and weighted sums of
coordinate-pair maxima (the l1 / hinge encodings).  `SeparableSum` composes
independent blocks over disjoint coordinate slices.  Structured forms carry
closed-form prox rules; the generic form solves the epigraph QP.

Infinity is represented by `math.inf`, never by a large finite float.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (InfeasibleFunctionError, InfeasiblePointError,
                     InvalidDualError, NotASubgradientError)
from .qp import DenseQP, solve_qp

INF = math.inf

DEFAULT_TOL_ACT = 1e-6


@dataclass
class ActiveSets:
    """Active domain rows and max pieces at a point (global indices)."""

    I_active: np.ndarray
    J_active: np.ndarray
    tol_act: float


@dataclass
class MultiplierRepresentation:
    """Nonnegative weights (sigma, tau) with u = sum sigma_j a_j + sum tau_i b_i.

    ``sigma`` aligns with ActiveSets.J_active and sums to one per separable
    block (a single block for a plain function); ``tau`` aligns with
    I_active.  ``degenerate`` flags a boundary representation: some active
    index carries a (numerically) zero weight, the practical signal that the
    relative interior condition fails at this point.
    """

    sigma: np.ndarray
    tau: np.ndarray
    residual: float
    block_sigma_sums: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def degenerate(self):
        tol = 1e-9
        if self.sigma.size and np.min(self.sigma) <= tol:
            return True
        if self.tau.size and np.min(self.tau) <= tol:
            return True
        return False


@dataclass
class ConeBasis:
    """Orthonormal basis B_z of K_{h*}(p, z) (the row space of the reduced
    critical-cone system); rank == number of columns."""

    B_z: np.ndarray
    rank: int


def _check_nonneg(M, what):
    if M.size and np.min(M) < 0:
        raise ValueError(f"{what} must be componentwise nonnegative for a "
                         "nondecreasing function")


class EpiPolyhedralFn:
    """Explicit max-pieces + domain-rows representation."""

    def __init__(self, max_pieces, dom_rows=(), structure=None, name=None):
        pieces = list(max_pieces)
        if not pieces:
            raise ValueError("at least one affine piece is required (h proper)")
        self.A = np.atleast_2d(np.array([np.asarray(a, float).ravel() for a, _ in pieces]))
        self.al = np.array([float(al) for _, al in pieces])
        rows = list(dom_rows)
        s = self.A.shape[1]
        if rows:
            self.B = np.atleast_2d(np.array([np.asarray(b, float).ravel() for b, _ in rows]))
            self.be = np.array([float(be) for _, be in rows])
            if self.B.shape[1] != s:
                raise ValueError("domain rows and pieces disagree on dimension")
        else:
            self.B = np.zeros((0, s))
            self.be = np.zeros(0)
        _check_nonneg(self.A, "piece vectors a_j")
        _check_nonneg(self.B, "domain rows b_i")
        self.s = s
        self.structure = structure
        self.name = name or structure or "epi-polyhedral"

    @property
    def n_pieces(self):
        return self.A.shape[0]

    @property
    def n_rows(self):
        return self.B.shape[0]

    def _check_dim(self, z):
        z = np.asarray(z, float).ravel()
        if z.size != self.s:
            raise ValueError(f"expected dimension {self.s}, got {z.size}")
        return z

    def max_part(self, z):
        return float(np.max(self.A @ z - self.al))

    def evaluate(self, z):
        z = self._check_dim(z)
        if self.n_rows and np.any(self.B @ z - self.be > 0.0):
            return INF
        return self.max_part(z)

    def active_sets(self, z, tol_act=DEFAULT_TOL_ACT):
        z = self._check_dim(z)
        if self.n_rows:
            slack = self.B @ z - self.be
            band = tol_act * (1.0 + np.abs(self.be))
            if np.any(slack > band):
                worst = int(np.argmax(slack - band))
                raise InfeasiblePointError(
                    f"point violates domain row {worst} by {slack[worst]:.3e}")
            I_act = np.flatnonzero(np.abs(slack) <= band)
        else:
            I_act = np.zeros(0, dtype=int)
        vals = self.A @ z - self.al
        hval = float(np.max(vals))
        J_act = np.flatnonzero(hval - vals <= tol_act * (1.0 + abs(hval)))
        return ActiveSets(I_act, J_act, tol_act)

    # -- prox ---------------------------------------------------------------

    def prox(self, z, lam):
        z = self._check_dim(z)
        if lam <= 0:
            raise ValueError("prox parameter must be positive")
        if self.structure == "coordinate_max":
            u = _project_simplex(z / lam)
            w = z - lam * u
            return w, self.max_part(w) + float((w - z) @ (w - z)) / (2 * lam)
        if self.structure == "hinge":
            w = np.where(z > lam, z - lam, np.where(z < 0.0, z, 0.0))
            val = float(np.sum(np.maximum(w, 0.0)))
            return w, val + float((w - z) @ (w - z)) / (2 * lam)
        if self.structure == "zero":
            return z.copy(), float(-self.al[0])
        return self._prox_epigraph_qp(z, lam)

    def _prox_epigraph_qp(self, z, lam):
        s = self.s
        P = np.zeros((s + 1, s + 1))
        P[:s, :s] = np.eye(s) / lam
        q = np.concatenate([-z / lam, [1.0]])
        G = np.zeros((self.n_pieces + self.n_rows, s + 1))
        G[:self.n_pieces, :s] = self.A
        G[:self.n_pieces, s] = -1.0
        h = self.al.copy()
        if self.n_rows:
            G[self.n_pieces:, :s] = self.B
            h = np.concatenate([h, self.be])
        sol = solve_qp(DenseQP(P=P, q=q, G_in=G, h_in=h), tol=1e-10)
        if sol.status == "infeasible":
            raise InfeasibleFunctionError("dom h is empty: epigraph QP infeasible")
        w = sol.primal[:s]
        t = float(sol.primal[s])
        w = self._polish_prox(z, lam, w, t, sol.dual_ineq)
        return w, self.max_part(w) + float((w - z) @ (w - z)) / (2 * lam)

    def _polish_prox(self, z, lam, w, t, duals):
        """Snap the interior-point prox onto its active face by solving the
        face's KKT equalities exactly; fall back to the unpolished point when
        the snap violates a sign or feasibility check."""
        scale = 1.0 + abs(t)
        piece_gap = np.abs(self.A @ w - self.al - t)
        J = np.flatnonzero((piece_gap <= 1e-6 * scale)
                           | (duals[:self.n_pieces] > 1e-8))
        if J.size == 0:
            return w
        if self.n_rows:
            row_gap = np.abs(self.B @ w - self.be)
            I = np.flatnonzero((row_gap <= 1e-6 * (1.0 + np.abs(self.be)))
                               | (duals[self.n_pieces:] > 1e-8))
        else:
            I = np.zeros(0, dtype=int)
        s, kJ, kI = self.s, J.size, I.size
        dim = s + 1 + kJ + kI
        K = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        K[:s, :s] = np.eye(s) / lam
        K[:s, s + 1:s + 1 + kJ] = self.A[J].T
        rhs[:s] = z / lam
        if kI:
            K[:s, s + 1 + kJ:] = self.B[I].T
            K[s + 1 + kJ:, :s] = self.B[I]
            rhs[s + 1 + kJ:] = self.be[I]
        K[s:s + kJ, :s] = self.A[J]
        K[s:s + kJ, s] = -1.0
        rhs[s:s + kJ] = self.al[J]
        K[s + kJ, s + 1:s + 1 + kJ] = 1.0
        rhs[s + kJ] = 1.0
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        w_new, sig = sol[:s], sol[s + 1:s + 1 + kJ]
        tau = sol[s + 1 + kJ:]
        t_new = float(self.max_part(w_new))
        feas_tol = 1e-9 * scale
        if np.min(sig, initial=0.0) < -1e-9 or np.min(tau, initial=0.0) < -1e-9:
            return w
        if self.n_rows and np.max(self.B @ w_new - self.be) > feas_tol:
            return w
        old = self.max_part(w) + float((w - z) @ (w - z)) / (2 * lam)
        new = t_new + float((w_new - z) @ (w_new - z)) / (2 * lam)
        return w_new if new <= old + 1e-9 * (1 + abs(old)) else w

    # -- multipliers ----------------------------------------------------------

    def multiplier_representation(self, z, p, active=None, tol_act=DEFAULT_TOL_ACT,
                                  residual_tol=1e-6):
        z = self._check_dim(z)
        p = self._check_dim(p)
        if active is None:
            active = self.active_sets(z, tol_act)
        M = np.vstack([self.A[active.J_active], self.B[active.I_active]])
        kJ = active.J_active.size
        u = _min_norm_nonneg_representation(M, p, kJ)
        if u is None:
            raise NotASubgradientError("no nonnegative representation found")
        resid = float(np.linalg.norm(M.T @ u - p))
        if resid > residual_tol * (1.0 + np.linalg.norm(p)):
            raise NotASubgradientError(
                f"representation residual {resid:.3e} exceeds tolerance")
        return MultiplierRepresentation(u[:kJ], u[kJ:], resid,
                                        np.array([u[:kJ].sum()]))

    # -- critical cone ----------------------------------------------------------

    def cone_rows(self, active):
        """Rows spanning K_{h*}: piece differences against the first active
        piece plus the active domain rows (reduced system)."""
        J = active.J_active
        rows = []
        if J.size > 1:
            rows.append(self.A[J[1:]] - self.A[J[0]])
        if active.I_active.size:
            rows.append(self.B[active.I_active])
        if rows:
            return np.vstack(rows)
        return np.zeros((0, self.s))

    def critical_cone_basis(self, z, p=None, active=None, tol_act=DEFAULT_TOL_ACT):
        if active is None:
            active = self.active_sets(self._check_dim(z), tol_act)
        return _orthonormal_rowspace(self.cone_rows(active), self.s)

    # -- conjugate ----------------------------------------------------------

    def conjugate_value(self, p):
        """h*(p) via the representation LP; +inf when p has no representation."""
        p = self._check_dim(p)
        kJ, kI = self.n_pieces, self.n_rows
        M = np.vstack([self.A, self.B]) if kI else self.A
        cost = np.concatenate([self.al, self.be])
        A_eq = np.vstack([M.T, np.concatenate([np.ones(kJ), np.zeros(kI)])[None, :]])
        b_eq = np.concatenate([p, [1.0]])
        nvar = kJ + kI
        sol = solve_qp(DenseQP(P=np.zeros((nvar, nvar)), q=cost,
                               G_in=-np.eye(nvar), h_in=np.zeros(nvar),
                               A_eq=A_eq, b_eq=b_eq), tol=1e-9)
        if sol.status != "optimal":
            return INF
        return float(sol.obj)

    def as_generic(self):
        """Same data without the structure tag (forces generic code paths)."""
        pieces = [(self.A[j], self.al[j]) for j in range(self.n_pieces)]
        rows = [(self.B[i], self.be[i]) for i in range(self.n_rows)]
        return EpiPolyhedralFn(pieces, rows)


class NonposIndicator:
    """Indicator of (-inf, 0]^s: one zero max piece, rows b_i = e_i."""

    structure = "nonpos_indicator"

    def __init__(self, s):
        if s < 1:
            raise ValueError("dimension must be positive")
        self.s = int(s)
        self.name = "nonpos_indicator"

    n_pieces = 1

    @property
    def n_rows(self):
        return self.s

    def _check_dim(self, z):
        z = np.asarray(z, float).ravel()
        if z.size != self.s:
            raise ValueError(f"expected dimension {self.s}, got {z.size}")
        return z

    def evaluate(self, z):
        z = self._check_dim(z)
        return 0.0 if np.all(z <= 0.0) else INF

    def active_sets(self, z, tol_act=DEFAULT_TOL_ACT):
        z = self._check_dim(z)
        if np.any(z > tol_act):
            raise InfeasiblePointError("point outside the nonpositive orthant")
        return ActiveSets(np.flatnonzero(np.abs(z) <= tol_act),
                          np.zeros(1, dtype=int), tol_act)

    def prox(self, z, lam):
        z = self._check_dim(z)
        w = np.minimum(z, 0.0)
        return w, float(np.sum(np.maximum(z, 0.0) ** 2)) / (2 * lam)

    def multiplier_representation(self, z, p, active=None, tol_act=DEFAULT_TOL_ACT,
                                  residual_tol=1e-6):
        z = self._check_dim(z)
        p = self._check_dim(p)
        if active is None:
            active = self.active_sets(z, tol_act)
        tau = np.maximum(p[active.I_active], 0.0)
        recon = np.zeros(self.s)
        recon[active.I_active] = tau
        resid = float(np.linalg.norm(recon - p))
        if resid > residual_tol * (1.0 + np.linalg.norm(p)):
            raise NotASubgradientError(
                f"representation residual {resid:.3e} exceeds tolerance")
        return MultiplierRepresentation(np.ones(1), tau, resid, np.ones(1))

    def cone_rows(self, active):
        R = np.zeros((active.I_active.size, self.s))
        R[np.arange(active.I_active.size), active.I_active] = 1.0
        return R

    def critical_cone_basis(self, z, p=None, active=None, tol_act=DEFAULT_TOL_ACT):
        if active is None:
            active = self.active_sets(self._check_dim(z), tol_act)
        B_z = np.zeros((self.s, active.I_active.size))
        B_z[active.I_active, np.arange(active.I_active.size)] = 1.0
        return ConeBasis(B_z, active.I_active.size)

    def conjugate_value(self, p):
        p = self._check_dim(p)
        return 0.0 if np.min(p, initial=0.0) >= -1e-12 * (1 + np.max(np.abs(p), initial=0.0)) else INF

    def as_generic(self):
        pieces = [(np.zeros(self.s), 0.0)]
        rows = [(np.eye(self.s)[i], 0.0) for i in range(self.s)]
        return EpiPolyhedralFn(pieces, rows)


class PairMaxSum:
    """h(z) = sum_i w_i * max(z_i, z_{d+i}) over paired coordinates.

    With G(x, y) = (u, -u) this encodes weighted l1 terms; the per-pair prox,
    representation, and cone basis are all closed-form and vectorized.
    Global piece numbering: pair i owns pieces (2i, 2i+1).
    """

    structure = "pair_max"

    def __init__(self, d, weight=1.0):
        if d < 1:
            raise ValueError("need at least one pair")
        self.d = int(d)
        self.s = 2 * self.d
        w = np.asarray(weight, float)
        self.w = np.full(self.d, float(w)) if w.ndim == 0 else w.ravel().astype(float)
        if self.w.size != self.d:
            raise ValueError("weight must be scalar or length-d")
        if np.min(self.w) <= 0:
            raise ValueError("pair weights must be positive")
        self.name = "pair_max"

    @property
    def n_pieces(self):
        return 2 * self.d

    n_rows = 0

    def _check_dim(self, z):
        z = np.asarray(z, float).ravel()
        if z.size != self.s:
            raise ValueError(f"expected dimension {self.s}, got {z.size}")
        return z

    def _split(self, z):
        return z[:self.d], z[self.d:]

    def evaluate(self, z):
        u, v = self._split(self._check_dim(z))
        return float(np.sum(self.w * np.maximum(u, v)))

    def active_sets(self, z, tol_act=DEFAULT_TOL_ACT):
        u, v = self._split(self._check_dim(z))
        top = self.w * np.maximum(u, v)
        band = tol_act * (1.0 + np.abs(top))
        first = top - self.w * u <= band
        second = top - self.w * v <= band
        J = np.concatenate([2 * np.flatnonzero(first), 2 * np.flatnonzero(second) + 1])
        J.sort()
        return ActiveSets(np.zeros(0, dtype=int), J, tol_act)

    def tie_mask(self, z, tol_act=DEFAULT_TOL_ACT):
        u, v = self._split(self._check_dim(z))
        top = self.w * np.maximum(u, v)
        band = tol_act * (1.0 + np.abs(top))
        return (top - self.w * u <= band) & (top - self.w * v <= band)

    def prox(self, z, lam):
        z = self._check_dim(z)
        if lam <= 0:
            raise ValueError("prox parameter must be positive")
        u, v = self._split(z)
        t = self.w * lam
        hi = u - v > t
        lo = v - u > t
        mid = ~(hi | lo)
        w1 = np.where(hi, u - t, np.where(lo, u, 0.0))
        w2 = np.where(hi, v, np.where(lo, v - t, 0.0))
        tie = (u + v - t) / 2.0
        w1 = np.where(mid, tie, w1)
        w2 = np.where(mid, tie, w2)
        wvec = np.concatenate([w1, w2])
        val = float(np.sum(self.w * np.maximum(w1, w2)))
        return wvec, val + float((wvec - z) @ (wvec - z)) / (2 * lam)

    def multiplier_representation(self, z, p, active=None, tol_act=DEFAULT_TOL_ACT,
                                  residual_tol=1e-6):
        z = self._check_dim(z)
        p = self._check_dim(p)
        if active is None:
            active = self.active_sets(z, tol_act)
        p1, p2 = self._split(p)
        act1 = np.isin(2 * np.arange(self.d), active.J_active)
        act2 = np.isin(2 * np.arange(self.d) + 1, active.J_active)
        s1 = np.where(act1, np.maximum(p1 / self.w, 0.0), 0.0)
        s2 = np.where(act2, np.maximum(p2 / self.w, 0.0), 0.0)
        recon = np.concatenate([self.w * s1, self.w * s2])
        resid = float(np.linalg.norm(recon - p))
        sums = s1 + s2
        if resid > residual_tol * (1.0 + np.linalg.norm(p)) or \
                np.max(np.abs(sums - 1.0)) > residual_tol * 10:
            raise NotASubgradientError("pair weights do not form a representation")
        # align sigma with sorted global piece indices
        idx = np.concatenate([2 * np.flatnonzero(act1), 2 * np.flatnonzero(act2) + 1])
        order = np.argsort(idx)
        sig_all = np.concatenate([s1[act1], s2[act2]])[order]
        return MultiplierRepresentation(sig_all, np.zeros(0), resid, sums)

    def cone_rows(self, active):
        ties = np.flatnonzero(np.isin(2 * np.arange(self.d), active.J_active)
                              & np.isin(2 * np.arange(self.d) + 1, active.J_active))
        R = np.zeros((ties.size, self.s))
        R[np.arange(ties.size), ties] = self.w[ties]
        R[np.arange(ties.size), self.d + ties] = -self.w[ties]
        return R

    def critical_cone_basis(self, z, p=None, active=None, tol_act=DEFAULT_TOL_ACT):
        if active is None:
            active = self.active_sets(self._check_dim(z), tol_act)
        ties = np.flatnonzero(np.isin(2 * np.arange(self.d), active.J_active)
                              & np.isin(2 * np.arange(self.d) + 1, active.J_active))
        B_z = np.zeros((self.s, ties.size))
        r = 1.0 / np.sqrt(2.0)
        B_z[ties, np.arange(ties.size)] = r
        B_z[self.d + ties, np.arange(ties.size)] = -r
        return ConeBasis(B_z, ties.size)

    def conjugate_value(self, p):
        p1, p2 = self._split(self._check_dim(p))
        scale = 1.0 + np.max(np.abs(p), initial=0.0)
        if np.min(np.concatenate([p1, p2]), initial=0.0) < -1e-9 * scale:
            return INF
        if np.max(np.abs(p1 + p2 - self.w)) > 1e-9 * scale:
            return INF
        return 0.0

    def as_generic(self):
        blocks = []
        idx = []
        for i in range(self.d):
            blocks.append(EpiPolyhedralFn(
                [(np.array([self.w[i], 0.0]), 0.0), (np.array([0.0, self.w[i]]), 0.0)]))
            idx.append(np.array([i, self.d + i]))
        return SeparableSum(blocks, idx, s=self.s)


class SeparableSum:
    """Sum of independent epi-polyhedral blocks over disjoint index slices."""

    structure = "separable_sum"

    def __init__(self, blocks, indices, s=None):
        self.blocks = list(blocks)
        self.indices = [np.asarray(ix, dtype=int).ravel() for ix in indices]
        if len(self.blocks) != len(self.indices):
            raise ValueError("blocks and indices must pair up")
        counts = np.concatenate(self.indices) if self.indices else np.zeros(0, int)
        if s is None:
            s = counts.size
        if np.unique(counts).size != counts.size or counts.size != s:
            raise ValueError("indices must partition range(s)")
        for blk, ix in zip(self.blocks, self.indices):
            if blk.s != ix.size:
                raise ValueError("block dimension does not match its index slice")
        self.s = int(s)
        self.name = "separable_sum"
        self._J_off = np.cumsum([0] + [b.n_pieces for b in self.blocks])
        self._I_off = np.cumsum([0] + [b.n_rows for b in self.blocks])

    @property
    def n_pieces(self):
        return int(self._J_off[-1])

    @property
    def n_rows(self):
        return int(self._I_off[-1])

    def _check_dim(self, z):
        z = np.asarray(z, float).ravel()
        if z.size != self.s:
            raise ValueError(f"expected dimension {self.s}, got {z.size}")
        return z

    def evaluate(self, z):
        z = self._check_dim(z)
        total = 0.0
        for blk, ix in zip(self.blocks, self.indices):
            val = blk.evaluate(z[ix])
            if val == INF:
                return INF
            total += val
        return total

    def active_sets(self, z, tol_act=DEFAULT_TOL_ACT):
        z = self._check_dim(z)
        I_parts, J_parts = [], []
        for k, (blk, ix) in enumerate(zip(self.blocks, self.indices)):
            act = blk.active_sets(z[ix], tol_act)
            I_parts.append(act.I_active + self._I_off[k])
            J_parts.append(act.J_active + self._J_off[k])
        return ActiveSets(np.concatenate(I_parts), np.concatenate(J_parts), tol_act)

    def _block_active(self, active, k):
        lo, hi = self._J_off[k], self._J_off[k + 1]
        J = active.J_active[(active.J_active >= lo) & (active.J_active < hi)] - lo
        lo, hi = self._I_off[k], self._I_off[k + 1]
        I = active.I_active[(active.I_active >= lo) & (active.I_active < hi)] - lo
        return ActiveSets(I, J, active.tol_act)

    def prox(self, z, lam):
        z = self._check_dim(z)
        w = np.empty(self.s)
        total = 0.0
        for blk, ix in zip(self.blocks, self.indices):
            wb, vb = blk.prox(z[ix], lam)
            w[ix] = wb
            total += vb
        return w, total

    def multiplier_representation(self, z, p, active=None, tol_act=DEFAULT_TOL_ACT,
                                  residual_tol=1e-6):
        z = self._check_dim(z)
        p = self._check_dim(p)
        if active is None:
            active = self.active_sets(z, tol_act)
        sig, tau, sums = [], [], []
        resid2 = 0.0
        for k, (blk, ix) in enumerate(zip(self.blocks, self.indices)):
            rep = blk.multiplier_representation(z[ix], p[ix], self._block_active(active, k),
                                                tol_act, residual_tol)
            sig.append(rep.sigma)
            tau.append(rep.tau)
            sums.append(rep.block_sigma_sums)
            resid2 += rep.residual ** 2
        return MultiplierRepresentation(np.concatenate(sig), np.concatenate(tau),
                                        math.sqrt(resid2), np.concatenate(sums))

    def critical_cone_basis(self, z, p=None, active=None, tol_act=DEFAULT_TOL_ACT):
        if active is None:
            active = self.active_sets(self._check_dim(z), tol_act)
        cols = []
        for k, (blk, ix) in enumerate(zip(self.blocks, self.indices)):
            cb = blk.critical_cone_basis(None, active=self._block_active(active, k))
            if cb.rank:
                full = np.zeros((self.s, cb.rank))
                full[ix] = cb.B_z
                cols.append(full)
        if cols:
            B_z = np.hstack(cols)
        else:
            B_z = np.zeros((self.s, 0))
        return ConeBasis(B_z, B_z.shape[1])

    def cone_rows(self, active):
        rows = []
        for k, (blk, ix) in enumerate(zip(self.blocks, self.indices)):
            R = blk.cone_rows(self._block_active(active, k))
            if R.shape[0]:
                full = np.zeros((R.shape[0], self.s))
                full[:, ix] = R
                rows.append(full)
        return np.vstack(rows) if rows else np.zeros((0, self.s))

    def conjugate_value(self, p):
        p = self._check_dim(p)
        total = 0.0
        for blk, ix in zip(self.blocks, self.indices):
            val = blk.conjugate_value(p[ix])
            if val == INF:
                return INF
            total += val
        return total

    def as_generic(self):
        return self


# -- module-level operations (dispatch on the function object) --------------


def evaluate(h, z):
    """h(z), with +inf outside dom h (exact sign test on the rows)."""
    return h.evaluate(np.asarray(z, float))


def active_sets(h, z, tol_act=DEFAULT_TOL_ACT):
    """Active rows/pieces within a relative tolerance band around z."""
    return h.active_sets(np.asarray(z, float), tol_act)


def prox(h, z, lam):
    """Proximal point w of h at z with parameter lam and the envelope value
    e_lam h(z) = h(w) + |w - z|^2 / (2 lam)."""
    return h.prox(np.asarray(z, float), float(lam))


def moreau_gradient(h, z, lam):
    """Gradient (z - w)/lam of the Moreau envelope; nonnegative for
    nondecreasing h."""
    z = np.asarray(z, float)
    w, _ = h.prox(z, float(lam))
    return (z - w) / float(lam)


def multiplier_representation(h, z, p, active=None, tol_act=DEFAULT_TOL_ACT):
    """Minimum-norm nonnegative representation of p in span of active rows."""
    return h.multiplier_representation(np.asarray(z, float), np.asarray(p, float),
                                       active, tol_act)


def critical_cone_basis(h, z, p=None, active=None, tol_act=DEFAULT_TOL_ACT):
    """Orthonormal basis of K_{h*}(p, z) under the reduced (all-active)
    cone system."""
    return h.critical_cone_basis(z, p, active, tol_act)


def conjugate_value(h, p):
    """h*(p), +inf when p is not representable (raises nothing; callers that
    need an error use `require_conjugate_value`)."""
    return h.conjugate_value(np.asarray(p, float))


def require_conjugate_value(h, p):
    val = conjugate_value(h, p)
    if val == INF:
        raise InvalidDualError("dual vector outside dom h*")
    return val


# -- helpers -----------------------------------------------------------------


def _orthonormal_rowspace(R, s, rtol=1e-10):
    """Orthonormal basis of the row space of R as columns of an s x r matrix."""
    if R.shape[0] == 0:
        return ConeBasis(np.zeros((s, 0)), 0)
    _, sv, Vt = np.linalg.svd(R, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return ConeBasis(np.zeros((s, 0)), 0)
    r = int(np.sum(sv > rtol * sv[0]))
    return ConeBasis(Vt[:r].T.copy(), r)


def _project_simplex(v):
    """Euclidean projection onto the unit simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    cond = u - (css - 1.0) / idx > 0
    rho = int(np.max(idx[cond]))
    theta = (css[rho - 1] - 1.0) / rho
    return np.maximum(v - theta, 0.0)


def _min_norm_nonneg_representation(M, p, kJ):
    """Minimum-norm u = (sigma, tau) >= 0 with M'u ~= p and sum(sigma) = 1.

    Phase 1 minimizes the fit residual by QP; phase 2 picks the minimum-norm
    solution on the recovered support via least squares.  Returns None when
    the phase-1 QP fails outright.
    """
    k = M.shape[0]
    e_sig = np.concatenate([np.ones(kJ), np.zeros(k - kJ)])
    qp1 = DenseQP(P=M @ M.T, q=-(M @ p), G_in=-np.eye(k), h_in=np.zeros(k),
                  A_eq=e_sig[None, :], b_eq=[1.0])
    sol = solve_qp(qp1, tol=1e-10)
    if sol.status == "infeasible":
        return None
    u = np.maximum(sol.primal, 0.0)
    ssum = u[:kJ].sum()
    if ssum > 0:
        u[:kJ] /= ssum
    # support refinement: exact least-squares fit, then min-norm on support
    supp = np.flatnonzero(u > 1e-9)
    if supp.size:
        Ms = M[supp]
        ns = supp.size
        K = np.zeros((ns + 1, ns + 1))
        K[:ns, :ns] = Ms @ Ms.T
        K[:ns, ns] = e_sig[supp]
        K[ns, :ns] = e_sig[supp]
        rhs = np.concatenate([Ms @ p, [1.0]])
        try:
            us = np.linalg.solve(K, rhs)[:ns]
        except np.linalg.LinAlgError:
            us, *_ = np.linalg.lstsq(K, rhs, rcond=None)
            us = us[:ns]
        if np.all(us >= -1e-12):
            phat = Ms.T @ us
            E = np.vstack([Ms.T, e_sig[supp][None, :]])
            rhs2 = np.concatenate([phat, [1.0]])
            u_min, *_ = np.linalg.lstsq(E, rhs2, rcond=None)
            if np.all(u_min >= -1e-12):
                us = u_min
            refined = np.zeros(k)
            refined[supp] = np.maximum(us, 0.0)
            if np.linalg.norm(M.T @ refined - p) <= np.linalg.norm(M.T @ u - p) + 1e-12:
                u = refined
    return u


# -- presets and declarative construction ------------------------------------


def nonpos_indicator(s):
    """Indicator of the nonpositive orthant in R^s."""
    return NonposIndicator(s)


def l1_pair(d, weight=1.0):
    """Weighted sum of pair maxima: composed with G = (u, -u) this is the
    weighted l1 norm."""
    return PairMaxSum(d, weight)


def coordinate_max(s):
    """Plain max of s coordinates."""
    return EpiPolyhedralFn([(np.eye(s)[j], 0.0) for j in range(s)],
                           structure="coordinate_max")


def hinge(s=1):
    """Sum of per-coordinate hinges max(0, z_i)."""
    blk = [EpiPolyhedralFn([(np.zeros(1), 0.0), (np.ones(1), 0.0)], structure="hinge")
           for _ in range(s)]
    if s == 1:
        return blk[0]
    return SeparableSum(blk, [np.array([i]) for i in range(s)], s=s)


def zero_fn(s):
    """The zero function on R^s (a single zero piece, empty domain rows)."""
    return EpiPolyhedralFn([(np.zeros(s), 0.0)], structure="zero")


_PRESETS = {
    "nonpos_indicator": lambda cfg: nonpos_indicator(cfg["dim"]),
    "l1_pair": lambda cfg: l1_pair(cfg["dim"], cfg.get("weight", 1.0)),
    "max": lambda cfg: coordinate_max(cfg["dim"]),
    "hinge": lambda cfg: hinge(cfg.get("dim", 1)),
    "zero": lambda cfg: zero_fn(cfg["dim"]),
}


def from_config(cfg):
    """Build a function from a declarative config block.

    Either ``{"preset": name, "dim": s, ...}`` or an explicit
    ``{"max_pieces": [{"a": [...], "alpha": ...}], "dom_rows": [{"b": [...],
    "beta": ...}]}`` description.
    """
    if "preset" in cfg:
        name = cfg["preset"]
        if name not in _PRESETS:
            raise ValueError(f"unknown preset {name!r}; choices: {sorted(_PRESETS)}")
        return _PRESETS[name](cfg)
    if "max_pieces" not in cfg:
        raise ValueError("config needs 'preset' or 'max_pieces'")
    pieces = [(np.asarray(pc["a"], float), float(pc.get("alpha", 0.0)))
              for pc in cfg["max_pieces"]]
    rows = [(np.asarray(rw["b"], float), float(rw.get("beta", 0.0)))
            for rw in cfg.get("dom_rows", [])]
    return EpiPolyhedralFn(pieces, rows)
