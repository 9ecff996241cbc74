"""Discrete non-autonomous Cauchy problem u' + A(t)u = f, u(0) = u0.

The representation solver works with w = A(·)u(·) and the causal operators

    (R u0)(t) = A(t) e^{−tA(t)} u0
    (S f)(t)  = ∫_0^t A(t) e^{−(t−s)A(t)} f(s) ds
    (Q g)(t)  = ∫_0^t A(t)² e^{−(t−s)A(t)} (A(s)^{-1} − A(t)^{-1}) g(s) ds

so that (Id − Q)w = Sf + Ru0.  Data are piecewise constant in time: cell j
is [t_{j−1}, t_j] and carries f[j] (right-endpoint sample).  Every cell
integral is then a difference of matrix exponentials, so S and R are exact.
Inside Q the factor A(s)^{-1} is frozen at the cell midpoint and the unknown
w is frozen at the left end of the cell, which makes the discrete Q strictly
causal and Id − Q block unit-lower-triangular.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .discretizer import OperatorFamily, lp_norm
from .errors import ContractionError, DomainError, NumericalError, SingularityError
from .sectorial import WeightedSpace, real_interp_norm

logger = logging.getLogger(__name__)

EIG_COND_MAX = 1e8


@dataclass
class NacpProblem:
    family: OperatorFamily
    u0: np.ndarray
    f: np.ndarray            # (m+1, n) node samples; cell j uses f[j]
    q_time: float = 2.0

    def __post_init__(self):
        n = self.family.n
        self.u0 = np.asarray(self.u0, dtype=float).reshape(n)
        f = np.asarray(self.f, dtype=float)
        if f.ndim == 1 and n == 1:
            f = f[:, None]
        if f.shape != (len(self.family.time_grid), n):
            raise DomainError(f"f has shape {f.shape}, expected {(len(self.family.time_grid), n)}")
        self.f = f

    @property
    def p_space(self):
        return self.family.p

    @property
    def T(self):
        return self.family.T


class SemigroupKit:
    """Evaluates Σ_j [A](e^{−a_j A} − e^{−b_j A}) y_j for one matrix A."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        self.A = A
        self.n = A.shape[0]
        self.mode = "eig"
        if np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
            lam, V = np.linalg.eigh(0.5 * (A + A.T))
            self.lam, self.V, self.Vi = lam, V, V.T
        else:
            lam, V = np.linalg.eig(A)
            cond = np.linalg.cond(V)
            if not np.isfinite(cond) or cond > EIG_COND_MAX:
                self.mode = "expm"
                self._cache = {}
            else:
                self.lam, self.V, self.Vi = lam, V, np.linalg.inv(V)
        try:
            self.Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError as exc:
            raise SingularityError("singular A(t); apply a shift") from exc
        if not np.all(np.isfinite(self.Ainv)):
            raise SingularityError("singular A(t); apply a shift")

    def _E(self, tau):
        key = float(tau)
        if key not in self._cache:
            self._cache[key] = sla.expm(-tau * self.A)
        return self._cache[key]

    def coef(self, a, b, times_A):
        """Diagonal factors (e^{−aλ} − e^{−bλ})[·λ], shape (k, n)."""
        a = np.asarray(a, float)[:, None]
        b = np.asarray(b, float)[:, None]
        lam = self.lam[None, :]
        c = -np.exp(-a * lam) * np.expm1(-(b - a) * lam)
        return c * lam if times_A else c

    def cell_sum(self, a, b, Y, times_A=False):
        """Σ_j [A](e^{−a_j A} − e^{−b_j A}) Y[j]; Y has shape (k, n)."""
        if len(a) == 0:
            return np.zeros(self.n)
        if self.mode == "eig":
            Z = Y @ self.Vi.T                       # rows: V^{-1} y_j
            s = (self.coef(a, b, times_A) * Z).sum(axis=0)
            out = self.V @ s
            return out.real if np.iscomplexobj(out) else out
        acc = np.zeros(self.n)
        for aj, bj, y in zip(a, b, Y):
            acc += (self._E(aj) - self._E(bj)) @ y
        return self.A @ acc if times_A else acc

    def cell_sum_T(self, a, b, y, times_A=False):
        """Rows ([A](e^{−a_j A} − e^{−b_j A}))ᵀ y for every j, shape (k, n)."""
        if self.mode == "eig":
            z = self.V.T @ y
            out = (self.coef(a, b, times_A) * z[None, :]) @ self.Vi
            return out.real if np.iscomplexobj(out) else out
        rows = []
        for aj, bj in zip(a, b):
            M = self._E(aj) - self._E(bj)
            if times_A:
                M = self.A @ M
            rows.append(M.T @ y)
        return np.array(rows).reshape(len(a), self.n)

    def expmv(self, tau, y):
        if self.mode == "eig":
            out = self.V @ (np.exp(-tau * self.lam) * (self.Vi @ y))
            return out.real if np.iscomplexobj(out) else out
        return self._E(tau) @ y


class QOperator:
    """Matrix-free discrete Q: cell values (m, n) -> node values (m+1, n)."""

    def __init__(self, family: OperatorFamily, kits=None):
        self.family = family
        t = family.time_grid
        self.t = t
        self.m = len(t) - 1
        self.n = family.n
        self.kits = kits if kits is not None else [SemigroupKit(A) for A in family.matrices]
        mids = 0.5 * (t[1:] + t[:-1])
        self.mid_inv = np.stack([np.linalg.inv(family.at(s)) for s in mids])
        self.dt = np.diff(t)
        self.autonomous = family.is_autonomous() and (
            family.generator is None
            or all(np.array_equal(family.at(s), family.matrices[0]) for s in mids))

    def _ab(self, i):
        ti = self.t[i]
        return ti - self.t[1:i + 1], ti - self.t[:i]

    def row(self, i, g):
        """(Qg)(t_i) from cell values g[0..i−1] (cells 1..i)."""
        if i == 0 or self.autonomous:
            return np.zeros(self.n)
        kit = self.kits[i]
        g = np.asarray(g[:i])
        Y = np.einsum("jkl,jl->jk", self.mid_inv[:i], g) - g @ kit.Ainv.T
        a, b = self._ab(i)
        return kit.cell_sum(a, b, Y, times_A=True)

    def matvec(self, g):
        g = np.asarray(g).reshape(self.m, self.n)
        out = np.zeros((self.m + 1, self.n))
        for i in range(1, self.m + 1):
            out[i] = self.row(i, g)
        return out

    def rmatvec(self, y):
        """Plain transpose: node values (m+1, n) -> cell values (m, n)."""
        y = np.asarray(y).reshape(self.m + 1, self.n)
        out = np.zeros((self.m, self.n))
        if self.autonomous:
            return out
        for i in range(1, self.m + 1):
            kit = self.kits[i]
            a, b = self._ab(i)
            Z = kit.cell_sum_T(a, b, y[i], times_A=True)          # (i, n)
            out[:i] += np.einsum("jlk,jl->jk", self.mid_inv[:i], Z) - Z @ kit.Ainv
        return out

    def block(self, i, j):
        """Explicit n×n block mapping cell j (1-based) to node i."""
        if not 1 <= j <= i <= self.m:
            return np.zeros((self.n, self.n))
        kit = self.kits[i]
        a, b = self.t[i] - self.t[j], self.t[i] - self.t[j - 1]
        D = self.mid_inv[j - 1] - kit.Ainv
        if kit.mode == "eig":
            c = kit.coef([a], [b], True)[0]
            out = (kit.V * c[None, :]) @ (kit.Vi @ D)
            return out.real if np.iscomplexobj(out) else out
        return kit.A @ (kit._E(a) - kit._E(b)) @ D

    def dense(self):
        """(m·n)×(m·n) matrix from cells 1..m to nodes 1..m."""
        m, n = self.m, self.n
        Q = np.zeros((m * n, m * n))
        for i in range(1, m + 1):
            for j in range(1, i + 1):
                Q[(i - 1) * n:i * n, (j - 1) * n:j * n] = self.block(i, j)
        return Q

    def norm(self, q_time=2.0, iters=300, tol=1e-10, seed=0, dense_max=4000, svd_max=600):
        """(lower, upper) bounds of ‖Q‖ on L^q(ℓ^p_w) with cell weights Δt.

        For p = q = 2 the norm is a singular value of the Δt⊗w-scaled matrix:
        dense SVD for small systems, Lanczos (svds) up to ``dense_max``
        unknowns and matrix-free power iteration beyond.
        """
        if self.autonomous:
            return 0.0, 0.0
        p = self.family.p
        w = self.family.weights
        dt = self.dt
        hilbert = p == 2 and q_time == 2

        def mixed(v):
            return _mixed(v, dt, w, p, q_time)

        N = self.m * self.n
        if N <= dense_max:
            Q = self.dense()
            if hilbert:
                s = np.sqrt(np.kron(dt, w))
                B = s[:, None] * Q / s[None, :]
                if N <= svd_max:
                    v = float(np.linalg.norm(B, 2))
                else:
                    v0 = np.random.default_rng(seed).standard_normal(N)
                    v = float(spla.svds(B, k=1, v0=v0, return_singular_vectors=False,
                                        tol=tol)[0])
                return v, v
            return _mixed_norm_bounds(Q, dt, w, p, q_time, mixed, WeightedSpace(w, p))
        # matrix-free power iteration on Q*Q in the Δt⊗w inner product
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((self.m, self.n))
        D = dt[:, None] * w[None, :]
        best, prev = 0.0, 0.0
        for _ in range(iters):
            g /= mixed(g)
            y = self.matvec(g)[1:]
            best = max(best, mixed(y))
            if hilbert:
                g = self.rmatvec(np.vstack([np.zeros(self.n), D * y])) / D
            else:
                g = y.copy()
            if abs(best - prev) <= tol * best:
                break
            prev = best
        return best, (best if hilbert else np.nan)


def _mixed(v, dt, w, p, q):
    norms = np.array([lp_norm(w, p, x) for x in v])
    if np.isinf(q):
        return float(norms.max()) if len(norms) else 0.0
    return float(np.sum(dt * norms ** q) ** (1.0 / q))


def _mixed_norm_bounds(Q, dt, w, p, q, mixed, space):
    """Bounds for general (p, q): Boyd-style lower bound, block-norm upper bound."""
    m, n = len(dt), len(w)
    from .sectorial import op_norm_bounds
    # scalar matrix of block norms bounds ‖Q‖ from above (Minkowski/Young)
    Bn = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            Bn[i, j] = op_norm_bounds(Q[i * n:(i + 1) * n, j * n:(j + 1) * n], space)[1]
    tspace = WeightedSpace(dt, q)
    up = op_norm_bounds(Bn, tspace)[1]
    rng = np.random.default_rng(0)
    lo = 0.0
    s = np.sqrt(np.kron(dt, w))
    B = s[:, None] * Q / s[None, :]
    U, S, Vt = np.linalg.svd(B)
    cands = [Vt[0] / s] + [rng.standard_normal(m * n) for _ in range(10)]
    for x in cands:
        for _ in range(30):
            y = Q @ x
            lo = max(lo, mixed(y.reshape(m, n)) / mixed(x.reshape(m, n)))
            x = Q.T @ (np.sign(y) * np.abs(y) ** (p - 1)) if np.any(y) else x
            if not np.any(x):
                break
    return float(min(lo, up)), float(up)


@dataclass
class MRSolveResult:
    t: np.ndarray
    u: np.ndarray
    udot: np.ndarray
    Au: np.ndarray
    q_norm_table: Optional[tuple] = None
    neumann_iters: int = 0
    c_mr: Optional[float] = None
    c_mr_flag: Optional[str] = None
    norms: dict = dc_field(default_factory=dict)
    defect: float = 0.0


def assemble_R(family: OperatorFamily, u0, kits=None):
    """(Ru0)(t_i) = A(t_i) e^{−t_i A(t_i)} u0."""
    kits = kits or [SemigroupKit(A) for A in family.matrices]
    u0 = np.asarray(u0, float).reshape(family.n)
    out = np.empty((len(family.time_grid), family.n))
    for i, (t, kit) in enumerate(zip(family.time_grid, kits)):
        out[i] = kit.A @ kit.expmv(t, u0)
    return out


def assemble_S(family: OperatorFamily, f, kits=None):
    """(Sf)(t_i) = Σ_{j≤i} (e^{−(t_i−t_j)A_i} − e^{−(t_i−t_{j−1})A_i}) f_j, exact."""
    kits = kits or [SemigroupKit(A) for A in family.matrices]
    t = family.time_grid
    f = np.asarray(f, float).reshape(len(t), family.n)
    out = np.zeros((len(t), family.n))
    for i in range(1, len(t)):
        out[i] = kits[i].cell_sum(t[i] - t[1:i + 1], t[i] - t[:i], f[1:i + 1])
    return out


def assemble_Q(family: OperatorFamily, kits=None) -> QOperator:
    return QOperator(family, kits)


def mixed_norm(traj, family: OperatorFamily, q_time, p_space=None):
    """(Σ_{i≥1} Δt_i ‖traj(t_i)‖_p^q)^{1/q} (right-endpoint rule)."""
    p = family.p if p_space is None else p_space
    traj = np.asarray(traj, float).reshape(len(family.time_grid), -1)
    return _mixed(traj[1:], np.diff(family.time_grid), family.weights, p, q_time)


def solve_at(problem: NacpProblem, strategy="direct_block", max_iter=None, tol=1e-14,
             q_norm=None) -> MRSolveResult:
    """Solve (Id − Q)w = Sf + Ru0 and recover u = A^{-1}w, u' = f − w."""
    fam = problem.family
    kits = [SemigroupKit(A) for A in fam.matrices]
    Q = QOperator(fam, kits)
    rhs = assemble_S(fam, problem.f, kits) + assemble_R(fam, problem.u0, kits)
    m = Q.m
    iters = 0
    table = None
    if strategy == "direct_block":
        w = np.zeros_like(rhs)
        w[0] = rhs[0]
        for i in range(1, m + 1):
            w[i] = rhs[i] + Q.row(i, w[:i])
    elif strategy == "neumann":
        qn = Q.norm(problem.q_time) if q_norm is None else q_norm
        table = tuple(qn)
        if qn[0] >= 1:
            raise ContractionError(
                f"‖Q‖ ≥ {qn[0]:.3g}; Neumann series diverges, run shift_search for μ")
        max_iter = m + 2 if max_iter is None else max_iter
        w = rhs.copy()
        scale = max(np.abs(rhs).max(), 1e-300)
        for iters in range(1, max_iter + 1):
            w_new = rhs + Q.matvec(w[:-1])
            delta = np.abs(w_new - w).max()
            w = w_new
            if delta <= tol * scale:
                break
        else:
            raise ContractionError("Neumann iteration did not converge")
    else:
        raise DomainError(f"unknown strategy {strategy!r}")
    u = np.stack([kit.Ainv @ wi for kit, wi in zip(kits, w)])
    u[0] = problem.u0
    udot = problem.f - w
    Au = np.einsum("ikl,il->ik", fam.matrices, u)
    defect = float(np.abs(udot + Au - problem.f).max())
    res = MRSolveResult(t=fam.time_grid.copy(), u=u, udot=udot, Au=w, q_norm_table=table,
                        neumann_iters=iters, defect=defect)
    c, flag, norms = mr_constant(problem, res)
    res.c_mr, res.c_mr_flag, res.norms = c, flag, norms
    return res


def mr_constant(problem: NacpProblem, result: MRSolveResult):
    """(‖u'‖ + ‖Au‖) / (‖f‖ + ‖u0‖_{(D(A(0)), X)_{1/q,q}}) with mixed norms."""
    fam, q = problem.family, problem.q_time
    n_ud = mixed_norm(result.udot, fam, q)
    n_au = mixed_norm(result.Au, fam, q)
    n_f = mixed_norm(problem.f, fam, q)
    space = WeightedSpace(fam.weights, fam.p)
    n_u0 = 0.0
    if np.any(problem.u0):
        theta = 1.0 / q if np.isfinite(q) else 1e-9
        n_u0 = real_interp_norm(fam.matrices[0], space, theta, q, problem.u0, couple="DX")
    norms = {"udot": n_ud, "Au": n_au, "f": n_f, "u0": n_u0}
    den = n_f + n_u0
    if den == 0:
        return None, "undefined", norms
    return (n_ud + n_au) / den, None, norms


def cn_oracle(problem: NacpProblem, refine: int = 8):
    """Crank–Nicolson with midpoint-frozen A on a refine-times finer grid."""
    if refine < 1:
        raise DomainError("refine must be >= 1")
    fam = problem.family
    t = fam.time_grid
    n = fam.n
    I = np.eye(n)
    u = problem.u0.copy()
    out = np.empty((len(t), n))
    out[0] = u
    for j in range(1, len(t)):
        h = (t[j] - t[j - 1]) / refine
        fj = problem.f[j]
        for k in range(refine):
            A = fam.at(t[j - 1] + (k + 0.5) * h)
            try:
                u = np.linalg.solve(I + 0.5 * h * A, (I - 0.5 * h * A) @ u + h * fj)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"Crank–Nicolson solve failed at step {j}") from exc
        out[j] = u
    return out
