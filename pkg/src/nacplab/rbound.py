"""Randomized-norm estimators: Rademacher averages, square functions,
Khintchine constants and Gaussian domination of discrete heat kernels."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np

from .discretizer import OperatorFamily
from .errors import DomainError, UndefinedRatioError
from .sectorial import WeightedSpace, lambda_grid, mat_exp, op_norm_bounds, resolvent, spectrum

EXACT_MAX = 14


def sign_patterns(k):
    """All 2^k Rademacher sign vectors as a (2^k, k) array."""
    if k > EXACT_MAX:
        raise DomainError(f"exact enumeration limited to k <= {EXACT_MAX}")
    return np.array(list(itertools.product((1.0, -1.0), repeat=k)))


def _avg_norm(signs, Y, space):
    S = signs @ Y
    return float(np.mean([space.norm(row) for row in S]))


def _signs(k, mode, seed, trials):
    if mode == "exact":
        return sign_patterns(k)
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        return rng.choice((-1.0, 1.0), size=(trials, k))
    raise DomainError(f"unknown mode {mode!r}")


def rademacher_ratio(ops, vecs, space: WeightedSpace, mode="exact", seed=0, trials=100_000):
    """E‖Σ ε_j T_j x_j‖ / E‖Σ ε_j x_j‖ by enumeration or Monte Carlo."""
    k = len(ops)
    if k != len(vecs) or k == 0:
        raise DomainError("need equally many (nonzero count) operators and vectors")
    X = np.array([np.asarray(x) for x in vecs])
    Y = np.array([np.atleast_2d(T) @ x for T, x in zip(ops, X)])
    signs = _signs(k, mode, seed, trials)
    den = _avg_norm(signs, X, space)
    if den == 0:
        raise UndefinedRatioError("Rademacher average of the vectors vanishes")
    return _avg_norm(signs, Y, space) / den


def rq_square_ratio(ops, vecs, space: WeightedSpace, q):
    """‖(Σ|T_j f_j|^q)^{1/q}‖_p / ‖(Σ|f_j|^q)^{1/q}‖_p with pointwise sums."""
    if q < 1:
        raise DomainError("q must be >= 1")
    F = np.abs(np.array([np.asarray(f) for f in vecs]))
    TF = np.abs(np.array([np.atleast_2d(T) @ f for T, f in zip(ops, vecs)]))

    def sq(M):
        return M.max(axis=0) if np.isinf(q) else np.sum(M ** q, axis=0) ** (1.0 / q)
    den = space.norm(sq(F))
    if den == 0:
        raise UndefinedRatioError("square function of the inputs vanishes")
    return space.norm(sq(TF)) / den


def khintchine_check(vecs, space: WeightedSpace = None, p=2.0):
    """(E‖Σ ε_j x_j‖ / ‖(Σ|x_j|²)^{1/2}‖, its reciprocal) by full enumeration."""
    X = np.array([np.atleast_1d(np.asarray(x, dtype=float)) for x in vecs])
    k = len(X)
    if k > 12:
        raise DomainError("khintchine_check enumerates at most k = 12 terms")
    space = WeightedSpace(np.ones(X.shape[1]), p) if space is None else space
    sf = space.norm(np.sqrt(np.sum(X ** 2, axis=0)))
    if sf == 0:
        raise UndefinedRatioError("all-zero input")
    avg = _avg_norm(sign_patterns(k), X, space)
    return avg / sf, sf / avg


# ------------------------------------------------------------- R-bound search

@dataclass
class RBoundReport:
    mode: str
    estimate: float
    witness: dict
    trials: int
    seed: int
    q: float = None
    k1_bound: float = 0.0
    history: list = dc_field(default_factory=list, repr=False)


def _candidates(family, phi, per_decade=8):
    ev = np.concatenate([spectrum(A) for A in family.matrices])
    lams = lambda_grid(ev, phi, per_decade=per_decade)
    return lams


def r_bound_estimate(family: OperatorFamily, phi, k_max=4, budget=2000, seed=0,
                     restarts=8, per_decade=8, lambdas=None, mode="rademacher",
                     q=None) -> RBoundReport:
    """Greedy/random search for a large Rademacher ratio over T = (1+|λ|)R(λ,A(t)).

    The operator pool is every (λ, t) with λ on the sector_verify grid and t
    on the family grid.  ``estimate`` is a certified lower bound for the
    R-bound of the pool: the best ratio over all evaluated configurations,
    including single operators (whose ratio is the operator norm).
    With ``mode="rq"`` the square-function ratio with exponent q is used.
    """
    if mode not in ("rademacher", "rq"):
        raise DomainError(f"unknown mode {mode!r}")
    if mode == "rq" and (q is None or q < 1):
        raise DomainError("rq mode needs q >= 1")
    space = WeightedSpace(family.weights, family.p)
    lams = _candidates(family, phi, per_decade) if lambdas is None else np.asarray(lambdas)
    pool = [(lam, i) for i in range(len(family.time_grid)) for lam in lams]
    ops = {}

    def ratio(T, X):
        if mode == "rq":
            return rq_square_ratio(T, X, space, q)
        return rademacher_ratio(T, X, space)

    def op(idx):
        if idx not in ops:
            lam, i = pool[idx]
            ops[idx] = (1 + abs(lam)) * resolvent(family.matrices[i], lam, check=False)
        return ops[idx]

    # k = 1: operator norms over the whole pool
    best1, arg1 = -1.0, 0
    for idx in range(len(pool)):
        v = op_norm_bounds(op(idx), space)[0]
        if v > best1:
            best1, arg1 = v, idx
    T1 = op(arg1)
    if family.p == 2:
        s = np.sqrt(space.weights)
        _, _, Vh = np.linalg.svd((s[:, None] * T1) / s[None, :])
        x1 = Vh[0].conj() / s
    else:
        x1 = np.ones(family.n)
    best = best1
    witness = {"lambdas": [complex(pool[arg1][0])], "times": [float(family.time_grid[pool[arg1][1]])],
               "vectors": [x1]}
    trials = len(pool)
    rng = np.random.default_rng(seed)
    cplx = np.iscomplexobj(T1)
    if k_max >= 2:
        per = max(1, budget // restarts)
        for r in range(restarts):
            k = int(rng.integers(2, k_max + 1)) if r % 2 else k_max
            idx = list(rng.integers(0, len(pool), size=k))
            idx[0] = arg1 if r == 0 else idx[0]
            X = rng.standard_normal((k, family.n)) + (1j * rng.standard_normal((k, family.n)) if cplx else 0)
            cur = ratio([op(i) for i in idx], X)
            trials += 1
            for it in range(per):
                j = int(rng.integers(k))
                idx2, X2 = list(idx), X.copy()
                move = rng.random()
                if move < 0.3:
                    idx2[j] = int(rng.integers(len(pool)))
                elif move < 0.5:
                    # align x_j with the top singular direction of T_j
                    Tj = op(idx2[j])
                    s = np.sqrt(space.weights)
                    _, _, Vh = np.linalg.svd((s[:, None] * Tj) / s[None, :])
                    X2[j] = Vh[0].conj() / s * np.linalg.norm(X[j])
                else:
                    step = 0.5 * (1 - it / per) + 0.02
                    X2[j] = X[j] + step * np.linalg.norm(X[j]) / np.sqrt(family.n) * (
                        rng.standard_normal(family.n)
                        + (1j * rng.standard_normal(family.n) if cplx else 0))
                try:
                    val = ratio([op(i) for i in idx2], X2)
                except UndefinedRatioError:
                    continue
                trials += 1
                if val > cur:
                    cur, idx, X = val, idx2, X2
            if cur > best:
                best = cur
                witness = {"lambdas": [complex(pool[i][0]) for i in idx],
                           "times": [float(family.time_grid[pool[i][1]]) for i in idx],
                           "vectors": list(X)}
    return RBoundReport(mode=mode, estimate=float(best), witness=witness,
                        trials=trials, seed=seed, q=q, k1_bound=float(best1))


# ------------------------------------------------------- Gaussian domination

def gaussian_envelope(C, beta, omega1, s, dist, N):
    """C s^{−N/2} e^{ω₁ s} exp(−|x−y|²/(4βs))."""
    dist = np.asarray(dist, dtype=float)
    return C * s ** (-N / 2) * np.exp(omega1 * s) * np.exp(-dist ** 2 / (4 * beta * s))


@dataclass
class GaussianReport:
    s: float
    max_ratio: float
    argmax: tuple
    passed: bool


def gaussian_domination(family: OperatorFamily, mesh, s_list, params, t_index=0,
                        tol=1e-6, weights=None, floor=1e-280):
    """Pointwise kernel/envelope ratios for e^{−sA(t)} on the mesh nodes.

    Kernel entries are matrix entries divided by the column quadrature
    weight; entries whose envelope underflows below ``floor`` are skipped.
    """
    C, beta, omega1 = params
    A = family.matrices[t_index] - family.mu * np.eye(family.n)
    w = family.weights if weights is None else np.asarray(weights, float)
    X = mesh.nodes
    d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    out = []
    for s in s_list:
        if s <= 0:
            raise DomainError("s must be positive")
        K = mat_exp(A, s) / w[None, :]
        env = gaussian_envelope(C, beta, omega1, s, d, mesh.dim)
        ok = env > floor
        R = np.where(ok, np.abs(K) / np.where(ok, env, 1.0), 0.0)
        k = np.unravel_index(int(np.argmax(R)), R.shape)
        mx = float(R[k])
        out.append(GaussianReport(s=float(s), max_ratio=mx, argmax=(int(k[0]), int(k[1])),
                                  passed=bool(mx <= 1 + tol)))
    return out
