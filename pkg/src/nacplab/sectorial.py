"""Dense-matrix sectorial calculus on weighted ℓ^p spaces.

Spectra, resolvents, sector checks, exponentials, fractional and imaginary
powers (Schur–Parlett), weighted adjoints, scale norms and resolvent-based
K-functionals for real interpolation.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla

from .discretizer import lp_norm
from .errors import BranchError, DomainError, NotSectorialError, NumericalError, SingularityError

logger = logging.getLogger(__name__)


class ConditioningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WeightedSpace:
    weights: np.ndarray
    p: float = 2.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise DomainError("weights must be positive")
        if self.p < 1:
            raise DomainError("p must be >= 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n, p=2.0):
        return cls(np.ones(n), p)

    @property
    def n(self):
        return len(self.weights)

    @property
    def dual_exponent(self):
        if self.p == 1:
            return np.inf
        if np.isinf(self.p):
            return 1.0
        return self.p / (self.p - 1)

    def dual(self):
        return WeightedSpace(self.weights, self.dual_exponent)

    def pair(self, u, v):
        """Bilinear pairing ⟨u, v⟩ = Σ w_i u_i v_i."""
        return np.sum(self.weights * np.asarray(u) * np.asarray(v))

    def norm(self, v):
        return lp_norm(self.weights, self.p, v)


# ------------------------------------------------------------ operator norms

def _to_unweighted(M, space):
    w, p = space.weights, space.p
    if np.isinf(p):
        return np.asarray(M)
    s = w ** (1.0 / p)
    return (s[:, None] * M) / s[None, :]


def _norm1(B):
    return float(np.abs(B).sum(axis=0).max())


def _norminf(B):
    return float(np.abs(B).sum(axis=1).max())


def _dual_map(y, p):
    """Unit-norm dual vector of y in ℓ^p (y ≠ 0)."""
    a = np.abs(y)
    nrm = np.linalg.norm(y, p)
    sgn = np.where(a > 0, y / np.where(a > 0, a, 1), 0)
    return sgn * (a / nrm) ** (p - 1)


def _boyd(B, p, x0, maxit=60, tol=1e-10):
    q = p / (p - 1)
    x = x0 / np.linalg.norm(x0, p)
    best = 0.0
    for _ in range(maxit):
        y = B @ x
        ny = np.linalg.norm(y, p)
        best = max(best, ny)
        if ny == 0:
            break
        z = B.conj().T @ _dual_map(y, p)
        nz = np.linalg.norm(z, q)
        if nz <= np.real(np.vdot(x, z)) * (1 + tol):
            break
        x = _dual_map(z, q)
        x = x / np.linalg.norm(x, p)
    return best


def op_norm_bounds(M, space: WeightedSpace, restarts: int = 20, seed: int = 0):
    """(lower, upper) bounds for the induced weighted-ℓ^p operator norm.

    Exact for p ∈ {1, 2, ∞}.  Otherwise the lower bound comes from Boyd's
    power iteration with restarts and the upper bound from Riesz–Thorin
    interpolation between the exact 1-, 2- and ∞-norms.
    """
    M = np.atleast_2d(np.asarray(M))
    B = _to_unweighted(M, space)
    p = space.p
    if p == 1:
        v = _norm1(B)
        return v, v
    if np.isinf(p):
        v = _norminf(B)
        return v, v
    if p == 2:
        v = float(np.linalg.norm(B, 2))
        return v, v
    n1, ninf, n2 = _norm1(B), _norminf(B), float(np.linalg.norm(B, 2))
    if p < 2:
        th = 2.0 - 2.0 / p
        up = n1 ** (1 - th) * n2 ** th
    else:
        th = 1.0 - 2.0 / p
        up = n2 ** (1 - th) * ninf ** th
    up = min(up, n1 ** (1.0 / p) * ninf ** (1 - 1.0 / p))
    rng = np.random.default_rng(seed)
    starts = [np.ones(B.shape[1])]
    starts.append(np.eye(B.shape[1])[int(np.argmax(np.abs(B).sum(axis=0)))])
    while len(starts) < restarts:
        starts.append(rng.standard_normal(B.shape[1]))
    lo = max(_boyd(B, p, x0) for x0 in starts)
    return float(min(lo, up)), float(up)


def op_norm(M, space):
    """Upper bound of the weighted operator norm (exact for p ∈ {1,2,∞})."""
    return op_norm_bounds(M, space)[1]


# ----------------------------------------------------------------- spectra

def spectrum(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A))
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc


def resolvent(A, lam, check: bool = True):
    """R(λ, A) = (λI − A)^{-1}."""
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[0]
    if check:
        ev = spectrum(A)
        scale = max(np.linalg.norm(A, 1), 1e-300)
        if np.min(np.abs(lam - ev)) < 1e-10 * scale:
            raise SingularityError(f"λ={lam} within 1e-10·‖A‖ of the spectrum")
    dtype = np.result_type(A.dtype, np.asarray(lam).dtype)
    M = lam * np.eye(n, dtype=dtype) - A
    try:
        return np.linalg.solve(M, np.eye(n, dtype=dtype))
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"resolvent singular at λ={lam}") from exc


@dataclass
class SectorReport:
    phi: float
    constant: float               # sup ‖λR(λ,A)‖ (upper bound)
    constant_lower: float
    constant_1p: float            # sup ‖(1+|λ|)R(λ,A)‖ (upper bound)
    constant_1p_lower: float
    spectrum_margin: float
    samples: int
    lambdas: np.ndarray = dc_field(repr=False, default=None)


def sector_margin(ev, phi):
    """Distance of the spectrum to the complement of the open sector Σ_φ."""
    ev = np.asarray(ev, dtype=complex)
    r = np.abs(ev)
    gap = phi - np.abs(np.angle(ev))
    d = np.where(gap >= np.pi / 2, r, r * np.sin(np.clip(gap, -np.pi, np.pi)))
    return float(np.min(d))


def lambda_grid(ev, phi, delta=None, per_decade=8, angles=None, span=(1e-3, 1e3)):
    """λ samples on two boundary rays of a larger sector plus the negative axis."""
    r = np.abs(np.asarray(ev))
    m, M = max(r.min(), 1e-300), max(r.max(), 1e-300)
    if angles is None:
        if delta is None:
            delta = min(0.05, (np.pi - phi) / 2)
        a = min(phi + delta, np.pi)
        angles = sorted({a, -a, np.pi})
    lo, hi = np.log10(span[0] * m), np.log10(span[1] * M)
    radii = np.logspace(lo, hi, max(2, int(np.ceil((hi - lo) * per_decade)) + 1))
    return np.concatenate([radii * np.exp(1j * a) for a in angles])


def sector_verify(A, space: WeightedSpace, phi: float, grid=None, **grid_kw) -> SectorReport:
    """Sampled sector constant of A on the weighted ℓ^p space.

    ``grid`` may be an explicit array of λ values; otherwise it is built by
    :func:`lambda_grid` from the spectrum.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float if np.isrealobj(A) else complex))
    ev = spectrum(A)
    if np.any(np.abs(ev) == 0) or np.any(np.abs(np.angle(ev)) >= phi):
        bad = ev[(np.abs(ev) == 0) | (np.abs(np.angle(ev)) >= phi)][0]
        raise NotSectorialError(f"eigenvalue {bad} outside the sector of half-angle {phi}")
    lams = lambda_grid(ev, phi, **grid_kw) if grid is None else np.asarray(grid, complex)
    if np.any(np.abs(np.angle(lams)) <= phi):
        raise DomainError("λ samples must lie outside the closed sector")
    c_lo = c_up = c1_lo = c1_up = 0.0
    for lam in lams:
        lo, up = op_norm_bounds(resolvent(A, lam, check=False), space)
        c_lo, c_up = max(c_lo, abs(lam) * lo), max(c_up, abs(lam) * up)
        c1_lo, c1_up = max(c1_lo, (1 + abs(lam)) * lo), max(c1_up, (1 + abs(lam)) * up)
    return SectorReport(phi=phi, constant=c_up, constant_lower=c_lo, constant_1p=c1_up,
                        constant_1p_lower=c1_lo, spectrum_margin=sector_margin(ev, phi),
                        samples=len(lams), lambdas=lams)


# ------------------------------------------------------- matrix functions

def mat_exp(A, s: float, budget: float = 1e8):
    """e^{−sA} by scaling and squaring (scipy.linalg.expm)."""
    if s < 0:
        raise DomainError("mat_exp requires s >= 0")
    A = np.atleast_2d(np.asarray(A))
    if s == 0:
        return np.eye(A.shape[0], dtype=A.dtype)
    if s * np.linalg.norm(A, 1) > budget:
        raise NumericalError(f"s·‖A‖ = {s * np.linalg.norm(A, 1):.3g} exceeds budget")
    E = sla.expm(-s * A)
    if not np.all(np.isfinite(E)):
        raise NumericalError("matrix exponential overflowed")
    return E


def _check_branch(ev, scale):
    if np.any(np.abs(ev) <= 1e-14 * scale):
        raise BranchError("0 is an eigenvalue; fractional powers undefined")
    neg = (ev.real < 0) & (np.abs(ev.imag) <= 1e-12 * np.abs(ev))
    if np.any(neg):
        raise BranchError(f"eigenvalue {ev[neg][0]} on the branch cut (negative reals)")


def _parlett(T, fdiag):
    n = T.shape[0]
    F = np.zeros_like(T)
    F[np.diag_indices(n)] = fdiag
    for j in range(1, n):
        for i in range(j - 1, -1, -1):
            s = T[i, j] * (F[j, j] - F[i, i])
            if j - i > 1:
                s += T[i, i + 1:j] @ F[i + 1:j, j] - F[i, i + 1:j] @ T[i + 1:j, j]
            F[i, j] = s / (T[j, j] - T[i, i])
    return F


def frac_power(A, theta, return_info: bool = False, gap_tol: float = 0.1,
               warn_gap: float = 1e-8, weights=None):
    """Principal power A^θ via complex Schur form.

    Normal matrices use the diagonal fast path.  Spectra whose eigenvalues are
    separated by at least ``gap_tol``·max|λ| use the Parlett recurrence;
    otherwise exp(θ·log T) is evaluated on the triangular factor (inverse
    scaling-and-squaring logarithm), which does not divide by eigenvalue
    gaps.  Gaps below ``warn_gap`` (near-defective clusters) additionally
    raise a :class:`ConditioningWarning` recorded in the info dict.

    With ``weights`` given, a matrix that is self-adjoint in the weighted ℓ²
    inner product is handled by a Hermitian eigendecomposition.
    """
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[0]
    theta = complex(theta)
    info = {"method": "identity", "warning": None}
    if theta == 0:
        out = np.eye(n)
        return (out, info) if return_info else out
    cands = [np.ones(n)] if weights is None else [np.asarray(weights, dtype=float), np.ones(n)]
    for wts in cands:
        sw = np.sqrt(wts)
        B = (sw[:, None] * A) / sw[None, :]
        if np.abs(B - B.conj().T).max() <= 1e-12 * max(np.abs(B).max(), 1e-300):
            ev, U = np.linalg.eigh(0.5 * (B + B.conj().T))
            _check_branch(ev.astype(complex), max(np.abs(A).max(), 1e-300))
            F = np.exp(theta * np.log(ev.astype(complex)))
            out = ((U * F[None, :]) @ U.conj().T) * (sw[None, :] / sw[:, None])
            info["method"] = "hermitian"
            if np.isrealobj(A) and theta.imag == 0:
                out = out.real
            return (out, info) if return_info else out
    T, Z = sla.schur(A.astype(complex), output="complex")
    ev = np.diag(T).copy()
    scale = max(np.abs(A).max(), 1e-300)
    _check_branch(ev, scale)
    fd = np.exp(theta * np.log(ev))
    off = np.linalg.norm(np.triu(T, 1))
    if off <= 1e-13 * np.linalg.norm(T):
        F = fd
        info["method"] = "normal"
        out = (Z * F[None, :]) @ Z.conj().T
    else:
        d = np.abs(ev[:, None] - ev[None, :])
        np.fill_diagonal(d, np.inf)
        gap = d.min() / max(np.abs(ev).max(), 1e-300) if n > 1 else np.inf
        if gap >= gap_tol:
            F = _parlett(T, fd)
            info["method"] = "parlett"
        else:
            F = sla.expm(theta * sla.logm(T))
            info["method"] = "log-exp"
            if gap < warn_gap:
                info["warning"] = f"clustered eigenvalues (relative gap {gap:.2e})"
                warnings.warn(info["warning"], ConditioningWarning, stacklevel=2)
        out = Z @ F @ Z.conj().T
    if np.isrealobj(A) and theta.imag == 0:
        out = out.real
    return (out, info) if return_info else out


def frac_power_contour(A, theta, nodes=400):
    """A^θ (0 < Re θ < 1) from the Balakrishnan-type integral, for cross-checks.

    A^θ = sin(πθ)/π ∫_0^∞ s^{θ−1} A (s + A)^{-1} ds, evaluated with the
    substitution s = e^x and the trapezoid rule.
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    n = A.shape[0]
    rad = np.abs(spectrum(A))
    lo, hi = np.log(rad.min()) - 40, np.log(rad.max()) + 40
    xs = np.linspace(lo, hi, nodes)
    dx = xs[1] - xs[0]
    acc = np.zeros((n, n), dtype=complex)
    I = np.eye(n)
    for x in xs:
        s = np.exp(x)
        acc += s ** theta * np.linalg.solve(s * I + A, A)
    return np.sin(np.pi * theta) / np.pi * acc * dx


def adjoint(A, space: WeightedSpace):
    """Adjoint for the pairing Σ w_i u_i v_i: A′ = W^{-1} Aᵀ W."""
    w = space.weights
    return np.asarray(A).T * w[None, :] / w[:, None]


def scale_norm(A, space: WeightedSpace, alpha: float, x) -> float:
    """‖A^α x‖ on the weighted space (α ∈ [−1, 1])."""
    if not -1 <= alpha <= 1:
        raise DomainError("alpha must lie in [-1, 1]")
    A = np.atleast_2d(np.asarray(A))
    x = np.asarray(x)
    if alpha == 0:
        y = x
    elif alpha == 1:
        y = A @ x
    elif alpha == -1:
        y = np.linalg.solve(A, x)
    else:
        y = frac_power(A, alpha) @ x
    return space.norm(y)


def interpolated_resolvent_sup(A, space, alpha, angle=3 * np.pi / 4, per_decade=8):
    """Sampled sup of |λ|^{1−α}‖A^α R(λ,A)‖ along one ray."""
    ev = spectrum(A)
    lams = lambda_grid(ev, 0.0, angles=[angle], per_decade=per_decade)
    Aa = frac_power(A, alpha)
    return max(abs(l) ** (1 - alpha) * op_norm(Aa @ resolvent(A, l, check=False), space)
               for l in lams)


def bip_fit(A, space: WeightedSpace, s_grid=None):
    """Fit ‖A^{is}‖ ≤ M e^{ω|s|} on a grid of s; returns (M, ω, norms)."""
    s_grid = np.linspace(-5, 5, 21) if s_grid is None else np.asarray(s_grid, float)
    norms = np.array([op_norm(frac_power(A, 1j * s, weights=space.weights), space)
                      for s in s_grid])
    a = np.abs(s_grid)
    if np.ptp(a) > 0:
        omega = max(0.0, float(np.polyfit(a, np.log(norms), 1)[0]))
    else:
        omega = 0.0
    M = float(np.max(norms * np.exp(-omega * a)))
    return M, omega, norms


# --------------------------------------------------- real interpolation

class _ResolventNorms:
    """n(s) = ‖A(s + A)^{-1}x‖ over an s-grid, via one Schur factorization."""

    def __init__(self, A, space, x, s_grid):
        A = np.atleast_2d(np.asarray(A))
        self.space = space
        T, Z = sla.schur(A.astype(complex), output="complex")
        xh = Z.conj().T @ np.asarray(x, dtype=complex)
        I = np.eye(A.shape[0])
        vals = []
        for s in s_grid:
            y = sla.solve_triangular(T + s * I, xh)
            vals.append(space.norm(Z @ (T @ y)))
        self.s = np.asarray(s_grid, float)
        self.n = np.asarray(vals)
        self.x_norm = space.norm(x)
        self.Ax_norm = space.norm(A @ np.asarray(x))


def default_s_grid(A, t_min=2.0 ** -20, t_max=2.0 ** 20):
    r = np.abs(spectrum(A))
    lo = np.floor(min(np.log2(r.min()), -np.log2(t_max)) - 12)
    hi = np.ceil(max(np.log2(r.max()), -np.log2(t_min)) + 12)
    return 2.0 ** np.arange(lo, hi + 0.25, 0.25)


def _k_values(rn, ts, couple):
    ts = np.asarray(ts, float)
    if couple == "XD":
        obj = (1 + np.outer(ts, rn.s)) * rn.n[None, :]
        lim = np.minimum(rn.x_norm, ts * rn.Ax_norm)
    elif couple == "DX":
        obj = (rn.s[None, :] + ts[:, None]) * rn.n[None, :]
        lim = np.minimum(rn.Ax_norm, ts * rn.x_norm)
    else:
        raise DomainError(f"unknown couple order {couple!r}")
    return np.minimum(obj.min(axis=1), lim)


def quasi_k_functional(A, space: WeightedSpace, x, t, s_grid=None, couple="XD"):
    """Resolvent quasi-minimizer K̃(t, x) for the couple (X, D(A)).

    K̃(t,x) = min_s ‖x − z_s‖ + t‖A z_s‖ with z_s = s(s + A)^{-1}x, including
    the limits z = 0 and z = x.  ``couple="DX"`` swaps the roles:
    min_s ‖A z_s‖ + t‖x − z_s‖.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    s_grid = default_s_grid(A) if s_grid is None else s_grid
    rn = _ResolventNorms(A, space, x, s_grid)
    return float(_k_values(rn, [t], couple)[0])


def real_interp_norm(A, space: WeightedSpace, theta, q, x, j_range=(-20, 20),
                     couple="XD", s_grid=None) -> float:
    """(Σ_j (2^{−jθ} K̃(2^j, x))^q)^{1/q} over dyadic levels j."""
    if not 0 < theta < 1:
        raise DomainError("theta must lie in (0, 1)")
    j0, j1 = j_range
    if j0 > -20 or j1 < 20:
        raise DomainError("j_range must cover at least [-20, 20]")
    x = np.asarray(x)
    if not np.any(x):
        return 0.0
    js = np.arange(j0, j1 + 1)
    ts = 2.0 ** js
    if s_grid is None:
        s_grid = default_s_grid(A, ts[0], ts[-1])
    rn = _ResolventNorms(A, space, x, s_grid)
    K = _k_values(rn, ts, couple)
    terms = 2.0 ** (-js * theta) * K
    if np.isinf(q):
        return float(terms.max())
    return float(np.sum(terms ** q) ** (1.0 / q))
