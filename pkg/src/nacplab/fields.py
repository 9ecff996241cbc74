"""Coefficient families for divergence-form operators.

Every callable in a :class:`CoefficientField` is vectorized over points:
``leading(t, X)`` takes ``X`` of shape (m, dim) and returns (m, dim, dim),
``drift_a``/``drift_b`` return (m, dim), ``zero_order`` and ``robin_beta``
return (m,).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AssemblyError, DomainError, SingularPointError

DOMAIN_KINDS = ("interval", "square", "disk")
_TOL = 1e-12


def in_domain(kind, X, tol=_TOL):
    """Boolean mask of rows of ``X`` lying in the closed domain."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if kind is None:
        return np.ones(X.shape[0], dtype=bool)
    if kind in ("interval", "square"):
        return np.all((X >= -tol) & (X <= 1.0 + tol), axis=1)
    if kind == "disk":
        return np.einsum("ij,ij->i", X, X) <= (1.0 + tol) ** 2
    raise DomainError(f"unknown domain kind {kind!r}")


def domain_box(kind, dim):
    if kind == "disk":
        return -1.0, 1.0
    return 0.0, 1.0


@dataclass(frozen=True)
class CoefficientField:
    dim: int
    leading: Callable
    alpha0: float
    sup_bound: float
    drift_a: Optional[Callable] = None
    drift_b: Optional[Callable] = None
    zero_order: Optional[Callable] = None
    robin_beta: Optional[Callable] = None
    time_holder: Optional[tuple] = None
    domain: Optional[str] = None
    name: str = "field"
    params: dict = dc_field(default_factory=dict)
    singular: Optional[Callable] = None  # X -> bool mask of undefined points

    @property
    def is_symmetric_pure(self):
        return (self.drift_a is None and self.drift_b is None
                and self.zero_order is None and self.params.get("symmetric", True))


def _check_points(field, t, X):
    if t < 0:
        raise DomainError(f"time {t} is negative")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != field.dim:
        raise DomainError(f"point dimension {X.shape[1]} != field dim {field.dim}")
    bad = ~in_domain(field.domain, X)
    if bad.any():
        raise DomainError(f"point {X[bad][0].tolist()} outside {field.domain}")
    if field.singular is not None:
        sing = field.singular(X)
        if np.any(sing):
            raise SingularPointError(
                f"{field.name} undefined at {X[sing][0].tolist()}")
    return X


def eval_matrix(field: CoefficientField, t: float, x) -> np.ndarray:
    """Leading coefficient matrix at a single point."""
    X = _check_points(field, t, np.reshape(x, (1, -1)))
    M = np.asarray(field.leading(t, X), dtype=float)[0]
    lam = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
    if lam < field.alpha0 - 1e-12:
        raise AssemblyError(
            f"ellipticity violated at t={t}, x={X[0].tolist()}: {lam} < {field.alpha0}")
    return M


def check_invariants(field, times, X):
    """Verify ellipticity, sup bound and Robin sign on samples.

    Returns the minimal symmetric eigenvalue encountered.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if field.singular is not None:
        X = X[~field.singular(X)]
    X = X[in_domain(field.domain, X)]
    lam_min = np.inf
    for t in np.atleast_1d(times):
        M = np.asarray(field.leading(t, X), dtype=float)
        S = 0.5 * (M + np.swapaxes(M, 1, 2))
        lam = np.linalg.eigvalsh(S).min()
        lam_min = min(lam_min, lam)
        if lam < field.alpha0 - 1e-12:
            raise AssemblyError(f"ellipticity violated at t={t}: {lam} < {field.alpha0}")
        mags = [np.abs(M).max()]
        for fn in (field.drift_a, field.drift_b, field.zero_order):
            if fn is not None:
                mags.append(np.abs(fn(t, X)).max())
        if max(mags) > field.sup_bound * (1 + 1e-12):
            raise AssemblyError(f"coefficient magnitude {max(mags)} exceeds sup_bound")
        if field.robin_beta is not None and np.min(field.robin_beta(t, X)) < 0:
            raise AssemblyError("negative Robin coefficient")
    return lam_min


# ---------------------------------------------------------------- families

def _const_fn(value, dim, kind):
    value = np.asarray(value, dtype=float)
    if kind == "matrix":
        return lambda t, X: np.broadcast_to(value, (len(X), dim, dim)).copy()
    if kind == "vector":
        return lambda t, X: np.broadcast_to(value, (len(X), dim)).copy()
    return lambda t, X: np.full(len(X), float(value))


def constant(dim=1, matrix=None, domain=None, name="constant"):
    """Constant leading matrix (identity by default)."""
    M = np.eye(dim) if matrix is None else np.asarray(matrix, dtype=float).reshape(dim, dim)
    a0 = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    if a0 <= 0:
        raise DomainError("constant matrix is not elliptic")
    return CoefficientField(
        dim=dim, leading=_const_fn(M, dim, "matrix"), alpha0=a0,
        sup_bound=float(np.abs(M).max()), domain=domain, name=name,
        params={"matrix": M.tolist(), "symmetric": bool(np.allclose(M, M.T))})


def scalar_field(dim, a, alpha0, sup_bound, domain=None, name="scalar", **params):
    """Leading matrix a(t, X)·I for a vectorized scalar a."""
    eye = np.eye(dim)

    def leading(t, X):
        return np.asarray(a(t, X), dtype=float)[:, None, None] * eye
    return CoefficientField(dim=dim, leading=leading, alpha0=alpha0,
                            sup_bound=sup_bound, domain=domain, name=name,
                            params=dict(params))


def smooth_base(dim=1, amplitude=0.25, domain=None):
    """a0(x)·I with a0 = 1 + amplitude·sin(2πx₁)."""
    return scalar_field(dim, lambda t, X: 1.0 + amplitude * np.sin(2 * np.pi * X[:, 0]),
                        alpha0=1.0 - amplitude, sup_bound=1.0 + amplitude,
                        domain=domain, name="smooth", amplitude=amplitude)


def holder_blend(base=None, beta_time=0.75, c=1.0, t0=0.0, pert=None, T=1.0, dim=None):
    """A(t,x) = A0(x) + c·|t − t0|^β·P(x) with P positive semidefinite.

    ``pert`` is a vectorized callable X -> (m, dim, dim); default identity.
    """
    if base is None:
        base = smooth_base(dim or 1)
    dim = base.dim
    if not 0 < beta_time <= 1:
        raise DomainError("beta_time must lie in (0, 1]")
    if pert is None:
        eye = np.eye(dim)
        pert = lambda X: np.broadcast_to(eye, (len(X), dim, dim))  # noqa: E731
        pmax = 1.0
    else:
        pmax = None

    def leading(t, X):
        return base.leading(t, X) + c * abs(t - t0) ** beta_time * pert(X)
    if pmax is None:
        # crude bound from a probe grid; only used as declared metadata
        g = np.linspace(0, 1, 9)
        probe = np.stack(np.meshgrid(*[g] * dim), -1).reshape(-1, dim)
        pmax = float(np.abs(pert(probe)).max())
    span = max(abs(T - t0), abs(t0)) ** beta_time
    return CoefficientField(
        dim=dim, leading=leading, alpha0=base.alpha0,
        sup_bound=base.sup_bound + abs(c) * span * pmax,
        drift_a=base.drift_a, drift_b=base.drift_b, zero_order=base.zero_order,
        robin_beta=base.robin_beta, time_holder=(abs(c) * pmax, beta_time),
        domain=base.domain, name=f"holder_blend({base.name})",
        params={**base.params, "beta_time": beta_time, "c": c, "t0": t0},
        singular=base.singular)


def linear_blend(base=None, c=1.0, t0=0.0, T=1.0, dim=None):
    """Hölder blend with exponent one (linear in time)."""
    return holder_blend(base, beta_time=1.0, c=c, t0=t0, T=T, dim=dim)


def meyers(cross=3.0):
    """Punctured-disk coefficient matrix with a gradient singularity at 0.

    A(x,y) = 1/(4r²) [[4x²+y², cross·xy], [cross·xy, x²+4y²]].  With
    ``cross = 3`` the function x/r^{1/2} solves div(A∇u) = 0 away from the
    origin and the eigenvalues are exactly 1 and 1/4.
    """
    def singular(X):
        return np.einsum("ij,ij->i", X, X) == 0.0

    def leading(t, X):
        x, y = X[:, 0], X[:, 1]
        r2 = x * x + y * y
        if np.any(r2 == 0):
            raise SingularPointError("Meyers coefficients undefined at the origin")
        M = np.empty((len(X), 2, 2))
        M[:, 0, 0] = 4 * x * x + y * y
        M[:, 0, 1] = M[:, 1, 0] = cross * x * y
        M[:, 1, 1] = x * x + 4 * y * y
        return M / (4 * r2)[:, None, None]
    # eigenvalues are (5 ± sqrt(9 + (cross²-9)·4·sin²cos²·... )) / 8; bound via the worst angle
    th = np.linspace(0, np.pi, 721)
    probe = np.stack([np.cos(th), np.sin(th)], 1)
    ev = np.linalg.eigvalsh(leading(0.0, probe))
    a0 = float(ev.min())
    if a0 <= 0:
        raise DomainError(f"cross={cross} gives a non-elliptic Meyers matrix")
    return CoefficientField(dim=2, leading=leading, alpha0=a0 - 1e-12,
                            sup_bound=float(max(np.abs(ev).max(), 1.0)),
                            domain="disk", name="meyers",
                            params={"cross": cross}, singular=singular)


def checkerboard(cell=0.125, alpha0=0.2, width=0.05, dim=2, domain=None):
    """Mollified checkerboard a(x)·I with values in (alpha0, 1).

    The sharp sign pattern sin(πx/c)·sin(πy/c) is smoothed with tanh(·/width);
    ``width → 0`` recovers the discontinuous (BMO only) board.
    """
    def a(t, X):
        s = np.prod(np.sin(np.pi * X / cell), axis=1)
        return alpha0 + (1 - alpha0) * 0.5 * (1 + np.tanh(s / width))
    return scalar_field(dim, a, alpha0=alpha0, sup_bound=1.0, domain=domain,
                        name="checkerboard", cell=cell, width=width, a_min=alpha0)


def oscillatory_vmo(center=None, amplitude=0.5, dim=2, domain=None):
    """a(x) = 1.5 + amplitude·sin(log(1 + |log|x − c||)), bounded and VMO."""
    c = np.full(dim, 0.5) if center is None else np.asarray(center, dtype=float)

    def a(t, X):
        r = np.sqrt(np.sum((X - c) ** 2, axis=1))
        r = np.maximum(r, 1e-300)
        return 1.5 + amplitude * np.sin(np.log1p(np.abs(np.log(r))))
    return scalar_field(dim, a, alpha0=1.5 - amplitude, sup_bound=1.5 + amplitude,
                        domain=domain, name="oscillatory_vmo", amplitude=amplitude)


def robin(base=None, alpha=0.9, beta0=1.0, M=1.0, t0=0.0, g=None, T=1.0, dim=1):
    """Time-varying Robin coefficient β(t,x) = β0 + M·|t − t0|^α·g(x)."""
    if base is None:
        base = constant(dim)
    if beta0 < 0 or M < 0:
        raise DomainError("Robin coefficient must be nonnegative")
    if g is None:
        g = lambda X: 1.0 + 0.5 * np.abs(X[:, 0])  # noqa: E731
        gmax = 1.5
    else:
        gmax = None

    def beta(t, X):
        return beta0 + M * abs(t - t0) ** alpha * g(X)
    if gmax is None:
        gmax = float(np.max(g(np.array([[0.0] * base.dim, [1.0] * base.dim]))))
    return CoefficientField(
        dim=base.dim, leading=base.leading, alpha0=base.alpha0,
        sup_bound=base.sup_bound, drift_a=base.drift_a, drift_b=base.drift_b,
        zero_order=base.zero_order, robin_beta=beta,
        time_holder=(M * gmax, alpha) if M > 0 else None,
        domain=base.domain, name=f"robin({base.name})",
        params={**base.params, "alpha": alpha, "beta0": beta0, "M": M, "t0": t0},
        singular=base.singular)


def with_lower_order(field, drift_a=None, drift_b=None, zero_order=None):
    """Attach constant or callable lower-order terms to a field."""
    dim = field.dim

    def wrap(v, kind):
        if v is None or callable(v):
            return v
        return _const_fn(v, dim, kind)
    da, db, c0 = wrap(drift_a, "vector"), wrap(drift_b, "vector"), wrap(zero_order, "scalar")
    mags = [field.sup_bound]
    for v in (drift_a, drift_b, zero_order):
        if v is not None and not callable(v):
            mags.append(float(np.abs(np.asarray(v)).max()))
    return CoefficientField(
        dim=dim, leading=field.leading, alpha0=field.alpha0, sup_bound=max(mags),
        drift_a=da, drift_b=db, zero_order=c0, robin_beta=field.robin_beta,
        time_holder=field.time_holder, domain=field.domain,
        name=f"{field.name}+lower", params={**field.params, "symmetric": False},
        singular=field.singular)


# ------------------------------------------------------------ diagnostics

@dataclass(frozen=True)
class VmoProfile:
    radii: list
    eta: list
    field_id: str


def _sample_grid(field, density, region=None):
    lo, hi = domain_box(field.domain, field.dim)
    m = int(round((hi - lo) * density))
    c = lo + (np.arange(m) + 0.5) * (hi - lo) / m
    mesh = np.meshgrid(*[c] * field.dim, indexing="ij")
    X = np.stack(mesh, -1).reshape(-1, field.dim)
    mask = in_domain(field.domain, X, tol=0.0)
    if field.singular is not None:
        mask &= ~field.singular(X)
    if region is not None:
        mask &= np.asarray(region(X), dtype=bool)
    return X, mask, m


def vmo_modulus(field: CoefficientField, t: float, radii, sample_density: int = 256,
                region=None, field_id=None) -> VmoProfile:
    """Discrete vmo-modulus from mean oscillations over inscribed cubes.

    A ball of radius ρ is replaced by the inscribed axis-aligned cube of side
    2ρ/√dim, realised as k×…×k cells of the sampling grid.  ``region`` is an
    optional point predicate restricting admissible cubes (e.g. an annulus).
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise DomainError("empty radius list")
    if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise DomainError("radii must be positive and strictly ascending")
    X, mask, m = _sample_grid(field, sample_density, region)
    cell = (domain_box(field.domain, field.dim)[1] - domain_box(field.domain, field.dim)[0]) / m
    vals = np.full((X.shape[0], field.dim, field.dim), np.nan)
    vals[mask] = field.leading(t, X[mask])
    shape = (m,) * field.dim
    comps = [vals[:, i, j].reshape(shape) for i in range(field.dim)
             for j in range(field.dim) if j >= i or not field.params.get("symmetric", True)]
    gmask = mask.reshape(shape)
    raw = []
    for r in radii:
        k = int(np.floor(2 * r / np.sqrt(field.dim) / cell + 1e-9))
        if k < 2:
            raise DomainError(f"sample density too coarse for radius {r}")
        if k > m:
            raw.append(raw[-1] if raw else 0.0)
            continue
        stride = max(1, k // 4)
        win = (k,) * field.dim
        sl = (slice(None, None, stride),) * field.dim
        ok = sliding_window_view(gmask, win)[sl]
        ok = ok.reshape(ok.shape[:field.dim] + (-1,)).all(axis=-1)
        best = 0.0
        if ok.any():
            for f in comps:
                w = sliding_window_view(np.where(gmask, f, 0.0), win)[sl]
                w = w.reshape(w.shape[:field.dim] + (-1,))[ok]
                osc = np.abs(w - w.mean(axis=1, keepdims=True)).mean(axis=1)
                best = max(best, float(osc.max()))
        raw.append(best)
    eta = np.maximum.accumulate(np.asarray(raw)).tolist()
    return VmoProfile(radii=radii, eta=eta, field_id=field_id or field.name)


class HolderFit(NamedTuple):
    C_fit: float
    beta_fit: float
    r2: float
    flag: Optional[str] = None


def default_samples(field, n=None, boundary=False):
    """Deterministic spatial sample points for a field's domain."""
    kind, dim = field.domain, field.dim
    if boundary:
        if dim == 1:
            return np.array([[0.0], [1.0]])
        if kind == "disk":
            th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
            return np.stack([np.cos(th), np.sin(th)], 1)
        g = np.linspace(0, 1, 17)
        z, o = np.zeros_like(g), np.ones_like(g)
        return np.concatenate([np.stack(p, 1) for p in
                               ((g, z), (g, o), (z, g), (o, g))])
    n = n or (65 if dim == 1 else 17)
    lo, hi = domain_box(kind, dim)
    g = np.linspace(lo, hi, n)
    X = np.stack(np.meshgrid(*[g] * dim, indexing="ij"), -1).reshape(-1, dim)
    X = X[in_domain(kind, X)]
    if field.singular is not None:
        X = X[~field.singular(X)]
    return X


def time_holder_fit(field: CoefficientField, time_samples, x_samples=None,
                    component="leading") -> HolderFit:
    """Fit d(t,s) ≈ C|t − s|^β for the sup-in-space time defect.

    For each separation δ the envelope max{d(t,s): |t − s| = δ} is regressed
    in log-log, which recovers β exactly for |t − t0|^β blends whose grid
    contains t0.  Pairs closer than 1e-4·(time span) are discarded.
    """
    ts = np.unique(np.asarray(time_samples, dtype=float))
    if component == "robin":
        if field.robin_beta is None:
            raise DomainError("field has no Robin coefficient")
        X = default_samples(field, boundary=True) if x_samples is None else np.atleast_2d(x_samples)
        vals = np.stack([np.asarray(field.robin_beta(t, X), float).ravel() for t in ts])
    else:
        X = default_samples(field) if x_samples is None else np.atleast_2d(x_samples)
        vals = np.stack([np.asarray(field.leading(t, X), float).ravel() for t in ts])
    span = ts[-1] - ts[0] if len(ts) > 1 else 0.0
    i, j = np.triu_indices(len(ts), 1)
    sep = ts[j] - ts[i]
    keep = sep >= 1e-4 * span
    i, j, sep = i[keep], j[keep], sep[keep]
    if len(sep) < 8:
        raise DomainError("time_holder_fit needs at least 8 distinct time pairs")
    d = np.abs(vals[j] - vals[i]).max(axis=1)
    key = np.round(sep / span, 9)
    seps, inv = np.unique(key, return_inverse=True)
    env = np.zeros(len(seps))
    np.maximum.at(env, inv, d)
    nz = env > 1e-14 * max(1.0, np.abs(vals).max())
    if nz.sum() < 2:
        return HolderFit(0.0, 0.0, 1.0, "constant-in-time")
    lx, ly = np.log(seps[nz] * span), np.log(env[nz])
    slope, icept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icept)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    return HolderFit(float(np.exp(icept)), float(slope), float(r2), None)
