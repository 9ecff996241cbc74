"""Acquistapace–Terreni diagnostics for discrete operator families.

The AT operator is N(t,s,λ) = A(t)R(λ,A(t))(A(t)^{-1} − A(s)^{-1}); its norm
is expected to behave like K|t − s|^β / (1 + |λ|^{1−γ}) with γ < β.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .discretizer import OperatorFamily
from .errors import DomainError, ExhaustedError
from .sectorial import WeightedSpace, frac_power, op_norm_bounds, resolvent, spectrum
from .solver import QOperator


def _space(family):
    return WeightedSpace(family.weights, family.p)


def _matrix(family, t):
    k = np.flatnonzero(np.isclose(family.time_grid, t, rtol=0, atol=1e-14))
    return family.matrices[k[0]] if len(k) else family.at(t)


def at_operator_norm(family: OperatorFamily, t, s, lam):
    """Certified (lower, upper) bounds of ‖A(t)R(λ,A(t))(A(t)^{-1} − A(s)^{-1})‖."""
    if t == s:
        return 0.0, 0.0
    At, As = _matrix(family, t), _matrix(family, s)
    D = np.linalg.inv(At) - np.linalg.inv(As)
    N = At @ resolvent(At, lam) @ D
    return op_norm_bounds(N, _space(family))


def holder_defect(family: OperatorFamily, t, s, gamma):
    """Certified bounds of ‖A(t)^{−γ}(A(t) − A(s))A(s)^{-1}‖.

    Pairing x = A(s)^{-1}y with x′ = ((A(t)′)^γ)^{-1}z turns the bilinear
    estimate |⟨(A(t) − A(s))x, x′⟩| ≤ c‖x‖_{D(A(s))}‖x′‖_{X′_γ} into this
    operator norm.
    """
    if not 0 <= gamma < 1:
        raise DomainError("gamma must lie in [0, 1)")
    At, As = _matrix(family, t), _matrix(family, s)
    diff = At - As
    if not np.any(diff):
        return 0.0, 0.0
    M = np.linalg.solve(As.T, diff.T).T           # (A(t) − A(s)) A(s)^{-1}
    if gamma > 0:
        M = frac_power(At, -gamma, weights=family.weights) @ M
    return op_norm_bounds(M, _space(family))


@dataclass
class ATFit:
    K_fit: float
    beta_fit: float
    gamma_fit: float
    r2_time: float
    r2_lambda: float
    admissible: bool
    sample_spec: dict = dc_field(default_factory=dict)
    flag: Optional[str] = None


def _r2(x, y, slope, icept):
    ss = np.sum((y - y.mean()) ** 2)
    if ss == 0:
        return 1.0
    return float(1 - np.sum((y - slope * x - icept) ** 2) / ss)


def default_pairs(family, max_nodes=9):
    """Ordered pairs from an evenly spaced subset of nodes (first node kept)."""
    tg = family.time_grid
    idx = np.unique(np.round(np.linspace(0, len(tg) - 1, min(max_nodes, len(tg)))).astype(int))
    ts = tg[idx]
    return [(a, b) for a in ts for b in ts if a != b]


def at_fit(family: OperatorFamily, lambda_grid=None, pair_grid=None, phi=None,
           decades=6.0, per_decade=6) -> ATFit:
    """Two-stage log-log fit of the AT estimate.

    Stage 1 regresses log sup_rays N against log|λ| for |λ| ≥ 10ρ per pair;
    the pooled slope is −(1 − γ).  Stage 2 regresses the envelope (max over
    pairs of equal separation) of the intercepts against log|t − s|.
    """
    space = _space(family)
    rho = max(np.abs(spectrum(A)).max() for A in family.matrices)
    if phi is None:
        arg = max(np.abs(np.angle(spectrum(A))).max() for A in family.matrices)
        phi = min(max(np.pi / 4, arg + 0.05), np.pi - 0.1)
    if lambda_grid is None:
        radii = 10 * rho * np.logspace(0, decades, int(decades * per_decade) + 1)
        angles = (phi + 0.05, -(phi + 0.05), np.pi)
    else:
        lambda_grid = np.asarray(lambda_grid, complex)
        radii = np.unique(np.abs(lambda_grid))
        angles = tuple(np.unique(np.round(np.angle(lambda_grid), 12)))
    pairs = default_pairs(family) if pair_grid is None else list(pair_grid)
    if len(pairs) < 8:
        raise DomainError("at_fit needs at least 8 time pairs")
    spec = {"radii": [float(radii[0]), float(radii[-1]), len(radii)],
            "angles": [float(a) for a in angles], "pairs": len(pairs), "phi": float(phi)}
    lr = np.log(radii)
    curves, seps = [], []
    for t, s in pairs:
        At, As = _matrix(family, t), _matrix(family, s)
        D = np.linalg.inv(At) - np.linalg.inv(As)
        if not np.any(D):
            continue
        lam_t, V = np.linalg.eig(At)
        Vi_D = np.linalg.solve(V, D)
        vals = np.zeros(len(radii))
        for k, r in enumerate(radii):
            for a in angles:
                lam = r * np.exp(1j * a)
                N = (V * (lam_t / (lam - lam_t))[None, :]) @ Vi_D
                vals[k] = max(vals[k], op_norm_bounds(N, space)[1])
        if np.all(vals > 0):
            curves.append(np.log(vals))
            seps.append(abs(t - s))
    if len(curves) < 2:
        return ATFit(0.0, 0.0, 0.0, 1.0, 1.0, False, spec, flag="autonomous")
    C = np.array(curves)
    slopes = np.array([np.polyfit(lr, c, 1)[0] for c in C])
    slope = float(np.mean(slopes))
    gamma = 1.0 + slope
    r2_lam = min(_r2(lr, c, *np.polyfit(lr, c, 1)) for c in C)
    icepts = (C - slope * lr[None, :]).mean(axis=1)
    seps = np.asarray(seps)
    key = np.round(seps / seps.max(), 9)
    uk, inv = np.unique(key, return_inverse=True)
    env = np.full(len(uk), -np.inf)
    np.maximum.at(env, inv, icepts)
    if len(uk) < 2:
        beta, logK, r2_t = 0.0, float(env[0]), 1.0
    else:
        ls = np.log(uk * seps.max())
        beta, logK = np.polyfit(ls, env, 1)
        r2_t = _r2(ls, env, beta, logK)
    return ATFit(K_fit=float(np.exp(logK)), beta_fit=float(beta), gamma_fit=float(gamma),
                 r2_time=float(r2_t), r2_lambda=float(r2_lam),
                 admissible=bool(beta > gamma), sample_spec=spec)


@dataclass
class ShiftResult:
    mu_star: float
    table: list
    monotone: bool


def shift_search(family: OperatorFamily, mu_grid, target=0.5, time_grid=None,
                 q_time=2.0, tol=0.05) -> ShiftResult:
    """Smallest sampled shift μ with discrete ‖Q_μ‖ ≤ target, plus the table."""
    mu_grid = [float(m) for m in mu_grid]
    if any(m < 0 for m in mu_grid) or any(b <= a for a, b in zip(mu_grid, mu_grid[1:])):
        raise DomainError("mu_grid must be nonnegative and ascending")
    base = family if time_grid is None else family.with_grid(time_grid)
    table = []
    for mu in mu_grid:
        qn = QOperator(base.shifted(mu)).norm(q_time)
        table.append((mu, float(qn[1] if np.isfinite(qn[1]) else qn[0])))
    vals = [v for _, v in table]
    running = np.minimum.accumulate(vals)
    monotone = bool(np.all(np.asarray(vals) <= running * (1 + tol) + 1e-15))
    hits = [mu for mu, v in table if v <= target]
    if not hits:
        raise ExhaustedError(f"no sampled μ reaches ‖Q‖ ≤ {target}", table)
    return ShiftResult(mu_star=hits[0], table=table, monotone=monotone)
