"""Scenario files, the check registry and report assembly.

A scenario is a TOML document::

    version = "1"
    seed = 0
    bc = "dirichlet"          # dirichlet | neumann | robin
    shift = 0.0               # or "auto"

    [domain]
    kind = "interval"         # interval | square | disk
    h = 0.0625
    refinements = [0.125, 0.0625]

    [field]
    family = "holder_blend"
    params = { beta_time = 0.75, c = 1.0 }

    [time]
    T = 1.0
    steps = 16
    grading = 1.0

    [exponents]
    p = 2.0
    q = 2.0

    [[checks]]
    name = "solve_at"

Every key of a ``[[checks]]`` entry other than ``name`` is passed to the
check as a parameter.
"""
from __future__ import annotations

import csv
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import fields as F
from .at_verifier import at_fit, shift_search
from .discretizer import (assemble_family, assemble_operator, build_mesh, gradient_norm,
                          lp_norm, meyers_forcing_at, time_grid)
from .errors import ExhaustedError, NacpError, NotSectorialError, UndefinedRatioError
from .rbound import gaussian_domination, khintchine_check, r_bound_estimate
from .sectorial import WeightedSpace, bip_fit, frac_power, sector_verify
from .solver import NacpProblem, QOperator, cn_oracle, mixed_norm, solve_at

SCHEMA_VERSION = "1"
DOMAINS = {"interval": 1, "square": 2, "disk": 2}
BCS = ("dirichlet", "neumann", "robin")


class ConfigError(NacpError, ValueError):
    """Scenario file is unreadable or violates the schema."""


# ------------------------------------------------------------------ fields

def _base(name, params, dim):
    params = dict(params or {})
    if name == "constant":
        m = params.pop("matrix", None)
        return F.constant(dim, None if m is None else np.asarray(m, float))
    if name in ("smooth", "smooth_base"):
        return F.smooth_base(dim, **params)
    if name == "checkerboard":
        return F.checkerboard(dim=dim, **params)
    if name == "oscillatory_vmo":
        return F.oscillatory_vmo(dim=dim, **params)
    if name == "meyers":
        if dim != 2:
            raise ConfigError("meyers coefficients live on a 2D disk")
        return F.meyers(**params)
    raise ConfigError(f"unknown field family {name!r}")


def build_field(spec: dict, dim: int):
    """Coefficient field from a ``[field]`` table."""
    family = spec.get("family", "constant")
    params = dict(spec.get("params", {}))
    T = float(spec.get("T", 1.0))
    if family == "holder_blend":
        base = _base(params.pop("base", "smooth_base"), params.pop("base_params", {}), dim)
        fld = F.holder_blend(base, T=T, **params)
    elif family == "linear_blend":
        base = _base(params.pop("base", "smooth_base"), params.pop("base_params", {}), dim)
        fld = F.linear_blend(base, T=T, **params)
    elif family == "robin":
        base = _base(params.pop("base", "constant"), params.pop("base_params", {}), dim)
        fld = F.robin(base, T=T, dim=dim, **params)
    else:
        fld = _base(family, params, dim)
    lower = spec.get("lower")
    if lower:
        fld = F.with_lower_order(fld, lower.get("drift_a"), lower.get("drift_b"),
                                 lower.get("zero_order"))
    return fld


# ---------------------------------------------------------------- scenario

@dataclass
class Scenario:
    version: str
    domain: dict
    field: dict
    bc: str
    time: dict
    exponents: dict
    shift: object
    checks: list
    seed: int = 0
    out_dir: str = "out"
    source: dict = dc_field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return DOMAINS[self.domain["kind"]]

    @property
    def refinements(self):
        return [float(h) for h in self.domain.get("refinements", [self.domain["h"]])]

    def echo(self):
        return {"version": self.version, "domain": self.domain, "field": self.field,
                "bc": self.bc, "time": self.time, "exponents": self.exponents,
                "shift": self.shift, "checks": self.checks, "seed": self.seed}


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_scenario(doc: dict) -> Scenario:
    """Validate a decoded TOML document (no computation happens here)."""
    _need(str(doc.get("version")) == SCHEMA_VERSION,
          f"unsupported schema version {doc.get('version')!r} (expected {SCHEMA_VERSION!r})")
    dom = dict(doc.get("domain", {}))
    _need(dom.get("kind") in DOMAINS, f"domain.kind must be one of {sorted(DOMAINS)}")
    hs = [dom.get("h")] + list(dom.get("refinements", []))
    hs = [h for h in hs if h is not None]
    _need(hs, "domain.h is required")
    dom.setdefault("h", hs[0])
    for h in hs:
        _need(isinstance(h, (int, float)) and 0 < h <= 0.5, f"mesh width {h!r} outside (0, 0.5]")
        if dom["kind"] != "disk":
            _need(abs(1 / h - round(1 / h)) < 1e-9, f"1/h must be an integer, got h={h}")
    bc = doc.get("bc", "dirichlet")
    _need(bc in BCS, f"bc must be one of {BCS}")
    tm = {"T": 1.0, "steps": 16, "grading": 1.0, **doc.get("time", {})}
    _need(tm["T"] > 0, "time.T must be positive")
    _need(int(tm["steps"]) == tm["steps"] and tm["steps"] >= 2, "time.steps must be an integer >= 2")
    _need(tm["grading"] >= 1, "time.grading must be >= 1")
    ex = {"p": 2.0, "q": 2.0, **doc.get("exponents", {})}
    for k in ("p", "q"):
        _need(1 < float(ex[k]) < math.inf, f"exponents.{k} must lie in (1, inf)")
    shift = doc.get("shift", 0.0)
    _need(shift == "auto" or (isinstance(shift, (int, float)) and shift >= 0),
          "shift must be a nonnegative number or 'auto'")
    checks = doc.get("checks", [])
    _need(isinstance(checks, list) and checks, "at least one [[checks]] entry is required")
    for c in checks:
        _need(isinstance(c, dict) and "name" in c, "every check needs a name")
        _need(c["name"] in CHECKS, f"unknown check {c['name']!r}")
    names = [c["name"] for c in checks]
    _need(len(set(names)) == len(names), "each check may appear only once")
    fld = dict(doc.get("field", {"family": "constant"}))
    try:
        build_field({**fld, "T": tm["T"]}, DOMAINS[dom["kind"]])
    except (TypeError, NacpError) as exc:
        raise ConfigError(f"invalid field: {exc}") from exc
    if bc == "robin":
        _need(fld.get("family") == "robin", "bc = 'robin' needs the robin field family")
    seed = doc.get("seed", 0)
    _need(isinstance(seed, int) and seed >= 0, "seed must be a nonnegative integer")
    return Scenario(version=SCHEMA_VERSION, domain=dom, field=fld, bc=bc, time=tm,
                    exponents={k: float(v) for k, v in ex.items()}, shift=shift,
                    checks=[dict(c) for c in checks], seed=seed,
                    out_dir=str(doc.get("out_dir", "out")), source=doc)


def load_scenario(path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(doc)


# ----------------------------------------------------------------- context

class Context:
    """Lazily built meshes, fields and families shared by the checks."""

    def __init__(self, sc: Scenario, workers=1):
        self.sc = sc
        self.workers = max(1, int(workers))
        self.p, self.q = sc.exponents["p"], sc.exponents["q"]
        self._meshes, self._fams = {}, {}
        self._mu = None

    def field(self, **override):
        spec = dict(self.sc.field)
        if override:
            spec["params"] = {**spec.get("params", {}), **override}
        return build_field({**spec, "T": self.sc.time["T"]}, self.sc.dim)

    def mesh(self, h):
        key = float(h)
        if key not in self._meshes:
            bc = "dirichlet" if self.sc.bc == "dirichlet" else "natural"
            self._meshes[key] = build_mesh(self.sc.domain["kind"], key, bc=bc)
        return self._meshes[key]

    def times(self, steps=None):
        tm = self.sc.time
        return time_grid(tm["T"], int(steps or tm["steps"]), tm["grading"])

    def family(self, h=None, steps=None, fld=None, mu=None):
        h = self.sc.domain["h"] if h is None else h
        key = (float(h), steps)
        if fld is not None:
            fam = assemble_family(self.mesh(h), fld, self.sc.bc, self.times(steps), p=self.p)
        else:
            if key not in self._fams:
                self._fams[key] = assemble_family(self.mesh(h), self.field(), self.sc.bc,
                                                  self.times(steps), p=self.p,
                                                  workers=self.workers)
            fam = self._fams[key]
        mu = self.mu() if mu is None else mu
        return fam.shifted(mu) if mu else fam

    def mu(self):
        if self._mu is None:
            if self.sc.shift == "auto":
                grid = [0.0] + list(np.logspace(-1, 6, 15))
                res = shift_search(self.family(mu=0.0), grid, target=0.5, q_time=self.q)
                self._mu = res.mu_star
            else:
                self._mu = float(self.sc.shift)
        return self._mu

    def problem(self, fam, u0="smooth", f="ones"):
        X = self.mesh(fam.meta["h"]).nodes
        n = fam.n
        if isinstance(u0, str):
            u0 = {"zero": np.zeros(n), "ones": np.ones(n),
                  "smooth": np.prod(np.sin(np.pi * (X + 1) / 2 if self.sc.domain["kind"] == "disk"
                                           else np.pi * X), axis=1)}[u0]
        if isinstance(f, str):
            f = {"zero": np.zeros((len(fam.time_grid), n)),
                 "ones": np.ones((len(fam.time_grid), n))}[f]
        return NacpProblem(fam, u0, f, q_time=self.q)


@dataclass
class CheckResult:
    name: str
    status: str                     # pass | fail | indeterminate | error
    payload: dict
    provenance: dict
    tables: dict = dc_field(default_factory=dict)   # csv name -> (columns, rows)
    wall_ms: float = 0.0


def _status(ok):
    return "pass" if ok else "fail"


def _run_points(ctx, points, fn):
    """Evaluate fn over parameter tuples, concurrently, sorted by the tuple."""
    points = sorted(points)
    if ctx.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(ctx.workers) as ex:
            out = list(ex.map(fn, points))
    else:
        out = [fn(p) for p in points]
    return out


def _timed(fn, *args):
    t0 = time.perf_counter()
    val = fn(*args)
    return val, round((time.perf_counter() - t0) * 1e3, 3)


# ------------------------------------------------------------------ checks

def check_solve_at(ctx: Context, strategy="direct_block", u0="smooth", f="ones", tol=1e-8):
    fam = ctx.family()
    res = solve_at(ctx.problem(fam, u0, f), strategy=strategy)
    scale = max(1.0, float(np.abs(fam.matrices).max()))
    ok = res.defect <= tol * scale
    status = _status(ok) if res.c_mr_flag is None else "indeterminate"
    return status, {"c_mr": res.c_mr, "c_mr_flag": res.c_mr_flag, "norms": res.norms,
                    "defect": res.defect, "mu": ctx.mu()}


def check_cn_agreement(ctx: Context, steps=(64, 128, 256), refine=8, tol=1e-2):
    errs = []
    for m in steps:
        fam = ctx.family(steps=m)
        pr = ctx.problem(fam)
        u = solve_at(pr).u
        ref = cn_oracle(pr, refine)
        errs.append(float(np.abs(u - ref).max() / max(np.abs(ref).max(), 1e-300)))
    dec = all(b < a for a, b in zip(errs, errs[1:]))
    return _status(errs[0] <= tol and dec), {"steps": list(steps), "rel_error": errs,
                                             "decreasing": dec}


def check_sector(ctx: Context, phi=None, nodes=3):
    fam = ctx.family()
    space = WeightedSpace(fam.weights, fam.p)
    phi = float(phi) if phi is not None else np.pi / 2
    idx = np.unique(np.linspace(0, len(fam.time_grid) - 1, nodes).round().astype(int))
    out = []
    try:
        for i in idx:
            r = sector_verify(fam.matrices[i], space, phi)
            out.append({"t": float(fam.time_grid[i]), "constant": r.constant,
                        "constant_1p": r.constant_1p, "margin": r.spectrum_margin})
    except NotSectorialError as exc:
        return "fail", {"phi": phi, "error": str(exc), "nodes": out}
    return "pass", {"phi": phi, "nodes": out}


def check_at_fit(ctx: Context, decades=4.0, per_decade=4):
    fam = ctx.family()
    fit = at_fit(fam, decades=decades, per_decade=per_decade)
    payload = {"K_fit": fit.K_fit, "beta_fit": fit.beta_fit, "gamma_fit": fit.gamma_fit,
               "r2_time": fit.r2_time, "r2_lambda": fit.r2_lambda,
               "admissible": fit.admissible, "flag": fit.flag, "sample_spec": fit.sample_spec}
    if fit.flag == "autonomous":
        return "indeterminate", payload
    return _status(fit.admissible), payload


def check_shift_search(ctx: Context, mu_grid=None, target=0.5, steps=None):
    grid = mu_grid or [0.0] + list(np.logspace(-1, 6, 15))
    fam = ctx.family(steps=steps, mu=0.0)
    try:
        res = shift_search(fam, grid, target=target, q_time=ctx.q)
    except ExhaustedError as exc:
        return "fail", {"error": str(exc), "table": exc.table}
    ok = res.monotone
    payload = {"mu_star": res.mu_star, "table": res.table, "monotone": res.monotone}
    if ok:
        shifted = fam.shifted(res.mu_star)
        pr = ctx.problem(shifted)
        a = solve_at(pr, "direct_block").u
        b = solve_at(pr, "neumann").u
        payload["neumann_vs_direct"] = float(np.abs(a - b).max() / max(np.abs(a).max(), 1e-300))
        ok = payload["neumann_vs_direct"] <= 1e-8
    return _status(ok), payload


def check_r_bound(ctx: Context, phi=None, k_max=4, budget=400, restarts=8, factor=2.0):
    fam = ctx.family()
    node = fam.with_grid(fam.time_grid[:1])
    phi = float(phi) if phi is not None else np.pi / 2
    sv = sector_verify(node.matrices[0], WeightedSpace(node.weights, node.p), phi)
    rep = r_bound_estimate(node, phi, k_max=k_max, budget=budget, seed=ctx.sc.seed,
                           restarts=restarts, lambdas=sv.lambdas)
    B = sv.constant_1p
    payload = {"estimate": rep.estimate, "k1_bound": rep.k1_bound, "sector_constant": B,
               "trials": rep.trials, "seed": rep.seed,
               "witness_lambdas": rep.witness["lambdas"], "witness_times": rep.witness["times"]}
    if fam.p != 2:
        return "indeterminate", payload
    return _status(B / factor <= rep.estimate <= factor * B), payload


def check_khintchine(ctx: Context, k_max=10, draws=5, dim=4):
    rng = np.random.default_rng(ctx.sc.seed)
    rows = []
    for k in range(1, k_max + 1):
        for d in range(draws):
            lo, up = khintchine_check(list(rng.standard_normal((k, dim))), p=ctx.p)
            rows.append({"k": k, "draw": d, "lower": lo, "upper": up})
    k2 = khintchine_check([1.0, 1.0])[0]
    ok = all(np.isfinite(r["lower"]) and np.isfinite(r["upper"]) and r["lower"] > 0
             for r in rows) and abs(k2 - 1 / np.sqrt(2)) < 1e-12
    return _status(ok), {"k2_scalar": k2, "samples": rows}


def check_gaussian(ctx: Context, s_list=(0.01, 0.1, 1.0), C=None, beta=1.0, omega1=0.0,
                   tol=1e-6):
    fam = ctx.family(mu=0.0)
    N = ctx.sc.dim
    C = (4 * np.pi) ** (-N / 2) if C is None else C
    reps = gaussian_domination(fam, ctx.mesh(fam.meta["h"]), s_list, (C, beta, omega1), tol=tol)
    return _status(all(r.passed for r in reps)), {
        "params": [C, beta, omega1],
        "per_s": [{"s": r.s, "max_ratio": r.max_ratio, "argmax": list(r.argmax),
                   "passed": r.passed} for r in reps]}


def check_bip(ctx: Context, s_max=5.0, samples=21, M_max=10.0):
    fam = ctx.family()
    space = WeightedSpace(fam.weights, fam.p)
    M, om, norms = bip_fit(fam.matrices[0], space, np.linspace(-s_max, s_max, samples))
    return _status(np.isfinite(M) and M <= M_max), {"M": M, "omega": om,
                                                     "max_norm": float(np.max(norms))}


def check_vmo(ctx: Context, radii=(0.05, 0.1, 0.2), sample_density=256, t=0.0):
    prof = F.vmo_modulus(ctx.field(), t, list(radii), sample_density=sample_density)
    eta = [float(v) for v in prof.eta]
    return _status(all(np.isfinite(eta))), {"radii": list(prof.radii), "eta": eta}


def check_uniqueness(ctx: Context, tol=1e-12):
    fam = ctx.family()
    res = solve_at(ctx.problem(fam, "zero", "zero"))
    scale = max(1.0, float(np.abs(fam.matrices).max()))
    un = float(np.abs(res.u).max())
    return _status(un <= tol * scale), {"max_u": un, "scale": scale}


def _c_mr(ctx, fam):
    res = solve_at(ctx.problem(fam))
    return res.c_mr


def check_robin_sweep(ctx: Context, alphas=(0.9,), refinements=None, variation=0.25,
                      at_decades=3.0, at_per_decade=3, M=1.0, t0=0.0):
    hs = [float(h) for h in (refinements or ctx.sc.refinements)]
    p = ctx.p
    threshold = 0.5 - 1 / (2 * p)
    T = ctx.sc.time["T"]

    def point(key):
        alpha, h = key
        fld = F.robin(_robin_base(ctx), alpha=alpha, M=M, t0=t0, T=T, dim=ctx.sc.dim,
                      beta0=ctx.sc.field.get("params", {}).get("beta0", 1.0))
        t_start = time.perf_counter()
        fam = ctx.family(h=h, fld=fld)
        ts = np.linspace(0, T, 9)
        hf = F.time_holder_fit(fld, ts, component="robin")
        fit = at_fit(fam, decades=at_decades, per_decade=at_per_decade)
        c = _c_mr(ctx, fam)
        return {"alpha": alpha, "h": h, "beta_fit_robin": hf.beta_fit,
                "holder_flag": hf.flag or "", "at_beta": fit.beta_fit, "at_gamma": fit.gamma_fit,
                "admissible": fit.admissible if fit.flag is None else fit.flag,
                "c_mr": c, "label": "ok" if alpha > threshold else "hypothesis-not-met",
                "seed": ctx.sc.seed, "mu": ctx.mu(),
                "wall_ms": round((time.perf_counter() - t_start) * 1e3, 3)}
    rows = _run_points(ctx, [(float(a), h) for a in alphas for h in hs], point)
    unstable = []
    for a in sorted({r["alpha"] for r in rows}):
        cs = [r["c_mr"] for r in rows if r["alpha"] == a]
        spread = (max(cs) - min(cs)) / max(min(cs), 1e-300)
        if spread > variation:
            unstable.append(a)
            for r in rows:
                if r["alpha"] == a:
                    r["label"] = r["label"] + "+unstable" if r["label"] != "ok" else "unstable"
    cols = ["alpha", "h", "beta_fit_robin", "holder_flag", "at_beta", "at_gamma", "admissible",
            "c_mr", "label", "seed", "mu", "wall_ms"]
    ok = not any(a > threshold for a in unstable)
    return _status(ok), {"threshold": threshold, "unstable_alphas": unstable,
                         "rows": _strip_wall(rows)}, {"robin_sweep": (cols, rows)}


def _robin_base(ctx):
    params = ctx.sc.field.get("params", {})
    return _base(params.get("base", "constant"), params.get("base_params", {}), ctx.sc.dim)


def _strip_wall(rows):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]


def _smooth_test_function(mesh, rng, modes=3):
    """Random smooth function vanishing on the boundary of the reference box."""
    X = mesh.nodes
    if mesh.kind == "disk":
        bub = np.clip(1 - np.sum(X ** 2, 1), 0, None)
        Y = (X + 1) / 2
    else:
        bub = np.prod(X * (1 - X), axis=1)
        Y = X
    u = np.zeros(len(X))
    for k in range(1, modes + 1):
        a = rng.standard_normal()
        u += a * np.prod(np.sin(k * np.pi * Y + rng.uniform(0, np.pi, mesh.dim)), axis=1) / k
    return bub * (1 + u)


def check_divergence_form_suite(ctx: Context, beta_time=0.75, c=1.0, t0=0.0, refinements=None,
                                radii=(0.1, 0.2), at_max_n=300, kato_max_n=1500,
                                at_decades=3.0, at_per_decade=3, steps=None):
    hs = [float(h) for h in (refinements or ctx.sc.refinements)]
    p = ctx.p
    base = ctx.field()
    T = ctx.sc.time["T"]
    tfield = F.holder_blend(base, beta_time=beta_time, c=c, t0=t0, T=T)
    try:
        prof = F.vmo_modulus(base, 0.0, list(radii))
        eta = [float(v) for v in prof.eta]
    except NacpError:
        eta = [float("nan")] * len(radii)

    def point(key):
        (h,) = key
        t_start = time.perf_counter()
        rng = np.random.default_rng([ctx.sc.seed, int(round(1 / h))])
        mesh = ctx.mesh(h)
        fam = ctx.family(h=h, steps=steps, fld=tfield)
        A0 = fam.matrices[0]
        u = _smooth_test_function(mesh, rng)
        w = mesh.cell_volumes
        grad = gradient_norm(mesh, u, p)
        gr = grad / (lp_norm(w, p, A0 @ u) + lp_norm(w, p, u))
        kato = float("nan")
        if p <= 2 and fam.n <= kato_max_n:
            half = np.real(frac_power(A0, 0.5, weights=w))
            kato = grad / lp_norm(w, p, half @ u)
        bfit = gfit = float("nan")
        adm = ""
        if fam.n <= at_max_n:
            fit = at_fit(fam, decades=at_decades, per_decade=at_per_decade)
            bfit, gfit, adm = fit.beta_fit, fit.gamma_fit, fit.admissible
        qn = QOperator(fam).norm(ctx.q)
        q_norm = qn[1] if np.isfinite(qn[1]) else qn[0]
        cm = _c_mr(ctx, fam)
        row = {"h": h, "alpha0": base.alpha0}
        row.update({f"vmo_eta_at_{r:g}": e for r, e in zip(radii, eta)})
        row.update({"beta_fit": bfit, "gamma_fit": gfit, "admissible": adm, "grad_ratio": gr,
                    "kato_ratio": kato, "q_norm": float(q_norm), "mu": ctx.mu(), "c_mr": cm,
                    "seed": ctx.sc.seed,
                    "wall_ms": round((time.perf_counter() - t_start) * 1e3, 3)})
        return row
    rows = _run_points(ctx, [(h,) for h in hs], point)
    rows.sort(key=lambda r: -r["h"])
    cols = (["h", "alpha0"] + [f"vmo_eta_at_{r:g}" for r in radii]
            + ["beta_fit", "gamma_fit", "admissible", "grad_ratio", "kato_ratio", "q_norm",
               "mu", "c_mr", "seed", "wall_ms"])
    finite = all(np.isfinite(r["grad_ratio"]) and np.isfinite(r["c_mr"]) for r in rows)
    fits = [r["admissible"] for r in rows if r["admissible"] != ""]
    payload = {"in_theorem_scope": p >= 2, "rows": _strip_wall(rows)}
    return _status(finite and all(fits)), payload, {"divergence_form_suite": (cols, rows)}


def meyers_gradient_ratio(h, p_list=(2.0, 4.0), cutoff=0.5):
    """u_h = A_h^{-1} f_h for the Meyers witness forcing; ‖∇u_h‖_p / (‖f_h‖_p + ‖u_h‖_p)."""
    mesh = build_mesh("disk", h)
    A = assemble_operator(mesh, F.meyers(), "dirichlet", 0.0, sparse=True)
    f = meyers_forcing_at(mesh.nodes, cutoff)
    u = spla.spsolve(A.tocsc(), f)
    w = mesh.cell_volumes
    out = {}
    for p in p_list:
        g = gradient_norm(mesh, u, p)
        out[float(p)] = (g / (lp_norm(w, p, f) + lp_norm(w, p, u)), g)
    return out


def check_meyers_regression(ctx: Context, refinements=None, p_list=(2.0, 4.0), cutoff=0.5,
                            p2_variation=0.10):
    hs = sorted((float(h) for h in (refinements or ctx.sc.refinements)), reverse=True)

    def point(key):
        (h,) = key
        vals, ms = _timed(meyers_gradient_ratio, h, p_list, cutoff)
        return [{"h": h, "p": p, "grad_ratio": r, "grad_norm": g, "seed": ctx.sc.seed,
                 "mu": 0.0, "wall_ms": ms} for p, (r, g) in vals.items()]
    rows = [r for block in _run_points(ctx, [(h,) for h in hs], point) for r in block]
    rows.sort(key=lambda r: (r["p"], -r["h"]))
    growth, mono = {}, {}
    for p in p_list:
        col = [r["grad_ratio"] for r in rows if r["p"] == p]
        growth[p] = col[-1] / col[0]
        mono[p] = all(b > a for a, b in zip(col, col[1:]))
    ok = all(mono[p] for p in p_list if p >= 4)
    var2 = {p: abs(growth[p] - 1) for p in p_list if p < 4}
    cols = ["h", "p", "grad_ratio", "grad_norm", "seed", "mu", "wall_ms"]
    return _status(ok), {"growth": {str(k): v for k, v in growth.items()},
                         "monotone": {str(k): v for k, v in mono.items()},
                         "low_p_variation": {str(k): v for k, v in var2.items()},
                         "low_p_within": all(v <= p2_variation for v in var2.values()),
                         "rows": _strip_wall(rows)}, {"meyers": (cols, rows)}


CHECKS: dict[str, Callable] = {
    "solve_at": check_solve_at,
    "cn_agreement": check_cn_agreement,
    "sector": check_sector,
    "at_fit": check_at_fit,
    "shift_search": check_shift_search,
    "r_bound": check_r_bound,
    "khintchine": check_khintchine,
    "gaussian_domination": check_gaussian,
    "bip": check_bip,
    "vmo": check_vmo,
    "uniqueness": check_uniqueness,
    "robin_sweep": check_robin_sweep,
    "divergence_form_suite": check_divergence_form_suite,
    "meyers_regression": check_meyers_regression,
}


# ------------------------------------------------------------------ report

def to_jsonable(v):
    """Plain-JSON view of nested results (NaN/inf become null, complex a pair)."""
    if isinstance(v, dict):
        return {str(k): to_jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [to_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return to_jsonable(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (complex, np.complexfloating)):
        return [to_jsonable(v.real), to_jsonable(v.imag)]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


def write_csv(path, cols, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([_fmt(r.get(c, "")) for c in cols])


def run_checks(sc: Scenario, workers=1):
    ctx = Context(sc, workers)
    results = []
    for spec in sc.checks:
        params = {k: v for k, v in spec.items() if k != "name"}
        fn = CHECKS[spec["name"]]
        t0 = time.perf_counter()
        try:
            out = fn(ctx, **params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for check {spec['name']!r}: {exc}") from exc
        except (NacpError, np.linalg.LinAlgError, FloatingPointError) as exc:
            out = ("error", {"error": f"{type(exc).__name__}: {exc}",
                             "table": to_jsonable(getattr(exc, "table", None))})
        status, payload = out[0], out[1]
        tables = out[2] if len(out) > 2 else {}
        prov = {"h": sc.domain["h"], "refinements": sc.refinements, "seed": sc.seed,
                "time": sc.time, "exponents": sc.exponents, "params": params}
        if status != "error" and sc.shift is not None:
            prov["mu"] = ctx._mu if ctx._mu is not None else (
                0.0 if sc.shift == "auto" else float(sc.shift))
        results.append(CheckResult(spec["name"], status, payload, prov, tables,
                                   round((time.perf_counter() - t0) * 1e3, 3)))
    return results


def exit_code(results):
    if any(r.status == "error" for r in results):
        return 3
    if any(r.status != "pass" for r in results):
        return 4
    return 0


def write_report(sc: Scenario, results, out_dir):
    """report.json (deterministic), timings.json and one CSV per table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"schema": SCHEMA_VERSION, "scenario": sc.echo(),
              "checks": [{"name": r.name, "status": r.status, "payload": r.payload,
                          "provenance": r.provenance, "tables": sorted(r.tables)}
                         for r in results],
              "exit_code": exit_code(results)}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    with open(out / "timings.json", "w", encoding="utf-8") as fh:
        json.dump({r.name: r.wall_ms for r in results}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in results:
        for name, (cols, rows) in r.tables.items():
            write_csv(out / f"{name}.csv", cols, rows)
    return out / "report.json"
