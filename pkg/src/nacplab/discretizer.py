"""Tensor-grid meshes and divergence-form finite-difference operators.

Assembly is cell based.  On every grid cell the coefficients are frozen at
the cell centre and the bilinear form

    a(u, v) = ∫ A∇u·∇v + (a u)·∇v + (b·∇u) v + c0 u v  (+ Σ β u v on ∂Ω)

is discretized with edge differences for the diagonal entries of A and
cell-averaged gradients for the off-diagonal ones.  Interior faces receive
one half from each adjacent cell, so on a uniform grid with A = I this is the
classical 3-point/5-point stencil, and natural boundary conditions come out
with the usual half-width boundary faces.  The operator is
A_h = diag(mass)^{-1} K with the lumped dual volumes as mass.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import AssemblyError, DomainError, ResourceError

MAX_NODES = 250_000
MAX_DENSE = 6_000
BC_KINDS = ("dirichlet", "neumann", "robin")


@dataclass
class Mesh:
    kind: str
    dim: int
    h: float
    bc: str                      # "dirichlet" or "natural" (Neumann/Robin node set)
    grid_points: np.ndarray      # (G, dim) tensor-grid coordinates
    dof_index: np.ndarray        # (G,) dof number or -1
    dofs: np.ndarray             # (n,) grid indices of unknowns
    cells: np.ndarray            # (C, 2**dim) grid indices of cell corners
    boundary_nodes: np.ndarray   # grid indices of boundary nodes
    normals: np.ndarray          # (B, dim) unit outward normals
    surface: np.ndarray          # (B,) boundary measure per node
    cell_volumes: np.ndarray     # (n,) quadrature weights, sum = |Ω|
    mass: np.ndarray             # (n,) lumped operator mass
    measure: float               # |Ω|

    @property
    def n(self):
        return len(self.dofs)

    @property
    def nodes(self):
        return self.grid_points[self.dofs]

    @property
    def boundary_points(self):
        """Boundary node coordinates, projected onto the circle for the disk."""
        P = self.grid_points[self.boundary_nodes]
        if self.kind == "disk":
            r = np.linalg.norm(P, axis=1)
            P = np.where((r > 1.0)[:, None], P / np.maximum(r, 1e-300)[:, None], P)
        return P

    @property
    def cell_centers(self):
        return self.grid_points[self.cells].mean(axis=1)

    def full(self, v):
        """Extend a dof vector by zero to the whole grid."""
        v = np.asarray(v)
        if v.shape[0] == len(self.grid_points):
            return v
        if v.shape[0] != self.n:
            raise DomainError(f"vector length {v.shape[0]} matches neither dofs nor grid")
        out = np.zeros((len(self.grid_points),) + v.shape[1:], dtype=v.dtype)
        out[self.dofs] = v
        return out


def _trapezoid(N):
    w = np.ones(N + 1)
    w[0] = w[-1] = 0.5
    return w


def _seg_area(a, b, c, d):
    """Exact area of [a,b]×[c,d] ∩ unit disk."""
    a, b = max(a, -1.0), min(b, 1.0)
    if b <= a:
        return 0.0
    F = lambda x: 0.5 * (x * math.sqrt(max(0.0, 1 - x * x)) + math.asin(x))  # noqa: E731
    br = {a, b}
    for y in (c, d):
        if abs(y) < 1:
            x0 = math.sqrt(1 - y * y)
            br.update(x for x in (-x0, x0) if a < x < b)
    pts = sorted(br)
    total = 0.0
    for x0, x1 in zip(pts, pts[1:]):
        xm = 0.5 * (x0 + x1)
        s = math.sqrt(max(0.0, 1 - xm * xm))
        top_s, bot_s = d > s, c < -s
        if min(d, s) - max(c, -s) <= 0:
            continue
        # ∫ min(d, s) - max(c, -s) dx on a piece where the branches are fixed
        top = (F(x1) - F(x0)) if top_s else d * (x1 - x0)
        bot = -(F(x1) - F(x0)) if bot_s else c * (x1 - x0)
        total += top - bot
    return total


def _angular_share(P):
    th = np.arctan2(P[:, 1], P[:, 0])
    order = np.argsort(th, kind="stable")
    ts = th[order]
    gaps = np.diff(np.concatenate([ts, [ts[0] + 2 * np.pi]]))
    share = 0.5 * (gaps + np.roll(gaps, 1))
    out = np.empty(len(P))
    out[order] = share
    return out


def _check_h(h):
    if not 0 < h <= 0.5:
        raise DomainError(f"mesh size {h} outside (0, 0.5]")


def build_mesh(kind: str, h: float, bc: str = "dirichlet", max_nodes: int = MAX_NODES) -> Mesh:
    """Mesh on (0,1), the unit square or the unit disk.

    ``bc`` selects the node set: interior nodes for Dirichlet, all nodes of
    the (staircase) closure for Neumann/Robin.
    """
    _check_h(h)
    if bc not in BC_KINDS + ("natural",):
        raise DomainError(f"unknown boundary condition {bc!r}")
    natural = bc != "dirichlet"
    if kind in ("interval", "square"):
        N = int(round(1.0 / h))
        if abs(N * h - 1.0) > 1e-9:
            raise DomainError("h must be the reciprocal of an integer on interval/square")
        h = 1.0 / N
        dim = 1 if kind == "interval" else 2
        if (N + 1) ** dim > max_nodes:
            raise ResourceError(f"{(N + 1) ** dim} nodes exceed budget {max_nodes}")
        return _tensor_mesh(kind, dim, N, h, natural)
    if kind == "disk":
        M = int(math.ceil(1.0 / h - 1e-12)) + 1
        if (2 * M + 1) ** 2 > max_nodes:
            raise ResourceError(f"{(2 * M + 1) ** 2} nodes exceed budget {max_nodes}")
        return _disk_mesh(M, h, natural)
    raise DomainError(f"unknown domain kind {kind!r}")


def _cells_of(shape):
    """Corner grid indices of all cells of a tensor grid (x index fastest in corners)."""
    dim = len(shape)
    idx = np.arange(np.prod(shape)).reshape(shape)
    if dim == 1:
        return np.stack([idx[:-1], idx[1:]], 1)
    c00, c10 = idx[:-1, :-1], idx[1:, :-1]
    c01, c11 = idx[:-1, 1:], idx[1:, 1:]
    return np.stack([c00.ravel(), c10.ravel(), c01.ravel(), c11.ravel()], 1)


def _finish(kind, dim, h, natural, G, dofmask, cells, bnodes, normals, surface,
            vol_grid, measure):
    dofs = np.flatnonzero(dofmask)
    dof_index = -np.ones(len(G), dtype=int)
    dof_index[dofs] = np.arange(len(dofs))
    mass = np.zeros(len(dofs))
    share = h ** dim / 2 ** dim
    for c in range(cells.shape[1]):
        d = dof_index[cells[:, c]]
        np.add.at(mass, d[d >= 0], share)
    vol = vol_grid[dofs].copy()
    extra = np.flatnonzero(~dofmask & (vol_grid > 0))
    if len(extra):
        tree = cKDTree(G[dofs])
        _, nn = tree.query(G[extra])
        np.add.at(vol, nn, vol_grid[extra])
    return Mesh(kind=kind, dim=dim, h=h, bc="natural" if natural else "dirichlet",
                grid_points=G, dof_index=dof_index, dofs=dofs, cells=cells,
                boundary_nodes=bnodes, normals=normals, surface=surface,
                cell_volumes=vol, mass=mass, measure=measure)


def _tensor_mesh(kind, dim, N, h, natural):
    g = np.arange(N + 1) * h
    shape = (N + 1,) * dim
    G = np.stack(np.meshgrid(*[g] * dim, indexing="ij"), -1).reshape(-1, dim)
    I = np.stack(np.meshgrid(*[np.arange(N + 1)] * dim, indexing="ij"), -1).reshape(-1, dim)
    on_b = np.any((I == 0) | (I == N), axis=1)
    dofmask = np.ones(len(G), bool) if natural else ~on_b
    cells = _cells_of(shape)
    bnodes = np.flatnonzero(on_b)
    nrm = np.where(I[bnodes] == 0, -1.0, np.where(I[bnodes] == N, 1.0, 0.0))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    if dim == 1:
        surface = np.ones(len(bnodes))
    else:
        # boundary edge length attached to each node: h, corners h/2 + h/2
        surface = np.full(len(bnodes), h)
    tw = _trapezoid(N) * h
    vol_grid = tw.copy() if dim == 1 else np.outer(tw, tw).ravel()
    return _finish(kind, dim, h, natural, G, dofmask, cells, bnodes, nrm, surface,
                   vol_grid, 1.0)


def _disk_mesh(M, h, natural):
    g = np.arange(-M, M + 1) * h
    shape = (2 * M + 1,) * 2
    G = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    r2 = np.einsum("ij,ij->i", G, G)
    inside = r2 < 1.0 - 1e-12
    all_cells = _cells_of(shape)
    if natural:
        # keep only cells fully inside; drop nodes that touch no such cell
        while True:
            cells = all_cells[inside[all_cells].all(axis=1)]
            touched = np.zeros(len(G), bool)
            touched[cells.ravel()] = True
            if np.array_equal(touched, inside):
                break
            inside &= touched
        count = np.bincount(cells.ravel(), minlength=len(G))
        bnodes = np.flatnonzero(inside & (count < 4))
        dofmask = inside
    else:
        cells = all_cells[inside[all_cells].any(axis=1)]
        corner = np.zeros(len(G), bool)
        corner[cells.ravel()] = True
        bnodes = np.flatnonzero(corner & ~inside)
        dofmask = inside
    P = G[bnodes]
    nrm = P / np.linalg.norm(P, axis=1, keepdims=True)
    surface = _angular_share(P)
    vol_grid = np.array([_seg_area(x - h / 2, x + h / 2, y - h / 2, y + h / 2)
                         if x * x + y * y < (1 + h) ** 2 else 0.0 for x, y in G])
    return _finish("disk", 2, h, natural, G, dofmask, cells, bnodes, nrm, surface,
                   vol_grid, math.pi)


# ------------------------------------------------------------------ assembly

def _local_ops(dim, h):
    """Edge differences and averaged gradients as rows acting on cell corners."""
    if dim == 1:
        D = np.array([[-1.0, 1.0]])
        return [D[0]], [D[0] / h], np.full(2, 0.5)
    dxb = np.array([-1.0, 1.0, 0.0, 0.0])
    dxt = np.array([0.0, 0.0, -1.0, 1.0])
    dyl = np.array([-1.0, 0.0, 1.0, 0.0])
    dyr = np.array([0.0, -1.0, 0.0, 1.0])
    gx = (dxb + dxt) / (2 * h)
    gy = (dyl + dyr) / (2 * h)
    return [(dxb, dxt), (dyl, dyr)], [gx, gy], np.full(4, 0.25)


def _eval_points(mesh, X):
    if mesh.kind == "disk":
        r = np.linalg.norm(X, axis=1)
        X = np.where((r > 1.0)[:, None], X / np.maximum(r, 1e-300)[:, None], X)
    return X


def local_matrices(mesh, field, t):
    """Per-cell local form matrices, shape (C, k, k) with k = 2**dim."""
    dim, h = mesh.dim, mesh.h
    Xc = _eval_points(mesh, mesh.cell_centers)
    A = np.asarray(field.leading(t, Xc), dtype=float).reshape(-1, dim, dim)
    S = 0.5 * (A + np.swapaxes(A, 1, 2))
    lam = np.linalg.eigvalsh(S).min(axis=1)
    bad = lam < min(field.alpha0, 1e300) - 1e-12
    if np.any(bad) or np.any(lam <= 0):
        k = int(np.argmin(lam))
        raise AssemblyError(
            f"ellipticity violated at t={t}, x={Xc[k].tolist()}: min eigenvalue {lam[k]:.3g}")
    vol = h ** dim
    edges, grads, avg = _local_ops(dim, h)
    k = 2 ** dim
    L = np.zeros((len(Xc), k, k))
    if dim == 1:
        L += (A[:, 0, 0] / h)[:, None, None] * np.outer(edges[0], edges[0])
    else:
        for a in range(2):
            e0, e1 = edges[a]
            loc = 0.5 * (np.outer(e0, e0) + np.outer(e1, e1)) / h ** 2
            L += (vol * A[:, a, a])[:, None, None] * loc
        gx, gy = grads
        L += (vol * A[:, 0, 1])[:, None, None] * np.outer(gx, gy)
        L += (vol * A[:, 1, 0])[:, None, None] * np.outer(gy, gx)
    if field.drift_a is not None:
        da = np.asarray(field.drift_a(t, Xc), dtype=float).reshape(-1, dim)
        for a in range(dim):
            L += (vol * da[:, a])[:, None, None] * np.outer(grads[a], avg)
    if field.drift_b is not None:
        db = np.asarray(field.drift_b(t, Xc), dtype=float).reshape(-1, dim)
        for a in range(dim):
            L += (vol * db[:, a])[:, None, None] * np.outer(avg, grads[a])
    return L


def assemble_form(mesh: Mesh, field, bc: str, t: float = 0.0):
    """Sparse form matrix K on the dofs (v^T K u = a(u, v))."""
    if field.dim != mesh.dim:
        raise DomainError(f"field dim {field.dim} != mesh dim {mesh.dim}")
    if bc not in BC_KINDS:
        raise DomainError(f"unknown boundary condition {bc!r}")
    if (bc == "dirichlet") != (mesh.bc == "dirichlet"):
        raise DomainError(f"mesh node set ({mesh.bc}) incompatible with bc {bc!r}")
    if bc == "robin" and field.robin_beta is None:
        raise AssemblyError("Robin assembly requires robin_beta")
    L = local_matrices(mesh, field, t)
    d = mesh.dof_index[mesh.cells]
    k = d.shape[1]
    rows = np.repeat(d, k, axis=1).ravel()
    cols = np.tile(d, (1, k)).ravel()
    vals = L.reshape(len(L), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = mesh.n
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    diag = np.zeros(n)
    if field.zero_order is not None:
        diag += np.asarray(field.zero_order(t, _eval_points(mesh, mesh.nodes)), float) * mesh.mass
    if bc == "robin":
        bd = mesh.dof_index[mesh.boundary_nodes]
        beta = np.asarray(field.robin_beta(t, mesh.boundary_points), dtype=float)
        if np.any(beta < 0):
            k0 = int(np.argmin(beta))
            raise AssemblyError(
                f"negative Robin coefficient {beta[k0]} at {mesh.boundary_points[k0].tolist()}")
        np.add.at(diag, bd, beta * mesh.surface)
    if np.any(diag):
        K = K + sp.diags(diag)
    return K.tocsr()


def assemble_operator(mesh: Mesh, field, bc: str = "dirichlet", t: float = 0.0,
                      sparse: bool = False, max_dense: int = MAX_DENSE):
    """Discrete operator A_h(t) = diag(mass)^{-1} K(t).

    ``mass`` is the cell share of each node (h^d at interior nodes), so the
    interior rows are the classical flux stencil.  The norm weights
    (cell_volumes) additionally carry the boundary strip and may differ.
    """
    K = assemble_form(mesh, field, bc, t)
    A = sp.diags(1.0 / mesh.mass) @ K
    if sparse:
        return A.tocsr()
    if mesh.n > max_dense:
        raise ResourceError(f"dense operator with n={mesh.n} exceeds budget {max_dense}")
    return A.toarray()


# ----------------------------------------------------------------- families

@dataclass
class OperatorFamily:
    """Discrete family t ↦ A(t) on a time grid, acting on weighted ℓ^p."""
    time_grid: np.ndarray
    matrices: np.ndarray                # (m+1, n, n), already shifted by mu
    weights: np.ndarray
    p: float = 2.0
    mu: float = 0.0
    bc: str = "dirichlet"
    generator: Optional[Callable] = None   # t -> unshifted matrix
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.time_grid = np.asarray(self.time_grid, dtype=float)
        self.matrices = np.asarray(self.matrices)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[0] != len(self.time_grid):
            raise DomainError("one matrix per time node required")
        if np.any(np.diff(self.time_grid) <= 0):
            raise DomainError("time grid must be strictly ascending")
        if len(self.weights) != self.matrices.shape[1]:
            raise DomainError("weights do not match matrix size")

    @property
    def n(self):
        return self.matrices.shape[1]

    @property
    def T(self):
        return float(self.time_grid[-1])

    def at(self, t):
        """Shifted operator at an arbitrary time in [0, T]."""
        if self.generator is not None:
            return np.asarray(self.generator(t)) + self.mu * np.eye(self.n)
        tg = self.time_grid
        j = int(np.clip(np.searchsorted(tg, t) - 1, 0, len(tg) - 2))
        s = (t - tg[j]) / (tg[j + 1] - tg[j])
        return (1 - s) * self.matrices[j] + s * self.matrices[j + 1]

    def shifted(self, mu):
        """Family with an additional shift mu (total shift self.mu + mu)."""
        eye = np.eye(self.n)
        return replace(self, matrices=self.matrices + mu * eye, mu=self.mu + mu,
                       meta=dict(self.meta))

    def with_grid(self, time_grid):
        """Same generator sampled on another grid."""
        if self.generator is None:
            mats = np.stack([self.at(t) for t in time_grid])
        else:
            mats = np.stack([self.generator(t) for t in time_grid]) + self.mu * np.eye(self.n)
        return replace(self, time_grid=np.asarray(time_grid, float), matrices=mats,
                       meta=dict(self.meta))

    def is_autonomous(self, tol=0.0):
        d = np.abs(self.matrices - self.matrices[0]).max()
        return d <= tol * max(1.0, np.abs(self.matrices[0]).max())

    def numerical_range_margin(self):
        """min over nodes of the smallest real part of the weighted numerical range."""
        s = np.sqrt(self.weights)
        out = np.inf
        for A in self.matrices:
            B = (s[:, None] * A) / s[None, :]
            out = min(out, float(np.linalg.eigvalsh(0.5 * (B + B.conj().T)).min()))
        return out


def time_grid(T=1.0, steps=16, grading=1.0):
    """Graded grid t_i = T·(i/steps)^grading."""
    if steps < 1:
        raise DomainError("steps must be positive")
    return T * (np.arange(steps + 1) / steps) ** grading


def assemble_family(mesh, field, bc, times, p=2.0, mu=0.0, workers=1, sparse_ok=False):
    """Assemble A_h(t_i) for every node of ``times`` (collected in grid order)."""
    times = np.asarray(times, dtype=float)
    gen = lambda t: assemble_operator(mesh, field, bc, t)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            mats = list(ex.map(gen, times))
    else:
        mats = [gen(t) for t in times]
    mats = np.stack(mats) + mu * np.eye(mesh.n)
    return OperatorFamily(time_grid=times, matrices=mats, weights=mesh.cell_volumes.copy(),
                          p=p, mu=mu, bc=bc, generator=gen,
                          meta={"h": mesh.h, "kind": mesh.kind, "field": field.name})


def matrix_family(times, fn, weights=None, p=2.0, mu=0.0, bc="none"):
    """Family from a callable t -> matrix (scalars allowed)."""
    times = np.asarray(times, dtype=float)

    def gen(t):
        return np.atleast_2d(np.asarray(fn(t), dtype=float))
    mats = np.stack([gen(t) for t in times])
    n = mats.shape[1]
    w = np.ones(n) if weights is None else np.asarray(weights, float)
    return OperatorFamily(time_grid=times, matrices=mats + mu * np.eye(n), weights=w,
                          p=p, mu=mu, bc=bc, generator=gen)


# -------------------------------------------------------------------- norms

def lp_norm(weights, p, v) -> float:
    """(Σ w_i |v_i|^p)^{1/p}; max |v_i| for p = ∞."""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(v)
    if v.shape[0] != w.shape[0]:
        raise DomainError(f"shape mismatch: {v.shape} vs {w.shape}")
    a = np.abs(v)
    if np.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p < 1:
        raise DomainError("p must be >= 1")
    m = a.max() if a.size else 0.0
    if m == 0:
        return 0.0
    return float(m * np.sum(w * (a / m) ** p) ** (1.0 / p))


def cell_gradient_sq(mesh, v):
    """|∇v|² per cell from squared edge differences (exact for affine v)."""
    u = mesh.full(v)[mesh.cells]
    h = mesh.h
    if mesh.dim == 1:
        return ((u[:, 1] - u[:, 0]) / h) ** 2
    dx = 0.5 * ((u[:, 1] - u[:, 0]) ** 2 + (u[:, 3] - u[:, 2]) ** 2)
    dy = 0.5 * ((u[:, 2] - u[:, 0]) ** 2 + (u[:, 3] - u[:, 1]) ** 2)
    return (dx + dy) / h ** 2


def gradient_norm(mesh: Mesh, v, p: float) -> float:
    """Discrete ‖∇v‖_{L^p} on the mesh cells.

    ``v`` may be a dof vector (extended by zero, i.e. Dirichlet data) or a
    vector over all grid points.
    """
    g = np.sqrt(cell_gradient_sq(mesh, v))
    return lp_norm(np.full(len(g), mesh.h ** mesh.dim), p, g)


# ------------------------------------------------------------- Meyers witness

def smooth_cutoff(r, radius):
    """C² bump: 1 on r ≤ radius/2, 0 on r ≥ radius (quintic smoothstep)."""
    s = np.clip((np.asarray(r, float) - radius / 2) / (radius / 2), 0.0, 1.0)
    return 1.0 - s ** 3 * (10 - 15 * s + 6 * s ** 2)


def meyers_witness_at(X, cutoff_radius):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.sqrt(np.einsum("ij,ij->i", X, X))
    u = np.zeros(len(X))
    nz = r > 0
    u[nz] = X[nz, 0] / np.sqrt(r[nz])
    return u * smooth_cutoff(r, cutoff_radius)


def meyers_witness(mesh: Mesh, cutoff_radius: float, full: bool = False):
    """Samples of w = x·r^{-1/2}·ψ(r) on the dofs (or the whole grid)."""
    if mesh.kind != "disk":
        raise DomainError("Meyers witness requires a disk mesh")
    if not 0 < cutoff_radius < 1:
        raise DomainError("cutoff radius must lie in (0, 1)")
    X = mesh.grid_points if full else mesh.nodes
    return meyers_witness_at(X, cutoff_radius)


def meyers_forcing_at(X, cutoff_radius):
    """f = −div(A∇w) for the Meyers witness w (cross coefficient 3).

    Away from the cutoff annulus f vanishes; inside it only derivatives of
    the cutoff ψ contribute: f = −cosθ·r^{1/2}(ψ'' + 2ψ'/r).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.sqrt(np.einsum("ij,ij->i", X, X))
    half = cutoff_radius / 2
    s = np.clip((r - half) / half, 0.0, 1.0)
    d1 = -30 * s ** 2 * (1 - s) ** 2 / half
    d2 = -60 * s * (1 - s) * (1 - 2 * s) / half ** 2
    rs = np.maximum(r, 1e-300)
    cos = np.where(r > 0, X[:, 0] / rs, 0.0)
    return -cos * np.sqrt(r) * (d2 + 2 * d1 / rs)
