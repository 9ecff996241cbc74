import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nacplab.discretizer import assemble_operator, build_mesh
from nacplab import fields as F
from nacplab.errors import BranchError, DomainError, NotSectorialError, SingularityError
from nacplab.sectorial import (ConditioningWarning, WeightedSpace, adjoint, bip_fit, frac_power,
                               frac_power_contour, interpolated_resolvent_sup, lambda_grid,
                               mat_exp, op_norm_bounds, quasi_k_functional, real_interp_norm,
                               resolvent, scale_norm, sector_verify, spectrum)


def laplace_1d(h):
    n = round(1 / h) - 1
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h ** 2


def random_spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T + n * np.eye(n)


def random_sectorial(rng, n):
    """Positive definite symmetric part, so the spectrum is in Re z > 0."""
    S = random_spd(rng, n)
    K = rng.standard_normal((n, n))
    return S + 0.5 * (K - K.T)


# ------------------------------------------------------------- spaces

def test_weighted_space_dual():
    sp = WeightedSpace(np.array([1.0, 2.0]), 3.0)
    assert sp.dual_exponent == pytest.approx(1.5)
    assert sp.dual().p == pytest.approx(1.5)
    assert WeightedSpace.uniform(2, 1).dual_exponent == np.inf
    assert sp.pair([1, 1], [2, 3]) == pytest.approx(8.0)
    with pytest.raises(DomainError):
        WeightedSpace(np.array([1.0, 0.0]))


def _weighted_norm_bruteforce(M, w, p, trials=4000, seed=0):
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        x = rng.standard_normal(len(w))
        best = max(best, WeightedSpace(w, p).norm(M @ x) / WeightedSpace(w, p).norm(x))
    return best


@pytest.mark.parametrize("p", [1.0, 2.0, np.inf])
def test_op_norm_exact_cases(p, rng):
    M = rng.standard_normal((4, 4))
    w = rng.uniform(0.5, 2.0, 4)
    lo, up = op_norm_bounds(M, WeightedSpace(w, p))
    assert lo == up
    # independent oracle: unit vectors / sign vectors attain the 1-/∞-norms
    sp = WeightedSpace(w, p)
    if p == 1:
        oracle = max(sp.norm(M[:, j]) / sp.norm(np.eye(4)[j]) for j in range(4))
    elif p == np.inf:
        oracle = np.abs(M).sum(axis=1).max()
    else:
        s = np.sqrt(w)
        oracle = np.linalg.svd((s[:, None] * M) / s[None, :], compute_uv=False)[0]
    assert up == pytest.approx(oracle, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_op_norm_bounds_bracket(p, rng):
    M = rng.standard_normal((5, 5))
    w = rng.uniform(0.5, 2.0, 5)
    lo, up = op_norm_bounds(M, WeightedSpace(w, p))
    sampled = _weighted_norm_bruteforce(M, w, p)
    assert sampled <= up * (1 + 1e-12)
    assert lo <= up * (1 + 1e-12)
    assert lo >= sampled * (1 - 1e-6)      # power iteration beats random sampling


# ----------------------------------------------------- spectra, resolvents

def test_spectrum_examples():
    np.testing.assert_allclose(spectrum(np.eye(3)), [1, 1, 1])
    np.testing.assert_allclose(np.sort(spectrum(np.diag([1.0, 4.0]))), [1, 4])
    h = 0.25
    exact = (2 / h ** 2) * (1 - np.cos(np.arange(1, 4) * np.pi * h))
    np.testing.assert_allclose(np.sort(spectrum(laplace_1d(h)).real), exact, rtol=1e-12)
    np.testing.assert_allclose(exact, [9.37258, 32.0, 54.6274], rtol=1e-5)


def test_resolvent_examples():
    np.testing.assert_allclose(resolvent(np.array([[1.0]]), -1), [[-0.5]])
    np.testing.assert_allclose(resolvent(np.diag([1.0, 2.0]), 0), np.diag([-1.0, -0.5]))
    A = np.array([[2.0, 1.0], [0.0, 2.0]])
    np.testing.assert_allclose(resolvent(A, 0), -np.array([[0.5, -0.25], [0.0, 0.5]]))


def test_resolvent_near_spectrum():
    with pytest.raises(SingularityError):
        resolvent(np.diag([1.0, 2.0]), 1.0 + 1e-13)


# ----------------------------------------------------------- sector checks

def test_sector_identity_constant_one():
    rep = sector_verify(np.eye(3), WeightedSpace.uniform(3), np.pi / 2)
    assert rep.constant == pytest.approx(1.0, abs=2e-3)
    assert rep.constant <= 1.0 + 1e-12
    assert rep.spectrum_margin == pytest.approx(1.0)


def test_sector_scalar_against_dense_scan():
    phi = np.pi / 4
    angles = [3 * np.pi / 4, -3 * np.pi / 4]
    rep = sector_verify(np.array([[1.0]]), WeightedSpace.uniform(1), phi, angles=angles)
    r = np.logspace(-3, 3, 100_000)
    lam = np.concatenate([r * np.exp(1j * a) for a in angles])
    oracle = np.max(np.abs(lam) / np.abs(lam - 1))
    assert rep.constant <= oracle * (1 + 1e-12)
    assert rep.constant == pytest.approx(oracle, rel=1e-3)


def test_rotation_not_sectorial():
    th = np.pi / 3
    R = 2 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    with pytest.raises(NotSectorialError):
        sector_verify(R, WeightedSpace.uniform(2), np.pi / 4)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_sector_constant_at_least_09(seed, n):
    A = random_spd(np.random.default_rng(seed), n)
    rep = sector_verify(A, WeightedSpace.uniform(n), np.pi / 2)
    assert rep.constant >= 0.9
    assert rep.constant_1p >= rep.constant


def test_lambda_grid_outside_sector():
    lams = lambda_grid(np.array([1.0, 10.0]), np.pi / 3)
    assert np.all(np.abs(np.angle(lams)) > np.pi / 3)
    assert np.abs(lams).min() <= 1e-3 * 1.0 * 1.0001
    assert np.abs(lams).max() >= 1e3 * 10.0 * 0.9999


# ------------------------------------------------------ matrix functions

def test_mat_exp_examples():
    np.testing.assert_allclose(mat_exp(np.diag([1.0, 2.0]), 1.0), np.diag([np.exp(-1), np.exp(-2)]))
    np.testing.assert_array_equal(mat_exp(np.random.default_rng(0).random((3, 3)), 0.0), np.eye(3))
    np.testing.assert_allclose(mat_exp(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0),
                               [[1.0, -1.0], [0.0, 1.0]], atol=1e-15)
    with pytest.raises(DomainError):
        mat_exp(np.eye(2), -1.0)


@given(seed=st.integers(0, 10_000), s=st.floats(0, 2), r=st.floats(0, 2))
def test_semigroup_law(seed, s, r):
    A = random_sectorial(np.random.default_rng(seed), 5) / 5
    lhs = mat_exp(A, s) @ mat_exp(A, r)
    rhs = mat_exp(A, s + r)
    assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(rhs).max())


def test_frac_power_examples():
    np.testing.assert_allclose(frac_power(np.diag([1.0, 4.0]), 0.5), np.diag([1.0, 2.0]))
    np.testing.assert_array_equal(frac_power(random_spd(np.random.default_rng(1), 4), 0), np.eye(4))
    z = frac_power(np.array([[np.e]]), 1j)
    assert z[0, 0] == pytest.approx(np.exp(1j))
    assert abs(z[0, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("kind", ["spd", "sectorial"])
@given(seed=st.integers(0, 10_000), n=st.sampled_from([2, 5, 16, 64]))
def test_frac_power_group_law(kind, seed, n):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n) if kind == "spd" else random_sectorial(rng, n)
    P7 = frac_power(A, 0.7)
    err = np.linalg.norm(frac_power(A, 0.3) @ frac_power(A, 0.4) - P7)
    assert err <= 1e-8 * np.linalg.norm(P7)


def test_frac_power_matches_contour(rng):
    A = random_sectorial(rng, 6)
    np.testing.assert_allclose(frac_power(A, 0.5), frac_power_contour(A, 0.5), rtol=1e-7,
                               atol=1e-7 * np.abs(A).max())


def test_frac_power_nonnormal_cluster_warns():
    A = np.array([[1.0, 1.0], [0.0, 1.0 + 1e-12]])
    with pytest.warns(ConditioningWarning):
        out, info = frac_power(A, 0.5, return_info=True)
    assert info["warning"]
    # exact square root of a Jordan-like block: [[1, 1/2], [0, 1]]
    np.testing.assert_allclose(out, [[1.0, 0.5], [0.0, 1.0]], atol=1e-6)


def test_frac_power_branch_errors():
    with pytest.raises(BranchError):
        frac_power(np.diag([1.0, -2.0]), 0.5)
    with pytest.raises(BranchError):
        frac_power(np.diag([1.0, 0.0]), 0.5)


def test_frac_power_weighted_hermitian_path():
    m = build_mesh("interval", 1 / 8, bc="natural")
    A = assemble_operator(m, F.robin(beta0=1.0, M=0.0), "robin")
    out, info = frac_power(A, 0.5, return_info=True, weights=m.mass)
    assert info["method"] == "hermitian"
    np.testing.assert_allclose(out @ out, A, rtol=1e-9, atol=1e-9 * np.abs(A).max())


# --------------------------------------------------------------- adjoint

def test_adjoint_examples():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(adjoint(A, WeightedSpace.uniform(2)), A.T)
    np.testing.assert_allclose(adjoint(A, WeightedSpace(np.array([1.0, 2.0]))), [[1, 6], [1, 4]])
    S = A + A.T
    np.testing.assert_array_equal(adjoint(S, WeightedSpace.uniform(2)), S)


@given(seed=st.integers(0, 10_000))
def test_adjoint_pairing_and_involution(seed):
    rng = np.random.default_rng(seed)
    n = 5
    A, u, v = rng.standard_normal((n, n)), rng.standard_normal(n), rng.standard_normal(n)
    sp = WeightedSpace(rng.uniform(0.1, 3, n), 2.0)
    Ad = adjoint(A, sp)
    assert abs(sp.pair(A @ u, v) - sp.pair(u, Ad @ v)) <= 1e-12 * max(1, np.abs(A).sum() * 10)
    np.testing.assert_allclose(adjoint(Ad, sp), A, rtol=1e-14, atol=1e-14)


# ------------------------------------------------------------ scale norms

def test_scale_norm_examples():
    sp = WeightedSpace.uniform(2)
    assert scale_norm(np.diag([1.0, 4.0]), sp, 0.5, [0.0, 1.0]) == pytest.approx(2.0)
    x = np.array([0.3, -1.2])
    assert scale_norm(np.diag([1.0, 4.0]), sp, 0.0, x) == pytest.approx(np.linalg.norm(x))
    L = laplace_1d(0.25)
    x = np.ones(3)
    via_solve = scale_norm(L, WeightedSpace.uniform(3), -1.0, x)
    via_power = np.linalg.norm(frac_power(L, -1.0) @ x)
    assert via_solve == pytest.approx(via_power, rel=1e-10)
    with pytest.raises(DomainError):
        scale_norm(L, WeightedSpace.uniform(3), 1.5, x)


def test_interpolated_resolvent_finite(rng):
    A = random_spd(rng, 6)
    for a in (0.0, 0.25, 0.5, 0.75):
        v = interpolated_resolvent_sup(A, WeightedSpace.uniform(6), a)
        assert np.isfinite(v) and v > 0


# ------------------------------------------------------ K-functional

def test_k_identity_t1():
    x = np.array([0.6, 0.8])
    assert quasi_k_functional(np.eye(2), WeightedSpace.uniform(2), x, 1.0) == pytest.approx(1.0)


def test_k_small_t_vanishes():
    A = np.diag([1.0, 3.0])
    x = np.array([1.0, 1.0])
    vals = [quasi_k_functional(A, WeightedSpace.uniform(2), x, t) for t in 10.0 ** -np.arange(0, 8)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_k_diag_bounded_by_norm():
    A = np.diag([1.0, 100.0])
    assert quasi_k_functional(A, WeightedSpace.uniform(2), np.array([0.0, 1.0]), 1.0) <= 1.0


@given(seed=st.integers(0, 10_000))
def test_k_monotone_and_concave(seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, 4)
    x = rng.standard_normal(4)
    sp = WeightedSpace.uniform(4)
    ts = 2.0 ** np.arange(-8, 9)
    K = np.array([quasi_k_functional(A, sp, x, t) for t in ts])
    assert np.all(np.diff(K) >= -1e-12 * K.max())
    # concavity on a dyadic grid: K(2t) ≤ 2K(t)
    assert np.all(K[1:] <= 2 * K[:-1] * (1 + 1e-9))
    assert np.all(K <= sp.norm(x) + ts * sp.norm(A @ x) + 1e-12)


def test_real_interp_identity_series():
    theta, q = 0.5, 2.0
    js = np.arange(-20, 21)
    c = np.sum((2.0 ** (-js * theta) * np.minimum(1.0, 2.0 ** js)) ** q) ** (1 / q)
    x = np.array([3.0, 4.0])
    val = real_interp_norm(np.eye(2), WeightedSpace.uniform(2), theta, q, x)
    assert val == pytest.approx(c * 5.0, rel=1e-9)


def test_real_interp_zero_and_homogeneous(rng):
    A = random_spd(rng, 4)
    sp = WeightedSpace.uniform(4)
    assert real_interp_norm(A, sp, 0.5, 2, np.zeros(4)) == 0.0
    x = rng.standard_normal(4)
    a = real_interp_norm(A, sp, 0.3, 3, x)
    assert real_interp_norm(A, sp, 0.3, 3, 2 * x) == pytest.approx(2 * a, rel=1e-12)
    with pytest.raises(DomainError):
        real_interp_norm(A, sp, 0.5, 2, x, j_range=(-5, 5))


# --------------------------------------------------------------------- BIP

@given(seed=st.integers(0, 10_000))
def test_spd_imaginary_powers_unitary(seed):
    A = random_spd(np.random.default_rng(seed), 6)
    M, om, norms = bip_fit(A, WeightedSpace.uniform(6), np.linspace(-5, 5, 11))
    np.testing.assert_allclose(norms, 1.0, atol=1e-8)


def test_bip_nonsymmetric_finite(rng):
    A = random_sectorial(rng, 8)
    M, om, norms = bip_fit(A, WeightedSpace.uniform(8))
    assert np.isfinite(M) and M >= 1 - 1e-12 and om >= 0
