import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nacplab import fields as F
from nacplab.at_verifier import at_fit, at_operator_norm, default_pairs, holder_defect, shift_search
from nacplab.discretizer import assemble_family, build_mesh, matrix_family, time_grid
from nacplab.errors import DomainError, ExhaustedError
from nacplab.sectorial import WeightedSpace, op_norm_bounds


def lin(steps=4):
    return matrix_family(time_grid(1, steps), lambda t: 1 + t)


def holder(beta, n=16, steps=16, c=1.0):
    mesh = build_mesh("interval", 1 / (n + 1))
    fld = F.holder_blend(F.smooth_base(), beta_time=beta, c=c, t0=0.0)
    return assemble_family(mesh, fld, "dirichlet", time_grid(1.0, steps))


def test_at_norm_scalar_examples():
    fam = lin()
    assert at_operator_norm(fam, 0.0, 1.0, -1.0)[1] == pytest.approx(0.25, rel=1e-13)
    assert at_operator_norm(fam, 0.0, 1.0, -9.0)[1] == pytest.approx(0.05, rel=1e-13)
    lo, up = at_operator_norm(fam, 0.0, 1.0, -9.0)
    assert lo == up                          # scalar, p = 2: exact


def test_at_norm_zero_cases():
    fam = matrix_family(time_grid(1, 4), lambda t: np.diag([1.0, 3.0]))
    for lam in (-1.0, 5j, -100.0 + 1.0j):
        assert at_operator_norm(fam, 0.25, 0.75, lam) == (0.0, 0.0)
    fam = holder(0.75)
    for t in fam.time_grid[::4]:
        assert at_operator_norm(fam, t, t, -3.0 + 2j) == (0.0, 0.0)


def test_at_norm_symmetry_diagnostic():
    fam = holder(0.75, c=2.0)
    for lam in (-1.0, -50.0, 300j):
        a = at_operator_norm(fam, 0.0, 0.5, lam)[1]
        b = at_operator_norm(fam, 0.5, 0.0, lam)[1]
        assert 0.1 <= a / b <= 10


def test_holder_defect_scalar():
    fam = lin()
    assert holder_defect(fam, 1.0, 0.0, 0.0)[1] == pytest.approx(1.0, rel=1e-13)
    # γ = 1 lies outside the admissible range; the γ → 1 limit is 0.5
    assert holder_defect(fam, 1.0, 0.0, 1 - 1e-9)[1] == pytest.approx(0.5, rel=1e-8)
    with pytest.raises(DomainError):
        holder_defect(fam, 1.0, 0.0, 1.0)
    auto = matrix_family(time_grid(1, 4), lambda t: 2.0)
    assert holder_defect(auto, 1.0, 0.0, 0.5) == (0.0, 0.0)


def test_holder_defect_gamma0_direct():
    fam = holder(0.6, c=3.0)
    t, s = fam.time_grid[10], fam.time_grid[3]
    At, As = fam.matrices[10], fam.matrices[3]
    sp = WeightedSpace(fam.weights, 2)
    direct = op_norm_bounds((At - As) @ np.linalg.inv(As), sp)[1]
    assert holder_defect(fam, t, s, 0.0)[1] == pytest.approx(direct, rel=1e-10)


@settings(max_examples=20)
@given(seed=st.integers(0, 10_000), ti=st.integers(0, 8), si=st.integers(0, 8))
def test_holder_defect_bounded_perturbation(seed, ti, si):
    rng = np.random.default_rng(seed)
    n = 5
    G = rng.standard_normal((n, n))
    A0 = G @ G.T + n * np.eye(n)
    B = rng.standard_normal((n, n))
    b = np.linalg.norm(B, 2)
    phi = lambda t: np.sqrt(t)                       # noqa: E731
    fam = matrix_family(time_grid(1, 8), lambda t: A0 + phi(t) * B)
    t, s = fam.time_grid[ti], fam.time_grid[si]
    bound = b * abs(phi(t) - phi(s)) * np.linalg.norm(np.linalg.inv(fam.matrices[si]), 2)
    assert holder_defect(fam, t, s, 0.0)[1] <= bound * (1 + 1e-10) + 1e-14


def test_at_fit_scalar_recovers_exponents():
    fam = matrix_family(time_grid(1, 64), lambda t: 1 + abs(t) ** 0.75)
    fit = at_fit(fam)
    assert 0.70 <= fit.beta_fit <= 0.80
    assert -0.05 <= fit.gamma_fit <= 0.10
    assert fit.r2_time >= 0.98 and fit.r2_lambda >= 0.98
    assert fit.admissible
    assert fit.sample_spec["radii"][1] / fit.sample_spec["radii"][0] >= 1e6 * (1 - 1e-12)


def test_at_fit_autonomous_flag():
    fit = at_fit(matrix_family(time_grid(1, 16), lambda t: np.diag([1.0, 2.0])))
    assert fit.flag == "autonomous" and not fit.admissible


def test_at_fit_needs_pairs():
    with pytest.raises(DomainError):
        at_fit(lin(), pair_grid=[(0.0, 1.0)])


def test_at_fit_holder_blend_admissible():
    fit = at_fit(holder(0.9, n=16, steps=32))
    assert fit.admissible and fit.beta_fit >= 0.8
    assert fit.beta_fit - fit.gamma_fit > 0
    assert -0.1 <= fit.gamma_fit <= 1.2 and -0.1 <= fit.beta_fit <= 1.2


def test_default_pairs_include_start():
    fam = holder(0.75, steps=32)
    pairs = default_pairs(fam)
    assert len(pairs) >= 8
    assert any(0.0 in p for p in pairs)


def test_shift_search_examples():
    auto = matrix_family(time_grid(1, 8), lambda t: 2.0)
    res = shift_search(auto, [0.5, 1.0, 2.0])
    assert res.mu_star == 0.5 and res.table[0][1] == 0.0
    fam = matrix_family(time_grid(1, 16), lambda t: 1 + abs(t) ** 0.75)
    res = shift_search(fam, [0.0, 1.0, 10.0, 100.0])
    assert np.isfinite(res.mu_star) and res.monotone
    assert dict(res.table)[res.mu_star] <= 0.5
    with pytest.raises(ExhaustedError) as info:
        shift_search(fam, [0.0, 1.0], target=0.0)
    assert len(info.value.table) == 2
    with pytest.raises(DomainError):
        shift_search(fam, [1.0, 0.5])
