import numpy as np
import pytest
from hypothesis import given, strategies as st

from nacplab import fields as F
from nacplab.errors import DomainError, SingularPointError


def test_meyers_at_unit_x():
    M = F.eval_matrix(F.meyers(), 0.0, [1.0, 0.0])
    np.testing.assert_allclose(M, [[1.0, 0.0], [0.0, 0.25]], atol=1e-15)


def test_meyers_matches_formula_off_axis():
    # 1/(4r²)·[[4x²+y², 3xy], [3xy, x²+4y²]]
    x, y = 0.3, -0.4
    r2 = x * x + y * y
    expect = np.array([[4 * x * x + y * y, 3 * x * y], [3 * x * y, x * x + 4 * y * y]]) / (4 * r2)
    np.testing.assert_allclose(F.eval_matrix(F.meyers(), 0.0, [x, y]), expect, rtol=1e-14)


def test_meyers_eigenvalues_are_one_and_quarter():
    th = np.linspace(0.01, 2 * np.pi, 50)
    X = 0.7 * np.stack([np.cos(th), np.sin(th)], 1)
    ev = np.linalg.eigvalsh(F.meyers().leading(0.0, X))
    np.testing.assert_allclose(ev[:, 0], 0.25, atol=1e-12)
    np.testing.assert_allclose(ev[:, 1], 1.0, atol=1e-12)


def test_meyers_origin_is_singular():
    with pytest.raises(SingularPointError):
        F.eval_matrix(F.meyers(), 0.0, [0.0, 0.0])


def test_outside_domain_rejected():
    with pytest.raises(DomainError):
        F.eval_matrix(F.constant(1, domain="interval"), 0.0, [1.5])
    with pytest.raises(DomainError):
        F.eval_matrix(F.meyers(), 0.0, [0.9, 0.9])


@given(t=st.floats(0, 1), x=st.floats(0, 1), y=st.floats(0, 1))
def test_constant_identity(t, x, y):
    np.testing.assert_array_equal(F.eval_matrix(F.constant(2), t, [x, y]), np.eye(2))


@given(x=st.floats(0, 1), t0=st.floats(0, 1))
def test_holder_blend_at_t0_is_base(x, t0):
    base = F.smooth_base(1)
    fld = F.holder_blend(base, beta_time=0.6, c=2.0, t0=t0)
    np.testing.assert_allclose(F.eval_matrix(fld, t0, [x]), F.eval_matrix(base, t0, [x]),
                               rtol=0, atol=0)


FAMILIES = [
    F.constant(1), F.constant(2), F.smooth_base(1), F.smooth_base(2),
    F.holder_blend(F.smooth_base(1), 0.75, c=1.0, t0=0.3),
    F.linear_blend(F.smooth_base(2), c=0.5),
    F.checkerboard(), F.oscillatory_vmo(),
    F.robin(alpha=0.9, t0=0.2),
    F.with_lower_order(F.smooth_base(1), drift_a=[1.0], zero_order=0.5),
]


@pytest.mark.parametrize("fld", FAMILIES, ids=lambda f: f.name)
def test_declared_invariants_hold(fld):
    X = F.default_samples(fld)
    lam = F.check_invariants(fld, np.linspace(0, 1, 5), X)   # raises on violation
    assert lam >= fld.alpha0 - 1e-12


def test_meyers_invariants_on_punctured_disk():
    fld = F.meyers()
    rng = np.random.default_rng(1)
    r = rng.uniform(0.01, 1, 200)
    th = rng.uniform(0, 2 * np.pi, 200)
    X = np.stack([r * np.cos(th), r * np.sin(th)], 1)
    assert F.check_invariants(fld, [0.0], X) >= fld.alpha0 - 1e-12


def test_robin_beta_nonnegative():
    fld = F.robin(alpha=0.5, beta0=0.0, M=2.0)
    b = fld.robin_beta(0.7, np.array([[0.0], [1.0]]))
    assert np.all(b >= 0)
    with pytest.raises(DomainError):
        F.robin(beta0=-1.0)


# ------------------------------------------------------------------ VMO

def test_vmo_constant_is_zero():
    prof = F.vmo_modulus(F.constant(2), 0.0, [0.05, 0.1, 0.25])
    np.testing.assert_array_equal(np.asarray(prof.eta), 0.0)


def test_vmo_checkerboard_positive_at_quarter():
    board = F.checkerboard(cell=1 / 8, alpha0=0.2, width=1e-6)
    prof = F.vmo_modulus(board, 0.0, [0.25], sample_density=256)
    # independent oracle: a square of side 1/4 covers a 2×2 block of cells at
    # least, where half the samples sit near alpha0 and half near 1
    assert prof.eta[0] > 0.3


def test_vmo_meyers_decays_on_annulus():
    prof = F.vmo_modulus(F.meyers(), 0.0, [0.02, 0.04, 0.08, 0.16], sample_density=512,
                         region=lambda X: np.hypot(X[:, 0], X[:, 1]) > 0.1)
    assert np.all(np.diff(prof.eta) >= 0)
    assert prof.eta[0] < 0.5 * prof.eta[-1]


@given(st.lists(st.floats(0.03, 0.4), min_size=1, max_size=5, unique=True))
def test_vmo_nondecreasing(radii):
    prof = F.vmo_modulus(F.oscillatory_vmo(), 0.0, sorted(radii), sample_density=128)
    assert np.all(np.asarray(prof.eta) >= 0)
    assert np.all(np.diff(prof.eta) >= 0)


def test_vmo_errors():
    with pytest.raises(DomainError):
        F.vmo_modulus(F.constant(2), 0.0, [])
    with pytest.raises(DomainError):
        F.vmo_modulus(F.constant(2), 0.0, [0.001], sample_density=16)


# ---------------------------------------------------------- Hölder fits

def test_time_holder_fit_blend():
    fit = F.time_holder_fit(F.holder_blend(F.smooth_base(1), 0.75, c=1.0),
                            np.linspace(0, 1, 9))
    assert 0.70 <= fit.beta_fit <= 0.80
    assert fit.flag is None


def test_time_holder_fit_constant_flag():
    fit = F.time_holder_fit(F.constant(1), np.linspace(0, 1, 9))
    assert fit.flag == "constant-in-time"


def test_time_holder_fit_linear():
    fit = F.time_holder_fit(F.linear_blend(F.smooth_base(2), c=0.3), np.linspace(0, 1, 9))
    assert 0.95 <= fit.beta_fit <= 1.05


@given(beta=st.floats(0.2, 1.0))
def test_time_holder_fit_recovers_exponent(beta):
    fit = F.time_holder_fit(F.holder_blend(F.constant(1), beta, c=1.0), np.linspace(0, 1, 9))
    assert abs(fit.beta_fit - beta) <= 0.05


def test_time_holder_fit_robin_component():
    fit = F.time_holder_fit(F.robin(alpha=0.6), np.linspace(0, 1, 9), component="robin")
    assert abs(fit.beta_fit - 0.6) <= 0.05


def test_time_holder_fit_needs_pairs():
    with pytest.raises(DomainError):
        F.time_holder_fit(F.constant(1), [0.0, 0.5, 1.0])
