import warnings

import numpy as np
import pytest

from damlab.liouville import gad_liouvillian
from damlab.metrology import (
    RankDeficiencyError,
    apply_gad_copies,
    appendix_b_optimality_check,
    as_distribution,
    cfi,
    dam_density,
    estimation_variance,
    fisher_x_grid,
    gad_dual_identity,
    gad_qfi,
    optimal_observable,
    pm_density,
    povm_adiabatic,
    povm_analytic_gad,
    povm_impulsive,
    povm_numeric,
    povm_small_t,
    qcrb_violation_report,
    qfi_of_family,
    random_density,
    sample_outcomes,
    sld_qfi,
    small_t_density,
    state_derivative,
)
from damlab.opalg import devectorize, expm, vectorize
from damlab.pointer import GaussianApparatus, MomentumGrid

A = np.diag([1.0, 0.0]).astype(complex)


def gad_family(th):
    return np.diag([th, 1.0 - th]).astype(complex)


@pytest.mark.parametrize("theta", np.round(np.arange(0.1, 1.0, 0.1), 1))
def test_gad_sld_and_qfi(theta):
    res = sld_qfi(gad_family(theta), state_derivative(gad_family, theta))
    np.testing.assert_allclose(res.sld, np.diag([1 / theta, -1 / (1 - theta)]), atol=1e-10)
    assert res.qfi == pytest.approx(gad_qfi(theta), abs=1e-10 * gad_qfi(theta))
    a_opt = optimal_observable(gad_family(theta), res.d_rho, theta)
    np.testing.assert_allclose(a_opt, A, atol=1e-10)


def test_pure_state_qfi_oracle(rng):
    # pure family psi(th) = exp(-i th G) psi0 has QFI 4 Var_psi0(G)
    from conftest import random_hermitian

    g = random_hermitian(rng, 3)
    psi0 = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    psi0 /= np.linalg.norm(psi0)
    w, v = np.linalg.eigh(g)

    def fam(th):
        psi = v @ (np.exp(-1j * th * w) * (v.conj().T @ psi0))
        return np.outer(psi, psi.conj())

    var = np.real(psi0.conj() @ g @ g @ psi0 - (psi0.conj() @ g @ psi0) ** 2)
    assert qfi_of_family(fam, 0.3) == pytest.approx(4 * var, rel=1e-7)


def test_sld_errors():
    with pytest.raises(ValueError):
        sld_qfi(np.eye(2) / 2, np.eye(2))
    with pytest.raises(RankDeficiencyError):
        sld_qfi(np.diag([1.0, 0.0]), np.diag([-1.0, 1.0]))


def test_cfi_of_gaussian_shift():
    sigma = 0.2
    x = fisher_x_grid(sigma)
    f = cfi(lambda th: as_distribution(x, dam_density(x, th, sigma)), 0.5)
    assert f == pytest.approx(1 / sigma**2, rel=1e-3)


def test_cfi_rejects_moving_grid():
    with pytest.raises(ValueError):
        cfi(lambda th: as_distribution(np.linspace(th - 1, th + 1, 101), np.ones(101) / 2), 0.5)


@pytest.mark.parametrize("theta", [0.3, 0.5])
def test_pm_cfi_approaches_qfi_from_below(theta):
    vals = []
    for sigma in (0.4, 0.3, 0.2, 0.1):
        x = fisher_x_grid(sigma)
        vals.append(cfi(lambda th: as_distribution(x, pm_density(x, th, sigma)), theta))
    h = gad_qfi(theta)
    assert all(v <= h + 1e-6 for v in vals)
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(h, rel=1e-3)


def test_small_t_density_is_normalized():
    x = fisher_x_grid(0.2)
    d = as_distribution(x, small_t_density(x, 0.4, 5.0, 0.01, 0.2))
    assert d.normalization() == pytest.approx(1.0, abs=1e-6)


def test_dual_identity_branch_independent():
    nu = np.linspace(-30, 30, 61)
    for tg in (0.0, 0.05, 2.0, 400.0):
        a = gad_dual_identity(0.3, 5.0, tg / 5.0, nu, branch=1)
        b = gad_dual_identity(0.3, 5.0, tg / 5.0, nu, branch=-1)
        np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("nu", [-7.3, 0.0, 0.9, 12.0])
def test_dual_identity_against_expm(nu):
    theta, gamma, t = 0.3, 5.0, 0.7
    lv = gad_liouvillian(theta, gamma)
    gen = t * lv - 1j * nu * np.kron(np.eye(2), A)  # p = nu, p' = 0
    back = devectorize(expm(gen.conj().T) @ vectorize(np.eye(2))).conj().T
    g1, g2 = gad_dual_identity(theta, gamma, t, np.array([nu]))
    np.testing.assert_allclose([back[0, 0], back[1, 1]], [g1[0], g2[0]], atol=1e-12)
    assert abs(back[0, 1]) < 1e-14


@pytest.fixture(scope="module")
def povm_setup():
    sigma, theta, gamma = 0.2, 0.3, 5.0
    app = GaussianApparatus(sigma)
    grid = MomentumGrid.uniform(app, 129)
    x = np.linspace(-1.6, 2.6, 421)
    return sigma, theta, gamma, app, grid, x


def test_numeric_matches_analytic_povm(povm_setup):
    sigma, theta, gamma, app, grid, x = povm_setup
    lv = gad_liouvillian(theta, gamma)
    num = povm_numeric(lv, A, app, 0.3, x, grid)
    ana = povm_analytic_gad(theta, gamma, 0.3, sigma, x)
    assert np.abs(num.elements - ana.elements).max() < 1e-7
    assert num.completeness_error() < 1e-3
    assert num.min_eigenvalue() > -1e-8
    assert len(num) == len(x) and num[3].x == x[3]


def test_numeric_povm_at_zero_time_is_impulsive(povm_setup):
    sigma, theta, gamma, app, grid, x = povm_setup
    num = povm_numeric(gad_liouvillian(theta, gamma), A, app, 0.0, x, grid)
    assert np.abs(num.elements - povm_impulsive(sigma, x).elements).max() < 1e-6


def test_small_t_richardson_ratio():
    sigma, theta, gamma, t = 0.2, 0.3, 5.0, 0.004
    x = np.linspace(-1.6, 2.6, 421)
    err = []
    for tt in (t, t / 2):
        exact = povm_analytic_gad(theta, gamma, tt, sigma, x).elements
        err.append(np.abs(exact - povm_small_t(theta, gamma, tt, sigma, x).elements).max())
    assert err[0] / err[1] == pytest.approx(4.0, rel=0.2)


def test_small_t_warns_outside_regime():
    with pytest.warns(UserWarning):
        povm_small_t(0.5, 5.0, 1.0, 0.2, np.linspace(-1, 2, 11))


def test_adiabatic_povm_approached_at_wide_pointer():
    sigma, theta, gamma = 1.0, 0.3, 5.0
    x = np.linspace(-8.0, 9.0, 681)
    exact = povm_analytic_gad(theta, gamma, 400.0 / gamma, sigma, x)
    ref = povm_adiabatic(theta, sigma, x)
    assert np.abs(exact.elements - ref.elements).max() < 1e-3


def test_povm_reproduces_density(povm_setup):
    sigma, theta, gamma, app, grid, x = povm_setup
    ana = povm_analytic_gad(theta, gamma, 0.0, sigma, x)
    np.testing.assert_allclose(ana.probabilities(gad_family(theta)), pm_density(x, theta, sigma), atol=1e-6)


def test_sample_outcomes_moments():
    x = np.linspace(-2, 3, 2001)
    dist = as_distribution(x, dam_density(x, 0.5, 0.3))
    s = sample_outcomes(dist, 200000, seed=4)
    assert s.mean() == pytest.approx(0.5, abs=5e-3)
    assert s.std() == pytest.approx(0.3, rel=1e-2)
    with pytest.raises(ValueError):
        sample_outcomes(as_distribution(x, 2 * dist.density), 10, seed=1)


def test_estimation_variances():
    pm = estimation_variance("pm", 0.5, 0.0, 100, 4000, seed=11)
    assert pm.variance == pytest.approx(0.25 / 100, rel=0.1)
    dam = estimation_variance("dam", 0.5, 0.2, 100, 4000, seed=11)
    assert dam.variance == pytest.approx(0.04 / 100, rel=0.1)
    assert dam.variance < dam.qcrb
    zero = estimation_variance("dam", 0.5, 0.0, 100, 10, seed=1)
    assert zero.variance == 0.0 and zero.bias == 0.0
    with pytest.raises(ValueError):
        estimation_variance("finite", 0.5, 0.2, 10, 2, seed=1)
    with pytest.raises(ValueError):
        estimation_variance("pm", 0.5, 0.2, 0, 2, seed=1)


def test_estimation_is_deterministic():
    a = estimation_variance("pm", 0.3, 0.2, 50, 20, seed=7).estimates
    b = estimation_variance("pm", 0.3, 0.2, 50, 20, seed=7).estimates
    np.testing.assert_array_equal(a, b)


def test_violation_report_small_t():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = qcrb_violation_report(0.5, [1 / 7], [0.01, 0.02], 5.0)
    assert {r.scheme for r in rows} == {"PM-ideal", "DAM-ideal", "finite-T"}
    dam = next(r for r in rows if r.scheme == "DAM-ideal")
    assert dam.violated and dam.cfi == pytest.approx(49.0, rel=1e-3)
    assert any(r.violated for r in rows if r.scheme == "finite-T")


def test_channel_copies_against_kron(rng):
    rho = random_density(2, rng)
    one = apply_gad_copies(rho, 0.3, 5.0, 0.2, 1)
    direct = devectorize(expm(gad_liouvillian(0.3, 5.0) * 0.2) @ vectorize(rho))
    np.testing.assert_allclose(one, direct, atol=1e-14)
    a, b = random_density(2, rng), random_density(2, rng)
    two = apply_gad_copies(np.kron(a, b), 0.3, 5.0, 0.2, 2)
    np.testing.assert_allclose(two, np.kron(apply_gad_copies(a, 0.3, 5.0, 0.2, 1),
                                            apply_gad_copies(b, 0.3, 5.0, 0.2, 1)), atol=1e-14)
    with pytest.raises(ValueError):
        apply_gad_copies(rho, 0.3, 5.0, 0.2, 3)


@pytest.mark.parametrize("copies", [1, 2])
def test_optimality_bound(copies):
    theta = 0.3
    best = appendix_b_optimality_check(theta, 5.0, [0.05, 1.0, 10.0], copies, 20, seed=3)
    assert best <= copies * gad_qfi(theta) + 1e-6
    # the steady state itself, used as input, saturates the bound at long times
    fam = (lambda th: np.kron(gad_family(th), gad_family(th))) if copies == 2 else gad_family
    sat = appendix_b_optimality_check(theta, 5.0, [10.0], copies, 0, seed=0, inputs=[fam])
    assert sat == pytest.approx(copies * gad_qfi(theta), rel=1e-6)
