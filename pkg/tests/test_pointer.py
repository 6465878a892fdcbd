import numpy as np
import pytest

from damlab.liouville import gad_liouvillian
from damlab.opalg import NumericalError, devectorize, expm, hs_norm, vectorize
from damlab.pointer import (
    GadMeasurementSetup,
    GaussianApparatus,
    JointState,
    MomentumGrid,
    adiabatic_rate_check,
    count_peaks,
    deviation_measure,
    evolve_joint,
    find_crossing,
    ideal_dam_state,
    ideal_pm_state,
    loglog_slope,
    pointer_distribution,
    sector_liouvillian,
    trapezoid_weights,
)

A = np.diag([1.0, 0.0]).astype(complex)


def small_setup(**kw):
    kw.setdefault("nodes", 65)
    return GadMeasurementSetup(**kw)


def test_apparatus_and_grid():
    app = GaussianApparatus(0.2)
    assert app.sigma_p == pytest.approx(2.5)
    grid = MomentumGrid.uniform(app)
    grid.check_resolves(app)
    assert grid.p_max == pytest.approx(20.0)
    with pytest.raises(ValueError):
        GaussianApparatus(0.0)
    with pytest.raises(ValueError):
        MomentumGrid.uniform(app, 64)
    with pytest.raises(NumericalError):
        MomentumGrid.uniform(app, 9, span=1.0).check_resolves(app)


def test_trapezoid_weights():
    np.testing.assert_allclose(trapezoid_weights(np.array([0.0, 1.0, 3.0])), [0.5, 1.5, 1.0])


def test_sector_liouvillian_validation():
    lv = gad_liouvillian(0.5, 5.0)
    with pytest.raises(ValueError):
        sector_liouvillian(lv, A, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        sector_liouvillian(lv, np.array([[0, 1], [0, 0]]), 1.0, 0.0, 1.0)


def test_sector_generator_against_direct_map():
    from conftest import superop_from_map

    lv = gad_liouvillian(0.3, 5.0)
    p, pp, t = 1.7, -0.4, 0.3

    def fn(r):
        return devectorize(lv @ vectorize(r)) - 1j / t * (p * A @ r - pp * r @ A)

    np.testing.assert_allclose(sector_liouvillian(lv, A, p, pp, t), superop_from_map(fn, 2), atol=1e-13)


def test_joint_state_invariants():
    s = small_setup(theta=0.3)
    joint = s.evolve(0.2)
    assert joint.trace() == pytest.approx(1.0, abs=1e-8)
    assert joint.hermiticity_error() < 1e-14
    # the pointer coupling commutes with A, so the system populations stay put
    marg = joint.system_marginal()
    np.testing.assert_allclose(np.diag(marg).real, [0.3, 0.7], atol=1e-8)
    evals = np.linalg.eigvalsh(joint.matrix())
    assert evals.min() > -1e-8


def test_zero_time_is_product_state():
    s = small_setup()
    joint = s.evolve(0.0)
    ref = ideal_dam_state(s.rho, 0.0, s.apparatus, s.grid)
    assert deviation_measure(joint, ref) < 1e-14


def test_no_dissipation_matches_ideal_pm():
    # with a vanishing rate the sector propagator is the unitary shift exactly
    app = GaussianApparatus(0.2)
    grid = MomentumGrid.uniform(app, 65)
    rho = np.diag([0.4, 0.6]).astype(complex)
    joint = evolve_joint(np.zeros((4, 4), dtype=complex), A, app, 3.0, grid, rho)
    assert deviation_measure(joint, ideal_pm_state(rho, A, app, grid)) < 1e-12


def test_deviation_norms_and_errors():
    s = small_setup()
    a = s.evolve(0.0)
    b = ideal_pm_state(s.rho, A, s.apparatus, s.grid)
    hs = deviation_measure(a, b, "hs")
    assert hs == pytest.approx(hs_norm(JointState(a.grid, a.blocks - b.blocks).matrix()), rel=1e-12)
    assert deviation_measure(a, b, "trace") >= hs
    with pytest.raises(ValueError):
        deviation_measure(a, b, "max")
    with pytest.raises(ValueError):
        deviation_measure(a, small_setup(nodes=33).evolve(0.0))


def test_pm_measure_decreases_with_coupling_strength():
    s = small_setup()
    vals = [s.pm_measure(1.0 / inv_t) for inv_t in (20.0, 80.0, 320.0)]
    assert vals[0] > vals[1] > vals[2]


def test_dam_measure_decreases_with_coupling_time():
    s = small_setup()
    vals = [s.dam_measure(t) for t in (2.0, 20.0, 200.0)]
    assert vals[0] > vals[1] > vals[2]


def test_pointer_distribution_limits():
    s = small_setup(theta=0.3, nodes=129)
    x = np.linspace(-1.5, 2.5, 801)
    impulsive = pointer_distribution(s.evolve(0.0), x)
    # at T = 0 the pointer stays centered at zero
    gauss = np.exp(-x**2 / (2 * 0.04)) / np.sqrt(2 * np.pi * 0.04)
    np.testing.assert_allclose(impulsive.density, gauss, atol=1e-8)
    assert impulsive.normalization() == pytest.approx(1.0, abs=1e-6)
    assert count_peaks(impulsive) == 1
    slow = pointer_distribution(s.evolve(100.0), x)
    assert slow.mean() == pytest.approx(0.3, abs=1e-4)
    with pytest.raises(NumericalError):
        pointer_distribution(s.evolve(0.0), np.linspace(0, 0.1, 11))


def test_pm_limit_has_two_peaks():
    s = small_setup(theta=0.5, nodes=129)
    app, grid = s.apparatus, s.grid
    x = np.linspace(-1.5, 2.5, 801)
    dist = pointer_distribution(ideal_pm_state(s.rho, A, app, grid), x)
    oracle = 0.5 * (np.exp(-x**2 / 0.08) + np.exp(-(x - 1) ** 2 / 0.08)) / np.sqrt(0.08 * np.pi)
    np.testing.assert_allclose(dist.density, oracle, atol=1e-8)
    assert count_peaks(dist) == 2


def test_adiabatic_rate_check_oracle():
    # the exact propagator on rho_theta, built by hand, against the helper's distance
    lv = gad_liouvillian(0.5, 5.0)
    rho = np.diag([0.5, 0.5]).astype(complex)
    t = 7.0
    exact = devectorize(expm(t * lv - 1j * (1.0 * np.kron(np.eye(2), A))) @ vectorize(rho))
    ref = np.exp(-0.5j) * rho
    (_, d), = adiabatic_rate_check(lv, A, 1.0, 0.0, [t], rho, norm="hs")
    assert d == pytest.approx(hs_norm(exact - ref), rel=1e-12)
    with pytest.raises(ValueError):
        adiabatic_rate_check(lv, A, 1.0, 0.0, [2.0, 1.0])


def test_adiabatic_deviation_scales_inverse_time():
    lv = gad_liouvillian(0.5, 5.0)
    pairs = adiabatic_rate_check(lv, A, 1.0, 0.0, np.geomspace(2.0, 200.0, 9))
    assert loglog_slope(pairs) == pytest.approx(-1.0, abs=0.05)


def test_loglog_slope_oracle():
    t = np.geomspace(1, 100, 5)
    assert loglog_slope(zip(t, 3 * t**-2)) == pytest.approx(-2.0, abs=1e-12)


def test_find_crossing_expands_bracket():
    root = find_crossing(lambda x: 1.0 / x, 0.01, 1.0, 2.0, rtol=1e-9)
    assert root == pytest.approx(100.0, rel=1e-8)
    with pytest.raises(NumericalError):
        find_crossing(lambda x: 1.0, 0.5, 1.0, 2.0, max_expand=3)
    with pytest.raises(ValueError):
        find_crossing(lambda x: x, 0.5, 2.0, 1.0)
