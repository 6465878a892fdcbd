import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from damlab.liouville import SIGMA_MINUS, gad_liouvillian
from damlab.opalg import (
    DegenerateSteadyStateError,
    NumericalError,
    devectorize,
    expm,
    hs_norm,
    sprepost,
    spectral_info,
    steady_state,
    trace_norm,
    vectorize,
)

from conftest import random_hermitian, random_matrix, random_state

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def test_vectorize_identity_round_trip():
    v = vectorize(np.eye(2))
    np.testing.assert_array_equal(v, [1, 0, 0, 1])
    np.testing.assert_array_equal(devectorize(v), np.eye(2))


def test_vectorize_basis_element():
    # column stacking puts entry (0, 1) at position 0 + 2 * 1
    np.testing.assert_array_equal(vectorize(SIGMA_MINUS), [0, 0, 1, 0])


@given(seeds, st.integers(1, 8))
def test_round_trip_exact(seed, d):
    x = random_matrix(np.random.default_rng(seed), d)
    np.testing.assert_array_equal(devectorize(vectorize(x), d), x)


def test_sandwich_identity(rng):
    a, x, b = (random_matrix(rng, 2) for _ in range(3))
    np.testing.assert_allclose(sprepost(a, b) @ vectorize(x), vectorize(a @ x @ b), atol=1e-13)


def test_devectorize_rejects_bad_length():
    with pytest.raises(ValueError):
        devectorize(np.zeros(5))
    with pytest.raises(ValueError):
        vectorize(np.zeros((2, 3)))


def test_expm_zero_and_nilpotent():
    np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1, 1], [0, 1]], atol=1e-15)


def test_expm_anti_hermitian_against_eigendecomposition(rng):
    h = random_hermitian(rng, 4)
    w, v = np.linalg.eigh(h)
    oracle = (v * np.exp(-1j * w)) @ v.conj().T
    u = expm(-1j * h)
    np.testing.assert_allclose(u, oracle, atol=1e-10)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(4), atol=1e-10)


@pytest.mark.parametrize("scale", [1e-3, 0.2, 0.9, 2.0, 5.0, 50.0, 400.0])
def test_expm_non_normal_against_eigendecomposition(rng, scale):
    # diagonalizable but far from normal, with eigenvalues in the left half-plane
    vecs = np.eye(4) + 0.8 * random_matrix(rng, 4)
    lam = -scale * (rng.random(4) + 1j * rng.standard_normal(4))
    m = vecs @ np.diag(lam) @ np.linalg.inv(vecs)
    oracle = vecs @ np.diag(np.exp(lam)) @ np.linalg.inv(vecs)
    np.testing.assert_allclose(expm(m), oracle, atol=1e-9 * max(1.0, np.abs(oracle).max()))


def test_expm_batched_matches_single(rng):
    stack = np.stack([random_matrix(rng, 4) * s for s in (0.01, 1.0, 30.0)])
    out = expm(stack)
    for m, e in zip(stack, out):
        np.testing.assert_allclose(e, scipy.linalg.expm(m), rtol=1e-10, atol=1e-12)


@given(seeds)
@settings(max_examples=30)
def test_expm_commuting_sum(seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 3)
    a = 0.3 * h + 0.1 * (h @ h)
    b = -0.7 * h
    np.testing.assert_allclose(expm(a + b), expm(a) @ expm(b), atol=1e-10)


def test_expm_rejects_non_finite():
    with pytest.raises(NumericalError):
        expm(np.array([[np.nan, 0], [0, 1.0]]))


def test_trace_norm_examples():
    assert trace_norm(np.eye(2)) == pytest.approx(2.0, abs=1e-14)
    assert trace_norm(np.diag([3.0, -4.0])) == pytest.approx(7.0, abs=1e-14)
    assert trace_norm(np.zeros((3, 3))) == 0.0


def test_trace_norm_gram_oracle(rng):
    m = random_matrix(rng, 3)
    oracle = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(m.conj().T @ m), 0, None)))
    assert trace_norm(m) == pytest.approx(oracle, rel=1e-12)
    assert trace_norm(m.conj().T) == pytest.approx(trace_norm(m), rel=1e-12)


@given(seeds)
@settings(max_examples=40)
def test_trace_norm_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b = random_matrix(rng, 3), random_matrix(rng, 3)
    assert trace_norm(a + b) <= trace_norm(a) + trace_norm(b) + 1e-12


def test_hs_norm_is_frobenius(rng):
    m = random_matrix(rng, 4)
    assert hs_norm(m) == pytest.approx(np.sqrt(np.sum(np.abs(m) ** 2)), rel=1e-14)


def test_steady_state_gad():
    rho = steady_state(gad_liouvillian(0.3, 5.0))
    np.testing.assert_allclose(rho, np.diag([0.3, 0.7]), atol=1e-12)
    np.testing.assert_allclose(steady_state(gad_liouvillian(0.5, 17.0)), np.eye(2) / 2, atol=1e-12)


def test_steady_state_degenerate_raises():
    with pytest.raises(DegenerateSteadyStateError, match="two smallest"):
        steady_state(np.zeros((4, 4)))


def test_spectrum_of_gad_against_assembled_superoperator():
    from conftest import superop_from_map

    sm, sp = SIGMA_MINUS, SIGMA_MINUS.conj().T
    theta, gamma = 0.5, 4.0

    def gad_map(r):
        def term(o):
            od = o.conj().T
            return o @ r @ od - 0.5 * (od @ o @ r + r @ od @ o)
        return gamma * (theta * term(sm) + (1 - theta) * term(sp))

    explicit = superop_from_map(gad_map, 2)
    np.testing.assert_allclose(gad_liouvillian(theta, gamma), explicit, atol=1e-14)
    oracle = np.sort(np.linalg.eigvals(explicit).real)
    info = spectral_info(explicit)
    np.testing.assert_allclose(np.sort(info.eigenvalues.real), oracle, atol=1e-12)
    np.testing.assert_allclose(np.sort(info.eigenvalues.real), [-4, -2, -2, 0], atol=1e-12)


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.8])
@pytest.mark.parametrize("gamma", [1.0, 5.0, 35.0])
def test_gad_gap_is_half_gamma(theta, gamma):
    info = spectral_info(gad_liouvillian(theta, gamma))
    assert info.gap == pytest.approx(gamma / 2, rel=1e-12)
    assert np.sum(np.abs(info.eigenvalues) < 1e-8 * gamma) == 1
    assert abs(info.eigenvalues[info.steady_index]) < 1e-12


@pytest.mark.parametrize("theta", [0.2, 0.5, 0.9])
def test_trace_preserved_up_to_long_times(rng, theta):
    lv = gad_liouvillian(theta, 5.0)
    rho = random_state(rng, 2)
    for t in np.linspace(0, 100 / 2.5, 9):
        out = devectorize(expm(lv * t) @ vectorize(rho))
        assert abs(np.trace(out) - 1) < 1e-10
        np.testing.assert_allclose(out, out.conj().T, atol=1e-12)
