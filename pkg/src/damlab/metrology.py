"""Estimation theory for pointer readouts.

SLD and quantum Fisher information, classical Fisher information of pointer
densities, POVMs of the finite-time measurement (numeric, closed form for
the amplitude-damping qubit, small-T and adiabatic limits), Monte Carlo
estimation and Cramer-Rao comparisons.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import erf

from .liouville import dual, gad_channel, gad_liouvillian
from .opalg import NumericalError, devectorize, expm, vectorize
from .pointer import (
    GaussianApparatus,
    MomentumGrid,
    PointerDistribution,
    _sector_exponents,
    trapezoid_weights,
)

log = logging.getLogger(__name__)

STATE_STEP = 1e-5
DENSITY_STEP = 1e-4
# POVM elements are quadratic in the pointer amplitude, so the momentum grid
# must reach where phi (not phi^2) is negligible
POVM_NODES = 385
POVM_SPAN = 12.0


# -- SLD / QFI ---------------------------------------------------------------

@dataclass(frozen=True)
class SldResult:
    sld: np.ndarray
    qfi: float
    d_rho: np.ndarray


class RankDeficiencyError(NumericalError):
    pass


def sld_qfi(rho: np.ndarray, d_rho: np.ndarray, tol: float = 1e-12) -> SldResult:
    """Symmetric logarithmic derivative and quantum Fisher information.

    Solved in the eigenbasis of rho: ``L_ij = 2 dρ_ij / (λ_i + λ_j)``.
    """
    rho = np.asarray(rho, dtype=complex)
    d_rho = np.asarray(d_rho, dtype=complex)
    if abs(np.trace(d_rho)) > 1e-8:
        raise ValueError("d_rho must be traceless")
    lam, v = np.linalg.eigh(rho)
    lam = np.clip(lam, 0.0, None)
    dr = v.conj().T @ d_rho @ v
    denom = lam[:, None] + lam[None, :]
    null = denom < tol
    scale = max(float(np.abs(dr).max(initial=0.0)), 1.0)
    if np.any(np.abs(dr[null]) > 1e-8 * scale):
        raise RankDeficiencyError("d_rho has weight outside the support of rho")
    l_eig = np.where(null, 0.0, 2.0 * dr / np.where(null, 1.0, denom))
    sld = v @ l_eig @ v.conj().T
    sld = 0.5 * (sld + sld.conj().T)
    qfi = float(np.real(np.trace(rho @ sld @ sld)))
    return SldResult(sld=sld, qfi=max(qfi, 0.0), d_rho=d_rho)


def state_derivative(family: Callable[[float], np.ndarray], theta: float,
                     step: float = STATE_STEP) -> np.ndarray:
    """Central finite difference of a state family, Hermitized."""
    d = (np.asarray(family(theta + step)) - np.asarray(family(theta - step))) / (2.0 * step)
    return 0.5 * (d + d.conj().T)


def qfi_of_family(family: Callable[[float], np.ndarray], theta: float,
                  step: float = STATE_STEP) -> float:
    return sld_qfi(family(theta), state_derivative(family, theta, step)).qfi


def optimal_observable(rho: np.ndarray, d_rho: np.ndarray, theta: float) -> np.ndarray:
    """theta * I + L / H, the observable whose projective measurement saturates the QCRB."""
    res = sld_qfi(rho, d_rho)
    if res.qfi <= 0:
        raise ValueError("quantum Fisher information vanishes")
    a = theta * np.eye(rho.shape[0]) + res.sld / res.qfi
    return 0.5 * (a + a.conj().T)


# -- classical Fisher information --------------------------------------------

def cfi(family: Callable[[float], PointerDistribution], theta: float,
        step: float = DENSITY_STEP, drift_tol: float = 1e-4) -> float:
    """Classical Fisher information of a density family on a fixed x-grid."""
    if step <= 0:
        raise ValueError("step must be positive")
    mid, hi, lo = family(theta), family(theta + step), family(theta - step)
    if not (np.array_equal(mid.x, hi.x) and np.array_equal(mid.x, lo.x)):
        raise ValueError("family must keep a fixed x-grid")
    if abs(hi.normalization() - lo.normalization()) > drift_tol:
        raise NumericalError("normalization drifts between theta +/- step")
    dp = (hi.density - lo.density) / (2.0 * step)
    p = mid.density
    keep = p > 1e-12 * p.max()
    integrand = np.zeros_like(p)
    integrand[keep] = dp[keep] ** 2 / p[keep]
    return float(max(np.sum(mid.weights * integrand), 0.0))


# -- closed-form densities ---------------------------------------------------

def gaussian(x: np.ndarray, center: float, sigma: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-(x - center) ** 2 / (2.0 * sigma ** 2)) / np.sqrt(2.0 * np.pi * sigma ** 2)


def dam_density(x: np.ndarray, theta: float, sigma: float) -> np.ndarray:
    return gaussian(x, theta, sigma)


def pm_density(x: np.ndarray, theta: float, sigma: float) -> np.ndarray:
    return theta * gaussian(x, 1.0, sigma) + (1.0 - theta) * gaussian(x, 0.0, sigma)


def _erf_window(x: np.ndarray, sigma: float) -> np.ndarray:
    s = np.sqrt(2.0) * sigma
    return erf(np.asarray(x) / s) - erf((np.asarray(x) - 1.0) / s)


def small_t_density(x: np.ndarray, theta: float, gamma: float, t: float,
                    sigma: float) -> np.ndarray:
    """First-order-in-T pointer density for the amplitude-damping qubit."""
    jump = t * gamma * theta * (1.0 - theta)
    return ((theta - jump) * gaussian(x, 1.0, sigma)
            + (1.0 - theta - jump) * gaussian(x, 0.0, sigma)
            + jump * _erf_window(x, sigma))


def as_distribution(x: np.ndarray, density: np.ndarray) -> PointerDistribution:
    x = np.asarray(x, dtype=float)
    return PointerDistribution(x, np.asarray(density, dtype=float), trapezoid_weights(x))


# -- POVMs -------------------------------------------------------------------

@dataclass(frozen=True)
class PovmElement:
    x: float
    matrix: np.ndarray


@dataclass
class Povm(Sequence):
    """POVM elements tabulated on an x-grid with quadrature weights."""

    x: np.ndarray
    elements: np.ndarray
    weights: np.ndarray = field(default=None)
    asymmetry: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.weights is None:
            self.weights = trapezoid_weights(self.x)

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return PovmElement(float(self.x[k]), self.elements[k])

    def completeness_error(self) -> float:
        total = np.einsum("k,kab->ab", self.weights, self.elements)
        return float(np.abs(total - np.eye(total.shape[0])).max())

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.elements).min())

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.einsum("kab,ba->k", self.elements, rho))

    def distribution(self, rho: np.ndarray) -> PointerDistribution:
        return PointerDistribution(self.x, self.probabilities(rho), self.weights)


def _symmetrize(elements: np.ndarray) -> tuple[np.ndarray, float]:
    herm = 0.5 * (elements + elements.conj().transpose(0, 2, 1))
    return herm, float(np.abs(elements - herm).max(initial=0.0))


def povm_numeric(l_theta: np.ndarray, a: np.ndarray, app: GaussianApparatus, t: float,
                 x_grid: np.ndarray, grid: MomentumGrid | None = None,
                 completeness_tol: float = 1e-3) -> Povm:
    """POVM of the finite-T measurement from dual sector propagators.

    Each momentum pair contributes ``(exp(L*_{p,p'} T) I)^+``, and the pointer
    projector |x><x| turns the double momentum sum into a Fourier sum.
    """
    grid = grid or MomentumGrid.uniform(app, POVM_NODES, POVM_SPAN)
    grid.check_resolves(app)
    d = a.shape[0]
    n = len(grid)
    pi, pj = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
    if t > 0:
        gens = dual(_sector_exponents(l_theta, a, pi.ravel(), pj.ravel(), t))
        back = devectorize(expm(gens) @ vectorize(np.eye(d, dtype=complex)), d)
        back = back.conj().transpose(0, 2, 1).reshape(n, n, d, d)
    else:
        # only i(pA X - p'X A) survives; on I it gives exp(ipA) exp(-ip'A)
        ev, vecs = np.linalg.eigh(a)
        ph = np.exp(1j * np.outer(grid.nodes, ev))
        u_dag = np.einsum("ab,kb,cb->kac", vecs, ph, vecs.conj())
        back = np.einsum("jab,ibc->ijac", u_dag, u_dag.conj().transpose(0, 2, 1))
    x = np.asarray(x_grid, dtype=float)
    amp = app.phi(grid.nodes)
    f = (grid.weights * amp)[None, :] * np.exp(1j * np.outer(x, grid.nodes))
    tmp = (f @ back.reshape(n, n * d * d)).reshape(len(x), n, d, d)
    elements = np.einsum("kjab,kj->kab", tmp, f.conj()) / (2.0 * np.pi)
    elements, asym = _symmetrize(elements)
    if asym > 1e-12:
        log.info("POVM symmetrization removed anti-Hermitian part of size %.2e", asym)
    povm = Povm(x, elements, asymmetry=asym)
    err = povm.completeness_error()
    if err > completeness_tol:
        raise NumericalError(f"POVM completeness violated by {err:.2e}")
    return povm


def gad_dual_identity(theta: float, gamma: float, t: float, nu: np.ndarray,
                      branch: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal of (exp(L*_{p,p'} T) I)^+ for A = |0><0|, as functions of nu = p - p'.

    ``branch=-1`` flips the sign of the square root; the result must not change.
    """
    nu = np.asarray(nu, dtype=float)
    tg = t * gamma
    s = branch * np.sqrt(tg ** 2 + 2j * tg * nu * (1.0 - 2.0 * theta) - nu ** 2 + 0j)
    small = np.abs(s) < 1e-12
    s_safe = np.where(small, 1.0, s)
    sinhc = np.where(small, 0.5, np.sinh(s_safe / 2.0) / s_safe)
    pre = np.exp(-(tg + 1j * nu) / 2.0)
    c = np.cosh(s / 2.0)
    return pre * (c + (tg - 1j * nu) * sinhc), pre * (c + (tg + 1j * nu) * sinhc)


def povm_analytic_gad(theta: float, gamma: float, t: float, sigma: float,
                      x_grid: np.ndarray, n_nodes: int = 1601, span: float = 12.0) -> Povm:
    """Closed-form POVM for the amplitude-damping qubit, one quadrature over nu.

    The nu range is ``span * sqrt(2)`` momentum widths on either side.
    """
    sp = 0.5 / sigma
    half = span * sp * np.sqrt(2.0)
    nodes, w = np.polynomial.legendre.leggauss(n_nodes)
    nu, w = nodes * half, w * half
    g1, g2 = gad_dual_identity(theta, gamma, t, nu)
    env = w * np.exp(-nu ** 2 / (8.0 * sp ** 2))
    x = np.asarray(x_grid, dtype=float)
    phase = np.exp(1j * np.outer(x, nu))
    elements = np.zeros((len(x), 2, 2), dtype=complex)
    elements[:, 0, 0] = phase @ (env * g1) / (2.0 * np.pi)
    elements[:, 1, 1] = phase @ (env * g2) / (2.0 * np.pi)
    elements, asym = _symmetrize(elements)
    return Povm(x, elements, asymmetry=asym)


def povm_impulsive(sigma: float, x_grid: np.ndarray) -> Povm:
    x = np.asarray(x_grid, dtype=float)
    el = np.zeros((len(x), 2, 2), dtype=complex)
    el[:, 0, 0] = gaussian(x, 1.0, sigma)
    el[:, 1, 1] = gaussian(x, 0.0, sigma)
    return Povm(x, el)


def povm_small_t(theta: float, gamma: float, t: float, sigma: float,
                 x_grid: np.ndarray) -> Povm:
    """Impulsive POVM plus its first-order correction in T."""
    if t * gamma > 0.1:
        warnings.warn(f"small-T expansion used at T*gamma = {t * gamma:.3g}", stacklevel=2)
    x = np.asarray(x_grid, dtype=float)
    half_window = 0.5 * _erf_window(x, sigma)
    g1, g0 = gaussian(x, 1.0, sigma), gaussian(x, 0.0, sigma)
    el = np.zeros((len(x), 2, 2), dtype=complex)
    el[:, 0, 0] = g1 - t * gamma * (1.0 - theta) * (g1 - half_window)
    el[:, 1, 1] = g0 - t * gamma * theta * (g0 - half_window)
    return Povm(x, el)


def povm_adiabatic(theta: float, sigma: float, x_grid: np.ndarray) -> Povm:
    x = np.asarray(x_grid, dtype=float)
    el = gaussian(x, theta, sigma)[:, None, None] * np.eye(2, dtype=complex)
    return Povm(x, el)


# -- sampling and estimation -------------------------------------------------

def sample_outcomes(dist: PointerDistribution, n: int, seed: int | np.random.Generator,
                    norm_tol: float = 1e-4) -> np.ndarray:
    """Inverse-CDF samples from a tabulated density (linear CDF interpolation)."""
    total = dist.normalization()
    if abs(total - 1.0) > norm_tol:
        raise ValueError(f"distribution is not normalized (integral {total:.6f})")
    x, p = dist.x, dist.density
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n)
    return np.interp(u, cdf, x)


Scheme = Literal["pm", "dam", "finite"]


@dataclass(frozen=True)
class EstimationRun:
    scheme: str
    theta_true: float
    sigma: float
    n: int
    trials: int
    seed: int
    estimates: np.ndarray

    @property
    def variance(self) -> float:
        return float(np.var(self.estimates, ddof=1)) if self.trials > 1 else 0.0

    @property
    def bias(self) -> float:
        return float(np.mean(self.estimates) - self.theta_true)

    @property
    def qcrb(self) -> float:
        return self.theta_true * (1.0 - self.theta_true) / self.n


def _trial_outcomes(scheme: Scheme, theta: float, sigma: float, n: int,
                    rng: np.random.Generator, dist: PointerDistribution | None) -> np.ndarray:
    if scheme == "pm":
        bits = (rng.random(n) < theta).astype(float)
        return bits + sigma * rng.standard_normal(n) if sigma > 0 else bits
    if scheme == "dam":
        return theta + sigma * rng.standard_normal(n) if sigma > 0 else np.full(n, theta)
    if scheme == "finite":
        if dist is None:
            raise ValueError("finite scheme needs a tabulated distribution")
        return sample_outcomes(dist, n, rng)
    raise ValueError(f"unknown scheme {scheme!r}")


def estimation_variance(scheme: Scheme, theta: float, sigma: float, n: int, trials: int,
                        seed: int, dist: PointerDistribution | None = None) -> EstimationRun:
    """Monte Carlo of the sample-mean estimator over independent trials.

    Trial k draws from ``default_rng([seed, k])``, so the result does not
    depend on trial ordering.
    """
    if n < 1 or trials < 1:
        raise ValueError("n and trials must be >= 1")
    est = np.empty(trials)
    for k in range(trials):
        rng = np.random.default_rng([seed, k])
        est[k] = _trial_outcomes(scheme, theta, sigma, n, rng, dist).mean()
    return EstimationRun(scheme, theta, sigma, n, trials, seed, est)


# -- Cramer-Rao comparisons --------------------------------------------------

@dataclass(frozen=True)
class FisherReport:
    scheme: str
    theta: float
    sigma: float
    t: float
    cfi: float
    qfi: float
    n: int = 1

    @property
    def ccrb(self) -> float:
        return 1.0 / (self.n * self.cfi) if self.cfi > 0 else float("inf")

    @property
    def qcrb(self) -> float:
        return 1.0 / (self.n * self.qfi)

    @property
    def violated(self) -> bool:
        return self.ccrb < self.qcrb


def gad_qfi(theta: float) -> float:
    return 1.0 / (theta * (1.0 - theta))


def fisher_x_grid(sigma: float, n: int = 4001) -> np.ndarray:
    return np.linspace(-8.0 * sigma, 1.0 + 8.0 * sigma, n)


def qcrb_violation_report(theta: float, sigma_list: Sequence[float], t_list: Sequence[float],
                          gamma: float, n: int = 1,
                          finite: Literal["small_t", "exact"] = "small_t") -> list[FisherReport]:
    """CFI against QFI for the ideal PM, the ideal DAM and finite small T.

    Finite-T rows use the first-order density by default; ``finite="exact"``
    integrates the closed-form POVM instead.
    """
    h = gad_qfi(theta)
    rows = []
    for sigma in sigma_list:
        x = fisher_x_grid(sigma)
        pm = cfi(lambda th: as_distribution(x, pm_density(x, th, sigma)), theta)
        dam = cfi(lambda th: as_distribution(x, dam_density(x, th, sigma)), theta)
        rows.append(FisherReport("PM-ideal", theta, sigma, 0.0, pm, h, n))
        rows.append(FisherReport("DAM-ideal", theta, sigma, float("inf"), dam, h, n))
        for t in t_list:
            if finite == "small_t":
                fam = lambda th, t=t: as_distribution(x, small_t_density(x, th, gamma, t, sigma))
            else:
                def fam(th, t=t):
                    pov = povm_analytic_gad(th, gamma, t, sigma, x)
                    return pov.distribution(np.diag([th, 1.0 - th]))
            rows.append(FisherReport("finite-T", theta, sigma, float(t), cfi(fam, theta), h, n))
    return rows


# -- optimality of the projective scheme -------------------------------------

def random_density(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random purification on dim x dim, traced down to dim."""
    psi = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    psi /= np.linalg.norm(psi)
    return psi @ psi.conj().T


def _channel_tensor(theta: float, gamma: float, t: float) -> np.ndarray:
    """C[a, a', c, c'] with out[a, a'] = sum C[a, a', c, c'] in[c, c']."""
    s = gad_channel(theta, gamma, t)
    # column stacking: index (a, a') -> a + 2 a'
    return s.reshape(2, 2, 2, 2).transpose(1, 0, 3, 2)


def apply_gad_copies(rho: np.ndarray, theta: float, gamma: float, t: float,
                     n_copies: int) -> np.ndarray:
    c = _channel_tensor(theta, gamma, t)
    if n_copies == 1:
        return np.einsum("abcd,cd->ab", c, rho)
    if n_copies == 2:
        r = np.asarray(rho).reshape(2, 2, 2, 2)
        out = np.einsum("aecg,bfdh,cdgh->abef", c, c, r)
        return out.reshape(4, 4)
    raise ValueError("only one or two copies are supported")


def appendix_b_optimality_check(theta: float, gamma: float, t_list: Sequence[float],
                                n_copies: int, n_random_states: int, seed: int,
                                inputs: Sequence[np.ndarray | Callable[[float], np.ndarray]] | None = None
                                ) -> float:
    """Largest QFI of n_copies parallel channel outputs over random inputs.

    ``inputs`` may override the random inputs; a callable input is treated as
    a theta-dependent state.
    """
    if n_copies not in (1, 2):
        raise ValueError("n_copies must be 1 or 2")
    dim = 2 ** n_copies
    if inputs is None:
        rng = np.random.default_rng(seed)
        inputs = [random_density(dim, rng) for _ in range(n_random_states)]
    best = 0.0
    for rho0 in inputs:
        for t in t_list:
            def family(th, rho0=rho0, t=t):
                r = rho0(th) if callable(rho0) else rho0
                return apply_gad_copies(r, th, gamma, t, n_copies)
            out = family(theta)
            d = state_derivative(family, theta)
            d -= np.trace(d) / dim * np.eye(dim)
            best = max(best, sld_qfi(out, d).qfi)
    return best
