"""Driven, dissipative qubit read out through a dispersively coupled resonator.

The resonator starts in a coherent state with mean photon number ``nbar``.
Since ``chi a^+a sigma_z`` is diagonal in photon number, the joint state
splits into Fock sectors ``(n, n')`` exactly like the momentum sectors of
:mod:`damlab.pointer`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .liouville import SIGMA_MINUS, SIGMA_X, SIGMA_Y, SIGMA_Z, LindbladModel, lindblad_liouvillian
from .opalg import NumericalError, devectorize, expm, spectral_info, spost, spre, steady_state, vectorize
from .pointer import find_crossing

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class CqedParams:
    """Model parameters; omega_r0 is angular (rad/us), rates in MHz."""

    omega_r0: float = TWO_PI * 2.0
    alpha: float = 0.0
    delta_omega: float = 0.0
    gamma1: float = 5.0
    gamma2: float = 5.0
    chi: float = 1.0
    nbar: float = 16.0
    n_max: int = 48

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("decay rates must be non-negative")
        if self.nbar < 0:
            raise ValueError("nbar must be non-negative")
        tail = 1.0 - float(np.sum(np.abs(coherent_amplitudes(self.nbar, self.n_max)) ** 2))
        if tail > 1e-10:
            raise ValueError(f"n_max={self.n_max} leaves coherent-state tail mass {tail:.2e}")

    @classmethod
    def from_rabi_frequency(cls, rabi_mhz: float = 2.0, **kw) -> "CqedParams":
        return cls(omega_r0=TWO_PI * rabi_mhz, **kw)


def coherent_amplitudes(nbar: float, n_max: int) -> np.ndarray:
    """Fock amplitudes of a real coherent state truncated at n_max."""
    n = np.arange(n_max + 1)
    if nbar == 0:
        return (n == 0).astype(float)
    return np.exp(-nbar / 2.0 + n * 0.5 * np.log(nbar) - 0.5 * gammaln(n + 1))


def qubit_hamiltonian(p: CqedParams) -> np.ndarray:
    return (-0.5 * p.omega_r0 * (np.cos(p.alpha) * SIGMA_X + np.sin(p.alpha) * SIGMA_Y)
            - 0.5 * p.delta_omega * SIGMA_Z)


def cqed_total_liouvillian(p: CqedParams) -> np.ndarray:
    model = LindbladModel(qubit_hamiltonian(p),
                          [(SIGMA_MINUS, p.gamma1), (SIGMA_Z, p.gamma2 / 2.0)])
    return lindblad_liouvillian(model)


def cqed_sector_liouvillian(p: CqedParams, n: int, n_prime: int) -> np.ndarray:
    if not (0 <= n <= p.n_max and 0 <= n_prime <= p.n_max):
        raise IndexError(f"sector ({n}, {n_prime}) outside 0..{p.n_max}")
    return cqed_total_liouvillian(p) - 1j * p.chi * (n * spre(SIGMA_Z) - n_prime * spost(SIGMA_Z))


def cqed_steady_state(p: CqedParams) -> np.ndarray:
    lv = cqed_total_liouvillian(p)
    if spectral_info(lv).gap <= 0:
        raise NumericalError("total Liouvillian has no dissipative gap")
    return steady_state(lv)


@dataclass(frozen=True)
class CqedJoint:
    amplitudes: np.ndarray
    blocks: np.ndarray

    def matrix(self) -> np.ndarray:
        m, d = self.blocks.shape[0], self.blocks.shape[-1]
        c = np.outer(self.amplitudes, self.amplitudes.conj())
        return (self.blocks * c[..., None, None]).transpose(0, 2, 1, 3).reshape(m * d, m * d)


def cqed_evolve(p: CqedParams, t: float, rho: np.ndarray | None = None,
                workers: int = 1) -> CqedJoint:
    """Joint qubit-resonator state after coupling time T (chi fixed by params)."""
    lv = cqed_total_liouvillian(p)
    if rho is None:
        rho = steady_state(lv)
    n = np.arange(p.n_max + 1)
    iu, ju = np.triu_indices(len(n))
    v0 = vectorize(rho)

    def run(sl):
        ni = n[iu[sl]][:, None, None]
        nj = n[ju[sl]][:, None, None]
        gens = t * lv - 1j * p.chi * t * (ni * spre(SIGMA_Z) - nj * spost(SIGMA_Z))
        return expm(gens) @ v0

    chunk = 4096
    slices = [slice(k, min(k + chunk, len(iu))) for k in range(0, len(iu), chunk)]
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, slices))
    else:
        parts = [run(sl) for sl in slices]
    upper = devectorize(np.concatenate(parts), 2)
    blocks = np.empty((len(n), len(n), 2, 2), dtype=complex)
    blocks[iu, ju] = upper
    blocks[ju, iu] = upper.conj().transpose(0, 2, 1)
    return CqedJoint(coherent_amplitudes(p.nbar, p.n_max), blocks)


def cqed_ideal_pm(p: CqedParams, t: float, rho: np.ndarray) -> CqedJoint:
    """exp(-i chi T n sigma_z) rho exp(i chi T n' sigma_z) blockwise."""
    n = np.arange(p.n_max + 1)
    phase = p.chi * t * n
    u = np.zeros((len(n), 2, 2), dtype=complex)
    u[:, 0, 0] = np.exp(-1j * phase)
    u[:, 1, 1] = np.exp(1j * phase)
    blocks = np.einsum("iab,bc,jdc->ijad", u, rho, u.conj())
    return CqedJoint(coherent_amplitudes(p.nbar, p.n_max), blocks)


def cqed_ideal_dam(p: CqedParams, t: float, rho: np.ndarray) -> CqedJoint:
    n = np.arange(p.n_max + 1)
    sz = float(np.real(np.trace(SIGMA_Z @ rho)))
    phase = np.exp(-1j * p.chi * t * (n[:, None] - n[None, :]) * sz)
    return CqedJoint(coherent_amplitudes(p.nbar, p.n_max), phase[..., None, None] * rho)


def _hs_distance(a: CqedJoint, b: CqedJoint) -> float:
    c = np.outer(a.amplitudes, a.amplitudes.conj())
    diff = (a.blocks - b.blocks) * c[..., None, None]
    return float(np.sqrt(np.sum(np.abs(diff) ** 2)))


def _trace_distance(a: CqedJoint, b: CqedJoint) -> float:
    return float(np.linalg.svd(a.matrix() - b.matrix(), compute_uv=False).sum())


def cqed_measures(p: CqedParams, t: float, norm: str = "hs", workers: int = 1) -> tuple[float, float]:
    """(PM measure, DAM measure) at coupling time T with chi = 1/T."""
    q = replace(p, chi=1.0 / t)
    rho = cqed_steady_state(q)
    joint = cqed_evolve(q, t, rho, workers)
    dist = _hs_distance if norm == "hs" else _trace_distance
    return dist(joint, cqed_ideal_pm(q, t, rho)), dist(joint, cqed_ideal_dam(q, t, rho))


def cqed_deviation_measures(p: CqedParams, t_grid, norm: str = "hs",
                            workers: int = 1) -> list[tuple[float, float, float]]:
    """Rows (T, PM measure, DAM measure) with chi identified with 1/T."""
    return [(float(t), *cqed_measures(p, t, norm, workers)) for t in t_grid]


def cqed_pm_crossing(p: CqedParams, tol: float = 1e-5, guess: float = 100.0,
                     norm: str = "hs", rtol: float = 1e-3, workers: int = 1) -> float:
    """1/T (MHz) where the PM measure falls to tol."""
    return find_crossing(lambda inv_t: cqed_measures(p, 1.0 / inv_t, norm, workers)[0],
                         tol, guess / 2.0, guess * 2.0, rtol, max_expand=60)


def cqed_dam_crossing(p: CqedParams, tol: float = 1e-5, guess: float = 10.0,
                      norm: str = "hs", rtol: float = 1e-3, workers: int = 1) -> float:
    """T (us) where the DAM measure falls to tol."""
    return find_crossing(lambda t: cqed_measures(p, t, norm, workers)[1],
                         tol, guess / 2.0, guess * 2.0, rtol, max_expand=60)
