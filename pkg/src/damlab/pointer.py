"""System-apparatus coupling resolved into momentum sectors.

The apparatus is a free pointer with a Gaussian wavefunction. Because the
coupling ``A (x) p / T`` is diagonal in momentum, the joint state splits into
blocks ``phi(p_i) phi*(p_j) exp(L_{p_i,p_j} T) rho`` that evolve independently.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import numpy as np

from .opalg import (
    NumericalError,
    devectorize,
    expm,
    hs_norm,
    spost,
    spre,
    steady_state,
    trace_norm,
    vectorize,
)

log = logging.getLogger(__name__)

Norm = Literal["hs", "trace"]

DEFAULT_NODES = 257
DEFAULT_SPAN = 8.0
DEFAULT_X_NODES = 1001


@dataclass(frozen=True)
class GaussianApparatus:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def sigma_p(self) -> float:
        return 0.5 / self.sigma

    def phi(self, p: np.ndarray) -> np.ndarray:
        """Momentum-space amplitude of the initial pointer state."""
        s = self.sigma_p
        return (2.0 * np.pi * s * s) ** -0.25 * np.exp(-np.asarray(p) ** 2 / (4.0 * s * s))


@dataclass(frozen=True)
class MomentumGrid:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, app: GaussianApparatus, n: int = DEFAULT_NODES,
                span: float = DEFAULT_SPAN) -> "MomentumGrid":
        """Trapezoid grid on [-span*sigma_p, span*sigma_p]."""
        if n < 3 or n % 2 == 0:
            raise ValueError("momentum grid needs an odd node count >= 3")
        p_max = span * app.sigma_p
        nodes = np.linspace(-p_max, p_max, n)
        weights = np.full(n, nodes[1] - nodes[0])
        weights[[0, -1]] *= 0.5
        return cls(nodes, weights)

    @property
    def p_max(self) -> float:
        return float(np.abs(self.nodes).max())

    def __len__(self) -> int:
        return len(self.nodes)

    def check_resolves(self, app: GaussianApparatus, tol: float = 1e-8) -> None:
        mass = float(np.sum(self.weights * app.phi(self.nodes) ** 2))
        if abs(mass - 1.0) > tol:
            raise NumericalError(f"momentum grid does not resolve the pointer (mass {mass:.10f})")


@dataclass
class JointState:
    """Joint system-pointer state; ``blocks[i, j]`` pairs with ``|p_i><p_j|``."""

    grid: MomentumGrid
    blocks: np.ndarray

    @property
    def dim(self) -> int:
        return self.blocks.shape[-1]

    def matrix(self) -> np.ndarray:
        """Block matrix scaled by sqrt(w_i w_j), so its norms approximate the continuum ones."""
        n, d = len(self.grid), self.dim
        s = np.sqrt(self.grid.weights)
        scaled = self.blocks * (s[:, None] * s[None, :])[..., None, None]
        return scaled.transpose(0, 2, 1, 3).reshape(n * d, n * d)

    def trace(self) -> complex:
        diag = np.einsum("iaa->i", self.blocks[np.arange(len(self.grid)), np.arange(len(self.grid))])
        return complex(np.sum(self.grid.weights * diag))

    def system_marginal(self) -> np.ndarray:
        idx = np.arange(len(self.grid))
        return np.einsum("i,iab->ab", self.grid.weights, self.blocks[idx, idx])

    def hermiticity_error(self) -> float:
        return float(np.abs(self.blocks - self.blocks.transpose(1, 0, 3, 2).conj()).max())


@dataclass(frozen=True)
class PointerDistribution:
    x: np.ndarray
    density: np.ndarray
    weights: np.ndarray

    def normalization(self) -> float:
        return float(np.sum(self.weights * self.density))

    def mean(self) -> float:
        return float(np.sum(self.weights * self.density * self.x))


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


def default_x_grid(a: np.ndarray, rho: np.ndarray, sigma: float,
                   n: int = DEFAULT_X_NODES) -> np.ndarray:
    """Uniform grid covering every eigenvalue of A and <A> by six pointer widths."""
    spec = np.linalg.eigvalsh(a)
    mean = float(np.real(np.trace(a @ rho)))
    lo = min(spec.min(), mean) - 6.0 * sigma
    hi = max(spec.max(), mean) + 6.0 * sigma
    return np.linspace(lo, hi, n)


# -- sector generators and propagation --------------------------------------

def sector_liouvillian(l_theta: np.ndarray, a: np.ndarray, p: float, pp: float,
                       t: float) -> np.ndarray:
    """Generator acting on the system part of ``rho (x) |p><p'|``."""
    if not t > 0:
        raise ValueError("coupling time T must be positive")
    a = np.asarray(a)
    if np.abs(a - a.conj().T).max() > 1e-12:
        raise ValueError("measured observable must be Hermitian")
    return l_theta - 1j / t * (p * spre(a) - pp * spost(a))


def _sector_exponents(l_theta, a, p, pp, t):
    """Stack of T * L_{p,p'} for broadcast arrays p, pp (the 1/T cancels)."""
    p = np.asarray(p, dtype=float)[..., None, None]
    pp = np.asarray(pp, dtype=float)[..., None, None]
    return t * l_theta - 1j * (p * spre(a) - pp * spost(a))


def _propagate_pairs(l_theta, a, t, rho, pi, pj, workers=1, chunk=8192):
    """exp(L_{p,p'} T) rho for paired momentum arrays; returns (k, d, d)."""
    v0 = vectorize(rho)

    def run(sl):
        e = expm(_sector_exponents(l_theta, a, pi[sl], pj[sl], t))
        return e @ v0

    slices = [slice(k, min(k + chunk, len(pi))) for k in range(0, len(pi), chunk)]
    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, slices))
    else:
        parts = [run(sl) for sl in slices]
    return devectorize(np.concatenate(parts, axis=0), rho.shape[0])


def evolve_joint(l_theta: np.ndarray, a: np.ndarray, app: GaussianApparatus,
                 t: float, grid: MomentumGrid | None = None,
                 rho: np.ndarray | None = None, workers: int = 1) -> JointState:
    """Joint state after coupling for time T, starting from rho (x) |phi><phi|.

    ``rho`` defaults to the steady state of ``l_theta``. Only blocks with
    ``i <= j`` are propagated; the rest follow from Hermiticity.
    """
    if t < 0:
        raise ValueError("T must be non-negative")
    grid = grid or MomentumGrid.uniform(app)
    grid.check_resolves(app)
    if rho is None:
        rho = steady_state(l_theta)
    n, d = len(grid), rho.shape[0]
    amp = app.phi(grid.nodes)
    outer = np.outer(amp, amp.conj())

    if t == 0:
        blocks = outer[..., None, None] * rho
        return JointState(grid, blocks.astype(complex))

    iu, ju = np.triu_indices(n)
    upper = _propagate_pairs(l_theta, a, t, rho, grid.nodes[iu], grid.nodes[ju], workers)
    blocks = np.empty((n, n, d, d), dtype=complex)
    blocks[iu, ju] = upper
    blocks[ju, iu] = upper.conj().transpose(0, 2, 1)
    blocks *= outer[..., None, None]
    return JointState(grid, blocks)


def _unitary_shift(a: np.ndarray, p: np.ndarray) -> np.ndarray:
    """exp(-i p A) for every p in the grid."""
    w, v = np.linalg.eigh(a)
    phases = np.exp(-1j * np.outer(p, w))
    return np.einsum("ab,kb,cb->kac", v, phases, v.conj())


def ideal_pm_state(rho: np.ndarray, a: np.ndarray, app: GaussianApparatus,
                   grid: MomentumGrid | None = None) -> JointState:
    """Impulsive-limit state exp(-i A p) rho (x) |phi><phi| exp(i A p)."""
    grid = grid or MomentumGrid.uniform(app)
    amp = app.phi(grid.nodes)
    u = _unitary_shift(a, grid.nodes)
    blocks = np.einsum("iab,bc,jdc->ijad", u, rho, u.conj())
    blocks *= np.outer(amp, amp.conj())[..., None, None]
    return JointState(grid, blocks)


def ideal_dam_state(rho: np.ndarray, a_mean: float, app: GaussianApparatus,
                    grid: MomentumGrid | None = None) -> JointState:
    """Adiabatic-limit state: rho untouched, pointer shifted by <A>."""
    grid = grid or MomentumGrid.uniform(app)
    amp = app.phi(grid.nodes)
    p = grid.nodes
    phase = np.exp(-1j * (p[:, None] - p[None, :]) * a_mean)
    blocks = (phase * np.outer(amp, amp.conj()))[..., None, None] * rho
    return JointState(grid, blocks.astype(complex))


def deviation_measure(s1: JointState, s2: JointState, norm: Norm = "hs") -> float:
    """Distance between two joint states on the same momentum grid."""
    if s1.blocks.shape != s2.blocks.shape or not np.array_equal(s1.grid.nodes, s2.grid.nodes):
        raise ValueError("joint states live on different grids")
    diff = JointState(s1.grid, s1.blocks - s2.blocks)
    if norm == "hs":
        w = s1.grid.weights
        sq = np.sum(np.abs(diff.blocks) ** 2, axis=(2, 3))
        return float(np.sqrt(np.sum(np.outer(w, w) * sq)))
    if norm == "trace":
        return trace_norm(diff.matrix())
    raise ValueError(f"unknown norm {norm!r}")


def _fourier_rows(grid: MomentumGrid, x: np.ndarray) -> np.ndarray:
    return grid.weights[None, :] * np.exp(1j * np.outer(x, grid.nodes))


def pointer_distribution(state: JointState, x_grid: np.ndarray,
                         norm_tol: float = 1e-4) -> PointerDistribution:
    """Density of the pointer reading x, from the momentum blocks."""
    x = np.asarray(x_grid, dtype=float)
    f = _fourier_rows(state.grid, x)
    tr = np.einsum("ijaa->ij", state.blocks)
    dens = np.real(np.einsum("ki,ki->k", f @ tr, f.conj())) / (2.0 * np.pi)
    if dens.min() < -1e-10:
        log.warning("pointer density dips to %.3e; clipping", dens.min())
    dens = np.clip(dens, 0.0, None)
    dist = PointerDistribution(x, dens, trapezoid_weights(x))
    total = dist.normalization()
    if abs(total - 1.0) > norm_tol:
        raise NumericalError(f"pointer density integrates to {total:.6f}; grid too coarse")
    return dist


def count_peaks(dist: PointerDistribution, rel_height: float = 0.01) -> int:
    """Local maxima above rel_height * max after 3-point smoothing."""
    d = np.convolve(dist.density, np.ones(3) / 3.0, mode="same")
    mid = d[1:-1]
    is_peak = (mid > d[:-2]) & (mid >= d[2:]) & (mid > rel_height * d.max())
    return int(is_peak.sum())


# -- adiabatic-order check ---------------------------------------------------

def adiabatic_rate_check(l_theta: np.ndarray, a: np.ndarray, p: float, pp: float,
                         t_list: Iterable[float], rho: np.ndarray | None = None,
                         norm: Norm = "trace") -> list[tuple[float, float]]:
    """Distance between exact and adiabatic sector propagation on the steady state.

    The adiabatic generator is ``-i (p - p') <A> P_theta / T``, so its
    propagator multiplies rho_theta by a phase. Since P_theta maps every
    operator X to tr(X) rho_theta, the worst case over a matrix-unit basis is
    attained on the diagonal units and equals the distance computed here.
    """
    t_list = [float(t) for t in t_list]
    if any(t <= 0 for t in t_list) or any(b <= a_ for a_, b in zip(t_list, t_list[1:])):
        raise ValueError("T list must be positive and increasing")
    if rho is None:
        rho = steady_state(l_theta)
    a_mean = float(np.real(np.trace(a @ rho)))
    out = []
    for t in t_list:
        exact = devectorize(expm(t * sector_liouvillian(l_theta, a, p, pp, t)) @ vectorize(rho))
        adiabatic = np.exp(-1j * (p - pp) * a_mean) * rho
        diff = exact - adiabatic
        out.append((t, trace_norm(diff) if norm == "trace" else hs_norm(diff)))
    return out


def loglog_slope(pairs: Iterable[tuple[float, float]]) -> float:
    t, dev = np.array(list(pairs)).T
    return float(np.polyfit(np.log(t), np.log(dev), 1)[0])


# -- threshold crossings ----------------------------------------------------

def find_crossing(f: Callable[[float], float], level: float, lo: float, hi: float,
                  rtol: float = 1e-3, max_expand: int = 40) -> float:
    """Bisect (geometrically) for the argument where a monotone f crosses level.

    The bracket is widened by factors of two until it straddles the level.
    """
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < lo < hi")
    flo, fhi = f(lo) - level, f(hi) - level
    for _ in range(max_expand):
        if flo * fhi <= 0:
            break
        if abs(flo) < abs(fhi):
            lo /= 2.0
            flo = f(lo) - level
        else:
            hi *= 2.0
            fhi = f(hi) - level
    else:
        raise NumericalError("could not bracket the threshold crossing")
    while hi / lo - 1.0 > rtol:
        mid = math.sqrt(lo * hi)
        fm = f(mid) - level
        if fm * flo <= 0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class GadMeasurementSetup:
    """The amplitude-damping qubit measured through A = |0><0|."""

    theta: float = 0.5
    gamma: float = 5.0
    sigma: float = 0.2
    nodes: int = DEFAULT_NODES
    span: float = DEFAULT_SPAN

    @property
    def apparatus(self) -> GaussianApparatus:
        return GaussianApparatus(self.sigma)

    @property
    def grid(self) -> MomentumGrid:
        return MomentumGrid.uniform(self.apparatus, self.nodes, self.span)

    @property
    def observable(self) -> np.ndarray:
        return np.diag([1.0, 0.0]).astype(complex)

    @property
    def rho(self) -> np.ndarray:
        return np.diag([self.theta, 1.0 - self.theta]).astype(complex)

    def liouvillian(self) -> np.ndarray:
        from .liouville import gad_liouvillian

        return gad_liouvillian(self.theta, self.gamma)

    def evolve(self, t: float, workers: int = 1) -> JointState:
        return evolve_joint(self.liouvillian(), self.observable, self.apparatus, t,
                            self.grid, self.rho, workers)

    def pm_measure(self, t: float, norm: Norm = "hs", workers: int = 1) -> float:
        ref = ideal_pm_state(self.rho, self.observable, self.apparatus, self.grid)
        return deviation_measure(self.evolve(t, workers), ref, norm)

    def dam_measure(self, t: float, norm: Norm = "hs", workers: int = 1) -> float:
        ref = ideal_dam_state(self.rho, self.theta, self.apparatus, self.grid)
        return deviation_measure(self.evolve(t, workers), ref, norm)

    def pm_crossing(self, tol: float = 0.01, guess: float | None = None, norm: Norm = "hs",
                    rtol: float = 1e-3, workers: int = 1) -> float:
        """Coupling strength 1/T (MHz) at which the PM measure falls to tol."""
        guess = 32.0 * self.gamma if guess is None else guess
        return find_crossing(lambda inv_t: self.pm_measure(1.0 / inv_t, norm, workers),
                             tol, guess / 2.0, guess * 2.0, rtol)

    def dam_crossing(self, tol: float = 0.01, guess: float | None = None, norm: Norm = "hs",
                     rtol: float = 1e-3, workers: int = 1) -> float:
        """Coupling time T (us) at which the DAM measure falls to tol."""
        guess = 400.0 / self.gamma if guess is None else guess
        return find_crossing(lambda t: self.dam_measure(t, norm, workers),
                             tol, guess / 2.0, guess * 2.0, rtol)

    def distribution(self, t: float, x_grid: np.ndarray | None = None,
                     workers: int = 1) -> PointerDistribution:
        if x_grid is None:
            x_grid = default_x_grid(self.observable, self.rho, self.sigma)
        return pointer_distribution(self.evolve(t, workers), x_grid)

    def profile(self, t: float, x_grid: np.ndarray | None = None,
                workers: int = 1) -> PointerDistribution:
        """Pointer profile along the T sweep, where T = 0 stands for the impulsive limit.

        ``evolve(0)`` is the uncoupled product state; the sweep instead starts
        from its T -> 0 limit, the ideal projective-measurement state.
        """
        if x_grid is None:
            x_grid = default_x_grid(self.observable, self.rho, self.sigma)
        if t == 0:
            ref = ideal_pm_state(self.rho, self.observable, self.apparatus, self.grid)
            return pointer_distribution(ref, x_grid)
        return self.distribution(t, x_grid, workers)
