"""Builders for Lindblad generators and the amplitude-damping channels.

Basis convention: ``|0> = (1, 0)`` and ``sigma_minus = |0><1|``, so the
generalized amplitude damping steady state is ``diag(theta, 1 - theta)``.
Rates are in MHz and times in microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .opalg import expm, spost, spre, sprepost, vectorize, devectorize

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
PROJ_0 = np.array([[1, 0], [0, 0]], dtype=complex)


@dataclass(frozen=True)
class GadParams:
    theta: float
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class LindbladModel:
    hamiltonian: np.ndarray
    jumps: Sequence[tuple[np.ndarray, float]] = field(default_factory=tuple)

    def __post_init__(self):
        h = np.asarray(self.hamiltonian)
        if np.abs(h - h.conj().T).max(initial=0.0) > 1e-12:
            raise ValueError("hamiltonian is not Hermitian")
        for _, rate in self.jumps:
            if rate < 0:
                raise ValueError(f"negative jump rate {rate}")

    @property
    def dim(self) -> int:
        return np.asarray(self.hamiltonian).shape[0]


def dissipator(o: np.ndarray) -> np.ndarray:
    """Superoperator of D[o] rho = o rho o^+ - {o^+ o, rho}/2."""
    o = np.asarray(o, dtype=complex)
    ood = o.conj().T @ o
    return sprepost(o, o.conj().T) - 0.5 * spre(ood) - 0.5 * spost(ood)


def hamiltonian_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of -i[H, rho]."""
    h = np.asarray(h, dtype=complex)
    return -1j * (spre(h) - spost(h))


def lindblad_liouvillian(model: LindbladModel) -> np.ndarray:
    lv = hamiltonian_superop(model.hamiltonian)
    for op, rate in model.jumps:
        lv = lv + rate * dissipator(op)
    return lv


def gad_liouvillian(theta: float, gamma: float) -> np.ndarray:
    """Generalized amplitude damping generator as a 4x4 superoperator."""
    p = GadParams(theta, gamma)
    return p.gamma * (p.theta * dissipator(SIGMA_MINUS)
                      + (1.0 - p.theta) * dissipator(SIGMA_PLUS))


def gad_steady_state(theta: float) -> np.ndarray:
    return np.diag([theta, 1.0 - theta]).astype(complex)


def dual(lv: np.ndarray) -> np.ndarray:
    """Adjoint of a superoperator under the Hilbert-Schmidt pairing.

    Works on stacks of superoperators as well.
    """
    return np.swapaxes(np.asarray(lv), -1, -2).conj()


def gad_channel(theta: float, gamma: float, t: float) -> np.ndarray:
    """Superoperator of exp(L_theta t)."""
    return expm(gad_liouvillian(theta, gamma) * t)


# -- Bloch-vector picture --------------------------------------------------

def density_to_bloch(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    return np.real([np.trace(rho @ s) for s in (SIGMA_X, SIGMA_Y, SIGMA_Z)])


def bloch_to_density(r: Sequence[float]) -> np.ndarray:
    rx, ry, rz = r
    return 0.5 * (IDENTITY_2 + rx * SIGMA_X + ry * SIGMA_Y + rz * SIGMA_Z)


ChannelKind = Literal["Lambda0", "Lambda1", "LambdaTheta"]


def bloch_channel(kind: ChannelKind, r: Sequence[float], t: float,
                  gamma: float, theta: float | None = None) -> np.ndarray:
    """Affine Bloch-vector maps of the two amplitude-damping channels and their mixture."""
    if t < 0:
        raise ValueError("t must be non-negative")
    r = np.asarray(r, dtype=float)
    half = np.exp(-gamma * t / 2.0)
    full = np.exp(-gamma * t)
    if kind == "Lambda0":
        z = 1.0 - full + full * r[..., 2]
    elif kind == "Lambda1":
        z = full - 1.0 + full * r[..., 2]
    elif kind == "LambdaTheta":
        if theta is None:
            raise ValueError("LambdaTheta needs theta")
        z = (2.0 * theta - 1.0) * (1.0 - full) + full * r[..., 2]
    else:
        raise ValueError(f"unknown channel kind {kind!r}")
    return np.stack([half * r[..., 0], half * r[..., 1], z], axis=-1)


def _bloch_map_on_density(kind: ChannelKind, rho: np.ndarray, t: float,
                          gamma: float, theta: float | None = None) -> np.ndarray:
    return bloch_to_density(bloch_channel(kind, density_to_bloch(rho), t, gamma, theta))


def extended_channel(rho_big: np.ndarray, t: float, gamma: float) -> np.ndarray:
    """Theta-independent channel on system (x) ancilla.

    The ancilla is read out in the computational basis and selects which of
    the two amplitude-damping branches acts on the system.
    """
    rho_big = np.asarray(rho_big).reshape(2, 2, 2, 2)
    out = np.zeros((2, 2), dtype=complex)
    for i, kind in enumerate(("Lambda0", "Lambda1")):
        # <i| . |i> on the ancilla leaves an unnormalized system operator
        block = rho_big[:, i, :, i]
        weight = np.trace(block).real
        # homogeneous form of the affine Bloch map, so tiny weights need no division
        r = bloch_channel(kind, density_to_bloch(block), t, gamma)
        r = r + (weight - 1.0) * bloch_channel(kind, np.zeros(3), t, gamma)
        out += 0.5 * (weight * IDENTITY_2 + r[0] * SIGMA_X + r[1] * SIGMA_Y + r[2] * SIGMA_Z)
    return out


def extended_channel_check(rho: np.ndarray, t: float, gamma: float, theta: float) -> float:
    """Max entrywise gap between Phi(t)[rho (x) rho_theta] and Lambda_theta(t)[rho].

    The right-hand side is propagated with the superoperator exponential, so
    the two pictures are computed independently.
    """
    rho_theta = np.diag([theta, 1.0 - theta]).astype(complex)
    lhs = extended_channel(np.kron(rho, rho_theta), t, gamma)
    if 0.0 < theta < 1.0:
        rhs = devectorize(gad_channel(theta, gamma, t) @ vectorize(rho))
    else:
        rhs = _bloch_map_on_density("LambdaTheta", rho, t, gamma, theta)
    return float(np.abs(lhs - rhs).max())
