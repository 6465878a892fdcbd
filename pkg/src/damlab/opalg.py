"""Dense operator and superoperator numerics.

Operators are plain ``numpy`` arrays. Superoperators act on column-stacked
operators, so that ``vec(A X B) == kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "NumericalError",
    "DegenerateSteadyStateError",
    "SpectralInfo",
    "vectorize",
    "devectorize",
    "spre",
    "spost",
    "sprepost",
    "apply_superop",
    "expm",
    "trace_norm",
    "hs_norm",
    "steady_state",
    "spectral_info",
]


class NumericalError(ValueError):
    """A numerical invariant was violated."""


class DegenerateSteadyStateError(NumericalError):
    """The generator has more than one zero mode."""


def _check_finite(m: np.ndarray) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericalError("non-finite entries in input matrix")


def vectorize(op: np.ndarray) -> np.ndarray:
    """Column-stack a square operator (batched over leading axes)."""
    op = np.asarray(op)
    if op.ndim < 2 or op.shape[-1] != op.shape[-2]:
        raise ValueError(f"expected square operator, got shape {op.shape}")
    return np.swapaxes(op, -1, -2).reshape(*op.shape[:-2], -1)


def devectorize(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v)
    n = v.shape[-1]
    if d is None:
        d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError(f"vector length {n} is not {d}**2")
    return np.swapaxes(v.reshape(*v.shape[:-1], d, d), -1, -2)


def spre(a: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X."""
    return np.kron(np.eye(a.shape[0]), a)


def spost(b: np.ndarray) -> np.ndarray:
    """Superoperator of X -> X B."""
    return np.kron(b.T, np.eye(b.shape[0]))


def sprepost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of X -> A X B."""
    return np.kron(b.T, a)


def apply_superop(s: np.ndarray, op: np.ndarray) -> np.ndarray:
    d = op.shape[-1]
    return devectorize(np.einsum("...ij,...j->...i", s, vectorize(op)), d)


# Higham (2005) scaling-and-squaring: backward-error bounds for double precision.
_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}
_PADE_COEF = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0, 960960.0,
         16380.0, 182.0, 1.0),
}


def _pade(a: np.ndarray, m: int) -> np.ndarray:
    b = _PADE_COEF[m]
    ident = np.broadcast_to(np.eye(a.shape[-1], dtype=a.dtype), a.shape)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    else:
        powers = [ident, a2]
        for _ in range(2, (m + 1) // 2):
            powers.append(powers[-1] @ a2)
        u = a @ sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
        v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return np.linalg.solve(v - u, v + u)


def _is_normal(m: np.ndarray) -> bool:
    scale = np.linalg.norm(m) ** 2
    if scale == 0.0:
        return True
    comm = m @ m.conj().T - m.conj().T @ m
    return np.linalg.norm(comm) <= 1e-13 * scale


def expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential of a square matrix or a stack of them.

    Scaling and squaring with a diagonal Padé approximant of degree up to 13;
    a single normal matrix is exponentiated through its Schur form instead.
    Each matrix in a stack gets its own scaling exponent.
    """
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    _check_finite(m)
    a = m.astype(np.complex128 if np.iscomplexobj(m) else np.float64)
    if a.shape[-1] == 0:
        return a.copy()

    if a.ndim == 2 and _is_normal(a):
        t, z = scipy.linalg.schur(a.astype(np.complex128), output="complex")
        out = (z * np.exp(np.diag(t))) @ z.conj().T
        return out if np.iscomplexobj(m) else out.real

    norms = np.abs(a).sum(axis=-2).max(axis=-1)
    nmax = float(np.max(norms))
    for deg in (3, 5, 7, 9):
        if nmax <= _PADE_THETA[deg]:
            return _pade(a, deg)

    s = np.maximum(0, np.ceil(np.log2(np.maximum(norms, 1e-300) / _PADE_THETA[13]))).astype(int)
    scaled = a / (2.0 ** s)[..., None, None]
    r = _pade(scaled, 13)
    if r.ndim == 2:
        for _ in range(int(s)):
            r = r @ r
        return r
    for k in range(int(s.max(initial=0))):
        mask = s > k
        sub = r[mask]
        r[mask] = sub @ sub
    return r


def trace_norm(m: np.ndarray) -> float:
    """Sum of singular values."""
    m = np.asarray(m)
    _check_finite(m)
    return float(np.linalg.svd(m, compute_uv=False).sum())


def hs_norm(m: np.ndarray) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    m = np.asarray(m)
    _check_finite(m)
    return float(np.linalg.norm(m))


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: np.ndarray
    gap: float
    steady_index: int


def spectral_info(lv: np.ndarray, zero_tol: float | None = None) -> SpectralInfo:
    """Spectrum of a generator sorted by decreasing real part.

    ``gap`` is the smallest ``|Re λ|`` among eigenvalues other than the one
    closest to zero.
    """
    lv = np.asarray(lv)
    try:
        ev = np.linalg.eigvals(lv)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-solver failure: {exc}") from exc
    order = np.lexsort((ev.imag, -ev.real))
    ev = ev[order]
    if zero_tol is None:
        zero_tol = 1e-8 * max(float(np.abs(ev).max(initial=0.0)), 1.0)
    k = int(np.argmin(np.abs(ev)))
    rest = np.delete(ev, k)
    nonzero = rest[np.abs(rest) >= zero_tol]
    gap = float(np.abs(nonzero.real).min()) if nonzero.size else 0.0
    return SpectralInfo(eigenvalues=ev, gap=gap, steady_index=k)


def steady_state(lv: np.ndarray, zero_tol: float | None = None) -> np.ndarray:
    """Unique density-matrix zero mode of a trace-preserving generator."""
    lv = np.asarray(lv, dtype=np.complex128)
    _check_finite(lv)
    d = int(round(np.sqrt(lv.shape[0])))
    ev = np.linalg.eigvals(lv)
    scale = max(float(np.abs(ev).max(initial=0.0)), 1e-300)
    if zero_tol is None:
        zero_tol = 1e-8 * scale
    small = np.sort(np.abs(ev.real))
    n_zero = int(np.sum(np.abs(ev) < zero_tol))
    if n_zero != 1:
        raise DegenerateSteadyStateError(
            f"expected one zero mode, found {n_zero}; two smallest |Re λ|: "
            f"{small[0]:.3e}, {small[1]:.3e}"
        )

    _, _, vh = np.linalg.svd(lv)
    rho = devectorize(vh[-1].conj(), d)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)

    w, v = np.linalg.eigh(rho)
    if w.min() < -1e-12:
        raise NumericalError(f"steady state has negative eigenvalue {w.min():.3e}")
    if w.min() < 0:
        w = np.clip(w, 0.0, None)
        rho = (v * w) @ v.conj().T
        rho = rho / np.trace(rho).real

    resid = np.linalg.norm(lv @ vectorize(rho))
    if resid > 1e-10 * max(scale, 1.0):
        raise NumericalError(f"steady-state residual {resid:.3e} too large")
    return rho
