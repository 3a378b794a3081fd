"""Time evolution of real symmetric Hamiltonians.

The main backend diagonalizes once and then evaluates
``U(t) = V diag(exp(-i e t)) V^T`` for as many times as needed.  We use
``U(t) = exp(-iHt)``; for real ``H`` the opposite sign only conjugates every
amplitude and leaves all fidelities unchanged.  A Chebyshev expansion is kept
as an independent second backend for cross-checks at moderate times.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import jv

__all__ = [
    "DiagonalizationError",
    "SpectralDecomposition",
    "SlicePropagators",
    "diagonalize",
    "propagator_at",
    "propagator_blocks",
    "evolve_state",
    "evolve_states",
    "chebyshev_evolve",
    "gershgorin_bounds",
]

# Rows of the time grid handled per vectorized chunk.
CHUNK = 2048


class DiagonalizationError(RuntimeError):
    pass


def _fingerprint(matrix: np.ndarray) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(matrix).tobytes()).hexdigest()[:16]
    return f"shape={matrix.shape} sha256={digest}"


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T

    def unitary(self, t: float) -> np.ndarray:
        v = self.eigenvectors
        return (v * np.exp(-1j * self.eigenvalues * t)) @ v.T


def diagonalize(matrix: np.ndarray, check: bool = True) -> SpectralDecomposition:
    """Eigendecomposition of a real symmetric matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"matrix has non-finite entries ({_fingerprint(matrix)})")
    if not np.array_equal(matrix, matrix.T):
        raise ValueError("matrix is not exactly symmetric")
    try:
        evals, evecs = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise DiagonalizationError(
            f"eigensolver failed ({exc}) for {_fingerprint(matrix)}"
        ) from exc
    if check:
        scale = max(float(np.max(np.abs(matrix))), 1.0)
        recon = np.max(np.abs((evecs * evals) @ evecs.T - matrix), initial=0.0)
        ortho = np.max(np.abs(evecs.T @ evecs - np.eye(len(evals))), initial=0.0)
        if recon > 1e-10 * scale or ortho > 1e-12:
            raise DiagonalizationError(
                f"inaccurate decomposition (reconstruction {recon:.2e}, "
                f"orthogonality {ortho:.2e}) for {_fingerprint(matrix)}"
            )
    evals.setflags(write=False)
    evecs.setflags(write=False)
    return SpectralDecomposition(evals, evecs)


@dataclass(frozen=True)
class SlicePropagators:
    """2x2 blocks ``f_m = <slice m| exp(-iLt) |slice source>`` of one ladder."""

    parity: int
    time: float
    blocks: np.ndarray  # shape (M+1, 2, 2), complex

    @property
    def max_phonon(self) -> int:
        return self.blocks.shape[0] - 1

    def column_norms(self) -> np.ndarray:
        return np.sum(np.abs(self.blocks) ** 2, axis=(0, 1))


def propagator_blocks(
    spec: SpectralDecomposition, times: np.ndarray, source_slice: int = 0
) -> np.ndarray:
    """Slice propagators for many times, shape ``(len(times), M+1, 2, 2)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    v = spec.eigenvectors
    slices = spec.dim // 2
    src = v[2 * source_slice : 2 * source_slice + 2, :]  # (2, n)
    out = np.empty((len(times), slices, 2, 2), dtype=complex)
    for start in range(0, len(times), CHUNK):
        t = times[start : start + CHUNK]
        phase = np.exp(-1j * np.outer(t, spec.eigenvalues))  # (T, n)
        # u[t, i, j] = sum_k v[i,k] phase[t,k] src[j,k]
        weighted = phase[:, None, :] * src[None, :, :]  # (T, 2, n)
        u = np.matmul(weighted, v.T)  # (T, 2, n_sites)
        out[start : start + len(t)] = u.reshape(len(t), 2, slices, 2).transpose(0, 2, 3, 1)
    at_zero = times == 0
    if np.any(at_zero):
        out[at_zero] = 0.0
        out[at_zero, source_slice] = np.eye(2)
    return out


def propagator_at(
    spec: SpectralDecomposition, t: float, source_slice: int = 0, parity: int = 1
) -> SlicePropagators:
    blocks = propagator_blocks(spec, np.array([t]), source_slice)[0]
    return SlicePropagators(parity=parity, time=float(t), blocks=blocks)


def evolve_states(spec: SpectralDecomposition, initial: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Evolve one state to many times; returns shape ``(len(times), n)``."""
    initial = np.asarray(initial, dtype=complex)
    if initial.shape != (spec.dim,):
        raise ValueError(f"state has shape {initial.shape}, expected ({spec.dim},)")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    v = spec.eigenvectors
    coeffs = v.T @ initial
    out = np.empty((len(times), spec.dim), dtype=complex)
    for start in range(0, len(times), CHUNK):
        t = times[start : start + CHUNK]
        phase = np.exp(-1j * np.outer(t, spec.eigenvalues)) * coeffs
        out[start : start + len(t)] = phase @ v.T
    out[times == 0] = initial
    return out


def evolve_state(spec: SpectralDecomposition, initial: np.ndarray, t: float) -> np.ndarray:
    initial = np.asarray(initial, dtype=complex)
    norm = np.linalg.norm(initial)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"initial state must be normalized, |psi| = {norm!r}")
    return evolve_states(spec, initial, np.array([t]))[0]


def gershgorin_bounds(matrix: np.ndarray) -> tuple[float, float]:
    diag = np.diag(matrix)
    radius = np.sum(np.abs(matrix), axis=1) - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def chebyshev_evolve(matrix: np.ndarray, initial: np.ndarray, t: float, tol: float = 1e-14) -> np.ndarray:
    """``exp(-i H t) psi`` by Chebyshev expansion, without diagonalizing."""
    matrix = np.asarray(matrix, dtype=float)
    psi = np.asarray(initial, dtype=complex)
    if t == 0:
        return psi.copy()
    lo, hi = gershgorin_bounds(matrix)
    half = max((hi - lo) / 2.0, 1e-300)
    centre = (hi + lo) / 2.0
    x = half * t
    n_terms = int(abs(x) + 20 * abs(x) ** (1 / 3) + 40)

    def scaled(vec: np.ndarray) -> np.ndarray:
        return (matrix @ vec - centre * vec) / half

    prev = psi
    cur = scaled(psi)
    total = jv(0, x) * prev + 2 * (-1j) * jv(1, x) * cur
    for k in range(2, n_terms):
        nxt = 2 * scaled(cur) - prev
        coeff = 2 * (-1j) ** k * jv(k, x)
        total = total + coeff * nxt
        prev, cur = cur, nxt
        if k > abs(x) and abs(jv(k, x)) < tol:
            break
    return np.exp(-1j * centre * t) * total
