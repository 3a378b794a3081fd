"""The two parity ladders obtained from the Bell-basis block diagonalization.

Each parity sector is a two-leg ladder whose slices are phonon numbers.  A
slice holds either the Psi pair (Psi+, Psi-) or the Phi pair (Phi+, Phi-):
the "+" ladder starts with Psi at ``m = 0`` and alternates, the "-" ladder
starts with Phi.  Leg 0 carries the "+" Bell state of each slice, leg 1 the
"-" one.

Matrix elements, derived from the Hamiltonian and the Bell definitions:

* on-site energy ``omega * m`` on both legs,
* rung ``omega_b0 + omega_a0`` on Psi slices, ``omega_b0 - omega_a0`` on Phi
  slices,
* leg-0 bond ``sqrt(m+1) * (lambda_a + lambda_b)`` and leg-1 bond
  ``sqrt(m+1) * (lambda_a - lambda_b)`` between slices ``m`` and ``m+1``.

These follow when the leg-1 site of a Phi slice is ``-|Phi->`` rather than
``|Phi->``.  With the plain ``|Phi->`` both the Phi rung and the leg-1 bond
change sign together; the spectrum is the same either way, but flipping only
one of the two is not a gauge change (it threads a flux through each
plaquette).  :func:`ladder_basis_signs` records the phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams, Truncation, bell_transform, build_full_hamiltonian

__all__ = [
    "LadderMatrix",
    "BlockEquivalenceError",
    "build_ladders",
    "ladder_bell_indices",
    "ladder_basis_signs",
    "parity_permutation",
    "verify_block_equivalence",
    "write_edge_list",
    "read_edge_list",
]

EQUIVALENCE_TOL = 1e-12


class BlockEquivalenceError(AssertionError):
    """The rotated full Hamiltonian does not match the ladder direct sum."""

    def __init__(self, residual: float, location: tuple[int, int], tol: float):
        self.residual = residual
        self.location = location
        self.tol = tol
        super().__init__(
            f"block equivalence residual {residual:.3e} exceeds {tol:.1e} "
            f"at entry {location}"
        )


@dataclass(frozen=True)
class LadderMatrix:
    """One parity block as a ladder with two states per slice.

    Index of (slice m, leg l) in :meth:`matrix` is ``2*m + l``.
    """

    parity: int
    diagonal: np.ndarray
    rungs: np.ndarray
    leg_plus: np.ndarray
    leg_minus: np.ndarray

    @property
    def slices(self) -> int:
        return len(self.diagonal)

    @property
    def dim(self) -> int:
        return 2 * self.slices

    def slice_type(self, m: int) -> str:
        """``"Psi"`` or ``"Phi"``: which Bell pair lives on slice ``m``."""
        even = m % 2 == 0
        return "Psi" if even == (self.parity == 1) else "Phi"

    def matrix(self) -> np.ndarray:
        n = self.dim
        h = np.zeros((n, n))
        idx = np.arange(self.slices)
        h[2 * idx, 2 * idx] = self.diagonal
        h[2 * idx + 1, 2 * idx + 1] = self.diagonal
        h[2 * idx, 2 * idx + 1] = h[2 * idx + 1, 2 * idx] = self.rungs
        bond = idx[:-1]
        h[2 * bond, 2 * bond + 2] = h[2 * bond + 2, 2 * bond] = self.leg_plus
        h[2 * bond + 1, 2 * bond + 3] = h[2 * bond + 3, 2 * bond + 1] = self.leg_minus
        return h

    def edges(self) -> list[tuple[int, int, int, int, float]]:
        """All couplings as ``(slice_i, leg_i, slice_j, leg_j, value)``.

        On-site energies appear as self-edges.
        """
        out: list[tuple[int, int, int, int, float]] = []
        for m in range(self.slices):
            out.append((m, 0, m, 0, float(self.diagonal[m])))
            out.append((m, 1, m, 1, float(self.diagonal[m])))
            out.append((m, 0, m, 1, float(self.rungs[m])))
            if m + 1 < self.slices:
                out.append((m, 0, m + 1, 0, float(self.leg_plus[m])))
                out.append((m, 1, m + 1, 1, float(self.leg_minus[m])))
        return out


def build_ladders(params: ModelParams, trunc: Truncation) -> tuple[LadderMatrix, LadderMatrix]:
    """Return the ``(+, -)`` parity ladders for the given parameters."""
    m = np.arange(trunc.slices)
    bonds = np.sqrt(np.arange(1, trunc.slices))
    psi_rung = params.omega_a0 + params.omega_b0
    phi_rung = params.omega_b0 - params.omega_a0
    diagonal = params.omega * m
    leg_plus = bonds * (params.lambda_a + params.lambda_b)
    leg_minus = bonds * (params.lambda_a - params.lambda_b)
    even = m % 2 == 0
    plus = LadderMatrix(
        parity=1,
        diagonal=diagonal,
        rungs=np.where(even, psi_rung, phi_rung),
        leg_plus=leg_plus,
        leg_minus=leg_minus,
    )
    minus = LadderMatrix(
        parity=-1,
        diagonal=diagonal.copy(),
        rungs=np.where(even, phi_rung, psi_rung),
        leg_plus=leg_plus.copy(),
        leg_minus=leg_minus.copy(),
    )
    for ladder in (plus, minus):
        for arr in (ladder.diagonal, ladder.rungs, ladder.leg_plus, ladder.leg_minus):
            arr.setflags(write=False)
    return plus, minus


def ladder_bell_indices(trunc: Truncation, parity: int) -> np.ndarray:
    """Bell-basis row of each ladder site ``2*m + leg`` for one parity."""
    out = np.empty(2 * trunc.slices, dtype=int)
    for m in range(trunc.slices):
        psi_here = (m % 2 == 0) == (parity == 1)
        base = 4 * m + (0 if psi_here else 2)
        out[2 * m] = base
        out[2 * m + 1] = base + 1
    return out


def ladder_basis_signs(trunc: Truncation, parity: int) -> np.ndarray:
    """Phase of each ladder site relative to its Bell state: -1 on ``-|Phi->``."""
    signs = np.ones(2 * trunc.slices)
    for m in range(trunc.slices):
        if (m % 2 == 0) != (parity == 1):
            signs[2 * m + 1] = -1.0
    return signs


def parity_permutation(trunc: Truncation) -> np.ndarray:
    """Signed permutation taking the Bell basis to the (+ ladder, - ladder) sites."""
    order = np.concatenate(
        [ladder_bell_indices(trunc, 1), ladder_bell_indices(trunc, -1)]
    )
    signs = np.concatenate([ladder_basis_signs(trunc, 1), ladder_basis_signs(trunc, -1)])
    return signs[:, None] * np.eye(trunc.dim)[order]


def verify_block_equivalence(
    params: ModelParams,
    trunc: Truncation,
    ladders: tuple[LadderMatrix, LadderMatrix] | None = None,
    tol: float | None = EQUIVALENCE_TOL,
) -> float:
    """Max-norm residual between ``P Q H Q^T P^T`` and ``diag(L+, L-)``.

    ``Q`` is the Bell transform and ``P`` the signed parity sort.

    Raises :class:`BlockEquivalenceError` when the residual exceeds ``tol``;
    pass ``tol=None`` to only measure.
    """
    if ladders is None:
        ladders = build_ladders(params, trunc)
    plus, minus = ladders
    # sqrt(2) * Q has entries 0 and +-1; rotating with it and halving at the
    # end keeps an already diagonal H free of round-off.
    pq = parity_permutation(trunc) @ np.rint(math.sqrt(2.0) * bell_transform(trunc))
    rotated = 0.5 * (pq @ build_full_hamiltonian(params, trunc) @ pq.T)
    half = plus.dim
    target = np.zeros_like(rotated)
    target[:half, :half] = plus.matrix()
    target[half:, half:] = minus.matrix()
    diff = np.abs(rotated - target)
    location = np.unravel_index(int(np.argmax(diff)), diff.shape)
    residual = float(diff[location])
    if tol is not None and residual > tol:
        raise BlockEquivalenceError(residual, (int(location[0]), int(location[1])), tol)
    return residual


def write_edge_list(ladder: LadderMatrix, path: str | Path) -> None:
    lines = [
        f"{si} {li} {sj} {lj} {value!r}" for si, li, sj, lj, value in ladder.edges()
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> list[tuple[int, int, int, int, float]]:
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        si, li, sj, lj = (int(p) for p in parts[:4])
        value = float(parts[4])
        if not math.isfinite(value):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        edges.append((si, li, sj, lj, value))
    return edges
