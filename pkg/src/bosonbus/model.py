"""Two qubits coupled to one boson mode: parameters, basis and Hamiltonian.

The Hamiltonian is

    H = w_a0 sz_A + w_b0 sz_B + w b^dag b + (b + b^dag)(l_a sx_A + l_b sx_B)

in a Fock space truncated at ``M`` phonons.  Conventions:

* ``|0>`` is the +1 eigenstate of sigma_z, so the level splitting of qubit A
  is ``2 * omega_a0`` (the Hamiltonian coefficient is half the gap).
* Product states ``|eta_a, eta_b, m>`` are stored slice-major,
  ``flat = 4*m + 2*eta_a + eta_b``, so each phonon slice is contiguous.
* The last slice ``m = M`` has no outward coupling (hard cutoff).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ModelParams",
    "Truncation",
    "ProductBasisIndex",
    "flat_index",
    "build_full_hamiltonian",
    "bell_transform",
    "parity_of",
    "parity_indices",
    "BELL_LABELS",
]

# Order of the Bell states inside one phonon slice of the Bell basis.
BELL_LABELS = ("Psi+", "Psi-", "Phi+", "Phi-")


@dataclass(frozen=True)
class ModelParams:
    """Hamiltonian parameters, energies in units of the boson frequency."""

    omega_a0: float
    omega_b0: float
    omega: float = 1.0
    lambda_a: float = 0.0
    lambda_b: float = 0.0

    def __post_init__(self) -> None:
        for name in ("omega_a0", "omega_b0", "omega", "lambda_a", "lambda_b"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.omega <= 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if self.omega_a0 < 0 or self.omega_b0 < 0:
            raise ValueError(
                f"qubit separations must be >= 0, got "
                f"omega_a0={self.omega_a0}, omega_b0={self.omega_b0}"
            )

    @classmethod
    def symmetric(cls, omega_s: float, lambda_s: float, omega: float = 1.0) -> "ModelParams":
        return cls(omega_s, omega_s, omega, lambda_s, lambda_s)

    def replace(self, **changes: float) -> "ModelParams":
        return replace(self, **changes)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.omega_a0, self.omega_b0, self.omega, self.lambda_a, self.lambda_b)


@dataclass(frozen=True)
class Truncation:
    max_phonon: int

    def __post_init__(self) -> None:
        if isinstance(self.max_phonon, bool) or int(self.max_phonon) != self.max_phonon:
            raise ValueError(f"max_phonon must be an integer, got {self.max_phonon!r}")
        object.__setattr__(self, "max_phonon", int(self.max_phonon))
        if self.max_phonon < 1:
            raise ValueError(f"max_phonon must be >= 1, got {self.max_phonon}")

    @property
    def slices(self) -> int:
        return self.max_phonon + 1

    @property
    def dim(self) -> int:
        return 4 * self.slices


def flat_index(eta_a: int, eta_b: int, m: int) -> int:
    return 4 * m + 2 * eta_a + eta_b


@dataclass(frozen=True)
class ProductBasisIndex:
    eta_a: int
    eta_b: int
    m: int

    def __post_init__(self) -> None:
        if self.eta_a not in (0, 1) or self.eta_b not in (0, 1):
            raise ValueError(f"qubit labels must be 0 or 1, got {self}")
        if self.m < 0:
            raise ValueError(f"phonon number must be >= 0, got {self.m}")

    @property
    def flat(self) -> int:
        return flat_index(self.eta_a, self.eta_b, self.m)

    @classmethod
    def from_flat(cls, index: int, trunc: Truncation | None = None) -> "ProductBasisIndex":
        if index < 0 or (trunc is not None and index >= trunc.dim):
            raise IndexError(f"flat index {index} out of range")
        m, rest = divmod(index, 4)
        return cls(rest // 2, rest % 2, m)


def parity_of(state: ProductBasisIndex) -> int:
    """Conserved parity label (-1)**(eta_a + eta_b + m)."""
    return -1 if (state.eta_a + state.eta_b + state.m) % 2 else 1


def parity_indices(trunc: Truncation, parity: int) -> np.ndarray:
    """Flat product-basis indices of the given parity, in ascending order."""
    if parity not in (1, -1):
        raise ValueError(f"parity must be +1 or -1, got {parity}")
    idx = np.arange(trunc.dim)
    eta_a = (idx % 4) // 2
    eta_b = idx % 2
    m = idx // 4
    labels = 1 - 2 * ((eta_a + eta_b + m) % 2)
    return idx[labels == parity]


def build_full_hamiltonian(params: ModelParams, trunc: Truncation) -> np.ndarray:
    """Dense real symmetric Hamiltonian on the truncated product basis."""
    n = trunc.dim
    h = np.zeros((n, n))
    for m in range(trunc.slices):
        for eta_a in (0, 1):
            for eta_b in (0, 1):
                i = flat_index(eta_a, eta_b, m)
                h[i, i] = (
                    (1 - 2 * eta_a) * params.omega_a0
                    + (1 - 2 * eta_b) * params.omega_b0
                    + params.omega * m
                )
                if m == trunc.max_phonon:
                    continue
                amp = math.sqrt(m + 1)
                j_a = flat_index(1 - eta_a, eta_b, m + 1)
                j_b = flat_index(eta_a, 1 - eta_b, m + 1)
                h[i, j_a] = h[j_a, i] = params.lambda_a * amp
                h[i, j_b] = h[j_b, i] = params.lambda_b * amp
    return h


def bell_transform(trunc: Truncation) -> np.ndarray:
    """Orthogonal matrix whose rows are the Bell states in the product basis.

    Row ``4*m + k`` holds Bell state ``BELL_LABELS[k]`` tensored with ``|m>``:
    Psi+- = (|00> +- |11>)/sqrt2 and Phi+- = (|01> +- |10>)/sqrt2.
    """
    s = 1.0 / math.sqrt(2.0)
    block = s * np.array(
        [
            [1.0, 0.0, 0.0, 1.0],   # Psi+
            [1.0, 0.0, 0.0, -1.0],  # Psi-
            [0.0, 1.0, 1.0, 0.0],   # Phi+
            [0.0, 1.0, -1.0, 0.0],  # Phi-
        ]
    )
    return np.kron(np.eye(trunc.slices), block)
