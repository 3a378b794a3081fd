"""Qubit-to-qubit state transfer through a single boson mode.

Two qubits A and B couple to one harmonic mode.  The package builds the
truncated Hamiltonian, splits it into two parity ladders, propagates, and
computes the Bloch-sphere averaged fidelity of sending a state from A to B,
together with peak finding, cutoff convergence and parameter sweeps.
"""

from .fidelity import (
    BlochState,
    DirectEngine,
    FidelityPeak,
    FidelityTrace,
    LadderEngine,
    TransferTensor,
    UnphysicalTensorError,
    average_fidelity_direct,
    average_fidelity_ladder,
    average_fidelity_montecarlo,
    fidelity_trace,
    find_peak,
    transfer_tensor,
)
from .ladder import LadderMatrix, build_ladders, verify_block_equivalence
from .model import ModelParams, Truncation, build_full_hamiltonian
from .propagate import SpectralDecomposition, diagonalize
from .sweep import (
    AxisSpec,
    SweepRecord,
    SweepSettings,
    asymmetry_scan,
    converge_truncation,
    phase_diagram,
)

__version__ = "0.1.0"

__all__ = [
    "AxisSpec",
    "BlochState",
    "DirectEngine",
    "FidelityPeak",
    "FidelityTrace",
    "LadderEngine",
    "LadderMatrix",
    "ModelParams",
    "SpectralDecomposition",
    "SweepRecord",
    "SweepSettings",
    "TransferTensor",
    "Truncation",
    "UnphysicalTensorError",
    "asymmetry_scan",
    "average_fidelity_direct",
    "average_fidelity_ladder",
    "average_fidelity_montecarlo",
    "build_full_hamiltonian",
    "build_ladders",
    "converge_truncation",
    "diagonalize",
    "fidelity_trace",
    "find_peak",
    "phase_diagram",
    "transfer_tensor",
    "verify_block_equivalence",
]
