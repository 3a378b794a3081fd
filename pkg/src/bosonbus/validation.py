"""Independent oracles and the cross-engine validation suites.

The oracle here never diagonalizes: it exponentiates the full Hamiltonian with
``scipy.linalg.expm`` (scaling and squaring), evolves concrete input states,
traces out A and the boson by reshaping, and reads the transfer tensor off the
six axis states of the Bloch sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .fidelity import (
    BlochState,
    DirectEngine,
    LadderEngine,
    average_fidelity_montecarlo,
)
from .ladder import BlockEquivalenceError, LadderMatrix, build_ladders, verify_block_equivalence
from .model import ModelParams, Truncation, build_full_hamiltonian, flat_index

__all__ = [
    "AXIS_STATES",
    "CheckResult",
    "ValidationReport",
    "random_params",
    "oracle_reduced_density_b",
    "oracle_transfer_tensor",
    "oracle_fidelity",
    "run_validation",
    "affine_fit",
]

# (Bloch vector, state) for the six axis states.
AXIS_STATES = (
    (np.array([1.0, 0, 0]), BlochState(math.pi / 2, 0.0)),
    (np.array([-1.0, 0, 0]), BlochState(math.pi / 2, math.pi)),
    (np.array([0, 1.0, 0]), BlochState(math.pi / 2, math.pi / 2)),
    (np.array([0, -1.0, 0]), BlochState(math.pi / 2, 3 * math.pi / 2)),
    (np.array([0, 0, 1.0]), BlochState(0.0, 0.0)),
    (np.array([0, 0, -1.0]), BlochState(math.pi, 0.0)),
)

_PAULIS = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)


def random_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(
        omega_a0=float(rng.uniform(0.0, 3.0)),
        omega_b0=float(rng.uniform(0.0, 3.0)),
        omega=float(rng.uniform(0.5, 2.0)),
        lambda_a=float(rng.uniform(-1.5, 1.5)),
        lambda_b=float(rng.uniform(-1.5, 1.5)),
    )


def _initial_state(trunc: Truncation, psi_a: BlochState) -> np.ndarray:
    psi = np.zeros(trunc.dim, dtype=complex)
    c = psi_a.ket()
    psi[flat_index(0, 0, 0)] = c[0]
    psi[flat_index(1, 0, 0)] = c[1]
    return psi


def oracle_reduced_density_b(
    params: ModelParams, trunc: Truncation, psi_a: BlochState, t: float, unitary: np.ndarray | None = None
) -> np.ndarray:
    if unitary is None:
        unitary = expm(-1j * t * build_full_hamiltonian(params, trunc))
    psi = unitary @ _initial_state(trunc, psi_a)
    amp = psi.reshape(trunc.slices, 2, 2)  # [m, eta_a, eta_b]
    return np.einsum("mab,mac->bc", amp, amp.conj())


def oracle_transfer_tensor(params: ModelParams, trunc: Truncation, t: float) -> tuple[np.ndarray, np.ndarray]:
    unitary = expm(-1j * t * build_full_hamiltonian(params, trunc))
    outputs = []
    for _, state in AXIS_STATES:
        rho = oracle_reduced_density_b(params, trunc, state, t, unitary)
        outputs.append(np.array([np.trace(s @ rho).real for s in _PAULIS]))
    tmat = np.empty((3, 3))
    for k in range(3):
        tmat[:, k] = 0.5 * (outputs[2 * k] - outputs[2 * k + 1])
    t0 = 0.5 * (outputs[4] + outputs[5])
    return tmat, t0


def oracle_fidelity(params: ModelParams, trunc: Truncation, t: float) -> float:
    tmat, _ = oracle_transfer_tensor(params, trunc, t)
    return 0.5 * (1.0 + np.trace(tmat) / 3.0)


def affine_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares ``y ~ a x + b``; returns ``(a, b, max residual)``."""
    design = np.column_stack([x, np.ones_like(x)])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(a), float(b), float(np.max(np.abs(design @ [a, b] - y)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)
    # (label, t, printed, calibrated, direct)
    table: list[tuple[str, float, float, float, float]] = field(default_factory=list)
    fit: tuple[float, float, float] | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        lines = [c.line() for c in self.checks]
        if self.fit is not None:
            a, b, r = self.fit
            lines.append(
                f"affine fit direct ~ {a:.6g} * printed + {b:.6g}: max residual {r:.3e}"
                + (" (no affine correction reproduces the fidelity)" if r > 1e-8 else "")
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def table_csv(self) -> str:
        rows = ["case,t,ladder_printed,ladder_calibrated,direct,printed_minus_direct"]
        for label, t, pr, cal, d in self.table:
            rows.append(
                ",".join([label, format(t, ".17g"), format(pr, ".17g"), format(cal, ".17g"),
                          format(d, ".17g"), format(pr - d, ".17g")])
            )
        return "\n".join(rows) + "\n"


def _corrupt_rungs(ladders: tuple[LadderMatrix, LadderMatrix]) -> tuple[LadderMatrix, LadderMatrix]:
    plus, minus = ladders
    bad = LadderMatrix(plus.parity, plus.diagonal, -plus.rungs, plus.leg_plus, plus.leg_minus)
    return bad, minus


def run_validation(
    n_sets: int = 5,
    seed: int = 0,
    max_phonon: int = 8,
    n_samples: int = 10_000,
    inject_fault: str | None = None,
) -> ValidationReport:
    """Run every cross-check on ``n_sets`` random parameter sets."""
    if inject_fault not in (None, "rung-sign"):
        raise ValueError(f"unknown fault {inject_fault!r}")
    rng = np.random.default_rng(seed)
    report = ValidationReport()
    trunc = Truncation(max_phonon)
    cases = [random_params(rng) for _ in range(n_sets)]
    times = rng.uniform(0.5, 60.0, n_sets)

    worst = 0.0
    failure = ""
    for p in cases:
        ladders = build_ladders(p, trunc)
        if inject_fault == "rung-sign":
            ladders = _corrupt_rungs(ladders)
        try:
            worst = max(worst, verify_block_equivalence(p, trunc, ladders))
        except BlockEquivalenceError as exc:
            worst = max(worst, exc.residual)
            failure = failure or str(exc)
    report.checks.append(
        CheckResult("block-equivalence", not failure, failure or f"max residual {worst:.2e} <= 1e-12")
    )

    oracle_err = ladder_err = 0.0
    mc_z = 0.0
    invariants: list[str] = []
    for i, (p, t) in enumerate(zip(cases, times)):
        direct = DirectEngine(p, trunc)
        f_direct = float(direct.fidelity(np.array([t]))[0])
        oracle_err = max(oracle_err, abs(f_direct - oracle_fidelity(p, trunc, t)))
        f_ladder = float(LadderEngine(p, trunc).fidelity(np.array([t]))[0])
        ladder_err = max(ladder_err, abs(f_direct - f_ladder))
        est, err = average_fidelity_montecarlo(p, trunc, t, n_samples, seed, i, engine=direct)
        mc_z = max(mc_z, abs(est - f_direct) / err)
        f0, f_back = direct.fidelity(np.array([0.0, -t]))
        if abs(f0 - 0.5) > 1e-9:
            invariants.append(f"F(0)={f0!r}")
        if abs(f_back - f_direct) > 1e-9:
            invariants.append(f"time reversal off by {abs(f_back - f_direct):.2e}")
        flipped = p.replace(lambda_a=-p.lambda_a, lambda_b=-p.lambda_b)
        f_flip = float(DirectEngine(flipped, trunc).fidelity(np.array([t]))[0])
        if abs(f_flip - f_direct) > 1e-9:
            invariants.append(f"gauge flip off by {abs(f_flip - f_direct):.2e}")
        if not -1e-9 <= f_direct <= 1 + 1e-9:
            invariants.append(f"F={f_direct!r} outside [0,1]")
    report.checks.append(
        CheckResult("direct-vs-expm-oracle", oracle_err <= 1e-8, f"max |diff| {oracle_err:.2e} (tol 1e-8)")
    )
    report.checks.append(
        CheckResult("direct-vs-ladder-calibrated", ladder_err <= 1e-8, f"max |diff| {ladder_err:.2e} (tol 1e-8)")
    )
    report.checks.append(
        CheckResult("direct-vs-montecarlo", mc_z <= 3.0, f"max |diff|/stderr {mc_z:.2f} (tol 3)")
    )
    report.checks.append(
        CheckResult("invariants", not invariants, "; ".join(invariants) or "F(0)=1/2, [0,1], t->-t, lambda->-lambda")
    )

    # As-printed ladder formula next to the calibrated one and the truth.
    table_cases = [("t0", cases[0], 0.0), ("omega_a0=0", cases[0].replace(omega_a0=0.0), float(times[0]))]
    table_cases += [(f"set{i}", p, float(t)) for i, (p, t) in enumerate(zip(cases, times))]
    fit_x, fit_y = [], []
    for label, p, t in table_cases:
        ts = np.array([t])
        pr = float(LadderEngine(p, trunc, "printed").fidelity(ts)[0])
        cal = float(LadderEngine(p, trunc).fidelity(ts)[0])
        d = float(DirectEngine(p, trunc).fidelity(ts)[0])
        report.table.append((label, t, pr, cal, d))
    for p in cases:
        ts = np.linspace(0.0, 40.0, 41)
        fit_x.append(LadderEngine(p, trunc, "printed").fidelity(ts))
        fit_y.append(DirectEngine(p, trunc).fidelity(ts))
    report.fit = affine_fit(np.concatenate(fit_x), np.concatenate(fit_y))
    printed_t0 = report.table[0][2]
    report.checks.append(
        CheckResult(
            "ladder-printed-t0",
            abs(printed_t0 - 0.4375) <= 1e-12 and abs(report.table[0][4] - 0.5) <= 1e-12,
            f"printed {printed_t0:.16g} vs direct {report.table[0][4]:.16g} at t=0",
        )
    )
    return report
