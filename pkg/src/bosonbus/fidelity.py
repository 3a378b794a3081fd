"""Bloch-sphere averaged transfer fidelity from qubit A to qubit B.

Qubit A starts in an arbitrary pure state, qubit B in ``|0>`` and the boson in
its vacuum.  The reduced state of B is an affine function of A's Bloch vector,
``p_B = T p_A + T0``, and the sphere average of ``<psi_A|rho_B|psi_A>`` is
``(1 + tr(T)/3) / 2``.

Three routes to the same number live here:

``direct``
    Evolve ``|0,0,0>`` and ``|1,0,0>`` in the product basis, trace out A and the
    boson, and assemble ``T`` from the four matrix-unit images.  Ground truth.
``ladder``
    Closed form in the 2x2 slice propagators of the two parity ladders.
``ladder-printed``
    The (1/24) sum of traces of ``A_m, B_m, C_m`` with the constants exactly as
    commonly printed.  It is *not* a fidelity (it gives 0.4375 at ``t = 0``) and
    is kept only for auditing.

plus a Monte-Carlo average over random input states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .ladder import build_ladders, ladder_basis_signs
from .model import ModelParams, Truncation, build_full_hamiltonian, flat_index, parity_indices
from .propagate import CHUNK, SlicePropagators, diagonalize, propagator_blocks

__all__ = [
    "ENGINES",
    "BlochState",
    "TransferTensor",
    "FidelityTrace",
    "FidelityPeak",
    "UnphysicalTensorError",
    "DirectEngine",
    "LadderEngine",
    "make_engine",
    "transfer_from_gram",
    "assemble_transfer_tensor",
    "reduced_density_b",
    "transfer_tensor",
    "average_fidelity_direct",
    "average_fidelity_ladder",
    "ladder_fidelity",
    "average_fidelity_montecarlo",
    "fidelity_trace",
    "find_peak",
    "sphere_mesh",
]

ENGINES = ("direct", "ladder", "ladder-printed", "montecarlo")
BOUND_TOL = 1e-9
TIE_TOL = 1e-12

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)

_HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


class UnphysicalTensorError(ValueError):
    pass


@dataclass(frozen=True)
class BlochState:
    theta: float
    phi: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise ValueError(f"phi must lie in [0, 2pi), got {self.phi}")

    def ket(self) -> np.ndarray:
        return np.array(
            [math.cos(self.theta / 2), np.exp(1j * self.phi) * math.sin(self.theta / 2)]
        )

    def bloch_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class TransferTensor:
    """Affine Bloch map ``p_B = T @ p_A + T0``."""

    T: np.ndarray
    T0: np.ndarray

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.T @ np.asarray(p, dtype=float) + self.T0

    def max_output_norm(self, points: np.ndarray | None = None) -> float:
        pts = sphere_mesh() if points is None else points
        return float(np.max(np.linalg.norm(pts @ self.T.T + self.T0, axis=1)))


def sphere_mesh() -> np.ndarray:
    """The 26 normalized directions of the 3x3x3 cube lattice around the origin."""
    pts = np.array(
        [(x, y, z) for x in (-1, 0, 1) for y in (-1, 0, 1) for z in (-1, 0, 1) if (x, y, z) != (0, 0, 0)],
        dtype=float,
    )
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def transfer_from_gram(gram: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bloch map from the images ``K[i, j] = Tr_{A,E} U|i,0,0><j,0,0|U^dag``.

    ``gram`` has shape ``(..., 2, 2, 2, 2)`` indexed ``[i, j, b, b']``.
    Returns ``T`` of shape ``(..., 3, 3)`` and ``T0`` of shape ``(..., 3)``.
    """
    k00 = gram[..., 0, 0, :, :]
    k01 = gram[..., 0, 1, :, :]
    k10 = gram[..., 1, 0, :, :]
    k11 = gram[..., 1, 1, :, :]
    images = (k01 + k10, -1j * k01 + 1j * k10, k00 - k11)
    identity_image = k00 + k11
    tmat = np.empty(gram.shape[:-4] + (3, 3))
    t0 = np.empty(gram.shape[:-4] + (3,))
    for k, sk in enumerate(PAULIS):
        t0[..., k] = 0.5 * np.einsum("ij,...ji->...", sk, identity_image).real
        for col, image in enumerate(images):
            tmat[..., k, col] = 0.5 * np.einsum("ij,...ji->...", sk, image).real
    return tmat, t0


def assemble_transfer_tensor(jb: np.ndarray) -> TransferTensor:
    """Build ``(T, T0)`` from the propagator sums ``J_B``.

    ``jb[eta_b, eta_b', a, a']`` is the coefficient of ``rho_A[a, a']`` in
    ``rho_B[eta_b, eta_b']``.  Components ``Tx, Ty, Tz`` of each ``(a, a')``
    are the Bloch components of the corresponding image; the columns combine
    them into the responses to ``p_x, p_y, p_z``.
    """
    jb = np.asarray(jb)
    tx = jb[0, 1] + jb[1, 0]
    ty = 1j * (jb[0, 1] - jb[1, 0])
    tz = jb[0, 0] - jb[1, 1]
    rows = []
    offsets = []
    for comp in (tx, ty, tz):
        rows.append(
            [
                0.5 * (comp[0, 1] + comp[1, 0]),
                0.5j * (comp[1, 0] - comp[0, 1]),
                0.5 * (comp[0, 0] - comp[1, 1]),
            ]
        )
        offsets.append(0.5 * (comp[0, 0] + comp[1, 1]))
    return TransferTensor(np.real(np.array(rows)), np.real(np.array(offsets)))


def phase_envelope(tmat: np.ndarray) -> np.ndarray:
    """Fidelity maximized over a z-rotation of qubit B's output.

    Free precession of B rotates the in-plane block of ``T`` much faster than
    the transfer itself, so over one precession period the lab-frame fidelity
    sweeps up to this value.  Coarse time grids alias that precession; the
    envelope does not.
    """
    in_plane = np.hypot(tmat[..., 0, 0] + tmat[..., 1, 1], tmat[..., 0, 1] - tmat[..., 1, 0])
    return fidelity_from_trace_of_t(tmat[..., 2, 2] + in_plane)


def fidelity_from_trace_of_t(trace_t: np.ndarray | float) -> np.ndarray | float:
    return 0.5 * (1.0 + np.asarray(trace_t) / 3.0)


class DirectEngine:
    """Product-basis evolution reusing one diagonalization per parity block."""

    name = "direct"

    def __init__(self, params: ModelParams, trunc: Truncation):
        self.params = params
        self.trunc = trunc
        h = build_full_hamiltonian(params, trunc)
        self._blocks = []
        # |0,0,0> has parity +1, |1,0,0> has parity -1.
        for parity, source in ((1, flat_index(0, 0, 0)), (-1, flat_index(1, 0, 0))):
            idx = parity_indices(trunc, parity)
            spec = diagonalize(h[np.ix_(idx, idx)])
            pos = int(np.searchsorted(idx, source))
            self._blocks.append((idx, spec, spec.eigenvectors[pos, :].copy()))

    def kets(self, times: np.ndarray) -> np.ndarray:
        """Evolved ``|eta_a, 0, 0>``; shape ``(len(times), 2, dim)``."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros((len(times), 2, self.trunc.dim), dtype=complex)
        for i, (idx, spec, coeff) in enumerate(self._blocks):
            phase = np.exp(-1j * np.outer(times, spec.eigenvalues)) * coeff
            out[:, i, idx] = phase @ spec.eigenvectors.T
        # U(0) = 1 exactly, not up to eigenvector round-off.
        at_zero = times == 0
        if np.any(at_zero):
            out[at_zero] = 0.0
            out[at_zero, 0, flat_index(0, 0, 0)] = 1.0
            out[at_zero, 1, flat_index(1, 0, 0)] = 1.0
        return out

    def gram(self, times: np.ndarray) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((len(times), 2, 2, 2, 2), dtype=complex)
        for start in range(0, len(times), CHUNK):
            t = times[start : start + CHUNK]
            psi = self.kets(t).reshape(len(t), 2, self.trunc.slices * 2, 2)
            # K[i,j,b,b'] = sum_{m,a} psi_i[m,a,b] conj(psi_j[m,a,b'])
            out[start : start + len(t)] = np.einsum("tika,tjkc->tijac", psi, psi.conj())
        return out

    def transfer(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return transfer_from_gram(self.gram(times))

    def fidelity(self, times: np.ndarray) -> np.ndarray:
        tmat, _ = self.transfer(times)
        return fidelity_from_trace_of_t(np.trace(tmat, axis1=-2, axis2=-1))

    def fidelity_and_envelope(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tmat, _ = self.transfer(times)
        return (
            fidelity_from_trace_of_t(np.trace(tmat, axis1=-2, axis2=-1)),
            phase_envelope(tmat),
        )


class LadderEngine:
    """Fidelity from the slice propagators of the two parity ladders."""

    def __init__(self, params: ModelParams, trunc: Truncation, mode: str = "calibrated"):
        if mode not in ("calibrated", "printed"):
            raise ValueError(f"unknown ladder mode {mode!r}")
        self.params = params
        self.trunc = trunc
        self.mode = mode
        self.name = "ladder" if mode == "calibrated" else "ladder-printed"
        plus, minus = build_ladders(params, trunc)
        self.specs = (diagonalize(plus.matrix()), diagonalize(minus.matrix()))

    def propagators(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return tuple(propagator_blocks(spec, times) for spec in self.specs)  # type: ignore[return-value]

    def fidelity(self, times: np.ndarray) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty(len(times))
        for start in range(0, len(times), CHUNK):
            t = times[start : start + CHUNK]
            fp, fm = self.propagators(t)
            out[start : start + len(t)] = ladder_fidelity(fp, fm, self.mode)
        return out


def make_engine(params: ModelParams, trunc: Truncation, engine: str = "direct"):
    if engine == "direct":
        return DirectEngine(params, trunc)
    if engine == "ladder":
        return LadderEngine(params, trunc, "calibrated")
    if engine == "ladder-printed":
        return LadderEngine(params, trunc, "printed")
    raise ValueError(f"engine {engine!r} has no continuous-time evaluator")


def ladder_fidelity(fplus: np.ndarray, fminus: np.ndarray, mode: str = "calibrated") -> np.ndarray:
    """Vectorized ladder formula on blocks of shape ``(..., M+1, 2, 2)``."""
    fplus = np.asarray(fplus)
    fminus = np.asarray(fminus)
    if fplus.shape != fminus.shape:
        raise ValueError(f"propagator shapes differ: {fplus.shape} vs {fminus.shape}")
    if mode == "calibrated":
        return _ladder_calibrated(fplus, fminus)
    if mode == "printed":
        return _ladder_printed(fplus, fminus)
    raise ValueError(f"unknown ladder mode {mode!r}")


def _plain_bell_gauge(blocks: np.ndarray, parity: int) -> np.ndarray:
    """Re-express slice propagators with ``+|Phi->`` on every Phi slice."""
    slices = blocks.shape[-3]
    signs = ladder_basis_signs(Truncation(slices - 1), parity).reshape(slices, 2)
    return signs[:, :, None] * blocks * signs[0][None, None, :]


def _ladder_calibrated(fplus: np.ndarray, fminus: np.ndarray) -> np.ndarray:
    fplus = _plain_bell_gauge(fplus, 1)
    fminus = _plain_bell_gauge(fminus, -1)
    # With plain Bell states, product-basis amplitudes of the evolved |0,0,0>
    # (y) and |1,0,0> (z) on each slice: Psi slices hold (|00>, |11>), Phi
    # slices hold (|01>, |10>).
    y = np.einsum("ij,...mjk,k->...mi", _HADAMARD, fplus, _HADAMARD[:, 0])
    z = np.einsum("ij,...mjk,k->...mi", _HADAMARD, fminus, _HADAMARD[:, 1])
    slices = fplus.shape[-3]
    odd = np.arange(slices) % 2
    sign = 1 - 2 * odd
    # B's coherence picks the |a=0,b=0> with |a=0,b=1> overlap on even slices
    # and |a=1,b=0> with |a=1,b=1> on odd ones.
    pick_y = np.take_along_axis(y, np.broadcast_to(odd[:, None], y.shape[:-1] + (1,)), axis=-1)[..., 0]
    pick_z = np.take_along_axis(z, np.broadcast_to(odd[:, None], z.shape[:-1] + (1,)), axis=-1)[..., 0]
    coherence = np.sum(pick_y * pick_z.conj(), axis=-1).real
    ay = np.abs(y) ** 2
    az = np.abs(z) ** 2
    polar = np.sum(sign * (ay[..., 0] - ay[..., 1] + az[..., 0] - az[..., 1]), axis=-1)
    return 0.5 + coherence / 3.0 + polar / 12.0


_SZ1 = np.diag([1.0, 0.0]).astype(complex)
_SZ2 = np.diag([0.0, -1.0]).astype(complex)
_SPLUS = np.array([[0, 1], [0, 0]], dtype=complex)
_SMINUS = np.array([[0, 0], [1, 0]], dtype=complex)
_MINUS_I_SY = -1j * SY


def _ladder_printed(fplus: np.ndarray, fminus: np.ndarray) -> np.ndarray:
    a = fplus + SZ @ fminus
    b = fplus + _MINUS_I_SY @ fminus @ SX
    c = _SZ1 @ fplus + (_SPLUS / 2) @ fplus @ SX + (_SMINUS / 2) @ fminus + _SZ2 @ fminus @ SX
    total = sum(np.sum(np.abs(x) ** 2, axis=(-1, -2, -3)) for x in (a, b, c))
    return total / 24.0


def average_fidelity_ladder(
    fplus: SlicePropagators, fminus: SlicePropagators, mode: str = "calibrated"
) -> float:
    if fplus.time != fminus.time:
        raise ValueError(f"propagators at different times: {fplus.time} vs {fminus.time}")
    if fplus.max_phonon != fminus.max_phonon:
        raise ValueError(
            f"propagators with different truncations: {fplus.max_phonon} vs {fminus.max_phonon}"
        )
    return float(ladder_fidelity(fplus.blocks, fminus.blocks, mode))


def transfer_tensor(params: ModelParams, trunc: Truncation, t: float) -> TransferTensor:
    tmat, t0 = DirectEngine(params, trunc).transfer(np.array([t]))
    return TransferTensor(tmat[0], t0[0])


def reduced_density_b(params: ModelParams, trunc: Truncation, psi_a: BlochState, t: float) -> np.ndarray:
    gram = DirectEngine(params, trunc).gram(np.array([t]))[0]
    c = psi_a.ket()
    return np.einsum("i,j,ijab->ab", c, c.conj(), gram)


def average_fidelity_direct(tt: TransferTensor) -> float:
    value = float(fidelity_from_trace_of_t(np.trace(tt.T)))
    if value < -BOUND_TOL or value > 1 + BOUND_TOL:
        raise UnphysicalTensorError(f"average fidelity {value!r} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def average_fidelity_montecarlo(
    params: ModelParams,
    trunc: Truncation,
    t: float,
    n_samples: int = 10_000,
    seed: int = 0,
    task_index: int = 0,
    engine: DirectEngine | None = None,
) -> tuple[float, float]:
    """Sample mean of ``<psi|rho_B(t)|psi>`` over uniformly random inputs.

    Draws come in fixed-size chunks, each from its own child of
    ``SeedSequence(seed, spawn_key=(task_index,))``, so the result depends only
    on ``(seed, task_index, n_samples)``.
    """
    if n_samples < 100:
        raise ValueError(f"n_samples must be >= 100, got {n_samples}")
    engine = engine or DirectEngine(params, trunc)
    gram = engine.gram(np.array([t]))[0]
    chunk = 4096
    n_chunks = -(-n_samples // chunk)
    children = np.random.SeedSequence(seed, spawn_key=(task_index,)).spawn(n_chunks)
    values = []
    for k, child in enumerate(children):
        size = min(chunk, n_samples - k * chunk)
        rng = np.random.default_rng(child)
        cos_theta = rng.uniform(-1.0, 1.0, size)
        phi = rng.uniform(0.0, 2 * math.pi, size)
        c = np.stack(
            [np.sqrt((1 + cos_theta) / 2), np.exp(1j * phi) * np.sqrt((1 - cos_theta) / 2)],
            axis=1,
        )
        rho = np.einsum("si,sj,ijab->sab", c, c.conj(), gram)
        values.append(np.einsum("sa,sab,sb->s", c.conj(), rho, c).real)
    samples = np.concatenate(values)
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_samples))


@dataclass(frozen=True)
class FidelityTrace:
    times: np.ndarray
    values: np.ndarray
    params: ModelParams
    trunc: Truncation
    engine: str
    evaluate: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    envelope: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise ValueError("times and values differ in length")
        if self.engine in ("direct", "ladder"):
            lo, hi = float(np.min(self.values)), float(np.max(self.values))
            if lo < -BOUND_TOL or hi > 1 + BOUND_TOL:
                raise UnphysicalTensorError(f"fidelity range [{lo}, {hi}] outside [0, 1]")

    @property
    def window_end(self) -> float:
        return float(self.times[-1])


def fidelity_trace(
    params: ModelParams,
    trunc: Truncation,
    t_grid,
    engine: str = "direct",
    n_samples: int = 10_000,
    seed: int = 0,
) -> FidelityTrace:
    times = np.asarray(t_grid, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(times) <= 0):
        raise ValueError("t_grid must be strictly ascending")
    if engine == "montecarlo":
        direct = DirectEngine(params, trunc)
        values = np.array(
            [
                average_fidelity_montecarlo(params, trunc, t, n_samples, seed, i, engine=direct)[0]
                for i, t in enumerate(times)
            ]
        )
        return FidelityTrace(times, values, params, trunc, engine, direct.fidelity)
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    evaluator = make_engine(params, trunc, engine)
    if isinstance(evaluator, DirectEngine):
        values, envelope = evaluator.fidelity_and_envelope(times)
        return FidelityTrace(times, values, params, trunc, engine, evaluator.fidelity, envelope)
    values = evaluator.fidelity(times)
    return FidelityTrace(times, values, params, trunc, engine, evaluator.fidelity)


@dataclass(frozen=True)
class FidelityPeak:
    f_max: float
    t_peak: float
    window_end: float
    window_bound: bool = False


def _fast_step(params: ModelParams) -> float:
    """Sampling step that resolves the fastest oscillation of the fidelity."""
    scale = 2.0 * (params.omega_a0 + params.omega_b0) + 4.0 * params.omega + 1.0
    return math.pi / (4.0 * scale)


def _refine(evaluate, lo: float, hi: float, step: float) -> tuple[float, float]:
    """Local maximum on ``[lo, hi]``: dense scan, then bounded Brent polish."""
    n = min(int(math.ceil((hi - lo) / step)) + 1, 8192)
    ts = np.linspace(lo, hi, max(n, 3))
    vals = evaluate(ts)
    # Earliest of the (round-off) ties wins.
    j = int(np.argmax(vals >= np.max(vals) - TIE_TOL))
    a, b = ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
    best_t, best_v = float(ts[j]), float(vals[j])
    if b > a:
        res = minimize_scalar(
            lambda t: -float(evaluate(np.array([t]))[0]),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-9 * max(1.0, abs(b))},
        )
        if -res.fun > best_v + TIE_TOL:
            best_t, best_v = float(res.x), float(-res.fun)
    return best_t, best_v


def _humps(guide: np.ndarray) -> np.ndarray:
    """Indices of local maxima of ``guide``, highest first."""
    if len(guide) < 3:
        return np.argsort(-guide, kind="stable")
    inner = np.flatnonzero((guide[1:-1] >= guide[:-2]) & (guide[1:-1] > guide[2:])) + 1
    ends = [i for i, ok in ((0, guide[0] > guide[1]), (len(guide) - 1, guide[-1] > guide[-2])) if ok]
    idx = np.concatenate([inner, np.array(ends, dtype=int)])
    return idx[np.argsort(-guide[idx], kind="stable")]


def find_peak(
    trace: FidelityTrace,
    eps_peak: float = 1e-3,
    refine: bool = True,
    edge_fraction: float = 0.05,
    max_candidates: int = 64,
    max_refine: int = 256,
) -> FidelityPeak:
    """Window maximum and the first time the fidelity comes within ``eps_peak`` of it.

    Candidates are located on the time grid, using the precession envelope
    when the trace carries one, and then confirmed on the continuous-time
    fidelity within one grid step (``refine``).  Reported values are always
    lab-frame fidelities.  Ties go to the earliest time.  If the first
    near-maximal point falls in the last ``edge_fraction`` of the window, the
    fidelity is still climbing when the window closes: the peak is reported as
    window-bound with ``t_peak`` at the window end.
    """
    if eps_peak <= 0:
        raise ValueError("eps_peak must be positive")
    times, values = trace.times, trace.values
    n = len(times)
    t_end = float(times[-1])
    evaluate = trace.evaluate if (refine and n > 1) else None
    guide = trace.envelope if (evaluate is not None and trace.envelope is not None) else values
    step = _fast_step(trace.params)

    def around(i: int) -> tuple[float, float]:
        return float(times[max(i - 1, 0)]), float(times[min(i + 1, n - 1)])

    f_max = float(np.max(values))
    if evaluate is not None:
        f_max = max(f_max, _refine(evaluate, *around(int(np.argmax(values))), step)[1])
        # The envelope bounds the fidelity from above, so humps whose envelope
        # is already below the best confirmed value cannot hold the maximum.
        for i in _humps(guide)[:max_refine]:
            if guide[i] <= f_max:
                break
            f_max = max(f_max, _refine(evaluate, *around(int(i)), step)[1])
    threshold = f_max - eps_peak

    i_first, t_peak = -1, math.nan
    if evaluate is not None:
        candidates = np.flatnonzero(guide >= min(threshold, float(np.max(guide))))
        for i in candidates[:max_candidates]:
            t_local, v_local = _refine(evaluate, *around(int(i)), step)
            if v_local >= threshold:
                i_first, t_peak = int(i), t_local
                f_max = max(f_max, v_local)
                break
    if i_first < 0:
        i_first = int(np.argmax(values >= min(threshold, float(np.max(values)))))
        t_peak = float(times[i_first])
    span = t_end - float(times[0])
    if n > 1 and times[i_first] >= t_end - edge_fraction * span:
        return FidelityPeak(f_max, t_end, t_end, True)
    return FidelityPeak(f_max, t_peak, t_end, False)
