"""Truncation convergence, phase diagrams and asymmetry scans.

Every grid point is an independent task.  Tasks run in a process pool with
BLAS pinned to one thread, and rows are written in task order, so the CSV is
byte-identical for any worker count.  Progress can be checkpointed to a
JSON-lines file and resumed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .fidelity import FidelityPeak, fidelity_trace, find_peak
from .model import ModelParams, Truncation

log = logging.getLogger(__name__)

__all__ = [
    "CSV_HEADER",
    "AXES",
    "AxisSpec",
    "SweepGrid",
    "SweepSettings",
    "SweepRecord",
    "ConvergenceResult",
    "CheckpointError",
    "converge_truncation",
    "classify_region",
    "evaluate_point",
    "phase_diagram_tasks",
    "asymmetry_tasks",
    "run_tasks",
    "phase_diagram",
    "asymmetry_scan",
    "records_to_csv",
    "time_grid",
]

CSV_HEADER = (
    "lambda_a,lambda_b,omega_a0,omega_b0,omega,m_used,converged,"
    "f_max,t_peak,window_bound,region,wall_time_s"
)
AXES = ("lambda_s", "omega_s", "delta_lambda", "delta_omega")

SYMMETRIC_WINDOW = 32_000.0
ASYMMETRY_WINDOW = 33_000.0


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _bool(b: bool) -> str:
    return "true" if b else "false"


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"bad boolean {s!r}")
    return s == "true"


def time_grid(window: float, dt: float) -> np.ndarray:
    """Uniform grid on ``[0, window]`` that includes both end points."""
    if window <= 0 or dt <= 0:
        raise ValueError("window and dt must be positive")
    n = int(round(window / dt))
    return np.linspace(0.0, window, max(n, 1) + 1)


@dataclass(frozen=True)
class AxisSpec:
    name: str
    min: float
    max: float
    steps: int

    def __post_init__(self) -> None:
        if self.name not in AXES:
            raise ValueError(f"unknown axis {self.name!r}; choose from {AXES}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.min > self.max:
            raise ValueError(f"axis {self.name}: min > max")

    def values(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.min])
        return np.linspace(self.min, self.max, self.steps)


@dataclass(frozen=True)
class SweepGrid:
    axes: tuple[AxisSpec, ...]
    window: float = SYMMETRIC_WINDOW
    base: ModelParams | None = None

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError("window must be positive")


@dataclass(frozen=True)
class SweepSettings:
    """Per-point numerical settings shared by all tasks of a sweep."""

    window: float = SYMMETRIC_WINDOW
    dt: float = 4.0
    tol: float = 1e-3
    m_start: int = 10
    m_step: int = 10
    m_cap: int = 200
    max_phonon: int | None = None  # fixed truncation instead of auto-converge
    eps_peak: float = 1e-3
    f_lo: float = 0.9
    engine: str = "direct"
    record_timing: bool = False


@dataclass
class SweepRecord:
    params: ModelParams
    m_used: int
    converged: bool
    f_max: float
    t_peak: float
    window_bound: bool
    region: str
    wall_time: float = 0.0
    error: str | None = field(default=None, compare=False)

    def csv_row(self, record_timing: bool = False) -> str:
        p = self.params
        wall = self.wall_time if record_timing else 0.0
        return ",".join(
            [
                _fmt(p.lambda_a),
                _fmt(p.lambda_b),
                _fmt(p.omega_a0),
                _fmt(p.omega_b0),
                _fmt(p.omega),
                str(self.m_used),
                _bool(self.converged),
                _fmt(self.f_max),
                _fmt(self.t_peak),
                _bool(self.window_bound),
                self.region,
                _fmt(wall),
            ]
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "SweepRecord":
        parts = row.strip().split(",")
        if len(parts) != 12:
            raise ValueError(f"expected 12 fields, got {len(parts)}")
        la, lb, wa, wb, w = (float(x) for x in parts[:5])
        return cls(
            params=ModelParams(wa, wb, w, la, lb),
            m_used=int(parts[5]),
            converged=_parse_bool(parts[6]),
            f_max=float(parts[7]),
            t_peak=float(parts[8]),
            window_bound=_parse_bool(parts[9]),
            region=parts[10],
            wall_time=float(parts[11]),
        )


@dataclass
class ConvergenceResult:
    m_used: int
    converged: bool
    history: list[tuple[int, float]]
    peak: FidelityPeak


def _peak_at(params: ModelParams, m: int, times: np.ndarray, settings: SweepSettings) -> FidelityPeak:
    trace = fidelity_trace(params, Truncation(m), times, engine=settings.engine)
    return find_peak(trace, settings.eps_peak)


def converge_truncation(
    params: ModelParams,
    window: float = SYMMETRIC_WINDOW,
    tol: float = 1e-3,
    m_start: int = 10,
    m_step: int = 10,
    m_cap: int = 200,
    dt: float = 4.0,
    settings: SweepSettings | None = None,
) -> ConvergenceResult:
    """Grow the phonon cutoff until the window maximum stops changing.

    ``M`` runs over ``m_start, m_start + m_step, ...``.  The first ``M`` with
    ``|f(M) - f(M + step)| < tol`` and ``|f(M + step) - f(M + 2 step)| < tol``
    is returned as ``m_used`` together with its peak.  Hitting ``m_cap`` first
    returns the last ``M`` tried with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m_step < 1 or m_start < 1:
        raise ValueError("m_start and m_step must be >= 1")
    settings = settings or SweepSettings(window=window, dt=dt, tol=tol)
    times = time_grid(window, dt)
    if params.lambda_a == 0 and params.lambda_b == 0:
        # The boson is never excited; one phonon level is exact.
        peak = _peak_at(params, 1, times, settings)
        return ConvergenceResult(1, True, [(1, peak.f_max)], peak)
    history: list[tuple[int, float]] = []
    peaks: list[FidelityPeak] = []
    m = m_start
    while m <= m_cap:
        peak = _peak_at(params, m, times, settings)
        history.append((m, peak.f_max))
        peaks.append(peak)
        if len(history) >= 3:
            f0, f1, f2 = (h[1] for h in history[-3:])
            if abs(f0 - f1) < tol and abs(f1 - f2) < tol:
                return ConvergenceResult(history[-3][0], True, history, peaks[-3])
        m += m_step
    log.warning("truncation did not converge below M=%d for %s", m_cap, params)
    return ConvergenceResult(history[-1][0], False, history, peaks[-1])


def classify_region(record: SweepRecord, f_lo: float = 0.9) -> str:
    """Region I: window-bound; II: finite peak but low fidelity; III: the rest."""
    if record.window_bound:
        return "I"
    if not record.f_max >= f_lo:
        return "II"
    return "III"


def evaluate_point(params: ModelParams, settings: SweepSettings) -> SweepRecord:
    """Compute one grid point; failures are captured in the record."""
    start = time.perf_counter()
    try:
        if settings.max_phonon is not None:
            times = time_grid(settings.window, settings.dt)
            peak = _peak_at(params, settings.max_phonon, times, settings)
            m_used, converged = settings.max_phonon, False
        else:
            res = converge_truncation(
                params,
                settings.window,
                settings.tol,
                settings.m_start,
                settings.m_step,
                settings.m_cap,
                settings.dt,
                settings,
            )
            peak, m_used, converged = res.peak, res.m_used, res.converged
        record = SweepRecord(
            params, m_used, converged, peak.f_max, peak.t_peak, peak.window_bound, "n/a"
        )
        record.region = classify_region(record, settings.f_lo)
    except Exception as exc:  # recorded in-row, the sweep goes on
        log.error("point %s failed: %s", params, exc)
        record = SweepRecord(params, 0, False, math.nan, math.nan, False, "n/a", error=str(exc))
    record.wall_time = time.perf_counter() - start
    return record


def _run_one(args: tuple[ModelParams, SweepSettings]) -> SweepRecord:
    params, settings = args
    with threadpool_limits(1):
        return evaluate_point(params, settings)


def phase_diagram_tasks(lambda_axis: AxisSpec, omega_axis: AxisSpec, omega: float = 1.0) -> list[ModelParams]:
    """Symmetric points, omega_s outer and lambda_s inner (row-major)."""
    if lambda_axis.name != "lambda_s" or omega_axis.name != "omega_s":
        raise ValueError("phase diagram needs a lambda_s and an omega_s axis")
    return [
        ModelParams.symmetric(float(ws), float(ls), omega)
        for ws in omega_axis.values()
        for ls in lambda_axis.values()
    ]


def asymmetry_tasks(base: ModelParams, axis: str, deltas: Iterable[float]) -> list[ModelParams]:
    """Apply each delta to the B-side parameter of ``base``."""
    if axis == "delta_omega":
        return [base.replace(omega_b0=base.omega_b0 + float(d)) for d in deltas]
    if axis == "delta_lambda":
        return [base.replace(lambda_b=base.lambda_b + float(d)) for d in deltas]
    raise ValueError(f"asymmetry axis must be delta_omega or delta_lambda, got {axis!r}")


class CheckpointError(RuntimeError):
    pass


def _fingerprint(tasks: Sequence[ModelParams], settings: SweepSettings) -> str:
    payload = {
        "tasks": [p.as_tuple() for p in tasks],
        "settings": {k: v for k, v in asdict(settings).items()},
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _load_checkpoint(path: Path, fingerprint: str, n_tasks: int) -> dict[int, str]:
    data = path.read_bytes()
    if not data:
        raise CheckpointError(f"corrupted checkpoint {path} at byte offset 0 (line 1): empty file")
    rows: dict[int, str] = {}
    offset = 0
    for lineno, raw in enumerate(data.splitlines(keepends=True), start=1):
        try:
            if not raw.endswith(b"\n"):
                raise ValueError("truncated line")
            entry = json.loads(raw)
            if lineno == 1:
                if entry.get("fingerprint") != fingerprint or entry.get("n_tasks") != n_tasks:
                    raise CheckpointError(
                        f"checkpoint {path} belongs to a different sweep "
                        "(grid or settings changed); refusing to resume"
                    )
            else:
                index, row = int(entry["index"]), str(entry["row"])
                if not 0 <= index < n_tasks:
                    raise ValueError(f"task index {index} out of range")
                SweepRecord.from_csv_row(row)
                rows[index] = row
        except CheckpointError:
            raise
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CheckpointError(
                f"corrupted checkpoint {path} at byte offset {offset} (line {lineno}): {exc}"
            ) from exc
        offset += len(raw)
    return rows


def _write_checkpoint(path: Path, fingerprint: str, n_tasks: int, rows: dict[int, str]) -> None:
    lines = [json.dumps({"fingerprint": fingerprint, "n_tasks": n_tasks})]
    lines += [json.dumps({"index": i, "row": rows[i]}) for i in sorted(rows)]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def run_tasks(
    tasks: Sequence[ModelParams],
    settings: SweepSettings,
    threads: int = 1,
    checkpoint: str | Path | None = None,
    limit: int | None = None,
) -> list[SweepRecord | None]:
    """Evaluate all tasks, in task order; ``None`` marks points not yet run.

    ``limit`` stops after that many newly computed points, which leaves a
    partial checkpoint behind (used to exercise resume).
    """
    n = len(tasks)
    fingerprint = _fingerprint(tasks, settings)
    ckpt = Path(checkpoint) if checkpoint is not None else None
    rows: dict[int, str] = {}
    if ckpt is not None and ckpt.exists():
        rows = _load_checkpoint(ckpt, fingerprint, n)
        log.info("resuming: %d of %d points already done", len(rows), n)
    records: dict[int, SweepRecord] = {i: SweepRecord.from_csv_row(r) for i, r in rows.items()}
    todo = [i for i in range(n) if i not in rows]
    if limit is not None:
        todo = todo[:limit]

    def store(i: int, rec: SweepRecord) -> None:
        records[i] = rec
        rows[i] = rec.csv_row(settings.record_timing)
        if ckpt is not None:
            _write_checkpoint(ckpt, fingerprint, n, rows)

    if todo:
        jobs = [(tasks[i], settings) for i in todo]
        if threads <= 1:
            for i, job in zip(todo, jobs):
                store(i, _run_one(job))
        else:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for i, rec in zip(todo, pool.map(_run_one, jobs)):
                    store(i, rec)
    elif ckpt is not None and not ckpt.exists():
        _write_checkpoint(ckpt, fingerprint, n, rows)
    return [records.get(i) for i in range(n)]


def records_to_csv(records: Iterable[SweepRecord | None], record_timing: bool = False) -> str:
    lines = [CSV_HEADER]
    for rec in records:
        if rec is None:
            raise ValueError("sweep is incomplete")
        lines.append(rec.csv_row(record_timing))
    return "\n".join(lines) + "\n"


def phase_diagram(
    lambda_axis: AxisSpec,
    omega_axis: AxisSpec,
    settings: SweepSettings | None = None,
    threads: int = 1,
    checkpoint: str | Path | None = None,
) -> list[SweepRecord]:
    settings = settings or SweepSettings()
    tasks = phase_diagram_tasks(lambda_axis, omega_axis)
    return run_tasks(tasks, settings, threads, checkpoint)  # type: ignore[return-value]


def asymmetry_scan(
    base: ModelParams,
    axis: str,
    deltas: Sequence[float],
    settings: SweepSettings | None = None,
    threads: int = 1,
    checkpoint: str | Path | None = None,
) -> list[SweepRecord]:
    settings = settings or SweepSettings(window=ASYMMETRY_WINDOW)
    tasks = asymmetry_tasks(base, axis, deltas)
    return run_tasks(tasks, settings, threads, checkpoint)  # type: ignore[return-value]
