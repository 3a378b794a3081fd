"""Command-line front end: ``bosonbus <command> [flags]``.

Commands
--------
trace     fidelity trace ``t,avg_fidelity`` on ``[0, t_max]`` with step ``dt``
peak      window maximum and first peak time (one sweep-schema row)
converge  phonon-cutoff convergence study (one sweep-schema row, history on stderr)
sweep     symmetric phase diagram over ``lambda_s`` x ``omega_s``
asym      asymmetry scan along ``delta_omega`` or ``delta_lambda``
validate  cross-engine and block-equivalence suites

Settings come from three layers: built-in defaults, a ``key = value`` config
file (``--config`` or ``$BOSONBUS_CONFIG``) using the :class:`RunConfig` field
names, and command-line flags, with the later layers winning.  Only
machine-readable output goes to stdout.  Exit status is 0 on success, 1 when a
computation fails and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .fidelity import ENGINES, fidelity_trace, find_peak
from .model import ModelParams, Truncation
from .sweep import (
    ASYMMETRY_WINDOW,
    SYMMETRIC_WINDOW,
    AxisSpec,
    SweepRecord,
    SweepSettings,
    asymmetry_tasks,
    classify_region,
    converge_truncation,
    phase_diagram_tasks,
    records_to_csv,
    run_tasks,
    time_grid,
)
from .validation import run_validation

log = logging.getLogger("bosonbus")

COMMANDS = ("trace", "peak", "converge", "sweep", "asym", "validate")
CONFIG_ENV = "BOSONBUS_CONFIG"

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every setting the CLI understands; field names double as config keys.

    ``t_max`` and ``dt`` left at ``None`` pick the per-command defaults:
    a 33000 window for ``asym`` and 32000 otherwise, with ``dt = 4``.
    Leaving ``max_phonon`` unset means the cutoff is auto-converged.
    """

    command: str = "trace"
    omega_a0: float = 20.0
    omega_b0: float = 20.0
    omega: float = 1.0
    lambda_a: float = 0.8
    lambda_b: float = 0.8
    max_phonon: int | None = None
    auto_converge: bool = False
    tol: float = 1e-3
    m_start: int = 10
    m_step: int = 10
    m_cap: int = 200
    t_max: float | None = None
    dt: float | None = None
    engine: str = "direct"
    n_samples: int = 10_000
    seed: int = 0
    eps_peak: float = 1e-3
    f_lo: float = 0.9
    lambda_min: float = 0.0
    lambda_max: float = 2.0
    lambda_steps: int = 8
    omega_min: float = 0.0
    omega_max: float = 80.0
    omega_steps: int = 8
    axis: str = "delta_omega"
    deltas: str = "-1e-2,-1e-3,-1e-4,0,1e-4,1e-3,1e-2"
    checkpoint: str | None = None
    timing: bool = False
    threads: int = 0  # 0: one worker per CPU
    n_sets: int = 5
    inject_fault: str | None = None
    out: str | None = None
    heatmap: str | None = None
    report: str | None = None

    def params(self) -> ModelParams:
        return ModelParams(self.omega_a0, self.omega_b0, self.omega, self.lambda_a, self.lambda_b)

    def window(self) -> float:
        if self.t_max is not None:
            return self.t_max
        return ASYMMETRY_WINDOW if self.command == "asym" else SYMMETRIC_WINDOW

    def step(self) -> float:
        return 4.0 if self.dt is None else self.dt

    def worker_count(self) -> int:
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)

    def delta_values(self) -> list[float]:
        try:
            return [float(d) for d in self.deltas.split(",") if d.strip()]
        except ValueError as exc:
            raise UsageError(f"bad deltas list {self.deltas!r}") from exc

    def settings(self) -> SweepSettings:
        return SweepSettings(
            window=self.window(),
            dt=self.step(),
            tol=self.tol,
            m_start=self.m_start,
            m_step=self.m_step,
            m_cap=self.m_cap,
            max_phonon=self.max_phonon,
            eps_peak=self.eps_peak,
            f_lo=self.f_lo,
            engine=self.engine,
            record_timing=self.timing,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, text: str):
    kind = str(_FIELD_TYPES[key])
    text = text.strip()
    optional = "None" in kind
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("bool"):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {text!r}") from exc
    return text


def load_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in _FIELD_TYPES or key == "command":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def build_parser() -> argparse.ArgumentParser:
    # Flags default to SUPPRESS so that only options actually given on the
    # command line override the config file.
    shared = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = shared.add_argument_group("model")
    g.add_argument("--omega-a0", type=float, help="bare splitting of A (default 20)")
    g.add_argument("--omega-b0", type=float, help="bare splitting of B (default 20)")
    g.add_argument("--omega", type=float, help="boson frequency (default 1.0)")
    g.add_argument("--lambda-a", type=float, help="A-boson coupling (default 0.8)")
    g.add_argument("--lambda-b", type=float, help="B-boson coupling (default 0.8)")
    g = shared.add_argument_group("numerics")
    g.add_argument("--max-phonon", type=int, help="fixed boson cutoff M")
    g.add_argument("--auto-converge", action="store_true", help="grow M until converged (default when M unset)")
    g.add_argument("--tol", type=float, help="convergence tolerance on f_max (default 1e-3)")
    g.add_argument("--m-start", type=int, help="first cutoff tried (default 10)")
    g.add_argument("--m-step", type=int, help="cutoff increment (default 10)")
    g.add_argument("--m-cap", type=int, help="largest cutoff tried (default 200)")
    g.add_argument("--t-max", type=float, help="window end (default 32000, asym 33000)")
    g.add_argument("--dt", type=float, help="time step (default 4)")
    g.add_argument("--engine", choices=ENGINES, help="fidelity engine (default direct)")
    g.add_argument("--n-samples", type=int, help="Monte-Carlo samples per time (default 10000)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--eps-peak", type=float, help="peak tolerance below the maximum (default 1e-3)")
    g.add_argument("--f-lo", type=float, help="Region II/III fidelity threshold (default 0.9)")
    g = shared.add_argument_group("output")
    g.add_argument("--out", help="write the CSV here instead of stdout")
    g.add_argument("--heatmap", help="PGM path for sweep/asym heatmaps")
    g.add_argument("--config", help=f"config file (default ${CONFIG_ENV})")
    g.add_argument("--threads", type=int, help="worker processes (default: CPU count)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="bosonbus", description="Qubit-to-qubit transfer through a boson mode.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("trace", parents=[shared], argument_default=argparse.SUPPRESS, help="fidelity versus time")
    sub.add_parser("peak", parents=[shared], argument_default=argparse.SUPPRESS, help="maximum fidelity and first peak time")
    sub.add_parser("converge", parents=[shared], argument_default=argparse.SUPPRESS, help="phonon cutoff convergence")
    p = sub.add_parser("sweep", parents=[shared], argument_default=argparse.SUPPRESS, help="symmetric phase diagram")
    p.add_argument("--lambda-min", type=float, help="default 0")
    p.add_argument("--lambda-max", type=float, help="default 2")
    p.add_argument("--lambda-steps", type=int, help="default 8")
    p.add_argument("--omega-min", type=float, help="default 0")
    p.add_argument("--omega-max", type=float, help="default 80")
    p.add_argument("--omega-steps", type=int, help="default 8")
    p.add_argument("--checkpoint", help="JSON-lines checkpoint for resuming")
    p.add_argument("--timing", action="store_true", help="record wall times (breaks byte-identity)")
    p = sub.add_parser("asym", parents=[shared], argument_default=argparse.SUPPRESS, help="asymmetry scan around a symmetric point")
    p.add_argument("--axis", choices=("delta_omega", "delta_lambda"), help="default delta_omega")
    p.add_argument("--deltas", help="comma-separated offsets applied to the B side")
    p.add_argument("--checkpoint", help="JSON-lines checkpoint for resuming")
    p.add_argument("--timing", action="store_true", help="record wall times (breaks byte-identity)")
    p = sub.add_parser("validate", parents=[shared], argument_default=argparse.SUPPRESS, help="cross-engine checks")
    p.add_argument("--n-sets", type=int, help="random parameter sets (default 5)")
    p.add_argument("--inject-fault", choices=("rung-sign",), help="negative control")
    p.add_argument("--report", help="write the text report here instead of stderr")
    return parser


def resolve_config(argv: Sequence[str] | None = None, environ=None) -> tuple[RunConfig, bool]:
    """Merge defaults, the config file and flags; returns ``(config, verbose)``."""
    environ = os.environ if environ is None else environ
    ns = vars(build_parser().parse_args(argv))
    verbose = ns.pop("verbose", False)
    config_path = ns.pop("config", None) or environ.get(CONFIG_ENV) or None
    values = load_config_file(config_path) if config_path else {}
    if ns.pop("auto_converge", False):
        values["auto_converge"] = True
    for key, value in ns.items():
        values[key] = value
    cfg = RunConfig(**values)
    check_config(cfg)
    return cfg, verbose


def check_config(cfg: RunConfig) -> None:
    """Reject invalid combinations before anything is computed."""
    if cfg.command not in COMMANDS:
        raise UsageError(f"unknown command {cfg.command!r}")
    if cfg.max_phonon is not None and cfg.auto_converge:
        raise UsageError("--max-phonon and --auto-converge are mutually exclusive")
    if cfg.command == "converge" and cfg.max_phonon is not None:
        raise UsageError("converge chooses the cutoff itself; drop --max-phonon")
    if cfg.max_phonon is not None and cfg.max_phonon < 1:
        raise UsageError("max_phonon must be >= 1")
    if cfg.engine not in ENGINES:
        raise UsageError(f"engine must be one of {ENGINES}")
    if cfg.t_max is not None and (not math.isfinite(cfg.t_max) or cfg.t_max < 0):
        raise UsageError("t_max must be finite and >= 0")
    if cfg.dt is not None and not cfg.dt > 0:
        raise UsageError("dt must be positive")
    if cfg.command != "trace" and not cfg.window() > 0:
        raise UsageError("t_max must be positive for this command")
    for name in ("tol", "eps_peak"):
        if not getattr(cfg, name) > 0:
            raise UsageError(f"{name} must be positive")
    if cfg.m_start < 1 or cfg.m_step < 1 or cfg.m_cap < cfg.m_start:
        raise UsageError("need 1 <= m_start <= m_cap and m_step >= 1")
    if cfg.engine == "montecarlo" and cfg.n_samples < 100:
        raise UsageError("n_samples must be >= 100")
    if cfg.threads < 0 or cfg.n_sets < 1:
        raise UsageError("threads must be >= 0 and n_sets >= 1")
    if cfg.axis not in ("delta_omega", "delta_lambda"):
        raise UsageError("axis must be delta_omega or delta_lambda")
    if cfg.inject_fault not in (None, "rung-sign"):
        raise UsageError("inject_fault must be rung-sign")
    if cfg.command == "asym":
        cfg.delta_values()
    if cfg.command == "sweep":
        try:
            cfg_axes(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    try:
        cfg.params()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cfg_axes(cfg: RunConfig) -> tuple[AxisSpec, AxisSpec]:
    return (
        AxisSpec("lambda_s", cfg.lambda_min, cfg.lambda_max, cfg.lambda_steps),
        AxisSpec("omega_s", cfg.omega_min, cfg.omega_max, cfg.omega_steps),
    )


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _cutoff(cfg: RunConfig) -> tuple[int, bool]:
    """Fixed cutoff, or the converged one; returns ``(M, converged)``."""
    if cfg.max_phonon is not None:
        return cfg.max_phonon, False
    res = converge_truncation(
        cfg.params(), cfg.window(), cfg.tol, cfg.m_start, cfg.m_step, cfg.m_cap, cfg.step(), cfg.settings()
    )
    for m, f in res.history:
        log.info("M=%d f_max=%.10f", m, f)
    return res.m_used, res.converged


def cmd_trace(cfg: RunConfig) -> int:
    window = cfg.window()
    times = np.array([0.0]) if window == 0 else time_grid(window, cfg.step())
    if window == 0 and cfg.max_phonon is None:
        m = 1  # F(0) does not depend on the cutoff
    else:
        m, _ = _cutoff(cfg)
    trace = fidelity_trace(cfg.params(), Truncation(m), times, cfg.engine, cfg.n_samples, cfg.seed)
    lines = ["t,avg_fidelity"] + [f"{_fmt(t)},{_fmt(f)}" for t, f in zip(trace.times, trace.values)]
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_OK


def cmd_peak(cfg: RunConfig) -> int:
    params = cfg.params()
    m, converged = _cutoff(cfg)
    trace = fidelity_trace(params, Truncation(m), time_grid(cfg.window(), cfg.step()), cfg.engine,
                           cfg.n_samples, cfg.seed)
    peak = find_peak(trace, cfg.eps_peak)
    record = SweepRecord(params, m, converged, peak.f_max, peak.t_peak, peak.window_bound, "n/a")
    record.region = classify_region(record, cfg.f_lo)
    _emit(records_to_csv([record]), cfg.out)
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    params = cfg.params()
    res = converge_truncation(
        params, cfg.window(), cfg.tol, cfg.m_start, cfg.m_step, cfg.m_cap, cfg.step(), cfg.settings()
    )
    for m, f in res.history:
        print(f"M={m} f_max={f!r}", file=sys.stderr)
    peak = res.peak
    record = SweepRecord(params, res.m_used, res.converged, peak.f_max, peak.t_peak, peak.window_bound, "n/a")
    record.region = classify_region(record, cfg.f_lo)
    _emit(records_to_csv([record]), cfg.out)
    return EXIT_OK if res.converged else EXIT_COMPUTE


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    """Write a 2-d array of grey levels in [0, 1] as binary PGM (P5)."""
    grid = np.nan_to_num(np.clip(np.asarray(values, dtype=float), 0.0, 1.0), nan=0.0)
    h, w = grid.shape
    pixels = np.rint(grid * 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def heatmap_levels(records: Sequence[SweepRecord], rows: int, cols: int, window: float):
    """Grey levels with omega_s descending down the rows, lambda ascending across.

    Fidelity maps linearly from [0, 1]; peak time on ``log10(1 + t)`` over
    ``[0, log10(1 + window)]``.
    """
    f = np.array([r.f_max for r in records], dtype=float).reshape(rows, cols)[::-1]
    t = np.array([r.t_peak for r in records], dtype=float).reshape(rows, cols)[::-1]
    t_level = np.log10(1.0 + np.maximum(t, 0.0)) / math.log10(1.0 + window)
    return f, t_level


def _plot_script(csv_path: str, x_col: int, y_col: int | None, x_label: str) -> str:
    if y_col is None:
        body = (
            f"set xlabel '{x_label}'\nset ylabel 'f_max'\n"
            f"plot '{csv_path}' every ::1 using {x_col}:8 with linespoints title 'f_max'\n"
        )
    else:
        body = (
            f"set xlabel '{x_label}'\nset ylabel 'omega_s'\nset cblabel 'f_max'\n"
            f"plot '{csv_path}' every ::1 using {x_col}:{y_col}:8 with image title ''\n"
        )
    return "# gnuplot script\nset datafile separator ','\n" + body


def _write_heatmaps(cfg: RunConfig, records: Sequence[SweepRecord], rows: int, cols: int,
                    x_col: int, y_col: int | None, x_label: str) -> None:
    base = Path(cfg.heatmap)
    stem = base.with_suffix("")
    f, t = heatmap_levels(records, rows, cols, cfg.window())
    write_pgm(f, base)
    write_pgm(t, stem.with_name(stem.name + "_tpeak.pgm"))
    csv_ref = cfg.out or "sweep.csv"
    stem.with_name(stem.name + "_plot.gp").write_text(_plot_script(csv_ref, x_col, y_col, x_label))


def _finish_sweep(cfg: RunConfig, records) -> int:
    if any(r is None for r in records):
        print("sweep incomplete", file=sys.stderr)
        return EXIT_COMPUTE
    _emit(records_to_csv(records, cfg.timing), cfg.out)
    failed = [r for r in records if r.error is not None]
    for r in failed:
        print(f"failed point {r.params}: {r.error}", file=sys.stderr)
    return EXIT_COMPUTE if failed else EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    lam, om = cfg_axes(cfg)
    tasks = phase_diagram_tasks(lam, om, cfg.omega)
    records = run_tasks(tasks, cfg.settings(), cfg.worker_count(), cfg.checkpoint)
    code = _finish_sweep(cfg, records)
    if cfg.heatmap and all(r is not None for r in records):
        _write_heatmaps(cfg, records, om.steps, lam.steps, 1, 3, "lambda_s")
    return code


def cmd_asym(cfg: RunConfig) -> int:
    tasks = asymmetry_tasks(cfg.params(), cfg.axis, cfg.delta_values())
    records = run_tasks(tasks, cfg.settings(), cfg.worker_count(), cfg.checkpoint)
    code = _finish_sweep(cfg, records)
    if cfg.heatmap and all(r is not None for r in records):
        x_col = 4 if cfg.axis == "delta_omega" else 2
        _write_heatmaps(cfg, records, 1, len(records), x_col, None, cfg.axis.replace("delta", "B side"))
    return code


def cmd_validate(cfg: RunConfig) -> int:
    report = run_validation(
        n_sets=cfg.n_sets,
        seed=cfg.seed,
        max_phonon=cfg.max_phonon or 8,
        n_samples=cfg.n_samples,
        inject_fault=cfg.inject_fault,
    )
    if cfg.report:
        Path(cfg.report).write_text(report.text())
    else:
        sys.stderr.write(report.text())
    _emit(report.table_csv(), cfg.out)
    return EXIT_OK if report.passed else EXIT_COMPUTE


HANDLERS = {
    "trace": cmd_trace,
    "peak": cmd_peak,
    "converge": cmd_converge,
    "sweep": cmd_sweep,
    "asym": cmd_asym,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg, verbose = resolve_config(argv)
    except SystemExit as exc:  # argparse: --help exits 0, errors exit 2
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"bosonbus: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[cfg.command](cfg)
    except Exception as exc:
        print(f"bosonbus: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
