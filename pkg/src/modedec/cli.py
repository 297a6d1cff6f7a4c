"""Command-line interface: ingest sampled signals, run decompositions, emit reports.

Two commands are installed: ``decompose`` fits a signal file and writes a JSON
report plus a radius-vs-count CSV curve; ``synth`` generates sampled signals
from a known source list (with a ground-truth sidecar) for benchmarking.

Exit codes: 0 success, 1 configuration or input error, 2 numeric failure or
undetermined source count.
"""

from __future__ import annotations

import argparse
import importlib
import json
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .conical import ConicalPoint
from .model import (
    COMPLEX,
    REAL,
    MeasurementGrid,
    Observation,
    SignalModel,
    evaluate_S,
    fourier_model,
    spectral_model,
)
from .multiset import SourceMultiset
from .solver import (
    InitBox,
    SolverConfig,
    SolverNumericError,
    solve_jp,
    solve_kp_greedy,
)

REPORT_SCHEMA = "modedec-report-v1"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class ConfigError(Exception):
    """Bad configuration or unreadable/malformed input."""


@dataclass
class RunConfig:
    input: str = ""
    out: str = ""
    curve: str = ""
    model: str = "spectral"
    max_harmonic: int = 3
    strategy: str = "jp"
    beta: float = 1.0
    max_sources: int = 4
    restarts: int = 16
    max_iterations: int = 300
    gradient_tol: float = 1e-12
    step_init: float = 1.0
    seed: int = 0
    knee_ratio: float = 10.0
    vanish_tol: float = 1e-8
    a_min: Optional[float] = None
    a_max: Optional[float] = None
    b_min: Optional[float] = None
    b_max: Optional[float] = None
    threads: int = 1
    format: str = "json"
    dry_run: bool = False


_FILE_KEYS = {f.name: f.type for f in fields(RunConfig) if f.name != "dry_run"}


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def parse_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment; unknown keys are errors."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: str):
    target = _FILE_KEYS[key]
    try:
        if target is int or target == "int":
            return int(value)
        if target is float or target == "float" or "float" in str(target):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    return value


def load_signal(path: str) -> tuple[MeasurementGrid, Observation]:
    """Read a sampled signal from CSV (columns x, re[, im]) or a JSON record list."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input file not found: {path}")
    text = p.read_text()
    if not text.strip():
        raise ConfigError(f"{path}: no samples")
    if p.suffix.lower() == ".json" or text.lstrip().startswith("["):
        return _load_signal_json(path, text)
    return _load_signal_csv(path, text)


def _load_signal_json(path: str, text: str) -> tuple[MeasurementGrid, Observation]:
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list) or not records:
        raise ConfigError(f"{path}: no samples")
    xs, values = [], []
    is_complex = any(isinstance(rec.get("z"), (list, tuple)) for rec in records)
    for i, rec in enumerate(records, start=1):
        if not isinstance(rec, dict) or "x" not in rec or "z" not in rec:
            raise ConfigError(f"{path}: record {i}: expected {{'x': ..., 'z': ...}}")
        try:
            x = float(rec["x"])
            z = rec["z"]
            if isinstance(z, (list, tuple)):
                if len(z) != 2:
                    raise ValueError("complex z needs [re, im]")
                zv = complex(float(z[0]), float(z[1]))
            else:
                zv = complex(float(z), 0.0) if is_complex else float(z)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: record {i}: {exc}") from exc
        if not (math.isfinite(x) and np.isfinite(zv)):
            raise ConfigError(f"{path}: record {i}: non-finite value")
        xs.append(x)
        values.append(zv)
    kind = COMPLEX if is_complex else REAL
    grid = MeasurementGrid(np.asarray(xs), value_kind=kind)
    return grid, Observation.from_values(np.asarray(values), kind)


def _load_signal_csv(path: str, text: str) -> tuple[MeasurementGrid, Observation]:
    lines = text.splitlines()
    header = [name.strip().lower() for name in lines[0].split(",")]
    if "x" not in header or "re" not in header:
        raise ConfigError(f"{path}: header must name columns x, re[, im]")
    ix, ire = header.index("x"), header.index("re")
    iim = header.index("im") if "im" in header else None
    xs, values = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != len(header):
            raise ConfigError(
                f"{path}: line {lineno}: expected {len(header)} columns, got {len(parts)}"
            )
        try:
            x = float(parts[ix])
            re = float(parts[ire])
            im = float(parts[iim]) if iim is not None else 0.0
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: {exc}") from exc
        if not (math.isfinite(x) and math.isfinite(re) and math.isfinite(im)):
            raise ConfigError(f"{path}: line {lineno}: non-finite value")
        xs.append(x)
        values.append(complex(re, im) if iim is not None else re)
    if not xs:
        raise ConfigError(f"{path}: no samples")
    kind = COMPLEX if iim is not None else REAL
    grid = MeasurementGrid(np.asarray(xs), value_kind=kind)
    return grid, Observation.from_values(np.asarray(values), kind)


def build_model(name: str, beta: float, max_harmonic: int) -> SignalModel:
    if name == "spectral":
        return spectral_model(beta=beta)
    if name == "fourier":
        return fourier_model(max_harmonic, beta=beta)
    if ":" in name:
        mod_name, _, attr = name.partition(":")
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load model plugin {name!r}: {exc}") from exc
        try:
            model = factory(beta=beta)
        except TypeError:
            model = factory()
        if not isinstance(model, SignalModel):
            raise ConfigError(f"model plugin {name!r} did not produce a SignalModel")
        return model
    raise ConfigError(f"unknown model {name!r} (use spectral, fourier, or module:factory)")


def parse_source_list(text: str, value_kind: str) -> list[ConicalPoint]:
    """Parse 'amp@loc;amp@loc;...' with complex amplitudes written with i."""
    points = []
    for token in text.split(";"):
        token = token.strip()
        if not token:
            continue
        if "@" not in token:
            raise ConfigError(f"source {token!r}: expected amplitude@location")
        amp_text, loc_text = token.split("@", 1)
        try:
            amp = complex(amp_text.replace(" ", "").replace("i", "j"))
            loc = float(loc_text)
        except ValueError as exc:
            raise ConfigError(f"source {token!r}: {exc}") from exc
        if value_kind == COMPLEX:
            points.append(ConicalPoint((amp.real, amp.imag), (loc,)))
        else:
            points.append(ConicalPoint((amp.real,), (loc,)))
    if not points:
        raise ConfigError("no sources given")
    return points


def generate_synthetic(
    model: SignalModel,
    grid: MeasurementGrid,
    sources: SourceMultiset,
    sigma: float,
    seed: int,
    path: str,
) -> tuple[str, str]:
    """Write a sampled signal CSV plus a ground-truth sidecar JSON.

    Gaussian noise of scale ``sigma`` is added independently to every stored
    real component; sigma 0 round-trips the forward evaluation exactly.
    """
    obs = evaluate_S(model, grid, sources)
    z = np.array(obs.z)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        z = z + sigma * rng.standard_normal(len(z))
    lines = []
    if model.value_kind == COMPLEX:
        lines.append("x,re,im")
        for x, re, im in zip(grid.points, z[0::2], z[1::2]):
            lines.append(f"{_fmt17(x)},{_fmt17(re)},{_fmt17(im)}")
    else:
        lines.append("x,re")
        for x, re in zip(grid.points, z):
            lines.append(f"{_fmt17(x)},{_fmt17(re)}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    sidecar = {
        "model": model.name,
        "value_kind": model.value_kind,
        "beta": model.space.beta,
        "sigma": sigma,
        "seed": seed,
        "grid": [float(x) for x in np.ravel(grid.points)],
        "sources": [{"a": list(p.a), "b": list(p.b)} for p in sources],
    }
    sidecar_path = path + ".truth.json"
    Path(sidecar_path).write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return path, sidecar_path


def load_truth_sidecar(path: str, space) -> SourceMultiset:
    data = json.loads(Path(path).read_text())
    points = [ConicalPoint(tuple(rec["a"]), tuple(rec["b"])) for rec in data["sources"]]
    return SourceMultiset.of(points, space)


def report_to_dict(report, config: RunConfig) -> dict:
    rows = []
    for row in report.per_count:
        rows.append(
            {
                "count": row.count,
                "local_radius": row.local_radius,
                "sq_residual": row.sq_residual,
                "solve_sq_residual": row.solve_sq_residual,
                "iterations": row.iterations,
                "converged": row.converged,
                "error": row.error,
                "sources": None
                if row.sources is None
                else [{"a": list(p.a), "b": list(p.b)} for p in row.sources],
            }
        )
    cfg_echo = {k: getattr(config, k) for k in _FILE_KEYS}
    return {
        "schema": REPORT_SCHEMA,
        "strategy": report.strategy,
        "detected_count": report.detected_count,
        "per_count": rows,
        "warnings": list(report.warnings),
        "diagnostics": report.diagnostics,
        "config": cfg_echo,
    }


def write_report(report, config: RunConfig) -> None:
    payload = json.dumps(report_to_dict(report, config), sort_keys=True, indent=2) + "\n"
    try:
        Path(config.out).write_text(payload)
    except OSError as exc:
        raise ConfigError(f"cannot write {config.out}: {exc}") from exc


def write_curve(report, path: str) -> None:
    lines = ["n,local_radius,squared_residual"]
    for row in report.per_count:
        lines.append(f"{row.count},{_fmt17(row.local_radius)},{_fmt17(row.sq_residual)}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def _solver_config(config: RunConfig) -> SolverConfig:
    box = InitBox(
        a_low=-2.0 if config.a_min is None else config.a_min,
        a_high=2.0 if config.a_max is None else config.a_max,
        b_low=config.b_min,
        b_high=config.b_max,
    )
    threads = config.threads
    env = os.environ.get("DECOMPOSE_THREADS")
    if env:
        try:
            threads = max(1, min(threads, int(env)))
        except ValueError as exc:
            raise ConfigError(f"DECOMPOSE_THREADS: {exc}") from exc
    return SolverConfig(
        max_sources=config.max_sources,
        restarts=config.restarts,
        max_iterations=config.max_iterations,
        gradient_tol=config.gradient_tol,
        step_init=config.step_init,
        seed=config.seed,
        init_box=box,
        knee_ratio=config.knee_ratio,
        vanish_tol=config.vanish_tol,
        threads=threads,
    )


def run(config: RunConfig) -> int:
    """Execute one decomposition run; returns the process exit code."""
    try:
        if not config.input:
            raise ConfigError("--input is required")
        if config.strategy not in ("jp", "kp-up", "kp-down"):
            raise ConfigError(f"unknown strategy {config.strategy!r}")
        if config.format not in ("json", "csv"):
            raise ConfigError(f"unknown format {config.format!r}")
        model = build_model(config.model, config.beta, config.max_harmonic)
        grid, obs = load_signal(config.input)
        if grid.value_kind == REAL and model.value_kind == COMPLEX:
            # promote a real recording for a complex model; imaginary parts are zero
            grid = MeasurementGrid(grid.points, value_kind=COMPLEX)
            obs = Observation.from_values(obs.z.astype(complex), COMPLEX)
        elif grid.value_kind == COMPLEX and model.value_kind == REAL:
            raise ConfigError("input has an im column but the model is real-valued")
        cfg = _solver_config(config)
        if not config.dry_run and not config.out:
            raise ConfigError("--out is required unless --dry-run")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if config.dry_run:
        print(
            f"dry run ok: {grid.n_points} samples ({grid.value_kind}), "
            f"model {model.name}, strategy {config.strategy}"
        )
        return EXIT_OK

    try:
        if config.strategy == "jp":
            report = solve_jp(model, grid, obs, cfg)
        else:
            direction = "up" if config.strategy == "kp-up" else "down"
            report = solve_kp_greedy(model, grid, obs, cfg, direction=direction)
    except SolverNumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    try:
        write_report(report, config)
        if config.curve:
            write_curve(report, config.curve)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    detected = report.detected_count
    if detected >= 1:
        final = report.per_count[detected - 1].local_radius
        print(f"detected {detected} source(s); local radius {final:.6g}")
    else:
        print("source count undetermined; see the radius curve")
    failed = any(row.error for row in report.per_count)
    if failed or not (1 <= detected <= cfg.max_sources):
        return EXIT_NUMERIC
    return EXIT_OK


def _add_decompose_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    parser.add_argument("--model", help="spectral | fourier | module:factory")
    parser.add_argument("--max-harmonic", type=int, dest="max_harmonic")
    parser.add_argument("--strategy", choices=["jp", "kp-up", "kp-down"])
    parser.add_argument("--max-sources", type=int, dest="max_sources")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--restarts", type=int)
    parser.add_argument("--max-iterations", type=int, dest="max_iterations")
    parser.add_argument("--gradient-tol", type=float, dest="gradient_tol")
    parser.add_argument("--step-init", type=float, dest="step_init")
    parser.add_argument("--knee-ratio", type=float, dest="knee_ratio")
    parser.add_argument("--vanish-tol", type=float, dest="vanish_tol")
    parser.add_argument("--a-min", type=float, dest="a_min")
    parser.add_argument("--a-max", type=float, dest="a_max")
    parser.add_argument("--b-min", type=float, dest="b_min")
    parser.add_argument("--b-max", type=float, dest="b_max")
    parser.add_argument("--threads", type=int)
    parser.add_argument("--input")
    parser.add_argument("--out")
    parser.add_argument("--curve")
    parser.add_argument("--format", choices=["json", "csv"])
    parser.add_argument("--dry-run", action="store_true", dest="dry_run")


def decompose_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="decompose",
        description="Decompose a sampled signal into nonlinear modes with unknown count.",
    )
    _add_decompose_args(parser)
    args = parser.parse_args(argv)

    config = RunConfig()
    try:
        if args.config:
            for key, value in parse_config_file(args.config).items():
                setattr(config, key, _coerce(key, value))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key in list(_FILE_KEYS) + ["dry_run"]:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            setattr(config, key, value)
    return run(config)


def synth_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="synth",
        description="Generate a sampled signal from known sources, with a truth sidecar.",
    )
    parser.add_argument("--sources", required=True, help="e.g. '1+0i@0.30;0.8+0i@0.31'")
    parser.add_argument("--model", default="spectral", help="spectral | fourier | module:factory")
    parser.add_argument("--max-harmonic", type=int, default=3, dest="max_harmonic")
    parser.add_argument("--beta", type=float, default=1.0)
    parser.add_argument("--samples", type=int, default=16)
    parser.add_argument("--start", type=float, default=0.0)
    parser.add_argument("--step", type=float, default=1.0)
    parser.add_argument("--sigma", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    try:
        if args.samples < 1:
            raise ConfigError("--samples must be >= 1")
        if args.sigma < 0:
            raise ConfigError("--sigma must be >= 0")
        model = build_model(args.model, args.beta, args.max_harmonic)
        points = parse_source_list(args.sources, model.value_kind)
        sources = SourceMultiset.of(points, model.space)
        xs = args.start + args.step * np.arange(args.samples)
        grid = MeasurementGrid(xs, value_kind=model.value_kind)
        csv_path, sidecar = generate_synthetic(
            model, grid, sources, args.sigma, args.seed, args.out
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {csv_path} and {sidecar}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(decompose_main())
