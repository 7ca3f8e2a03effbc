"""Command-line front end.

Subcommands ``model`` and ``bound`` take flags; ``variance-scan``, ``train`` and
``meta-train`` take a strict JSON run config. Exit codes: 0 success,
2 validation error, 3 runtime error, 4 IO error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import experiments as ex
from .bounds import BoundInputs, bound_report, first_valid_gate
from .pauli_model import MODELS, DenseLimitError, build_model, exact_spectrum, model_family, semi_norm, spectral_gap
from .statevector import ENCODING_PRESETS, build_hea
from .trainer import CSV_COLUMNS, Schedule, TrainConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4
SEED_ENV = "WARMSTATE_SEED"


class ConfigError(ValueError):
    """Invalid command-line arguments or run config."""


# --------------------------------------------------------------------------
# strict config parsing


def _reject_constant(name: str):
    raise ConfigError(f"non-finite constant {name} is not allowed")


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}")
        out[k] = v
    return out


def parse_json(text: str) -> dict:
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _section(cls, raw: Any, where: str):
    """Build dataclass ``cls`` from a dict, rejecting unknown keys."""
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


@dataclass(frozen=True)
class ModelSection:
    name: str = "heisenberg_field"
    n: int = 4
    J: float = 1.0

    def __post_init__(self):
        if self.name not in MODELS:
            raise ValueError(f"unknown model {self.name!r}; choose from {sorted(MODELS)}")
        if not _is_int(self.n) or self.n < 2:
            raise ValueError("n must be an integer >= 2")
        if not _is_num(self.J):
            raise ValueError("J must be a finite number")


@dataclass(frozen=True)
class ScheduleSection:
    xs: list | None = None
    x_min: float | None = None
    x_max: float | None = None
    K: int | None = None

    def __post_init__(self):
        grid = (self.x_min, self.x_max, self.K)
        if self.xs is not None:
            if any(v is not None for v in grid):
                raise ValueError("give either xs or (x_min, x_max, K), not both")
            if not isinstance(self.xs, list) or not self.xs or not all(_is_num(v) for v in self.xs):
                raise ValueError("xs must be a non-empty list of numbers")
        else:
            if not (_is_num(self.x_min) and _is_num(self.x_max) and _is_int(self.K) and self.K >= 1):
                raise ValueError("need xs, or numeric x_min, x_max and integer K >= 1")

    def points(self) -> tuple[float, ...]:
        if self.xs is not None:
            return tuple(float(v) for v in self.xs)
        return tuple(np.linspace(self.x_min, self.x_max, self.K).tolist())


@dataclass(frozen=True)
class AnsatzSection:
    L: int = 4
    encoding: str = "default"
    rotation: str = "Z"
    reference: str = ""

    def __post_init__(self):
        if not _is_int(self.L) or self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.encoding not in ENCODING_PRESETS:
            raise ValueError(f"unknown encoding preset {self.encoding!r}; choose from {sorted(ENCODING_PRESETS)}")
        if self.rotation not in ("X", "Y", "Z"):
            raise ValueError("rotation must be X, Y or Z")
        if not isinstance(self.reference, str):
            raise ValueError("reference must be a string")


@dataclass(frozen=True)
class ScanSection:
    n_list: list = field(default_factory=lambda: [4, 6, 8])
    x1: float = 0.1
    x2: float = 0.2
    r_min: float = 1e-2
    r_max: float = math.pi
    r_points: int = 20
    samples: int = 10_000

    def __post_init__(self):
        if not isinstance(self.n_list, list) or not self.n_list or not all(_is_int(v) and v >= 2 for v in self.n_list):
            raise ValueError("n_list must be a non-empty list of integers >= 2")
        if not (_is_num(self.r_min) and _is_num(self.r_max) and 0 < self.r_min <= self.r_max):
            raise ValueError("need 0 < r_min <= r_max")
        if not _is_int(self.r_points) or self.r_points < 1:
            raise ValueError("r_points must be a positive integer")
        if not _is_int(self.samples) or self.samples < 2:
            raise ValueError("samples must be an integer >= 2")
        if not (_is_num(self.x1) and _is_num(self.x2)):
            raise ValueError("x1 and x2 must be numbers")


_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("seed", "shots"))
_TOP_KEYS = ("model", "schedule", "ansatz", "train", "noise", "seed", "output_dir", "format", "scan")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection
    schedule: ScheduleSection | None
    ansatz: AnsatzSection
    train: dict
    noise: str | int
    seed: int
    output_dir: str
    format: str
    scan: ScanSection | None

    @property
    def shots(self) -> int | None:
        return None if self.noise == "exact" else int(self.noise)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train, shots=self.shots, seed=self.seed)

    def echo(self) -> dict:
        """Resolved config; feeding it back reproduces the run."""
        out = {
            "model": asdict(self.model),
            "ansatz": asdict(self.ansatz),
            "train": dict(self.train),
            "noise": self.noise,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "format": self.format,
        }
        if self.schedule is not None:
            out["schedule"] = {k: v for k, v in asdict(self.schedule).items() if v is not None}
        if self.scan is not None:
            out["scan"] = asdict(self.scan)
        return out


def load_config(doc: dict, command: str, env: dict | None = None) -> RunConfig:
    """Validate a parsed config document for ``command``."""
    env = os.environ if env is None else env
    unknown = sorted(set(doc) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    model = _section(ModelSection, doc.get("model"), "model")
    ansatz = _section(AnsatzSection, doc.get("ansatz"), "ansatz")
    train = doc.get("train") or {}
    if not isinstance(train, dict):
        raise ConfigError("train must be an object")
    bad = sorted(set(train) - set(_TRAIN_KEYS))
    if bad:
        raise ConfigError(f"unknown key(s) in train: {', '.join(bad)}")
    noise = doc.get("noise", "exact")
    if noise != "exact" and not (_is_int(noise) and noise >= 1):
        raise ConfigError("noise must be \"exact\" or a positive integer shot count")
    seed = doc.get("seed", 0)
    if SEED_ENV in env:
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    if not _is_int(seed) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    output_dir = doc.get("output_dir")
    if not isinstance(output_dir, str) or not output_dir:
        raise ConfigError("output_dir must be a non-empty string")
    fmt = doc.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError("format must be \"csv\" or \"json\"")
    schedule = scan = None
    if command == "variance-scan":
        scan = _section(ScanSection, doc.get("scan"), "scan")
        if "schedule" in doc:
            raise ConfigError("variance-scan takes no schedule; use scan.x1 and scan.x2")
    else:
        if "scan" in doc:
            raise ConfigError(f"{command} takes no scan section")
        if "schedule" not in doc:
            raise ConfigError("schedule is required")
        schedule = _section(ScheduleSection, doc["schedule"], "schedule")
    cfg = RunConfig(model, schedule, ansatz, dict(train), noise, seed, output_dir, fmt, scan)
    try:
        cfg.train_config()
        if schedule is not None:
            Schedule("vqe_path", schedule.points())
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# --------------------------------------------------------------------------
# output


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _emit_outputs(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        _write(out_dir / name, text)


# --------------------------------------------------------------------------
# commands


def cmd_model(args: argparse.Namespace) -> int:
    if args.name not in MODELS:
        raise ConfigError(f"unknown model {args.name!r}; choose from {sorted(MODELS)}")
    try:
        H = build_model(args.name, args.n, args.x, args.J)
        spec = exact_spectrum(H)
    except DenseLimitError as exc:
        raise ConfigError(str(exc)) from exc
    eigs = spec.eigenvalues.tolist()
    if args.max_eigenvalues is not None:
        eigs = eigs[:args.max_eigenvalues]
    out = {
        "model": args.name, "n": args.n, "x": args.x, "J": args.J,
        "eigenvalues": eigs,
        "gap": spectral_gap(H),
        "semi_norm": semi_norm(H),
        "terms": [[t.coeff, t.string.letters] for t in H.terms],
    }
    print(ex.canonical_json(out), end="")
    return EXIT_OK


def cmd_bound(args: argparse.Namespace) -> int:
    first_gate: int | None = 0
    step = None
    if args.model is not None:
        if args.model not in MODELS:
            raise ConfigError(f"unknown model {args.model!r}")
        if args.n is None or args.L is None or args.x_prev is None or args.x is None:
            raise ConfigError("--model needs --n, --L, --x-prev and --x")
        family = model_family(args.model, args.n, args.J)
        ansatz = build_hea(args.n, args.L)
        gap = min(spectral_gap(family.at(args.x_prev)), spectral_gap(family.at(args.x)))
        values = dict(gap=gap, h_seminorm=semi_norm(family.at(args.x)), h1_seminorm=semi_norm(family.h1), M=ansatz.M)
        step = args.x - args.x_prev
        first_gate = first_valid_gate(ansatz)
    else:
        missing = [k for k in ("gap", "h_seminorm", "h1_seminorm", "M") if getattr(args, k) is None]
        if missing:
            raise ConfigError("without --model give --gap, --h-seminorm, --h1-seminorm and --M")
        values = dict(gap=args.gap, h_seminorm=args.h_seminorm, h1_seminorm=args.h1_seminorm, M=args.M)
        if args.x is not None and args.x_prev is not None:
            step = args.x - args.x_prev
    try:
        inputs = BoundInputs(**values, eps=args.eps, gamma=args.gamma, gamma_tilde=args.gamma_tilde)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = bound_report(inputs, r=args.r, step=step, first_gate=first_gate)
    print(ex.canonical_json(report.to_dict()), end="")
    return EXIT_OK


def _read_config(path: str, command: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    return load_config(parse_json(text), command)


def cmd_variance_scan(args: argparse.Namespace) -> int:
    cfg = _read_config(args.config, "variance-scan")
    scan = cfg.scan
    sc = ex.ScanConfig(
        x1=scan.x1, x2=scan.x2, J=cfg.model.J, layers=None, rotation=cfg.ansatz.rotation,
        reference=cfg.ansatz.reference, samples=scan.samples, seed=cfg.seed, train=cfg.train_config(),
    )
    grid = ex.default_r_grid(scan.r_points, scan.r_min, scan.r_max)
    table = ex.variance_scan(cfg.model.name, scan.n_list, grid, config=sc, workers=args.workers)
    summary: dict[str, Any] = {"rows": len(table), "r_max_by_M": ex.rmax_by_M(table)}
    try:
        summary["rmax_fit"] = asdict(ex.fit_rmax(table))
        summary["variance_decay_fit"] = asdict(ex.fit_variance_decay(table))
    except ValueError as exc:
        summary["fit_error"] = str(exc)
    echo = cfg.echo()
    rid = ex.run_id(echo)
    files = {"config.json": ex.canonical_json(echo)}
    rows = ex.scan_rows(table)
    if cfg.format == "csv":
        files["variance_scan.csv"] = ex.csv_text(ex.SCAN_COLUMNS, rows)
    else:
        summary["table"] = [dict(zip(ex.SCAN_COLUMNS, r)) for r in rows]
    files["summary.json"] = ex.canonical_json({"run_id": rid, "command": "variance-scan",
                                               "config": echo, "summary": summary})
    _emit_outputs(Path(cfg.output_dir), files)
    fit = summary.get("rmax_fit", {}).get("exponent")
    print(f"variance-scan {cfg.model.name} n={scan.n_list}: {len(table)} rows, "
          f"r_max exponent {fit}, run {rid} -> {cfg.output_dir}")
    return EXIT_OK


def _cmd_tracking(args: argparse.Namespace, mode: str) -> int:
    cfg = _read_config(args.config, "meta-train" if mode == "meta" else "train")
    sched = Schedule("meta_incremental" if mode == "meta" else "vqe_path", cfg.schedule.points())
    tc = ex.TrackingConfig(
        n=cfg.model.n, J=cfg.model.J, layers=cfg.ansatz.L, rotation=cfg.ansatz.rotation,
        reference=cfg.ansatz.reference, encoding=cfg.ansatz.encoding, train=cfg.train_config(),
    )
    result = ex.tracking_experiment(cfg.model.name, mode, sched, tc)
    echo = cfg.echo()
    rid = ex.run_id(echo)
    log = result.runlog
    files = {"config.json": ex.canonical_json(echo)}
    if cfg.format == "csv":
        files["tracking.csv"] = ex.csv_text(ex.TRACKING_COLUMNS, result.rows)
        files["runlog.csv"] = ex.csv_text(CSV_COLUMNS, log.csv_rows())
        files["reference.csv"] = ex.csv_text(("x", "e0", "e1"), result.reference_curve)
        if result.test_rows:
            files["tracking_test.csv"] = ex.csv_text(ex.TRACKING_COLUMNS, result.test_rows)
    files["runlog.json"] = ex.canonical_json(log.to_dict())
    files["summary.json"] = ex.canonical_json({"run_id": rid, "command": args.command,
                                               "config": echo, "summary": result.summary})
    _emit_outputs(Path(cfg.output_dir), files)
    b = result.summary["branches"]
    print(f"{args.command} {cfg.model.name} n={cfg.model.n}: {len(result.rows)} points, "
          f"ground={b['ground']} excited={b['excited']} neither={b['neither']}, "
          f"run {rid} -> {cfg.output_dir}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    return _cmd_tracking(args, "vqe")


def cmd_meta_train(args: argparse.Namespace) -> int:
    return _cmd_tracking(args, "meta")


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="warmstate", description="Warm-start variational ground-state tracking.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("model", help="spectrum, gap and semi-norm of a model Hamiltonian")
    m.add_argument("--name", required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--x", type=float, default=0.0)
    m.add_argument("--J", type=float, default=1.0)
    m.add_argument("--max-eigenvalues", type=int, default=None)
    m.set_defaults(func=cmd_model)

    b = sub.add_parser("bound", help="step and radius budgets and the variance lower bound")
    b.add_argument("--model", default=None)
    b.add_argument("--n", type=int)
    b.add_argument("--L", type=int)
    b.add_argument("--J", type=float, default=1.0)
    b.add_argument("--x-prev", type=float)
    b.add_argument("--x", type=float)
    b.add_argument("--gap", type=float)
    b.add_argument("--h-seminorm", type=float)
    b.add_argument("--h1-seminorm", type=float)
    b.add_argument("--M", type=int)
    b.add_argument("--eps", type=float, default=0.0)
    b.add_argument("--gamma", type=float, default=0.5)
    b.add_argument("--gamma-tilde", type=float, default=0.5)
    b.add_argument("--r", type=float, default=None)
    b.set_defaults(func=cmd_bound)

    workers_default = os.cpu_count() or 1
    for name, func, help_ in (
        ("variance-scan", cmd_variance_scan, "hypercube variance against radius"),
        ("train", cmd_train, "warm-start VQE along a path"),
        ("meta-train", cmd_meta_train, "warm-start Meta-VQE along a path"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="JSON run config")
        s.add_argument("--workers", type=int, default=workers_default)
        s.set_defaults(func=func)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError("--workers must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
