"""Experiment drivers: hypercube variance estimates, closed-form hypercube
averages, radius scans with power-law fits, bound checks and path tracking.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .bounds import (
    EPS_MAX,
    BoundInputs,
    first_valid_gate,
    h_exact,
    k_minus,
    k_plus,
    max_radius_vqe,
    max_step_vqe,
    move_gate_first,
    variance_bound_vqe,
)
from .losses import NoiseStream, exact_loss_batch
from .pauli_model import PauliSum, exact_spectrum, model_family, semi_norm, spectral_gap
from .statevector import Ansatz, apply_fixed, apply_pauli, build_hea, build_meta_ansatz, expectation_batch
from .trainer import (
    RunLog,
    Schedule,
    TrainConfig,
    select_reference,
    warm_start_meta,
    warm_start_vqe,
)

MAX_ENUMERATION_GATES = 12
_KEY_SCAN = 11
_KEY_BOUND = 12
_CHUNK = 2048


# --------------------------------------------------------------------------
# Monte-Carlo moments


@dataclass(frozen=True)
class HypercubeMoments:
    mean: float
    mean_se: float
    var: float
    var_se: float
    samples: int


def _moments(values: np.ndarray) -> HypercubeMoments:
    n = values.size
    mean = float(values.mean())
    dev = values - mean
    var = float(np.sum(dev ** 2) / (n - 1))
    m4 = float(np.mean(dev ** 4))
    # Var(s^2) ~ (mu4 - (n-3)/(n-1) sigma^4) / n
    var_var = max((m4 - (n - 3) / (n - 1) * var ** 2) / n, 0.0)
    return HypercubeMoments(mean, math.sqrt(var / n), var, math.sqrt(var_var), n)


def hypercube_moments(
    loss: Callable[[np.ndarray], np.ndarray],
    theta_star: np.ndarray,
    r: float,
    samples: int,
    stream: NoiseStream,
    unit_draws: np.ndarray | None = None,
) -> HypercubeMoments:
    """Mean and variance (with standard errors) of a batched loss over the hypercube.

    ``unit_draws`` (shape ``(samples, M)``, entries in [-1, 1]) may be supplied
    to reuse the same random numbers across radii.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    theta_star = np.asarray(theta_star, dtype=float)
    if unit_draws is None:
        unit_draws = stream.next_generator().uniform(-1.0, 1.0, size=(samples, theta_star.size))
    values = np.concatenate([
        np.asarray(loss(theta_star + r * unit_draws[lo:lo + _CHUNK]), dtype=float)
        for lo in range(0, samples, _CHUNK)
    ])
    return _moments(values)


def estimate_variance(
    loss: Callable[[np.ndarray], np.ndarray],
    theta_star: np.ndarray,
    r: float,
    samples: int,
    stream: NoiseStream,
) -> tuple[float, float]:
    """Unbiased hypercube variance of a batched loss and its standard error."""
    m = hypercube_moments(loss, theta_star, r, samples, stream)
    return m.var, m.var_se


# --------------------------------------------------------------------------
# closed-form hypercube averages


def _branch_ensemble(
    ansatz: Ansatz, theta_star: np.ndarray, r: float, x: float, forced: dict[int, str] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """States and weights whose weighted energies give the hypercube average.

    Rotating by theta* + alpha equals cos(a) U(theta*) - i sin(a) P U(theta*),
    and the odd cos*sin cross terms average out, so each gate splits every
    branch into U(theta*) psi (weight k+) and P U(theta*) psi (weight k-).
    ``forced`` pins selected gates to one branch with weight 1.
    """
    forced = forced or {}
    free = ansatz.M - len(forced)
    if free > MAX_ENUMERATION_GATES:
        raise ValueError(f"closed form enumerates 2^{free} branches; limit is 2^{MAX_ENUMERATION_GATES}")
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_star.size != ansatz.M:
        raise ValueError(f"expected {ansatz.M} parameters")
    gains = ansatz.gains(x)
    states = ansatz.initial_state().amplitudes[None, :].copy()
    weights = np.ones(1)
    j = 0
    for gate in ansatz.gates:
        if gate.kind == "fixed":
            states = apply_fixed(states, gate.fixed_matrix, gate.qubit, ansatz.n)
            continue
        angle = theta_star[j] * gains[j]
        P = gate.generator
        states = math.cos(angle) * states - 1j * math.sin(angle) * apply_pauli(states, P)
        half = abs(gains[j]) * r
        if j in forced:
            if forced[j] == "-":
                states = apply_pauli(states, P)
        elif half > 0:
            kp, km = k_plus(half), k_minus(half)
            states = np.concatenate([states, apply_pauli(states, P)])
            weights = np.concatenate([weights * kp, weights * km])
        j += 1
    return states, weights


def expected_loss_closed_form(ansatz: Ansatz, H: PauliSum, theta_star: np.ndarray, r: float, x: float = 0.0) -> float:
    """Exact hypercube mean of the loss by enumerating the 2^M rotation branches."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    states, weights = _branch_ensemble(ansatz, theta_star, r, x)
    return float(weights @ expectation_batch(states, H))


def conditional_variance_term(
    ansatz: Ansatz, H: PauliSum, theta_star: np.ndarray, r: float, j: int, x: float = 0.0
) -> float:
    """h(|g_j| r) * (<H_eff> - <P_j H_eff P_j>)^2 with all gates but j averaged.

    This is the cos^2 part of the variance of E[L | alpha_j]; it never exceeds
    the full hypercube variance.
    """
    if not 0 <= j < ansatz.M:
        raise ValueError(f"gate index {j} out of range")
    if r <= 0:
        return 0.0
    plus_states, plus_w = _branch_ensemble(ansatz, theta_star, r, x, {j: "+"})
    minus_states, minus_w = _branch_ensemble(ansatz, theta_star, r, x, {j: "-"})
    a = float(plus_w @ expectation_batch(plus_states, H))
    b = float(minus_w @ expectation_batch(minus_states, H))
    g = abs(ansatz.gains(x)[j])
    return float(h_exact(g * r)) * (a - b) ** 2


# --------------------------------------------------------------------------
# variance scans


@dataclass(frozen=True)
class VarianceScanRow:
    n: int
    L: int
    M: int
    r: float
    var_mc: float
    se_var: float
    samples: int


@dataclass(frozen=True)
class FitResult:
    exponent: float
    intercept: float
    rss: float


@dataclass(frozen=True)
class ScanConfig:
    x1: float = 0.1
    x2: float = 0.2
    J: float = 1.0
    layers: int | None = None
    rotation: str = "Z"
    reference: str = ""
    samples: int = 10_000
    seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(shots=10_000))


def default_r_grid(points: int = 20, r_min: float = 1e-2, r_max: float = math.pi) -> np.ndarray:
    return np.geomspace(r_min, r_max, points)


def _scan_one(model: str, n: int, r_grid: Sequence[float], config: ScanConfig) -> list[VarianceScanRow]:
    L = config.layers if config.layers is not None else n
    family = model_family(model, n, config.J)
    reference = config.reference
    if reference == "auto":
        reference = select_reference(family.at(config.x1), config.rotation)
    ansatz = build_hea(n, L, config.rotation, reference)
    # training draws come from config.train.seed; hypercube draws from config.seed
    log = warm_start_vqe(family, ansatz, Schedule("vqe_path", (config.x1,)), config.train)
    theta_star = log.records[-1].theta_star
    H2 = family.at(config.x2)
    loss = lambda rows: exact_loss_batch(ansatz, H2, rows, config.x2)  # noqa: E731
    stream = NoiseStream(config.seed, key=(_KEY_SCAN, n))
    # common random numbers across radii keep the r-dependence smooth
    unit = stream.next_generator().uniform(-1.0, 1.0, size=(config.samples, ansatz.M))
    rows = []
    for r in r_grid:
        m = hypercube_moments(loss, theta_star, float(r), config.samples, stream, unit_draws=unit)
        rows.append(VarianceScanRow(n, L, ansatz.M, float(r), m.var, m.var_se, config.samples))
    return rows


def variance_scan(
    model: str,
    n_list: Sequence[int],
    r_grid: Sequence[float] | None = None,
    samples: int | None = None,
    config: ScanConfig | None = None,
    workers: int = 1,
) -> list[VarianceScanRow]:
    """Train at x1 for each n, then scan the hypercube variance of the x2 loss over r."""
    config = config or ScanConfig()
    if samples is not None:
        config = replace(config, samples=int(samples))
    grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    if workers > 1 and len(n_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_scan_one, [model] * len(n_list), list(n_list),
                                  [grid] * len(n_list), [config] * len(n_list)))
    else:
        parts = [_scan_one(model, n, grid, config) for n in n_list]
    return [row for part in parts for row in part]


def _power_fit(x: np.ndarray, y: np.ndarray) -> FitResult:
    if np.unique(x).size < 3:
        raise ValueError("fit needs at least three distinct abscissae")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < 2:
        raise ValueError("degenerate design matrix")
    rss = float(np.sum((A @ coef - y) ** 2))
    return FitResult(float(coef[0]), float(coef[1]), rss)


def rmax_by_M(table: Sequence[VarianceScanRow]) -> dict[int, float]:
    """Grid argmax of the variance for each circuit size M."""
    best: dict[int, tuple[float, float]] = {}
    for row in table:
        if row.M not in best or row.var_mc > best[row.M][0]:
            best[row.M] = (row.var_mc, row.r)
    return {M: r for M, (_, r) in sorted(best.items())}


def fit_rmax(table: Sequence[VarianceScanRow]) -> FitResult:
    """Least-squares fit of log r_max against log M."""
    rm = rmax_by_M(table)
    Ms = np.array(list(rm), dtype=float)
    rs = np.array(list(rm.values()), dtype=float)
    return _power_fit(np.log(Ms), np.log(rs))


def fit_variance_decay(table: Sequence[VarianceScanRow], r: float | None = None) -> FitResult:
    """Slope of log variance against n at radius ``r`` (largest scanned radius by default)."""
    if r is None:
        r = max(row.r for row in table)
    sel = [row for row in table if math.isclose(row.r, r, rel_tol=1e-12)]
    ns = np.array([row.n for row in sel], dtype=float)
    vs = np.array([row.var_mc for row in sel], dtype=float)
    return _power_fit(ns, np.log(vs))


# --------------------------------------------------------------------------
# bound check


@dataclass(frozen=True)
class BoundCheckConfig:
    layers: int = 4
    J: float = 1.0
    x1: float = 0.1
    x2: float = 0.2
    eps_target: float = 0.1
    samples: int = 10_000
    radius_fraction: float = 0.9
    step_fraction: float = 0.9
    gamma: float = 0.5
    gamma_tilde: float = 0.5
    eps_override: float | None = None
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class BoundCheckReport:
    n: int
    L: int
    M: int
    x1: float
    x2: float
    eps: float
    first_valid_gate: int | None
    reordered: bool
    gap: float
    h_seminorm: float
    h1_seminorm: float
    max_step: float
    max_radius: float
    r: float
    variance_bound: float
    var_mc: float
    se: float
    conditions_met: dict[str, bool]
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["max_step"]):
            d["max_step"] = "inf"
        return d


def _bound_inputs(family, x_prev: float, x: float, M: int, eps: float, gamma: float, gamma_tilde: float,
                  h1_semi: float) -> BoundInputs:
    # the gap of both endpoints is used so the budget is conservative for either reading
    gap = min(spectral_gap(family.at(x_prev)), spectral_gap(family.at(x)))
    return BoundInputs(gap=gap, h_seminorm=semi_norm(family.at(x)), h1_seminorm=h1_semi, M=M,
                       eps=min(eps, EPS_MAX), gamma=gamma, gamma_tilde=gamma_tilde)


def admissible_step(family, x1: float, x2_target: float, M: int, eps: float, config: BoundCheckConfig,
                    h1_semi: float, max_rounds: int = 50) -> float:
    """Largest tried x2 <= x2_target whose step fits the step budget at x2."""
    x2 = x2_target
    for _ in range(max_rounds):
        inputs = _bound_inputs(family, x1, x2, M, eps, config.gamma, config.gamma_tilde, h1_semi)
        budget = max_step_vqe(inputs)
        if abs(x2 - x1) <= budget:
            return x2
        x2 = x1 + math.copysign(config.step_fraction * budget, x2_target - x1)
    return x2


def bound_check(model: str, n: int, config: BoundCheckConfig | None = None) -> BoundCheckReport:
    """Train at x1, step to an admissible x2 and compare the hypercube variance to the bound."""
    config = config or BoundCheckConfig()
    family = model_family(model, n, config.J)
    ansatz = build_hea(n, config.layers)
    j = first_valid_gate(ansatz)
    reordered = j is not None and j != 0
    if reordered:
        ansatz = move_gate_first(ansatz, j)
    log = warm_start_vqe(family, ansatz, Schedule("vqe_path", (config.x1,)), replace(config.train, seed=config.seed))
    rec = log.records[-1]
    eps = rec.eps if config.eps_override is None else config.eps_override
    h1_semi = semi_norm(family.h1)
    x2 = admissible_step(family, config.x1, config.x2, ansatz.M, eps, config, h1_semi)
    inputs = _bound_inputs(family, config.x1, x2, ansatz.M, eps, config.gamma, config.gamma_tilde, h1_semi)
    r_budget = max_radius_vqe(inputs)
    r = config.radius_fraction * r_budget
    step = x2 - config.x1
    bound = variance_bound_vqe(inputs, r, step)
    H2 = family.at(x2)
    loss = lambda rows: exact_loss_batch(ansatz, H2, rows, x2)  # noqa: E731
    stream = NoiseStream(config.seed, key=(_KEY_BOUND, n))
    var, se = estimate_variance(loss, rec.theta_star, r, config.samples, stream)
    conditions = {
        "eps_target": eps <= config.eps_target,
        "first_gate_nontrivial": j is not None,
        "step": abs(step) <= max_step_vqe(inputs),
        "radius": r <= r_budget,
        "gap_positive": inputs.gap > 0,
    }
    return BoundCheckReport(
        n=n, L=config.layers, M=ansatz.M, x1=config.x1, x2=x2, eps=eps, first_valid_gate=j,
        reordered=reordered, gap=inputs.gap, h_seminorm=inputs.h_seminorm, h1_seminorm=h1_semi,
        max_step=max_step_vqe(inputs), max_radius=r_budget, r=r, variance_bound=bound,
        var_mc=var, se=se, conditions_met=conditions, passed=var >= bound - 3 * se,
    )


# --------------------------------------------------------------------------
# tracking


@dataclass(frozen=True)
class TrackingConfig:
    n: int = 6
    J: float = 1.0
    layers: int = 6
    rotation: str = "Z"
    reference: str = ""
    encoding: str = "default"
    reference_points: int = 41
    train: TrainConfig = field(default_factory=TrainConfig)


TRACKING_COLUMNS = ("k", "x", "energy", "e0", "e1", "fidelity", "branch")


@dataclass
class TrackingResult:
    runlog: RunLog
    rows: list[list]
    test_rows: list[list]
    reference_curve: list[list[float]]
    summary: dict


def tracking_experiment(model: str, mode: str, schedule: Schedule, config: TrackingConfig | None = None) -> TrackingResult:
    """Warm-start VQE or Meta-VQE along ``schedule`` with exact reference curves."""
    config = config or TrackingConfig()
    if mode not in ("vqe", "meta"):
        raise ValueError(f"mode must be 'vqe' or 'meta', got {mode!r}")
    family = model_family(model, config.n, config.J)
    reference = config.reference
    if reference == "auto":
        reference = select_reference(family.at(schedule.xs[0]), config.rotation)
    if mode == "vqe":
        ansatz = build_hea(config.n, config.layers, config.rotation, reference)
        log = warm_start_vqe(family, ansatz, schedule, config.train)
    else:
        ansatz = build_meta_ansatz(config.n, config.layers, config.encoding, config.rotation, reference)
        log = warm_start_meta(family, ansatz, schedule, config.train)

    def to_rows(records):
        return [[r.k, r.x, r.energy_learned, r.e0, r.e1, r.fidelity_gs, r.branch] for r in records]

    grid = np.linspace(schedule.xs[0], schedule.xs[-1], config.reference_points)
    curve = []
    for x in grid:
        spec = exact_spectrum(family.at(x))
        curve.append([float(x), spec.ground_energy, spec.first_excited_value])
    errors = []
    for rec in log.records:
        errors.append(abs(rec.energy_learned - rec.e0) / max(semi_norm(family.at(rec.x)), 1e-300))
    test_errors = [abs(r.energy_learned - r.e0) / max(semi_norm(family.at(r.x)), 1e-300) for r in log.test_records]
    branches = [r.branch for r in log.records]
    summary = {
        "model": model,
        "mode": mode,
        "reference_state": reference or "0" * config.n,
        "M": ansatz.M,
        "branches": {b: branches.count(b) for b in ("ground", "excited", "neither")},
        "max_relative_error": max(errors) if errors else None,
        "max_test_relative_error": max(test_errors) if test_errors else None,
        "failed_steps": [r.k for r in log.records if r.failed],
    }
    return TrackingResult(log, to_rows(log.records), to_rows(log.test_records), curve, summary)


# --------------------------------------------------------------------------
# output helpers


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """RFC-4180 CSV with a header row and LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def scan_rows(table: Sequence[VarianceScanRow]) -> list[list]:
    return [[r.n, r.L, r.M, r.r, r.var_mc, r.se_var, r.samples] for r in table]


SCAN_COLUMNS = ("n", "L", "M", "r", "var", "se", "samples")


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def run_id(config: dict) -> str:
    """Short content hash of the canonical config echo."""
    return hashlib.sha1(json.dumps(_jsonable(config), sort_keys=True).encode()).hexdigest()[:12]
