"""Warm-start training along a Hamiltonian path.

Each path point x_k is optimised starting from a uniform hypercube sample
around the previous optimum. The VQE variant re-targets H(x_k) at every step;
the Meta-VQE variant grows the training set and optimises the mean energy of
an x-encoded circuit over all points seen so far.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import _validation as val
from .bounds import EPS_MAX, BoundInputs, max_radius_vqe, max_step_vqe
from .losses import NoiseStream, exact_loss_batch, meta_loss_batch, noisy_loss_evaluator
from .pauli_model import HamiltonianFamily, PauliSum, Spectrum, exact_spectrum, model_family, semi_norm, spectral_gap
from .statevector import (
    Ansatz,
    adjoint_gradient,
    build_hea,
    build_meta_ansatz,
    expectation,
    fidelity,
    parameter_shift_grad,
    prepare,
    prepare_batch,
)

OPTIMIZERS = ("gradient_descent", "adam")
INIT_POLICIES = ("auto", "zero", "random")
GRADIENTS = ("auto", "parameter_shift", "adjoint")

# stream keys keep sampling, restarts and shot noise on disjoint counters
_KEY_INIT = 1
_KEY_NOISE = 2
_DEGENERATE_TOL = 1e-9
_KEY_SELECT = 3
_SELECT_SHOTS = 10


@dataclass(frozen=True)
class Schedule:
    mode: str
    xs: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in ("vqe_path", "meta_incremental"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        object.__setattr__(self, "xs", tuple(val.check_path(self.xs)))

    @classmethod
    def linspace(cls, mode: str, x_min: float, x_max: float, K: int) -> "Schedule":
        return cls(mode, tuple(np.linspace(x_min, x_max, int(K)).tolist()))


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.05
    max_iters: int = 300
    grad_tol: float = 1e-4
    r_warm: float = 0.05
    n_restarts: int = 1
    shots: int | None = None
    seed: int = 0
    init: str = "auto"
    gradient: str = "auto"
    plateau_window: int = 10

    def __post_init__(self):
        val.check_choice("optimizer", self.optimizer, OPTIMIZERS)
        val.check_choice("init", self.init, INIT_POLICIES)
        val.check_choice("gradient", self.gradient, GRADIENTS)
        val.check_positive("learning_rate", self.learning_rate)
        val.check_positive("grad_tol", self.grad_tol)
        val.check_int("max_iters", self.max_iters, minimum=1)
        val.check_int("n_restarts", self.n_restarts, minimum=1)
        val.check_int("plateau_window", self.plateau_window, minimum=1)
        val.check_nonnegative("r_warm", self.r_warm)
        if self.shots is not None:
            val.check_int("shots", self.shots, minimum=1)
        val.check_int("seed", self.seed, minimum=0)
        if self.gradient == "adjoint" and self.shots is not None:
            raise ValueError("adjoint gradients need exact evaluation; use parameter_shift with shots")


@dataclass
class TrainRecord:
    k: int
    x: float
    theta_star: np.ndarray
    energy_learned: float
    e0: float
    e1: float
    fidelity_gs: float
    eps: float
    iters_used: int
    grad_norm_final: float
    failed: bool = False
    branch: str = ""
    trace: list[float] = field(default_factory=list)
    max_step: float | None = None
    max_radius: float | None = None
    step_within_budget: bool | None = None
    radius_within_budget: bool | None = None

    def to_dict(self, with_trace: bool = True) -> dict:
        d = asdict(self)
        d["theta_star"] = [float(t) for t in self.theta_star]
        if not with_trace:
            d.pop("trace")
        for key in ("max_step", "max_radius"):
            if d[key] is not None and not math.isfinite(d[key]):
                d[key] = "inf"
        return d


CSV_COLUMNS = ("k", "x", "energy_learned", "e0", "e1", "fidelity_gs", "eps",
               "iters_used", "grad_norm_final", "branch")


@dataclass
class RunLog:
    records: list[TrainRecord]
    config: dict
    schedule: dict
    test_records: list[TrainRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "schedule": self.schedule,
            "records": [r.to_dict() for r in self.records],
            "test_records": [r.to_dict(with_trace=False) for r in self.test_records],
        }

    def csv_rows(self, test: bool = False) -> list[list]:
        recs = self.test_records if test else self.records
        return [[getattr(r, c) for c in CSV_COLUMNS] for r in recs]

    @property
    def theta_path(self) -> np.ndarray:
        return np.stack([r.theta_star for r in self.records])


# --------------------------------------------------------------------------
# building blocks


def sample_hypercube(center: np.ndarray, r: float, stream: NoiseStream) -> np.ndarray:
    """center + Unif[-r, r] independently per coordinate."""
    center = np.asarray(center, dtype=float)
    if r < 0:
        raise ValueError("hypercube half-width must be non-negative")
    if r == 0:
        return center.copy()
    return center + stream.next_generator().uniform(-r, r, size=center.shape)


@dataclass
class OptimizeResult:
    theta: np.ndarray
    trace: list[float]
    iters: int
    grad_norm: float
    converged: bool
    best_loss: float

    def __iter__(self):
        yield self.theta
        yield self.trace


def optimize(
    loss: Callable[[np.ndarray], float] | None,
    grad: Callable[[np.ndarray], np.ndarray] | None,
    theta0: np.ndarray,
    config: TrainConfig,
    *,
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
    select_loss: Callable[[np.ndarray], float] | None = None,
) -> OptimizeResult:
    """First-order minimisation with best-iterate tracking.

    ``value_and_grad`` may replace the (loss, grad) pair when both come from
    one pass. When ``select_loss`` is given (shot-noise runs) the best iterate
    is chosen by it and convergence also stops once the moving average of the
    last ``plateau_window`` losses stops decreasing.
    """
    theta = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("initial parameters must be finite")
    if value_and_grad is None:
        if loss is None or grad is None:
            raise ValueError("need loss and grad, or value_and_grad")
        value_and_grad = lambda t: (loss(t), grad(t))  # noqa: E731
    noisy = select_loss is not None
    w = config.plateau_window
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    trace: list[float] = []
    best_theta, best_score = theta.copy(), math.inf
    gnorm = math.inf
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        value, g = value_and_grad(theta)
        value = float(value)
        if not math.isfinite(value) or not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite loss or gradient at iteration {it}: loss={value}")
        trace.append(value)
        score = select_loss(theta) if noisy else value
        if score < best_score:
            best_score, best_theta = score, theta.copy()
        gnorm = float(np.linalg.norm(g))
        if gnorm <= config.grad_tol:
            converged = True
            break
        if noisy and len(trace) >= 2 * w:
            if np.mean(trace[-w:]) >= np.mean(trace[-2 * w:-w]):
                converged = True
                break
        if config.optimizer == "adam":
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** it)
            vhat = v / (1 - b2 ** it)
            theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + eps_adam)
        else:
            theta = theta - config.learning_rate * g
    return OptimizeResult(best_theta, trace, it, gnorm, converged, best_score)


def classify_branch(record: TrainRecord | dict) -> str:
    """ground / excited / neither relative to the exact e0, e1 at the record's x."""
    get = record.get if isinstance(record, dict) else lambda k: getattr(record, k)
    E, e0, e1 = get("energy_learned"), get("e0"), get("e1")
    tol = 0.05 * (e1 - e0) + 1e-6
    d0, d1 = abs(E - e0), abs(E - e1)
    # a degenerate ground level makes e1 == e0 up to round-off; both distances agree
    if e1 - e0 <= _DEGENERATE_TOL and d0 <= tol:
        return "ground"
    if d0 <= min(d1, tol):
        return "ground"
    if d0 > tol and d1 > tol:
        return "neither"
    if d1 < d0:
        return "excited"
    return "neither"


def parity_operator(n: int, axis: str) -> PauliSum:
    return PauliSum.from_list(n, [(1.0, axis * n)])


def select_reference(H: PauliSum, rotation: str = "Z") -> str:
    """Product reference in the parity sector holding the ground state of H.

    An HEA with ``rotation`` single-qubit gates conserves the parity along that
    axis, so its reachable states stay in the sector of the reference. Ties
    go to the even sector.
    """
    n = H.n
    if rotation == "Z":
        even, odd = "0" * n, "1" + "0" * (n - 1)
    elif rotation == "X":
        even, odd = "+" * n, "-" + "+" * (n - 1)
    else:
        raise ValueError("parity sectors are defined for X or Z rotations only")
    Hd = H.to_dense()
    Pd = parity_operator(n, rotation).to_dense()
    lows = []
    for sign in (1.0, -1.0):
        w, V = np.linalg.eigh(Pd)
        basis = V[:, np.isclose(w, sign)]
        lows.append(np.linalg.eigvalsh(basis.conj().T @ Hd @ basis)[0])
    return even if lows[0] <= lows[1] + 1e-9 else odd


def _ground_fidelity(amps: np.ndarray, spec: Spectrum) -> float:
    return fidelity(amps, spec.ground_space(tol=1e-8))


class _Objective:
    """Loss/gradient oracle for one training step (one or several x points)."""

    def __init__(self, ansatz: Ansatz, family: HamiltonianFamily, xs: Sequence[float],
                 config: TrainConfig, stream: NoiseStream):
        self.ansatz = ansatz
        self.family = family
        self.xs = [float(x) for x in xs]
        self.hams = [family.at(x) for x in self.xs]
        self.config = config
        self.noisy = self.selector = None
        if config.shots is not None:
            self.noisy = noisy_loss_evaluator(ansatz, family, int(config.shots), stream, self.xs)
            # best-iterate selection uses its own draws at ten times the shot budget
            self.selector = noisy_loss_evaluator(ansatz, family, _SELECT_SHOTS * int(config.shots),
                                                 stream.child(_KEY_SELECT), self.xs)
        method = config.gradient
        if method == "auto":
            method = "adjoint" if config.shots is None else "parameter_shift"
        self.method = method

    def exact(self, theta: np.ndarray) -> float:
        return float(meta_loss_batch(self.ansatz, self.family, self.xs, theta[None, :])[0])

    def select(self, theta: np.ndarray) -> float:
        """Score used to rank iterates and restarts."""
        return self.exact(theta) if self.selector is None else self.selector(theta)

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        K = len(self.xs)
        if self.noisy is None and self.method == "adjoint":
            total, grad = 0.0, np.zeros(self.ansatz.M)
            for x, H in zip(self.xs, self.hams):
                l, g = adjoint_gradient(self.ansatz, H, theta, x)
                total += l
                grad += g
            return total / K, grad / K
        grad = np.zeros(self.ansatz.M)
        for x, H in zip(self.xs, self.hams):
            if self.noisy is None:
                f = lambda rows, H=H, x=x: exact_loss_batch(self.ansatz, H, rows, x)  # noqa: E731
            else:
                f = lambda rows, x=x: self.noisy.batch(rows, [x])  # noqa: E731
            grad += parameter_shift_grad(f, theta, gains=self.ansatz.gains(x), batched=True)
        grad /= K
        value = self.exact(theta) if self.noisy is None else self.noisy(theta)
        return value, grad


def _initial_candidates(
    k: int, ansatz: Ansatz, x: float, spec: Spectrum, prev: np.ndarray | None,
    theta_init: np.ndarray | None, config: TrainConfig, stream: NoiseStream,
) -> list[np.ndarray]:
    M = ansatz.M
    if k > 0:
        return [sample_hypercube(prev, config.r_warm, stream) for _ in range(config.n_restarts)]
    if theta_init is not None:
        return [np.asarray(theta_init, dtype=float)]
    policy = config.init
    if policy == "auto":
        f0 = _ground_fidelity(prepare(ansatz, np.zeros(M), x).amplitudes, spec)
        policy = "zero" if f0 >= 0.5 else "random"
    if policy == "zero":
        return [sample_hypercube(np.zeros(M), config.r_warm, stream) for _ in range(config.n_restarts)]
    return [stream.next_generator().uniform(-np.pi, np.pi, size=M) for _ in range(config.n_restarts)]


def _step_telemetry(family: HamiltonianFamily, ansatz: Ansatz, x_prev: float, x: float,
                    eps_prev: float, r_warm: float, h1_semi: float) -> dict:
    inputs = BoundInputs(
        gap=min(spectral_gap(family.at(x_prev)), spectral_gap(family.at(x))),
        h_seminorm=semi_norm(family.at(x)),
        h1_seminorm=h1_semi,
        M=ansatz.M,
        eps=min(eps_prev, EPS_MAX),
    )
    step_budget = max_step_vqe(inputs)
    radius_budget = max_radius_vqe(inputs) if ansatz.M >= 2 else 0.0
    return {
        "max_step": step_budget,
        "max_radius": radius_budget,
        "step_within_budget": abs(x - x_prev) <= step_budget,
        "radius_within_budget": r_warm <= radius_budget,
    }


def _make_record(k: int, x: float, theta: np.ndarray, ansatz: Ansatz, H: PauliSum,
                 spec: Spectrum, result: OptimizeResult | None, failed: bool) -> TrainRecord:
    amps = prepare(ansatz, theta, x).amplitudes
    energy = expectation(amps, H)
    fid = _ground_fidelity(amps, spec)
    rec = TrainRecord(
        k=k,
        x=float(x),
        theta_star=np.asarray(theta, dtype=float).copy(),
        energy_learned=energy,
        e0=spec.ground_energy,
        e1=spec.first_excited_value,
        fidelity_gs=fid,
        eps=math.sqrt(max(1.0 - fid, 0.0)),
        iters_used=result.iters if result else 0,
        grad_norm_final=result.grad_norm if result else float("nan"),
        failed=failed,
        trace=list(result.trace) if result else [],
    )
    rec.branch = classify_branch(rec)
    return rec


def _run_path(
    family: HamiltonianFamily, ansatz: Ansatz, schedule: Schedule, config: TrainConfig,
    theta_init: np.ndarray | None, meta: bool,
) -> RunLog:
    xs = schedule.xs
    h1_semi = semi_norm(family.h1)
    init_stream = NoiseStream(config.seed, key=(_KEY_INIT,))
    records: list[TrainRecord] = []
    prev: np.ndarray | None = None
    for k, x in enumerate(xs):
        H = family.at(x)
        spec = exact_spectrum(H)
        train_xs = xs[: k + 1] if meta else (x,)
        candidates = _initial_candidates(k, ansatz, x, spec, prev, theta_init, config, init_stream)
        best: tuple[float, OptimizeResult, float, float] | None = None
        for i, theta0 in enumerate(candidates):
            noise = NoiseStream(config.seed, key=(_KEY_NOISE, k, i))
            obj = _Objective(ansatz, family, train_xs, config, noise)
            init_loss = obj.exact(theta0)
            res = optimize(None, None, theta0, config, value_and_grad=obj.value_and_grad,
                           select_loss=obj.select if obj.noisy is not None else None)
            if best is None or res.best_loss < best[0]:
                best = (res.best_loss, res, init_loss, obj.exact(res.theta))
        _, res, init_loss, final = best
        failed = final >= init_loss - 1e-12 and res.grad_norm > config.grad_tol
        rec = _make_record(k, x, res.theta, ansatz, H, spec, res, failed)
        if k > 0:
            tele = _step_telemetry(family, ansatz, xs[k - 1], x, records[-1].eps, config.r_warm, h1_semi)
            for key, value in tele.items():
                setattr(rec, key, value)
        records.append(rec)
        # a failed step still hands its best parameters to the next one
        prev = res.theta
    log = RunLog(records, _config_dict(config), {"mode": schedule.mode, "xs": list(xs)})
    if meta and records:
        theta = records[-1].theta_star
        tests = [0.5 * (a + b) for a, b in zip(xs[:-1], xs[1:])]
        log.test_records = [
            _make_record(j, t, theta, ansatz, family.at(t), exact_spectrum(family.at(t)), None, False)
            for j, t in enumerate(tests)
        ]
    return log


def _config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def warm_start_vqe(
    family: HamiltonianFamily, ansatz: Ansatz, schedule: Schedule, config: TrainConfig,
    theta_init: np.ndarray | None = None,
) -> RunLog:
    if schedule.mode != "vqe_path":
        raise ValueError("warm_start_vqe needs a vqe_path schedule")
    return _run_path(family, ansatz, schedule, config, theta_init, meta=False)


def warm_start_meta(
    family: HamiltonianFamily, meta_ansatz: Ansatz, schedule: Schedule, config: TrainConfig,
    theta_init: np.ndarray | None = None,
) -> RunLog:
    if schedule.mode != "meta_incremental":
        raise ValueError("warm_start_meta needs a meta_incremental schedule")
    return _run_path(family, meta_ansatz, schedule, config, theta_init, meta=True)


# --------------------------------------------------------------------------
# estimator front end


class WarmStartVQE(BaseEstimator):
    """Path-tracking VQE with a scikit-learn style interface.

    ``fit(X)`` trains along the path points in ``X`` (strictly increasing);
    ``predict(X)`` returns learned energies, each evaluated with the parameters
    of the nearest trained point at or below x; ``transform(X)`` returns the
    corresponding statevectors.
    """

    _meta = False

    def __init__(self, model: str = "xy", n: int = 4, J: float = 1.0, layers: int = 2,
                 rotation: str = "Z", reference: str = "", encoding: str = "default",
                 optimizer: str = "adam", learning_rate: float = 0.05, max_iters: int = 300,
                 grad_tol: float = 1e-4, r_warm: float = 0.05, n_restarts: int = 1,
                 shots: int | None = None, init: str = "auto", seed: int = 0):
        self.model = model
        self.n = n
        self.J = J
        self.layers = layers
        self.rotation = rotation
        self.reference = reference
        self.encoding = encoding
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.max_iters = max_iters
        self.grad_tol = grad_tol
        self.r_warm = r_warm
        self.n_restarts = n_restarts
        self.shots = shots
        self.init = init
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate, max_iters=self.max_iters,
            grad_tol=self.grad_tol, r_warm=self.r_warm, n_restarts=self.n_restarts,
            shots=self.shots, seed=self.seed, init=self.init,
        )

    def _build_ansatz(self, family: HamiltonianFamily, x0: float) -> Ansatz:
        reference = self.reference
        if reference == "auto":
            reference = select_reference(family.at(x0), self.rotation)
        if self._meta:
            return build_meta_ansatz(self.n, self.layers, self.encoding, self.rotation, reference)
        return build_hea(self.n, self.layers, self.rotation, reference)

    def fit(self, X, y=None):
        xs = val.check_path(X)
        self.family_ = model_family(self.model, self.n, self.J)
        self.ansatz_ = self._build_ansatz(self.family_, xs[0])
        mode = "meta_incremental" if self._meta else "vqe_path"
        schedule = Schedule(mode, tuple(xs))
        runner = warm_start_meta if self._meta else warm_start_vqe
        self.runlog_ = runner(self.family_, self.ansatz_, schedule, self._train_config())
        self.path_ = np.asarray(xs)
        self.theta_path_ = self.runlog_.theta_path
        return self

    def _thetas_for(self, xs: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.path_, xs, side="right") - 1
        return self.theta_path_[np.clip(idx, 0, len(self.path_) - 1)]

    def _check_fitted(self):
        if not hasattr(self, "runlog_"):
            raise val.NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        xs = val.check_points(X)
        thetas = self._thetas_for(xs)
        return np.stack([prepare_batch(self.ansatz_, t[None, :], x)[0] for t, x in zip(thetas, xs)])

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        xs = val.check_points(X)
        thetas = self._thetas_for(xs)
        return np.array([
            exact_loss_batch(self.ansatz_, self.family_.at(x), t[None, :], x)[0]
            for t, x in zip(thetas, xs)
        ])

    def score(self, X, y=None) -> float:
        """Negative mean absolute error to the exact ground energy."""
        xs = val.check_points(X)
        exact = np.array([exact_spectrum(self.family_.at(x)).ground_energy for x in xs])
        return -float(np.mean(np.abs(self.predict(xs) - exact)))


class WarmStartMetaVQE(WarmStartVQE):
    """Incremental Meta-VQE; ``predict`` uses the final parameters at every x."""

    _meta = True

    def _thetas_for(self, xs: np.ndarray) -> np.ndarray:
        return np.repeat(self.theta_path_[-1][None, :], len(xs), axis=0)
