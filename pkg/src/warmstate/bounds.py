"""Closed-form budgets and lower bounds for the warm-start loss variance.

All angles follow the rotation convention exp(-i theta P), so a hypercube of
half-width r averages cos^2 and sin^2 of the rotation angle over [-r, r].
``sinc`` here is the unnormalised sin(x)/x.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .statevector import Ansatz, StateVector, apply_pauli

EPS_MAX = 1.0 / math.sqrt(2.0)
_SERIES_CUTOFF = 0.25


def sinc(x):
    """sin(x)/x with sinc(0) = 1."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def _check_r(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be non-negative")
    return r


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def k_plus(r):
    """Hypercube average of cos^2 over [-r, r]: (1 + sinc 2r) / 2."""
    r = _check_r(r)
    return _out(0.5 * (1.0 + sinc(2.0 * r)))


def k_minus(r):
    """Hypercube average of sin^2 over [-r, r]: (1 - sinc 2r) / 2."""
    r = _check_r(r)
    return _out(0.5 * (1.0 - sinc(2.0 * r)))


def _h_series(r: np.ndarray, terms: int = 14) -> np.ndarray:
    # h = 1/8 sum_{n>=2} (-1)^n (n-1)/(n+1) (4r)^{2n} / (2n+1)!
    u = (4.0 * r) ** 2
    total = np.zeros_like(r)
    for n in range(2, 2 + terms):
        total += (-1) ** n * (n - 1) / (n + 1) * u ** n / math.factorial(2 * n + 1)
    return total / 8.0


def h_exact(r):
    """Variance of cos^2(alpha) for alpha uniform on [-r, r].

    (cos 4r - 1) / (32 r^2) + (1 + sinc 4r) / 8, switched to its Taylor series
    near zero where the closed form cancels catastrophically.
    """
    r = _check_r(r)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.empty_like(r)
    small = r < _SERIES_CUTOFF
    out[small] = _h_series(r[small])
    big = ~small
    rb = r[big]
    out[big] = (np.cos(4 * rb) - 1.0) / (32.0 * rb ** 2) + (1.0 + sinc(4 * rb)) / 8.0
    out = np.clip(out, 0.0, None)
    return float(out[0]) if scalar else out


def h_envelope(r):
    """Quartic lower envelope of h: (1 - 4r^2/7) * 4 r^4 / 45."""
    r = np.asarray(r, dtype=float)
    return _out((1.0 - 4.0 * r ** 2 / 7.0) * 4.0 * r ** 4 / 45.0)


def h_cov(a: float, b: float, r, printed: bool = False):
    """Covariance of cos^2(a alpha) and cos^2(b alpha), alpha uniform on [-r, r].

    The default is the true covariance
    (1/8)[sinc(2(a-b)r) + sinc(2(a+b)r) - 2 sinc(2ar) sinc(2br)].
    ``printed=True`` returns the variant with prefactor 1/4 and inner weight
    1/2, whose diagonal does not reduce to :func:`h_exact`.
    """
    r = _check_r(r)
    s_minus = sinc(2 * (a - b) * r)
    s_plus = sinc(2 * (a + b) * r)
    cross = sinc(2 * a * r) * sinc(2 * b * r)
    if printed:
        return _out(0.25 * (s_minus + s_plus - 0.5 * cross))
    return _out(0.125 * (s_minus + s_plus - 2.0 * cross))


def h6(a: float, b: float) -> float:
    """Sixth-derivative bound polynomial, evaluated term for term.

    The a b^5 monomial appears twice (weights 1/7 and 1/2); both are kept.
    """
    terms = (
        3 * a ** 6 / 7,
        a ** 5 * b / 2,
        37 * a ** 4 * b ** 2 / 7,
        5 * a ** 3 * b ** 3 / 4,
        37 * a ** 2 * b ** 4 / 7,
        a * b ** 5 / 7,
        a * b ** 5 / 2,
        3 * b ** 6 / 7,
    )
    return 2 ** 6 * sum(terms)


# --------------------------------------------------------------------------
# budgets


@dataclass(frozen=True)
class BoundInputs:
    gap: float
    h_seminorm: float
    h1_seminorm: float
    M: int
    eps: float = 0.0
    gamma: float = 0.5
    gamma_tilde: float = 0.5
    g_max_deriv: float = 0.0
    g_min: float = 1.0
    g_max: float = 1.0

    def __post_init__(self):
        for name in ("gap", "h_seminorm", "h1_seminorm", "eps", "gamma", "gamma_tilde",
                     "g_max_deriv", "g_min", "g_max"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "gap", abs(float(self.gap)))
        for name in ("h_seminorm", "h1_seminorm", "g_max_deriv"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")
        if not 0.0 <= self.eps <= EPS_MAX + 1e-15:
            raise ValueError(f"eps must lie in [0, 1/sqrt(2)], got {self.eps}")
        for name in ("gamma", "gamma_tilde"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def fidelity_factor(self) -> float:
        f = 1.0 - 2.0 * self.eps ** 2
        # eps = 1/sqrt(2) should give exactly zero, not round-off
        return f if f > 1e-12 else 0.0


def max_step_vqe(inputs: BoundInputs) -> float:
    """gamma~ (1 - 2 eps^2) gap / ||H1||_s; infinite when H1 has no spread."""
    num = inputs.gamma_tilde * inputs.fidelity_factor * inputs.gap
    if num == 0:
        return 0.0
    if inputs.h1_seminorm == 0:
        return math.inf
    return max(num / inputs.h1_seminorm, 0.0)


def max_step_meta(inputs: BoundInputs, refined: bool = False) -> float:
    """gamma~ (1 - 2 eps^2) gap / (||H1||_s + M g' ||H||_s).

    ``refined=True`` instead solves the quadratic budget that keeps the
    ||H1||_s |dx| correction to the semi-norm: the positive root of
    b d^2 + a d - (1 - 2 eps^2) gap with a = M g' ||H||_s + ||H1||_s and
    b = M g' ||H1||_s, scaled by gamma~.
    """
    f = inputs.fidelity_factor * inputs.gap
    a = inputs.M * inputs.g_max_deriv * inputs.h_seminorm + inputs.h1_seminorm
    b = inputs.M * inputs.g_max_deriv * inputs.h1_seminorm
    if f == 0:
        return 0.0
    if not refined:
        return math.inf if a == 0 else inputs.gamma_tilde * f / a
    if b == 0:
        return math.inf if a == 0 else inputs.gamma_tilde * f / a
    root = (-a + math.sqrt(a * a + 4.0 * b * f)) / (2.0 * b)
    return inputs.gamma_tilde * max(root, 0.0)


def max_radius_vqe(inputs: BoundInputs) -> float:
    """sqrt(gamma * 3/(M-1) * c / (||H||_s + c)) with c = (1 - 2 eps^2)(1 - gamma~) gap."""
    if inputs.M < 2:
        raise ValueError("radius budget needs M >= 2")
    c = inputs.fidelity_factor * (1.0 - inputs.gamma_tilde) * inputs.gap
    if c == 0:
        return 0.0
    r2 = inputs.gamma * 3.0 / (inputs.M - 1) * c / (inputs.h_seminorm + c)
    return math.sqrt(max(r2, 0.0))


def max_radius_meta(inputs: BoundInputs, xs: Sequence[float], g1_values: Sequence[float]) -> float:
    """sqrt(gamma * min(min_pairs 4 a^2 b^2 / (45 h6(a, b)), gap term)).

    ``g1_values[i]`` is the first gate's encoding g_1(xs[i]); a pair with a
    vanishing encoding has no admissible radius.
    """
    if inputs.M < 2:
        raise ValueError("radius budget needs M >= 2")
    xs = list(xs)
    # the derivative bound is stated for magnitudes of the encodings
    g = [abs(float(v)) for v in g1_values]
    if not xs or len(xs) != len(g):
        raise ValueError("need one g_1 value per training point")
    pair_budget = math.inf
    for a in g:
        for b in g:
            if a == 0 or b == 0:
                pair_budget = 0.0
                continue
            pair_budget = min(pair_budget, 4 * a * a * b * b / (45 * h6(a, b)))
    c = inputs.fidelity_factor * inputs.gap
    if c == 0 or inputs.g_max == 0:
        gap_budget = 0.0
    else:
        gap_budget = (3.0 / (inputs.g_max ** 2 * (inputs.M - 1))
                      * inputs.gamma_tilde * c / (inputs.h_seminorm + c))
    r2 = inputs.gamma * min(pair_budget, gap_budget)
    return math.sqrt(max(r2, 0.0))


def variance_bound_vqe(inputs: BoundInputs, r: float, step: float | None = None) -> float:
    """(1 - 4r^2/7)(4 r^4/45)((1-gamma)(1-gamma~)(1-2 eps^2) gap)^2, or 0 outside its conditions."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    if not _vqe_conditions(inputs, r, step)["all"]:
        return 0.0
    amp = (1 - inputs.gamma) * (1 - inputs.gamma_tilde) * inputs.fidelity_factor * inputs.gap
    return max(h_envelope(r) * amp ** 2, 0.0)


def _vqe_conditions(inputs: BoundInputs, r: float, step: float | None) -> dict[str, bool]:
    flags = {
        "gap_positive": inputs.gap > 0,
        "fidelity": inputs.eps <= EPS_MAX and inputs.fidelity_factor > 0,
        "radius": inputs.M >= 2 and r <= max_radius_vqe(inputs),
        "step": True if step is None else abs(step) <= max_step_vqe(inputs),
    }
    flags["all"] = all(flags.values())
    return flags


@dataclass
class BoundReport:
    max_step: float
    max_radius: float
    variance_lower: float
    conditions_met: dict[str, bool]
    r: float = 0.0
    step: float | None = None
    first_valid_gate: int | None = None
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_step"] = _finite_or_str(self.max_step)
        return d


def _finite_or_str(v: float):
    return v if math.isfinite(v) else "inf"


def bound_report(
    inputs: BoundInputs,
    r: float | None = None,
    step: float | None = None,
    first_gate: int | None = 0,
    radius_fraction: float = 0.9,
) -> BoundReport:
    """Budgets and the variance bound; ``r`` defaults to ``radius_fraction`` of the radius budget."""
    r_max = max_radius_vqe(inputs) if inputs.M >= 2 else 0.0
    if r is None:
        r = radius_fraction * r_max
    flags = _vqe_conditions(inputs, r, step)
    flags["first_gate_nontrivial"] = first_gate is not None
    flags["all"] = flags["all"] and flags["first_gate_nontrivial"]
    lower = variance_bound_vqe(inputs, r, step) if flags["all"] else 0.0
    return BoundReport(
        max_step=max_step_vqe(inputs),
        max_radius=r_max,
        variance_lower=lower,
        conditions_met=flags,
        r=float(r),
        step=step,
        first_valid_gate=first_gate,
        inputs=asdict(inputs),
    )


# --------------------------------------------------------------------------
# gate conditions


def first_valid_gate(ansatz: Ansatz, state: StateVector | np.ndarray | None = None, tol: float = 1e-10) -> int | None:
    """Smallest rotation index j with |<psi|P_j|psi>| <= tol on the initial state."""
    if state is None:
        state = ansatz.initial_state()
    psi = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    for j, P in enumerate(ansatz.generators):
        if abs(np.vdot(psi, apply_pauli(psi, P))) <= tol:
            return j
    return None


def move_gate_first(ansatz: Ansatz, j: int) -> Ansatz:
    """Copy of ``ansatz`` with rotation j moved to the front of the circuit."""
    rot_positions = [i for i, g in enumerate(ansatz.gates) if g.kind == "rotation"]
    pos = rot_positions[j]
    gates = list(ansatz.gates)
    gate = gates.pop(pos)
    return ansatz.with_gates([gate] + gates)

