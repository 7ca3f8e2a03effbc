"""Dense statevector simulation of Pauli-rotation circuits.

Every rotation implements ``exp(-i * theta * g(x) * P) = cos(theta g) - i sin(theta g) P``.
Batched helpers operate on arrays of shape ``(B, 2**n)`` so that Monte-Carlo
loops and parameter-shift sweeps run as a handful of vectorised passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .pauli_model import DENSE_LIMIT, DenseLimitError, PauliString, PauliSum, pauli_action

NORM_TOL = 1e-10
IMAG_TOL = 1e-10

_SQ2 = 1.0 / math.sqrt(2.0)
FIXED_GATES: dict[str, np.ndarray] = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
}
PRODUCT_STATES: dict[str, np.ndarray] = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_SQ2, _SQ2], dtype=complex),
    "-": np.array([_SQ2, -_SQ2], dtype=complex),
}


def _check_n(n: int) -> None:
    if n < 1:
        raise ValueError("need at least one qubit")
    if n > DENSE_LIMIT:
        raise DenseLimitError(f"n={n} exceeds the dense limit of {DENSE_LIMIT} qubits")


@dataclass
class StateVector:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_n(self.n)
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2 ** self.n,):
            raise ValueError(f"expected {2 ** self.n} amplitudes, got shape {amps.shape}")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalised (norm {norm:.3e})")
        self.amplitudes = amps

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amplitudes.copy())


def zero_state(n: int) -> StateVector:
    _check_n(n)
    amps = np.zeros(2 ** n, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n, amps)


def product_state(labels: str) -> StateVector:
    """Product state from single-qubit labels over ``0 1 + -``."""
    _check_n(len(labels))
    try:
        vecs = [PRODUCT_STATES[c] for c in labels]
    except KeyError as exc:
        raise ValueError(f"unknown product-state label {exc.args[0]!r}") from None
    amps = vecs[0]
    for v in vecs[1:]:
        amps = np.kron(amps, v)
    return StateVector(len(labels), amps)


def apply_pauli(amps: np.ndarray, P: PauliString | str) -> np.ndarray:
    """``P @ amps`` along the last axis, without building a matrix."""
    letters = P if isinstance(P, str) else P.letters
    if amps.shape[-1] != 2 ** len(letters):
        raise ValueError("Pauli string and state dimension disagree")
    perm, phase = pauli_action(letters)
    return phase * amps[..., perm]


def apply_rotation(state: StateVector, P: PauliString, angle: float) -> StateVector:
    if P.n != state.n:
        raise ValueError(f"generator acts on {P.n} qubits, state has {state.n}")
    amps = math.cos(angle) * state.amplitudes - 1j * math.sin(angle) * apply_pauli(state.amplitudes, P)
    return StateVector(state.n, amps)


def apply_fixed(amps: np.ndarray, name: str, qubit: int, n: int) -> np.ndarray:
    """Apply a named single-qubit unitary to ``qubit`` along the last axis."""
    return _apply_matrix(amps, FIXED_GATES[name], qubit, n)


# --------------------------------------------------------------------------
# circuits


@dataclass(frozen=True)
class EncodingFn:
    """g(x) multiplying a rotation angle: constant_one, linear (a x) or affine (a x + b)."""

    kind: str = "constant_one"
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant_one", "linear", "affine"):
            raise ValueError(f"unknown encoding kind {self.kind!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("encoding coefficients must be finite")

    @classmethod
    def constant_one(cls) -> "EncodingFn":
        return cls("constant_one")

    @classmethod
    def linear(cls, a: float = 1.0) -> "EncodingFn":
        return cls("linear", float(a), 0.0)

    @classmethod
    def affine(cls, a: float, b: float) -> "EncodingFn":
        return cls("affine", float(a), float(b))

    def __call__(self, x: float) -> float:
        if self.kind == "constant_one":
            return 1.0
        if self.kind == "linear":
            return self.a * x
        return self.a * x + self.b

    def derivative(self, x: float = 0.0) -> float:
        return 0.0 if self.kind == "constant_one" else self.a


CONSTANT_ONE = EncodingFn()


@dataclass(frozen=True)
class Gate:
    kind: str
    generator: PauliString | None = None
    encoding: EncodingFn = CONSTANT_ONE
    fixed_matrix: str | None = None
    qubit: int | None = None

    def __post_init__(self):
        if self.kind == "rotation":
            if self.generator is None:
                raise ValueError("rotation gate needs a generator")
        elif self.kind == "fixed":
            if self.fixed_matrix not in FIXED_GATES or self.qubit is None:
                raise ValueError(f"fixed gate needs a name in {sorted(FIXED_GATES)} and a qubit")
        else:
            raise ValueError(f"unknown gate kind {self.kind!r}")

    @classmethod
    def rotation(cls, generator: PauliString | str, encoding: EncodingFn = CONSTANT_ONE) -> "Gate":
        if isinstance(generator, str):
            generator = PauliString(generator)
        return cls("rotation", generator=generator, encoding=encoding)

    @classmethod
    def fixed(cls, name: str, qubit: int) -> "Gate":
        return cls("fixed", fixed_matrix=name, qubit=qubit)


@dataclass(frozen=True)
class Ansatz:
    """Ordered gates acting on a reference product state (``|0...0>`` by default).

    Parameter j drives the j-th rotation gate in circuit order.
    """

    n: int
    gates: tuple[Gate, ...]
    reference: str = ""

    def __post_init__(self):
        _check_n(self.n)
        object.__setattr__(self, "gates", tuple(self.gates))
        if not self.reference:
            object.__setattr__(self, "reference", "0" * self.n)
        if len(self.reference) != self.n or set(self.reference) - set(PRODUCT_STATES):
            raise ValueError(f"bad reference {self.reference!r} for n={self.n}")
        for g in self.gates:
            if g.kind == "rotation" and g.generator.n != self.n:
                raise ValueError(f"generator {g.generator} does not act on {self.n} qubits")
            if g.kind == "fixed" and not 0 <= g.qubit < self.n:
                raise ValueError(f"fixed gate qubit {g.qubit} out of range")

    @property
    def M(self) -> int:
        return sum(g.kind == "rotation" for g in self.gates)

    @property
    def rotations(self) -> list[Gate]:
        return [g for g in self.gates if g.kind == "rotation"]

    @property
    def generators(self) -> list[PauliString]:
        return [g.generator for g in self.rotations]

    @property
    def has_encoding(self) -> bool:
        return any(g.encoding.kind != "constant_one" for g in self.rotations)

    def gains(self, x: float = 0.0) -> np.ndarray:
        """g_j(x) for every parameter."""
        return np.array([g.encoding(x) for g in self.rotations], dtype=float)

    def gain_derivatives(self, x: float = 0.0) -> np.ndarray:
        return np.array([g.encoding.derivative(x) for g in self.rotations], dtype=float)

    def initial_state(self) -> StateVector:
        return product_state(self.reference)

    def with_gates(self, gates: Sequence[Gate]) -> "Ansatz":
        return Ansatz(self.n, tuple(gates), self.reference)

    @cached_property
    def _compiled(self) -> list[tuple]:
        ops = []
        for g in self.gates:
            if g.kind == "fixed":
                ops.append(("fixed", g.fixed_matrix, g.qubit))
                continue
            perm, phase = pauli_action(g.generator.letters)
            if g.generator.x_mask == 0:
                ops.append(("diag", phase.real.copy(), None))
            else:
                ops.append(("rot", perm, phase))
        return ops


def _check_theta(ansatz: Ansatz, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != ansatz.M:
        raise ValueError(f"expected {ansatz.M} parameters, got {theta.shape[-1]}")
    return theta


def prepare_batch(ansatz: Ansatz, thetas: np.ndarray, xs: float | np.ndarray = 0.0) -> np.ndarray:
    """States for a batch of parameter rows; ``xs`` is a scalar or one x per row."""
    thetas = np.atleast_2d(_check_theta(ansatz, thetas))
    B = thetas.shape[0]
    xs_arr = np.broadcast_to(np.asarray(xs, dtype=float), (B,))
    if ansatz.has_encoding:
        gains = np.stack([ansatz.gains(x) for x in xs_arr]) if xs_arr.size else np.zeros((0, ansatz.M))
        angles = thetas * gains
    else:
        angles = thetas
    psi = np.repeat(ansatz.initial_state().amplitudes[None, :], B, axis=0)
    j = 0
    for kind, a, b in ansatz._compiled:
        if kind == "fixed":
            psi = apply_fixed(psi, a, b, ansatz.n)
            continue
        ang = angles[:, j][:, None]
        j += 1
        c, s = np.cos(ang), np.sin(ang)
        if kind == "diag":
            psi = psi * (c - 1j * s * a[None, :])
        else:
            flipped = np.take(psi, a, axis=1)
            flipped *= b
            flipped *= -1j * s
            flipped += c * psi
            psi = flipped
    return psi


def prepare(ansatz: Ansatz, theta: np.ndarray, x: float = 0.0) -> StateVector:
    theta = _check_theta(ansatz, theta)
    if theta.ndim != 1:
        raise ValueError("prepare takes a single parameter vector; use prepare_batch")
    amps = prepare_batch(ansatz, theta[None, :], x)[0]
    return StateVector(ansatz.n, amps)


def _amps(state: StateVector | np.ndarray) -> np.ndarray:
    return state.amplitudes if isinstance(state, StateVector) else np.asarray(state)


def pauli_expectations(state: StateVector | np.ndarray, H: PauliSum) -> np.ndarray:
    """<P_alpha> for every term; shape ``(..., T)``."""
    psi = _amps(state)
    if psi.shape[-1] != 2 ** H.n:
        raise ValueError(f"state dimension {psi.shape[-1]} does not match {H.n}-qubit operator")
    out = np.empty(psi.shape[:-1] + (len(H),), dtype=float)
    conj = psi.conj()
    for t, term in enumerate(H.terms):
        val = np.sum(conj * apply_pauli(psi, term.string), axis=-1)
        out[..., t] = val.real
    return out


def expectation_batch(states: np.ndarray, H: PauliSum) -> np.ndarray:
    if len(H) == 0:
        return np.zeros(states.shape[:-1])
    return pauli_expectations(states, H) @ H.coeffs


def expectation(state: StateVector | np.ndarray, H: PauliSum) -> float:
    psi = _amps(state)
    if psi.shape != (2 ** H.n,):
        raise ValueError(f"state dimension {psi.shape} does not match {H.n}-qubit operator")
    total = 0j
    for term in H.terms:
        total += term.coeff * np.vdot(psi, apply_pauli(psi, term.string))
    if abs(total.imag) > IMAG_TOL:
        raise AssertionError(f"expectation has imaginary part {total.imag:.3e}")
    return float(total.real)


def fidelity(state: StateVector | np.ndarray, reference: np.ndarray) -> float:
    psi = _amps(state)
    ref = np.asarray(reference)
    if psi.shape != ref.shape[:1]:
        raise ValueError("state and reference dimensions differ")
    if ref.ndim == 2:
        # projector onto a subspace given by orthonormal columns
        val = float(np.sum(np.abs(ref.conj().T @ psi) ** 2))
    else:
        val = float(abs(np.vdot(ref, psi)) ** 2)
    return min(max(val, 0.0), 1.0)


# --------------------------------------------------------------------------
# gradients


def shift_table(theta: np.ndarray, gains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``theta +/- pi/(4 g_j) e_j`` stacked as (plus rows, minus rows) plus the active mask.

    Inert parameters (g_j == 0) keep an unshifted row and are zeroed later.
    """
    theta = np.asarray(theta, dtype=float)
    M = theta.size
    active = gains != 0
    shift = np.zeros(M)
    shift[active] = np.pi / (4.0 * gains[active])
    plus = np.repeat(theta[None, :], M, axis=0)
    minus = plus.copy()
    idx = np.arange(M)
    plus[idx, idx] += shift
    minus[idx, idx] -= shift
    return np.concatenate([plus, minus]), active


def parameter_shift_grad(
    loss: Callable,
    theta: np.ndarray,
    x: float = 0.0,
    *,
    ansatz: Ansatz | None = None,
    gains: np.ndarray | None = None,
    batched: bool = False,
) -> np.ndarray:
    """Two-point shift rule for rotations exp(-i theta g P).

    d/dtheta_j L = g_j [L(theta + pi/(4 g_j) e_j) - L(theta - pi/(4 g_j) e_j)],
    forced to zero where g_j(x) == 0. With ``batched=True`` the loss receives
    all 2M shifted rows at once and returns 2M values; each row is still one
    independent evaluation.
    """
    theta = np.asarray(theta, dtype=float)
    if gains is None:
        gains = ansatz.gains(x) if ansatz is not None else np.ones(theta.size)
    gains = np.asarray(gains, dtype=float)
    rows, active = shift_table(theta, gains)
    if batched:
        vals = np.asarray(loss(rows), dtype=float)
    else:
        vals = np.array([loss(r) for r in rows], dtype=float)
    M = theta.size
    grad = gains * (vals[:M] - vals[M:])
    grad[~active] = 0.0
    return grad


def _rotate(psi: np.ndarray, op: tuple, angle: float) -> np.ndarray:
    kind, a, b = op
    c, s = math.cos(angle), math.sin(angle)
    if kind == "diag":
        return psi * (c - 1j * s * a)
    return c * psi - 1j * s * (b * psi[a])


def _apply_op(psi: np.ndarray, op: tuple) -> np.ndarray:
    kind, a, b = op
    if kind == "diag":
        return a * psi
    return b * psi[a]


def adjoint_gradient(ansatz: Ansatz, H: PauliSum, theta: np.ndarray, x: float = 0.0) -> tuple[float, np.ndarray]:
    """Exact loss and gradient by reverse sweep through the circuit.

    Uses dL/dtheta_j = 2 g_j Im <lambda_j| P_j |psi_j>, where psi_j is the state
    right after gate j and lambda_j the back-propagated H psi. Agrees with the
    shift rule for exact losses, at O(M) instead of O(M^2) cost.
    """
    theta = _check_theta(ansatz, theta)
    angles = theta * ansatz.gains(x)
    psi = prepare_batch(ansatz, theta[None, :], x)[0]
    lam = np.zeros_like(psi)
    for term in H.terms:
        lam += term.coeff * apply_pauli(psi, term.string)
    loss = float(np.vdot(psi, lam).real)
    gains = ansatz.gains(x)
    grad = np.zeros(ansatz.M)
    j = ansatz.M
    for op in reversed(ansatz._compiled):
        if op[0] == "fixed":
            Udg = FIXED_GATES[op[1]].conj().T
            psi = _apply_matrix(psi, Udg, op[2], ansatz.n)
            lam = _apply_matrix(lam, Udg, op[2], ansatz.n)
            continue
        j -= 1
        grad[j] = 2.0 * gains[j] * np.vdot(lam, _apply_op(psi, op)).imag
        psi = _rotate(psi, op, -angles[j])
        lam = _rotate(lam, op, -angles[j])
    return loss, grad


def _apply_matrix(amps: np.ndarray, U: np.ndarray, qubit: int, n: int) -> np.ndarray:
    t = amps.reshape(amps.shape[:-1] + (2 ** qubit, 2, 2 ** (n - qubit - 1)))
    return np.einsum("ab,...ibj->...iaj", U, t).reshape(amps.shape)


# --------------------------------------------------------------------------
# builders


def _ring_bonds(n: int) -> list[tuple[int, int]]:
    return [(i, (i + 1) % n) for i in range(n)]


def _layer(n: int, rotation: str, single: EncodingFn, two: EncodingFn) -> list[Gate]:
    gates = [Gate.rotation(PauliString.from_sparse(n, {i: rotation}), single) for i in range(n)]
    for c in "XYZ":
        for i, j in _ring_bonds(n):
            gates.append(Gate.rotation(PauliString.from_sparse(n, {i: c, j: c}), two))
    return gates


def build_hea(n: int, L: int, rotation: str = "Z", reference: str = "") -> Ansatz:
    """L layers of n single-qubit rotations followed by ring XX, YY and ZZ rotations.

    ``rotation`` picks the single-qubit axis; with "Z" every generator commutes
    with the Z-parity operator, with "X" every generator commutes with X-parity.
    """
    return build_meta_ansatz(n, L, [(CONSTANT_ONE, CONSTANT_ONE)] * max(L, 0), rotation, reference)


ENCODING_PRESETS = {
    "default": (EncodingFn.linear(1.0), CONSTANT_ONE),
    "constant": (CONSTANT_ONE, CONSTANT_ONE),
    "linear_all": (EncodingFn.linear(1.0), EncodingFn.linear(1.0)),
    "affine": (EncodingFn.affine(1.0, 1.0), CONSTANT_ONE),
}


def build_meta_ansatz(
    n: int,
    L: int,
    encoding_spec: Sequence[tuple[EncodingFn, EncodingFn]] | str | None = None,
    rotation: str = "Z",
    reference: str = "",
) -> Ansatz:
    """HEA layout whose layer l uses ``encoding_spec[l] = (single-qubit, two-qubit)`` encodings."""
    if n < 2:
        raise ValueError("ansatz needs n >= 2")
    if L < 1:
        raise ValueError("ansatz needs L >= 1")
    if rotation not in ("X", "Y", "Z"):
        raise ValueError(f"rotation axis must be X, Y or Z, got {rotation!r}")
    if encoding_spec is None:
        encoding_spec = "default"
    if isinstance(encoding_spec, str):
        try:
            encoding_spec = [ENCODING_PRESETS[encoding_spec]] * L
        except KeyError:
            raise ValueError(f"unknown encoding preset {encoding_spec!r}") from None
    encoding_spec = list(encoding_spec)
    if len(encoding_spec) != L:
        raise ValueError(f"encoding spec has {len(encoding_spec)} layers, expected {L}")
    gates: list[Gate] = []
    for single, two in encoding_spec:
        gates.extend(_layer(n, rotation, single, two))
    return Ansatz(n, tuple(gates), reference)
