"""Pauli-string Hamiltonians, the model families used for path tracking, and
dense spectral references.

Qubit ``i`` (0-based, left-most letter) maps to bit ``n - 1 - i`` of the
computational-basis index, so dense matrices agree with ``np.kron`` applied
left to right.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DENSE_LIMIT = 14
PAULI_LETTERS = "IXYZ"


class DenseLimitError(ValueError):
    """Raised when a dense 2^n x 2^n operation is requested beyond the limit."""


def _check_dense(n: int) -> None:
    if n > DENSE_LIMIT:
        raise DenseLimitError(f"n={n} exceeds the dense limit of {DENSE_LIMIT} qubits")


@dataclass(frozen=True)
class PauliString:
    letters: str

    def __post_init__(self):
        if not self.letters:
            raise ValueError("PauliString needs at least one qubit")
        bad = set(self.letters) - set(PAULI_LETTERS)
        if bad:
            raise ValueError(f"invalid Pauli letters {sorted(bad)} in {self.letters!r}")

    @classmethod
    def from_sparse(cls, n: int, ops: Mapping[int, str]) -> "PauliString":
        """Build from ``{qubit: letter}``; unspecified qubits are identity."""
        letters = ["I"] * n
        for q, c in ops.items():
            if not 0 <= q < n:
                raise ValueError(f"qubit {q} out of range for n={n}")
            letters[q] = c
        return cls("".join(letters))

    @property
    def n(self) -> int:
        return len(self.letters)

    @property
    def is_identity(self) -> bool:
        return set(self.letters) == {"I"}

    @property
    def x_mask(self) -> int:
        return _masks(self.letters)[0]

    @property
    def z_mask(self) -> int:
        return _masks(self.letters)[1]

    @property
    def n_y(self) -> int:
        return self.letters.count("Y")

    def multiply(self, other: "PauliString") -> tuple[complex, "PauliString"]:
        """Symbolic product ``self @ other`` as (phase, string)."""
        if other.n != self.n:
            raise ValueError("cannot multiply Pauli strings of different length")
        phase: complex = 1
        out = []
        for a, b in zip(self.letters, other.letters):
            p, c = _LETTER_PRODUCT[a, b]
            phase *= p
            out.append(c)
        return phase, PauliString("".join(out))

    def compatible(self, other: "PauliString") -> bool:
        """Qubit-wise commuting: equal letters wherever both are non-identity."""
        return all(a == "I" or b == "I" or a == b for a, b in zip(self.letters, other.letters))

    def __str__(self) -> str:
        return self.letters


_LETTER_PRODUCT: dict[tuple[str, str], tuple[complex, str]] = {}
for _a in PAULI_LETTERS:
    _LETTER_PRODUCT["I", _a] = (1, _a)
    _LETTER_PRODUCT[_a, "I"] = (1, _a)
    _LETTER_PRODUCT[_a, _a] = (1, "I")
for _a, _b, _c in (("X", "Y", "Z"), ("Y", "Z", "X"), ("Z", "X", "Y")):
    _LETTER_PRODUCT[_a, _b] = (1j, _c)
    _LETTER_PRODUCT[_b, _a] = (-1j, _c)


@lru_cache(maxsize=None)
def _masks(letters: str) -> tuple[int, int]:
    n = len(letters)
    xm = zm = 0
    for i, c in enumerate(letters):
        bit = 1 << (n - 1 - i)
        if c in "XY":
            xm |= bit
        if c in "ZY":
            zm |= bit
    return xm, zm


@lru_cache(maxsize=4096)
def pauli_action(letters: str) -> tuple[np.ndarray, np.ndarray]:
    """Index map and phases such that ``(P psi)[c] = phase[c] * psi[perm[c]]``.

    Uses X|b> = |b^1>, Z|b> = (-1)^b |b>, Y = iXZ.
    """
    n = len(letters)
    xm, zm = _masks(letters)
    idx = np.arange(2 ** n, dtype=np.int64)
    perm = idx ^ xm
    parity = np.zeros(2 ** n, dtype=np.int64)
    masked = perm & zm
    while np.any(masked):
        parity ^= masked & 1
        masked >>= 1
    phase = (1j ** letters.count("Y")) * (1 - 2 * parity)
    phase = phase.astype(np.complex128)
    perm.setflags(write=False)
    phase.setflags(write=False)
    return perm, phase


@dataclass(frozen=True)
class PauliTerm:
    coeff: float
    string: PauliString

    def __post_init__(self):
        c = self.coeff
        if isinstance(c, complex):
            if c.imag != 0:
                raise ValueError("PauliTerm coefficients must be real")
            object.__setattr__(self, "coeff", c.real)
        if not math.isfinite(float(self.coeff)):
            raise ValueError("PauliTerm coefficient must be finite")
        object.__setattr__(self, "coeff", float(self.coeff))


@dataclass(frozen=True)
class PauliSum:
    """Real-weighted sum of Pauli strings with duplicate strings merged.

    Terms whose merged coefficient is exactly zero are dropped, so e.g. the XY
    chain at x = 1 carries no YY terms at all.
    """

    n: int
    terms: tuple[PauliTerm, ...] = field(default=())

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("PauliSum needs n >= 1")
        merged: dict[str, float] = {}
        for t in self.terms:
            if t.string.n != self.n:
                raise ValueError(f"term {t.string} has {t.string.n} qubits, expected {self.n}")
            merged[t.string.letters] = merged.get(t.string.letters, 0.0) + t.coeff
        object.__setattr__(
            self,
            "terms",
            tuple(PauliTerm(c, PauliString(s)) for s, c in merged.items() if c != 0.0),
        )

    @classmethod
    def from_list(cls, n: int, items: Iterable[tuple[float, str]]) -> "PauliSum":
        return cls(n, tuple(PauliTerm(c, PauliString(s)) for c, s in items))

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __add__(self, other: "PauliSum") -> "PauliSum":
        if not isinstance(other, PauliSum):
            return NotImplemented
        if other.n != self.n:
            raise ValueError("cannot add PauliSums on different qubit counts")
        return PauliSum(self.n, self.terms + other.terms)

    def __mul__(self, c: float) -> "PauliSum":
        return PauliSum(self.n, tuple(PauliTerm(c * t.coeff, t.string) for t in self.terms))

    __rmul__ = __mul__

    def __neg__(self) -> "PauliSum":
        return -1.0 * self

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-other)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([t.coeff for t in self.terms], dtype=float)

    @property
    def strings(self) -> list[str]:
        return [t.string.letters for t in self.terms]

    def coefficient(self, letters: str) -> float:
        for t in self.terms:
            if t.string.letters == letters:
                return t.coeff
        return 0.0

    def to_dense(self) -> np.ndarray:
        _check_dense(self.n)
        dim = 2 ** self.n
        mat = np.zeros((dim, dim), dtype=np.complex128)
        cols = np.arange(dim)
        for t in self.terms:
            perm, phase = pauli_action(t.string.letters)
            # (P)[c, perm[c]] = phase[c]
            mat[cols, perm] += t.coeff * phase
        return mat

    def to_dict(self) -> dict:
        return {"n": self.n, "terms": [[t.coeff, t.string.letters] for t in self.terms]}

    def __str__(self) -> str:
        return " + ".join(f"{t.coeff:+g}*{t.string}" for t in self.terms) or "0"


@dataclass(frozen=True)
class HamiltonianFamily:
    """H(x) = h0 + x * h1 on ``domain``."""

    h0: PauliSum
    h1: PauliSum
    domain: tuple[float, float] = (-math.inf, math.inf)
    name: str = ""

    def __post_init__(self):
        if self.h0.n != self.h1.n:
            raise ValueError("h0 and h1 act on different qubit counts")
        lo, hi = self.domain
        if lo > hi:
            raise ValueError("empty family domain")

    @property
    def n(self) -> int:
        return self.h0.n

    def at(self, x: float) -> PauliSum:
        return self.h0 + float(x) * self.h1

    __call__ = at


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    ground_vector: np.ndarray
    first_excited_value: float
    eigenvectors: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])

    def ground_space(self, tol: float = 1e-8) -> np.ndarray:
        """Orthonormal basis (columns) of the ground eigenspace."""
        if self.eigenvectors is None:
            return self.ground_vector[:, None]
        k = int(np.sum(self.eigenvalues <= self.eigenvalues[0] + tol))
        return self.eigenvectors[:, :k]


def _fix_phase(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v) - 1e-12 * np.arange(v.size)))
    return v * (abs(v[k]) / v[k])


def exact_spectrum(H: PauliSum) -> Spectrum:
    _check_dense(H.n)
    w, v = np.linalg.eigh(H.to_dense())
    g = _fix_phase(v[:, 0])
    first = float(w[1]) if w.size > 1 else float(w[0])
    return Spectrum(eigenvalues=w, ground_vector=g, first_excited_value=first, eigenvectors=v)


def semi_norm(H: PauliSum) -> float:
    w = np.linalg.eigvalsh(_dense_checked(H))
    return float(max(w[-1] - w[0], 0.0))


def spectral_gap(H: PauliSum) -> float:
    w = np.linalg.eigvalsh(_dense_checked(H))
    if w.size < 2:
        return 0.0
    return float(max(w[1] - w[0], 0.0))


def _dense_checked(H: PauliSum) -> np.ndarray:
    _check_dense(H.n)
    return H.to_dense()


# --------------------------------------------------------------------------
# model builders


def _term(n: int, c: float, ops: Mapping[int, str]) -> PauliTerm:
    return PauliTerm(c, PauliString.from_sparse(n, ops))


def build_heisenberg_field(n: int, x: float) -> PauliSum:
    """-sum_i Z_i + x * sum_<ij> (XX + YY + ZZ) on a periodic ring."""
    if n < 2:
        raise ValueError("heisenberg_field needs n >= 2")
    terms = [_term(n, -1.0, {i: "Z"}) for i in range(n)]
    for i in range(n):
        j = (i + 1) % n
        for c in "XYZ":
            terms.append(_term(n, float(x), {i: c, j: c}))
    # n == 2: the wrap bond repeats (0, 1) and merges into a doubled coupling
    return PauliSum(n, tuple(terms))


def build_xy(n: int, x: float, J: float = 1.0) -> PauliSum:
    """-J [(1 + x) sum XX + (1 - x) sum YY], open chain."""
    if n < 2:
        raise ValueError("xy needs n >= 2")
    terms = []
    for i in range(n - 1):
        terms.append(_term(n, -J * (1.0 + x), {i: "X", i + 1: "X"}))
    for i in range(n - 1):
        terms.append(_term(n, -J * (1.0 - x), {i: "Y", i + 1: "Y"}))
    return PauliSum(n, tuple(terms))


def build_ising_jw(n: int, x: float, J: float = 1.0) -> PauliSum:
    """-J sum ZZ (ring) - x sum X - Y_1 X_2 ... X_{n-1} Y_n."""
    if n < 3:
        raise ValueError("ising_jw needs n >= 3")
    terms = [_term(n, -J, {i: "Z", (i + 1) % n: "Z"}) for i in range(n)]
    terms += [_term(n, -float(x), {i: "X"}) for i in range(n)]
    string = {0: "Y", n - 1: "Y"}
    string.update({i: "X" for i in range(1, n - 1)})
    terms.append(_term(n, -1.0, string))
    return PauliSum(n, tuple(terms))


MODELS: dict[str, Callable[..., PauliSum]] = {
    "heisenberg_field": lambda n, x, J=1.0: build_heisenberg_field(n, x),
    "xy": build_xy,
    "ising_jw": build_ising_jw,
}


def build_model(name: str, n: int, x: float, J: float = 1.0) -> PauliSum:
    try:
        builder = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return builder(n, x, J)


def model_family(
    name: str, n: int, J: float = 1.0, domain: Sequence[float] = (-math.inf, math.inf)
) -> HamiltonianFamily:
    """Split a builder into H(x) = h0 + x h1; all three builders are affine in x."""
    h0 = build_model(name, n, 0.0, J)
    h1 = build_model(name, n, 1.0, J) - h0
    return HamiltonianFamily(h0, h1, (float(domain[0]), float(domain[1])), name)
