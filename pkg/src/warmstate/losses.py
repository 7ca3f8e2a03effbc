"""Exact and finite-shot energy losses.

The finite-shot model groups qubit-wise compatible Pauli terms, splits the shot
budget uniformly, and perturbs each group's exact energy by an independent
Gaussian with variance V_g = sum_a c_a^2 (1 - <P_a>^2) / S_a.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pauli_model import HamiltonianFamily, PauliSum
from .statevector import (
    Ansatz,
    StateVector,
    expectation,
    expectation_batch,
    pauli_expectations,
    prepare,
    prepare_batch,
)

_CHUNK = 1024


def vqe_loss(ansatz: Ansatz, H: PauliSum, theta: np.ndarray, x: float = 0.0) -> float:
    return expectation(prepare(ansatz, theta, x), H)


def meta_vqe_loss(ansatz: Ansatz, family: HamiltonianFamily, xs: Sequence[float], theta: np.ndarray) -> float:
    xs = list(xs)
    if not xs:
        raise ValueError("meta loss needs at least one training point")
    return float(np.mean([expectation(prepare(ansatz, theta, x), family.at(x)) for x in xs]))


def exact_loss_batch(ansatz: Ansatz, H: PauliSum, thetas: np.ndarray, x: float = 0.0) -> np.ndarray:
    """Exact losses for many parameter rows, evaluated in memory-bounded chunks."""
    thetas = np.atleast_2d(thetas)
    out = np.empty(thetas.shape[0])
    for lo in range(0, thetas.shape[0], _CHUNK):
        hi = lo + _CHUNK
        out[lo:hi] = expectation_batch(prepare_batch(ansatz, thetas[lo:hi], x), H)
    return out


def meta_loss_batch(
    ansatz: Ansatz, family: HamiltonianFamily, xs: Sequence[float], thetas: np.ndarray
) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    total = np.zeros(thetas.shape[0])
    for x in xs:
        total += exact_loss_batch(ansatz, family.at(x), thetas, x)
    return total / len(xs)


# --------------------------------------------------------------------------
# measurement grouping


@dataclass(frozen=True)
class MeasurementGroup:
    term_indices: tuple[int, ...]
    basis_signature: str


def group_terms(H: PauliSum) -> list[MeasurementGroup]:
    """Greedy first-fit grouping by qubit-wise compatibility, in term order."""
    if len(H) == 0:
        raise ValueError("cannot group an empty PauliSum")
    members: list[list[int]] = []
    signatures: list[list[str]] = []
    for idx, term in enumerate(H.terms):
        letters = term.string.letters
        for g, sig in enumerate(signatures):
            if all(a == "I" or b == "I" or a == b for a, b in zip(sig, letters)):
                members[g].append(idx)
                for q, c in enumerate(letters):
                    if c != "I":
                        sig[q] = c
                break
        else:
            members.append([idx])
            signatures.append(list(letters))
    return [MeasurementGroup(tuple(m), "".join(s)) for m, s in zip(members, signatures)]


def _balanced(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


@dataclass(frozen=True)
class ShotPlan:
    n_shots: int
    groups: tuple[MeasurementGroup, ...]
    group_shots: tuple[int, ...]
    term_shots: tuple[tuple[int, ...], ...]

    @classmethod
    def uniform(cls, H: PauliSum, n_shots: int) -> "ShotPlan":
        """Floor-balanced shots across groups, then across terms within each group."""
        n_shots = int(n_shots)
        groups = tuple(group_terms(H))
        g_shots = _balanced(n_shots, len(groups))
        t_shots = []
        for g, s in zip(groups, g_shots):
            per = _balanced(s, len(g.term_indices))
            if min(per) < 1:
                raise ValueError(f"{n_shots} shots leave some term with no measurements")
            t_shots.append(tuple(per))
        return cls(n_shots, groups, tuple(g_shots), tuple(t_shots))

    def covers(self, H: PauliSum) -> bool:
        idx = sorted(i for g in self.groups for i in g.term_indices)
        return idx == list(range(len(H)))

    def shots_per_term(self, n_terms: int) -> np.ndarray:
        out = np.zeros(n_terms)
        for g, per in zip(self.groups, self.term_shots):
            out[list(g.term_indices)] = per
        return out

    def group_matrix(self, n_terms: int) -> np.ndarray:
        """Indicator matrix of shape (T, G) mapping terms to groups."""
        out = np.zeros((n_terms, len(self.groups)))
        for g, grp in enumerate(self.groups):
            out[list(grp.term_indices), g] = 1.0
        return out


@dataclass
class NoiseStream:
    """Counter-based random stream: draw ``counter`` depends only on (seed, key, counter)."""

    seed: int
    counter: int = 0
    key: tuple[int, ...] = ()

    def reserve(self, count: int = 1) -> range:
        start = self.counter
        self.counter += count
        return range(start, start + count)

    def generator(self, counter: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(*self.key, counter))
        return np.random.default_rng(ss)

    def next_generator(self) -> np.random.Generator:
        return self.generator(self.reserve(1).start)

    def child(self, *key: int) -> "NoiseStream":
        return NoiseStream(self.seed, 0, self.key + tuple(key))


def group_variance(
    state: StateVector | np.ndarray, H: PauliSum, group: MeasurementGroup, term_shots: Sequence[int]
) -> float:
    shots = np.asarray(term_shots, dtype=float)
    if np.any(shots < 1):
        raise ValueError("every term in a group needs at least one shot")
    idx = list(group.term_indices)
    exps = pauli_expectations(state, H)[..., idx]
    c = H.coeffs[idx]
    var = np.sum(c ** 2 * np.clip(1.0 - exps ** 2, 0.0, None) / shots, axis=-1)
    return float(var) if np.ndim(var) == 0 else var


def _grouped_moments(exps: np.ndarray, H: PauliSum, plan: ShotPlan) -> tuple[np.ndarray, np.ndarray]:
    c = H.coeffs
    T = len(H)
    G = plan.group_matrix(T)
    energies = (exps * c) @ G
    variances = (c ** 2 * np.clip(1.0 - exps ** 2, 0.0, None) / plan.shots_per_term(T)) @ G
    return energies, variances


def group_statistics(state: StateVector | np.ndarray, H: PauliSum, plan: ShotPlan) -> tuple[np.ndarray, np.ndarray]:
    """Per-group exact energies L_g and shot-noise variances V_g."""
    if not plan.covers(H):
        raise ValueError("shot plan does not match the Hamiltonian's terms")
    return _grouped_moments(pauli_expectations(state, H), H, plan)


def noisy_energy(state: StateVector | np.ndarray, H: PauliSum, plan: ShotPlan, stream: NoiseStream) -> float:
    energies, variances = group_statistics(state, H, plan)
    xi = stream.next_generator().standard_normal(len(plan.groups))
    return float(np.sum(energies + np.sqrt(variances) * xi))


@dataclass
class NoisyLoss:
    """Finite-shot loss; every call (and every row of a batch call) is one fresh evaluation.

    For a family, the loss averages noisy energies over ``xs`` with an
    independent ``n_shots`` budget per training point.
    """

    ansatz: Ansatz
    target: PauliSum | HamiltonianFamily
    n_shots: int
    stream: NoiseStream
    xs: tuple[float, ...] = (0.0,)
    _plans: dict = field(default_factory=dict, repr=False)

    def _points(self, xs: Sequence[float] | None) -> list[tuple[float, PauliSum, ShotPlan]]:
        xs = tuple(self.xs if xs is None else xs)
        if not xs:
            raise ValueError("need at least one evaluation point")
        out = []
        for x in xs:
            if x not in self._plans:
                H = self.target.at(x) if isinstance(self.target, HamiltonianFamily) else self.target
                self._plans[x] = (H, ShotPlan.uniform(H, self.n_shots))
            H, plan = self._plans[x]
            out.append((x, H, plan))
        return out

    def batch(self, thetas: np.ndarray, xs: Sequence[float] | None = None) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        B = thetas.shape[0]
        points = self._points(xs)
        counters = self.stream.reserve(B)
        n_groups = [len(plan.groups) for _, _, plan in points]
        xi = np.stack([self.stream.generator(c).standard_normal(sum(n_groups)) for c in counters])
        total = np.zeros(B)
        offset = 0
        for (x, H, plan), G in zip(points, n_groups):
            for lo in range(0, B, _CHUNK):
                hi = min(lo + _CHUNK, B)
                exps = pauli_expectations(prepare_batch(self.ansatz, thetas[lo:hi], x), H)
                e, v = _grouped_moments(exps, H, plan)
                total[lo:hi] += np.sum(e + np.sqrt(v) * xi[lo:hi, offset:offset + G], axis=1)
            offset += G
        return total / len(points)

    def __call__(self, theta: np.ndarray, xs: Sequence[float] | None = None) -> float:
        return float(self.batch(np.asarray(theta)[None, :], xs)[0])


def noisy_loss_evaluator(
    ansatz: Ansatz,
    target: PauliSum | HamiltonianFamily,
    plan: ShotPlan | int,
    stream: NoiseStream,
    xs: Sequence[float] = (0.0,),
) -> NoisyLoss:
    n_shots = plan.n_shots if isinstance(plan, ShotPlan) else int(plan)
    if n_shots < 1:
        raise ValueError("n_shots must be positive")
    return NoisyLoss(ansatz, target, n_shots, stream, tuple(float(x) for x in xs))


def exact_loss_evaluator(
    ansatz: Ansatz, target: PauliSum | HamiltonianFamily, xs: Sequence[float] = (0.0,)
) -> Callable[[np.ndarray], np.ndarray]:
    """Batched exact counterpart of :func:`noisy_loss_evaluator`."""
    xs = tuple(float(x) for x in xs)
    if isinstance(target, HamiltonianFamily):
        return lambda thetas: meta_loss_batch(ansatz, target, xs, thetas)
    return lambda thetas: exact_loss_batch(ansatz, target, thetas, xs[0])
