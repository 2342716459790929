"""Entropies and mutual informations, all in bits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    TAU_TRACE,
    Channel,
    DensityOperator,
    Povm,
    PureState,
    Register,
    _labels_of,
    partial_trace,
)
from .errors import DimensionError, RegisterError, ValidationError

__all__ = [
    "EIG_FLOOR",
    "TAU_MI",
    "Ensemble",
    "entropy_from_eigenvalues",
    "matrix_entropy",
    "von_neumann_entropy",
    "shannon_entropy",
    "conditional_entropy",
    "mutual_information",
    "holevo_quantity",
    "basis_entropies",
    "uncertainty_average",
]

# eigenvalues below this contribute nothing (0 log 0 := 0)
EIG_FLOOR = 1e-15
TAU_MI = 1e-9


def entropy_from_eigenvalues(w) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > EIG_FLOOR]
    return float(-np.sum(w * np.log2(w))) + 0.0


def matrix_entropy(m: np.ndarray) -> float:
    """Entropy of a bare Hermitian matrix, no validation."""
    return entropy_from_eigenvalues(np.linalg.eigvalsh(m))


def _as_state(rho) -> DensityOperator:
    if isinstance(rho, DensityOperator):
        return rho
    if isinstance(rho, PureState):
        return rho.density()
    m = np.asarray(rho, dtype=complex)
    return DensityOperator([Register("_", m.shape[0])], m)


def von_neumann_entropy(rho) -> float:
    """S(rho) = -sum lambda log2 lambda over eigenvalues."""
    return matrix_entropy(_as_state(rho).matrix)


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p < -TAU_TRACE) or abs(p.sum() - 1.0) > TAU_TRACE:
        raise ValidationError(f"not a probability vector (sum {p.sum()!r}, min {p.min()!r})")
    return entropy_from_eigenvalues(p)


def conditional_entropy(joint: DensityOperator, given) -> float:
    """H(rest | given) = H(joint) - H(given).

    May be negative for quantum joints; when every conditioned register is
    classical the result is checked to be non-negative.
    """
    given = _labels_of(given)
    for lab in given:
        joint.index(lab)
    value = von_neumann_entropy(joint) - von_neumann_entropy(partial_trace(joint, given))
    rest = [r for r in joint.registers if r.label not in given]
    if rest and all(r.classical for r in rest) and value < -TAU_MI:
        raise ValidationError(f"classical conditional entropy is negative ({value:.3e})")
    return value


def mutual_information(rho: DensityOperator, part_a, part_b) -> float:
    """I(A:B) = H(A) + H(B) - H(AB) for a bipartition of ``rho``'s registers."""
    a, b = _labels_of(part_a), _labels_of(part_b)
    if not a or not b:
        raise RegisterError("both parts of the bipartition must be non-empty")
    if set(a) & set(b):
        raise RegisterError(f"parts overlap: {sorted(set(a) & set(b))}")
    if sorted(a + b) != sorted(rho.labels):
        raise RegisterError(f"parts {a} | {b} do not partition registers {list(rho.labels)}")
    return (
        von_neumann_entropy(partial_trace(rho, a))
        + von_neumann_entropy(partial_trace(rho, b))
        - von_neumann_entropy(rho)
    )


@dataclass(frozen=True)
class Ensemble:
    """Finite list of ``(probability, state)`` pairs on one register."""

    entries: tuple

    def __post_init__(self):
        entries = tuple((float(p), _as_state(s)) for p, s in self.entries)
        if not entries:
            raise ValidationError("ensemble must have at least one entry")
        probs = np.array([p for p, _ in entries])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > TAU_TRACE:
            raise ValidationError(f"ensemble probabilities must be non-negative and sum to 1 (sum {probs.sum()!r})")
        dims = {s.dim for _, s in entries}
        if len(dims) != 1:
            raise DimensionError(f"ensemble states have differing dimensions {sorted(dims)}")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_arrays(cls, probs, states, register="X") -> "Ensemble":
        out = []
        for p, s in zip(probs, states):
            s = np.asarray(s, dtype=complex)
            if s.ndim == 1:
                s = np.outer(s, s.conj())
            out.append((p, DensityOperator([Register(register, s.shape[0])], s)))
        return cls(tuple(out))

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.entries])

    @property
    def states(self) -> list:
        return [s for _, s in self.entries]

    @property
    def dim(self) -> int:
        return self.entries[0][1].dim

    def average(self) -> DensityOperator:
        m = sum(p * s.matrix for p, s in self.entries)
        return DensityOperator(self.entries[0][1].registers, m)


def holevo_quantity(ens: Ensemble, ch: Channel | None = None) -> float:
    """S(ch(avg)) - sum_w p(w) S(ch(state_w)); identity channel when ``ch`` is None."""
    if ch is not None and ens.dim != ch.dim_in:
        raise DimensionError(f"ensemble dimension {ens.dim} does not match channel input {ch.dim_in}")

    def out(m):
        return m if ch is None else ch.act(m)

    avg = sum(p * s.matrix for p, s in ens.entries)
    value = matrix_entropy(out(avg))
    for p, s in ens.entries:
        if p > 0:
            value -= p * matrix_entropy(out(s.matrix))
    return value


def basis_entropies(psi, basis0: Povm, basis1: Povm) -> tuple:
    """Outcome entropies (H0, H1) of measuring ``psi`` in two rank-one bases."""
    for name, b in (("basis0", basis0), ("basis1", basis1)):
        if not b.is_rank_one_basis():
            raise ValidationError(f"{name} is not a rank-one orthonormal basis")
    v = psi.vector if isinstance(psi, PureState) else np.asarray(psi, dtype=complex)
    if v.size != basis0.dim or basis0.dim != basis1.dim:
        raise DimensionError("state and bases must share one dimension")
    out = []
    for b in (basis0, basis1):
        probs = np.array([np.vdot(v, E @ v).real for E in b.elements])
        out.append(shannon_entropy(np.clip(probs, 0, None) / probs.sum()))
    return tuple(out)


def uncertainty_average(psi, basis0: Povm, basis1: Povm) -> float:
    """Average outcome entropy 1/2 [H(M|G=0) + H(M|G=1)] over the two bases."""
    h0, h1 = basis_entropies(psi, basis0, basis1)
    return 0.5 * (h0 + h1)
