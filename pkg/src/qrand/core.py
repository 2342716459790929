"""Dense finite-dimensional quantum states, channels and measurements.

Every state lives on an ordered tuple of labelled :class:`Register` objects.
Register order is never changed implicitly; use :func:`permute` when a
different factor order is wanted.  All values are immutable once built.

Example
-------

>>> phi = maximally_entangled_state(2)
>>> rho = phi.density()
>>> partial_trace(rho, ["X"]).matrix.real.round(3)
array([[0.5, 0. ],
       [0. , 0.5]])
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DimensionError, RegisterError, ValidationError

__all__ = [
    "TAU_HERM",
    "TAU_PSD",
    "TAU_TRACE",
    "TAU_POVM",
    "TAU_PROB",
    "strict_mode",
    "strict_checks",
    "TAU_CHAN",
    "Register",
    "DensityOperator",
    "PureState",
    "Povm",
    "Channel",
    "Outcome",
    "max_dim",
    "tensor",
    "partial_trace",
    "permute",
    "relabel",
    "dephase",
    "apply",
    "apply_map",
    "measure",
    "classical_state",
    "computational_basis",
    "fourier_basis",
    "basis_povm",
    "maximally_entangled_state",
    "example_channel_F",
    "identity_channel",
    "is_qc",
    "is_cq",
    "haar_random_unitary",
    "random_pure_state",
    "random_density",
    "trace_distance",
    "channel_from_json",
    "channel_to_json",
    "load_channel",
]

TAU_HERM = 1e-9
TAU_PSD = 1e-9
TAU_TRACE = 1e-9
TAU_POVM = 1e-9
TAU_PROB = 1e-12
TAU_CHAN = 1e-9

DEFAULT_MAX_DIM = 4096


_STRICT_COUNT = [0]


def strict_mode() -> bool:
    """Whether internally built states are re-validated (``QRAND_STRICT=1``)."""
    return os.environ.get("QRAND_STRICT", "0") not in ("", "0")


def strict_checks() -> int:
    """Number of internally built states validated in strict mode so far."""
    return _STRICT_COUNT[0]


def max_dim() -> int:
    """Largest total Hilbert-space dimension a simulation may track.

    Overridable through the ``QRAND_MAX_DIM`` environment variable.
    """
    raw = os.environ.get("QRAND_MAX_DIM")
    if raw is None:
        return DEFAULT_MAX_DIM
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValidationError(f"QRAND_MAX_DIM must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValidationError(f"QRAND_MAX_DIM must be positive, got {value}")
    return value


@dataclass(frozen=True)
class Register:
    """A labelled tensor factor.  ``classical`` marks computational-basis data."""

    label: str
    dim: int
    classical: bool = False

    def __post_init__(self):
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValidationError(f"register {self.label!r}: dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))

    def with_label(self, label: str) -> "Register":
        return Register(label, self.dim, self.classical)


def _check_unique(registers: Sequence[Register]) -> None:
    labels = [r.label for r in registers]
    if len(set(labels)) != len(labels):
        raise RegisterError(f"duplicate register labels: {labels}")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


# --- raw tensor helpers -----------------------------------------------------


def _permute_matrix(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors of a square matrix; ``perm[i]`` is the old index of new factor i."""
    n = len(dims)
    if list(perm) == list(range(n)):
        return m
    D = int(np.prod(dims))
    t = m.reshape(tuple(dims) * 2)
    t = t.transpose(list(perm) + [n + p for p in perm])
    return t.reshape(D, D)


def _front(m: np.ndarray, dims: Sequence[int], idx: Sequence[int]):
    """Bring factors ``idx`` to the front; returns tensor of shape (dt, rest, dt, rest)."""
    n = len(dims)
    rest = [i for i in range(n) if i not in idx]
    perm = list(idx) + rest
    dt = int(np.prod([dims[i] for i in idx])) if idx else 1
    dr = int(np.prod([dims[i] for i in rest])) if rest else 1
    return _permute_matrix(m, dims, perm).reshape(dt, dr, dt, dr), rest


def _clean(m: np.ndarray, what: str = "state") -> np.ndarray:
    """Hermitize, clip tiny negative eigenvalues and renormalize.

    Eigenvalues below ``-TAU_PSD`` are a genuine error, not roundoff.
    """
    m = 0.5 * (m + m.conj().T)
    tr = np.trace(m).real
    if tr <= 0:
        raise ValidationError(f"{what}: non-positive trace {tr:.3e}")
    m = m / tr
    w, v = np.linalg.eigh(m)
    if w[0] < -TAU_PSD:
        raise ValidationError(f"{what}: eigenvalue {w[0]:.3e} below -{TAU_PSD:g}")
    if w[0] < 0:
        w = np.clip(w, 0.0, None)
        m = (v * w) @ v.conj().T
        m = m / np.trace(m).real
    return m


@dataclass(frozen=True)
class DensityOperator:
    """Positive unit-trace operator on an ordered list of registers."""

    registers: tuple
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_unique(regs)
        object.__setattr__(self, "registers", regs)
        m = np.asarray(self.matrix, dtype=complex)
        D = int(np.prod([r.dim for r in regs])) if regs else 1
        if m.shape != (D, D):
            raise DimensionError(f"matrix shape {m.shape} does not match register dims {self.dims} (side {D})")
        herm = np.max(np.abs(m - m.conj().T)) if D else 0.0
        if herm > TAU_HERM:
            raise ValidationError(f"state is not Hermitian (deviation {herm:.3e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TAU_TRACE:
            raise ValidationError(f"state trace {tr!r} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
        if lo < -TAU_PSD:
            raise ValidationError(f"state has negative eigenvalue {lo:.3e}")
        for i, r in enumerate(regs):
            if r.classical:
                t, _ = _front(m, self.dims, [i])
                off = t.copy()
                for k in range(r.dim):
                    off[k, :, k, :] = 0
                if off.size and np.max(np.abs(off)) > TAU_HERM:
                    raise ValidationError(f"classical register {r.label!r} carries coherences")
        object.__setattr__(self, "matrix", _readonly(m))

    @classmethod
    def _trusted(cls, registers, matrix) -> "DensityOperator":
        """Build without validation (internal fast path); validated anyway in strict mode."""
        if strict_mode():
            _STRICT_COUNT[0] += 1
            return cls(registers, matrix)
        obj = object.__new__(cls)
        object.__setattr__(obj, "registers", tuple(registers))
        object.__setattr__(obj, "matrix", _readonly(matrix))
        return obj

    @property
    def dims(self) -> tuple:
        return tuple(r.dim for r in self.registers)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims)) if self.registers else 1

    @property
    def labels(self) -> tuple:
        return tuple(r.label for r in self.registers)

    def index(self, label) -> int:
        label = label.label if isinstance(label, Register) else label
        try:
            return self.labels.index(label)
        except ValueError:
            raise RegisterError(f"unknown register {label!r}; state has {list(self.labels)}") from None

    def register(self, label) -> Register:
        return self.registers[self.index(label)]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True)
class PureState:
    """Unit vector on an ordered list of registers."""

    registers: tuple
    vector: np.ndarray = field(repr=False)

    def __post_init__(self):
        regs = tuple(self.registers)
        _check_unique(regs)
        object.__setattr__(self, "registers", regs)
        v = np.asarray(self.vector, dtype=complex).reshape(-1)
        D = int(np.prod([r.dim for r in regs])) if regs else 1
        if v.shape != (D,):
            raise DimensionError(f"vector length {v.size} does not match register dims (product {D})")
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > TAU_TRACE:
            raise ValidationError(f"state vector norm {nrm!r} differs from 1")
        v = _readonly(v)
        object.__setattr__(self, "vector", v)

    @property
    def dims(self) -> tuple:
        return tuple(r.dim for r in self.registers)

    @property
    def labels(self) -> tuple:
        return tuple(r.label for r in self.registers)

    def density(self) -> DensityOperator:
        v = self.vector
        return DensityOperator._trusted(self.registers, np.outer(v, v.conj()))


@dataclass(frozen=True)
class Povm:
    """Positive operator-valued measure; ``outcomes[i]`` labels ``elements[i]``."""

    elements: tuple
    outcomes: tuple = None

    def __post_init__(self):
        els = tuple(_readonly(e) for e in self.elements)
        if not els:
            raise ValidationError("POVM needs at least one element")
        d = els[0].shape[0]
        total = np.zeros((d, d), dtype=complex)
        for i, e in enumerate(els):
            if e.shape != (d, d):
                raise DimensionError(f"POVM element {i} has shape {e.shape}, expected {(d, d)}")
            if np.max(np.abs(e - e.conj().T)) > TAU_HERM:
                raise ValidationError(f"POVM element {i} is not Hermitian")
            if np.linalg.eigvalsh(e)[0] < -TAU_PSD:
                raise ValidationError(f"POVM element {i} is not positive semidefinite")
            total += e
        dev = np.max(np.abs(total - np.eye(d)))
        if dev > TAU_POVM:
            raise ValidationError(f"POVM elements sum to identity only within {dev:.3e}")
        outs = tuple(range(len(els))) if self.outcomes is None else tuple(self.outcomes)
        if len(outs) != len(els):
            raise ValidationError("POVM outcome labels and elements differ in number")
        if len(set(outs)) != len(outs):
            raise ValidationError("POVM outcome labels must be distinct")
        object.__setattr__(self, "elements", els)
        object.__setattr__(self, "outcomes", outs)

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    def __len__(self):
        return len(self.elements)

    def is_rank_one_basis(self) -> bool:
        """True if the elements are d orthogonal rank-one projectors."""
        if len(self.elements) != self.dim:
            return False
        return all(np.allclose(e @ e, e, atol=1e-9) and abs(np.trace(e).real - 1) < 1e-9 for e in self.elements)


VARIANTS = ("kraus", "qc", "cq", "classical")


@dataclass(frozen=True)
class Channel:
    """A quantum operation in one of four concrete forms.

    ``data`` depends on ``variant``:

    * ``"kraus"``: tuple of ``dim_out x dim_in`` Kraus matrices
    * ``"qc"``: a :class:`Povm` on the input; output is the classical outcome index
    * ``"cq"``: tuple of ``dim_out x dim_out`` output states, one per input letter
    * ``"classical"``: ``dim_out x dim_in`` column-stochastic matrix
    """

    variant: str
    data: Any
    input: Register
    output: Register

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown channel variant {self.variant!r}")
        din, dout = self.input.dim, self.output.dim
        if self.variant == "kraus":
            ops = tuple(_readonly(k) for k in self.data)
            if not ops:
                raise ValidationError("Kraus channel needs at least one operator")
            acc = np.zeros((din, din), dtype=complex)
            for i, k in enumerate(ops):
                if k.shape != (dout, din):
                    raise DimensionError(f"Kraus operator {i} has shape {k.shape}, expected {(dout, din)}")
                acc += k.conj().T @ k
            dev = np.max(np.abs(acc - np.eye(din)))
            if dev > TAU_POVM:
                raise ValidationError(f"Kraus operators are not trace preserving (sum K^dag K off identity by {dev:.3e})")
            object.__setattr__(self, "data", ops)
        elif self.variant == "qc":
            if not isinstance(self.data, Povm):
                raise ValidationError("qc channel data must be a Povm")
            if self.data.dim != din or len(self.data) != dout:
                raise DimensionError(
                    f"qc channel: POVM of dim {self.data.dim} with {len(self.data)} outcomes "
                    f"does not match dim_in={din}, dim_out={dout}"
                )
            if not self.output.classical:
                object.__setattr__(self, "output", Register(self.output.label, dout, True))
        elif self.variant == "cq":
            states = tuple(_readonly(s) for s in self.data)
            if len(states) != din:
                raise DimensionError(f"cq channel needs {din} output states, got {len(states)}")
            for i, s in enumerate(states):
                try:
                    DensityOperator((Register("_", dout),), s)
                except (ValidationError, DimensionError) as exc:
                    raise ValidationError(f"cq output state {i}: {exc}") from None
            object.__setattr__(self, "data", states)
        else:
            P = np.asarray(self.data, dtype=float)
            if P.shape != (dout, din):
                raise DimensionError(f"stochastic matrix has shape {P.shape}, expected {(dout, din)}")
            if np.any(P < -TAU_TRACE) or np.max(np.abs(P.sum(axis=0) - 1)) > TAU_TRACE:
                raise ValidationError("classical channel matrix columns must be probability vectors")
            P = np.clip(P, 0.0, None)
            P.setflags(write=False)
            object.__setattr__(self, "data", P)
            if not self.output.classical:
                object.__setattr__(self, "output", Register(self.output.label, dout, True))

    # constructors -----------------------------------------------------------

    @classmethod
    def kraus(cls, ops, input="X", output="Y") -> "Channel":
        ops = [np.asarray(k, dtype=complex) for k in ops]
        dout, din = ops[0].shape
        return cls("kraus", ops, _reg(input, din), _reg(output, dout))

    @classmethod
    def qc(cls, povm: Povm, input="X", output="Y") -> "Channel":
        return cls("qc", povm, _reg(input, povm.dim), _reg(output, len(povm), True))

    @classmethod
    def cq(cls, states, input="X", output="Y") -> "Channel":
        states = [np.asarray(s, dtype=complex) for s in states]
        return cls("cq", states, _reg(input, len(states)), _reg(output, states[0].shape[0]))

    @classmethod
    def classical(cls, matrix, input="X", output="Y") -> "Channel":
        P = np.asarray(matrix, dtype=float)
        return cls("classical", P, _reg(input, P.shape[1]), _reg(output, P.shape[0], True))

    @property
    def dim_in(self) -> int:
        return self.input.dim

    @property
    def dim_out(self) -> int:
        return self.output.dim

    def kraus_operators(self) -> list:
        """Kraus representation of any variant."""
        din, dout = self.dim_in, self.dim_out
        if self.variant == "kraus":
            return list(self.data)
        ops = []
        if self.variant == "qc":
            for y, E in enumerate(self.data.elements):
                w, v = np.linalg.eigh(E)
                for lam, vec in zip(w, v.T):
                    if lam > 1e-14:
                        K = np.zeros((dout, din), dtype=complex)
                        K[y, :] = np.sqrt(lam) * vec.conj()
                        ops.append(K)
        elif self.variant == "cq":
            for x, s in enumerate(self.data):
                w, v = np.linalg.eigh(s)
                for lam, vec in zip(w, v.T):
                    if lam > 1e-14:
                        K = np.zeros((dout, din), dtype=complex)
                        K[:, x] = np.sqrt(lam) * vec
                        ops.append(K)
        else:
            for x in range(din):
                for y in range(dout):
                    if self.data[y, x] > 0:
                        K = np.zeros((dout, din), dtype=complex)
                        K[y, x] = np.sqrt(self.data[y, x])
                        ops.append(K)
        return ops

    def act(self, X: np.ndarray) -> np.ndarray:
        """Apply the linear map to a bare ``dim_in x dim_in`` matrix (no validation)."""
        X = np.asarray(X, dtype=complex)
        t = _act_tensor(self, X.reshape(self.dim_in, 1, self.dim_in, 1))
        return t.reshape(self.dim_out, self.dim_out)

    def with_registers(self, input=None, output=None) -> "Channel":
        inp = self.input if input is None else _reg(input, self.dim_in, self.input.classical)
        out = self.output if output is None else _reg(output, self.dim_out, self.output.classical)
        obj = object.__new__(Channel)
        for k, v in (("variant", self.variant), ("data", self.data), ("input", inp), ("output", out)):
            object.__setattr__(obj, k, v)
        return obj


def _reg(r, dim, classical=False) -> Register:
    if isinstance(r, Register):
        if r.dim != dim:
            raise DimensionError(f"register {r.label!r} has dim {r.dim}, expected {dim}")
        return r
    return Register(str(r), dim, classical)


def _act_tensor(ch: Channel, t: np.ndarray) -> np.ndarray:
    """Channel on the first factor of a (din, rest, din, rest) tensor."""
    dout = ch.dim_out
    dr = t.shape[1]
    if ch.variant == "kraus":
        out = np.zeros((dout, dr, dout, dr), dtype=complex)
        for K in ch.data:
            out += np.einsum("ka,aibj,lb->kilj", K, t, K.conj(), optimize=True)
        return out
    if ch.variant == "qc":
        out = np.zeros((dout, dr, dout, dr), dtype=complex)
        for y, E in enumerate(ch.data.elements):
            out[y, :, y, :] = np.einsum("ba,aibj->ij", E, t)
        return out
    diag = np.stack([t[x, :, x, :] for x in range(ch.dim_in)])  # (din, dr, dr)
    if ch.variant == "cq":
        S = np.stack(ch.data)  # (din, dout, dout)
        return np.einsum("xkl,xij->kilj", S, diag)
    out = np.zeros((dout, dr, dout, dr), dtype=complex)
    P = ch.data
    for y in range(dout):
        out[y, :, y, :] = np.einsum("x,xij->ij", P[y], diag)
    return out


# --- operations ----------------------------------------------------------------


def tensor(a: DensityOperator, b: DensityOperator) -> DensityOperator:
    """Kronecker product on the concatenated register list."""
    clash = set(a.labels) & set(b.labels)
    if clash:
        raise RegisterError(f"register labels collide: {sorted(clash)}")
    return DensityOperator._trusted(a.registers + b.registers, np.kron(a.matrix, b.matrix))


def _labels_of(items) -> list:
    if isinstance(items, (str, Register)):
        items = [items]
    return [r.label if isinstance(r, Register) else r for r in items]


def partial_trace(rho: DensityOperator, keep) -> DensityOperator:
    """Reduced state on ``keep``; kept registers stay in their original order."""
    want = _labels_of(keep)
    for lab in want:
        rho.index(lab)
    idx = [i for i, lab in enumerate(rho.labels) if lab in want]
    t, _ = _front(rho.matrix, rho.dims, idx)
    red = np.einsum("ajbj->ab", t)
    return DensityOperator._trusted([rho.registers[i] for i in idx], red)


def permute(rho: DensityOperator, order) -> DensityOperator:
    """Explicitly reorder tensor factors; ``order`` lists every label once."""
    labels = _labels_of(order)
    if sorted(labels) != sorted(rho.labels):
        raise RegisterError(f"permutation {labels} is not a reordering of {list(rho.labels)}")
    perm = [rho.index(lab) for lab in labels]
    m = _permute_matrix(rho.matrix, rho.dims, perm)
    return DensityOperator._trusted([rho.registers[i] for i in perm], m)


def relabel(rho: DensityOperator, mapping: Mapping[str, Any]) -> DensityOperator:
    """Rename registers; values may be labels or full Register objects of equal dim."""
    regs = []
    for r in rho.registers:
        new = mapping.get(r.label, r)
        regs.append(_reg(new, r.dim, r.classical))
    return DensityOperator(regs, rho.matrix)


def dephase(rho: DensityOperator, target) -> DensityOperator:
    """Completely dephase ``target`` in its computational basis."""
    i = rho.index(target)
    dims = rho.dims
    n = len(dims)
    t = rho.matrix.reshape(dims * 2).copy()
    d = dims[i]
    mask = np.eye(d, dtype=bool)
    shape = [1] * (2 * n)
    shape[i] = shape[n + i] = d
    t = t * mask.reshape(shape)
    return DensityOperator._trusted(rho.registers, t.reshape(rho.dim, rho.dim))


def apply_map(ch: Channel, m: np.ndarray, dims: Sequence[int], i: int) -> np.ndarray:
    """Channel on factor ``i`` of a bare matrix; output occupies the same slot."""
    t, rest = _front(m, dims, [i])
    out = _act_tensor(ch, t)
    new_dims = [ch.dim_out] + [dims[j] for j in rest]
    D = int(np.prod(new_dims))
    out = out.reshape(D, D)
    # inverse of perm [i] + rest
    order = [i] + rest
    inv = [order.index(j) for j in range(len(dims))]
    return _permute_matrix(out, new_dims, inv)


def apply(ch: Channel, rho: DensityOperator, target=None, output=None) -> DensityOperator:
    """Apply ``ch`` to one register of ``rho``, identity elsewhere.

    ``target`` defaults to the channel's input label and ``output`` to its
    output register; the output takes the input's position.
    """
    target = ch.input.label if target is None else _labels_of(target)[0]
    i = rho.index(target)
    if rho.dims[i] != ch.dim_in:
        raise DimensionError(f"channel expects input dim {ch.dim_in}, register {target!r} has dim {rho.dims[i]}")
    out_reg = ch.output if output is None else _reg(output, ch.dim_out, ch.output.classical)
    if out_reg.label in rho.labels and out_reg.label != target:
        raise RegisterError(f"output register {out_reg.label!r} already present")
    m = _clean(apply_map(ch, rho.matrix, rho.dims, i), "channel output")
    regs = list(rho.registers)
    regs[i] = out_reg
    return DensityOperator._trusted(regs, m)


@dataclass(frozen=True)
class Outcome:
    outcome: Any
    probability: float
    state: DensityOperator | None


def measure(povm: Povm, rho: DensityOperator, target) -> list:
    """Measure ``povm`` on the composite of ``target`` registers.

    Returns one :class:`Outcome` per POVM element; the post-measurement state
    lives on the remaining registers and is ``None`` when its probability is
    at most ``TAU_PROB``.
    """
    labels = _labels_of(target)
    idx = [rho.index(lab) for lab in labels]
    if len(set(idx)) != len(idx):
        raise RegisterError(f"repeated target registers {labels}")
    t, rest = _front(rho.matrix, rho.dims, idx)
    if t.shape[0] != povm.dim:
        raise DimensionError(f"POVM dimension {povm.dim} does not match target dimension {t.shape[0]}")
    rest_regs = [rho.registers[j] for j in rest]
    results = []
    for label, E in zip(povm.outcomes, povm.elements):
        block = np.einsum("ba,aibj->ij", E, t)
        p = float(np.trace(block).real)
        if p > TAU_PROB:
            state = DensityOperator._trusted(rest_regs, _clean(block, "post-measurement state"))
        else:
            state = None
        results.append(Outcome(label, max(p, 0.0), state))
    total = sum(r.probability for r in results)
    if abs(total - 1.0) > TAU_TRACE:
        raise ValidationError(f"measurement probabilities sum to {total!r}")
    return results


# --- special states, bases and channels ------------------------------------------


def classical_state(register, probs) -> DensityOperator:
    """Diagonal state of a classical register holding distribution ``probs``."""
    probs = np.asarray(probs, dtype=float)
    reg = _reg(register, probs.size, True)
    if not reg.classical:
        reg = Register(reg.label, reg.dim, True)
    return DensityOperator([reg], np.diag(probs))


def basis_povm(vectors: np.ndarray) -> Povm:
    """Rank-one projective measurement onto the columns of a unitary."""
    V = np.asarray(vectors, dtype=complex)
    return Povm([np.outer(V[:, j], V[:, j].conj()) for j in range(V.shape[1])])


def computational_basis(d: int) -> Povm:
    return basis_povm(np.eye(d))


def fourier_matrix(d: int) -> np.ndarray:
    """Unitary whose column j is (1/sqrt d) sum_k w^{jk} |k>, w = exp(2 pi i / d)."""
    k = np.arange(d)
    return np.exp(2j * np.pi * np.outer(k, k) / d) / np.sqrt(d)


def fourier_basis(d: int) -> Povm:
    """Projectors onto the Fourier basis, mutually unbiased with the computational one."""
    if d < 2:
        raise ValidationError("fourier_basis needs d >= 2")
    return basis_povm(fourier_matrix(d))


def maximally_entangled_state(d: int, registers=("R", "X")) -> PureState:
    """(1/sqrt d) sum_i |ii> on two d-dimensional registers."""
    if d < 1:
        raise ValidationError("maximally_entangled_state needs d >= 1")
    v = np.zeros(d * d, dtype=complex)
    v[np.arange(d) * (d + 1)] = 1 / np.sqrt(d)
    regs = [_reg(r, d) for r in registers]
    return PureState(regs, v)


def example_channel_F(d: int, basis: np.ndarray | None = None, input="X", output="Y") -> Channel:
    """Measure a uniformly random choice G of two bases and emit Y = (G, M).

    Basis 0 is computational; basis 1 is given by the columns of ``basis``
    (the Fourier basis by default).  Outcome index is ``g * d + m``.
    """
    if d < 2:
        raise ValidationError("example_channel_F needs d >= 2")
    V = fourier_matrix(d) if basis is None else np.asarray(basis, dtype=complex)
    if V.shape != (d, d):
        raise DimensionError(f"basis must be {d}x{d}")
    elements, labels = [], []
    for g, B in enumerate((np.eye(d), V)):
        for m in range(d):
            elements.append(0.5 * np.outer(B[:, m], B[:, m].conj()))
            labels.append((g, m))
    return Channel.qc(Povm(elements, labels), input=input, output=output)


def identity_channel(d: int, classical: bool = False, input="X", output="Y") -> Channel:
    if classical:
        return Channel.classical(np.eye(d), input=input, output=output)
    return Channel.kraus([np.eye(d)], input=input, output=output)


def _spanning_inputs(d: int):
    for i in range(d):
        for j in range(d):
            X = np.zeros((d, d), dtype=complex)
            X[i, j] = 1.0
            yield X


def _dephase_bare(m: np.ndarray) -> np.ndarray:
    return np.diag(np.diag(m))


def is_qc(ch: Channel) -> bool:
    """Whether dephasing the output leaves the channel unchanged."""
    for X in _spanning_inputs(ch.dim_in):
        Y = ch.act(X)
        if np.max(np.abs(_dephase_bare(Y) - Y)) > TAU_CHAN:
            return False
    return True


def is_cq(ch: Channel) -> bool:
    """Whether dephasing the input leaves the channel unchanged."""
    for X in _spanning_inputs(ch.dim_in):
        if np.max(np.abs(ch.act(X) - ch.act(_dephase_bare(X)))) > TAU_CHAN:
            return False
    return True


# --- random sampling --------------------------------------------------------------


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def haar_random_unitary(d: int, seed=None) -> np.ndarray:
    """Haar-distributed unitary via QR of a Ginibre matrix with phase correction."""
    if d < 1:
        raise ValidationError("dimension must be positive")
    rng = _rng(seed)
    Z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    ph = np.diag(R) / np.abs(np.diag(R))
    return Q * ph


def random_pure_state(d: int, seed=None, registers=None) -> PureState:
    rng = _rng(seed)
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    v /= np.linalg.norm(v)
    regs = [Register("X", d)] if registers is None else list(registers)
    return PureState(regs, v)


def random_density(d: int, seed=None, rank: int | None = None, register="X") -> DensityOperator:
    """Ginibre-ensemble mixed state of the given rank (full rank by default)."""
    rng = _rng(seed)
    k = d if rank is None else rank
    A = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    m = A @ A.conj().T
    return DensityOperator([_reg(register, d)], m / np.trace(m).real)


def trace_distance(a, b) -> float:
    A = a.matrix if isinstance(a, DensityOperator) else np.asarray(a)
    B = b.matrix if isinstance(b, DensityOperator) else np.asarray(b)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(A - B))))


# --- channel-spec JSON ---------------------------------------------------------------
#
# {"variant": "kraus"|"qc"|"cq"|"classical", "dim_in": int, "dim_out": int,
#  "matrices": [matrix, ...]}
# Each matrix is a list of rows (row-major); each entry is a [re, im] pair.
#   kraus:      dim_out x dim_in Kraus operators
#   qc:         dim_out POVM elements, each dim_in x dim_in
#   cq:         dim_in output states, each dim_out x dim_out
#   classical:  exactly one dim_out x dim_in column-stochastic matrix


def _decode_matrix(raw, where: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw or not all(isinstance(row, list) for row in raw):
        raise ValidationError(f"{where}: expected a non-empty list of rows")
    width = len(raw[0])
    out = np.zeros((len(raw), width), dtype=complex)
    for i, row in enumerate(raw):
        if len(row) != width:
            raise ValidationError(f"{where}: row {i} has {len(row)} entries, expected {width}")
        for j, entry in enumerate(row):
            if (
                not isinstance(entry, list)
                or len(entry) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in entry)
            ):
                raise ValidationError(f"{where}: entry [{i}][{j}] must be a [re, im] pair of numbers")
            out[i, j] = complex(entry[0], entry[1])
    return out


def _encode_matrix(m: np.ndarray) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def channel_from_json(spec: Mapping) -> Channel:
    """Build and validate a channel from its JSON object form."""
    if not isinstance(spec, Mapping):
        raise ValidationError("channel spec must be a JSON object")
    for key in ("variant", "dim_in", "dim_out", "matrices"):
        if key not in spec:
            raise ValidationError(f"channel spec is missing field {key!r}")
    variant = spec["variant"]
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    din, dout = spec["dim_in"], spec["dim_out"]
    for name, val in (("dim_in", din), ("dim_out", dout)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ValidationError(f"{name} must be a positive integer, got {val!r}")
    raw = spec["matrices"]
    if not isinstance(raw, list) or not raw:
        raise ValidationError("matrices must be a non-empty list")
    mats = [_decode_matrix(m, f"matrices[{i}]") for i, m in enumerate(raw)]
    expect = {"kraus": (dout, din), "qc": (din, din), "cq": (dout, dout), "classical": (dout, din)}[variant]
    for i, m in enumerate(mats):
        if m.shape != expect:
            raise ValidationError(f"matrices[{i}] has shape {m.shape}, {variant} expects {expect}")
    inp = spec.get("input", "X")
    out = spec.get("output", "Y")
    if variant == "kraus":
        return Channel("kraus", mats, Register(inp, din), Register(out, dout))
    if variant == "qc":
        if len(mats) != dout:
            raise ValidationError(f"qc spec needs dim_out={dout} POVM elements, got {len(mats)}")
        return Channel("qc", Povm(mats), Register(inp, din), Register(out, dout, True))
    if variant == "cq":
        if len(mats) != din:
            raise ValidationError(f"cq spec needs dim_in={din} output states, got {len(mats)}")
        return Channel("cq", mats, Register(inp, din), Register(out, dout))
    if len(mats) != 1:
        raise ValidationError("classical spec needs exactly one stochastic matrix")
    if np.max(np.abs(mats[0].imag)) > 0:
        raise ValidationError("classical stochastic matrix must be real")
    return Channel("classical", mats[0].real, Register(inp, din), Register(out, dout, True))


def channel_to_json(ch: Channel) -> dict:
    if ch.variant == "kraus":
        mats = list(ch.data)
    elif ch.variant == "qc":
        mats = list(ch.data.elements)
    elif ch.variant == "cq":
        mats = list(ch.data)
    else:
        mats = [ch.data]
    return {
        "variant": ch.variant,
        "dim_in": ch.dim_in,
        "dim_out": ch.dim_out,
        "input": ch.input.label,
        "output": ch.output.label,
        "matrices": [_encode_matrix(m) for m in mats],
    }


def load_channel(path) -> Channel:
    """Read a channel-spec JSON file; malformed files raise ValidationError."""
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return channel_from_json(spec)
    except (ValidationError, DimensionError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
