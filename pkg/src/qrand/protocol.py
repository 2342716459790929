"""Exact simulation of classically assisted randomness-distribution protocols.

A :class:`Protocol` is a list of steps executed between Alice (``"A"``) and
Bob (``"B"``):

* :class:`NoisyUse` feeds one of Alice's registers to the noisy channel and
  hands the output to Bob;
* :class:`AuxForward` / :class:`AuxBack` copy a classical register across
  the noiseless auxiliary link;
* :class:`LocalOp` applies a (possibly classically controlled) quantum
  instrument, :class:`ClassicalMap` a stochastic function of classical data.

:func:`run_exact` enumerates every classical branch and keeps the conditional
quantum state of all live registers, so the joint distribution of
``(J, K, Z)`` and all entropies are exact.  Registers are traced out after
their last use, except the auxiliary transcript, which both parties keep.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .core import (
    TAU_PROB,
    TAU_TRACE,
    Channel,
    DensityOperator,
    Register,
    _clean,
    _front,
    _permute_matrix,
    _rng,
    apply,
    channel_from_json,
    channel_to_json,
    computational_basis,
    max_dim,
    measure,
    partial_trace,
    tensor,
)
from .errors import InfeasibleError, RegisterError, ValidationError
from .measures import TAU_MI, entropy_from_eigenvalues, matrix_entropy

__all__ = [
    "Instrument",
    "NoisyUse",
    "AuxForward",
    "AuxBack",
    "LocalOp",
    "LocalAlice",
    "LocalBob",
    "ClassicalMap",
    "Protocol",
    "Branch",
    "StepRecord",
    "TraceReport",
    "run_exact",
    "run_sampled",
    "branches_to_state",
    "mi_audit",
    "audit_trace",
    "goodness",
    "chi_converse_check",
    "protocol_to_json",
    "protocol_from_json",
    "trace_from_json",
]

PARTIES = ("A", "B")


def _enc(m):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def _dec(raw):
    return np.array([[complex(re, im) for re, im in row] for row in raw], dtype=complex)


# --- steps ----------------------------------------------------------------------------------


@dataclass(frozen=True)
class Instrument:
    """Quantum instrument: Kraus operators per classical outcome.

    Consumes the quantum registers ``inputs`` (in that order) and produces
    ``outputs``; the outcome index is written to the classical register
    ``outcome`` (which may be ``None`` for a single-outcome operation).
    Kraus matrices have shape ``(prod out dims, prod in dims)``.
    """

    inputs: tuple
    outputs: tuple
    kraus: Mapping
    outcome: Register | None = None

    def __post_init__(self):
        ins = tuple(self.inputs)
        outs = tuple(self.outputs)
        kraus = {}
        for o, ops in dict(self.kraus).items():
            kraus[int(o)] = tuple(np.array(k, dtype=complex) for k in ops)
        if not kraus:
            raise ValidationError("instrument needs at least one outcome")
        dout = int(np.prod([r.dim for r in outs])) if outs else 1
        acc = None
        for o, ops in kraus.items():
            for K in ops:
                if K.ndim != 2 or K.shape[0] != dout:
                    raise ValidationError(f"instrument Kraus operator for outcome {o} has shape {K.shape}, expected ({dout}, d_in)")
                acc = K.conj().T @ K if acc is None else acc + K.conj().T @ K
        din = acc.shape[0]
        if np.max(np.abs(acc - np.eye(din))) > 1e-9:
            raise ValidationError("instrument is not trace preserving (sum of K^dag K differs from identity)")
        if self.outcome is None and len(kraus) != 1:
            raise ValidationError("an instrument with several outcomes needs an outcome register")
        outcome = self.outcome
        if outcome is not None:
            if not outcome.classical:
                outcome = Register(outcome.label, outcome.dim, True)
            if any(o < 0 or o >= outcome.dim for o in kraus):
                raise ValidationError(f"instrument outcomes {sorted(kraus)} exceed register {outcome.label!r} of dim {outcome.dim}")
        object.__setattr__(self, "inputs", ins)
        object.__setattr__(self, "outputs", outs)
        object.__setattr__(self, "kraus", kraus)
        object.__setattr__(self, "outcome", outcome)

    @property
    def dim_in(self) -> int:
        return next(iter(self.kraus.values()))[0].shape[1]

    def to_json(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "outputs": [{"label": r.label, "dim": r.dim} for r in self.outputs],
            "outcome": None if self.outcome is None else {"label": self.outcome.label, "dim": self.outcome.dim},
            "kraus": {str(o): [_enc(K) for K in ops] for o, ops in sorted(self.kraus.items())},
        }

    @classmethod
    def from_json(cls, obj) -> "Instrument":
        outcome = obj.get("outcome")
        return cls(
            tuple(obj["inputs"]),
            tuple(Register(r["label"], r["dim"]) for r in obj["outputs"]),
            {int(o): [_dec(K) for K in ops] for o, ops in obj["kraus"].items()},
            None if outcome is None else Register(outcome["label"], outcome["dim"], True),
        )

    @classmethod
    def prepare(cls, registers: Sequence[Register], vector) -> "Instrument":
        """Prepare the pure state ``vector`` on fresh ``registers``."""
        v = np.asarray(vector, dtype=complex).reshape(-1, 1)
        v = v / np.linalg.norm(v)
        return cls((), tuple(registers), {0: [v]})

    @classmethod
    def unitary(cls, label: str, dim: int, U) -> "Instrument":
        return cls((label,), (Register(label, dim),), {0: [np.asarray(U, dtype=complex)]})

    @classmethod
    def basis_measurement(cls, label: str, dim: int, outcome: str, basis=None) -> "Instrument":
        """Destructive rank-one measurement of ``label``; basis columns default to computational."""
        V = np.eye(dim) if basis is None else np.asarray(basis, dtype=complex)
        kraus = {m: [V[:, m].conj().reshape(1, dim)] for m in range(dim)}
        return cls((label,), (), kraus, Register(outcome, dim, True))

    @classmethod
    def coin(cls, outcome: str, probs) -> "Instrument":
        """Local randomness: classical register drawn from ``probs``."""
        probs = np.asarray(probs, dtype=float)
        return cls((), (), {i: [np.array([[np.sqrt(p)]])] for i, p in enumerate(probs) if p > 0}, Register(outcome, len(probs), True))


@dataclass(frozen=True)
class NoisyUse:
    channel: Channel
    input: str
    output: str
    kind = "noisy_use"


@dataclass(frozen=True)
class AuxForward:
    source: str
    dest: str
    kind = "aux_forward"
    sender = "A"


@dataclass(frozen=True)
class AuxBack:
    source: str
    dest: str
    kind = "aux_back"
    sender = "B"


@dataclass(frozen=True)
class LocalOp:
    """Local instrument by one party; with ``control`` the instrument is chosen by that classical value."""

    party: str
    instrument: Any
    control: str | None = None
    kind = "local"

    def __post_init__(self):
        if self.party not in PARTIES:
            raise ValidationError(f"party must be 'A' or 'B', got {self.party!r}")
        if self.control is None:
            if not isinstance(self.instrument, Instrument):
                raise ValidationError("uncontrolled local step needs a single Instrument")
        else:
            table = {int(k): v for k, v in dict(self.instrument).items()}
            shapes = {(v.inputs, tuple(v.outputs), v.outcome) for v in table.values()}
            if len(shapes) != 1:
                raise ValidationError("controlled instruments must share inputs, outputs and outcome register")
            object.__setattr__(self, "instrument", table)

    def instruments(self) -> list:
        return [self.instrument] if self.control is None else list(self.instrument.values())

    def select(self, values) -> Instrument:
        if self.control is None:
            return self.instrument
        c = values[self.control]
        try:
            return self.instrument[c]
        except KeyError:
            raise ValidationError(f"no instrument for control {self.control}={c}") from None


def LocalAlice(instrument, control=None) -> LocalOp:
    return LocalOp("A", instrument, control)


def LocalBob(instrument, control=None) -> LocalOp:
    return LocalOp("B", instrument, control)


@dataclass(frozen=True)
class ClassicalMap:
    """Stochastic map from classical ``inputs`` to a new classical register.

    ``table`` maps each input tuple to an output value or to a
    ``{value: probability}`` distribution.
    """

    party: str
    inputs: tuple
    output: Register
    table: Mapping
    kind = "classical_map"

    def __post_init__(self):
        if self.party not in PARTIES:
            raise ValidationError(f"party must be 'A' or 'B', got {self.party!r}")
        out = self.output if self.output.classical else Register(self.output.label, self.output.dim, True)
        table = {}
        for key, val in dict(self.table).items():
            key = tuple(int(x) for x in (key if isinstance(key, (tuple, list)) else (key,)))
            dist = {int(val): 1.0} if not isinstance(val, Mapping) else {int(v): float(p) for v, p in val.items()}
            if abs(sum(dist.values()) - 1.0) > TAU_TRACE or any(p < 0 for p in dist.values()):
                raise ValidationError(f"classical map entry {key} is not a distribution")
            if any(v < 0 or v >= out.dim for v in dist):
                raise ValidationError(f"classical map entry {key} leaves the output alphabet of size {out.dim}")
            table[key] = dist
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "output", out)
        object.__setattr__(self, "table", table)

    @classmethod
    def from_function(cls, party, inputs: Sequence[Register], output: Register, fn: Callable) -> "ClassicalMap":
        table = {}
        for key in itertools.product(*[range(r.dim) for r in inputs]):
            table[key] = fn(*key)
        return cls(party, tuple(r.label for r in inputs), output, table)

    def lookup(self, key):
        try:
            return self.table[key]
        except KeyError:
            raise ValidationError(f"classical map to {self.output.label!r} has no entry for inputs {key}") from None


# --- protocol and static analysis ------------------------------------------------------------


@dataclass
class _Sym:
    reg: Register
    owner: str
    quantum: bool


@dataclass(frozen=True)
class Protocol:
    """Steps plus initial local states; Alice ends with register ``j``, Bob with ``k``.

    ``c`` is the alphabet constant with ``|A_K| <= 2**(c*n)``; by default the
    smallest admissible value ``ceil(log2 |A_K|) / n``.
    """

    steps: tuple
    j: str
    k: str
    initial_alice: DensityOperator | None = None
    initial_bob: DensityOperator | None = None
    c: float | None = None
    name: str = ""
    analysis: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        info = _analyze(self)
        object.__setattr__(self, "analysis", info)
        n = info["n"]
        ak = info["alphabet_k"]
        c = self.c
        if c is None:
            c = math.ceil(math.log2(ak)) / n if ak > 1 else 0.0
        elif ak > 2.0 ** (c * n) * (1 + 1e-12):
            raise ValidationError(
                f"alphabet bound |A_K| <= 2^(c n) violated: |A_K| = {ak}, c = {c}, n = {n}"
            )
        object.__setattr__(self, "c", float(c))

    @property
    def n(self) -> int:
        return self.analysis["n"]

    @property
    def alphabet_k(self) -> int:
        return self.analysis["alphabet_k"]

    def is_forward_assisted(self) -> bool:
        return not any(isinstance(s, AuxBack) for s in self.steps)


def _analyze(p: Protocol) -> dict:
    syms: dict[str, _Sym] = {}
    used = set()

    def add(reg: Register, owner: str, quantum: bool, where: str):
        if reg.label in used:
            raise RegisterError(f"{where}: register label {reg.label!r} is already in use")
        used.add(reg.label)
        syms[reg.label] = _Sym(reg, owner, quantum)

    def need(label, owner, where, quantum=None):
        if label not in syms:
            raise RegisterError(f"{where}: unknown or consumed register {label!r}")
        s = syms[label]
        if s.owner != owner:
            raise RegisterError(f"{where}: register {label!r} belongs to party {s.owner}, not {owner}")
        if quantum is True and not s.quantum:
            raise RegisterError(f"{where}: register {label!r} must be quantum")
        if quantum is False and s.quantum:
            raise RegisterError(f"{where}: register {label!r} must be classical")
        return s

    for owner, st in (("A", p.initial_alice), ("B", p.initial_bob)):
        if st is not None:
            for r in st.registers:
                add(r, owner, not r.classical, f"initial state of {owner}")

    last_use: dict[str, int] = {}
    pinned = {p.j, p.k}
    aux = []
    n = 0
    dims_during = []
    for i, step in enumerate(p.steps):
        where = f"step {i} ({getattr(step, 'kind', type(step).__name__)})"
        peak_extra = 0
        if isinstance(step, NoisyUse):
            n += 1
            s = need(step.input, "A", where)
            if s.reg.dim != step.channel.dim_in:
                raise RegisterError(f"{where}: register {step.input!r} has dim {s.reg.dim}, channel expects {step.channel.dim_in}")
            last_use[step.input] = i
            if s.quantum:
                del syms[step.input]
            else:
                peak_extra = s.reg.dim
            out_classical = step.channel.output.classical
            add(Register(step.output, step.channel.dim_out, out_classical), "B", not out_classical, where)
        elif isinstance(step, (AuxForward, AuxBack)):
            sender = step.sender
            s = need(step.source, sender, where, quantum=False)
            last_use[step.source] = i
            receiver = "B" if sender == "A" else "A"
            add(Register(step.dest, s.reg.dim, True), receiver, False, where)
            pinned.update({step.source, step.dest})
            aux.append((i, step.dest, s.reg.dim, sender))
        elif isinstance(step, LocalOp):
            if step.control is not None:
                cs = need(step.control, step.party, where, quantum=False)
                last_use[step.control] = i
                keys = set(step.instrument)
                if keys != set(range(cs.reg.dim)):
                    raise ValidationError(f"{where}: control {step.control!r} needs instruments for values 0..{cs.reg.dim - 1}")
            inst = step.instruments()[0]
            din = 1
            for lab in inst.inputs:
                s = need(lab, step.party, where, quantum=True)
                din *= s.reg.dim
                last_use[lab] = i
            for other in step.instruments():
                if other.dim_in != din:
                    raise ValidationError(f"{where}: instrument acts on dim {other.dim_in}, inputs have dim {din}")
            for lab in inst.inputs:
                del syms[lab]
                used.discard(lab)
            for r in inst.outputs:
                add(r, step.party, True, where)
            if inst.outcome is not None:
                add(inst.outcome, step.party, False, where)
        elif isinstance(step, ClassicalMap):
            for lab in step.inputs:
                need(lab, step.party, where, quantum=False)
                last_use[lab] = i
            add(step.output, step.party, False, where)
        else:
            raise ValidationError(f"{where}: unknown step type {type(step).__name__}")
        qdim = int(np.prod([s.reg.dim for s in syms.values() if s.quantum])) if syms else 1
        dims_during.append(qdim * max(peak_extra, 1))

    if n < 1:
        raise ValidationError("a protocol needs at least one noisy channel use (n >= 1)")
    for lab, party in ((p.j, "A"), (p.k, "B")):
        need(lab, party, "final extraction", quantum=False)
    dj, dk = syms[p.j].reg.dim, syms[p.k].reg.dim
    if dj != dk:
        raise ValidationError(f"J and K must share one alphabet, got sizes {dj} and {dk}")
    return {
        "n": n,
        "alphabet_k": dk,
        "last_use": last_use,
        "pinned": pinned,
        "aux": aux,
        "dims": dims_during,
    }


# --- exact execution ---------------------------------------------------------------------------


@dataclass
class Branch:
    values: dict
    prob: float
    state: DensityOperator


_EMPTY = DensityOperator((), np.ones((1, 1)))


@dataclass
class StepRecord:
    index: int
    kind: str
    mi: float
    bound: float | None = None
    bound_kind: str = ""

    def to_json(self) -> dict:
        return {"index": self.index, "kind": self.kind, "mi_bits": self.mi, "bound_bits": self.bound, "bound_kind": self.bound_kind}


@dataclass
class TraceReport:
    """Exact outcome statistics of one protocol run.

    ``joint`` maps ``(j, k, z)`` (``z`` the tuple of auxiliary messages) to
    its probability.  Two net rates are reported: ``net_rate`` subtracts all
    auxiliary communication, ``net_rate_forward`` only the forward part.
    """

    name: str
    n: int
    c: float
    alphabet_k: int
    joint: dict
    pr_err: float
    h_k: float
    h_k_given_j: float
    i_jk: float
    log_az: float
    log_af: float
    net_rate: float
    net_rate_forward: float
    steps: list
    forward_assisted: bool = True
    branches: list | None = field(default=None, repr=False)
    owners: dict | None = field(default=None, repr=False)

    @property
    def per_step_mi(self) -> list:
        return [(r.index, r.mi) for r in self.steps]

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "name": self.name,
            "n": self.n,
            "c": self.c,
            "alphabet_k": self.alphabet_k,
            "forward_assisted": self.forward_assisted,
            "pr_err": self.pr_err,
            "h_k_bits": self.h_k,
            "h_k_given_j_bits": self.h_k_given_j,
            "i_jk_bits": self.i_jk,
            "log_az_bits": self.log_az,
            "log_af_bits": self.log_af,
            "net_rate_bits_per_use": self.net_rate,
            "net_rate_forward_bits_per_use": self.net_rate_forward,
            "joint": [{"j": j, "k": k, "z": list(z), "p": p} for (j, k, z), p in sorted(self.joint.items())],
            "steps": [r.to_json() for r in self.steps],
        }

    def joint_csv(self) -> str:
        lines = ["j,k,z,p"]
        for (j, k, z), p in sorted(self.joint.items()):
            lines.append(f"{j},{k},{'-'.join(str(x) for x in z)},{p!r}")
        return "\n".join(lines) + "\n"


def trace_from_json(obj: Mapping) -> TraceReport:
    joint = {(int(r["j"]), int(r["k"]), tuple(int(x) for x in r["z"])): float(r["p"]) for r in obj["joint"]}
    steps = [StepRecord(int(s["index"]), s["kind"], float(s["mi_bits"]), s.get("bound_bits"), s.get("bound_kind", "")) for s in obj["steps"]]
    return TraceReport(
        obj.get("name", ""), int(obj["n"]), float(obj["c"]), int(obj["alphabet_k"]), joint,
        float(obj["pr_err"]), float(obj["h_k_bits"]), float(obj["h_k_given_j_bits"]), float(obj["i_jk_bits"]),
        float(obj["log_az_bits"]), float(obj["log_af_bits"]), float(obj["net_rate_bits_per_use"]),
        float(obj["net_rate_forward_bits_per_use"]), steps, bool(obj.get("forward_assisted", True)),
    )


def _drop_quantum(state: DensityOperator, labels) -> DensityOperator:
    labels = [lab for lab in labels if lab in state.labels]
    if not labels:
        return state
    keep = [lab for lab in state.labels if lab not in labels]
    if not keep:
        return _EMPTY
    return partial_trace(state, keep)


def _apply_instrument(inst: Instrument, branch: Branch) -> list:
    st = branch.state
    idx = [st.index(lab) for lab in inst.inputs]
    t, rest = _front(st.matrix, st.dims, idx)
    dr = t.shape[1]
    rest_regs = [st.registers[j] for j in rest]
    out_regs = list(inst.outputs)
    dout = int(np.prod([r.dim for r in out_regs])) if out_regs else 1
    out_dims = [r.dim for r in out_regs] + [r.dim for r in rest_regs]
    nq = len(out_regs)
    perm = list(range(nq, nq + len(rest_regs))) + list(range(nq))
    results = []
    for o, ops in inst.kraus.items():
        block = np.zeros((dout, dr, dout, dr), dtype=complex)
        for K in ops:
            block += np.einsum("ka,aibj,lb->kilj", K, t, K.conj())
        m = block.reshape(dout * dr, dout * dr)
        p = float(np.trace(m).real)
        if p <= TAU_PROB:
            continue
        m = _permute_matrix(m, out_dims, perm) if out_dims else m
        values = dict(branch.values)
        if inst.outcome is not None:
            values[inst.outcome.label] = o
        regs = rest_regs + out_regs
        state = DensityOperator._trusted(regs, _clean(m, "instrument output")) if regs else _EMPTY
        results.append(Branch(values, branch.prob * p, state))
    return results


def _step_branch(step, branch: Branch) -> list:
    if isinstance(step, NoisyUse):
        st = branch.state
        ch = step.channel
        if step.input in branch.values:
            tmp = f"{step.input}#in"
            x = branch.values[step.input]
            e = np.zeros((ch.dim_in, ch.dim_in))
            e[x, x] = 1.0
            st = tensor(st, DensityOperator._trusted([Register(tmp, ch.dim_in)], e))
            target = tmp
        else:
            target = step.input
        out_reg = Register(step.output, ch.dim_out, ch.output.classical)
        st = apply(ch, st, target=target, output=out_reg)
        if not out_reg.classical:
            return [Branch(dict(branch.values), branch.prob, st)]
        res = []
        for oc in measure(computational_basis(ch.dim_out), st, step.output):
            if oc.state is None:
                continue
            values = dict(branch.values)
            values[step.output] = int(oc.outcome)
            res.append(Branch(values, branch.prob * oc.probability, oc.state))
        return res
    if isinstance(step, (AuxForward, AuxBack)):
        values = dict(branch.values)
        values[step.dest] = values[step.source]
        return [Branch(values, branch.prob, branch.state)]
    if isinstance(step, LocalOp):
        return _apply_instrument(step.select(branch.values), branch)
    if isinstance(step, ClassicalMap):
        key = tuple(branch.values[lab] for lab in step.inputs)
        res = []
        for v, q in step.lookup(key).items():
            if q > 0:
                values = dict(branch.values)
                values[step.output.label] = v
                res.append(Branch(values, branch.prob * q, branch.state))
        return res
    raise ValidationError(f"unknown step {step!r}")


def _key(values: dict) -> tuple:
    return tuple(sorted(values.items()))


def _merge(branches: list) -> list:
    groups: dict[tuple, list] = {}
    for b in branches:
        groups.setdefault(_key(b.values), []).append(b)
    merged = []
    for key in sorted(groups):
        bs = groups[key]
        if len(bs) == 1:
            merged.append(bs[0])
            continue
        p = sum(b.prob for b in bs)
        m = sum(b.prob * b.state.matrix for b in bs) / p
        merged.append(Branch(dict(bs[0].values), p, DensityOperator._trusted(bs[0].state.registers, m)))
    return merged


def _gc(branches: list, dead_q: list, dead_c: list) -> list:
    if not dead_q and not dead_c:
        return branches
    out = []
    for b in branches:
        values = {k: v for k, v in b.values.items() if k not in dead_c}
        out.append(Branch(values, b.prob, _drop_quantum(b.state, dead_q)))
    return _merge(out)


def _cq_entropy(items) -> float:
    """Entropy of sum_x p_x |x><x| (x) rho_x, with repeated keys mixed together."""
    groups: dict[tuple, list] = {}
    for key, p, m in items:
        if key in groups:
            groups[key][0] += p
            groups[key][1] = groups[key][1] + p * m
        else:
            groups[key] = [p, p * m]
    h = 0.0
    for p, pm in groups.values():
        if p > 0:
            h += -p * math.log2(p) + p * matrix_entropy(pm / p)
    return h


def _party_items(branches, owners, party):
    items = []
    for b in branches:
        key = tuple(sorted((k, v) for k, v in b.values.items() if owners.get(k) == party))
        labels = [lab for lab in b.state.labels if owners.get(lab) == party]
        if labels:
            m = partial_trace(b.state, labels).matrix
        else:
            m = np.ones((1, 1))
        items.append((key, b.prob, m))
    return items


def _bipartite_mi(branches, owners) -> float:
    h_ab = _cq_entropy([(_key(b.values), b.prob, b.state.matrix) for b in branches])
    h_a = _cq_entropy(_party_items(branches, owners, "A"))
    h_b = _cq_entropy(_party_items(branches, owners, "B"))
    return h_a + h_b - h_ab


def _shannon(dist: Mapping) -> float:
    # merged branch weights can sum to 1 + ulp; renormalizing keeps a point mass at exactly 0
    w = np.array(list(dist.values()))
    return entropy_from_eigenvalues(w / w.sum())


def _marginal(branches, labels) -> dict:
    out: dict[tuple, float] = {}
    for b in branches:
        key = tuple(b.values[lab] for lab in labels)
        out[key] = out.get(key, 0.0) + b.prob
    return out


def _initial_branches(p: Protocol, owners: dict) -> list:
    state = _EMPTY
    for party, st in (("A", p.initial_alice), ("B", p.initial_bob)):
        if st is None:
            continue
        for r in st.registers:
            owners[r.label] = party
        state = st if state is _EMPTY else tensor(state, st)
    branches = [Branch({}, 1.0, state)]
    for r in list(state.registers):
        if not r.classical:
            continue
        nxt = []
        for b in branches:
            for oc in measure(computational_basis(r.dim), b.state, r.label):
                if oc.state is not None:
                    values = dict(b.values)
                    values[r.label] = int(oc.outcome)
                    nxt.append(Branch(values, b.prob * oc.probability, oc.state if oc.state.registers else _EMPTY))
        branches = nxt
    return _merge(branches)


def _owner_updates(step, owners):
    if isinstance(step, NoisyUse):
        owners[step.output] = "B"
    elif isinstance(step, AuxForward):
        owners[step.dest] = "B"
    elif isinstance(step, AuxBack):
        owners[step.dest] = "A"
    elif isinstance(step, LocalOp):
        inst = step.instruments()[0]
        for r in inst.outputs:
            owners[r.label] = step.party
        if inst.outcome is not None:
            owners[inst.outcome.label] = step.party
    elif isinstance(step, ClassicalMap):
        owners[step.output.label] = step.party


def _dead_after(p: Protocol, i: int, branches) -> tuple:
    info = p.analysis
    dead_q, dead_c = [], []
    live_q = branches[0].state.labels if branches else ()
    live_c = set().union(*[b.values.keys() for b in branches]) if branches else set()
    for lab in live_q:
        if lab not in info["pinned"] and info["last_use"].get(lab, -1) <= i:
            dead_q.append(lab)
    for lab in live_c:
        if lab not in info["pinned"] and info["last_use"].get(lab, -1) <= i:
            dead_c.append(lab)
    return dead_q, dead_c


def _check_dims(p: Protocol):
    cap = max_dim()
    for i, D in enumerate(p.analysis["dims"]):
        if D > cap:
            kind = getattr(p.steps[i], "kind", type(p.steps[i]).__name__)
            raise InfeasibleError(f"step {i} ({kind}) needs tracked dimension {D}, above the cap {cap} (QRAND_MAX_DIM)")


def run_exact(p: Protocol, keep_branches: bool = False) -> TraceReport:
    """Enumerate all classical branches of ``p`` and compute its statistics exactly."""
    _check_dims(p)
    owners: dict[str, str] = {}
    branches = _initial_branches(p, owners)
    dq, dc = _dead_after(p, -1, branches)
    branches = _gc(branches, dq, dc)
    records = [StepRecord(-1, "initial", _bipartite_mi(branches, owners), 0.0, "initial")]
    aux_labels = []
    for i, step in enumerate(p.steps):
        new = []
        for b in branches:
            new.extend(_step_branch(step, b))
        _owner_updates(step, owners)
        branches = _merge(new)
        dq, dc = _dead_after(p, i, branches)
        branches = _gc(branches, dq, dc)
        total = sum(b.prob for b in branches)
        if abs(total - 1.0) > TAU_TRACE:
            raise ValidationError(f"step {i}: branch probabilities sum to {total!r}")
        mi = _bipartite_mi(branches, owners)
        if isinstance(step, (AuxForward, AuxBack)):
            prev = _shannon(_marginal(branches, aux_labels)) if aux_labels else 0.0
            aux_labels.append(step.dest)
            bound = _shannon(_marginal(branches, aux_labels)) - prev
            records.append(StepRecord(i, step.kind, mi, bound, "H(Z_k|Z^(k-1))"))
        elif isinstance(step, NoisyUse):
            records.append(StepRecord(i, step.kind, mi, None, "I(E)"))
        else:
            records.append(StepRecord(i, step.kind, mi, 0.0, "local"))

    joint: dict[tuple, float] = {}
    for b in branches:
        key = (b.values[p.j], b.values[p.k], tuple(b.values[lab] for lab in aux_labels))
        joint[key] = joint.get(key, 0.0) + b.prob
    pk: dict = {}
    pj: dict = {}
    pjk: dict = {}
    err = 0.0
    for (j, k, _z), q in joint.items():
        pk[k] = pk.get(k, 0.0) + q
        pj[j] = pj.get(j, 0.0) + q
        pjk[(j, k)] = pjk.get((j, k), 0.0) + q
        if j != k:
            err += q
    h_k, h_j, h_jk = _shannon(pk), _shannon(pj), _shannon(pjk)
    info = p.analysis
    log_az = sum(math.log2(d) for _, _, d, _ in info["aux"])
    log_af = sum(math.log2(d) for _, _, d, s in info["aux"] if s == "A")
    n = p.n
    return TraceReport(
        name=p.name,
        n=n,
        c=p.c,
        alphabet_k=p.alphabet_k,
        joint=joint,
        pr_err=err,
        h_k=h_k,
        h_k_given_j=h_jk - h_j,
        i_jk=h_j + h_k - h_jk,
        log_az=log_az,
        log_af=log_af,
        net_rate=(h_k - log_az) / n,
        net_rate_forward=(h_k - log_af) / n,
        steps=records,
        forward_assisted=p.is_forward_assisted(),
        branches=branches if keep_branches else None,
        owners=dict(owners) if keep_branches else None,
    )


def branches_to_state(branches: list, owners: Mapping | None = None) -> DensityOperator:
    """Materialize the full classical-quantum state sum_b p_b |values><values| (x) rho_b.

    Classical registers become flagged diagonal registers placed before the
    quantum ones; their dimension is one more than the largest value seen.
    """
    labels = sorted(set().union(*[b.values.keys() for b in branches]))
    dims = {lab: max(b.values[lab] for b in branches) + 1 for lab in labels}
    cregs = [Register(lab, dims[lab], True) for lab in labels]
    qregs = list(branches[0].state.registers)
    D = int(np.prod([r.dim for r in cregs])) if cregs else 1
    total = None
    for b in branches:
        idx = 0
        for lab in labels:
            idx = idx * dims[lab] + b.values[lab]
        e = np.zeros((D, D))
        e[idx, idx] = 1.0
        term = b.prob * np.kron(e, b.state.matrix)
        total = term if total is None else total + term
    return DensityOperator(cregs + qregs, total)


# --- sampled execution ------------------------------------------------------------------------


def run_sampled(p: Protocol, trials: int, seed=0) -> dict:
    """Monte-Carlo estimate of Pr(J != K) by sampling one branch per branching step.

    Only a cross-check for :func:`run_exact`; returns the estimate and its
    standard error.
    """
    _check_dims(p)
    rng = _rng(seed)
    errors = 0
    for _ in range(trials):
        owners: dict[str, str] = {}
        branches = _initial_branches(p, owners)
        branch = branches[rng.choice(len(branches), p=_probs(branches))]
        branch = Branch(branch.values, 1.0, branch.state)
        for i, step in enumerate(p.steps):
            new = _step_branch(step, branch)
            pick = new[rng.choice(len(new), p=_probs(new))] if len(new) > 1 else new[0]
            branch = Branch(pick.values, 1.0, pick.state)
            dq, dc = _dead_after(p, i, [branch])
            branch = _gc([branch], dq, dc)[0]
        errors += branch.values[p.j] != branch.values[p.k]
    est = errors / trials
    return {"pr_err": est, "stderr": math.sqrt(max(est * (1 - est), 0.0) / trials), "trials": trials}


def _probs(branches):
    w = np.array([b.prob for b in branches])
    return w / w.sum()


# --- audits -------------------------------------------------------------------------------------


@dataclass
class AuditRecord:
    index: int
    kind: str
    delta: float
    bound: float
    margin: float
    ok: bool

    def to_json(self) -> dict:
        return {"index": self.index, "kind": self.kind, "delta_bits": self.delta, "bound_bits": self.bound, "margin_bits": self.margin, "ok": self.ok}


def audit_trace(report: TraceReport, tol: float = TAU_MI) -> list:
    """Check every step's increase of I(A:B) against its recorded bound.

    The initial record must have I = 0 and the final I(J:K) must not exceed
    the final I(A:B).
    """
    out = []
    first = report.steps[0]
    out.append(AuditRecord(first.index, "initial", first.mi, 0.0, -abs(first.mi), abs(first.mi) <= tol))
    prev = first.mi
    for r in report.steps[1:]:
        if r.bound is None:
            raise ValidationError(f"step {r.index} ({r.kind}) has no recorded bound; run mi_audit on the protocol")
        delta = r.mi - prev
        out.append(AuditRecord(r.index, r.kind, delta, r.bound, r.bound - delta, delta <= r.bound + tol))
        prev = r.mi
    out.append(AuditRecord(len(report.steps) - 1, "final I(J:K)", report.i_jk, prev, prev - report.i_jk, report.i_jk <= prev + tol))
    return out


def mi_audit(p: Protocol, channel_mi: Callable | Mapping | None = None, report: TraceReport | None = None) -> list:
    """Run ``p`` exactly and audit the per-step mutual-information inequalities.

    Auxiliary steps may raise I(A:B) by at most H(Z_k | Z^(k-1)), noisy uses
    by at most I(E), local steps not at all.  ``channel_mi`` supplies I(E),
    either as a callable on the channel or a mapping from step index; by
    default it is computed with :func:`qrand.capacity.channel_mutual_information`.
    The report's noisy-use records get their bounds filled in.
    """
    from .capacity import channel_mutual_information

    report = report or run_exact(p)
    cache: dict[int, float] = {}

    def i_of(idx, ch):
        if isinstance(channel_mi, Mapping):
            return float(channel_mi[idx])
        if callable(channel_mi):
            return float(channel_mi(ch))
        if id(ch) not in cache:
            cache[id(ch)] = channel_mutual_information(ch).value
        return cache[id(ch)]

    for r in report.steps:
        if r.kind == "noisy_use" and r.bound is None:
            r.bound = i_of(r.index, p.steps[r.index].channel)
    return audit_trace(report)


def goodness(report: TraceReport, c: float | None = None, n: int | None = None, tol: float = TAU_MI) -> dict:
    """epsilon = Pr(J != K) and the Fano-type bound H(K|J) <= epsilon c n + 1."""
    c = report.c if c is None else c
    n = report.n if n is None else n
    bound = report.pr_err * c * n + 1.0
    return {
        "epsilon": report.pr_err,
        "h_k_given_j_bits": report.h_k_given_j,
        "fano_bound_bits": bound,
        "fano_margin_bits": bound - report.h_k_given_j,
        "fano_holds": report.h_k_given_j <= bound + tol,
    }


def chi_converse_check(p: Protocol, chi_n: float, report: TraceReport | None = None, tol: float = TAU_MI) -> dict:
    """I(J:K) <= chi(E^(x)n) + log|A_Z| for a forward-assisted protocol."""
    if not p.is_forward_assisted():
        raise ValidationError("chi_converse_check applies only to forward-assisted protocols (no AuxBack steps)")
    report = report or run_exact(p)
    bound = chi_n + report.log_az
    return {
        "i_jk_bits": report.i_jk,
        "chi_n_bits": chi_n,
        "log_az_bits": report.log_az,
        "bound_bits": bound,
        "margin_bits": bound - report.i_jk,
        "holds": report.i_jk <= bound + tol,
    }


# --- JSON -------------------------------------------------------------------------------------------


def _state_json(st: DensityOperator | None):
    if st is None:
        return None
    return {
        "registers": [{"label": r.label, "dim": r.dim, "classical": r.classical} for r in st.registers],
        "matrix": _enc(st.matrix),
    }


def _state_from_json(obj):
    if obj is None:
        return None
    regs = [Register(r["label"], r["dim"], bool(r.get("classical", False))) for r in obj["registers"]]
    return DensityOperator(regs, _dec(obj["matrix"]))


def _step_json(step) -> dict:
    if isinstance(step, NoisyUse):
        return {"kind": step.kind, "channel": channel_to_json(step.channel), "input": step.input, "output": step.output}
    if isinstance(step, (AuxForward, AuxBack)):
        return {"kind": step.kind, "source": step.source, "dest": step.dest}
    if isinstance(step, LocalOp):
        if step.control is None:
            return {"kind": "local", "party": step.party, "control": None, "instrument": step.instrument.to_json()}
        return {
            "kind": "local",
            "party": step.party,
            "control": step.control,
            "instruments": {str(k): v.to_json() for k, v in sorted(step.instrument.items())},
        }
    if isinstance(step, ClassicalMap):
        return {
            "kind": step.kind,
            "party": step.party,
            "inputs": list(step.inputs),
            "output": {"label": step.output.label, "dim": step.output.dim},
            "table": [{"in": list(k), "out": {str(v): q for v, q in sorted(d.items())}} for k, d in sorted(step.table.items())],
        }
    raise ValidationError(f"cannot serialize step {step!r}")


def _step_from_json(obj):
    kind = obj.get("kind")
    if kind == "noisy_use":
        return NoisyUse(channel_from_json(obj["channel"]), obj["input"], obj["output"])
    if kind == "aux_forward":
        return AuxForward(obj["source"], obj["dest"])
    if kind == "aux_back":
        return AuxBack(obj["source"], obj["dest"])
    if kind == "local":
        if obj.get("control") is None:
            return LocalOp(obj["party"], Instrument.from_json(obj["instrument"]))
        return LocalOp(obj["party"], {int(k): Instrument.from_json(v) for k, v in obj["instruments"].items()}, obj["control"])
    if kind == "classical_map":
        out = obj["output"]
        table = {tuple(row["in"]): {int(v): q for v, q in row["out"].items()} for row in obj["table"]}
        return ClassicalMap(obj["party"], tuple(obj["inputs"]), Register(out["label"], out["dim"], True), table)
    raise ValidationError(f"unknown step kind {kind!r}")


def protocol_to_json(p: Protocol) -> dict:
    return {
        "schema": 1,
        "name": p.name,
        "j": p.j,
        "k": p.k,
        "c": p.c,
        "initial_alice": _state_json(p.initial_alice),
        "initial_bob": _state_json(p.initial_bob),
        "steps": [_step_json(s) for s in p.steps],
    }


def protocol_from_json(obj: Mapping) -> Protocol:
    if not isinstance(obj, Mapping):
        raise ValidationError("protocol spec must be a JSON object")
    for key in ("j", "k", "steps"):
        if key not in obj:
            raise ValidationError(f"protocol spec is missing field {key!r}")
    try:
        steps = [_step_from_json(s) for s in obj["steps"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed protocol step: {exc}") from None
    return Protocol(
        steps,
        obj["j"],
        obj["k"],
        _state_from_json(obj.get("initial_alice")),
        _state_from_json(obj.get("initial_bob")),
        obj.get("c"),
        obj.get("name", ""),
    )
