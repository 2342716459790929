"""Back-assisted randomness distribution by random binning and a pretty-good decoder.

Alice feeds halves of ``psi_RX`` into ``n`` uses of a qc channel.  Bob keeps
the outcome string ``y^n`` as his key ``K`` and announces only its bin label
``Z``.  Alice decodes ``J`` from her side information ``R^n`` with a
pretty-good measurement restricted to the members of bin ``Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .core import TAU_POVM, Channel, Povm, PureState, _rng, is_qc
from .errors import InfeasibleError, ValidationError
from .measures import entropy_from_eigenvalues, matrix_entropy

__all__ = [
    "PGM_MAX_DIM",
    "EXACT_MAX_SEQUENCES",
    "CqSource",
    "Binning",
    "DwReport",
    "build_source",
    "random_binning",
    "pgm_decoder",
    "bin_success_probabilities",
    "run_dw",
    "dw_sweep",
    "sweep_csv",
    "splitmix64",
]

PGM_MAX_DIM = 1024
EXACT_MAX_SEQUENCES = 4096
ENUM_MAX_SEQUENCES = 1 << 22
UNBINNED = -1


def splitmix64(x):
    """SplitMix64 finalizer, vectorized over numpy uint64 arrays."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class CqSource:
    """Per-letter cq source ``sum_y p(y) rho(y)_R (x) |y><y|`` used ``n`` times."""

    n: int
    probs: np.ndarray
    states: tuple
    h_y: float
    h_y_given_r: float
    h_r: float

    @property
    def alphabet(self) -> int:
        return self.probs.size

    @property
    def dim_r(self) -> int:
        return self.states[0].shape[0]

    @property
    def i_yr(self) -> float:
        return self.h_y - self.h_y_given_r

    def sequence_count(self) -> int:
        return self.alphabet**self.n

    def digits(self, index) -> np.ndarray:
        """Letters of sequence(s) ``index`` (most significant first), shape (..., n)."""
        idx = np.asarray(index, dtype=np.int64)
        powers = self.alphabet ** np.arange(self.n - 1, -1, -1, dtype=np.int64)
        return (idx[..., None] // powers) % self.alphabet

    def sequence_prob(self, index) -> np.ndarray:
        return np.prod(self.probs[self.digits(index)], axis=-1)

    def sequence_state(self, index: int) -> np.ndarray:
        letters = self.digits(index)
        return reduce(np.kron, [self.states[y] for y in letters])


def build_source(psi: PureState, ch: Channel, n: int) -> CqSource:
    """Source from measuring the second half of ``psi`` (registers R, X) with qc channel ``ch``."""
    if not is_qc(ch):
        raise ValidationError("build_source needs a qc channel (quantum input, classical output)")
    if n < 1:
        raise ValidationError("block length n must be at least 1")
    dims = psi.dims
    if len(dims) != 2 or dims[1] != ch.dim_in:
        raise ValidationError(f"psi must live on R (x) X with dim X = {ch.dim_in}, got dims {dims}")
    V = psi.vector.reshape(dims)
    kraus = ch.kraus_operators()
    probs, states = [], []
    for y in range(ch.dim_out):
        E = sum(K.conj().T[:, [y]] @ K[[y], :] for K in kraus)
        sigma = V @ E.T @ V.conj().T
        p = float(np.trace(sigma).real)
        probs.append(p)
        states.append(sigma / p if p > 1e-15 else np.eye(dims[0]) / dims[0])
    probs = np.array(probs)
    h_y = entropy_from_eigenvalues(probs)
    h_r = matrix_entropy(sum(p * s for p, s in zip(probs, states)))
    h_ry = h_y + sum(p * matrix_entropy(s) for p, s in zip(probs, states) if p > 1e-15)
    return CqSource(n, probs, tuple(states), h_y, h_ry - h_r, h_r)


@dataclass(frozen=True)
class Binning:
    """Assignment of sequence indices to bins; atypical sequences get ``UNBINNED``."""

    num_bins: int
    assignment: np.ndarray
    delta: float
    seed: int
    typical_count: int
    unbinned_mass: float

    def members(self, z: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == z)

    def occupancy(self) -> dict:
        binned = self.assignment[self.assignment >= 0]
        counts = np.bincount(binned, minlength=self.num_bins) if binned.size else np.zeros(1)
        return {
            "expected": self.typical_count / self.num_bins,
            "mean_nonempty": float(counts[counts > 0].mean()) if np.any(counts > 0) else 0.0,
            "max": int(counts.max()),
        }


def _num_bins(src: CqSource, delta: float) -> int:
    return math.ceil(2.0 ** (src.n * (src.h_y_given_r + delta)) - 1e-9)


def random_binning(src: CqSource, delta: float, seed: int = 0) -> Binning:
    """Hash the strongly typical sequences into ``ceil(2^{n(H(Y|R)+delta)})`` bins.

    A sequence is typical when every letter's empirical frequency is within
    ``delta/2`` of its probability and letters of probability zero do not
    occur.  When there are at least as many bins as typical sequences they
    are placed injectively (in seeded random order).
    """
    if delta <= 0:
        raise ValidationError("delta must be positive")
    total = src.sequence_count()
    if total > ENUM_MAX_SEQUENCES:
        raise InfeasibleError(f"{total} output sequences exceed the enumeration limit {ENUM_MAX_SEQUENCES}")
    num_bins = _num_bins(src, delta)
    idx = np.arange(total, dtype=np.int64)
    letters = src.digits(idx)
    counts = np.stack([(letters == y).sum(axis=1) for y in range(src.alphabet)], axis=1)
    freq = counts / src.n
    typical = np.all(np.abs(freq - src.probs) <= delta / 2 + 1e-12, axis=1)
    typical &= np.all((src.probs > 0) | (counts == 0), axis=1)
    assignment = np.full(total, UNBINNED, dtype=np.int64)
    typ_idx = idx[typical]
    if num_bins >= typ_idx.size:
        order = _rng(seed).permutation(num_bins)[: typ_idx.size]
        assignment[typ_idx] = order
    else:
        key = splitmix64(np.uint64(seed) ^ splitmix64(typ_idx.astype(np.uint64)))
        assignment[typ_idx] = (key % np.uint64(num_bins)).astype(np.int64)
    probs = src.sequence_prob(idx)
    return Binning(num_bins, assignment, float(delta), int(seed), int(typ_idx.size), float(probs[~typical].sum()))


def _inv_sqrt_support(S: np.ndarray):
    w, U = np.linalg.eigh(S)
    keep = w > 1e-12 * max(w.max(), 1e-300)
    inv = (U[:, keep] / np.sqrt(w[keep])) @ U[:, keep].conj().T
    return inv, U[:, keep] @ U[:, keep].conj().T


def pgm_decoder(src: CqSource, members, max_dim: int = PGM_MAX_DIM) -> Povm:
    """Square-root measurement for ``{p(y^n) rho(y^n)}`` over ``members`` plus a completion element.

    Outcome labels are the sequence indices; the completion element (onto
    the kernel of the weighted average) is labelled ``None``.
    """
    members = [int(m) for m in members]
    if not members:
        raise ValidationError("pgm_decoder needs a non-empty bin")
    D = src.dim_r**src.n
    if D > max_dim:
        raise InfeasibleError(f"decoder dimension {D} exceeds the cap {max_dim}")
    weighted = [src.sequence_prob(m) * src.sequence_state(m) for m in members]
    inv, proj = _inv_sqrt_support(sum(weighted))
    elements = [inv @ w @ inv for w in weighted]
    elements = [(E + E.conj().T) / 2 for E in elements]
    labels: list = list(members)
    rest = np.eye(D) - proj
    if np.linalg.norm(rest) > TAU_POVM:
        elements.append(rest)
        labels.append(None)
    else:
        # fold the numerical remainder into the first element so completeness is exact
        elements[0] = elements[0] + (np.eye(D) - sum(elements))
    return Povm(elements, labels)


def bin_success_probabilities(src: CqSource, binning: Binning) -> dict:
    """Exact conditional decoding success Pr(J = K | Z = z) for every non-empty bin."""
    out = {}
    for z in np.unique(binning.assignment[binning.assignment >= 0]):
        members = binning.members(z)
        povm = pgm_decoder(src, members)
        mass = float(src.sequence_prob(members).sum())
        hit = sum(np.trace(E @ (src.sequence_prob(m) * src.sequence_state(m))).real for E, m in zip(povm.elements, members))
        out[int(z)] = float(hit) / mass
    return out


@dataclass
class DwReport:
    n: int
    delta: float
    seed: int
    num_bins: int
    pr_err: float
    stderr: float
    net_rate: float
    nominal_rate: float
    trials: int
    mode: str
    h_y: float
    h_y_given_r: float
    unbinned_mass: float
    typical_count: int
    occupancy: dict = field(default_factory=dict)

    @property
    def log_bins_per_use(self) -> float:
        return math.log2(self.num_bins) / self.n

    def row(self) -> list:
        return [self.n, self.delta, self.seed, self.num_bins, self.pr_err, self.stderr, self.net_rate, self.nominal_rate]

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "delta_bits": self.delta,
            "seed": self.seed,
            "num_bins": self.num_bins,
            "pr_err": self.pr_err,
            "stderr": self.stderr,
            "net_rate_bits_per_use": self.net_rate,
            "nominal_rate_bits_per_use": self.nominal_rate,
            "trials": self.trials,
            "mode": self.mode,
            "h_y_bits": self.h_y,
            "h_y_given_r_bits": self.h_y_given_r,
            "unbinned_mass": self.unbinned_mass,
            "typical_count": self.typical_count,
            "occupancy": self.occupancy,
        }


def run_dw(src: CqSource, delta: float, seed: int = 0, trials: int = 2000, mode: str = "auto") -> DwReport:
    """Simulate the binning protocol and report Pr(J != K) and the net rate.

    ``mode="auto"`` enumerates all ``|Y|^n`` outcome strings when there are at
    most 4096 of them and samples ``trials`` i.i.d. runs otherwise.  A string
    outside every bin is announced as bin 0 and counts as an error.
    """
    if mode not in ("auto", "exact", "sampled"):
        raise ValidationError(f"unknown mode {mode!r}")
    binning = random_binning(src, delta, seed)
    total = src.sequence_count()
    if mode == "auto":
        mode = "exact" if total <= EXACT_MAX_SEQUENCES else "sampled"
    if mode == "exact":
        success = 0.0
        for z, s in bin_success_probabilities(src, binning).items():
            success += s * float(src.sequence_prob(binning.members(z)).sum())
        pr_err, stderr, used = 1.0 - success, 0.0, 0
    else:
        rng = _rng(seed)
        seqs = rng.choice(total, size=trials, p=src.sequence_prob(np.arange(total)))
        cache: dict[int, Povm] = {}
        errors = 0
        for y in seqs:
            z = int(binning.assignment[y])
            if z == UNBINNED:
                errors += 1
                continue
            if z not in cache:
                cache[z] = pgm_decoder(src, binning.members(z))
            povm = cache[z]
            rho = src.sequence_state(int(y))
            q = np.clip([np.trace(E @ rho).real for E in povm.elements], 0, None)
            j = povm.outcomes[rng.choice(len(q), p=q / q.sum())]
            errors += j != int(y)
        pr_err = errors / trials
        stderr, used = math.sqrt(pr_err * (1 - pr_err) / trials), trials
    n = src.n
    return DwReport(
        n=n,
        delta=float(delta),
        seed=int(seed),
        num_bins=binning.num_bins,
        pr_err=float(pr_err),
        stderr=float(stderr),
        net_rate=float((n * src.h_y - math.log2(binning.num_bins)) / n),
        nominal_rate=float(src.h_y - src.h_y_given_r - delta),
        trials=used,
        mode=mode,
        h_y=src.h_y,
        h_y_given_r=src.h_y_given_r,
        unbinned_mass=binning.unbinned_mass,
        typical_count=binning.typical_count,
        occupancy=binning.occupancy(),
    )


def dw_sweep(psi: PureState, ch: Channel, ns, deltas, seeds, trials: int = 2000) -> list:
    reports = []
    for n in ns:
        for delta in deltas:
            src = build_source(psi, ch, n)
            for seed in seeds:
                reports.append(run_dw(src, delta, seed, trials))
    return reports


SWEEP_COLUMNS = ["n", "delta", "seed", "numBins", "prErr", "stderr", "netRate", "nominalRate"]


def sweep_csv(reports) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for r in reports:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in r.row()))
    return "\n".join(lines) + "\n"
