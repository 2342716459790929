"""Capacity functionals of a channel: I(E), chi(E), and classical capacity.

``channel_mutual_information`` maximizes the input/output quantum mutual
information over purified inputs,

    f(rho) = S(rho) + S(N(rho)) - S(W(rho)),   W(rho)_kl = Tr(K_k rho K_l^dag),

which is concave in ``rho``.  ``holevo_information`` maximizes the Holevo
quantity over pure-state ensembles by alternating a Blahut-Arimoto update of
the weights with a gradient step of the states on the unit sphere.  The value
it reports is attained by the returned ensemble, so it is a lower bound on
chi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import Channel, DensityOperator, _rng, max_dim
from .errors import DimensionError, ValidationError
from .measures import EIG_FLOOR, Ensemble, entropy_from_eigenvalues, holevo_quantity

__all__ = [
    "SolverOptions",
    "CapacityReport",
    "mi_objective",
    "mi_gradient",
    "channel_mutual_information",
    "holevo_information",
    "blahut_arimoto",
    "brute_force_qubit_mi",
    "binary_entropy",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-7
    max_iters: int = 5000
    restarts: int | None = None
    seed: int = 0


@dataclass
class CapacityReport:
    value: float
    witness: Any
    iterations: int
    final_step_norm: float
    converged: bool
    history: list = field(default_factory=list, repr=False)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        if isinstance(self.witness, DensityOperator):
            w = {"kind": "density_operator", "matrix": _enc(self.witness.matrix)}
        elif isinstance(self.witness, Ensemble):
            w = {
                "kind": "ensemble",
                "probabilities": [float(p) for p in self.witness.probabilities],
                "states": [_enc(s.matrix) for s in self.witness.states],
            }
        else:
            w = {"kind": "distribution", "probabilities": [float(x) for x in np.asarray(self.witness)]}
        return {
            "value_bits": float(self.value),
            "witness": w,
            "iterations": int(self.iterations),
            "final_step_norm": float(self.final_step_norm),
            "converged": bool(self.converged),
        }


def _enc(m):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


# --- helpers on stacked Kraus operators ---------------------------------------------


def _kraus_stack(ch: Channel) -> np.ndarray:
    return np.stack(ch.kraus_operators())  # (r, dout, din)


def _out(K, rho):
    return np.einsum("kab,bc,kdc->ad", K, rho, K.conj(), optimize=True)


def _env(K, rho):
    return np.einsum("kab,bc,lac->kl", K, rho, K.conj(), optimize=True)


def _out_adj(K, Y):
    return np.einsum("kba,bc,kcd->ad", K.conj(), Y, K, optimize=True)


def _env_adj(K, Y):
    return np.einsum("lk,lba,kbc->ac", Y, K.conj(), K, optimize=True)


def _herm(m):
    return 0.5 * (m + m.conj().T)


def _entropy(m):
    return entropy_from_eigenvalues(np.linalg.eigvalsh(_herm(m)))


def _log2m(m):
    w, v = np.linalg.eigh(_herm(m))
    return (v * np.log2(np.clip(w, EIG_FLOOR, None))) @ v.conj().T


def mi_objective(ch: Channel, rho) -> float:
    """f(rho) = S(rho) + S(N(rho)) - S(W(rho)): I(R:Y) for a purification of rho."""
    K = _kraus_stack(ch)
    rho = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    return _entropy(rho) + _entropy(_out(K, rho)) - _entropy(_env(K, rho))


def mi_gradient(ch: Channel, rho) -> np.ndarray:
    """Hermitian gradient of ``mi_objective`` w.r.t. rho (so df = Tr(G d rho))."""
    K = _kraus_stack(ch)
    rho = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    G = -_log2m(rho) - _out_adj(K, _log2m(_out(K, rho))) + _env_adj(K, _log2m(_env(K, rho)))
    G -= np.eye(rho.shape[0]) / LN2
    return _herm(G)


# --- I(E) ------------------------------------------------------------------------------


def _gibbs(H):
    """rho = exp(H)/Tr exp(H) and log2(rho), both from one eigendecomposition."""
    w, v = np.linalg.eigh(H)
    w = w - w.max()
    e = np.exp(w)
    z = e.sum()
    rho = (v * (e / z)) @ v.conj().T
    log2rho = (v * ((w - np.log(z)) / LN2)) @ v.conj().T
    return _herm(rho), _herm(log2rho)


def channel_mutual_information(ch: Channel, opts: SolverOptions | None = None, start=None) -> CapacityReport:
    """Maximize f(rho) by exponentiated-gradient (mirror) ascent.

    Iterates ``H <- H + eta * G`` with ``rho = exp(H)/Tr exp(H)`` and a
    backtracking step size, so every iterate is full rank and the objective
    never decreases.  The stationarity measure reported as
    ``final_step_norm`` is ``|| rho^(1/2) (G - <G>) rho^(1/2) ||_F``.
    """
    opts = opts or SolverOptions()
    d = ch.dim_in
    if d > max_dim():
        raise DimensionError(f"input dimension {d} exceeds cap {max_dim()}")
    K = _kraus_stack(ch)
    if start is None:
        rng = _rng(opts.seed)
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        rho0 = A @ A.conj().T
        rho0 /= np.trace(rho0).real
    else:
        rho0 = start.matrix if isinstance(start, DensityOperator) else np.asarray(start, dtype=complex)
    w, v = np.linalg.eigh(_herm(rho0))
    H = (v * np.log(np.clip(w, 1e-300, None))) @ v.conj().T

    def value(rho, log2rho):
        s_in = -np.trace(rho @ log2rho).real
        return s_in + _entropy(_out(K, rho)) - _entropy(_env(K, rho))

    def grad(rho, log2rho):
        G = -log2rho - _out_adj(K, _log2m(_out(K, rho))) + _env_adj(K, _log2m(_env(K, rho)))
        return _herm(G)

    def stationarity(rho, G):
        g = G - np.trace(rho @ G).real * np.eye(d)
        w, v = np.linalg.eigh(rho)
        sq = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
        return float(np.linalg.norm(sq @ g @ sq))

    rho, log2rho = _gibbs(H)
    f = value(rho, log2rho)
    history = [f]
    eta = 1.0
    it = 0
    gnorm = np.inf
    converged = False
    for it in range(1, opts.max_iters + 1):
        G = grad(rho, log2rho)
        gnorm = stationarity(rho, G)
        if gnorm < opts.tol:
            converged = True
            break
        while True:
            H_new = H + eta * G * LN2
            rho_new, log2_new = _gibbs(H_new)
            f_new = value(rho_new, log2_new)
            if f_new >= f - 1e-15:
                break
            eta *= 0.5
            if eta < 1e-12:
                break
        if eta < 1e-12:
            break
        H, rho, log2rho = H_new, rho_new, log2_new
        f = max(f, f_new)
        history.append(f)
        eta = min(eta * 1.5, 2.0)
    rho = rho / np.trace(rho).real
    witness = DensityOperator([ch.input], rho)
    f = mi_objective(ch, witness)
    return CapacityReport(f, witness, it, gnorm, converged, history)


# --- chi(E) ------------------------------------------------------------------------------


def _stack_log2(S):
    w, v = np.linalg.eigh(S)
    return np.einsum("nij,nj,nkj->nik", v, np.log2(np.clip(w, EIG_FLOOR, None)), v.conj())


def _stack_entropy(S):
    w = np.linalg.eigvalsh(S)
    w = np.where(w > EIG_FLOOR, w, 1.0)
    return -np.sum(w * np.log2(w), axis=-1)


class _ChiProblem:
    """Holevo quantity of a pure-state ensemble pushed through fixed Kraus operators."""

    def __init__(self, K):
        self.K = K

    def parts(self, p, psi):
        M = np.tensordot(psi, self.K, axes=([1], [2]))  # M[n, k] = K_k psi_n
        Mt = M.transpose(0, 2, 1)
        outs = Mt @ Mt.conj().transpose(0, 2, 1)
        avg = np.tensordot(p, outs, axes=1)
        h_states = _stack_entropy(outs)
        chi = _entropy(avg) - float(p @ h_states)
        return chi, h_states, outs, avg, M

    def value(self, p, psi):
        return self.parts(p, psi)[0]

    def state_gradient(self, p, psi, outs, avg, M):
        """Euclidean gradient 2 A_n psi_n with A_n = p_n N^dag(log2 N(psi_n) - log2 N(avg))."""
        D = _stack_log2(outs) - _log2m(avg)[None]
        T = M @ D.transpose(0, 2, 1)
        Apsi = np.tensordot(T, self.K.conj(), axes=([1, 2], [0, 1])) * p[:, None]
        return 2 * Apsi


def _normalize_rows(psi):
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


STALL_WINDOW = 50
STALL_TOL = 1e-8
ARMIJO = 0.1
PRUNE_WEIGHT = 0.1


def _chi_run(prob: _ChiProblem, d: int, k: int, rng, tol: float, max_iters: int):
    psi = _normalize_rows(rng.standard_normal((k, d)) + 1j * rng.standard_normal((k, d)))
    p = np.full(k, 1.0 / k)
    chi, h, outs, avg, M = prob.parts(p, psi)
    history = [chi]
    eta = 1.0
    mu = 1.0
    gnorm = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        # weights: over-relaxed Blahut-Arimoto step on the induced cq channel;
        # mu = 1 is the plain (monotone) update
        div = -h - np.einsum("nab,ba->n", outs, _log2m(avg)).real
        candidates = []
        for m in sorted({mu, 1.0}):
            w = p * np.exp2(m * (div - div.max()))
            cand = w / w.sum()
            candidates.append((prob.parts(cand, psi), cand, m))
        # the plain step (m = 1) never decreases chi; an over-relaxed step is
        # kept only when it beats it, which rules out hopping to a mirror point
        parts_new, p_new, m = max(candidates, key=lambda c: c[0][0])
        step_p = float(np.abs(p_new - p).sum())
        if parts_new[0] >= chi - 1e-15:
            p = p_new
            chi, h, outs, avg, M = parts_new
        mu = min(mu * 2, 64.0) if m > 1.0 else max(1.0, mu / 2)
        # a superfluous state only fades like 1/iterations while the others
        # tilt to compensate; dropping it outright when that costs nothing
        # escapes this slow valley
        small = np.flatnonzero((p > 0) & (p < PRUNE_WEIGHT / k))
        if small.size and small.size < np.count_nonzero(p):
            # try the weakest state alone and all small ones together
            # (superfluous states often fade in balancing pairs)
            for drop in ([small[np.argmin(p[small])]], small):
                q = p.copy()
                q[drop] = 0.0
                q /= q.sum()
                parts_q = prob.parts(q, psi)
                if parts_q[0] >= chi:
                    p = q
                    chi, h, outs, avg, M = parts_q
                    break
        # states: Riemannian gradient ascent on the unit sphere
        g = prob.state_gradient(p, psi, outs, avg, M)
        radial = np.einsum("na,na->n", psi.conj(), g).real
        tangent = g - radial[:, None] * psi
        g = tangent / np.maximum(p, 1e-12)[:, None]
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol and step_p < tol:
            converged = True
            break
        # Armijo condition: near pure outputs the gradient grows like log(1/eps),
        # and a step that merely does not decrease chi can hop across the pole
        # to the mirror-image state forever
        slope = float(np.einsum("na,na->", tangent.conj(), g).real)
        while True:
            psi_new = _normalize_rows(psi + eta * g)
            parts_new = prob.parts(p, psi_new)
            accepted = parts_new[0] >= chi + ARMIJO * eta * slope
            if accepted or eta < 1e-14:
                break
            eta *= 0.5
        if accepted:
            psi = psi_new
            chi, h, outs, avg, M = parts_new
            eta = min(eta * 2.0, 1e3)
        else:
            eta = 1.0
        history.append(chi)
        if it > STALL_WINDOW and history[-1] - history[-1 - STALL_WINDOW] < STALL_TOL:
            converged = True
            break
    return chi, p, psi, it, gnorm, converged, history


def holevo_information(ch: Channel, opts: SolverOptions | None = None) -> CapacityReport:
    """Best Holevo quantity over ensembles of ``dim_in**2`` pure states.

    Several random restarts (8 by default) are run and the best is kept.  A
    run counts as converged when the state gradient and weight update both
    fall below ``opts.tol``, or when the objective gains less than 1e-8 over
    50 iterations (the optimum usually sits where output entropies are not
    differentiable, so the gradient decays only like eps*log(eps)).
    """
    opts = opts or SolverOptions()
    d = ch.dim_in
    if d * ch.dim_out > max_dim():
        raise DimensionError(f"channel size {d}x{ch.dim_out} exceeds cap {max_dim()}")
    restarts = 8 if opts.restarts is None else opts.restarts
    prob = _ChiProblem(_kraus_stack(ch))
    k = d * d
    rng = _rng(opts.seed)
    best = None
    for _ in range(max(restarts, 1)):
        run = _chi_run(prob, d, k, rng, opts.tol, opts.max_iters)
        if best is None or run[0] > best[0]:
            best = run
    chi, p, psi, it, gnorm, converged, history = best
    keep = p > 0
    ens = Ensemble.from_arrays(p[keep] / p[keep].sum(), psi[keep], register=ch.input.label)
    value = holevo_quantity(ens, ch)
    return CapacityReport(value, ens, it, gnorm, converged, history, {"restarts": restarts})


# --- classical --------------------------------------------------------------------------


def _mutual_info_classical(P, p):
    q = P @ p
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(P > 0, P / q[:, None], 1.0)
        D = np.sum(np.where(P > 0, P * np.log2(ratio), 0.0), axis=0)
    return float(p @ D), D


def blahut_arimoto(P, tol: float = 1e-12, max_iters: int = 100000) -> CapacityReport:
    """Classical capacity of the column-stochastic matrix ``P[y, x]``.

    Stops when the gap between the standard upper bound ``max_x D_x`` and the
    current mutual information drops below ``tol``.  ``history`` holds the
    (non-decreasing) mutual information after each update.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or np.any(P < 0) or np.max(np.abs(P.sum(axis=0) - 1)) > 1e-9:
        raise ValidationError("blahut_arimoto needs a column-stochastic matrix")
    n = P.shape[1]
    p = np.full(n, 1.0 / n)
    value, D = _mutual_info_classical(P, p)
    history = [value]
    gap = float(D.max() - value)
    it = 0
    converged = gap < tol
    while not converged and it < max_iters:
        it += 1
        w = p * np.exp2(D - D.max())
        p_new = w / w.sum()
        step = float(np.abs(p_new - p).sum())
        p = p_new
        value, D = _mutual_info_classical(P, p)
        history.append(value)
        gap = float(D.max() - value)
        converged = gap < tol or step == 0.0
    return CapacityReport(value, p, it, gap, converged, history, {"upper_bound": float(D.max())})


# --- brute-force oracle -------------------------------------------------------------------


def _bloch_points(grid: int, center=None, radius=None):
    if center is None:
        r = np.linspace(0.0, 1.0, grid)
        th = np.linspace(0.0, np.pi, grid)
        ph = np.linspace(0.0, 2 * np.pi, grid, endpoint=False)
        R, T, PH = np.meshgrid(r, th, ph, indexing="ij")
        pts = np.stack([R * np.sin(T) * np.cos(PH), R * np.sin(T) * np.sin(PH), R * np.cos(T)], axis=-1)
        return pts.reshape(-1, 3)
    axis = np.linspace(-radius, radius, grid)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3) + center
    return pts[np.linalg.norm(pts, axis=1) <= 1.0]


def _mi_batch(K, pts, chunk=20000):
    sig = [
        np.array([[0, 1], [1, 0]], dtype=complex),
        np.array([[0, -1j], [1j, 0]], dtype=complex),
        np.array([[1, 0], [0, -1]], dtype=complex),
    ]
    I2 = np.eye(2, dtype=complex)
    # linear maps evaluated on the Pauli basis
    out_basis = [_out(K, m) for m in [I2] + sig]
    env_basis = [_env(K, m) for m in [I2] + sig]
    vals = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        b = pts[s : s + chunk]
        r = np.linalg.norm(b, axis=1)
        lam = np.stack([(1 + r) / 2, (1 - r) / 2], axis=1)
        lam = np.where(lam > EIG_FLOOR, lam, 1.0)
        s_in = -np.sum(lam * np.log2(lam), axis=1)
        coeff = np.concatenate([np.ones((len(b), 1)), b], axis=1) / 2
        outs = np.einsum("ni,iab->nab", coeff, np.stack(out_basis))
        envs = np.einsum("ni,iab->nab", coeff, np.stack(env_basis))
        vals[s : s + chunk] = s_in + _stack_entropy(outs) - _stack_entropy(envs)
    return vals


def brute_force_qubit_mi(ch: Channel, grid: int = 100, refine: int = 0, return_point: bool = False):
    """Grid search of f over the Bloch ball of a qubit input.

    ``grid`` points per spherical axis (``grid**3`` evaluations).  Each
    ``refine`` level re-grids a cube of half-width two cells around the best
    point found so far.
    """
    if ch.dim_in != 2:
        raise DimensionError(f"brute_force_qubit_mi needs a qubit input, got dim {ch.dim_in}")
    K = _kraus_stack(ch)
    pts = _bloch_points(grid)
    vals = _mi_batch(K, pts)
    i = int(np.argmax(vals))
    best, point = float(vals[i]), pts[i]
    radius = 2.0 / (grid - 1)
    for _ in range(refine):
        pts = _bloch_points(max(grid // 4, 11), center=point, radius=radius)
        vals = _mi_batch(K, pts)
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, point = float(vals[j]), pts[j]
        radius /= 4
    if return_point:
        return best, point
    return best
