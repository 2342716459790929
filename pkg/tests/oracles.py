"""Independent reference computations used to check the package.

Everything here is written with explicit index loops or closed forms and
shares no code with ``qrand``.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def loop_partial_trace(m, dims, keep):
    """Partial trace by summing matrix entries over explicit multi-indices."""
    n = len(dims)
    drop = [i for i in range(n) if i not in keep]
    kdims = [dims[i] for i in keep]
    K = int(np.prod(kdims)) if kdims else 1
    out = np.zeros((K, K), dtype=complex)

    def flat(idx):
        f = 0
        for i in range(n):
            f = f * dims[i] + idx[i]
        return f

    for a in itertools.product(*[range(d) for d in kdims]):
        for b in itertools.product(*[range(d) for d in kdims]):
            total = 0.0
            for t in itertools.product(*[range(dims[i]) for i in drop]):
                ia, ib = [0] * n, [0] * n
                for pos, i in enumerate(keep):
                    ia[i], ib[i] = a[pos], b[pos]
                for pos, i in enumerate(drop):
                    ia[i] = ib[i] = t[pos]
                total += m[flat(ia), flat(ib)]
            ra = 0
            rb = 0
            for pos in range(len(keep)):
                ra = ra * kdims[pos] + a[pos]
                rb = rb * kdims[pos] + b[pos]
            out[ra, rb] = total
    return out


def eig_entropy(m):
    """Entropy in bits through the general (non-Hermitian) eigen-solver."""
    w = np.linalg.eigvals(np.asarray(m, dtype=complex)).real
    return float(sum(-x * math.log2(x) for x in w if x > 1e-14))


def shannon_bits(p):
    return float(sum(-x * math.log2(x) for x in np.ravel(p) if x > 0))


def binary_entropy(x):
    return shannon_bits([x, 1 - x])


def pauli_channel_chi(q):
    """Holevo capacity of the Pauli channel with weights (I, X, Y, Z); closed form for unital qubit channels."""
    lam = [q[0] + q[1] - q[2] - q[3], q[0] - q[1] + q[2] - q[3], q[0] - q[1] - q[2] + q[3]]
    return 1.0 - binary_entropy((1 + max(abs(v) for v in lam)) / 2)


def pauli_channel_mi(q):
    """Entanglement-assisted capacity of a Pauli channel: 2 - H(q), attained at the maximally mixed input."""
    return 2.0 - shannon_bits(q)


def two_basis_joint(d, V, correction):
    """Direct linear-algebra joint law of (J, K) for the two-basis key protocol.

    Alice holds R of (1/sqrt d) sum |m>|m>.  The channel measures X in the
    computational basis (G=0) or the columns of V (G=1), each with
    probability 1/2.  Given outcome (g, m), R collapses to the complex
    conjugate of the measured basis vector; for g=1 Alice applies
    ``correction`` and measures R in the computational basis.
    """
    bases = [np.eye(d), V]
    joint = {}
    for g in (0, 1):
        B = bases[g]
        for m in range(d):
            vec = B[:, m].conj() / math.sqrt(d)  # unnormalized R state, norm^2 = 1/d
            p_outcome = 0.5 * float(np.vdot(vec, vec).real)
            r = vec / np.linalg.norm(vec)
            if g == 1:
                r = correction @ r
            for mhat in range(d):
                q = abs(r[mhat]) ** 2
                if q > 1e-15:
                    key = (g * d + mhat, g * d + m)
                    joint[key] = joint.get(key, 0.0) + p_outcome * q
    return joint


def joint_stats(joint):
    pj, pk = {}, {}
    for (j, k), p in joint.items():
        pj[j] = pj.get(j, 0.0) + p
        pk[k] = pk.get(k, 0.0) + p
    h_jk = shannon_bits(list(joint.values()))
    h_j, h_k = shannon_bits(list(pj.values())), shannon_bits(list(pk.values()))
    err = sum(p for (j, k), p in joint.items() if j != k)
    return {"h_k": h_k, "i_jk": h_j + h_k - h_jk, "h_k_given_j": h_jk - h_j, "pr_err": err}


def maassen_uffink_sum(psi, V):
    """H(computational outcomes) + H(outcomes in the columns of V) for a pure vector."""
    p0 = np.abs(psi) ** 2
    p1 = np.abs(V.conj().T @ psi) ** 2
    return shannon_bits(p0 / p0.sum()) + shannon_bits(p1 / p1.sum())


def strong_typical_mass(probs, n, slack):
    """Probability that an i.i.d. string of length n has every letter frequency within ``slack``."""
    probs = np.asarray(probs, dtype=float)
    k = len(probs)
    total = 0.0

    def compositions(rem, parts):
        if parts == 1:
            yield (rem,)
            return
        for first in range(rem + 1):
            for rest in compositions(rem - first, parts - 1):
                yield (first,) + rest

    for counts in compositions(n, k):
        if any(c > 0 and p == 0 for c, p in zip(counts, probs)):
            continue
        if all(abs(c / n - p) <= slack + 1e-12 for c, p in zip(counts, probs)):
            coef = math.factorial(n)
            for c in counts:
                coef //= math.factorial(c)
            total += coef * float(np.prod([p**c for p, c in zip(probs, counts)]))
    return total
