"""Ready-made protocols: the two-basis key-distribution construction, baselines and random ones."""

from __future__ import annotations

import numpy as np

from .core import (
    Channel,
    Register,
    _rng,
    example_channel_F,
    fourier_matrix,
    haar_random_unitary,
    identity_channel,
    maximally_entangled_state,
)
from .errors import ValidationError
from .protocol import (
    AuxBack,
    AuxForward,
    ClassicalMap,
    Instrument,
    LocalAlice,
    LocalBob,
    NoisyUse,
    Protocol,
)

__all__ = [
    "two_basis_protocol",
    "coin_over_identity",
    "constant_key_protocol",
    "basis_input_protocol",
    "random_qubit_channel",
    "random_protocol",
    "protocol_suite",
]


def two_basis_protocol(d: int, basis=None, conjugate: bool = True) -> Protocol:
    """One use of the two-basis channel plus one bit of back communication.

    Alice sends half of a maximally entangled pair through the channel.  Bob
    returns which basis G was measured; Alice then rotates her half so that
    measuring it in the computational basis reproduces Bob's outcome M.  Keys
    are J = (Z, M_hat) and K = (G, M), both encoded as ``g * d + m``.

    With ``conjugate=False`` Alice applies the adjoint of the basis change
    instead of its transpose.  For a non-real basis this is the wrong
    correction and the keys disagree.
    """
    V = fourier_matrix(d) if basis is None else np.asarray(basis, dtype=complex)
    ch = example_channel_F(d, V)
    correction = V.T if conjugate else V.conj().T
    phi = maximally_entangled_state(d, ("R", "X"))
    steps = [
        LocalAlice(Instrument.prepare(phi.registers, phi.vector)),
        NoisyUse(ch, "X", "Y"),
        ClassicalMap.from_function("B", [Register("Y", 2 * d, True)], Register("G", 2, True), lambda y: y // d),
        AuxBack("G", "Z"),
        LocalAlice({0: Instrument.unitary("R", d, np.eye(d)), 1: Instrument.unitary("R", d, correction)}, control="Z"),
        LocalAlice(Instrument.basis_measurement("R", d, "Mhat")),
        ClassicalMap.from_function(
            "A",
            [Register("Z", 2, True), Register("Mhat", d, True)],
            Register("J", 2 * d, True),
            lambda z, m: z * d + m,
        ),
    ]
    name = f"two-basis d={d}" + ("" if conjugate else " (uncorrected)")
    return Protocol(steps, "J", "Y", name=name)


def coin_over_identity(d: int = 2) -> Protocol:
    """Alice sends a uniform symbol over a noiseless classical channel; J = K = that symbol."""
    ch = identity_channel(d, classical=True)
    steps = [LocalAlice(Instrument.coin("C", np.full(d, 1.0 / d))), NoisyUse(ch, "C", "Y")]
    return Protocol(steps, "C", "Y", name=f"coin over identity d={d}")


def constant_key_protocol(channel: Channel | None = None) -> Protocol:
    """Both parties output 0 regardless of the channel: zero key entropy."""
    ch = channel or example_channel_F(2)
    d = ch.dim_in
    e0 = np.zeros(d)
    e0[0] = 1.0
    dy = ch.dim_out
    steps = [LocalAlice(Instrument.prepare([Register("X", d)], e0)), NoisyUse(ch, "X", "Y")]
    if not ch.output.classical:
        steps.append(LocalBob(Instrument.basis_measurement("Y", dy, "B")))
        src = Register("B", dy, True)
    else:
        src = Register("Y", dy, True)
    steps += [
        ClassicalMap.from_function("B", [src], Register("K", 2, True), lambda y: 0),
        LocalAlice(Instrument.coin("J", [1.0, 0.0])),
    ]
    return Protocol(steps, "J", "K", name="constant key")


def basis_input_protocol(d: int = 2, forward_bits: int = 0) -> Protocol:
    """Alice sends a uniformly random computational basis state through the two-basis channel.

    Bob guesses Alice's symbol from the outcome M.  Optionally Alice also
    forwards the first ``forward_bits`` bits of her symbol over the auxiliary link.
    """
    ch = example_channel_F(d)
    W = Register("W", d, True)
    prep = {w: Instrument.prepare([Register("X", d)], np.eye(d)[w]) for w in range(d)}
    steps = [
        LocalAlice(Instrument.coin("W", np.full(d, 1.0 / d))),
        LocalAlice(prep, control="W"),
        NoisyUse(ch, "X", "Y"),
    ]
    bob_inputs = [Register("Y", 2 * d, True)]
    for b in range(forward_bits):
        steps.append(ClassicalMap.from_function("A", [W], Register(f"F{b}", 2, True), lambda w, b=b: (w >> b) & 1))
        steps.append(AuxForward(f"F{b}", f"Zf{b}"))
        bob_inputs.append(Register(f"Zf{b}", 2, True))

    def guess(y, *bits):
        m = y % d
        for b, bit in enumerate(bits):
            m = (m & ~(1 << b)) | (bit << b)
        return m % d

    steps.append(ClassicalMap.from_function("B", bob_inputs, Register("K", d, True), guess))
    return Protocol(steps, "W", "K", name=f"basis input d={d} forward={forward_bits}")


def random_qubit_channel(seed=None, n_kraus: int = 2) -> Channel:
    """Random qubit channel from a Haar isometry into qubit (x) environment."""
    U = haar_random_unitary(2 * n_kraus, seed)
    iso = U[:, :2]
    return Channel.kraus([iso[2 * k : 2 * k + 2, :] for k in range(n_kraus)])


def random_protocol(seed=None, channel: Channel | None = None, uses: int | None = None,
                    aux: int | None = None, forward_only: bool = False) -> Protocol:
    """Random small protocol over ``channel``, for audits and property tests.

    Each use: Alice prepares a random pure state of a qubit memory and the
    channel input, Bob measures quantum outputs in a random basis, auxiliary
    bits (random functions of the sender's records) are exchanged, and Alice
    measures her memory in a basis chosen by the last bit Bob sent.  Keys are
    random binary functions of each party's classical records.
    """
    rng = _rng(seed)
    ch = channel or (example_channel_F(2) if rng.random() < 0.5 else random_qubit_channel(rng))
    n = uses if uses is not None else int(rng.integers(1, 3))
    n_aux = aux if aux is not None else int(rng.integers(0, 3))
    if n < 1:
        raise ValidationError("random_protocol needs at least one use")
    din, dout = ch.dim_in, ch.dim_out
    alice: list[Register] = []
    bob: list[Register] = []
    steps = []
    aux_at = sorted(rng.integers(0, n, size=n_aux).tolist())
    last_back = None
    counter = 0

    def table(inputs):
        out = {}
        for key in np.ndindex(*[r.dim for r in inputs]):
            out[tuple(int(x) for x in key)] = int(rng.integers(0, 2))
        return out

    for i in range(n):
        R, X, Y = Register(f"R{i}", 2), Register(f"X{i}", din), f"Y{i}"
        v = rng.normal(size=2 * din) + 1j * rng.normal(size=2 * din)
        steps.append(LocalAlice(Instrument.prepare([R, X], v)))
        steps.append(NoisyUse(ch, X.label, Y))
        if ch.output.classical:
            bob.append(Register(Y, dout, True))
        else:
            steps.append(LocalBob(Instrument.basis_measurement(Y, dout, f"B{i}", haar_random_unitary(dout, rng))))
            bob.append(Register(f"B{i}", dout, True))
        for _ in range(aux_at.count(i)):
            back = not forward_only and rng.random() < 0.5
            src_regs = bob if back else alice
            if not src_regs:
                back = not back and not forward_only
                src_regs = bob if back else alice
            if not src_regs:
                continue
            msg = Register(f"M{counter}", 2, True)
            party = "B" if back else "A"
            steps.append(ClassicalMap(party, tuple(r.label for r in src_regs), msg, table(src_regs)))
            dest = Register(f"Z{counter}", 2, True)
            steps.append((AuxBack if back else AuxForward)(msg.label, dest.label))
            (alice if back else bob).append(dest)
            (bob if back else alice).append(msg)
            if back:
                last_back = dest.label
            counter += 1
        meas = Register(f"A{i}", 2, True)
        if last_back is None:
            inst = Instrument.basis_measurement(R.label, 2, meas.label, haar_random_unitary(2, rng))
            steps.append(LocalAlice(inst))
        else:
            insts = {z: Instrument.basis_measurement(R.label, 2, meas.label, haar_random_unitary(2, rng)) for z in (0, 1)}
            steps.append(LocalAlice(insts, control=last_back))
        alice.append(meas)
    steps.append(ClassicalMap("A", tuple(r.label for r in alice), Register("J", 2, True), table(alice)))
    steps.append(ClassicalMap("B", tuple(r.label for r in bob), Register("K", 2, True), table(bob)))
    return Protocol(steps, "J", "K", name=f"random seed={seed}")


def protocol_suite() -> list:
    """Shipped reference protocols used by the audits."""
    return [
        two_basis_protocol(2),
        two_basis_protocol(3),
        coin_over_identity(2),
        constant_key_protocol(),
        basis_input_protocol(2),
        basis_input_protocol(2, forward_bits=1),
    ] + [random_protocol(seed) for seed in range(4)]
