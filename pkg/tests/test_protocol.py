import json
import math

import numpy as np
import pytest

from oracles import joint_stats, shannon_bits, two_basis_joint
from qrand.capacity import channel_mutual_information, holevo_information
from qrand.core import Register, example_channel_F, fourier_matrix, haar_random_unitary, identity_channel
from qrand.errors import InfeasibleError, RegisterError, ValidationError
from qrand.library import (
    basis_input_protocol,
    coin_over_identity,
    constant_key_protocol,
    protocol_suite,
    random_protocol,
    two_basis_protocol,
)
from qrand.measures import mutual_information
from qrand.protocol import (
    AuxBack,
    AuxForward,
    Instrument,
    LocalAlice,
    LocalBob,
    NoisyUse,
    Protocol,
    audit_trace,
    branches_to_state,
    chi_converse_check,
    goodness,
    mi_audit,
    protocol_from_json,
    protocol_to_json,
    run_exact,
    run_sampled,
    trace_from_json,
)

F2_MI = 1.0


def exact_mi(ch):
    return channel_mutual_information(ch).value


# --- two-basis protocol -------------------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3, 4, 8])
def test_two_basis_protocol_is_exact(d):
    rep = run_exact(two_basis_protocol(d))
    assert rep.pr_err <= 1e-9
    assert abs(rep.h_k - (1 + math.log2(d))) <= 1e-9
    assert abs(rep.net_rate - math.log2(d)) <= 1e-9
    assert abs(rep.i_jk - (1 + math.log2(d))) <= 1e-9
    assert rep.log_az == 1.0 and rep.log_af == 0.0
    assert not rep.forward_assisted


@pytest.mark.parametrize("d", [2, 3, 4])
def test_two_basis_joint_matches_linear_algebra_oracle(d):
    V = fourier_matrix(d)
    for conjugate in (True, False):
        rep = run_exact(two_basis_protocol(d, conjugate=conjugate))
        correction = V.T if conjugate else V.conj().T
        oracle = two_basis_joint(d, V, correction)
        got = {}
        for (j, k, _z), p in rep.joint.items():
            got[(j, k)] = got.get((j, k), 0.0) + p
        keys = set(got) | set(oracle)
        for key in keys:
            assert abs(got.get(key, 0.0) - oracle.get(key, 0.0)) < 1e-12, key
        stats = joint_stats(oracle)
        assert abs(rep.pr_err - stats["pr_err"]) < 1e-12
        assert abs(rep.h_k_given_j - stats["h_k_given_j"]) < 1e-12


def test_two_basis_protocol_with_random_basis():
    V = haar_random_unitary(3, 17)
    rep = run_exact(two_basis_protocol(3, basis=V))
    assert rep.pr_err < 1e-9
    oracle = joint_stats(two_basis_joint(3, V, V.T))
    assert abs(rep.h_k - oracle["h_k"]) < 1e-12


def test_wrong_correction_is_detected_for_complex_basis():
    rep = run_exact(two_basis_protocol(3, conjugate=False))
    assert abs(rep.pr_err - 1 / 3) < 1e-12
    # at d = 2 the Fourier basis is real, so adjoint and transpose coincide
    assert run_exact(two_basis_protocol(2, conjugate=False)).pr_err < 1e-12


def test_two_basis_per_step_information():
    rep = run_exact(two_basis_protocol(2))
    mi = dict(rep.per_step_mi)
    assert abs(mi[-1]) < 1e-12
    assert abs(mi[0]) < 1e-12  # Alice's local preparation
    assert abs(mi[1] - F2_MI) < 1e-12  # I(R:Y) after the channel use
    records = mi_audit(two_basis_protocol(2), exact_mi)
    assert all(r.ok for r in records)


# --- engine vs full state -----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_engine_information_matches_materialized_state(seed):
    p = random_protocol(seed)
    rep = run_exact(p, keep_branches=True)
    state = branches_to_state(rep.branches, rep.owners)
    alice = [lab for lab in state.labels if rep.owners[lab] == "A"]
    bob = [lab for lab in state.labels if rep.owners[lab] == "B"]
    assert abs(mutual_information(state, alice, bob) - rep.steps[-1].mi) < 1e-9


def test_branch_probabilities_sum_to_one():
    for p in protocol_suite():
        rep = run_exact(p, keep_branches=True)
        assert abs(sum(b.prob for b in rep.branches) - 1) < 1e-12
        assert abs(sum(rep.joint.values()) - 1) < 1e-12


def test_sampled_mode_agrees_with_exact():
    p = two_basis_protocol(3, conjugate=False)
    est = run_sampled(p, 1500, seed=3)
    assert abs(est["pr_err"] - 1 / 3) <= 3 * est["stderr"]
    again = run_sampled(p, 1500, seed=3)
    assert again == est


def test_exact_run_is_deterministic():
    a = run_exact(random_protocol(3)).to_json()
    b = run_exact(random_protocol(3)).to_json()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# --- validation ---------------------------------------------------------------------------


def test_protocol_without_channel_use_is_rejected():
    steps = [LocalAlice(Instrument.coin("J", [0.5, 0.5])), LocalBob(Instrument.coin("K", [0.5, 0.5]))]
    with pytest.raises(ValidationError, match="n >= 1"):
        Protocol(steps, "J", "K")


def test_alphabet_bound_is_enforced():
    p = coin_over_identity(4)
    assert p.c == 2.0
    with pytest.raises(ValidationError, match="alphabet bound"):
        Protocol(p.steps, "C", "Y", c=1.0)


def test_ownership_and_kind_checks():
    ch = identity_channel(2, classical=True)
    with pytest.raises(RegisterError, match="belongs to party"):
        Protocol([LocalBob(Instrument.coin("C", [0.5, 0.5])), NoisyUse(ch, "C", "Y")], "C", "Y")
    with pytest.raises(RegisterError, match="must be classical"):
        Protocol([
            LocalAlice(Instrument.prepare([Register("X", 2)], [1, 0])),
            AuxForward("X", "Z"),
            LocalAlice(Instrument.coin("C", [0.5, 0.5])),
            NoisyUse(ch, "C", "Y"),
        ], "C", "Y")
    with pytest.raises(RegisterError, match="already in use"):
        Protocol([
            LocalAlice(Instrument.coin("C", [0.5, 0.5])),
            NoisyUse(ch, "C", "C"),
        ], "C", "C")


def test_mismatched_key_alphabets_are_rejected():
    steps = [
        LocalAlice(Instrument.coin("C", [0.5, 0.5])),
        NoisyUse(identity_channel(2, classical=True), "C", "Y"),
        LocalAlice(Instrument.coin("J", [0.25] * 4)),
    ]
    with pytest.raises(ValidationError, match="alphabet"):
        Protocol(steps, "J", "Y")


def test_dimension_cap_names_the_step(monkeypatch):
    monkeypatch.setenv("QRAND_MAX_DIM", "4")
    with pytest.raises(InfeasibleError, match=r"step 0 \(local\)"):
        run_exact(two_basis_protocol(3))


def test_instrument_must_be_trace_preserving():
    with pytest.raises(ValidationError, match="trace preserving"):
        Instrument(("X",), (), {0: [np.array([[1, 0]])]}, Register("M", 2, True))


# --- goodness / audits --------------------------------------------------------------------


def independent_keys(bits):
    """J and K independent and uniform on 2**bits values with one useless channel use."""
    size = 2**bits
    steps = [
        LocalAlice(Instrument.coin("C", [1.0, 0.0])),
        NoisyUse(identity_channel(2, classical=True), "C", "Y"),
        LocalAlice(Instrument.coin("J", np.full(size, 1 / size))),
        LocalBob(Instrument.coin("K", np.full(size, 1 / size))),
    ]
    return Protocol(steps, "J", "K", name=f"independent {bits}")


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_fano_bound_worst_case(bits):
    rep = run_exact(independent_keys(bits))
    g = goodness(rep)
    assert abs(g["epsilon"] - (1 - 2.0**-bits)) < 1e-12
    assert abs(g["h_k_given_j_bits"] - bits) < 1e-12
    assert g["fano_holds"]
    assert abs(g["fano_bound_bits"] - ((1 - 2.0**-bits) * bits + 1)) < 1e-12


def test_fano_bound_holds_on_suite():
    for p in protocol_suite():
        g = goodness(run_exact(p))
        assert g["h_k_given_j_bits"] <= g["epsilon"] * p.c * p.n + 1 + 1e-9, p.name


def test_mi_audit_on_suite_and_random_protocols():
    cache = {}

    def mi_of(ch):
        if id(ch) not in cache:
            cache[id(ch)] = exact_mi(ch)
        return cache[id(ch)]

    protocols = protocol_suite() + [random_protocol(100 + s) for s in range(20)]
    for p in protocols:
        records = mi_audit(p, mi_of)
        assert all(r.ok for r in records), (p.name, [r for r in records if not r.ok])


def test_corrupted_trace_is_flagged():
    p = two_basis_protocol(2)
    rep = run_exact(p)
    mi_audit(p, exact_mi, rep)
    obj = rep.to_json()
    obj["steps"][2]["mi_bits"] += 0.5
    records = audit_trace(trace_from_json(obj))
    assert [r.index for r in records if not r.ok] == [1]


def test_audit_requires_bounds():
    rep = run_exact(coin_over_identity(2))
    with pytest.raises(ValidationError, match="no recorded bound"):
        audit_trace(rep)


def test_chi_converse_on_forward_protocols():
    chi_f2 = holevo_information(example_channel_F(2)).value
    for fwd in (0, 1):
        p = basis_input_protocol(2, fwd)
        check = chi_converse_check(p, chi_f2)
        assert check["holds"]
        assert check["log_az_bits"] == fwd
    for s in range(10):
        p = random_protocol(200 + s, channel=example_channel_F(2), forward_only=True)
        check = chi_converse_check(p, p.n * chi_f2)
        assert check["holds"], (p.name, check)
    with pytest.raises(ValidationError, match="forward-assisted"):
        chi_converse_check(two_basis_protocol(2), 1.0)


def test_coin_over_identity_rate():
    rep = run_exact(coin_over_identity(4))
    assert rep.pr_err == 0.0 and abs(rep.net_rate - 2.0) < 1e-12


def test_constant_key_pays_for_communication():
    base = constant_key_protocol()
    rep = run_exact(base)
    assert rep.h_k == 0.0 and rep.net_rate == 0.0 and rep.pr_err == 0.0
    steps = list(base.steps) + [
        LocalAlice(Instrument.coin("S", [0.5, 0.5])),
        AuxForward("S", "T"),
        LocalBob(Instrument.coin("Q", [0.25] * 4)),
        AuxBack("Q", "U"),
    ]
    rep = run_exact(Protocol(steps, "J", "K"))
    assert rep.h_k == 0.0
    assert abs(rep.net_rate - (-3.0 / rep.n)) < 1e-12
    assert abs(rep.net_rate_forward - (-1.0 / rep.n)) < 1e-12


def test_basis_input_protocol_statistics():
    rep = run_exact(basis_input_protocol(2))
    # Bob reads the symbol in the matching basis and guesses in the other one
    assert abs(rep.pr_err - 0.25) < 1e-12
    assert abs(rep.h_k - 1.0) < 1e-12
    assert abs(rep.h_k_given_j - shannon_bits([1 - 0.25, 0.25])) < 1e-12
    assert run_exact(basis_input_protocol(2, 1)).pr_err < 1e-12


# --- JSON ---------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "p",
    [two_basis_protocol(3), coin_over_identity(2), basis_input_protocol(2, 1), random_protocol(5)],
    ids=["two-basis", "coin", "basis-input", "random"],
)
def test_protocol_json_roundtrip(p):
    back = protocol_from_json(json.loads(json.dumps(protocol_to_json(p))))
    a, b = run_exact(p), run_exact(back)
    assert a.joint.keys() == b.joint.keys()
    for key in a.joint:
        assert abs(a.joint[key] - b.joint[key]) < 1e-12
    assert back.c == p.c and back.n == p.n


def test_trace_json_roundtrip():
    rep = run_exact(two_basis_protocol(2))
    back = trace_from_json(json.loads(json.dumps(rep.to_json())))
    assert back.joint == rep.joint
    assert back.per_step_mi == rep.per_step_mi
    assert back.net_rate == rep.net_rate


def test_protocol_json_errors():
    with pytest.raises(ValidationError):
        protocol_from_json({"steps": [{"kind": "teleport"}], "j": "J", "k": "K"})
