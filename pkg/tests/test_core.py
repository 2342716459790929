import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loop_partial_trace
from qrand.core import (
    Channel,
    DensityOperator,
    Povm,
    PureState,
    Register,
    apply,
    channel_from_json,
    channel_to_json,
    classical_state,
    computational_basis,
    dephase,
    example_channel_F,
    fourier_basis,
    fourier_matrix,
    haar_random_unitary,
    identity_channel,
    is_cq,
    is_qc,
    load_channel,
    maximally_entangled_state,
    measure,
    partial_trace,
    permute,
    random_density,
    random_pure_state,
    relabel,
    tensor,
)
from qrand.errors import DimensionError, RegisterError, ValidationError


def state(label, m, classical=False):
    m = np.asarray(m, dtype=complex)
    return DensityOperator([Register(label, m.shape[0], classical)], m)


def assert_valid_state(rho, tol=1e-9):
    m = rho.matrix
    assert np.max(np.abs(m - m.conj().T)) <= tol
    assert abs(np.trace(m).real - 1) <= tol
    assert np.linalg.eigvalsh(m)[0] >= -tol


# --- validation --------------------------------------------------------------------


def test_register_rejects_zero_dim():
    with pytest.raises(ValidationError):
        Register("A", 0)


@pytest.mark.parametrize(
    "matrix, message",
    [
        ([[0.5, 0.1], [0.0, 0.5]], "Hermitian"),
        ([[0.6, 0.0], [0.0, 0.6]], "trace"),
        ([[1.2, 0.0], [0.0, -0.2]], "negative eigenvalue"),
    ],
)
def test_density_operator_invariants(matrix, message):
    with pytest.raises(ValidationError, match=message):
        state("A", matrix)


def test_classical_register_rejects_coherence():
    with pytest.raises(ValidationError, match="coherences"):
        state("Z", [[0.5, 0.5], [0.5, 0.5]], classical=True)


def test_duplicate_labels_rejected():
    with pytest.raises(RegisterError):
        DensityOperator([Register("A", 2), Register("A", 2)], np.eye(4) / 4)


def test_shape_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        DensityOperator([Register("A", 3)], np.eye(2) / 2)


def test_povm_completeness_and_positivity():
    with pytest.raises(ValidationError, match="identity"):
        Povm([np.diag([1.0, 0.0]), np.diag([0.0, 0.9])])
    with pytest.raises(ValidationError, match="positive"):
        Povm([np.diag([1.5, 0.5]), np.diag([-0.5, 0.5])])


def test_channel_variants_validate():
    with pytest.raises(ValidationError, match="trace preserving"):
        Channel.kraus([0.9 * np.eye(2)])
    with pytest.raises(ValidationError, match="probability"):
        Channel.classical([[0.5, 0.5], [0.4, 0.5]])
    with pytest.raises(ValidationError):
        Channel.cq([np.diag([1.0, 0.0]), np.diag([0.7, 0.7])])


# --- tensor / partial trace ------------------------------------------------------


def test_tensor_examples():
    m = tensor(state("A", np.eye(2) / 2), state("B", np.eye(2) / 2))
    np.testing.assert_allclose(m.matrix, np.eye(4) / 4)
    m = tensor(state("A", np.diag([1, 0])), state("B", np.diag([0, 1])))
    expected = np.zeros((4, 4))
    expected[1, 1] = 1
    np.testing.assert_allclose(m.matrix, expected)
    assert m.labels == ("A", "B")


def test_tensor_label_collision():
    with pytest.raises(RegisterError):
        tensor(state("A", np.eye(2) / 2), state("A", np.eye(2) / 2))


def test_partial_trace_examples():
    bell_mix = np.zeros((4, 4))
    bell_mix[0, 0] = bell_mix[3, 3] = 0.5
    rho = DensityOperator([Register("A", 2), Register("B", 2)], bell_mix)
    np.testing.assert_allclose(partial_trace(rho, ["B"]).matrix, np.eye(2) / 2)
    for d in (2, 3, 4):
        phi = maximally_entangled_state(d).density()
        np.testing.assert_allclose(partial_trace(phi, ["R"]).matrix, np.eye(d) / d, atol=1e-12)
        np.testing.assert_allclose(partial_trace(phi, ["X"]).matrix, np.eye(d) / d, atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_partial_trace_inverts_tensor(d):
    for seed in range(20):
        a = random_density(d, seed, register="A")
        b = random_density(d, seed + 100, register="B")
        ab = tensor(a, b)
        assert abs(np.trace(ab.matrix) - 1) < 1e-12
        np.testing.assert_allclose(partial_trace(ab, ["A"]).matrix, a.matrix, atol=1e-12)
        np.testing.assert_allclose(partial_trace(ab, ["B"]).matrix, b.matrix, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    dims=st.lists(st.integers(1, 3), min_size=2, max_size=3),
    seed=st.integers(0, 10_000),
    data=st.data(),
)
def test_partial_trace_matches_loop_oracle(dims, seed, data):
    n = len(dims)
    keep = sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n)))
    D = int(np.prod(dims))
    m = random_density(D, seed).matrix
    rho = DensityOperator([Register(f"r{i}", d) for i, d in enumerate(dims)], m)
    got = partial_trace(rho, [f"r{i}" for i in keep])
    np.testing.assert_allclose(got.matrix, loop_partial_trace(m, dims, keep), atol=1e-12)
    assert got.labels == tuple(f"r{i}" for i in keep)


def test_permute_and_relabel():
    a = random_density(2, 1, register="A")
    b = random_density(3, 2, register="B")
    ba = permute(tensor(a, b), ["B", "A"])
    np.testing.assert_allclose(ba.matrix, tensor(b, a).matrix, atol=1e-14)
    with pytest.raises(RegisterError):
        permute(ba, ["A"])
    renamed = relabel(ba, {"B": "C"})
    assert renamed.labels == ("C", "A")


# --- dephase / apply / measure ---------------------------------------------------------


def test_dephase_examples():
    plus = state("A", np.full((2, 2), 0.5))
    np.testing.assert_allclose(dephase(plus, "A").matrix, np.eye(2) / 2)
    diag = state("A", np.diag([0.2, 0.3, 0.5]))
    np.testing.assert_allclose(dephase(diag, "A").matrix, diag.matrix)


def test_dephase_idempotent_and_trace_preserving():
    for seed in range(1000):
        rho = random_density(3, seed)
        once = dephase(rho, "X")
        assert abs(np.trace(once.matrix).real - 1) < 1e-12
        np.testing.assert_allclose(dephase(once, "X").matrix, once.matrix, atol=1e-15)


def test_apply_identity_and_F_on_mixed_input():
    rho = random_density(2, 4)
    out = apply(identity_channel(2), rho, output="X")
    np.testing.assert_allclose(out.matrix, rho.matrix, atol=1e-12)
    F = example_channel_F(2)
    out = apply(F, state("X", np.eye(2) / 2))
    np.testing.assert_allclose(np.diag(out.matrix).real, np.full(4, 0.25), atol=1e-12)
    assert out.registers[0].classical


def test_F_on_basis_state():
    for d in (2, 3):
        F = example_channel_F(d)
        e0 = np.zeros((d, d))
        e0[0, 0] = 1
        p = np.diag(apply(F, state("X", e0)).matrix).real
        np.testing.assert_allclose(p[:d], [0.5] + [0] * (d - 1), atol=1e-12)
        np.testing.assert_allclose(p[d:], np.full(d, 0.5 / d), atol=1e-12)
        assert F.dim_out == 2 * d


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n_kraus=st.integers(1, 3))
def test_apply_keeps_states_valid(seed, n_kraus):
    U = haar_random_unitary(2 * n_kraus, seed)
    ch = Channel.kraus([U[2 * k : 2 * k + 2, :2] for k in range(n_kraus)], input="A", output="A")
    rho = tensor(random_density(2, seed, register="A"), random_density(2, seed + 1, register="B"))
    out = apply(ch, rho)
    assert_valid_state(out)
    assert out.labels == ("A", "B")
    np.testing.assert_allclose(partial_trace(out, ["B"]).matrix, partial_trace(rho, ["B"]).matrix, atol=1e-12)


def test_qc_output_is_dephased():
    F = example_channel_F(3)
    for seed in range(10):
        out = apply(F, random_density(3, seed))
        np.testing.assert_allclose(dephase(out, "Y").matrix, out.matrix, atol=1e-15)


def test_measure_examples():
    zero = state("A", np.diag([1.0, 0.0]))
    res = measure(computational_basis(2), zero, "A")
    assert [r.probability for r in res] == [1.0, 0.0]
    assert res[1].state is None
    res = measure(fourier_basis(3), state("A", np.eye(3) / 3), "A")
    np.testing.assert_allclose([r.probability for r in res], np.full(3, 1 / 3), atol=1e-12)


def test_measure_probabilities_match_trace_oracle():
    for seed in range(20):
        joint = tensor(random_density(3, seed, register="A"), random_density(2, seed + 7, register="B"))
        povm = fourier_basis(3)
        res = measure(povm, joint, "A")
        for r, E in zip(res, povm.elements):
            expected = np.trace(np.kron(E, np.eye(2)) @ joint.matrix).real
            assert abs(r.probability - expected) < 1e-12
            assert r.state.labels == ("B",)


# --- special states and bases ---------------------------------------------------------


def test_maximally_entangled_state_d2():
    np.testing.assert_allclose(maximally_entangled_state(2).vector, np.array([1, 0, 0, 1]) / np.sqrt(2))


@pytest.mark.parametrize("d", [2, 3, 4])
def test_maximally_entangled_state_is_u_ubar_invariant(d):
    phi = maximally_entangled_state(d).vector
    for seed in range(100):
        U = haar_random_unitary(d, seed)
        assert np.linalg.norm(np.kron(U, U.conj()) @ phi - phi) <= 1e-10


def test_fourier_basis_d2_is_plus_minus():
    plus = np.full((2, 2), 0.5)
    minus = np.array([[0.5, -0.5], [-0.5, 0.5]])
    els = fourier_basis(2).elements
    np.testing.assert_allclose(els[0], plus, atol=1e-15)
    np.testing.assert_allclose(els[1], minus, atol=1e-15)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_fourier_basis_is_mutually_unbiased(d):
    V = fourier_matrix(d)
    np.testing.assert_allclose(np.abs(V) ** 2, np.full((d, d), 1 / d), atol=1e-12)
    np.testing.assert_allclose(sum(fourier_basis(d).elements), np.eye(d), atol=1e-12)


def test_qc_cq_classification():
    for d in (2, 3):
        assert is_qc(example_channel_F(d))
        assert not is_cq(example_channel_F(d))
    ident = identity_channel(3, classical=True)
    assert is_qc(ident) and is_cq(ident)
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    U = Channel.kraus([H])
    assert not is_qc(U) and not is_cq(U)


def test_haar_unitary_properties():
    U = haar_random_unitary(1, 3)
    assert U.shape == (1, 1) and abs(abs(U[0, 0]) - 1) < 1e-12
    for d in (2, 5):
        U = haar_random_unitary(d, 11)
        assert np.max(np.abs(U.conj().T @ U - np.eye(d))) <= 1e-12
        assert np.array_equal(U, haar_random_unitary(d, 11))
    assert np.array_equal(random_pure_state(4, 9).vector, random_pure_state(4, 9).vector)


def test_classical_state_is_flagged():
    z = classical_state("Z", [0.25, 0.75])
    assert z.registers[0].classical
    np.testing.assert_allclose(np.diag(z.matrix).real, [0.25, 0.75])


def test_pure_state_norm_checked():
    with pytest.raises(ValidationError):
        PureState([Register("A", 2)], [1.0, 1.0])


# --- channel JSON --------------------------------------------------------------------


@pytest.mark.parametrize(
    "ch",
    [
        example_channel_F(2),
        identity_channel(2),
        identity_channel(3, classical=True),
        Channel.cq([np.diag([1.0, 0.0]), np.full((2, 2), 0.5)]),
    ],
)
def test_channel_json_roundtrip(ch):
    back = channel_from_json(json.loads(json.dumps(channel_to_json(ch))))
    assert back.variant == ch.variant
    rho = random_density(ch.dim_in, 5).matrix
    np.testing.assert_allclose(back.act(rho), ch.act(rho), atol=1e-12)


@pytest.mark.parametrize(
    "spec, message",
    [
        ({"variant": "kraus"}, "missing field"),
        ({"variant": "unitary", "dim_in": 2, "dim_out": 2, "matrices": []}, "variant"),
        ({"variant": "kraus", "dim_in": 2, "dim_out": 2, "matrices": [[[[1, 0]]]]}, "shape"),
        ({"variant": "kraus", "dim_in": 1, "dim_out": 1, "matrices": [[[1]]]}, r"\[re, im\]"),
        ({"variant": "kraus", "dim_in": 0, "dim_out": 1, "matrices": [[[[1, 0]]]]}, "positive integer"),
    ],
)
def test_channel_json_errors(spec, message):
    with pytest.raises(ValidationError, match=message):
        channel_from_json(spec)


def test_load_channel_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_channel(bad)
    with pytest.raises(ValidationError, match="cannot read"):
        load_channel(tmp_path / "missing.json")
