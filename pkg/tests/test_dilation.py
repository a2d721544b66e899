import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from udops.channels import (
    BlockPauliParams,
    amplitude_damping,
    block_dephasing,
    block_pauli,
    identity_channel,
    unitary_channel,
)
from udops.dilation import (
    BinaryTreeCircuit,
    DilationError,
    IsometryBlock,
    UnsupportedRankError,
    branch_ops,
    circuit_channel,
    compile_channel,
    compile_povm,
    compile_tree,
    layer_split,
    pad_kraus,
    povm_to_kraus,
    unitary_completion,
    verify_circuit,
)
from udops.discrimination import PovmSet, build_symmetric_povm
from udops.experiments import block_pauli_probe, reference_block_pauli_povm, reference_dephasing_povm
from udops.hilbert import projector, symmetric_coherent_states
from conftest import random_channel, random_density, random_state

I4 = np.eye(4)
Z4 = np.zeros((4, 4))


def haar_unitary(rng, d):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q


def test_pad_kraus(rng):
    u = haar_unitary(rng, 6)
    padded = pad_kraus(unitary_channel(u))
    assert len(padded) == 4
    assert np.allclose(padded[0], u) and all(not p.any() for p in padded[1:])
    bp = block_pauli(BlockPauliParams(0.4, "X"))
    padded = pad_kraus(bp)
    assert np.allclose(padded[1], bp.kraus_ops[1]) and not padded[2].any()


def test_pad_kraus_rank_five():
    ch = amplitude_damping(0.3, 5)
    assert ch.rank == 5
    with pytest.raises(UnsupportedRankError):
        pad_kraus(ch)
    with pytest.raises(UnsupportedRankError):
        compile_channel(ch)


def test_layer_split_unitary(rng):
    a0, a1 = layer_split([haar_unitary(rng, 8), *[np.zeros((8, 8))] * 3])
    assert np.allclose(a0, np.eye(8), atol=1e-12) and np.allclose(a1, 0)


def test_layer_split_block_pauli_alternate_grouping():
    k0, k1 = block_pauli(BlockPauliParams(0.5, "X")).kraus_ops
    a0, a1 = layer_split([k0, Z4, k1, Z4])
    assert np.allclose(a0, math.sqrt(0.5) * I4, atol=1e-12)
    assert np.allclose(a1, math.sqrt(0.5) * I4, atol=1e-12)
    assert np.abs(a0.conj().T @ a0 + a1.conj().T @ a1 - I4).max() < 1e-12


def test_layer_split_projective_povm():
    povm = reference_block_pauli_povm()
    ops = povm_to_kraus(povm).kraus_ops
    a0, _ = layer_split(ops)
    want = povm.inconclusive + povm.effects[0]
    assert np.allclose(a0, want, atol=1e-12)
    assert np.allclose(a0 @ a0, a0, atol=1e-12)


def test_layer_split_requires_four():
    with pytest.raises(ValueError):
        layer_split([I4])


def test_branch_ops_invertible(rng):
    ch = random_channel(rng, 3, 4)
    a0, _ = layer_split(ch.kraus_ops)
    b0, b1 = branch_ops(ch.kraus_ops[:2], a0)
    inv = np.linalg.inv(a0)
    assert np.allclose(b0, ch.kraus_ops[0] @ inv, atol=1e-10)
    assert np.allclose(b1, ch.kraus_ops[1] @ inv, atol=1e-10)


def test_branch_ops_projector_completion():
    p = np.diag([1.0, 1.0, 0.0, 0.0]).astype(complex)
    b0, b1 = branch_ops([p, Z4], p)
    assert np.allclose(b0 @ p, p)
    assert np.abs(b0.conj().T @ b0 + b1.conj().T @ b1 - I4).max() < 1e-12
    # the kernel is completed with identity-style columns
    assert np.allclose(b0, I4, atol=1e-12) and np.allclose(b1, 0, atol=1e-12)


def test_branch_ops_support_violation():
    p = np.diag([1.0, 0.0]).astype(complex)
    with pytest.raises(DilationError):
        branch_ops([np.eye(2), np.zeros((2, 2))], p)


@pytest.mark.parametrize("seed", range(100))
def test_branch_reconstruction_random_rank4(seed):
    g = np.random.default_rng(seed)
    ch = random_channel(g, 4, 4)
    k = ch.kraus_ops
    a0, a1 = layer_split(k)
    for a, pair in ((a0, k[:2]), (a1, k[2:])):
        b = branch_ops(pair, a)
        for bj, kj in zip(b, pair):
            assert np.abs(bj @ a - kj).max() < 1e-9


def test_unitary_completion_cases():
    u = unitary_completion(IsometryBlock(I4, Z4))
    assert np.allclose(u, np.eye(8))
    u = unitary_completion(IsometryBlock(I4 / math.sqrt(2), I4 / math.sqrt(2)))
    assert np.abs(u.conj().T @ u - np.eye(8)).max() < 1e-10
    assert np.allclose(u[:, :4], np.vstack([I4, I4]) / math.sqrt(2))
    with pytest.raises(DilationError):
        unitary_completion(IsometryBlock(I4, I4))


def test_compile_identity():
    circ = compile_channel(identity_channel(3))
    assert np.allclose(circ.U_A, np.eye(6)) and np.allclose(circ.U_B0, np.eye(6))
    probs = circ.branch_probabilities(np.eye(3) / 3)
    assert probs["00"] == pytest.approx(1, abs=1e-14)
    assert verify_circuit(circ, identity_channel(3)) == pytest.approx(1, abs=1e-12)


def test_compile_block_pauli_branches():
    circ = compile_channel(block_pauli(BlockPauliParams(0.3, "Y")))
    probs = circ.branch_probabilities(projector(block_pauli_probe()))
    assert probs["00"] == pytest.approx(0.7, abs=1e-12)
    assert probs["01"] == pytest.approx(0.3, abs=1e-12)
    assert probs["10"] + probs["11"] < 1e-14
    assert circ.outcome_map == {"00": 0, "01": 1, "10": None, "11": None}


def test_compile_dephasing_branches():
    ch = block_dephasing([[0], [1, 2, 3]], 4)
    probs = compile_channel(ch).branch_probabilities(projector(np.full(4, 0.5)))
    assert probs["00"] == pytest.approx(0.25, abs=1e-12)
    assert probs["01"] == pytest.approx(0.75, abs=1e-12)


def test_compile_kraus_order_convention(rng):
    ch = random_channel(rng, 3, 4)
    circ = compile_channel(ch)
    for i, bits in enumerate(["00", "01", "10", "11"]):
        assert circ.outcome_map[bits] == i
        assert np.abs(circ.branch_operator(bits) - ch.kraus_ops[i]).max() < 1e-9


def test_verify_block_pauli_roundtrip():
    ch = block_pauli(BlockPauliParams(0.5, "X"))
    assert verify_circuit(compile_channel(ch), ch) >= 1 - 1e-9


def test_verify_wrong_target():
    # chi of X and Y mixtures share only the identity weight 1/2: (sqrt(1/2 * 1/2))^2
    circ = compile_channel(block_pauli(BlockPauliParams(0.5, "X")))
    assert verify_circuit(circ, block_pauli(BlockPauliParams(0.5, "Y"))) == pytest.approx(0.25, abs=1e-9)


def test_verify_dimension_mismatch():
    with pytest.raises(ValueError):
        verify_circuit(compile_channel(identity_channel(2)), identity_channel(3))


def test_povm_to_kraus_projective():
    povm = reference_block_pauli_povm()
    ops = povm_to_kraus(povm).kraus_ops
    for e, k in zip(povm.elements(), ops):
        assert np.allclose(e, k, atol=1e-12)
    # four mutually orthogonal rank-one projectors
    for i, a in enumerate(ops):
        assert np.linalg.matrix_rank(a, tol=1e-9) == 1
        for b in ops[i + 1:]:
            assert np.abs(a @ b).max() < 1e-12


def test_povm_to_kraus_dephasing_roots():
    povm = reference_dephasing_povm(4)
    ops = povm_to_kraus(povm).kraus_ops
    c = math.sqrt(2 / (2 + math.sqrt(2)))
    for i in range(3):
        w = np.zeros(4)
        w[i], w[i + 1] = 1 / math.sqrt(2), -1 / math.sqrt(2)
        assert np.abs(ops[i + 1] - c * projector(w)).max() < 1e-12


def test_povm_to_kraus_born_rule(rng):
    povm = reference_dephasing_povm(4)
    ch = povm_to_kraus(povm)
    for _ in range(10):
        rho = random_density(rng, 4)
        for e, k in zip(povm.elements(), ch.kraus_ops):
            assert abs(np.trace(k @ rho @ k.conj().T) - np.trace(e @ rho)) < 1e-10


def test_povm_to_kraus_limits():
    states = symmetric_coherent_states(1.2, 4, 40)
    with pytest.raises(UnsupportedRankError):
        povm_to_kraus(build_symmetric_povm(states))
    bad = PovmSet((np.diag([1.2, -0.2]),), np.diag([-0.2, 1.2]))
    with pytest.raises(ValueError):
        povm_to_kraus(bad, max_elements=None)


@pytest.mark.parametrize("make", [reference_block_pauli_povm, lambda: reference_dephasing_povm(3),
                                  lambda: reference_dephasing_povm(4)])
def test_compiled_povm_born_rule(make, rng):
    povm = make()
    circ = compile_povm(povm)
    assert circ.depth == 2 and circ.unitarity_error() < 1e-9
    elems = povm.elements()
    for _ in range(50):
        rho = random_density(rng, povm.dim)
        probs = circ.branch_probabilities(rho)
        for bits, k in circ.outcome_map.items():
            want = 0.0 if k is None else np.trace(elems[k] @ rho).real
            assert abs(probs[bits] - want) < 1e-9


@pytest.mark.parametrize("n", [4, 6])
def test_deep_tree_for_large_povm(n, rng):
    states = symmetric_coherent_states(1.6, n, 40)
    povm = build_symmetric_povm(states)
    circ = compile_povm(povm)
    assert circ.depth == 3
    assert circ.unitarity_error() < 1e-9
    elems = povm.elements()
    for s in states + [random_state(rng, 40)]:
        probs = circ.branch_probabilities(projector(s))
        for bits, k in circ.outcome_map.items():
            want = 0.0 if k is None else np.vdot(s, elems[k] @ s).real
            assert abs(probs[bits] - want) < 1e-9


def test_compile_tree_depth_too_small(rng):
    ops = random_channel(rng, 2, 4).kraus_ops
    with pytest.raises(UnsupportedRankError):
        compile_tree(list(ops) + [np.zeros((2, 2))], depth=2)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([2, 3, 4, 8]), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_compile_roundtrip_property(d, rank, seed):
    g = np.random.default_rng(seed)
    ch = random_channel(g, d, rank)
    circ = compile_channel(ch)
    assert circ.unitarity_error() < 1e-9
    assert verify_circuit(circ, ch) >= 1 - 1e-9
    probs = circ.branch_probabilities(random_density(g, d))
    assert abs(sum(probs.values()) - 1) < 1e-10


def test_circuit_json_roundtrip(rng):
    ch = random_channel(rng, 3, 3)
    circ = compile_channel(ch)
    obj = circ.to_json()
    assert set(obj) == {"dim", "U_A", "U_B0", "U_B1", "outcome_map"}
    back = BinaryTreeCircuit.from_json(obj)
    assert back.outcome_map == circ.outcome_map
    for p in ("", "0", "1"):
        assert np.array_equal(back.unitaries[p], circ.unitaries[p])


def test_deep_circuit_json_roundtrip():
    circ = compile_povm(build_symmetric_povm(symmetric_coherent_states(1.0, 6, 40)))
    back = BinaryTreeCircuit.from_json(circ.to_json())
    assert back.depth == 3
    assert all(np.array_equal(back.unitaries[p], u) for p, u in circ.unitaries.items())


def test_circuit_channel_reproduces_map(rng):
    ch = random_channel(rng, 4, 3)
    rho = random_density(rng, 4)
    assert np.allclose(circuit_channel(compile_channel(ch))(rho), ch(rho), atol=1e-10)
