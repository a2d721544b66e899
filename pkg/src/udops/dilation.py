"""Binary-tree dilation of channels and POVMs.

A channel with Kraus operators K_0..K_3 is realized as two layers of joint
system-ancilla unitaries.  The first layer implements A_0 = sqrt(K_0^dag K_0
+ K_1^dag K_1) and A_1 = sqrt(K_2^dag K_2 + K_3^dag K_3); after the ancilla
is read out with bit b1, the second layer implements B_{b1 b2} = K_{2 b1 +
b2} A_{b1}^+.  Outcome bits (b1, b2) therefore herald K_{2 b1 + b2}.

Joint unitaries act on ``ancilla (x) system`` with the ancilla as the most
significant index, so for an ancilla starting in |0> only the first block
column matters::

    U = [[top, *],
         [bottom, *]]

Singular A (projective POVMs, padded branches) is handled with a
pseudoinverse; on ker(A) the branch isometry is completed with columns as
close as possible to the identity.  Those completions are only ever reached
with probability zero in an ideal run.

:func:`compile_tree` generalizes the construction to deeper trees; it is
needed for POVMs with more than four elements.  :func:`compile_channel`
keeps the two-layer contract and rejects Kraus rank above four.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import KrausChannel, make_channel
from .discrimination import PovmSet
from .hilbert import herm_pinv, orthonormal_complement, psd_sqrt
from .metrics import channel_process_fidelity
from .serialize import decode_matrix, encode_matrix

ISOMETRY_TOL = 1e-9
PINV_RCOND = 1e-10


class DilationError(ValueError):
    pass


class UnsupportedRankError(DilationError):
    pass


@dataclass(frozen=True, eq=False)
class IsometryBlock:
    top: np.ndarray
    bottom: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.vstack([self.top, self.bottom])

    def isometry_error(self) -> float:
        v = self.stacked()
        return float(np.abs(v.conj().T @ v - np.eye(v.shape[1])).max())


@dataclass(frozen=True, eq=False)
class BinaryTreeCircuit:
    """Layered joint unitaries keyed by the ancilla bits measured so far.

    ``unitaries[""]`` is the first layer, ``unitaries["0"]`` and
    ``unitaries["1"]`` the second, and so on.  ``outcome_map`` sends every
    full bitstring to a Kraus index, or to ``None`` for padded branches that
    carry no probability.
    """

    dim: int
    unitaries: dict
    outcome_map: dict
    label: str = ""

    @property
    def depth(self) -> int:
        return max(len(p) for p in self.unitaries) + 1

    @property
    def U_A(self) -> np.ndarray:
        return self.unitaries[""]

    @property
    def U_B0(self) -> np.ndarray:
        return self.unitaries["0"]

    @property
    def U_B1(self) -> np.ndarray:
        return self.unitaries["1"]

    def block(self, prefix: str, bit: int) -> np.ndarray:
        """System operator applied when the layer at ``prefix`` yields ``bit``."""
        d = self.dim
        return self.unitaries[prefix][bit * d:(bit + 1) * d, :d]

    def branch_operator(self, bits: str) -> np.ndarray:
        op = np.eye(self.dim, dtype=complex)
        for level, b in enumerate(bits):
            op = self.block(bits[:level], int(b)) @ op
        return op

    def leaves(self) -> list[str]:
        return sorted(self.outcome_map)

    def kraus_ops(self) -> list[np.ndarray]:
        """Branch products ordered by Kraus index (padded branches dropped)."""
        pairs = sorted((k, bits) for bits, k in self.outcome_map.items() if k is not None)
        return [self.branch_operator(bits) for _, bits in pairs]

    def branch_probabilities(self, rho) -> dict:
        rho = np.asarray(rho, dtype=complex)
        out = {}
        for bits in self.leaves():
            k = self.branch_operator(bits)
            out[bits] = float(np.trace(k @ rho @ k.conj().T).real)
        return out

    def unitarity_error(self) -> float:
        return max(float(np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()) for u in self.unitaries.values())

    def to_json(self) -> dict:
        omap = {bits: k for bits, k in sorted(self.outcome_map.items())}
        if self.depth == 2:
            return {
                "dim": self.dim,
                "U_A": encode_matrix(self.U_A),
                "U_B0": encode_matrix(self.U_B0),
                "U_B1": encode_matrix(self.U_B1),
                "outcome_map": omap,
            }
        return {
            "dim": self.dim,
            "depth": self.depth,
            "layers": {p: encode_matrix(u) for p, u in sorted(self.unitaries.items())},
            "outcome_map": omap,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BinaryTreeCircuit":
        if "layers" in obj:
            units = {p: decode_matrix(m) for p, m in obj["layers"].items()}
        else:
            units = {"": decode_matrix(obj["U_A"]), "0": decode_matrix(obj["U_B0"]),
                     "1": decode_matrix(obj["U_B1"])}
        omap = {str(b): (None if k is None else int(k)) for b, k in obj["outcome_map"].items()}
        return cls(int(obj["dim"]), units, omap)


# -- building blocks -----------------------------------------------------------

def pad_kraus(channel: KrausChannel, size: int = 4) -> list[np.ndarray]:
    """Kraus list padded with zero operators to ``size`` entries."""
    if channel.rank > size:
        raise UnsupportedRankError(
            f"Kraus rank {channel.rank} exceeds {size}; the two-layer tree supports at most 4"
        )
    zero = np.zeros((channel.dim, channel.dim), dtype=complex)
    return list(channel.kraus_ops) + [zero] * (size - channel.rank)


def layer_split(kraus4: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    if len(kraus4) != 4:
        raise ValueError(f"expected 4 Kraus operators, got {len(kraus4)}")
    k = [np.asarray(x, dtype=complex) for x in kraus4]
    a0 = psd_sqrt(k[0].conj().T @ k[0] + k[1].conj().T @ k[1])
    a1 = psd_sqrt(k[2].conj().T @ k[2] + k[3].conj().T @ k[3])
    return a0, a1


def branch_ops(kraus_pair: Sequence[np.ndarray], a, rcond: float = PINV_RCOND,
               tol: float = ISOMETRY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """B_j = K_j A^+, completed on ker(A) so that [B_0; B_1] is an isometry.

    Requires supp(K_j^dag K_j) to lie in supp(A) to within ``tol``.
    """
    a = np.asarray(a, dtype=complex)
    d = a.shape[0]
    a_pinv, ker = herm_pinv(a, rcond)
    scale = max(1.0, float(np.abs(a).max())) ** 2
    for j, k in enumerate(kraus_pair):
        if not ker.size:
            break
        kk = ker.conj().T @ (np.asarray(k).conj().T @ np.asarray(k)) @ ker
        leak = float(np.abs(kk).max())
        if leak > tol * scale:
            raise DilationError(f"Kraus operator {j} acts outside the support of A (leak {leak:.3e})")
    v = np.vstack([np.asarray(k, dtype=complex) @ a_pinv for k in kraus_pair])
    if ker.shape[1]:
        v = v + _kernel_completion(v, ker)
    return v[:d], v[d:]


def _kernel_completion(v: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Isometric extension of ``v`` on the span of ``ker``, close to identity on the top block."""
    n2, d = v.shape
    supp = orthonormal_complement(ker, d)
    rng = v @ supp
    # orthonormalize the range; v restricted to supp(A) is an isometry up to rounding
    q, _ = np.linalg.qr(rng) if rng.shape[1] else (np.zeros((n2, 0)), None)
    free = orthonormal_complement(q, n2)
    target = np.vstack([ker, np.zeros((n2 - d, ker.shape[1]))])
    u, _, wh = np.linalg.svd(free.conj().T @ target, full_matrices=False)
    ext = free @ u @ wh
    return ext @ ker.conj().T


def unitary_completion(block: IsometryBlock, tol: float = ISOMETRY_TOL) -> np.ndarray:
    """Joint unitary whose first block column is (top; bottom)."""
    err = block.isometry_error()
    if err > tol:
        raise DilationError(f"block is not an isometry: ||V^dag V - I||_max = {err:.3e}")
    v = block.stacked()
    return np.hstack([v, orthonormal_complement(v)])


# -- compilation -----------------------------------------------------------------

def compile_tree(kraus_ops: Sequence[np.ndarray], depth: int | None = None, label: str = "") -> BinaryTreeCircuit:
    """Binary tree of ``depth`` layers realizing up to 2**depth Kraus operators.

    Each node at prefix ``p`` implements S_{p0} S_p^+ and S_{p1} S_p^+ with
    S_p = sqrt(sum of K^dag K over the leaves below p); the last layer uses
    K_leaf S_p^+ instead.  Products along a path telescope back to K_leaf.
    """
    ops = [np.asarray(k, dtype=complex) for k in kraus_ops]
    d = ops[0].shape[0]
    if depth is None:
        depth = max(2, math.ceil(math.log2(len(ops))))
    n_leaves = 2**depth
    if len(ops) > n_leaves:
        raise UnsupportedRankError(f"{len(ops)} Kraus operators do not fit a depth-{depth} tree")
    zero = np.zeros((d, d), dtype=complex)
    leaf_ops = ops + [zero] * (n_leaves - len(ops))
    bit_strings = [format(i, f"0{depth}b") for i in range(n_leaves)]

    gram = {}
    for bits, k in zip(bit_strings, leaf_ops):
        for level in range(depth + 1):
            p = bits[:level]
            gram[p] = gram.get(p, 0) + k.conj().T @ k
    sqrt_of = {p: psd_sqrt(g) for p, g in gram.items()}

    units = {}
    for level in range(depth):
        for prefix in sorted({b[:level] for b in bit_strings}):
            if level == depth - 1:
                pair = [leaf_ops[int(prefix + str(b), 2)] for b in (0, 1)]
            else:
                pair = [sqrt_of[prefix + str(b)] for b in (0, 1)]
            # at the root S = sqrt(sum K^dag K) = I up to the channel's CPTP slack
            top, bottom = branch_ops(pair, sqrt_of[prefix])
            units[prefix] = unitary_completion(IsometryBlock(top, bottom))
    omap = {bits: (i if i < len(ops) else None) for i, bits in enumerate(bit_strings)}
    return BinaryTreeCircuit(d, units, omap, label)


def compile_channel(channel: KrausChannel) -> BinaryTreeCircuit:
    """Two-layer circuit reproducing the channel's Kraus operators branch by branch."""
    k4 = pad_kraus(channel)
    circ = compile_tree(k4, depth=2, label=channel.label)
    omap = {bits: (i if i < channel.rank else None) for bits, i in circ.outcome_map.items()}
    return BinaryTreeCircuit(circ.dim, circ.unitaries, omap, channel.label)


def povm_to_kraus(povm: PovmSet, max_elements: int | None = 4) -> KrausChannel:
    """Kraus operators sqrt(E) in circuit order [E_I, E_0, ..., E_{N-1}]."""
    elems = povm.elements()
    if max_elements is not None and len(elems) > max_elements:
        raise UnsupportedRankError(f"POVM has {len(elems)} elements; at most {max_elements} supported")
    ops = []
    for i, e in enumerate(elems):
        try:
            ops.append(psd_sqrt(e))
        except ValueError as exc:
            name = "E_I" if i == 0 else f"E_{i - 1}"
            raise ValueError(f"{name} is not PSD: {exc}") from None
    return make_channel(ops, label="povm")


def compile_povm(povm: PovmSet) -> BinaryTreeCircuit:
    """Measurement circuit; leaf index 0 heralds E_I and index k+1 heralds E_k.

    Up to four elements use the two-layer tree.  Larger POVMs use the
    smallest deeper tree that fits.
    """
    kraus = povm_to_kraus(povm, max_elements=None)
    depth = max(2, math.ceil(math.log2(kraus.rank)))
    return compile_tree(list(kraus.kraus_ops), depth=depth, label="povm")


def circuit_channel(circuit: BinaryTreeCircuit) -> KrausChannel:
    """Channel obtained by summing over all branches, including padded ones."""
    ops = [circuit.branch_operator(b) for b in circuit.leaves()]
    return make_channel([k for k in ops if np.abs(k).max() > 0] or ops[:1], label=circuit.label)


def verify_circuit(circuit: BinaryTreeCircuit, target: KrausChannel) -> float:
    """Process fidelity between the compiled circuit and the target channel."""
    if circuit.dim != target.dim:
        raise ValueError(f"dimension mismatch: circuit {circuit.dim}, target {target.dim}")
    return channel_process_fidelity(circuit_channel(circuit), target)
