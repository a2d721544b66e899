"""Kraus-operator channels and the channel families used in the experiments.

A :class:`KrausChannel` is an immutable, validated list of Kraus matrices.
Equality of channels is map equality (see :func:`same_map`) because Kraus
decompositions are not unique.

JSON wire format (field names are fixed)::

    {"label": "...", "dim": 4, "kraus": [[[[re, im], ...], ...], ...]}

with each matrix stored row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .hilbert import HilbertDim, size_of
from .serialize import decode_matrix, encode_matrix

CPTP_TOL = 1e-8
MAP_TOL = 1e-9


class NotCPTPError(ValueError):
    """Kraus operators do not resolve the identity."""


@dataclass(frozen=True, eq=False)
class KrausChannel:
    kraus_ops: tuple[np.ndarray, ...]
    dim: int
    label: str = ""

    @property
    def rank(self) -> int:
        return len(self.kraus_ops)

    def __call__(self, rho) -> np.ndarray:
        return apply(self, rho)

    def completeness_error(self) -> float:
        """max |sum K^dag K - I| entry."""
        return completeness_error(self.kraus_ops)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "dim": self.dim,
            "kraus": [encode_matrix(k) for k in self.kraus_ops],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KrausChannel":
        missing = {"label", "dim", "kraus"} - set(obj)
        if missing:
            raise ValueError(f"channel JSON missing fields: {sorted(missing)}")
        ops = [decode_matrix(m) for m in obj["kraus"]]
        ch = make_channel(ops, label=str(obj["label"]))
        if ch.dim != int(obj["dim"]):
            raise ValueError(f"channel JSON dim={obj['dim']} but matrices are {ch.dim}x{ch.dim}")
        return ch


def completeness_error(kraus_ops) -> float:
    n = kraus_ops[0].shape[1]
    total = sum(k.conj().T @ k for k in kraus_ops)
    return float(np.abs(total - np.eye(n)).max())


def make_channel(kraus_ops: Sequence, label: str = "", tol: float = CPTP_TOL) -> KrausChannel:
    """Validate Kraus operators and wrap them as a channel."""
    ops = [np.array(k, dtype=complex) for k in kraus_ops]
    if not ops:
        raise ValueError("a channel needs at least one Kraus operator")
    n = ops[0].shape[0]
    for k in ops:
        if k.shape != (n, n):
            raise ValueError(f"Kraus operator shape {k.shape} does not match ({n}, {n})")
        if not np.all(np.isfinite(k)):
            raise ValueError("Kraus operator has non-finite entries")
    err = completeness_error(ops)
    if err > tol:
        raise NotCPTPError(f"channel is not trace preserving: ||sum K^dag K - I||_max = {err:.3e}")
    for k in ops:
        k.setflags(write=False)
    return KrausChannel(tuple(ops), n, label)


def _drop_zero(ops, tol: float = 0.0):
    kept = [k for k in ops if np.abs(k).max() > tol]
    return kept or ops[:1]


def identity_channel(dim: HilbertDim | int, label: str = "identity") -> KrausChannel:
    return make_channel([np.eye(size_of(dim))], label=label)


def unitary_channel(u, label: str = "unitary") -> KrausChannel:
    return make_channel([u], label=label)


def apply(channel: KrausChannel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (channel.dim, channel.dim):
        raise ValueError(f"state shape {rho.shape} does not match channel dim {channel.dim}")
    return sum(k @ rho @ k.conj().T for k in channel.kraus_ops)


def compose(first: KrausChannel, second: KrausChannel, label: str | None = None) -> KrausChannel:
    """Channel that applies ``first`` and then ``second``: Kraus set {B_j A_i}."""
    if first.dim != second.dim:
        raise ValueError(f"dimension mismatch: {first.dim} vs {second.dim}")
    ops = [b @ a for a, b in product(first.kraus_ops, second.kraus_ops)]
    return make_channel(ops, label=label or f"{second.label}*{first.label}")


def superoperator(channel: KrausChannel) -> np.ndarray:
    """Matrix S with vec(E(rho)) = S vec(rho), row-major vec."""
    return sum(np.kron(k, k.conj()) for k in channel.kraus_ops)


def same_map(a: KrausChannel, b: KrausChannel, tol: float = MAP_TOL) -> bool:
    """Map equality on the elementary-matrix basis."""
    if a.dim != b.dim:
        return False
    return bool(np.abs(superoperator(a) - superoperator(b)).max() <= tol)


# -- block structures -------------------------------------------------------

@dataclass(frozen=True)
class BlockPartition:
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(int(i) for i in b) for b in self.blocks))
        seen: list[int] = [i for b in self.blocks for i in b]
        if any(len(b) == 0 for b in self.blocks):
            raise ValueError("partition blocks must be nonempty")
        if len(seen) != len(set(seen)):
            raise ValueError(f"partition blocks overlap: {self.blocks}")

    def covers(self, d: int) -> bool:
        return sorted(i for b in self.blocks for i in b) == list(range(d))


def block_projectors(partition: BlockPartition, dim: HilbertDim | int) -> list[np.ndarray]:
    n = size_of(dim)
    out = []
    for b in partition.blocks:
        p = np.zeros((n, n), dtype=complex)
        p[list(b), list(b)] = 1.0
        out.append(p)
    return out


def block_dephasing(partition: BlockPartition | Sequence[Sequence[int]], dim: HilbertDim | int,
                    label: str = "") -> KrausChannel:
    """Destroys coherence between blocks, keeps it within each block."""
    if not isinstance(partition, BlockPartition):
        partition = BlockPartition(tuple(tuple(b) for b in partition))
    n = size_of(dim)
    if not partition.covers(n):
        raise ValueError(f"partition {partition.blocks} does not cover 0..{n - 1}")
    name = label or "dephase:" + "|".join("".join(map(str, b)) for b in partition.blocks)
    return make_channel(block_projectors(partition, n), label=name)


PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
DEFAULT_PAULI_PAIRS = ((0, 2), (1, 3))


@dataclass(frozen=True)
class BlockPauliParams:
    eta: float
    pauli_kind: str
    subspace_pairs: tuple[tuple[int, int], ...] = DEFAULT_PAULI_PAIRS

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.pauli_kind not in PAULI:
            raise ValueError(f"pauli_kind must be one of X, Y, Z, got {self.pauli_kind!r}")
        flat = [i for p in self.subspace_pairs for i in p]
        if any(len(p) != 2 for p in self.subspace_pairs):
            raise ValueError("subspace pairs must have exactly two indices")
        if len(flat) != len(set(flat)):
            raise ValueError(f"subspace pairs overlap: {self.subspace_pairs}")


def block_pauli_operator(kind: str, pairs, dim: HilbertDim | int) -> np.ndarray:
    """Pauli ``kind`` on each 2-d subspace in ``pairs``; identity on unpaired levels.

    Within a pair (i, j), |i> plays the role of |0> and |j> of |1>.
    """
    n = size_of(dim)
    sigma = PAULI[kind]
    op = np.eye(n, dtype=complex)
    for i, j in pairs:
        if max(i, j) >= n:
            raise ValueError(f"pair {(i, j)} out of range for dimension {n}")
        idx = [i, j]
        op[np.ix_(idx, idx)] = sigma
    return op


def block_pauli(params: BlockPauliParams, dim: HilbertDim | int = 4, label: str = "") -> KrausChannel:
    """Identity with probability 1-eta, block Pauli with probability eta."""
    n = size_of(dim)
    k1 = block_pauli_operator(params.pauli_kind, params.subspace_pairs, n)
    ops = [math.sqrt(1 - params.eta) * np.eye(n), math.sqrt(params.eta) * k1]
    return make_channel(_drop_zero(ops), label=label or f"block_pauli_{params.pauli_kind}")


# -- decoherence --------------------------------------------------------------

def amplitude_damping(gamma: float, dim: HilbertDim | int) -> KrausChannel:
    """Multi-photon-loss channel on a truncated oscillator.

    K_l has entries <m-l|K_l|m> = sqrt(C(m, l)) (1-gamma)^((m-l)/2) gamma^(l/2).
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    n = size_of(dim)
    ops = []
    for ell in range(n):
        k = np.zeros((n, n), dtype=complex)
        for m in range(ell, n):
            k[m - ell, m] = math.sqrt(math.comb(m, ell) * (1 - gamma) ** (m - ell) * gamma**ell)
        ops.append(k)
    return make_channel(_drop_zero(ops), label=f"amp_damp({gamma:.6g})")


def damping_gamma(t: float, t1: float) -> float:
    if t < 0 or t1 <= 0:
        raise ValueError(f"need t >= 0 and T1 > 0, got t={t}, T1={t1}")
    return -math.expm1(-t / t1)


def qubit_noise(t: float, t1: float, tphi: float) -> KrausChannel:
    """Relaxation followed by pure dephasing over a duration ``t`` (all in us).

    ``tphi=math.inf`` disables dephasing.
    """
    if t < 0 or t1 <= 0 or tphi <= 0:
        raise ValueError(f"need t >= 0 and T1, Tphi > 0; got t={t}, T1={t1}, Tphi={tphi}")
    gamma = damping_gamma(t, t1)
    coherence = math.exp(-t / tphi)
    p = 0.5 * (1 + coherence)
    damp = [
        np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex),
        np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex),
    ]
    deph = [math.sqrt(p) * np.eye(2), math.sqrt(1 - p) * PAULI["Z"]]
    ops = [b @ a for a, b in product(damp, deph)]
    return make_channel(_drop_zero(ops), label=f"qubit_noise(t={t:.6g})")


def full_dephasing(dim: HilbertDim | int) -> KrausChannel:
    n = size_of(dim)
    return block_dephasing(BlockPartition(tuple((i,) for i in range(n))), n)
