"""Figures of merit: the POVM-result distance, state fidelity, chi matrices, process fidelity."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .channels import KrausChannel, apply
from .discrimination import DiscriminationReport
from .hilbert import HilbertDim, psd_sqrt, size_of
from .serialize import encode_matrix

HW_BASIS = "heisenberg-weyl"


def distance_D(simulated: DiscriminationReport, ideal: DiscriminationReport) -> float:
    """Summed absolute difference of the conditional matrices, divided by N."""
    a = np.asarray(simulated.conditional)
    b = np.asarray(ideal.conditional)
    if a.shape != b.shape:
        raise ValueError(f"report shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum() / a.shape[0])


def state_fidelity(simu, ideal_pure, purity_tol: float = 1e-9) -> float:
    """Tr(rho_simu rho_ideal); only meaningful when the ideal state is pure."""
    simu = np.asarray(simu, dtype=complex)
    ideal = np.asarray(ideal_pure, dtype=complex)
    purity = np.trace(ideal @ ideal).real
    if purity < 1 - purity_tol:
        raise ValueError(f"ideal state is not pure (purity {purity:.6g})")
    return float(np.clip(np.trace(simu @ ideal).real, 0.0, 1.0))


@lru_cache(maxsize=16)
def heisenberg_weyl_basis(d: int) -> np.ndarray:
    """Trace-orthonormal operators X^a Z^b / sqrt(d), stacked as (d*d, d, d).

    Index ``a * d + b``; element 0 is the identity over sqrt(d).
    """
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    ops = [
        np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b) / np.sqrt(d)
        for a in range(d) for b in range(d)
    ]
    out = np.array(ops, dtype=complex)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ChiMatrix:
    matrix: np.ndarray
    basis_label: str = HW_BASIS

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def to_json(self) -> dict:
        return {"basis_label": self.basis_label, "matrix": encode_matrix(self.matrix)}


def choi(channel: KrausChannel | Callable, dim: HilbertDim | int | None = None) -> np.ndarray:
    """J[(i,j),(k,l)] = <i| E(|j><l|) |k>, i.e. sum_K vec(K) vec(K)^dag for Kraus maps."""
    if isinstance(channel, KrausChannel):
        d = channel.dim
        fn = lambda m: apply(channel, m)
    else:
        if dim is None:
            raise ValueError("dim is required when the map is a plain callable")
        d = size_of(dim)
        fn = channel
    j = np.zeros((d, d, d, d), dtype=complex)
    for col in range(d):
        for row in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[col, row] = 1.0
            # out[i, k] = <i|E(|col><row|)|k>
            j[:, col, :, row] = fn(e)
    return j.reshape(d * d, d * d)


def chi_matrix(channel: KrausChannel | Callable, dim: HilbertDim | int | None = None) -> ChiMatrix:
    """Process matrix in the normalized Heisenberg-Weyl basis.

    The map is applied to every elementary matrix to get its Choi matrix,
    which is then projected on vec(W_m) vec(W_n)^dag.  Normalized so that a
    trace-preserving map has unit trace.
    """
    j = choi(channel, dim)
    d = int(round(np.sqrt(j.shape[0])))
    w = heisenberg_weyl_basis(d).reshape(d * d, d * d).T  # columns are row-major vec(W_m)
    chi = w.conj().T @ j @ w / d
    return ChiMatrix(0.5 * (chi + chi.conj().T))


def map_from_chi(chi: ChiMatrix) -> Callable[[np.ndarray], np.ndarray]:
    """E(rho) = d * sum_mn chi_mn W_m rho W_n^dag."""
    d = chi.dim
    w = heisenberg_weyl_basis(d)

    def fn(rho):
        rho = np.asarray(rho, dtype=complex)
        left = np.einsum("mij,jk->mik", w, rho)
        right = w.conj().transpose(0, 2, 1)
        return d * np.einsum("mn,mij,njk->ik", chi.matrix, left, right)

    return fn


def process_fidelity(a: ChiMatrix, b: ChiMatrix) -> float:
    """(Tr sqrt(sqrt(a) b sqrt(a)))^2 for chi matrices in the same basis."""
    if a.basis_label != b.basis_label:
        raise ValueError(f"basis mismatch: {a.basis_label!r} vs {b.basis_label!r}")
    if a.matrix.shape != b.matrix.shape:
        raise ValueError(f"chi shapes differ: {a.matrix.shape} vs {b.matrix.shape}")
    ra = psd_sqrt(a.matrix, clamp=1e-9)
    inner = psd_sqrt(ra @ b.matrix @ ra, clamp=1e-9)
    return float(np.clip(np.trace(inner).real ** 2, 0.0, 1.0))


def channel_process_fidelity(a: KrausChannel, b: KrausChannel) -> float:
    return process_fidelity(chi_matrix(a), chi_matrix(b))
