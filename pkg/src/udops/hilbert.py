"""Finite-dimensional Hilbert-space primitives.

States and operators are plain ``numpy`` complex arrays.  The helpers here
construct and validate them; nothing is wrapped in a class except the
dimension descriptor, because every downstream module does linear algebra
directly on the arrays.

Oscillator objects (coherent states, displacement operators) live on a Fock
space truncated at ``HilbertDim.d_trunc`` levels.  Truncation is checked,
not assumed: constructors raise :class:`TruncationError` when the Poisson
tail beyond the cutoff exceeds ``LEAKAGE_BOUND``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STATE_NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10
LEAKAGE_BOUND = 1e-10
DEFAULT_TRUNCATION = 40


class TruncationError(ValueError):
    """Fock truncation too small for the requested amplitude."""


@dataclass(frozen=True)
class HilbertDim:
    """Logical qudit dimension ``d`` embedded in ``d_trunc`` Fock levels."""

    d: int
    d_trunc: int | None = None

    def __post_init__(self):
        if self.d_trunc is None:
            object.__setattr__(self, "d_trunc", self.d)
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if int(self.d_trunc) != self.d_trunc or self.d_trunc < self.d:
            raise ValueError(f"d_trunc must be an integer >= d={self.d}, got {self.d_trunc}")


def size_of(dim: HilbertDim | int) -> int:
    """Matrix size for ``dim``; plain integers are accepted as-is."""
    if isinstance(dim, HilbertDim):
        return dim.d_trunc
    n = int(dim)
    if n != dim or n < 1:
        raise ValueError(f"invalid dimension {dim!r}")
    return n


# -- validation ------------------------------------------------------------

def as_state(vec, tol: float = STATE_NORM_TOL) -> np.ndarray:
    """Return ``vec`` as a complex 1-D array, checking unit norm."""
    v = np.asarray(vec, dtype=complex)
    if v.ndim != 1:
        raise ValueError(f"state vector must be 1-D, got shape {v.shape}")
    norm2 = float(np.vdot(v, v).real)
    if abs(norm2 - 1.0) > tol:
        raise ValueError(f"state vector not normalized: |psi|^2 = {norm2!r}")
    return v


def normalize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def as_density(rho, psd_tol: float = PSD_TOL) -> np.ndarray:
    """Return ``rho`` as a complex square array after density-matrix checks."""
    m = np.asarray(rho, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {m.shape}")
    if np.abs(m - m.conj().T).max() > HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(m).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace is {tr!r}, expected 1")
    lo = np.linalg.eigvalsh(m).min()
    if lo < -psd_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lo!r}")
    return m


def is_density(rho, psd_tol: float = PSD_TOL, tol: float = 1e-10) -> bool:
    m = np.asarray(rho, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if np.abs(m - m.conj().T).max() > tol or abs(np.trace(m).real - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh(m).min() >= -psd_tol)


def projector(vec) -> np.ndarray:
    """|v><v| for a (not necessarily normalized) vector."""
    v = np.asarray(vec, dtype=complex)
    return np.outer(v, v.conj())


def dagger(m) -> np.ndarray:
    return np.asarray(m).conj().T


# -- states and operators ---------------------------------------------------

def fock_state(k: int, dim: HilbertDim | int) -> np.ndarray:
    n = size_of(dim)
    if not 0 <= k < n:
        raise IndexError(f"Fock index {k} out of range for dimension {n}")
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return v


def annihilation(dim: HilbertDim | int) -> np.ndarray:
    n = size_of(dim)
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), 1).astype(complex)


def number_operator(dim: HilbertDim | int) -> np.ndarray:
    return np.diag(np.arange(size_of(dim), dtype=float)).astype(complex)


def _poisson_amplitudes(alpha: complex, n: int) -> np.ndarray:
    # log-space to keep n! from overflowing at large cutoffs
    k = np.arange(n)
    mag = abs(alpha)
    if mag == 0:
        out = np.zeros(n, dtype=complex)
        out[0] = 1.0
        return out
    log_mod = -0.5 * mag**2 + k * math.log(mag) - 0.5 * np.array([math.lgamma(j + 1) for j in k])
    return np.exp(log_mod) * np.exp(1j * k * np.angle(alpha))


def truncation_leakage(alpha: complex, dim: HilbertDim | int) -> float:
    """Poisson weight of a coherent state above the truncation cutoff."""
    n = size_of(dim)
    amps = _poisson_amplitudes(alpha, n)
    # sum of the retained weights can round above 1 when the tail is tiny
    return max(0.0, 1.0 - float(np.sum(np.abs(amps) ** 2)))


def _check_leakage(alpha: complex, dim, bound: float):
    leak = truncation_leakage(alpha, dim)
    if leak >= bound:
        raise TruncationError(
            f"|alpha|={abs(alpha):.4g} leaks {leak:.3e} beyond {size_of(dim)} Fock levels "
            f"(bound {bound:.1e}); increase d_trunc"
        )


def coherent_state(alpha: complex, dim: HilbertDim | int, leakage_bound: float = LEAKAGE_BOUND) -> np.ndarray:
    """Truncated, renormalized coherent state built from its Poisson series."""
    _check_leakage(alpha, dim, leakage_bound)
    return normalize(_poisson_amplitudes(complex(alpha), size_of(dim)))


def displacement_operator(alpha: complex, dim: HilbertDim | int, leakage_bound: float = LEAKAGE_BOUND) -> np.ndarray:
    """exp(alpha a^dag - alpha^* a) on the truncated Fock space.

    The generator is anti-Hermitian, so ``i * G`` is diagonalized with
    ``eigh`` and exponentiated exactly; the result is unitary to machine
    precision.  Accuracy on the low levels is governed by truncation, which
    is checked through the leakage of ``D(alpha)|0>``.
    """
    _check_leakage(alpha, dim, leakage_bound)
    a = annihilation(dim)
    alpha = complex(alpha)
    gen = alpha * a.conj().T - alpha.conjugate() * a
    w, v = np.linalg.eigh(1j * gen)
    return (v * np.exp(-1j * w)) @ v.conj().T


def overlap(a, b) -> complex:
    """<a|b>, conjugate-linear in the first argument."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def symmetric_coherent_states(alpha_mag: float, n_states: int, dim: HilbertDim | int) -> list[np.ndarray]:
    """Coherent states with amplitudes |alpha| exp(2 pi i n / N), n = 0..N-1."""
    return [
        coherent_state(alpha_mag * np.exp(2j * np.pi * n / n_states), dim)
        for n in range(n_states)
    ]


def gram_matrix(states) -> np.ndarray:
    m = np.column_stack([np.asarray(s, dtype=complex) for s in states])
    return m.conj().T @ m


# -- matrix functions shared by the dilation and metrics code ---------------

def psd_sqrt(m, clamp: float = 1e-12, rel_zero: float = 1e-12) -> np.ndarray:
    """Square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-clamp, 0)`` are treated as zero; anything more
    negative is an error.  Eigenvalues below ``rel_zero * max`` are also
    zeroed, otherwise rounding noise of 1e-16 would turn into 1e-8 entries
    in the root.
    """
    h = np.asarray(m, dtype=complex)
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    top = float(np.abs(w).max(initial=0.0))
    if w.min(initial=0.0) < -max(clamp, rel_zero * top):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.where(w > rel_zero * top, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def herm_pinv(m, rcond: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Pseudoinverse of a Hermitian matrix and an orthonormal basis of its kernel.

    Eigenvalues below ``rcond * max|eigenvalue|`` count as zero.
    """
    h = np.asarray(m, dtype=complex)
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    top = float(np.abs(w).max(initial=0.0))
    keep = np.abs(w) > rcond * top if top > 0 else np.zeros_like(w, dtype=bool)
    inv = (v[:, keep] / w[keep]) @ v[:, keep].conj().T
    return inv, v[:, ~keep]


def orthonormal_complement(basis, n: int | None = None, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal columns spanning the complement of ``basis`` in C^n.

    Candidates are the standard basis vectors, picked greedily by how much of
    them survives projection, so the result stays close to identity columns.
    ``basis`` must have orthonormal columns.
    """
    b = np.asarray(basis, dtype=complex)
    if n is None:
        n = b.shape[0]
    if b.size == 0:
        b = np.zeros((n, 0), dtype=complex)
    need = n - b.shape[1]
    resid = np.eye(n, dtype=complex) - b @ b.conj().T
    out = []
    for _ in range(need):
        norms = np.linalg.norm(resid, axis=0)
        j = int(np.argmax(norms))
        if norms[j] < tol:
            raise ValueError("basis columns are not linearly independent")
        q = resid[:, j] / norms[j]
        # second pass against accumulated columns keeps orthogonality at 1e-15
        for p in out:
            q = q - np.vdot(p, q) * p
        q -= b @ (b.conj().T @ q)
        q /= np.linalg.norm(q)
        out.append(q)
        resid -= np.outer(q, q.conj() @ resid)
    return np.column_stack(out) if out else np.zeros((n, 0), dtype=complex)
