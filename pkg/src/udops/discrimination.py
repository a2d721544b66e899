"""Unambiguous discrimination of states and operations.

Two constructions are provided:

* linearly independent pure states (e.g. displaced vacua) get effects along
  their reciprocal states, all scaled by one common conclusive probability;
* general channel sets with a fixed pure probe get effects along the part of
  the output-support union that is orthogonal to all *other* outputs.

In both cases the common scale is the largest value that keeps the
inconclusive effect ``I - sum(E_n)`` positive semidefinite, found by
bisection on its smallest eigenvalue.

Conditional-probability matrices are ``N x (N+1)``: row ``n`` is the
operation, columns ``0..N-1`` the heralding outcomes (relabelled so that
column ``n`` heralds operation ``n``) and the last column the inconclusive
outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .channels import KrausChannel, apply
from .hilbert import (
    HilbertDim,
    as_state,
    gram_matrix,
    projector,
    symmetric_coherent_states,
    DEFAULT_TRUNCATION,
)
from .serialize import decode_matrix, encode_matrix

POVM_TOL = 1e-10
SCALE_TOL = 1e-14
SUPPORT_TOL = 1e-9
SPAN_TOL = 1e-8


class LinearDependenceError(ValueError):
    """States to be discriminated are linearly dependent."""


class InvalidPovmError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PovmSet:
    """Heralding effects ``E_0..E_{N-1}`` plus the inconclusive effect ``E_I``."""

    effects: tuple[np.ndarray, ...]
    inconclusive: np.ndarray
    scale: float | None = None

    @classmethod
    def from_effects(cls, effects, scale: float | None = None) -> "PovmSet":
        effects = tuple(np.asarray(e, dtype=complex) for e in effects)
        n = effects[0].shape[0]
        e_inc = np.eye(n) - sum(effects)
        return cls(effects, 0.5 * (e_inc + e_inc.conj().T), scale)

    @property
    def dim(self) -> int:
        return self.inconclusive.shape[0]

    def elements(self) -> list[np.ndarray]:
        """All effects in circuit order: ``[E_I, E_0, ..., E_{N-1}]``."""
        return [self.inconclusive, *self.effects]

    def validation_errors(self, tol: float = POVM_TOL) -> list[str]:
        errs = []
        n = self.dim
        for name, e in [("E_I", self.inconclusive)] + [(f"E_{i}", e) for i, e in enumerate(self.effects)]:
            if e.shape != (n, n):
                errs.append(f"{name} has shape {e.shape}, expected {(n, n)}")
                continue
            if np.abs(e - e.conj().T).max() > tol:
                errs.append(f"{name} is not Hermitian")
            lo = np.linalg.eigvalsh(0.5 * (e + e.conj().T)).min()
            if lo < -tol:
                errs.append(f"{name} has negative eigenvalue {lo:.3e}")
        if not errs:
            resid = np.abs(sum(self.elements()) - np.eye(n)).max()
            if resid > tol:
                errs.append(f"effects sum to identity only within {resid:.3e}")
        return errs

    def validate(self, tol: float = POVM_TOL) -> "PovmSet":
        errs = self.validation_errors(tol)
        if errs:
            raise InvalidPovmError("; ".join(errs))
        return self

    def to_json(self) -> dict:
        return {
            "effects": [encode_matrix(e) for e in self.effects],
            "inconclusive": encode_matrix(self.inconclusive),
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PovmSet":
        return cls(
            tuple(decode_matrix(e) for e in obj["effects"]),
            decode_matrix(obj["inconclusive"]),
            obj.get("scale"),
        ).validate()


@dataclass(frozen=True, eq=False)
class DiscriminationReport:
    conditional: np.ndarray
    priors: np.ndarray
    p_con: float
    p_inc: float
    p_err: float
    assignment: tuple[int, ...] = ()

    @classmethod
    def from_conditional(cls, conditional, priors=None, assignment=()) -> "DiscriminationReport":
        cond = np.asarray(conditional, dtype=float)
        n = cond.shape[0]
        if cond.shape != (n, n + 1):
            raise ValueError(f"conditional matrix must be N x (N+1), got {cond.shape}")
        q = np.full(n, 1.0 / n) if priors is None else np.asarray(priors, dtype=float)
        p_con = float(q @ np.diag(cond[:, :n]))
        p_inc = float(q @ cond[:, n])
        p_err = float(q @ cond.sum(axis=1)) - p_con - p_inc
        return cls(cond, q, p_con, p_inc, p_err, tuple(int(a) for a in assignment))

    @property
    def n_ops(self) -> int:
        return self.conditional.shape[0]

    def to_json(self) -> dict:
        return {
            "conditional": self.conditional.tolist(),
            "priors": self.priors.tolist(),
            "p_con": self.p_con,
            "p_inc": self.p_inc,
            "p_err": self.p_err,
            "assignment": list(self.assignment),
        }


# -- pure linearly independent states ----------------------------------------

def _check_independent(states) -> np.ndarray:
    g = gram_matrix(states)
    lo = np.linalg.eigvalsh(g).min()
    if lo <= 1e-10:
        raise LinearDependenceError(f"states are linearly dependent (Gram min eigenvalue {lo:.3e})")
    return g


def _gram_schmidt(vectors) -> list[np.ndarray]:
    basis: list[np.ndarray] = []
    for v in vectors:
        w = np.array(v, dtype=complex)
        for _ in range(2):
            for u in basis:
                w -= np.vdot(u, w) * u
        nrm = np.linalg.norm(w)
        if nrm > 1e-12:
            basis.append(w / nrm)
    return basis


def reciprocal_states(states: Sequence) -> list[np.ndarray]:
    """Normalized |psi_n^perp>: orthogonal to every |psi_m>, m != n.

    Each one is what is left of |psi_n> after removing its projection onto
    an orthonormal basis of the other states.
    """
    states = [np.asarray(s, dtype=complex) for s in states]
    _check_independent(states)
    out = []
    for n, psi in enumerate(states):
        others = _gram_schmidt(s for m, s in enumerate(states) if m != n)
        r = psi.copy()
        for _ in range(2):
            for u in others:
                r -= np.vdot(u, r) * u
        out.append(r / np.linalg.norm(r))
    return out


def max_common_scale(operators: Sequence[np.ndarray], tol: float = SCALE_TOL) -> float:
    """Largest P in (0, 1] with ``I - P * sum(operators)`` PSD, by bisection."""
    total = sum(operators)
    total = 0.5 * (total + total.conj().T)
    eye = np.eye(total.shape[0])

    def ok(p: float) -> bool:
        return np.linalg.eigvalsh(eye - p * total).min() >= 0.0

    if ok(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def build_symmetric_povm(states: Sequence) -> PovmSet:
    """Optimal equal-probability UD measurement for linearly independent pure states."""
    states = [np.asarray(s, dtype=complex) for s in states]
    recips = reciprocal_states(states)
    unit = [projector(r) / abs(np.vdot(s, r)) ** 2 for s, r in zip(states, recips)]
    p = max_common_scale(unit)
    return PovmSet.from_effects([p * f for f in unit], scale=p)


def symmetric_ud_bound(alpha_mag: float, n_states: int, dim: HilbertDim | int = DEFAULT_TRUNCATION):
    """Optimal conclusive probability for N symmetric coherent states.

    Returns ``(N * min_r |c_r|^2, |c_r|^2 for r = 0..N-1)`` where
    ``|c_r|^2 = N^-2 sum_{n,n'} exp(-2 pi i r (n - n') / N) <psi_n|psi_n'>``
    is evaluated from the Gram matrix of truncated coherent states.
    """
    if n_states < 2:
        raise ValueError(f"need at least two states, got N={n_states}")
    if alpha_mag < 0:
        raise ValueError(f"|alpha| must be nonnegative, got {alpha_mag}")
    g = gram_matrix(symmetric_coherent_states(alpha_mag, n_states, dim))
    idx = np.arange(n_states)
    diff = idx[:, None] - idx[None, :]
    c_sq = np.array([
        (np.exp(-2j * np.pi * r * diff / n_states) * g).sum().real / n_states**2
        for r in range(n_states)
    ])
    bound = float(np.clip(n_states * c_sq.min(), 0.0, 1.0))
    return bound, c_sq


# -- mixed outputs of general channels ----------------------------------------

def support(rho, tol: float = SUPPORT_TOL) -> np.ndarray:
    """Orthonormal columns spanning the eigenvectors with eigenvalue > tol * trace."""
    m = np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    cut = tol * max(float(np.trace(m).real), 0.0)
    return v[:, w > cut]


def span(bases, n: int, tol: float = SPAN_TOL) -> np.ndarray:
    """Orthonormal basis of the span of several column blocks."""
    cols = [b for b in bases if b.size]
    if not cols:
        return np.zeros((n, 0), dtype=complex)
    u, s, _ = np.linalg.svd(np.hstack(cols), full_matrices=False)
    return u[:, s > tol * max(1.0, s.max())]


@dataclass(frozen=True, eq=False)
class SupportAnalysis:
    outputs: tuple[np.ndarray, ...]
    S: np.ndarray
    S_n: tuple[np.ndarray, ...]
    complements: tuple[np.ndarray, ...]
    feasible: tuple[bool, ...]
    povm: PovmSet | None = None

    @property
    def all_feasible(self) -> bool:
        return all(self.feasible)

    @property
    def conclusive_probability(self) -> float:
        return 0.0 if self.povm is None else float(self.povm.scale)

    def support_dims(self) -> dict:
        return {
            "S": int(self.S.shape[1]),
            "S_n": [int(b.shape[1]) for b in self.S_n],
            "outputs": [int(support(r).shape[1]) for r in self.outputs],
        }


def output_states(channels: Sequence[KrausChannel], probe) -> list[np.ndarray]:
    rho = projector(as_state(probe, tol=1e-10))
    return [apply(ch, rho) for ch in channels]


def ud_feasibility(channels: Sequence[KrausChannel], probe, tol: float = SUPPORT_TOL) -> SupportAnalysis:
    """Support-inclusion test for UD of channel outputs on a pure probe.

    Operation ``n`` can be heralded iff the support union of all outputs is
    strictly larger than the union over the others.  When every operation
    passes, a candidate POVM is emitted with ``E_n`` proportional to the
    projector onto that excess, normalized so each operation is heralded
    with the same probability.
    """
    dims = {ch.dim for ch in channels}
    if len(dims) != 1:
        raise ValueError(f"channels act on different dimensions: {sorted(dims)}")
    n = dims.pop()
    if np.asarray(probe).shape != (n,):
        raise ValueError(f"probe dimension {np.asarray(probe).shape} does not match channels ({n})")
    outputs = output_states(channels, probe)
    supps = [support(r, tol) for r in outputs]
    s_all = span(supps, n)
    s_rest, comps, feas = [], [], []
    for k in range(len(channels)):
        rest = span([b for j, b in enumerate(supps) if j != k], n)
        s_rest.append(rest)
        extra = s_all.shape[1] - rest.shape[1]
        feas.append(extra > 0)
        if extra > 0:
            m = s_all - rest @ (rest.conj().T @ s_all)
            u, _, _ = np.linalg.svd(m, full_matrices=False)
            q = u[:, :extra]
            comps.append(q @ q.conj().T)
        else:
            comps.append(np.zeros((n, n), dtype=complex))
    povm = None
    if all(feas):
        unit = [c / np.trace(c @ r).real for c, r in zip(comps, outputs)]
        p = max_common_scale(unit)
        povm = PovmSet.from_effects([p * f for f in unit], scale=p)
    return SupportAnalysis(tuple(outputs), s_all, tuple(s_rest), tuple(comps), tuple(feas), povm)


# -- probe search -------------------------------------------------------------

def probe_from_params(angles, phases) -> np.ndarray:
    """Pure state from d-1 hyperspherical angles and d-1 relative phases.

    Amplitude k is ``sin(a_0)...sin(a_{k-1}) cos(a_k)`` (the last one has no
    cosine); the phase of component 0 is fixed to zero.
    """
    angles = np.asarray(angles, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if angles.shape != phases.shape:
        raise ValueError("angles and phases must have the same length")
    d = angles.size + 1
    mags = np.empty(d)
    running = 1.0
    for k in range(d - 1):
        mags[k] = running * np.cos(angles[k])
        running *= np.sin(angles[k])
    mags[-1] = running
    return mags * np.exp(1j * np.concatenate([[0.0], phases]))


def sample_probe_params(d: int, trials: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded angle/phase samples whose probes are Haar-distributed.

    Squared moduli are drawn uniformly from the simplex and converted to
    hyperspherical angles.
    """
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(d), size=trials)
    phases = rng.uniform(0.0, 2 * np.pi, size=(trials, d - 1))
    tail = 1.0 - np.cumsum(weights, axis=1) + weights  # weight still unassigned before k
    ratio = np.divide(weights[:, :-1], tail[:, :-1], out=np.ones((trials, d - 1)), where=tail[:, :-1] > 0)
    angles = np.arccos(np.sqrt(np.clip(ratio, 0.0, 1.0)))
    return angles, phases


@dataclass(frozen=True, eq=False)
class ProbeSearchResult:
    probe: np.ndarray | None
    analysis: SupportAnalysis | None
    conclusive_probability: float
    n_feasible: int
    trials: int

    @property
    def found(self) -> bool:
        return self.probe is not None


def _probe_score(channels, angles, phases) -> tuple[float, SupportAnalysis]:
    res = ud_feasibility(channels, probe_from_params(angles, phases))
    return (res.conclusive_probability if res.all_feasible else 0.0), res


def probe_search(channels: Sequence[KrausChannel], trials: int, seed: int,
                 refine: int = 3, refine_iters: int = 300) -> ProbeSearchResult:
    """Search pure probes for the best common-scale UD measurement.

    ``trials`` Haar-random probes are drawn from the seeded generator before
    any evaluation.  The ``refine`` best feasible samples are then polished
    by Nelder-Mead in the same angle/phase coordinates; set ``refine=0`` for
    plain sampling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = channels[0].dim
    angles, phases = sample_probe_params(d, trials, seed)
    scored = []
    for i, (a, ph) in enumerate(zip(angles, phases)):
        p, res = _probe_score(channels, a, ph)
        if res.all_feasible:
            scored.append((p, i, res))
    if not scored:
        return ProbeSearchResult(None, None, 0.0, 0, trials)
    scored.sort(key=lambda t: (-t[0], t[1]))
    best_p, best_i, best_res = scored[0]
    best_probe = probe_from_params(angles[best_i], phases[best_i])
    for _, i, _ in scored[:refine]:
        x0 = np.concatenate([angles[i], phases[i]])
        fit = minimize(
            lambda x: -_probe_score(channels, x[: d - 1], x[d - 1:])[0],
            x0, method="Nelder-Mead",
            options={"maxiter": refine_iters, "xatol": 1e-8, "fatol": 1e-12},
        )
        p, res = _probe_score(channels, fit.x[: d - 1], fit.x[d - 1:])
        if res.all_feasible and p > best_p:
            best_p, best_res = p, res
            best_probe = probe_from_params(fit.x[: d - 1], fit.x[d - 1:])
    return ProbeSearchResult(best_probe, best_res, best_p, len(scored), trials)


# -- Born-rule evaluation ------------------------------------------------------

def heralding_assignment(raw) -> tuple[int, ...]:
    """Effect index heralding each operation, maximizing the summed diagonal."""
    raw = np.asarray(raw, dtype=float)
    rows, cols = linear_sum_assignment(raw, maximize=True)
    out = np.empty(raw.shape[0], dtype=int)
    out[rows] = cols
    return tuple(int(c) for c in out)


def relabel(raw, assignment) -> np.ndarray:
    """Reorder heralding columns of an ``N x (N+1)`` matrix by ``assignment``."""
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0]
    return np.column_stack([raw[:, list(assignment)], raw[:, n]])


def evaluate_povm(povm: PovmSet, channels: Sequence[KrausChannel], probe, priors=None,
                  assignment: Sequence[int] | None = None) -> DiscriminationReport:
    """Conditional probabilities Tr[E_m E_n(|probe><probe|)] and their aggregates."""
    povm.validate()
    n = len(channels)
    if len(povm.effects) != n:
        raise InvalidPovmError(f"POVM has {len(povm.effects)} heralding effects for {n} operations")
    if priors is not None:
        priors = np.asarray(priors, dtype=float)
        if priors.shape != (n,) or np.any(priors < 0) or abs(priors.sum() - 1) > 1e-12:
            raise ValueError(f"priors must be {n} nonnegative numbers summing to 1")
    outputs = output_states(channels, probe)
    raw = np.array([
        [np.trace(e @ rho).real for e in povm.effects] + [np.trace(povm.inconclusive @ rho).real]
        for rho in outputs
    ])
    if assignment is None:
        assignment = heralding_assignment(raw[:, :n])
    return DiscriminationReport.from_conditional(relabel(raw, assignment), priors, assignment)
