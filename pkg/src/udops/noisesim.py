"""Noisy simulation of the full discrimination pipeline.

Each shot runs: probe preparation, the compiled circuit of the sampled
operation, then the compiled POVM circuit.  Every circuit layer is a joint
unitary on ``ancilla (x) system`` followed by an ancilla readout, a classical
confusion step, and an ideal ancilla reset.  The next layer is chosen from
the *recorded* bit, so a misread ancilla sends the system down the wrong
branch, as it would in hardware feedback.

Decoherence is discretized: each joint unitary is sandwiched between two
half-duration noise steps (cavity amplitude damping and ancilla
relaxation/dephasing), and the cavity keeps decaying during readout.
Ancilla decay during readout is not added separately; the confusion
matrix already describes it.

Layers are skipped when their unitary is the identity, and left unread
when the ancilla cannot leave |0> in the ideal circuit (lower-left block
zero); in both cases the recorded bit is 0.

Because the recorded bit sequences form a small tree, exact propagation
keeps one unnormalized system matrix per recorded prefix.  Shot sampling
reuses those exact branch weights and draws bits layer by layer.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .channels import damping_gamma
from .dilation import BinaryTreeCircuit
from .discrimination import DiscriminationReport
from .hilbert import orthonormal_complement, projector
from .metrics import ChiMatrix, chi_matrix, distance_D, state_fidelity
from .serialize import decode_vector, encode_vector

STAGES = ("prep", "channel", "povm")
INCONCLUSIVE = "I"


@dataclass(frozen=True)
class NoiseModel:
    """Device decoherence parameters; times in microseconds, chi_qs in MHz."""

    cavity_T1: float = 143.0
    qubit_T1: float = 30.0
    qubit_Tphi: float = 120.0
    chi_qs: float = 1.90
    gate_time: float = 2.0
    measure_time: float = 0.32
    readout_confusion: tuple = ((0.999, 0.001), (0.011, 0.989))
    cavity_decoherence: bool = True
    qubit_decoherence: bool = True
    readout_error: bool = True

    def __post_init__(self):
        for name in ("cavity_T1", "qubit_T1", "qubit_Tphi", "gate_time", "measure_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        conf = np.asarray(self.readout_confusion, dtype=float)
        if conf.shape != (2, 2) or np.any(conf < 0) or np.abs(conf.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError(f"readout_confusion must be a 2x2 row-stochastic matrix, got {self.readout_confusion}")
        object.__setattr__(self, "readout_confusion", tuple(tuple(float(x) for x in row) for row in conf))

    @classmethod
    def ideal(cls, **kw) -> "NoiseModel":
        return cls(cavity_decoherence=False, qubit_decoherence=False, readout_error=False, **kw)

    def with_toggles(self, cavity: bool, qubit: bool, readout: bool) -> "NoiseModel":
        return replace(self, cavity_decoherence=cavity, qubit_decoherence=qubit, readout_error=readout)

    @property
    def is_ideal(self) -> bool:
        return not (self.cavity_decoherence or self.qubit_decoherence or self.readout_error)

    def confusion(self) -> np.ndarray:
        return np.asarray(self.readout_confusion) if self.readout_error else np.eye(2)

    def to_json(self) -> dict:
        return {
            "cavity_T1": self.cavity_T1,
            "qubit_T1": self.qubit_T1,
            "qubit_Tphi": self.qubit_Tphi,
            "chi_qs": self.chi_qs,
            "gate_time": self.gate_time,
            "measure_time": self.measure_time,
            "readout_confusion": [list(r) for r in self.readout_confusion],
            "toggles": {
                "cavity_decoherence": self.cavity_decoherence,
                "qubit_decoherence": self.qubit_decoherence,
                "readout_error": self.readout_error,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseModel":
        kw = {k: v for k, v in obj.items() if k != "toggles"}
        if "readout_confusion" in kw:
            kw["readout_confusion"] = tuple(tuple(r) for r in kw["readout_confusion"])
        kw.update(obj.get("toggles", {}))
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    """One circuit per operation plus a shared POVM circuit.

    ``assignment[n]`` is the heralding effect index for operation ``n``
    (effect ``k`` sits at leaf index ``k + 1`` of the POVM circuit).
    """

    probe: np.ndarray
    channel_circuits: tuple
    povm_circuit: BinaryTreeCircuit
    shots: int = 50_000
    seed: int = 0
    assignment: tuple = ()
    priors: tuple = ()

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        d = self.povm_circuit.dim
        if np.asarray(self.probe).shape != (d,):
            raise ValueError(f"probe has shape {np.asarray(self.probe).shape}, POVM circuit dim is {d}")
        for c in self.channel_circuits:
            if c.dim != d:
                raise ValueError(f"channel circuit dim {c.dim} differs from POVM circuit dim {d}")
        if not self.assignment:
            object.__setattr__(self, "assignment", tuple(range(self.n_ops)))
        if sorted(self.assignment) != list(range(self.n_ops)):
            raise ValueError(f"assignment {self.assignment} is not a permutation of 0..{self.n_ops - 1}")

    @property
    def n_ops(self) -> int:
        return len(self.channel_circuits)

    @property
    def dim(self) -> int:
        return self.povm_circuit.dim

    def label_of(self, povm_bits: str):
        """Operation index heralded by a POVM leaf, or ``"I"``."""
        k = self.povm_circuit.outcome_map.get(povm_bits)
        if k is None or k == 0 or k - 1 >= self.n_ops:
            return INCONCLUSIVE
        return self.assignment.index(k - 1)

    def to_json(self) -> dict:
        return {
            "probe": encode_vector(self.probe),
            "channel_circuits": [c.to_json() for c in self.channel_circuits],
            "povm_circuit": self.povm_circuit.to_json(),
            "shots": self.shots,
            "seed": self.seed,
            "assignment": list(self.assignment),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentPlan":
        return cls(
            decode_vector(obj["probe"]),
            tuple(BinaryTreeCircuit.from_json(c) for c in obj["channel_circuits"]),
            BinaryTreeCircuit.from_json(obj["povm_circuit"]),
            int(obj.get("shots", 50_000)),
            int(obj.get("seed", 0)),
            tuple(obj.get("assignment", ())),
        )


@dataclass(frozen=True)
class ShotRecord:
    operation: int
    channel_bits: str
    povm_bits: str
    label: object


# -- elementary noise maps ----------------------------------------------------------

@lru_cache(maxsize=64)
def _damping_coeffs(gamma: float, d: int) -> tuple:
    """c_l[m, n] with E(rho)_{mn} = sum_l c_l[m, n] rho_{m+l, n+l}."""
    out = []
    m = np.arange(d)
    keep = 1.0 - gamma
    for ell in range(d):
        size = d - ell
        mm = m[:size]
        binom = np.array([math.comb(int(x) + ell, ell) for x in mm], dtype=float)
        amp = np.sqrt(binom) * keep ** (mm / 2.0)
        c = np.outer(amp, amp) * gamma**ell
        if ell > 0 and c.max() < 1e-300:
            break
        out.append(c)
    return tuple(out)


def damp(rho: np.ndarray, gamma: float) -> np.ndarray:
    """Truncated-oscillator amplitude damping, applied without Kraus matrices."""
    if gamma == 0.0:
        return rho
    d = rho.shape[0]
    out = np.zeros_like(rho)
    for ell, c in enumerate(_damping_coeffs(gamma, d)):
        out[: d - ell, : d - ell] += c * rho[ell:, ell:]
    return out


class _Timeline:
    """Noise applied to joint blocks ``{(a, b): system matrix}`` over a duration."""

    def __init__(self, noise: NoiseModel):
        self.noise = noise

    def cavity_gamma(self, t: float) -> float:
        return damping_gamma(t, self.noise.cavity_T1) if self.noise.cavity_decoherence else 0.0

    def qubit_factors(self, t: float) -> tuple[float, float]:
        if not self.noise.qubit_decoherence:
            return 0.0, 1.0
        g = damping_gamma(t, self.noise.qubit_T1)
        return g, math.sqrt(1 - g) * math.exp(-t / self.noise.qubit_Tphi)

    def idle(self, blocks: dict, t: float) -> dict:
        g_cav = self.cavity_gamma(t)
        if g_cav:
            blocks = {k: damp(v, g_cav) for k, v in blocks.items()}
        g_q, coh = self.qubit_factors(t)
        if g_q or coh != 1.0:
            r00, r01, r10, r11 = (blocks[k] for k in ((0, 0), (0, 1), (1, 0), (1, 1)))
            blocks = {(0, 0): r00 + g_q * r11, (0, 1): coh * r01, (1, 0): coh * r10, (1, 1): (1 - g_q) * r11}
        return blocks


def _to_blocks(joint: np.ndarray, d: int) -> dict:
    return {(a, b): joint[a * d:(a + 1) * d, b * d:(b + 1) * d] for a in (0, 1) for b in (0, 1)}


def _from_blocks(blocks: dict) -> np.ndarray:
    return np.block([[blocks[(0, 0)], blocks[(0, 1)]], [blocks[(1, 0)], blocks[(1, 1)]]])


def _layer_kind(u: np.ndarray, d: int) -> str:
    if np.abs(u - np.eye(2 * d)).max() < 1e-12:
        return "skip"
    if np.abs(u[d:, :d]).max() < 1e-12:
        return "unread"
    return "measured"


def run_layer(rho: np.ndarray, u: np.ndarray, noise: NoiseModel) -> dict:
    """One joint-unitary layer on a system matrix; returns ``{recorded bit: matrix}``."""
    d = rho.shape[0]
    kind = _layer_kind(u, d)
    if kind == "skip":
        return {"0": rho}
    tl = _Timeline(noise)
    zero = np.zeros_like(rho)
    half = 0.5 * noise.gate_time
    blocks = tl.idle({(0, 0): rho, (0, 1): zero, (1, 0): zero, (1, 1): zero}, half)
    joint = u @ _from_blocks(blocks) @ u.conj().T
    blocks = tl.idle(_to_blocks(joint, d), half)
    if kind == "unread":
        # ancilla returns to |0> ideally; any excitation is dropped by the reset
        return {"0": blocks[(0, 0)] + blocks[(1, 1)]}
    g_cav = tl.cavity_gamma(noise.measure_time)
    true = [damp(blocks[(a, a)], g_cav) for a in (0, 1)]
    conf = noise.confusion()
    return {str(r): conf[0, r] * true[0] + conf[1, r] * true[1] for r in (0, 1)}


def run_circuit(rho: np.ndarray, circuit: BinaryTreeCircuit, noise: NoiseModel, keep_nodes: bool = False) -> dict:
    """Propagate through every recorded branch of the tree.

    Returns ``{recorded leaf bits: unnormalized system matrix}``; with
    ``keep_nodes`` the intermediate prefixes are included too.
    """
    frontier = {"": rho}
    nodes = {"": rho}
    for _ in range(circuit.depth):
        nxt = {}
        for prefix, r in frontier.items():
            for bit, out in run_layer(r, circuit.unitaries[prefix], noise).items():
                nxt[prefix + bit] = out
        frontier = nxt
        nodes.update(nxt)
    return nodes if keep_nodes else frontier


def prep_unitary(probe) -> np.ndarray:
    """A system unitary whose first column is ``probe``."""
    v = np.asarray(probe, dtype=complex).reshape(-1, 1)
    return np.hstack([v, orthonormal_complement(v)])


def prepare_probe(probe, noise: NoiseModel) -> np.ndarray:
    probe = np.asarray(probe, dtype=complex)
    d = probe.size
    vac = np.zeros((d, d), dtype=complex)
    vac[0, 0] = 1.0
    u = np.kron(np.eye(2), prep_unitary(probe))
    return run_layer(vac, u, noise)["0"]


def circuit_map(circuit: BinaryTreeCircuit, noise: NoiseModel):
    """The noisy circuit as a linear map on system matrices, summed over branches."""
    def fn(rho):
        return sum(run_circuit(np.asarray(rho, dtype=complex), circuit, noise).values())
    return fn


# -- pipeline -------------------------------------------------------------------------

def _stage_noise(noise: NoiseModel, stage: str, noisy_stages) -> NoiseModel:
    return noise if stage in noisy_stages else NoiseModel.ideal()


def _operation_tree(plan: ExperimentPlan, n: int, noise: NoiseModel, noisy_stages) -> dict:
    """Exact weights for every recorded (channel bits, POVM bits) node of operation ``n``."""
    if set(noisy_stages) - set(STAGES):
        raise ValueError(f"unknown stages {set(noisy_stages) - set(STAGES)}; expected a subset of {STAGES}")
    rho = prepare_probe(plan.probe, _stage_noise(noise, "prep", noisy_stages))
    chan = run_circuit(rho, plan.channel_circuits[n], _stage_noise(noise, "channel", noisy_stages),
                       keep_nodes=True)
    depth_c = plan.channel_circuits[n].depth
    tree = {(c, ""): float(np.trace(m).real) for c, m in chan.items()}
    povm_noise = _stage_noise(noise, "povm", noisy_stages)
    for cbits, m in chan.items():
        if len(cbits) != depth_c:
            continue
        for pbits, out in run_circuit(m, plan.povm_circuit, povm_noise, keep_nodes=True).items():
            if pbits:
                tree[(cbits, pbits)] = float(np.trace(out).real)
    return tree


def _conditional_row(plan: ExperimentPlan, tree: dict) -> np.ndarray:
    n_ops = plan.n_ops
    depth_p = plan.povm_circuit.depth
    row = np.zeros(n_ops + 1)
    for (cbits, pbits), w in tree.items():
        if len(pbits) != depth_p:
            continue
        lab = plan.label_of(pbits)
        row[n_ops if lab == INCONCLUSIVE else lab] += w
    return row


def propagate_exact(plan: ExperimentPlan, noise: NoiseModel, noisy_stages: Iterable[str] = STAGES) -> DiscriminationReport:
    """Exact outcome probabilities P(label | operation) under ``noise``.

    ``noisy_stages`` restricts decoherence to some of prep/channel/povm; the
    others run ideally.
    """
    noisy_stages = tuple(noisy_stages)
    rows = [_conditional_row(plan, _operation_tree(plan, n, noise, noisy_stages)) for n in range(plan.n_ops)]
    priors = plan.priors or None
    return DiscriminationReport.from_conditional(np.array(rows), priors, plan.assignment)


def _sample_bits(rng: np.random.Generator, weights: dict, shots: int, depth: int, root: float) -> np.ndarray:
    """Draw ``shots`` bitstrings of length ``depth`` layer by layer from prefix weights."""
    prefixes = np.array([""] * shots, dtype=object)
    mass = np.full(shots, root)
    for _ in range(depth):
        u = rng.random(shots)
        w1 = np.array([weights.get(p + "1", 0.0) for p in prefixes])
        p1 = np.divide(w1, mass, out=np.zeros(shots), where=mass > 0)
        bit = u < p1
        prefixes = np.where(bit, prefixes + "1", prefixes + "0")
        mass = np.where(bit, w1, mass - w1)
    return prefixes


def sample_shots(plan: ExperimentPlan, noise: NoiseModel, noisy_stages: Iterable[str] = STAGES):
    """Seeded shot records and the empirical report built from them.

    Operation ``n`` draws from its own substream of ``SeedSequence(seed)``,
    so results do not depend on evaluation order.
    """
    noisy_stages = tuple(noisy_stages)
    streams = np.random.SeedSequence(plan.seed).spawn(plan.n_ops)
    records: list[ShotRecord] = []
    rows = []
    for n in range(plan.n_ops):
        rng = np.random.default_rng(streams[n])
        tree = _operation_tree(plan, n, noise, noisy_stages)
        cw = {c: w for (c, p), w in tree.items() if p == ""}
        depth_c = plan.channel_circuits[n].depth
        cbits = _sample_bits(rng, cw, plan.shots, depth_c, cw[""])
        pbits = np.empty(plan.shots, dtype=object)
        for c in sorted(set(cbits)):
            idx = np.flatnonzero(cbits == c)
            pw = {p: w for (cc, p), w in tree.items() if cc == c}
            pbits[idx] = _sample_bits(rng, pw, idx.size, plan.povm_circuit.depth, pw[""])
        row = np.zeros(plan.n_ops + 1)
        for c, p in zip(cbits, pbits):
            lab = plan.label_of(p)
            row[plan.n_ops if lab == INCONCLUSIVE else lab] += 1
            records.append(ShotRecord(n, c, p, lab))
        rows.append(row / plan.shots)
    report = DiscriminationReport.from_conditional(np.array(rows), plan.priors or None, plan.assignment)
    return records, report


def shots_csv(records: Sequence[ShotRecord]) -> str:
    """CSV text ``shot,channel_bits,povm_bits,label``; shots are numbered across operations in order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shot", "channel_bits", "povm_bits", "label"])
    for i, r in enumerate(records):
        w.writerow([i, r.channel_bits, r.povm_bits, r.label])
    return buf.getvalue()


# -- error budget ---------------------------------------------------------------------

BUDGET_CONFIGS = {
    "full": (True, True, True),
    "system-only": (True, False, False),
    "none": (False, False, False),
}


@dataclass(frozen=True)
class BudgetRow:
    config: str
    distance: float
    report: DiscriminationReport = field(repr=False, compare=False)


@dataclass(frozen=True)
class ErrorBudget:
    rows: tuple

    def distance(self, config: str) -> float:
        return next(r.distance for r in self.rows if r.config == config)

    def contributions(self) -> dict:
        """Per-source distance and share of the full-noise distance."""
        full = self.distance("full")
        system = self.distance("system-only")
        none = self.distance("none")
        parts = {"auxiliary qubit": full - system, "quantum system": system - none, "pulse imperfection": none}
        return {k: (v, (v / full if full > 0 else 0.0)) for k, v in parts.items()}


def error_budget(base_plan: ExperimentPlan, noise: NoiseModel, ideal_report: DiscriminationReport,
                 noisy_stages: Iterable[str] = STAGES) -> ErrorBudget:
    """Distance to the ideal report with all noise, cavity noise only, and no noise.

    "full" switches on every noise source including readout confusion,
    which is attributed to the ancilla.
    """
    rows = []
    for name, (cav, qub, ro) in BUDGET_CONFIGS.items():
        rep = propagate_exact(base_plan, noise.with_toggles(cav, qub, ro), noisy_stages)
        rows.append(BudgetRow(name, distance_D(rep, ideal_report), rep))
    return ErrorBudget(tuple(rows))


def probe_state_fidelity(probe, noise: NoiseModel) -> float:
    rho = prepare_probe(probe, noise)
    return state_fidelity(rho, projector(probe))


def circuit_chi(circuit: BinaryTreeCircuit, noise: NoiseModel) -> ChiMatrix:
    return chi_matrix(circuit_map(circuit, noise), circuit.dim)
