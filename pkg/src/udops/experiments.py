"""Built-in experiment families and their reference measurements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channels import (
    DEFAULT_PAULI_PAIRS,
    BlockPauliParams,
    KrausChannel,
    block_dephasing,
    block_pauli,
    unitary_channel,
)
from .dilation import compile_channel, compile_povm
from .discrimination import (
    DiscriminationReport,
    PovmSet,
    SupportAnalysis,
    build_symmetric_povm,
    evaluate_povm,
    ud_feasibility,
)
from .hilbert import DEFAULT_TRUNCATION, displacement_operator, fock_state, symmetric_coherent_states
from .noisesim import ExperimentPlan

# Partitions whose dephasing channels are discriminated with a uniform probe.
DEPHASING_PARTITIONS = {
    3: (((0, 1), (2,)), ((0,), (1, 2))),
    4: (((0,), (1, 2, 3)), ((0, 1), (2, 3)), ((0, 1, 2), (3,))),
}

PAULI_KINDS = ("X", "Y", "Z")


@dataclass(frozen=True, eq=False)
class Setup:
    """Channels, probe and UD measurement for one parameter point."""

    label: str
    channels: tuple
    probe: np.ndarray
    povm: PovmSet | None
    analysis: SupportAnalysis | None = None

    @property
    def feasible(self) -> bool:
        return self.povm is not None

    def ideal_report(self, priors=None) -> DiscriminationReport:
        if self.povm is None:
            raise ValueError(f"{self.label}: operations are not unambiguously distinguishable with this probe")
        return evaluate_povm(self.povm, self.channels, self.probe, priors)

    def plan(self, shots: int = 50_000, seed: int = 0) -> ExperimentPlan:
        ideal = self.ideal_report()
        return ExperimentPlan(
            self.probe,
            tuple(compile_channel(c) for c in self.channels),
            compile_povm(self.povm),
            shots=shots,
            seed=seed,
            assignment=ideal.assignment,
        )


def displacement_channels(n_ops: int, alpha_mag: float, d_trunc: int = DEFAULT_TRUNCATION) -> list[KrausChannel]:
    phases = np.exp(2j * np.pi * np.arange(n_ops) / n_ops)
    return [
        unitary_channel(displacement_operator(alpha_mag * z, d_trunc), label=f"D{k}")
        for k, z in enumerate(phases)
    ]


def displacement_setup(n_ops: int, alpha_mag: float, d_trunc: int = DEFAULT_TRUNCATION) -> Setup:
    """N phase-symmetric displacements probed with vacuum."""
    if alpha_mag <= 0:
        raise ValueError("alpha must be positive: identical displacements cannot be told apart")
    chans = displacement_channels(n_ops, alpha_mag, d_trunc)
    povm = build_symmetric_povm(symmetric_coherent_states(alpha_mag, n_ops, d_trunc))
    return Setup(f"displacement N={n_ops} alpha={alpha_mag:g}", tuple(chans), fock_state(0, d_trunc), povm)


def _from_support(label: str, chans: Sequence[KrausChannel], probe) -> Setup:
    an = ud_feasibility(chans, probe)
    return Setup(label, tuple(chans), np.asarray(probe, dtype=complex), an.povm, an)


def dephasing_channels(d: int, partitions=None) -> list[KrausChannel]:
    parts = DEPHASING_PARTITIONS[d] if partitions is None else partitions
    return [block_dephasing(p, d, label=f"P{k}") for k, p in enumerate(parts)]


def dephasing_setup(d: int, partitions=None, probe=None) -> Setup:
    if partitions is None and d not in DEPHASING_PARTITIONS:
        raise ValueError(f"no built-in partitions for d={d}; choose from {sorted(DEPHASING_PARTITIONS)}")
    probe = np.full(d, 1 / np.sqrt(d), dtype=complex) if probe is None else probe
    return _from_support(f"block dephasing d={d}", dephasing_channels(d, partitions), probe)


def block_pauli_probe() -> np.ndarray:
    v = np.zeros(4, dtype=complex)
    v[0] = v[3] = 1 / np.sqrt(2)
    return v


def block_pauli_channels(eta: float, pairs=DEFAULT_PAULI_PAIRS) -> list[KrausChannel]:
    return [block_pauli(BlockPauliParams(eta, k, pairs), 4, label=k) for k in PAULI_KINDS]


def block_pauli_setup(eta: float, probe=None, pairs=DEFAULT_PAULI_PAIRS) -> Setup:
    probe = block_pauli_probe() if probe is None else probe
    return _from_support(f"block Pauli eta={eta:g}", block_pauli_channels(eta, pairs), probe)


def custom_setup(channels: Sequence[KrausChannel], probe, label: str = "custom") -> Setup:
    return _from_support(label, channels, probe)


# -- reference measurements ---------------------------------------------------------

def _pair_block(d: int, i: int, j: int, sign: float) -> np.ndarray:
    m = np.zeros((d, d), dtype=complex)
    m[i, i] = m[j, j] = 1.0
    m[i, j] = m[j, i] = sign
    return m


def reference_dephasing_povm(d: int) -> PovmSet:
    """Hand-derived UD measurement for the uniform-probe dephasing sets.

    Effects are listed in the order they were written down, which is not
    necessarily the heralding order of ``dephasing_channels(d)``.
    """
    if d == 3:
        effects = [_pair_block(3, 0, 1, -1) / 3, _pair_block(3, 1, 2, -1) / 3]
    elif d == 4:
        effects = [_pair_block(4, k, k + 1, -1) / (2 + np.sqrt(2)) for k in range(3)]
    else:
        raise ValueError(f"no reference measurement for d={d}")
    return PovmSet.from_effects(effects).validate()


def reference_block_pauli_povm() -> PovmSet:
    """Effects heralding Z, X, Y (in that order) for the (|0>+|3>)/sqrt2 probe."""
    effects = [_pair_block(4, 0, 3, -1) / 2, _pair_block(4, 1, 2, +1) / 2, _pair_block(4, 1, 2, -1) / 2]
    return PovmSet.from_effects(effects).validate()
