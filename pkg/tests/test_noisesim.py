import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from udops.channels import amplitude_damping, apply, damping_gamma, qubit_noise
from udops.dilation import compile_channel
from udops.experiments import block_pauli_setup, dephasing_setup, displacement_setup
from udops.metrics import distance_D
from udops.noisesim import (
    INCONCLUSIVE,
    ExperimentPlan,
    NoiseModel,
    ShotRecord,
    damp,
    error_budget,
    prep_unitary,
    probe_state_fidelity,
    propagate_exact,
    run_circuit,
    run_layer,
    sample_shots,
    shots_csv,
)
from conftest import random_channel, random_density, random_state


@pytest.fixture(scope="module")
def disp4():
    s = displacement_setup(4, 1.6)
    return s, s.plan(50_000, seed=11), s.ideal_report()


@pytest.fixture(scope="module")
def pauli05():
    s = block_pauli_setup(0.5)
    return s, s.plan(50_000, seed=5), s.ideal_report()


def test_noise_defaults_match_device():
    nm = NoiseModel()
    assert (nm.cavity_T1, nm.qubit_T1, nm.qubit_Tphi, nm.chi_qs) == (143.0, 30.0, 120.0, 1.90)
    assert nm.measure_time == 0.32
    assert nm.readout_confusion == ((0.999, 0.001), (0.011, 0.989))


@pytest.mark.parametrize("kw", [{"gate_time": 0}, {"qubit_T1": -1}, {"measure_time": 0},
                                {"readout_confusion": ((0.9, 0.2), (0.0, 1.0))},
                                {"readout_confusion": ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))}])
def test_noise_model_validation(kw):
    with pytest.raises(ValueError):
        NoiseModel(**kw)


def test_noise_model_json_roundtrip():
    nm = NoiseModel(gate_time=1.5, qubit_decoherence=False)
    obj = nm.to_json()
    assert obj["toggles"] == {"cavity_decoherence": True, "qubit_decoherence": False, "readout_error": True}
    assert NoiseModel.from_json(obj) == nm


@pytest.mark.parametrize("gamma", [0.0, 0.003, 0.2])
def test_fast_damping_matches_kraus(gamma, rng):
    rho = random_density(rng, 12)
    assert np.abs(damp(rho, gamma) - apply(amplitude_damping(gamma, 12), rho)).max() < 1e-13


def _kron_channel(qubit, cavity):
    return [np.kron(a, b) for a in qubit.kraus_ops for b in cavity.kraus_ops]


def reference_layer(rho, u, nm):
    """Textbook version: joint Kraus noise, projective readout, confusion, no shortcuts."""
    d = rho.shape[0]
    half = nm.gate_time / 2
    g_cav = damping_gamma(half, nm.cavity_T1) if nm.cavity_decoherence else 0.0
    qn = qubit_noise(half, nm.qubit_T1, nm.qubit_Tphi) if nm.qubit_decoherence else qubit_noise(0, 1, 1)
    noise = _kron_channel(qn, amplitude_damping(g_cav, d))
    joint = np.kron(np.diag([1.0, 0.0]), rho)
    joint = sum(k @ joint @ k.conj().T for k in noise)
    joint = u @ joint @ u.conj().T
    joint = sum(k @ joint @ k.conj().T for k in noise)
    g_m = damping_gamma(nm.measure_time, nm.cavity_T1) if nm.cavity_decoherence else 0.0
    true = [apply(amplitude_damping(g_m, d), joint[a * d:(a + 1) * d, a * d:(a + 1) * d]) for a in (0, 1)]
    conf = nm.confusion()
    return {str(r): conf[0, r] * true[0] + conf[1, r] * true[1] for r in (0, 1)}


@pytest.mark.parametrize("toggles", [(True, True, True), (True, False, False), (False, True, False),
                                     (False, False, True)])
def test_layer_matches_reference(toggles, rng):
    ch = random_channel(rng, 5, 4)
    u = compile_channel(ch).U_A
    nm = NoiseModel(gate_time=3.0).with_toggles(*toggles)
    rho = random_density(rng, 5)
    got, want = run_layer(rho, u, nm), reference_layer(rho, u, nm)
    for bit in "01":
        assert np.abs(got[bit] - want[bit]).max() < 1e-13


def test_identity_layer_skipped(rng):
    rho = random_density(rng, 3)
    out = run_layer(rho, np.eye(6), NoiseModel())
    assert list(out) == ["0"] and out["0"] is rho


def test_unread_layer_keeps_trace(rng):
    rho = random_density(rng, 4)
    u = np.kron(np.eye(2), prep_unitary(random_state(rng, 4)))
    out = run_layer(rho, u, NoiseModel())
    assert list(out) == ["0"]
    assert np.trace(out["0"]).real == pytest.approx(1, abs=1e-12)


def test_prep_unitary_first_column(rng):
    v = random_state(rng, 5)
    u = prep_unitary(v)
    assert np.allclose(u[:, 0], v) and np.allclose(u.conj().T @ u, np.eye(5))


@pytest.mark.parametrize("which", ["disp4", "pauli05"])
def test_trace_preserved_at_every_layer(which, request):
    setup, plan, _ = request.getfixturevalue(which)
    rho = np.outer(setup.probe, setup.probe.conj())
    nm = NoiseModel(gate_time=4.0)
    for circ in (*plan.channel_circuits, plan.povm_circuit):
        nodes = run_circuit(rho, circ, nm, keep_nodes=True)
        for level in range(circ.depth + 1):
            total = sum(np.trace(m).real for b, m in nodes.items() if len(b) == level)
            assert total == pytest.approx(1, abs=1e-9)


BUILTIN = [
    lambda: displacement_setup(4, 1.6),
    lambda: displacement_setup(6, 2.0),
    lambda: displacement_setup(2, 0.8),
    lambda: dephasing_setup(3),
    lambda: dephasing_setup(4),
    lambda: block_pauli_setup(0.1),
    lambda: block_pauli_setup(0.3),
    lambda: block_pauli_setup(0.5),
]


@pytest.mark.parametrize("make", BUILTIN)
def test_noiseless_pipeline_matches_born_rule(make):
    s = make()
    ideal = s.ideal_report()
    rep = propagate_exact(s.plan(), NoiseModel.ideal())
    assert np.abs(rep.conditional - ideal.conditional).max() < 1e-9


def test_block_pauli_decoherence_direction(pauli05):
    _, plan, _ = pauli05
    rep = propagate_exact(plan, NoiseModel())
    assert rep.p_err > 0 and rep.p_con < 0.5
    assert np.abs(rep.conditional.sum(axis=1) - 1).max() < 1e-9


def test_readout_only_error_bound(pauli05):
    _, plan, _ = pauli05
    rep = propagate_exact(plan, NoiseModel().with_toggles(False, False, True))
    assert 0 < rep.p_err <= 2 * (1 - 0.989)


def test_readout_toggle_removes_its_contribution(disp4):
    _, plan, _ = disp4
    off = propagate_exact(plan, NoiseModel(readout_error=False))
    clean = propagate_exact(plan, NoiseModel(readout_confusion=((1.0, 0.0), (0.0, 1.0))))
    assert np.abs(off.conditional - clean.conditional).max() < 1e-12


def test_noisy_stage_selection(pauli05):
    _, plan, ideal = pauli05
    assert distance_D(propagate_exact(plan, NoiseModel(), noisy_stages=()), ideal) < 1e-9
    with pytest.raises(ValueError):
        propagate_exact(plan, NoiseModel(), noisy_stages=("povm", "bogus"))


def test_error_budget_ordering(disp4):
    _, plan, ideal = disp4
    budget = error_budget(plan, NoiseModel(), ideal)
    full, system, none = (budget.distance(k) for k in ("full", "system-only", "none"))
    assert none <= 1e-9
    assert full > system > none
    parts = budget.contributions()
    assert sum(v for v, _ in parts.values()) == pytest.approx(full, abs=1e-12)
    assert sum(f for _, f in parts.values()) == pytest.approx(1, abs=1e-12)


def test_block_pauli_budget_measurement_stage(pauli05):
    _, plan, ideal = pauli05
    budget = error_budget(plan, NoiseModel(), ideal, noisy_stages=("povm",))
    assert budget.distance("full") > budget.distance("system-only") > budget.distance("none")
    assert budget.distance("none") <= 1e-9


def test_probe_preparation_infidelity():
    probe = block_pauli_setup(0.5).probe
    assert probe_state_fidelity(probe, NoiseModel.ideal()) == pytest.approx(1, abs=1e-12)
    infid = 1 - probe_state_fidelity(probe, NoiseModel())
    # only the half gate after the preparation unitary acts on (|0>+|3>)/sqrt2:
    # rho00 gains gamma^3/2, rho33 keeps (1-gamma)^3/2, rho03 keeps (1-gamma)^1.5/2
    g = damping_gamma(1.0, 143.0)
    fid = 0.5 * (0.5 + 0.5 * g**3 + 0.5 * (1 - g) ** 3 + (1 - g) ** 1.5)
    assert infid == pytest.approx(1 - fid, abs=1e-12)
    assert 0.005 <= infid <= 0.03


def test_vacuum_probe_needs_no_preparation():
    vac = np.zeros(6, dtype=complex)
    vac[0] = 1
    assert probe_state_fidelity(vac, NoiseModel()) == 1.0


def test_sampled_pcon_within_three_sigma(disp4):
    _, plan, ideal = disp4
    records, rep = sample_shots(plan, NoiseModel.ideal())
    assert len(records) == 4 * 50_000
    sigma = math.sqrt(ideal.p_con * (1 - ideal.p_con) / 50_000)
    assert abs(rep.p_con - ideal.p_con) <= 3 * sigma
    assert abs(rep.p_err) < 1e-15


def test_sampled_cells_within_five_sigma(pauli05):
    _, plan, _ = pauli05
    nm = NoiseModel(gate_time=3.0)
    exact = propagate_exact(plan, nm)
    _, rep = sample_shots(plan, nm)
    sigma = np.sqrt(exact.conditional * (1 - exact.conditional) / plan.shots)
    assert np.all(np.abs(rep.conditional - exact.conditional) <= 5 * sigma + 1e-12)


def test_sampling_deterministic(pauli05):
    _, plan, _ = pauli05
    small = replace(plan, shots=500)
    a, _ = sample_shots(small, NoiseModel())
    b, _ = sample_shots(small, NoiseModel())
    assert a == b
    c, _ = sample_shots(replace(small, seed=small.seed + 1), NoiseModel())
    assert a != c


def test_single_shot(pauli05):
    _, plan, _ = pauli05
    records, rep = sample_shots(replace(plan, shots=1), NoiseModel())
    assert len(records) == 3
    assert set(np.unique(rep.conditional)) <= {0.0, 1.0}
    assert np.all(rep.conditional.sum(axis=1) == 1)


def test_shot_records_consistent_with_outcome_map(disp4):
    _, plan, _ = disp4
    records, _ = sample_shots(replace(plan, shots=300), NoiseModel(gate_time=4.0))
    for r in records:
        assert set(r.channel_bits + r.povm_bits) <= {"0", "1"}
        assert len(r.povm_bits) == plan.povm_circuit.depth
        k = plan.povm_circuit.outcome_map[r.povm_bits]
        if k in (None, 0):
            assert r.label == INCONCLUSIVE
        else:
            assert plan.assignment[r.label] == k - 1


def test_shots_csv_format():
    text = shots_csv([ShotRecord(0, "00", "01", 1), ShotRecord(0, "00", "00", "I")])
    assert text == "shot,channel_bits,povm_bits,label\n0,00,01,1\n1,00,00,I\n"


def test_plan_validation(pauli05):
    _, plan, _ = pauli05
    with pytest.raises(ValueError):
        replace(plan, shots=0)
    with pytest.raises(ValueError):
        replace(plan, probe=np.ones(3) / math.sqrt(3))
    with pytest.raises(ValueError):
        replace(plan, assignment=(0, 0, 1))
    other = compile_channel(random_channel(np.random.default_rng(0), 3, 2))
    with pytest.raises(ValueError):
        replace(plan, channel_circuits=(other,) * 3)


def test_plan_json_roundtrip(pauli05):
    _, plan, _ = pauli05
    back = ExperimentPlan.from_json(plan.to_json())
    assert back.shots == plan.shots and back.seed == plan.seed and back.assignment == plan.assignment
    a = propagate_exact(plan, NoiseModel())
    b = propagate_exact(back, NoiseModel())
    assert np.abs(a.conditional - b.conditional).max() < 1e-14


@settings(max_examples=10, deadline=None)
@given(st.floats(0.5, 6.0))
def test_budget_monotone_in_gate_time(gt):
    s = block_pauli_setup(0.5)
    plan, ideal = s.plan(), s.ideal_report()
    short = distance_D(propagate_exact(plan, NoiseModel(gate_time=gt)), ideal)
    longer = distance_D(propagate_exact(plan, NoiseModel(gate_time=gt * 1.5)), ideal)
    assert longer > short
