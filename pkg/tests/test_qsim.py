import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_vqa.qsim import (
    Circuit,
    CircuitError,
    Gate,
    NoiseModel,
    apply_gate,
    apply_noisy_gate,
    basis_state,
    circuit_unitary,
    density_matrix,
    depolarize,
    expectation_diagonal,
    marginal,
    probabilities,
    run_circuit,
    run_noisy,
    sample,
    zero_state,
)

S2 = 1 / math.sqrt(2)


def random_circuit(rng, n, length=25):
    circ = Circuit(n)
    one = ["RY", "RZ", "RX", "H", "X", "Z", "T", "TDG"]
    for _ in range(length):
        if n > 1 and rng.random() < 0.4:
            a, b = rng.choice(n, 2, replace=False)
            kind = rng.choice(["CZ", "CNOT", "CRY"])
            angle = rng.uniform(-3, 3) if kind == "CRY" else None
            circ.add(kind, int(a), int(b), angle=angle)
        else:
            kind = one[rng.integers(len(one))]
            angle = rng.uniform(-3, 3) if kind in ("RY", "RZ", "RX") else None
            circ.add(kind, int(rng.integers(n)), angle=angle)
    return circ


def test_hadamard_on_zero():
    out = apply_gate(zero_state(1), Gate("H", (0,)))
    assert np.allclose(out, [S2, S2])


def test_ry_pi_on_zero_is_one():
    out = apply_gate(zero_state(1), Gate("RY", (0,), math.pi))
    assert np.allclose(out, [0, 1])
    assert out.dtype == np.float64


def test_cz_negates_11():
    psi = np.full(4, 0.5)
    out = apply_gate(psi, Gate("CZ", (0, 1)))
    assert np.allclose(out, [0.5, 0.5, 0.5, -0.5])


def test_basis_index_convention():
    # qubit 0 is the most significant bit
    out = apply_gate(zero_state(3), Gate("X", (0,)))
    assert out[0b100] == 1.0
    assert np.array_equal(basis_state("011"), np.eye(8)[3])


def test_empty_circuit_is_identity():
    psi = np.random.default_rng(0).normal(size=8)
    assert np.array_equal(run_circuit(Circuit(3), psi), psi)


def test_bell_preparation():
    out = run_circuit(Circuit(2).h(0).cnot(0, 1))
    assert np.allclose(out, [S2, 0, 0, S2])


def test_cnot_control_below_target():
    # control on the less significant qubit
    out = run_circuit(Circuit(2).x(1).cnot(1, 0))
    assert np.allclose(out, basis_state("11"))


def test_invalid_gates_rejected():
    with pytest.raises(CircuitError):
        Gate("CZ", (1, 1))
    with pytest.raises(CircuitError):
        Gate("RY", (0,), math.inf)
    with pytest.raises(CircuitError):
        Circuit(2).h(2)
    with pytest.raises(CircuitError):
        apply_gate(zero_state(2), Gate("H", (3,)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_unitarity_and_inverse(n, seed):
    rng = np.random.default_rng(seed)
    circ = random_circuit(rng, n)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    psi /= np.linalg.norm(psi)
    out = run_circuit(circ, psi)
    assert abs(np.linalg.norm(out) - 1) < 1e-10
    back = run_circuit(circ.inverse(), out)
    assert np.allclose(back, psi, atol=1e-10)


def test_batched_states_match_single():
    rng = np.random.default_rng(1)
    circ = random_circuit(rng, 4, 40)
    batch = rng.normal(size=(5, 16))
    u = circuit_unitary(circ)
    assert np.allclose(run_circuit(circ, batch), batch @ u.T)


def test_sample_deterministic_state():
    assert sample(zero_state(1), 100, seed=3) == {"0": 100}


def test_sample_plus_state_binomial_bound():
    shots = 2**17
    counts = sample(np.array([S2, S2]), shots, seed=11)
    freq = counts.get("1", 0) / shots
    assert abs(freq - 0.5) < 5 * math.sqrt(0.25 / shots)


def test_sample_reproducible_and_validated():
    psi = np.random.default_rng(2).normal(size=8)
    psi /= np.linalg.norm(psi)
    assert sample(psi, 1000, 5) == sample(psi, 1000, 5)
    assert sum(sample(psi, 1000, 5).values()) == 1000
    with pytest.raises(ValueError):
        sample(psi, 0, 5)


def test_expectation_diagonal_examples():
    psi = np.random.default_rng(3).normal(size=8)
    psi /= np.linalg.norm(psi)
    assert expectation_diagonal(psi, lambda z: 1) == pytest.approx(1.0)
    plus = np.array([S2, S2])
    assert expectation_diagonal(plus, lambda z: 1 if z == "0" else -1) == pytest.approx(0.0, abs=1e-15)
    uniform = np.full(4, 0.5)
    assert expectation_diagonal(uniform, lambda z: 1 if z.endswith("0") else 0) == pytest.approx(0.5)


def test_expectation_diagonal_shots_converges():
    psi = np.random.default_rng(4).normal(size=8)
    psi /= np.linalg.norm(psi)
    signs = np.array([1, -1, 0, 1, -1, 1, 0, -1], dtype=float)
    exact = expectation_diagonal(psi, signs)
    est = expectation_diagonal(psi, signs, shots=2**16, seed=0)
    assert abs(est - exact) < 5 / math.sqrt(2**16)


def test_noiseless_density_matches_statevector():
    rng = np.random.default_rng(5)
    circ = random_circuit(rng, 4, 40)
    psi = run_circuit(circ, zero_state(4, complex))
    rho = run_noisy(circ, density_matrix(zero_state(4)), NoiseModel())
    assert np.allclose(rho, np.outer(psi, psi.conj()), atol=1e-10)
    assert np.allclose(probabilities(rho), np.abs(psi) ** 2, atol=1e-10)


def test_full_depolarizing_single_qubit():
    rho = apply_noisy_gate(density_matrix(zero_state(1)), Gate("X", (0,)), NoiseModel(p1=1.0))
    assert np.allclose(rho, np.eye(2) / 2)


def test_two_qubit_depolarizing_keeps_density_invariants():
    rho = apply_noisy_gate(density_matrix(zero_state(2)), Gate("CNOT", (0, 1)), NoiseModel(p2=0.01))
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_joint_depolarizing_on_two_qubits_is_maximally_mixed_at_p1():
    psi = run_circuit(Circuit(3).h(0).cnot(0, 1).h(2))
    rho = depolarize(density_matrix(psi), (0, 1), 1.0)
    # the untouched qubit keeps its state, the pair becomes I/4
    expected = np.kron(np.eye(4) / 4, np.full((2, 2), 0.5))
    assert np.allclose(rho, expected)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1), st.floats(0, 1))
def test_noisy_gates_preserve_trace_and_hermiticity(seed, p1, p2):
    rng = np.random.default_rng(seed)
    circ = random_circuit(rng, 3, 15)
    rho = run_noisy(circ, density_matrix(zero_state(3)), NoiseModel(p1, p2))
    assert abs(np.trace(rho) - 1) < 1e-10
    assert np.allclose(rho, rho.conj().T, atol=1e-10)
    assert np.linalg.eigvalsh(rho).min() > -1e-9


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(p1=-0.1)
    with pytest.raises(ValueError):
        NoiseModel(p2=1.5)


def test_marginal():
    probs = probabilities(run_circuit(Circuit(3).h(0).cnot(0, 2)))
    assert np.allclose(marginal(probs, [0, 2], 3), [0.5, 0, 0, 0.5])
    assert np.allclose(marginal(probs, [1], 3), [1, 0])
