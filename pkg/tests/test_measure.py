import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_vqa.measure import (
    Exact,
    Shots,
    circuit_count,
    estimate_expectation,
    plan_expectation,
    plan_expectation_squared_dirichlet,
    sign_pattern,
    v_rotation,
)
from poisson_vqa.poisson import PoissonSpec, UnsupportedSpecError, build_matrix, build_rhs, solve_exact, StepFunction
from poisson_vqa.qsim import basis_state, run_circuit

S2 = 1 / math.sqrt(2)


def random_states(rng, q, count):
    psi = rng.normal(size=(count, 2**q))
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def test_v_rotation_k1():
    v = v_rotation(1, 1)
    assert [g.kind for g in v.gates] == ["H"]
    assert np.allclose(run_circuit(v, basis_state("1")), [S2, -S2])


@pytest.mark.parametrize("t,sign", [(0, 1), (1, -1)])
def test_v_rotation_k2(t, sign):
    out = run_circuit(v_rotation(2, 2), basis_state(f"{t}1"))
    assert np.allclose(out, (basis_state("01") + sign * basis_state("10")) * S2)


def test_v_rotation_targets_window_end():
    # k=1 on a 3-qubit register acts on its last qubit
    assert v_rotation(3, 1).gates[0].qubits == (2,)


def test_sign_patterns():
    assert sign_pattern(1) == {"0": 1, "1": -1}
    pat = sign_pattern(3)
    assert pat["010"] == 1 and pat["110"] == -1
    assert pat.get("111", 0) == 0


@pytest.mark.parametrize("spec,count", [
    (PoissonSpec(2, 4, ("D", "D")), 4),
    (PoissonSpec(2, 4, ("N", "D")), 5),
    (PoissonSpec(1, 3, ("P",)), 3),
    (PoissonSpec(3, 3, ("D", "D", "D")), 3),
    (PoissonSpec(2, 5, ("N", "D")), 6),
    (PoissonSpec(1, 1, ("D",)), 1),
])
def test_circuit_counts(spec, count):
    assert circuit_count(spec) == count


def test_circuit_count_three_dimensional_n4():
    # plan construction only; the operator is never formed densely here
    assert circuit_count(PoissonSpec(3, 4, ("D", "D", "D"))) == 4


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_reconstruction_matches_dense(d, n):
    rng = np.random.default_rng(100 * d + n)
    for _ in range(3):
        bcs = tuple(rng.choice(["D", "N", "P"], d))
        spec = PoissonSpec(d, n, bcs)
        op = plan_expectation(spec).operator()
        assert np.max(np.abs(op - build_matrix(spec))) < 1e-12


def test_uniform_state_d1_n2():
    psi = np.full(4, 0.5)
    assert estimate_expectation(psi, plan_expectation(PoissonSpec(1, 2, ("D",)))) == pytest.approx(0.5)


def test_basis_state_nd():
    spec = PoissonSpec(2, 1, ("N", "D"))
    assert estimate_expectation(basis_state("00"), plan_expectation(spec)) == pytest.approx(3.0)


@pytest.mark.parametrize("bcs", ["DD", "ND", "PN", "PP"])
def test_exact_solution_quadratic_form(bcs):
    spec = PoissonSpec.from_string(3, bcs)
    a = build_matrix(spec)
    b = build_rhs(StepFunction(2, 3)).vector
    if spec.singular:
        u = random_states(np.random.default_rng(0), 6, 1)[0]
    else:
        u = solve_exact(spec, b).unit
    assert estimate_expectation(u, plan_expectation(spec)) == pytest.approx(u @ a @ u, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.text("DNP", min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_batched_estimates_match_dense(n, bcs, seed):
    spec = PoissonSpec.from_string(n, bcs)
    psi = random_states(np.random.default_rng(seed), spec.num_qubits, 20)
    a = build_matrix(spec)
    est = estimate_expectation(psi, plan_expectation(spec))
    assert np.allclose(est, np.einsum("bi,ij,bj->b", psi, a, psi), atol=1e-10)


def test_squared_plan_count():
    assert plan_expectation_squared_dirichlet(PoissonSpec(2, 4, ("D", "D"))).circuit_count == 24


@pytest.mark.parametrize("n", [1, 2, 3])
def test_squared_plan_matches_dense(n):
    spec = PoissonSpec(2, n, ("D", "D"))
    sq = plan_expectation_squared_dirichlet(spec)
    a = build_matrix(spec)
    psi = random_states(np.random.default_rng(n), 2 * n, 10)
    for v in psi:
        assert sq.evaluate(v) == pytest.approx(v @ a @ a @ v, abs=1e-10)


def test_squared_plan_rejects_other_boundaries():
    with pytest.raises(UnsupportedSpecError):
        plan_expectation_squared_dirichlet(PoissonSpec(2, 2, ("N", "D")))


def test_shot_estimate_error_shrinks():
    spec = PoissonSpec.from_string(2, "ND")
    plan = plan_expectation(spec)
    psi = random_states(np.random.default_rng(7), 4, 1)[0]
    exact = estimate_expectation(psi, plan, Exact())
    rms = []
    for shots in (2**10, 2**14):
        errs = [estimate_expectation(psi, plan, Shots(shots, seed)) - exact for seed in range(40)]
        rms.append(math.sqrt(np.mean(np.square(errs))))
    # sixteen times the shots should cut the spread about four times
    assert rms[1] < rms[0] / 2.5
    assert rms[1] < 0.1


def test_shot_estimate_is_unbiased():
    spec = PoissonSpec.from_string(2, "DD")
    plan = plan_expectation(spec)
    psi = random_states(np.random.default_rng(8), 4, 1)[0]
    exact = estimate_expectation(psi, plan)
    est = np.array([estimate_expectation(psi, plan, Shots(4096, s)) for s in range(400)])
    assert abs(est.mean() - exact) < 5 * est.std(ddof=1) / math.sqrt(len(est))


def test_shots_reproducible():
    plan = plan_expectation(PoissonSpec.from_string(2, "ND"))
    psi = random_states(np.random.default_rng(9), 4, 1)[0]
    assert estimate_expectation(psi, plan, Shots(1000, 3)) == estimate_expectation(psi, plan, Shots(1000, 3))
    with pytest.raises(ValueError):
        Shots(0)
