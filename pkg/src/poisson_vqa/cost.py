"""Cost ``E(theta) = -(Re<b|psi>)^2 / (2 <psi|A|psi>)``, norm factor and analytic gradient.

Every quantity is read off a measurement circuit:

* ``(Re<b|psi>)^2`` is the all-zeros probability after undoing the RHS
  preparation (times ``2(beta0^2 + beta1^2)`` for the ancilla-mixture RHS);
* ``<psi|A|psi>`` comes from the operator-measurement plan;
* ``Re<b|psi(theta)> Re<b|psi(theta + pi e_i)>`` follows from three squared
  overlaps, one of them on the ancilla-extended derivative state;
* ``Re<psi|A|psi(theta + pi e_i)>`` is ``<X (x) A>`` on that derivative state.

In exact mode the circuit output distributions are used as they are; in shot
mode they are replaced by sampled histograms; in noisy mode every circuit is
run gate by gate on a density matrix with depolarizing noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ansatz import (
    AnsatzSpec,
    ansatz_state,
    build_ansatz,
    build_derivative_state,
    derivative_states,
    shifted_states,
)
from .measure import Exact, MeasurementPlan, Noisy, Shots, plan_expectation
from .poisson import (
    Device,
    Explicit,
    PoissonSpec,
    RhsSpec,
    RhsVector,
    StepFunction,
    UnsupportedSpecError,
    build_matrix,
    build_rhs,
)
from .qsim import (
    MAX_DENSITY_QUBITS,
    Circuit,
    Gate,
    density_matrix,
    num_qubits_of,
    probabilities,
    run_circuit,
    run_noisy,
    zero_state,
)

DENOMINATOR_FLOOR = 1e-6


class NoEfficientCircuitError(ValueError):
    """The RHS has no compact preparation circuit; use exact-overlap mode."""


class EvaluationError(ArithmeticError):
    """A shot-mode estimate was unusable (e.g. non-positive denominator)."""


# ---------------------------------------------------------------- RHS preparations

@dataclass
class DirectUnitary:
    """``U_b |0..0> = |b>`` on the system register."""

    circuit: Circuit
    physical: bool = True

    @property
    def scale(self) -> float:
        return 1.0

    @property
    def ancillas(self) -> int:
        return 0


@dataclass
class AncillaMixture:
    """``|b'> = cos(eta)|0>|b0> + sin(eta)|1>|b1>`` on ancilla + system."""

    circuit: Circuit
    eta: float
    beta0: float
    beta1: float
    physical: bool = True

    @property
    def scale(self) -> float:
        return 2.0 * (self.beta0**2 + self.beta1**2)

    @property
    def ancillas(self) -> int:
        return 1


@dataclass
class ExactOverlap:
    """No circuit: overlaps are taken directly from the vector (non-physical)."""

    unit: np.ndarray
    physical: bool = False

    @property
    def scale(self) -> float:
        return 1.0

    @property
    def ancillas(self) -> int:
        return 0


RhsPreparation = DirectUnitary | AncillaMixture | ExactOverlap


def step_rhs_circuit(d: int, n: int) -> Circuit:
    circ = Circuit(d * n)
    for q in range(d * n):
        circ.h(q)
    for axis in range(d):
        circ.z(axis * n)
    return circ


def device_rhs_circuit(n: int, eta: float) -> Circuit:
    """Prepares ``|b'>`` on qubit 0 (ancilla) plus ``2n`` system qubits with ``O(n)`` gates.

    The ``|+>`` factors shared by both branches get a plain H; qubits that are
    ``|+>`` only in the ancilla-1 branch get a controlled RY(pi/2). The CNOT/X
    pattern turning ``|+00>`` into ``(|011>+|100>)/sqrt2`` leaves ``|+++>``
    untouched, so it needs no control.
    """
    if n < 3:
        raise UnsupportedSpecError("device RHS needs n >= 3 qubits per axis")
    x1 = [1 + j for j in range(n)]
    x2 = [1 + n + j for j in range(n)]
    circ = Circuit(1 + 2 * n).ry(0, 2 * eta)
    circ.h(x1[0])
    for q in x1[3:]:
        circ.h(q)
    circ.cry(0, x1[1], math.pi / 2).cry(0, x1[2], math.pi / 2)
    circ.cnot(x1[0], x1[1]).cnot(x1[0], x1[2]).x(x1[1]).x(x1[2])
    for q in x2:
        circ.cry(0, q, math.pi / 2)
    return circ


def prepare_rhs(rhs: RhsSpec) -> DirectUnitary | AncillaMixture:
    if isinstance(rhs, StepFunction):
        return DirectUnitary(step_rhs_circuit(rhs.d, rhs.n))
    if isinstance(rhs, Device):
        vec = build_rhs(rhs)
        return AncillaMixture(device_rhs_circuit(rhs.n, vec.eta), vec.eta, vec.beta0, vec.beta1)
    if isinstance(rhs, Explicit):
        raise NoEfficientCircuitError(
            "explicit RHS vectors have no efficient preparation circuit; use exact-overlap mode")
    raise TypeError(f"unsupported RHS spec {rhs!r}")


def rhs_preparation(rhs: RhsSpec) -> RhsPreparation:
    """:func:`prepare_rhs`, falling back to :class:`ExactOverlap` for explicit vectors."""
    try:
        return prepare_rhs(rhs)
    except NoEfficientCircuitError:
        return ExactOverlap(build_rhs(rhs).unit)


def _plus_kron(states: np.ndarray, lead: int) -> np.ndarray:
    """Insert a ``|+>`` qubit after the first ``lead`` qubits of each state."""
    rows, dim = states.shape
    head = 2**lead
    t = states.reshape(rows, head, 1, dim // head)
    return (np.broadcast_to(t, (rows, head, 2, dim // head)) / math.sqrt(2)).reshape(rows, 2 * dim)


def overlap_probability(prep: RhsPreparation, states: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Exact all-zeros probability of the numerator circuit for each row of ``states``.

    ``states`` holds system states (or, with ``derivative``, ancilla-extended
    derivative states whose ancilla is measured in the X basis). The returned
    value times ``prep.scale`` is ``<b|phi>^2`` with ``phi`` the system state
    (or ``(psi + psi')/2``).
    """
    states = np.atleast_2d(states)
    if isinstance(prep, ExactOverlap):
        if derivative:
            half = states.shape[1] // 2
            states = (states[:, :half] + states[:, half:]) / math.sqrt(2)
        return (states @ prep.unit) ** 2
    lead = 1 if derivative else 0
    width = num_qubits_of(states) + prep.ancillas
    circ = Circuit(width)
    if derivative:
        circ.h(0)
    if isinstance(prep, AncillaMixture):
        states = _plus_kron(states, lead)
    circ.extend(prep.circuit.inverse(), lead)
    out = run_circuit(circ, states)
    return np.abs(out[:, 0]) ** 2


def numerator_circuit(prep: DirectUnitary | AncillaMixture, ansatz_circuit: Circuit) -> Circuit:
    """The full numerator circuit (ansatz, then inverse RHS preparation) for audit/export."""
    width = ansatz_circuit.num_qubits + prep.ancillas
    circ = Circuit(width)
    if prep.ancillas:
        circ.h(0)
    circ.extend(ansatz_circuit, prep.ancillas)
    return circ.extend(prep.circuit.inverse())


# ---------------------------------------------------------------- evaluation

@dataclass
class CostEvaluation:
    value: float
    numerator: float
    denominator: float
    r: float
    circuits_used: int
    shots_used: int


@dataclass
class _Counter:
    circuits: int = 0
    shots: int = 0


@dataclass
class VQAProblem:
    """One Poisson instance with its RHS preparation, ansatz and estimation mode.

    ``seed_policy`` controls shot-mode randomness: ``"iteration"`` reuses one
    seed stream per optimizer iteration (set through :meth:`advance`),
    ``"fresh"`` draws new samples on every evaluation, ``"fixed"`` reuses the
    same stream throughout.
    """

    spec: PoissonSpec
    rhs: RhsSpec
    ansatz: AnsatzSpec
    mode: Exact | Shots | Noisy = field(default_factory=Exact)
    seed_policy: str = "iteration"

    def __post_init__(self):
        if self.ansatz.width != self.spec.num_qubits:
            raise UnsupportedSpecError(
                f"ansatz width {self.ansatz.width} != system qubits {self.spec.num_qubits}")
        self.rhs_vector: RhsVector = build_rhs(self.rhs)
        if self.rhs_vector.vector.shape != (2**self.spec.num_qubits,):
            raise UnsupportedSpecError("RHS length does not match the grid")
        if self.seed_policy not in ("iteration", "fresh", "fixed"):
            raise ValueError(f"unknown seed policy {self.seed_policy!r}")
        self.prep = rhs_preparation(self.rhs)
        if isinstance(self.mode, Noisy):
            if not self.prep.physical:
                raise NoEfficientCircuitError("noisy mode needs a preparation circuit for the RHS")
            width = self.spec.num_qubits + 1 + self.prep.ancillas
            if width > MAX_DENSITY_QUBITS:
                raise UnsupportedSpecError(
                    f"noisy gradient circuits need {width} qubits, density budget is {MAX_DENSITY_QUBITS}")
        self.plan: MeasurementPlan = plan_expectation(self.spec)
        self.lifted: MeasurementPlan = self.plan.with_x_ancilla()
        self.counter = _Counter()
        self._epoch = 0
        self._calls = 0

    # ------------------------------------------------------------ randomness
    @property
    def shots(self) -> int | None:
        return self.mode.count if isinstance(self.mode, Shots) else None

    def advance(self, iteration: int) -> None:
        """Optimizer hook: start the seed stream of a new iteration."""
        if self.seed_policy == "iteration":
            self._epoch = iteration

    def _rng(self, purpose: int) -> np.random.Generator:
        if self.seed_policy == "fresh":
            self._calls += 1
            epoch = self._calls
        elif self.seed_policy == "fixed":
            epoch = 0
        else:
            epoch = self._epoch
        return np.random.default_rng([self.mode.seed, epoch, purpose])

    # ------------------------------------------------------------ estimators
    def _overlap(self, states, rng, derivative=False, shots=None):
        p = overlap_probability(self.prep, states, derivative)
        self.counter.circuits += len(p)
        if shots is not None:
            p = rng.binomial(shots, np.clip(p, 0.0, 1.0)) / shots
            self.counter.shots += shots * len(p)
        return self.prep.scale * p

    def _plan(self, states, plan: MeasurementPlan, rng, shots=None):
        states = np.atleast_2d(states)
        total = np.full(states.shape[0], plan.constant_offset)
        per = None if shots is None else max(1, shots // plan.circuit_count)
        for c in plan.circuits:
            probs = probabilities(run_circuit(c.rotation, states))
            self.counter.circuits += states.shape[0]
            if per is not None:
                total += c.sampled_mean(probs, per, rng)
                self.counter.shots += per * states.shape[0]
            else:
                total += probs @ c.weights
        return total

    def _num_den(self, psi, rng):
        shots = self.shots
        num = float(self._overlap(psi, rng, shots=shots)[0])
        den = float(self._plan(psi, self.plan, rng, shots)[0])
        if shots is not None and den <= DENOMINATOR_FLOOR:
            den = float(self._plan(psi, self.plan, rng, 2 * shots)[0])
            if den <= DENOMINATOR_FLOOR:
                raise EvaluationError(f"denominator estimate {den:.3g} is not positive")
        return num, den

    # ------------------------------------------------------------ public
    def state(self, theta) -> np.ndarray:
        return ansatz_state(self.ansatz, theta)

    # ------------------------------------------------------------ noisy circuits
    def _noisy_zero_probability(self, circ: Circuit) -> float:
        rho = run_noisy(circ, density_matrix(zero_state(circ.num_qubits)), self.mode.noise)
        self.counter.circuits += 1
        return float(rho[0, 0].real)

    def _noisy_overlap(self, state_circuit: Circuit, derivative: bool = False) -> float:
        """Noisy numerator probability for a state circuit (optionally with a derivative ancilla).

        The preparation ancilla, if any, is inserted right after the derivative
        ancilla, matching :func:`overlap_probability`.
        """
        lead = 1 if derivative else 0
        anc = self.prep.ancillas
        circ = Circuit(state_circuit.num_qubits + anc)
        for g in state_circuit.gates:
            circ.append(Gate(g.kind, tuple(q if q < lead else q + anc for q in g.qubits), g.angle, g.param))
        if derivative:
            circ.h(0)
        if anc:
            circ.h(lead)
        circ.extend(self.prep.circuit.inverse(), lead)
        return self.prep.scale * self._noisy_zero_probability(circ)

    def _noisy_plan(self, circ: Circuit, plan: MeasurementPlan) -> float:
        noise = self.mode.noise
        rho = run_noisy(circ, density_matrix(zero_state(circ.num_qubits)), noise)
        total = plan.constant_offset
        for c in plan.circuits:
            total += float(probabilities(run_noisy(c.rotation, rho, noise)) @ c.weights)
            self.counter.circuits += 1
        return total

    def _noisy_num_den(self, theta) -> tuple[float, float]:
        circ = build_ansatz(self.ansatz, theta)
        num = self._noisy_overlap(circ)
        den = self._noisy_plan(circ, self.plan)
        if den <= DENOMINATOR_FLOOR:
            raise EvaluationError(f"noisy denominator {den:.3g} is not positive")
        return num, den

    def _noisy_gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        num, den = self._noisy_num_den(theta)
        grad = np.empty(self.ansatz.num_params)
        for i in range(self.ansatz.num_params):
            deriv = build_derivative_state(self.ansatz, theta, i)
            shifted = theta.copy()
            shifted[i] += math.pi
            product = (2.0 * self._noisy_overlap(deriv, derivative=True) - 0.5 * num
                       - 0.5 * self._noisy_overlap(build_ansatz(self.ansatz, shifted)))
            cross = self._noisy_plan(deriv, self.lifted)
            grad[i] = -0.5 * product / den + 0.5 * num * cross / den**2
        return grad

    def cost(self, theta) -> CostEvaluation:
        start = (self.counter.circuits, self.counter.shots)
        if isinstance(self.mode, Noisy):
            num, den = self._noisy_num_den(theta)
        else:
            rng = self._rng(0) if self.shots else None
            num, den = self._num_den(self.state(theta), rng)
        return CostEvaluation(
            value=-0.5 * num / den,
            numerator=num,
            denominator=den,
            r=math.sqrt(max(num, 0.0)) / den,
            circuits_used=self.counter.circuits - start[0],
            shots_used=self.counter.shots - start[1],
        )

    def gradient(self, theta) -> np.ndarray:
        if isinstance(self.mode, Noisy):
            return self._noisy_gradient(theta)
        rng = self._rng(1) if self.shots else None
        shots = self.shots
        stack = shifted_states(self.ansatz, theta)
        num, den = self._num_den(stack[0], rng)
        deriv = derivative_states(stack)
        mixed = self._overlap(deriv, rng, derivative=True, shots=shots)
        shifted_num = self._overlap(stack[1:], rng, shots=shots)
        product = 2.0 * mixed - 0.5 * num - 0.5 * shifted_num
        cross = self._plan(deriv, self.lifted, rng, shots)
        return -0.5 * product / den + 0.5 * num * cross / den**2

    def exact_cost(self, theta) -> float:
        """Dense reference ``-(b.psi)^2 / (2 psi.A.psi)`` (no circuits)."""
        psi = self.state(theta)
        a = build_matrix(self.spec)
        return float(-0.5 * (self.rhs_vector.unit @ psi) ** 2 / (psi @ a @ psi))


def cost(theta, ansatz: AnsatzSpec, rhs: RhsSpec, spec: PoissonSpec, mode=None) -> CostEvaluation:
    return VQAProblem(spec, rhs, ansatz, mode or Exact()).cost(theta)


def gradient(theta, ansatz: AnsatzSpec, rhs: RhsSpec, spec: PoissonSpec, mode=None) -> np.ndarray:
    return VQAProblem(spec, rhs, ansatz, mode or Exact()).gradient(theta)
