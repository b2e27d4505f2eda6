"""Measurement circuits for ``<psi|A|psi>`` of finite-difference Poisson operators.

Each 1-D operator splits into a constant diagonal and nearest-neighbour
couplings. The couplings between ``i`` and ``i+1`` that flip exactly the last
``k`` bits form the shift term of window ``k``; after the basis rotation
``V_k^dagger`` its expectation is a signed sum of computational-basis
probabilities. Windows of different axes live on disjoint qubits, so a single
circuit serves every axis at once and the circuit count does not grow with the
dimension.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from .poisson import BoundaryCondition, PoissonSpec, UnsupportedSpecError
from .qsim import Circuit, NoiseModel, circuit_unitary, probabilities, run_circuit


# ---------------------------------------------------------------- terms

@dataclass(frozen=True)
class ShiftTerm:
    """Couplings ``O+ + O-`` on the ``k``-qubit window ending ``skip`` qubits
    before the last qubit of ``axis``'s register.

    ``skip=0`` couples grid neighbours at distance 1; ``skip=1`` (identity on
    the least significant qubit) couples points at distance 2.
    """

    axis: int
    k: int
    skip: int = 0

    def window(self, n: int) -> tuple[int, ...]:
        if not 1 <= self.k <= n - self.skip:
            raise ValueError(f"window k={self.k} (skip={self.skip}) outside register of {n} qubits")
        end = self.axis * n + n - self.skip
        return tuple(range(end - self.k, end))

    def pattern(self, n: int) -> dict[str, int]:
        return sign_pattern(self.k)


@dataclass(frozen=True)
class BoundaryCorrection:
    """``e1 e1^T + em em^T`` (Neumann ends) or ``e1 em^T + em e1^T`` (periodic wrap)."""

    axis: int
    kind: str  # "neumann" | "periodic"

    def window(self, n: int) -> tuple[int, ...]:
        return tuple(range(self.axis * n, (self.axis + 1) * n))

    def pattern(self, n: int) -> dict[str, int]:
        if self.kind == "neumann":
            return {"0" * n: 1, "1" * n: 1}
        return wrap_pattern(n)


def sign_pattern(k: int) -> dict[str, int]:
    """Signs of window outcomes after ``V_k^dagger``: ``01 0..0 -> +1``, ``11 0..0 -> -1``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return {"0": 1, "1": -1}
    tail = "0" * (k - 2)
    return {"01" + tail: 1, "11" + tail: -1}


def wrap_pattern(n: int) -> dict[str, int]:
    """The GHZ pair ``|0..0> +- |1..1>`` lands on ``t 0..0`` after ``V_n^dagger``."""
    tail = "0" * (n - 1)
    return {"0" + tail: 1, "1" + tail: -1}


@dataclass(frozen=True)
class Factor:
    qubits: tuple[int, ...]
    pattern: tuple[tuple[str, int], ...]
    source: str = ""


@dataclass(frozen=True)
class SignedTerm:
    """``coefficient * prod(factor signs)`` summed against the outcome distribution."""

    coefficient: float
    factors: tuple[Factor, ...]

    def weights(self, num_qubits: int) -> np.ndarray:
        w = np.full(2**num_qubits, float(self.coefficient))
        idx = np.arange(2**num_qubits)
        for f in self.factors:
            local = np.zeros(idx.shape, dtype=np.int64)
            for q in f.qubits:
                local = (local << 1) | ((idx >> (num_qubits - 1 - q)) & 1)
            table = np.zeros(2 ** len(f.qubits))
            for bits, s in f.pattern:
                table[int(bits, 2)] = s
            w *= table[local]
        return w


def _factor(term, n: int) -> Factor:
    return Factor(term.window(n), tuple(sorted(term.pattern(n).items())), _describe(term))


def _describe(term) -> str:
    if isinstance(term, ShiftTerm):
        return f"shift(axis={term.axis},k={term.k}" + (f",skip={term.skip})" if term.skip else ")")
    return f"{term.kind}(axis={term.axis})"


@dataclass
class MeasurementCircuit:
    label: str
    rotation: Circuit
    terms: list[SignedTerm]

    @cached_property
    def weights(self) -> np.ndarray:
        n = self.rotation.num_qubits
        return sum((t.weights(n) for t in self.terms), np.zeros(2**n))

    @cached_property
    def levels(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct weight values and the 0/1 matrix mapping outcomes onto them."""
        values, inverse = np.unique(self.weights, return_inverse=True)
        return values, np.eye(len(values))[inverse]

    def sampled_mean(self, probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
        """Shot estimate of ``probs @ weights`` for each row of ``probs``.

        Outcomes with equal weight are pooled before sampling; the pooled
        multinomial gives the estimator exactly the distribution of a full
        per-outcome histogram at a fraction of the cost.
        """
        values, pool = self.levels
        grouped = np.clip(np.atleast_2d(probs) @ pool, 0.0, None)
        grouped /= grouped.sum(axis=1, keepdims=True)
        return rng.multinomial(shots, grouped) @ values / shots


@dataclass
class MeasurementPlan:
    num_qubits: int
    circuits: list[MeasurementCircuit]
    constant_offset: float

    @property
    def circuit_count(self) -> int:
        return len(self.circuits)

    def operator(self) -> np.ndarray:
        """Dense operator the plan estimates: ``c I + sum_j R_j^dagger diag(w_j) R_j``."""
        dim = 2**self.num_qubits
        op = self.constant_offset * np.eye(dim, dtype=complex)
        for c in self.circuits:
            r = circuit_unitary(c.rotation)
            op += r.conj().T @ np.diag(c.weights) @ r
        return op

    def with_x_ancilla(self) -> "MeasurementPlan":
        """Plan for ``<X (x) A>`` on a register with one extra leading qubit.

        Every circuit measures the new qubit in the X basis and every sign is
        multiplied by its parity; the constant offset becomes an ``X`` term on
        the first circuit.
        """
        width = self.num_qubits + 1
        x_factor = Factor((0,), (("0", 1), ("1", -1)), "ancilla X")
        circuits = []
        for j, c in enumerate(self.circuits):
            rot = Circuit(width).h(0).extend(c.rotation, 1)
            terms = [
                SignedTerm(t.coefficient, (x_factor,) + tuple(
                    Factor(tuple(q + 1 for q in f.qubits), f.pattern, f.source) for f in t.factors))
                for t in c.terms
            ]
            if j == 0 and self.constant_offset:
                terms.append(SignedTerm(self.constant_offset, (x_factor,)))
            circuits.append(MeasurementCircuit(c.label, rot, terms))
        return MeasurementPlan(width, circuits, 0.0)

    def to_dict(self) -> dict:
        return {
            "num_qubits": self.num_qubits,
            "circuit_count": self.circuit_count,
            "constant_offset": self.constant_offset,
            "circuits": [
                {
                    "label": c.label,
                    "rotation": c.rotation.to_list(),
                    "terms": [
                        {
                            "coefficient": t.coefficient,
                            "factors": [
                                {"source": f.source, "qubits": list(f.qubits), "signs": dict(f.pattern)}
                                for f in t.factors
                            ],
                        }
                        for t in c.terms
                    ],
                }
                for c in self.circuits
            ],
        }


# ---------------------------------------------------------------- rotations

def v_rotation(n: int, k: int, offset: int = 0, width: int | None = None, skip: int = 0) -> Circuit:
    """``V`` for the ``k``-qubit window ending ``skip`` qubits before the end of
    the register starting at ``offset``: ``H`` on the window's first qubit, then
    a CNOT chain down the window. ``V |t 1 0..0> = (|01..1> + (-1)^t |10..0>)/sqrt2``.
    """
    if not 1 <= k <= n - skip:
        raise ValueError(f"k={k} outside 1..{n - skip}")
    width = width or offset + n
    w = [offset + n - skip - k + i for i in range(k)]
    circ = Circuit(width).h(w[0])
    for a, b in zip(w, w[1:]):
        circ.cnot(a, b)
    return circ


def v_dagger(n: int, k: int, offset: int = 0, width: int | None = None, skip: int = 0) -> Circuit:
    return v_rotation(n, k, offset, width, skip).inverse()


# ---------------------------------------------------------------- plans

def _bind(spec_n: int, term, coefficient: float) -> SignedTerm:
    return SignedTerm(coefficient, (_factor(term, spec_n),))


def plan_expectation(spec: PoissonSpec) -> MeasurementPlan:
    """Circuits estimating ``<psi|A|psi>`` for ``build_matrix(spec)``.

    ``n`` circuits (one per window size, shared by all axes) plus one
    computational-basis circuit when any axis is Neumann.
    """
    n, q = spec.n, spec.num_qubits
    circuits = []
    for k in range(1, n + 1):
        rot = Circuit(q)
        terms = []
        for axis, bc in enumerate(spec.bc):
            rot.extend(v_dagger(n, k, offset=axis * n, width=q))
            terms.append(_bind(n, ShiftTerm(axis, k), -1.0))
            if bc is BoundaryCondition.PERIODIC and k == n:
                terms.append(_bind(n, BoundaryCorrection(axis, "periodic"), -1.0))
        circuits.append(MeasurementCircuit(f"shift k={k}", rot, terms))
    neumann = [a for a, bc in enumerate(spec.bc) if bc is BoundaryCondition.NEUMANN]
    if neumann:
        terms = [_bind(n, BoundaryCorrection(a, "neumann"), -1.0) for a in neumann]
        circuits.append(MeasurementCircuit("neumann ends", Circuit(q), terms))
    return MeasurementPlan(q, circuits, 2.0 * spec.d)


def circuit_count(spec: PoissonSpec) -> int:
    return plan_expectation(spec).circuit_count


@dataclass
class SquaredPlan:
    plan: MeasurementPlan
    circuit_count: int

    def evaluate(self, psi: np.ndarray, mode: "Exact | Shots | None" = None) -> float:
        return estimate_expectation(psi, self.plan, mode)


def plan_expectation_squared_dirichlet(spec: PoissonSpec) -> SquaredPlan:
    """Circuits for ``<psi|A_DD^2|psi>`` with ``A_DD = A_D (x) I + I (x) A_D``.

    ``A_D^2 = 6I - (e1e1^T + em em^T) + sum_{k<n} O_k[skip 1] - 4 sum_k O_k``
    takes ``2n`` circuits for both axes together, and the cross term
    ``2 A_D (x) A_D`` needs one circuit per window pair: ``n^2 + 2n`` in total.
    """
    if spec.d != 2 or any(bc is not BoundaryCondition.DIRICHLET for bc in spec.bc):
        raise UnsupportedSpecError("squared-operator plan is defined for 2-D all-Dirichlet grids")
    n, q = spec.n, spec.num_qubits
    circuits = []
    for k in range(1, n + 1):
        rot = Circuit(q)
        terms = []
        for axis in range(2):
            rot.extend(v_dagger(n, k, offset=axis * n, width=q))
            # -4 from A_D^2 on this axis, -4 from the single-shift part of 2 A_D (x) A_D
            terms.append(_bind(n, ShiftTerm(axis, k), -4.0))
            terms.append(_bind(n, ShiftTerm(axis, k), -4.0))
        circuits.append(MeasurementCircuit(f"A_D^2 distance-1 k={k}", rot, terms))
    for k in range(1, n):
        rot = Circuit(q)
        terms = []
        for axis in range(2):
            rot.extend(v_dagger(n, k, offset=axis * n, width=q, skip=1))
            terms.append(_bind(n, ShiftTerm(axis, k, skip=1), 1.0))
        circuits.append(MeasurementCircuit(f"A_D^2 distance-2 k={k}", rot, terms))
    terms = [_bind(n, BoundaryCorrection(a, "neumann"), -1.0) for a in range(2)]
    circuits.append(MeasurementCircuit("A_D^2 ends", Circuit(q), terms))
    for k1, k2 in product(range(1, n + 1), repeat=2):
        rot = Circuit(q).extend(v_dagger(n, k1, offset=0, width=q)).extend(v_dagger(n, k2, offset=n, width=q))
        f1 = _factor(ShiftTerm(0, k1), n)
        f2 = _factor(ShiftTerm(1, k2), n)
        circuits.append(MeasurementCircuit(f"A_D(x)A_D k=({k1},{k2})", rot, [SignedTerm(2.0, (f1, f2))]))
    # 6 + 6 from the two A_D^2 blocks, 2 * 2 * 2 from 2 A_D (x) A_D
    plan = MeasurementPlan(q, circuits, 20.0)
    return SquaredPlan(plan, plan.circuit_count)


# ---------------------------------------------------------------- estimation

@dataclass(frozen=True)
class Exact:
    """Use the full outcome distribution of every circuit."""


@dataclass(frozen=True)
class Shots:
    """Estimate from ``count`` shots, split evenly across a plan's circuits."""

    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("shot count must be >= 1")


@dataclass(frozen=True)
class Noisy:
    """Exact outcome distributions of density-matrix runs with depolarizing noise."""

    p1: float = 0.0
    p2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        NoiseModel(self.p1, self.p2)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.p1, self.p2)


def rotated_probabilities(psi: np.ndarray, circuit: MeasurementCircuit) -> np.ndarray:
    return probabilities(run_circuit(circuit.rotation, psi))


def estimate_expectation(psi: np.ndarray, plan: MeasurementPlan, mode=None,
                         rng: np.random.Generator | None = None) -> np.ndarray | float:
    """Estimate ``<psi|A|psi>`` from the plan's circuits.

    ``psi`` may be a stack of states (leading axes); the estimate has the same
    leading shape. In shot mode each circuit gets ``count // circuits`` shots.
    """
    mode = mode or Exact()
    if isinstance(mode, Shots) and rng is None:
        rng = np.random.default_rng(mode.seed)
    total = plan.constant_offset
    for c in plan.circuits:
        probs = rotated_probabilities(psi, c)
        if isinstance(mode, Shots):
            per = max(1, mode.count // plan.circuit_count)
            est = c.sampled_mean(probs.reshape(-1, probs.shape[-1]), per, rng).reshape(probs.shape[:-1])
        else:
            est = probs @ c.weights
        total = total + est
    if np.ndim(total) == 0:
        return float(total)
    return total
