"""Minimal gate-level simulator.

Statevectors are plain numpy arrays of length ``2**q``; any number of leading
batch axes is allowed, so the same kernels evolve a stack of states at once.
Qubit 0 is the leftmost tensor factor, i.e. the bitstring ``c0 c1 ... c_{q-1}``
has basis index ``sum(c_j * 2**(q-1-j))``.

Density matrices are ``(2**q, 2**q)`` arrays. Internally a density matrix is
viewed as a ``2q``-qubit vector (row qubits first, column qubits second), so
``U rho U^dagger`` reuses the statevector kernels with ``U`` on the row copy
and ``conj(U)`` on the column copy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, sin, pi, sqrt
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_STATEVECTOR_QUBITS = 13
MAX_DENSITY_QUBITS = 10

ONE_QUBIT_KINDS = frozenset({"RY", "RZ", "RX", "H", "X", "Z", "T", "TDG"})
TWO_QUBIT_KINDS = frozenset({"CZ", "CNOT", "CRY"})
PARAMETRIC_KINDS = frozenset({"RY", "RZ", "RX", "CRY"})

_INV_SQRT2 = 1 / sqrt(2)
_FIXED = {
    "H": np.array([[_INV_SQRT2, _INV_SQRT2], [_INV_SQRT2, -_INV_SQRT2]]),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]]),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]]),
    "T": np.array([[1.0, 0.0], [0.0, np.exp(1j * pi / 4)]]),
    "TDG": np.array([[1.0, 0.0], [0.0, np.exp(-1j * pi / 4)]]),
}
_INVERSE_KIND = {"T": "TDG", "TDG": "T"}


def ry_matrix(theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    return np.array([[c, -s], [s, c]])


def _rx_matrix(theta: float) -> np.ndarray:
    c, s = cos(theta / 2), sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _rz_matrix(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])


class CircuitError(ValueError):
    """Raised for malformed gates, circuits or width mismatches."""


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    # index of the ansatz parameter feeding ``angle``; bookkeeping only
    param: int | None = None

    def __post_init__(self):
        if self.kind not in ONE_QUBIT_KINDS | TWO_QUBIT_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in ONE_QUBIT_KINDS else 2
        if len(self.qubits) != arity:
            raise CircuitError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity or min(self.qubits) < 0:
            raise CircuitError(f"invalid qubit indices {self.qubits}")
        if self.kind in PARAMETRIC_KINDS:
            if self.angle is None or not np.isfinite(self.angle):
                raise CircuitError(f"{self.kind} needs a finite angle")

    @property
    def arity(self) -> int:
        return len(self.qubits)

    def matrix(self) -> np.ndarray:
        """2x2 matrix of the gate (for controlled gates: the target action)."""
        if self.kind in _FIXED:
            return _FIXED[self.kind]
        if self.kind in ("RY", "CRY"):
            return ry_matrix(self.angle)
        if self.kind == "RX":
            return _rx_matrix(self.angle)
        if self.kind == "RZ":
            return _rz_matrix(self.angle)
        if self.kind == "CNOT":
            return _FIXED["X"]
        return _FIXED["Z"]  # CZ

    def inverse(self) -> "Gate":
        if self.kind in PARAMETRIC_KINDS:
            return Gate(self.kind, self.qubits, -self.angle, self.param)
        return Gate(_INVERSE_KIND.get(self.kind, self.kind), self.qubits)

    def shifted(self, offset: int) -> "Gate":
        return Gate(self.kind, tuple(q + offset for q in self.qubits), self.angle, self.param)


@dataclass
class Circuit:
    """Ordered, append-only gate list on a fixed register width."""

    num_qubits: int
    gates: list[Gate] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_STATEVECTOR_QUBITS:
            raise CircuitError(f"circuit width {self.num_qubits} outside 1..{MAX_STATEVECTOR_QUBITS}")
        gates, self.gates = self.gates, []
        for g in gates:
            self.append(g)

    def __len__(self):
        return len(self.gates)

    def __iter__(self):
        return iter(self.gates)

    def append(self, gate: Gate) -> "Circuit":
        if max(gate.qubits) >= self.num_qubits:
            raise CircuitError(f"{gate.kind} on {gate.qubits} exceeds width {self.num_qubits}")
        self.gates.append(gate)
        return self

    def add(self, kind: str, *qubits: int, angle: float | None = None, param: int | None = None) -> "Circuit":
        return self.append(Gate(kind, tuple(qubits), angle, param))

    # convenience builders
    def h(self, q):
        return self.add("H", q)

    def x(self, q):
        return self.add("X", q)

    def z(self, q):
        return self.add("Z", q)

    def ry(self, q, angle, param=None):
        return self.add("RY", q, angle=angle, param=param)

    def cz(self, a, b):
        return self.add("CZ", a, b)

    def cnot(self, control, target):
        return self.add("CNOT", control, target)

    def cry(self, control, target, angle):
        return self.add("CRY", control, target, angle=angle)

    def extend(self, other: "Circuit", offset: int = 0) -> "Circuit":
        for g in other.gates:
            self.append(g.shifted(offset) if offset else g)
        return self

    def inverse(self) -> "Circuit":
        return Circuit(self.num_qubits, [g.inverse() for g in reversed(self.gates)])

    def embedded(self, width: int, offset: int = 0) -> "Circuit":
        """Copy of this circuit placed on qubits ``offset..`` of a wider register."""
        return Circuit(width).extend(self, offset)

    def depth(self) -> int:
        """Longest dependency chain (gates sharing a qubit are ordered)."""
        level = [0] * self.num_qubits
        for g in self.gates:
            d = max(level[q] for q in g.qubits) + 1
            for q in g.qubits:
                level[q] = d
        return max(level, default=0)

    def count(self, arity: int | None = None) -> int:
        if arity is None:
            return len(self.gates)
        return sum(1 for g in self.gates if g.arity == arity)

    def to_list(self) -> list[dict]:
        out = []
        for g in self.gates:
            rec = {"kind": g.kind, "qubits": list(g.qubits)}
            if g.angle is not None:
                rec["angle"] = g.angle
            out.append(rec)
        return out


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing rates applied after every one-qubit (p1) / two-qubit (p2) gate."""

    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for p in (self.p1, self.p2):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"depolarizing rate {p} outside [0, 1]")

    def rate(self, gate: Gate) -> float:
        return self.p1 if gate.arity == 1 else self.p2


# ---------------------------------------------------------------- states

def zero_state(num_qubits: int, dtype=float) -> np.ndarray:
    if not 1 <= num_qubits <= MAX_STATEVECTOR_QUBITS:
        raise CircuitError(f"statevector width {num_qubits} outside 1..{MAX_STATEVECTOR_QUBITS}")
    psi = np.zeros(2**num_qubits, dtype=dtype)
    psi[0] = 1.0
    return psi


def basis_state(bits: str, dtype=float) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=dtype)
    psi[int(bits, 2)] = 1.0
    return psi


def num_qubits_of(amps: np.ndarray) -> int:
    q = int(amps.shape[-1]).bit_length() - 1
    if 2**q != amps.shape[-1]:
        raise CircuitError(f"length {amps.shape[-1]} is not a power of two")
    return q


# ---------------------------------------------------------------- kernels

def _matmul_pair(u, a0, a1):
    return u[0, 0] * a0 + u[0, 1] * a1, u[1, 0] * a0 + u[1, 1] * a1


def _apply_1q(amps: np.ndarray, u: np.ndarray, q: int, n: int, kind: str) -> np.ndarray:
    psi = amps.reshape(-1, 2**q, 2, 2 ** (n - q - 1))
    if kind == "Z":
        out = psi.copy()
        out[:, :, 1, :] *= -1
    elif kind == "X":
        out = psi[:, :, ::-1, :].copy()
    elif q == n - 1:
        out = amps.reshape(-1, 2) @ u.T
    else:
        out = np.matmul(u, psi.reshape(-1, 2, 2 ** (n - q - 1)))
    return out.reshape(amps.shape)


def _apply_controlled(amps: np.ndarray, u: np.ndarray, control: int, target: int, n: int, kind: str) -> np.ndarray:
    lo, hi = sorted((control, target))
    psi = amps.reshape(-1, 2**lo, 2, 2 ** (hi - lo - 1), 2, 2 ** (n - hi - 1))
    out = psi.astype(np.result_type(psi, u), copy=True)
    if control < target:
        sub_in, sub_out = psi[:, :, 1], out[:, :, 1]  # (B, a, b, 2, c), target axis 3
        t0, t1 = (slice(None),) * 3 + (0,), (slice(None),) * 3 + (1,)
    else:
        sub_in, sub_out = psi[:, :, :, :, 1], out[:, :, :, :, 1]  # (B, a, 2, b, c), target axis 2
        t0, t1 = (slice(None),) * 2 + (0,), (slice(None),) * 2 + (1,)
    if kind == "CZ":
        sub_out[t1] *= -1
    elif kind == "CNOT":
        sub_out[t0], sub_out[t1] = sub_in[t1], sub_in[t0]
    else:
        sub_out[t0], sub_out[t1] = _matmul_pair(u, sub_in[t0], sub_in[t1])
    return out.reshape(amps.shape)


def _apply_raw(amps: np.ndarray, gate: Gate, n: int, conj: bool = False, offset: int = 0) -> np.ndarray:
    u = gate.matrix()
    if conj:
        u = u.conj()
    if gate.arity == 1:
        return _apply_1q(amps, u, gate.qubits[0] + offset, n, gate.kind)
    c, t = gate.qubits
    return _apply_controlled(amps, u, c + offset, t + offset, n, gate.kind)


def apply_gate(state: np.ndarray, gate: Gate) -> np.ndarray:
    """Apply one gate to a statevector (or a stack of statevectors)."""
    n = num_qubits_of(state)
    if max(gate.qubits) >= n:
        raise CircuitError(f"{gate.kind} on {gate.qubits} exceeds width {n}")
    return _apply_raw(state, gate, n)


def run_circuit(circuit: Circuit, initial: np.ndarray | None = None) -> np.ndarray:
    if initial is None:
        initial = zero_state(circuit.num_qubits)
    n = num_qubits_of(initial)
    if n != circuit.num_qubits:
        raise CircuitError(f"circuit width {circuit.num_qubits} != state width {n}")
    state = initial
    for g in circuit.gates:
        state = _apply_raw(state, g, n)
    return state


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Dense unitary of a circuit (column j = image of basis state j)."""
    dim = 2**circuit.num_qubits
    return run_circuit(circuit, np.eye(dim, dtype=complex)).T


def probabilities(state: np.ndarray) -> np.ndarray:
    """Computational-basis distribution.

    A square 2-D input is read as a density matrix; anything else as a
    statevector (or a stack of them along the leading axes).
    """
    if state.ndim == 2 and state.shape[0] == state.shape[1]:
        return np.clip(np.real(np.diagonal(state)), 0.0, None)
    return np.abs(state) ** 2


# ---------------------------------------------------------------- sampling

def sample_counts(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Histogram of ``shots`` i.i.d. draws from ``probs`` (counts per basis index)."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    return rng.multinomial(shots, p)


def sample(state: np.ndarray, shots: int, seed: int) -> dict[str, int]:
    """Measure ``state`` ``shots`` times in the computational basis."""
    n = num_qubits_of(state)
    counts = sample_counts(probabilities(state), shots, np.random.default_rng(seed))
    return {format(i, f"0{n}b"): int(c) for i, c in enumerate(counts) if c}


def sign_vector(num_qubits: int, rule: Callable[[str], int]) -> np.ndarray:
    return np.array([rule(format(i, f"0{num_qubits}b")) for i in range(2**num_qubits)], dtype=float)


def expectation_diagonal(state: np.ndarray, signs, shots: int | None = None, seed: int | None = None) -> float:
    """``sum_z sign(z) P(z)`` for a statevector or density matrix.

    ``signs`` is either a length-``2**q`` array or a callable on bitstrings.
    With ``shots`` the sample-mean estimator is returned instead.
    """
    probs = probabilities(state)
    n = num_qubits_of(probs)
    if callable(signs):
        signs = sign_vector(n, signs)
    if shots is not None:
        probs = sample_counts(probs, shots, np.random.default_rng(seed)) / shots
    return float(probs @ signs)


# ---------------------------------------------------------------- density matrices

def density_matrix(state: np.ndarray) -> np.ndarray:
    n = num_qubits_of(state)
    if n > MAX_DENSITY_QUBITS:
        raise CircuitError(f"density-matrix width {n} exceeds {MAX_DENSITY_QUBITS}")
    psi = np.asarray(state, dtype=complex)
    return np.outer(psi, psi.conj())


def _unitary_on_rho(rho: np.ndarray, gate: Gate, n: int) -> np.ndarray:
    vec = rho.reshape(-1)
    vec = _apply_raw(vec, gate, 2 * n)
    vec = _apply_raw(vec, gate, 2 * n, conj=True, offset=n)
    return vec.reshape(rho.shape)


def depolarize(rho: np.ndarray, qubits: Sequence[int], p: float) -> np.ndarray:
    """Joint depolarizing channel: ``(1-p) rho + p Tr_S(rho) (x) I_S / 2**|S|``."""
    if p == 0.0:
        return rho
    n = num_qubits_of(rho)
    t = rho.reshape((2,) * (2 * n))
    k = len(qubits)
    traced = 0
    diag_slices = []
    for bits in range(2**k):
        idx = [slice(None)] * (2 * n)
        for j, q in enumerate(qubits):
            b = (bits >> (k - 1 - j)) & 1
            idx[q] = b
            idx[n + q] = b
        idx = tuple(idx)
        diag_slices.append(idx)
        traced = traced + t[idx]
    out = (1.0 - p) * t
    for idx in diag_slices:
        out[idx] += (p / 2**k) * traced
    return out.reshape(rho.shape)


def apply_noisy_gate(rho: np.ndarray, gate: Gate, noise: NoiseModel) -> np.ndarray:
    """``U rho U^dagger`` followed by depolarizing noise on the gate's qubits."""
    n = num_qubits_of(rho)
    if rho.shape != (2**n, 2**n):
        raise CircuitError(f"expected a square density matrix, got {rho.shape}")
    if max(gate.qubits) >= n:
        raise CircuitError(f"{gate.kind} on {gate.qubits} exceeds width {n}")
    rho = _unitary_on_rho(np.asarray(rho, dtype=complex), gate, n)
    return depolarize(rho, gate.qubits, noise.rate(gate))


def run_noisy(circuit: Circuit, rho: np.ndarray, noise: NoiseModel) -> np.ndarray:
    n = num_qubits_of(rho)
    if n != circuit.num_qubits:
        raise CircuitError(f"circuit width {circuit.num_qubits} != density width {n}")
    if n > MAX_DENSITY_QUBITS:
        raise CircuitError(f"density-matrix width {n} exceeds {MAX_DENSITY_QUBITS}")
    for g in circuit.gates:
        rho = apply_noisy_gate(rho, g, noise)
    return rho


def marginal(probs: np.ndarray, keep: Iterable[int], num_qubits: int) -> np.ndarray:
    """Marginal distribution over the qubits in ``keep`` (ascending order)."""
    keep = sorted(keep)
    t = probs.reshape(probs.shape[:-1] + (2,) * num_qubits)
    lead = probs.ndim - 1
    drop = tuple(lead + q for q in range(num_qubits) if q not in keep)
    return t.sum(axis=drop).reshape(probs.shape[:-1] + (2 ** len(keep),))
