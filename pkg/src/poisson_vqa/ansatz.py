"""Real-valued hardware-efficient ansatz built from RY and CZ gates.

Layout for ``w`` qubits and ``p`` blocks: an RY on every qubit, then per block
CZ on the even pairs ``(0,1),(2,3),..`` followed by RY on every qubit, and CZ
on the odd pairs ``(1,2),(3,4),..`` followed by RY on the inner qubits
``1..w-2``. Each block adds ``w + (w-2) = 2(w-1)`` parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import pi

import numpy as np

from .qsim import Circuit, CircuitError, run_circuit


@dataclass(frozen=True)
class AnsatzSpec:
    width: int
    depth: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("ansatz width must be >= 1")
        if self.depth < 0:
            raise ValueError("ansatz depth must be >= 0")

    @property
    def num_params(self) -> int:
        return self.width + 2 * self.depth * (self.width - 1)

    def random_parameters(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 2 * pi, self.num_params)


def _check(spec: AnsatzSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.num_params,):
        raise CircuitError(f"expected {spec.num_params} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise CircuitError("parameters must be finite")
    return theta


def build_ansatz(spec: AnsatzSpec, theta, offset: int = 0, width: int | None = None) -> Circuit:
    """Ansatz circuit on qubits ``offset..offset+spec.width-1`` of a ``width`` register."""
    theta = _check(spec, theta)
    w = spec.width
    circ = Circuit(width or offset + w)
    it = iter(range(spec.num_params))

    def ry_layer(qubits):
        for q in qubits:
            i = next(it)
            circ.ry(q + offset, theta[i], param=i)

    ry_layer(range(w))
    for _ in range(spec.depth):
        for a in range(0, w - 1, 2):
            circ.cz(a + offset, a + 1 + offset)
        ry_layer(range(w))
        for a in range(1, w - 1, 2):
            circ.cz(a + offset, a + 1 + offset)
        ry_layer(range(1, w - 1))
    return circ


def ansatz_state(spec: AnsatzSpec, theta) -> np.ndarray:
    return run_circuit(build_ansatz(spec, theta))


def build_derivative_state(spec: AnsatzSpec, theta, i: int) -> Circuit:
    """Circuit on ``1 + width`` qubits preparing ``(|0>|psi(theta)> + |1>|psi(theta + pi e_i)>)/sqrt2``.

    Qubit 0 is the ancilla: H on it, and a controlled RY(pi) onto the qubit of
    parameter ``i`` right after ``RY(theta_i)``.
    """
    theta = _check(spec, theta)
    if not 0 <= i < spec.num_params:
        raise CircuitError(f"parameter index {i} outside 0..{spec.num_params - 1}")
    base = build_ansatz(spec, theta, offset=1)
    circ = Circuit(base.num_qubits).h(0)
    for g in base.gates:
        circ.append(g)
        if g.param == i:
            circ.cry(0, g.qubits[0], pi)
    return circ


def _cz_signs(n: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(2**n)
    both = ((idx >> (n - 1 - a)) & 1) & ((idx >> (n - 1 - b)) & 1)
    return 1.0 - 2.0 * both


def shifted_states(spec: AnsatzSpec, theta) -> np.ndarray:
    """Stack ``[psi(theta), psi(theta + pi e_0), ..., psi(theta + pi e_{P-1})]``.

    All rows are evolved together; row ``i+1`` receives the extra RY(pi) right
    after ``RY(theta_i)``, which is the ancilla-controlled branch of
    :func:`build_derivative_state`.
    """
    theta = _check(spec, theta)
    circ = build_ansatz(spec, theta)
    n, rows = spec.width, spec.num_params + 1
    # amplitudes along axis 0 and the batch last keeps every update a single matmul
    stack = np.zeros((2**n, rows))
    stack[0] = 1.0
    for g in circ.gates:
        q = g.qubits[0]
        if g.kind == "CZ":
            stack *= _cz_signs(n, *g.qubits)[:, None]
            continue
        view = stack.reshape(2**q, 2, -1)
        stack = np.matmul(g.matrix(), view).reshape(stack.shape)
        if g.param is not None:
            # RY(pi) maps (a0, a1) -> (-a1, a0) on the gate's qubit
            col = stack.reshape(2**q, 2, -1, rows)[..., g.param + 1]
            col[:, 0], col[:, 1] = -col[:, 1].copy(), col[:, 0].copy()
    return np.ascontiguousarray(stack.T)


def derivative_states(shifted: np.ndarray) -> np.ndarray:
    """Ancilla-extended states from a :func:`shifted_states` stack (ancilla leftmost)."""
    psi, rest = shifted[0], shifted[1:]
    out = np.empty((rest.shape[0], 2 * rest.shape[1]))
    out[:, : rest.shape[1]] = psi
    out[:, rest.shape[1]:] = rest
    return out / np.sqrt(2)

