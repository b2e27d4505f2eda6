"""Finite-difference Poisson systems, right-hand sides and the dense reference solver.

Everything here is classical: the matrices and exact solutions serve as the
oracle that quantum estimates are checked against.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce

import numpy as np
import scipy.linalg


class BoundaryCondition(str, Enum):
    DIRICHLET = "D"
    NEUMANN = "N"
    PERIODIC = "P"

    @classmethod
    def parse(cls, value) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        for bc in cls:
            if key in (bc.value, bc.name):
                return bc
        raise ValueError(f"unknown boundary condition {value!r}")


class UnsupportedSpecError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


MAX_SYSTEM_QUBITS = 13


@dataclass(frozen=True)
class PoissonSpec:
    """``d``-dimensional grid with ``2**n`` points per axis.

    Axis 1 owns qubits ``0..n-1`` (the leftmost Kronecker factor), axis 2 the
    next ``n`` qubits, and so on.
    """

    d: int
    n: int
    bc: tuple[BoundaryCondition, ...]

    def __post_init__(self):
        object.__setattr__(self, "bc", tuple(BoundaryCondition.parse(b) for b in self.bc))
        if not 1 <= self.d <= 3:
            raise UnsupportedSpecError(f"dimension {self.d} outside 1..3")
        if not 1 <= self.n <= 5:
            raise UnsupportedSpecError(f"qubits per axis {self.n} outside 1..5")
        if len(self.bc) != self.d:
            raise UnsupportedSpecError(f"need {self.d} boundary conditions, got {len(self.bc)}")
        if self.d * self.n > MAX_SYSTEM_QUBITS:
            raise UnsupportedSpecError(f"system of 2^{self.d * self.n} points exceeds 2^{MAX_SYSTEM_QUBITS}")

    @classmethod
    def from_string(cls, n: int, bcs: str) -> "PoissonSpec":
        """``PoissonSpec.from_string(4, "ND")``."""
        return cls(len(bcs), n, tuple(bcs))

    @property
    def m(self) -> int:
        return 2**self.n

    @property
    def num_qubits(self) -> int:
        return self.d * self.n

    @property
    def singular(self) -> bool:
        """No Dirichlet axis: the operator has a constant null vector."""
        return BoundaryCondition.DIRICHLET not in self.bc

    def axis_qubits(self, axis: int) -> list[int]:
        return list(range(axis * self.n, (axis + 1) * self.n))

    def label(self) -> str:
        return "".join(b.value for b in self.bc)


def build_matrix_1d(n: int, bc) -> np.ndarray:
    bc = BoundaryCondition.parse(bc)
    if not 1 <= n <= 5:
        raise UnsupportedSpecError(f"qubits per axis {n} outside 1..5")
    m = 2**n
    a = 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
    if bc is BoundaryCondition.NEUMANN:
        a[0, 0] -= 1.0
        a[-1, -1] -= 1.0
    elif bc is BoundaryCondition.PERIODIC:
        a[0, -1] -= 1.0
        a[-1, 0] -= 1.0
    return a


def kron_sum(blocks: list[np.ndarray]) -> np.ndarray:
    """``A_1 (x) I (x) ... + I (x) A_2 (x) ... + ...`` with ``A_1`` leftmost."""
    eyes = [np.eye(b.shape[0]) for b in blocks]
    total = 0
    for i, b in enumerate(blocks):
        factors = eyes[:i] + [b] + eyes[i + 1:]
        total = total + reduce(np.kron, factors)
    return total


def build_matrix(spec: PoissonSpec) -> np.ndarray:
    return kron_sum([build_matrix_1d(spec.n, bc) for bc in spec.bc])


# ---------------------------------------------------------------- right-hand sides

@dataclass(frozen=True)
class DeviceConstants:
    eps_si: float = 1.044e-10  # F/m
    delta_x: float = 1e-9  # m
    q_charge: float = 1.602e-19  # C
    n_space: float = 1.180e22  # m^-3

    @property
    def alpha1(self) -> float:
        """Space-charge term ``dx^2 q N / eps`` in volts."""
        return self.delta_x**2 * self.q_charge * self.n_space / self.eps_si


@dataclass(frozen=True)
class StepFunction:
    d: int
    n: int
    kind: str = field(default="step", init=False)


@dataclass(frozen=True)
class Device:
    n: int
    vg: float
    constants: DeviceConstants = DeviceConstants()
    kind: str = field(default="device", init=False)


@dataclass(frozen=True)
class Explicit:
    vector: tuple[float, ...]
    kind: str = field(default="explicit", init=False)

    def __init__(self, vector):
        object.__setattr__(self, "vector", tuple(float(v) for v in np.ravel(vector)))


RhsSpec = StepFunction | Device | Explicit


@dataclass
class RhsVector:
    """Assembled right-hand side plus the device decomposition scalars.

    For device problems ``vector = alpha0*b0 + alpha1*b1`` and the normalized
    vector is ``beta0*b0_hat + beta1*b1_hat``; ``eta`` is the mixing angle of
    the ancilla-extended state. The scalars are ``None`` for other variants.
    """

    vector: np.ndarray
    alpha0: float | None = None
    alpha1: float | None = None
    beta0: float | None = None
    beta1: float | None = None
    eta: float | None = None
    b0: np.ndarray | None = None
    b1: np.ndarray | None = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def unit(self) -> np.ndarray:
        return self.vector / self.norm


def step_profile(n: int) -> np.ndarray:
    m = 2**n
    return np.concatenate([np.ones(m // 2), -np.ones(m // 2)]) / math.sqrt(m)


def device_parts(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Unscaled gate-electrode and space-charge vectors on the ``2n``-qubit grid."""
    if n < 3:
        raise UnsupportedSpecError("device RHS needs n >= 3 qubits per axis")
    plus = np.full(2, 1 / math.sqrt(2))
    prefix = np.zeros(8)
    prefix[0b011] = prefix[0b100] = 1.0
    zero = np.zeros(2**n)
    zero[0] = 1.0
    b0 = math.sqrt(2) ** (n - 3) * reduce(np.kron, [prefix] + [plus] * (n - 3) + [zero])
    b1 = np.ones(4**n)
    return b0, b1


def device_gate_range(n: int) -> range:
    """Grid columns under the middle top electrode (``2 L_S = 3 L_G = 2 L_D``)."""
    m = 2**n
    l_g = m // 4
    l_s = (m - l_g) // 2
    return range(l_s, l_s + l_g)


def device_rhs_grid(n: int, vg: float, constants: DeviceConstants = DeviceConstants()) -> np.ndarray:
    """Device RHS assembled point by point on the ``m x m`` grid.

    Every point carries the space-charge term; the first interior row under
    the gate electrode additionally carries the gate bias (other leads are
    grounded and contribute nothing). Returned flattened with axis 1 major.
    """
    m = 2**n
    grid = np.full((m, m), constants.alpha1)
    for i1 in device_gate_range(n):
        grid[i1, 0] += vg
    return grid.reshape(-1)


def build_rhs(spec: RhsSpec) -> RhsVector:
    if isinstance(spec, StepFunction):
        gamma = step_profile(spec.n)
        return RhsVector(reduce(np.kron, [gamma] * spec.d))
    if isinstance(spec, Device):
        b0, b1 = device_parts(spec.n)
        a0, a1 = float(spec.vg), spec.constants.alpha1
        if a0 <= 0:
            raise UnsupportedSpecError("device gate bias must be positive")
        vec = a0 * b0 + a1 * b1
        norm = np.linalg.norm(vec)
        return RhsVector(
            vector=vec,
            alpha0=a0,
            alpha1=a1,
            beta0=a0 * np.linalg.norm(b0) / norm,
            beta1=a1 * np.linalg.norm(b1) / norm,
            eta=math.atan(math.sqrt(2) ** (spec.n + 2) * a1 / a0),
            b0=b0,
            b1=b1,
        )
    if isinstance(spec, Explicit):
        vec = np.asarray(spec.vector, dtype=float)
        size = len(vec)
        if size < 2 or size & (size - 1):
            raise UnsupportedSpecError(f"explicit RHS length {size} is not a power of two")
        if not np.any(vec):
            raise UnsupportedSpecError("explicit RHS is zero")
        return RhsVector(vec)
    raise TypeError(f"unsupported RHS spec {spec!r}")


# ---------------------------------------------------------------- reference solution

@dataclass
class ExactSolution:
    v0: np.ndarray
    norm: float

    @property
    def unit(self) -> np.ndarray:
        return self.v0 / self.norm


def solve_exact(spec: PoissonSpec, b: np.ndarray) -> ExactSolution:
    a = build_matrix(spec)
    b = np.asarray(b, dtype=float)
    if spec.singular:
        raise SingularSystemError(f"boundary set {spec.label()} has no Dirichlet axis; A is singular")
    try:
        factor = scipy.linalg.cho_factor(a)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("system matrix is not positive definite") from exc
    v0 = scipy.linalg.cho_solve(factor, b)
    norm = float(np.linalg.norm(v0))
    if norm == 0.0:
        raise SingularSystemError("exact solution is zero")
    return ExactSolution(v0, norm)


@dataclass(frozen=True)
class SolutionMetrics:
    fidelity: float
    norm_rel_error: float


def metrics(psi: np.ndarray, r_opt: float, b: np.ndarray, exact: ExactSolution) -> SolutionMetrics:
    """Fidelity ``|<psi|u>|`` and relative error of the recovered norm ``|r| ||b||``."""
    psi = np.asarray(psi)
    if exact.norm == 0.0:
        raise SingularSystemError("exact solution is zero")
    fid = float(abs(np.vdot(psi, exact.unit)))
    recovered = abs(r_opt) * float(np.linalg.norm(b))
    return SolutionMetrics(fid, abs((exact.norm - recovered) / exact.norm))


def grid_csv(values: np.ndarray, spec: PoissonSpec, header: dict | None = None) -> str:
    """CSV of a field on the grid: ``x1,x2[,x3],value`` rows, last axis fastest.

    ``header`` entries are written first as ``# key=value`` comment lines.
    """
    buf = io.StringIO()
    for key, val in (header or {}).items():
        buf.write(f"# {key}={val}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(spec.d)] + ["value"])
    for flat, idx in enumerate(np.ndindex(*(spec.m,) * spec.d)):
        w.writerow(list(idx) + [repr(float(values[flat]))])
    return buf.getvalue()
