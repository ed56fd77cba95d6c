"""Gate set for the dense statevector simulator.

Single-qubit matrices are the usual computational-basis forms; two-qubit
matrices are written in the |control, target> product basis (row/column
index = 2*control_bit + target_bit).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

SINGLE_QUBIT_KINDS = ("X", "Y", "Z", "H", "Rx", "Ry", "Rz")
TWO_QUBIT_KINDS = ("CNOT", "SWAP", "CRx", "CRz")
ROTATION_KINDS = ("Rx", "Ry", "Rz", "CRx", "CRz")
CONTROLLED_ROTATION_KINDS = ("CRx", "CRz")
GATE_KINDS = SINGLE_QUBIT_KINDS + TWO_QUBIT_KINDS

_SQ2 = 1.0 / np.sqrt(2.0)

FIXED_1Q = {
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=np.complex128),
}

CNOT_MATRIX = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]], dtype=np.complex128)

SWAP_MATRIX = np.array(
    [[1, 0, 0, 0],
     [0, 0, 1, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1]], dtype=np.complex128)


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def rz(theta: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]],
        dtype=np.complex128)


def drx(theta: float) -> np.ndarray:
    """d Rx(theta) / d theta."""
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return 0.5 * np.array([[-s, -1j * c], [-1j * c, -s]], dtype=np.complex128)


def dry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return 0.5 * np.array([[-s, -c], [c, -s]], dtype=np.complex128)


def drz(theta: float) -> np.ndarray:
    return 0.5 * np.array(
        [[-1j * np.exp(-0.5j * theta), 0], [0, 1j * np.exp(0.5j * theta)]],
        dtype=np.complex128)

_ROTATION_1Q = {"Rx": rx, "Ry": ry, "Rz": rz}
_ROTATION_1Q_DERIV = {"Rx": drx, "Ry": dry, "Rz": drz}


def _controlled(block: np.ndarray) -> np.ndarray:
    out = np.eye(4, dtype=np.complex128)
    out[2:, 2:] = block
    return out


def gate_matrix(kind: str, angle: Optional[float] = None) -> np.ndarray:
    """Dense 2x2 or 4x4 unitary realising `kind`."""
    if kind in FIXED_1Q:
        return FIXED_1Q[kind].copy()
    if kind == "CNOT":
        return CNOT_MATRIX.copy()
    if kind == "SWAP":
        return SWAP_MATRIX.copy()
    if kind in ROTATION_KINDS:
        if angle is None:
            raise ValueError(f"gate kind {kind!r} requires an angle")
        if kind in _ROTATION_1Q:
            return _ROTATION_1Q[kind](angle)
        return _controlled(_ROTATION_1Q[kind[1:]](angle))
    raise ValueError(f"unknown gate kind {kind!r}")


def gate_matrix_derivative(kind: str, angle: float) -> np.ndarray:
    """d U(angle) / d angle for the rotation kinds.

    For controlled rotations the derivative vanishes on the control=|0>
    subspace, so the 4x4 result has a zero upper-left block.
    """
    if kind in _ROTATION_1Q_DERIV:
        return _ROTATION_1Q_DERIV[kind](angle)
    if kind in CONTROLLED_ROTATION_KINDS:
        out = np.zeros((4, 4), dtype=np.complex128)
        out[2:, 2:] = _ROTATION_1Q_DERIV[kind[1:]](angle)
        return out
    raise ValueError(f"gate kind {kind!r} is not parameterized")


@dataclass(frozen=True)
class Gate:
    """One gate application: a kind, its target qubits, and an optional angle.

    For two-qubit kinds `targets` is (control, target) except SWAP, where the
    order is immaterial.
    """

    kind: str
    targets: Tuple[int, ...]
    angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in SINGLE_QUBIT_KINDS else 2
        if len(self.targets) != arity:
            raise ValueError(
                f"{self.kind} expects {arity} target(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"duplicate targets {self.targets}")
        if any(t < 0 for t in self.targets):
            raise ValueError(f"negative target in {self.targets}")
        if self.kind in ROTATION_KINDS and self.angle is None:
            raise ValueError(f"{self.kind} requires an angle")
        if self.kind not in ROTATION_KINDS and self.angle is not None:
            raise ValueError(f"{self.kind} takes no angle")

    def matrix(self) -> np.ndarray:
        return gate_matrix(self.kind, self.angle)
