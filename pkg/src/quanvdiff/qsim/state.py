"""Statevector type, gate application kernels, and Pauli-Z readout.

Convention: qubit q is bit q of the basis-state index (little-endian), so
basis index 5 = 0b101 has qubits 0 and 2 in |1>.

The private kernels operate in place on batches of states shaped
``(M, 2**n)`` using slice arithmetic (controlled gates touch only the
control=|1> subspace), which keeps memory traffic low; the public
single-state operations stay pure by copying first.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gates import (
    FIXED_1Q,
    Gate,
    ROTATION_KINDS,
    SINGLE_QUBIT_KINDS,
    rx,
    ry,
)

NORM_TOL = 1e-10


@dataclass
class Statevector:
    """Complex amplitudes of an n-qubit register (length 2**n, norm 1)."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (2 ** self.n_qubits,):
            raise ValueError(
                f"expected {2 ** self.n_qubits} amplitudes for "
                f"{self.n_qubits} qubits, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)
        if abs(self.norm_sq() - 1.0) > NORM_TOL:
            raise ValueError(f"state not normalized: |psi|^2 = {self.norm_sq()}")

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def copy(self) -> "Statevector":
        return Statevector(self.n_qubits, self.amplitudes.copy())


def zero_state(n_qubits: int) -> Statevector:
    amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return Statevector(n_qubits, amps)


def basis_state(n_qubits: int, index: int) -> Statevector:
    if not 0 <= index < 2 ** n_qubits:
        raise ValueError(f"basis index {index} out of range")
    amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
    amps[index] = 1.0
    return Statevector(n_qubits, amps)


@lru_cache(maxsize=32)
def _z_signs(n_qubits: int) -> np.ndarray:
    """(2**n, n) matrix of Z eigenvalues: entry [x, q] = +1 if bit q of x is 0."""
    idx = np.arange(2 ** n_qubits)
    bits = (idx[:, None] >> np.arange(n_qubits)[None, :]) & 1
    return (1.0 - 2.0 * bits).astype(np.float64)


# ---------------------------------------------------------------------------
# in-place kernels on (M, 2**n) batches
# ---------------------------------------------------------------------------

def _halves(amps: np.ndarray, n: int, q: int):
    """Views of the qubit-q |0> and |1> subspaces: two (M, hi, lo) arrays."""
    m = amps.shape[0]
    hi = 1 << (n - 1 - q)
    lo = 1 << q
    v = amps.reshape(m, hi, 2, lo)
    return v[:, :, 0, :], v[:, :, 1, :]


def _quarters(amps: np.ndarray, n: int, qa: int, qb: int):
    """Views for bit pair qa > qb, keyed (bit_qa, bit_qb)."""
    m = amps.shape[0]
    a = 1 << (n - 1 - qa)
    b = 1 << (qa - 1 - qb)
    c = 1 << qb
    v = amps.reshape(m, a, 2, b, 2, c)
    return {(i, j): v[:, :, i, :, j, :] for i in (0, 1) for j in (0, 1)}


def _ctrl_slices(amps: np.ndarray, n: int, control: int, target: int):
    """(target=|0>, target=|1>) views of the control=|1> subspace."""
    hi, lo = max(control, target), min(control, target)
    q = _quarters(amps, n, hi, lo)
    if control == hi:
        return q[(1, 0)], q[(1, 1)]
    return q[(0, 1)], q[(1, 1)]


def _mat2_inplace(a0: np.ndarray, a1: np.ndarray, mat: np.ndarray):
    """In-place 2x2 on a pair of equally-shaped views; mat (2,2) or (M,2,2)."""
    mat = mat.astype(a0.dtype, copy=False)
    if mat.ndim == 3:
        ext = (slice(None),) + (None,) * (a0.ndim - 1)
        m00, m01 = mat[:, 0, 0][ext], mat[:, 0, 1][ext]
        m10, m11 = mat[:, 1, 0][ext], mat[:, 1, 1][ext]
    else:
        m00, m01, m10, m11 = mat[0, 0], mat[0, 1], mat[1, 0], mat[1, 1]
    t0 = m00 * a0
    t0 += m01 * a1
    a1 *= m11
    a1 += m10 * a0
    a0[...] = t0


def _swap_views(a: np.ndarray, b: np.ndarray):
    tmp = a.copy()
    a[...] = b
    b[...] = tmp


def apply_inplace(amps: np.ndarray, n: int, kind: str, targets,
                  angle: float | None = None, dagger: bool = False) -> np.ndarray:
    """Apply one gate in place to a batch of states (M, 2**n)."""
    ctype = amps.dtype.type
    if kind in SINGLE_QUBIT_KINDS:
        q = targets[0]
        a0, a1 = _halves(amps, n, q)
        if kind == "Z":
            a1 *= -1.0
        elif kind == "Rz":
            a = -angle if dagger else angle
            a0 *= ctype(np.exp(-0.5j * a))
            a1 *= ctype(np.exp(0.5j * a))
        elif kind == "X":
            _swap_views(a0, a1)
        elif kind in ("Rx", "Ry"):
            a = -angle if dagger else angle
            _mat2_inplace(a0, a1, rx(a) if kind == "Rx" else ry(a))
        else:
            mat = FIXED_1Q[kind]
            if dagger:
                mat = mat.conj().T
            _mat2_inplace(a0, a1, mat)
        return amps
    c, t = targets
    if kind == "CNOT":
        s0, s1 = _ctrl_slices(amps, n, c, t)
        _swap_views(s0, s1)
    elif kind == "SWAP":
        quads = _quarters(amps, n, max(c, t), min(c, t))
        _swap_views(quads[(0, 1)], quads[(1, 0)])
    elif kind == "CRz":
        a = -angle if dagger else angle
        s0, s1 = _ctrl_slices(amps, n, c, t)
        s0 *= ctype(np.exp(-0.5j * a))
        s1 *= ctype(np.exp(0.5j * a))
    elif kind == "CRx":
        a = -angle if dagger else angle
        s0, s1 = _ctrl_slices(amps, n, c, t)
        _mat2_inplace(s0, s1, rx(a))
    else:
        raise ValueError(f"unknown gate kind {kind!r}")
    return amps


def apply_ctrl_mat_inplace(amps: np.ndarray, n: int, control: int, target: int,
                           mat: np.ndarray) -> np.ndarray:
    """In-place 2x2 `mat` on the target qubit of the control=|1> subspace."""
    s0, s1 = _ctrl_slices(amps, n, control, target)
    _mat2_inplace(s0, s1, mat)
    return amps


def apply_kernel(amps: np.ndarray, n: int, kind: str, targets,
                 angle: float | None = None, dagger: bool = False) -> np.ndarray:
    """Pure variant of apply_inplace: returns a new array."""
    return apply_inplace(amps.copy(), n, kind, targets, angle, dagger)


def apply_rows_rx_inplace(amps: np.ndarray, n: int, q: int,
                          angles: np.ndarray) -> np.ndarray:
    """In-place Rx with a distinct angle per batch row (used by encoding)."""
    a0, a1 = _halves(amps, n, q)
    _mat2_inplace(a0, a1, _rx_rows(angles))
    return amps


def _rx_rows(angles: np.ndarray) -> np.ndarray:
    c = np.cos(angles / 2.0)
    s = -1j * np.sin(angles / 2.0)
    out = np.empty((angles.size, 2, 2), dtype=np.complex128)
    out[:, 0, 0] = c
    out[:, 0, 1] = s
    out[:, 1, 0] = s
    out[:, 1, 1] = c
    return out


def _drx_rows(angles: np.ndarray) -> np.ndarray:
    c = -0.5j * np.cos(angles / 2.0)
    s = -0.5 * np.sin(angles / 2.0)
    out = np.empty((angles.size, 2, 2), dtype=np.complex128)
    out[:, 0, 0] = s
    out[:, 0, 1] = c
    out[:, 1, 0] = c
    out[:, 1, 1] = s
    return out


def _real_dot_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Re(sum_k conj(a)*b) per batch row, for equally-shaped complex views."""
    spec = "m" + "abcde"[: a.ndim - 1]
    sig = f"{spec},{spec}->m"
    return np.einsum(sig, a.real, b.real) + np.einsum(sig, a.imag, b.imag)


def pair_derivative_dot(lam: np.ndarray, phi: np.ndarray, dmat: np.ndarray,
                        slicer) -> np.ndarray:
    """2*Re<lam | dU | phi> per row, where dU acts as `dmat` on the two views
    produced by `slicer` and as zero elsewhere (controlled-rotation
    derivatives) or on the full pair split (single-qubit derivatives)."""
    l0, l1 = slicer(lam)
    p0, p1 = slicer(phi)
    dmat = dmat.astype(p0.dtype, copy=False)
    if dmat.ndim == 3:
        ext = (slice(None),) + (None,) * (p0.ndim - 1)
        d00, d01 = dmat[:, 0, 0][ext], dmat[:, 0, 1][ext]
        d10, d11 = dmat[:, 1, 0][ext], dmat[:, 1, 1][ext]
        diagonal = False
    else:
        d00, d01, d10, d11 = dmat[0, 0], dmat[0, 1], dmat[1, 0], dmat[1, 1]
        diagonal = d01 == 0 and d10 == 0  # z-axis rotation derivatives
    if diagonal:
        g = _real_dot_rows(l0, d00 * p0)
        g += _real_dot_rows(l1, d11 * p1)
        return 2.0 * g.astype(np.float64)
    e0 = d00 * p0
    e0 += d01 * p1
    g = _real_dot_rows(l0, e0)
    e0 = d10 * p0
    e0 += d11 * p1
    g += _real_dot_rows(l1, e0)
    return 2.0 * g.astype(np.float64)


def readout_z(amps: np.ndarray, n: int) -> np.ndarray:
    """Per-qubit <Z> for a batch of states: (M, 2**n) -> (M, n) float64."""
    probs = amps.real ** 2 + amps.imag ** 2
    return (probs @ _z_signs(n).astype(probs.dtype)).astype(np.float64)


def encode_angles(x: np.ndarray, dtype=np.complex128) -> np.ndarray:
    """Angle-encode rows of x: (M, n) -> (M, 2**n) with qubit q in Rx(x_q)|0>.

    Equivalent to applying Rx(x_q) on qubit q of |0...0> for every q; built
    directly as a Kronecker chain. Each fold appends one qubit as the lowest
    index bit, so qubits are folded high-to-low to keep qubit q at bit q.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m, n = x.shape
    cos = np.cos(x / 2.0)
    sin = -1j * np.sin(x / 2.0)
    amps = np.ones((m, 1), dtype=dtype)
    for q in range(n - 1, -1, -1):
        pair = np.stack([cos[:, q], sin[:, q]], axis=1).astype(dtype)
        amps = np.einsum("mk,mb->mkb", amps, pair).reshape(m, -1)
    return amps


# ---------------------------------------------------------------------------
# public single-state operations
# ---------------------------------------------------------------------------

def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Apply one gate; pure (returns a new Statevector) and norm-checked."""
    for t in gate.targets:
        if t >= state.n_qubits:
            raise ValueError(
                f"target {t} out of range for {state.n_qubits} qubits")
    amps = apply_kernel(state.amplitudes[None, :], state.n_qubits,
                        gate.kind, gate.targets, gate.angle)[0]
    return Statevector(state.n_qubits, amps)  # re-validates normalization


def expectation_z(state: Statevector, qubit: int) -> float:
    """<Z_qubit> computed exactly from the amplitudes (no sampling)."""
    if not 0 <= qubit < state.n_qubits:
        raise ValueError(f"qubit {qubit} out of range")
    probs = state.probabilities()
    return float(probs @ _z_signs(state.n_qubits)[:, qubit])


def angle_encode(x) -> Statevector:
    """Prepare qubit q in Rx(x_q)|0>; inputs are raw angles in radians."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("input must be a non-empty 1-D angle vector")
    amps = encode_angles(x[None, :])[0]
    return Statevector(x.size, amps)


def dense_unitary(gate: Gate, n_qubits: int) -> np.ndarray:
    """Full 2**n x 2**n matrix of a gate via identity padding.

    Built from kernel application columns; the tests carry their own
    independent Kronecker-product construction to check against.
    """
    dim = 2 ** n_qubits
    eye = np.eye(dim, dtype=np.complex128)
    cols = apply_kernel(eye, n_qubits, gate.kind, gate.targets, gate.angle)
    return cols.T
