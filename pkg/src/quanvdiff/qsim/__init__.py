"""Dense statevector simulation of variational circuits.

Public surface: gate records, the Statevector type, angle encoding, ansatz
templates, circuit evaluation with per-qubit Pauli-Z readout, and exact
gradients (shift rules plus an adjoint sweep for training).
"""
from .ansatz import ANSATZ_FAMILIES, AnsatzSpec, SlotGate, build_ansatz
from .circuit import (
    adjoint_backward,
    circuit_eval_count,
    input_shift_grad,
    parameter_shift_grad,
    reset_circuit_eval_count,
    run_circuit,
    run_circuit_batch,
    shift_terms,
    thread_count,
)
from .gates import GATE_KINDS, Gate, gate_matrix, gate_matrix_derivative
from .state import (
    Statevector,
    angle_encode,
    apply_gate,
    basis_state,
    dense_unitary,
    expectation_z,
    zero_state,
)

__all__ = [
    "ANSATZ_FAMILIES",
    "AnsatzSpec",
    "GATE_KINDS",
    "Gate",
    "SlotGate",
    "Statevector",
    "adjoint_backward",
    "angle_encode",
    "apply_gate",
    "basis_state",
    "build_ansatz",
    "circuit_eval_count",
    "dense_unitary",
    "expectation_z",
    "gate_matrix",
    "gate_matrix_derivative",
    "input_shift_grad",
    "parameter_shift_grad",
    "reset_circuit_eval_count",
    "run_circuit",
    "run_circuit_batch",
    "shift_terms",
    "thread_count",
    "zero_state",
]
