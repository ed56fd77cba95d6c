"""Parameterized circuit templates over three channel groups.

Three families are supported:

* ``HQConv``: two stages per layer. Stage A entangles qubits inside each of
  the three channel groups (group size g = n/3): controlled-rotation pairs
  (t, t+2) for t in [0, g-2), then the pair (0, 1), each pair receiving CRz
  followed by CRx with independent angles. Stage B entangles across groups:
  for each in-group position s, pairs (q_s, q_{s+g}) and (q_{s+g}, q_{s+2g}),
  same CRz-then-CRx pattern. The pairing is a fixed convention of this
  implementation.
* ``FQConv``: two ring stages per layer over all n qubits: first CRz on
  every pair (t, (t+1) mod n), then CRx on the same ring.
* ``OnlyRotations``: Rx, Ry, Rz on every qubit, no entanglement
  (3*n parameters per layer); baseline for ablation runs.

``build_ansatz`` emits a deterministic gate sequence whose angles are read
from a flat parameter vector via per-gate slot indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

ANSATZ_FAMILIES = ("HQConv", "FQConv", "OnlyRotations")
CHANNEL_GROUPS = 3


@dataclass(frozen=True)
class AnsatzSpec:
    """Declarative description of a trainable circuit template."""

    family: str
    n_qubits: int
    n_layers: int = 1

    def __post_init__(self):
        if self.family not in ANSATZ_FAMILIES:
            raise ValueError(
                f"unsupported ansatz family {self.family!r}; "
                f"expected one of {ANSATZ_FAMILIES}")
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.n_layers < 1:
            raise ValueError("n_layers must be positive")
        if self.family in ("HQConv", "FQConv") and self.n_qubits % CHANNEL_GROUPS:
            raise ValueError(
                f"{self.family} needs n_qubits divisible by {CHANNEL_GROUPS}, "
                f"got {self.n_qubits}")
        if self.family == "FQConv" and self.n_qubits < 2:
            raise ValueError("FQConv needs at least 2 qubits")

    @property
    def parameter_count(self) -> int:
        return len(build_ansatz(self))


@dataclass(frozen=True)
class SlotGate:
    """A parameterized gate whose angle is params[slot]."""

    kind: str
    targets: Tuple[int, ...]
    slot: int


def _pair_block(pairs, start_slot) -> Tuple[List[SlotGate], int]:
    gates = []
    slot = start_slot
    for c, t in pairs:
        gates.append(SlotGate("CRz", (c, t), slot))
        gates.append(SlotGate("CRx", (c, t), slot + 1))
        slot += 2
    return gates, slot


def _hqconv_layer(n: int, start_slot: int) -> Tuple[List[SlotGate], int]:
    g = n // CHANNEL_GROUPS
    gates: List[SlotGate] = []
    slot = start_slot
    for group in range(CHANNEL_GROUPS):
        base = group * g
        pairs = [(base + t, base + t + 2) for t in range(g - 2)]
        if g >= 2:
            pairs.append((base, base + 1))
        sub, slot = _pair_block(pairs, slot)
        gates.extend(sub)
    cross = []
    for s in range(g):
        cross.append((s, s + g))
        cross.append((s + g, s + 2 * g))
    sub, slot = _pair_block(cross, slot)
    gates.extend(sub)
    return gates, slot


def _fqconv_layer(n: int, start_slot: int) -> Tuple[List[SlotGate], int]:
    gates: List[SlotGate] = []
    slot = start_slot
    for kind in ("CRz", "CRx"):
        for t in range(n):
            gates.append(SlotGate(kind, (t, (t + 1) % n), slot))
            slot += 1
    return gates, slot


def _rotations_layer(n: int, start_slot: int) -> Tuple[List[SlotGate], int]:
    gates: List[SlotGate] = []
    slot = start_slot
    for q in range(n):
        for kind in ("Rx", "Ry", "Rz"):
            gates.append(SlotGate(kind, (q,), slot))
            slot += 1
    return gates, slot

_LAYER_BUILDERS = {
    "HQConv": _hqconv_layer,
    "FQConv": _fqconv_layer,
    "OnlyRotations": _rotations_layer,
}


def build_ansatz(spec: AnsatzSpec) -> List[SlotGate]:
    """Deterministic gate sequence for `spec`; slots run 0..parameter_count-1."""
    gates: List[SlotGate] = []
    slot = 0
    builder = _LAYER_BUILDERS[spec.family]
    for _ in range(spec.n_layers):
        layer, slot = builder(spec.n_qubits, slot)
        gates.extend(layer)
    return gates
