"""Quanvolutional layer and the hybrid residual blocks built on it.

``quanvolve`` sweeps a shared variational circuit over non-overlapping
k x k patches, three channels at a time, writing the per-qubit readouts back
to the same positions (shape preserving, drop-in for a same-width
convolution). Activations are squashed through 2*arctan before angle
encoding so the encoding stays injective on (-pi, pi).

``quan_resnet_block`` swaps the first convolution of a residual block for a
quanvolution; ``q_resnet_block`` routes the leading fraction of bottleneck
channels through two sequential circuits while the rest keep the classical
convolutions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .qsim import AnsatzSpec, adjoint_backward, run_circuit_batch

CHANNEL_GROUP = 3


@dataclass(frozen=True)
class QuanvConfig:
    """Patch sweep configuration; n_qubits = patch_size**2 * 3."""

    patch_size: int = 2
    stride: Optional[int] = None  # defaults to patch_size; only that is supported
    family: str = "HQConv"
    n_layers: int = 1

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if self.stride != self.patch_size:
            raise ValueError(
                "only non-overlapping sweeps are supported: stride "
                f"{self.stride} != patch_size {self.patch_size}")

    @property
    def ansatz(self) -> AnsatzSpec:
        return AnsatzSpec(self.family,
                          self.patch_size * self.patch_size * CHANNEL_GROUP,
                          self.n_layers)


@dataclass(frozen=True)
class BottleneckConfig:
    """Fraction of bottleneck channels routed through 12-qubit circuits."""

    rho: float = 0.2
    family: str = "HQConv"
    n_layers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def ansatz(self) -> AnsatzSpec:
        return AnsatzSpec(self.family, 4 * CHANNEL_GROUP, self.n_layers)


def quantum_channel_count(rho: float, channels: int) -> int:
    """Channels routed through circuits: floor(rho * C / 3) * 3."""
    return int(np.floor(rho * channels / CHANNEL_GROUP)) * CHANNEL_GROUP


def scale_to_angles(u: np.ndarray) -> np.ndarray:
    return 2.0 * np.arctan(u)


def _angle_scale_grad(u: np.ndarray) -> np.ndarray:
    return 2.0 / (1.0 + u * u)


def _patch_axes(data: np.ndarray, k: int):
    """(B, H, W, C) -> (M, k*k*3) patch rows plus the shape bookkeeping.

    Row order is (batch, patch_row, patch_col, channel_group); qubit index
    within a row is c_local * k^2 + dy * k + dx.
    """
    b, h, w, c = data.shape
    hp, wp, g = h // k, w // k, c // CHANNEL_GROUP
    arr = data.reshape(b, hp, k, wp, k, g, CHANNEL_GROUP)
    arr = arr.transpose(0, 1, 3, 5, 6, 2, 4)  # b, hp, wp, g, 3, k, k
    return arr.reshape(b * hp * wp * g, CHANNEL_GROUP * k * k), (b, hp, wp, g)


def _unpatch(rows: np.ndarray, shape, k: int) -> np.ndarray:
    b, hp, wp, g = shape
    arr = rows.reshape(b, hp, wp, g, CHANNEL_GROUP, k, k)
    arr = arr.transpose(0, 1, 5, 2, 6, 3, 4)  # b, hp, k, wp, k, g, 3
    return arr.reshape(b, hp * k, wp * k, g * CHANNEL_GROUP)


def quanvolve(x: ad.Tensor, cfg: QuanvConfig, angles: ad.Tensor) -> ad.Tensor:
    """Shape-preserving circuit sweep over patches and 3-channel groups.

    Every patch/group shares the same trainable angles (weight sharing, like
    a convolution kernel). Gradients flow to both the angles and the encoded
    inputs via an exact adjoint sweep; parameter-shift evaluation of the same
    quantities is available in the circuit module and pinned to this path by
    tests.
    """
    x = ad.as_tensor(x)
    angles = ad.as_tensor(angles)
    k = cfg.patch_size
    if x.data.ndim != 4:
        raise ValueError(f"expected (B, H, W, C) input, got shape {x.data.shape}")
    b, h, w, c = x.data.shape
    if h % k or w % k:
        raise ValueError(f"spatial size {h}x{w} not divisible by patch {k}")
    if c % CHANNEL_GROUP:
        raise ValueError(f"channels {c} not divisible by {CHANNEL_GROUP}")
    spec = cfg.ansatz
    if angles.data.shape != (spec.parameter_count,):
        raise ValueError(
            f"angles shape {angles.data.shape} != ({spec.parameter_count},) "
            f"required by {spec.family} L={spec.n_layers}")

    rows, shape = _patch_axes(x.data, k)
    encoded = scale_to_angles(rows)
    outputs = run_circuit_batch(spec, angles.data, encoded)
    data = _unpatch(outputs, shape, k)

    def backward(g):
        grows, _ = _patch_axes(g, k)
        dang, denc = adjoint_backward(spec, angles.data, encoded, grows)
        if angles.requires_grad:
            angles.accumulate(dang.sum(axis=0))
        if x.requires_grad:
            x.accumulate(_unpatch(denc * _angle_scale_grad(rows), shape, k))

    return ad.make_node(data, (x, angles), backward)


def _cond_shift(h: ad.Tensor, cond: ad.Tensor, w: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    shift = ad.linear(ad.silu(cond), w, b)
    bsz, ch = shift.data.shape
    return ad.add(h, ad.reshape(shift, (bsz, 1, 1, ch)))


def quan_resnet_block(x: ad.Tensor, cond: ad.Tensor, params: Dict[str, ad.Tensor],
                      quanv_cfg: QuanvConfig, norm_groups: int,
                      quantum_enabled: bool = True) -> ad.Tensor:
    """Residual block whose first convolution is a quanvolution.

    With quantum_enabled=False the sweep is bypassed (identity in its slot),
    which matches a classical block whose first convolution is the identity.
    """
    a = ad.silu(ad.group_norm(x, params["gn1_gamma"], params["gn1_beta"], norm_groups))
    if quantum_enabled:
        h = quanvolve(a, quanv_cfg, params["quanv_angles"])
    else:
        h = a
    h = _cond_shift(h, cond, params["cond_w"], params["cond_b"])
    h = ad.silu(ad.group_norm(h, params["gn2_gamma"], params["gn2_beta"], norm_groups))
    h = ad.conv2d(h, params["conv2_w"], params["conv2_b"])
    return ad.add(h, x)


def q_resnet_block(x: ad.Tensor, cond: ad.Tensor, params: Dict[str, ad.Tensor],
                   bneck_cfg: BottleneckConfig, norm_groups: int) -> ad.Tensor:
    """Bottleneck residual block with both convolutions replaced by circuits
    on the first floor(rho*C/3)*3 channels; the rest stay classical.

    Requires 2x2 spatial input (one 12-qubit circuit per 3-channel group).
    The two circuit stages carry independent angle vectors.
    """
    bsz, h, w, c = x.data.shape
    if (h, w) != (2, 2):
        raise ValueError(f"bottleneck block expects 2x2 spatial input, got {h}x{w}")
    q = quantum_channel_count(bneck_cfg.rho, c)
    vqc_cfg = QuanvConfig(patch_size=2, family=bneck_cfg.family,
                          n_layers=bneck_cfg.n_layers)

    def split_apply(t: ad.Tensor, angles_key: str, conv_key: str) -> ad.Tensor:
        parts = []
        if q > 0:
            parts.append(quanvolve(ad.channel_slice(t, 0, q), vqc_cfg,
                                   params[angles_key]))
        if q < c:
            parts.append(ad.conv2d(ad.channel_slice(t, q, c),
                                   params[f"{conv_key}_w"], params[f"{conv_key}_b"]))
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    a = ad.silu(ad.group_norm(x, params["gn1_gamma"], params["gn1_beta"], norm_groups))
    hid = split_apply(a, "vqc1_angles", "conv1")
    hid = _cond_shift(hid, cond, params["cond_w"], params["cond_b"])
    hid = ad.silu(ad.group_norm(hid, params["gn2_gamma"], params["gn2_beta"], norm_groups))
    out = split_apply(hid, "vqc2_angles", "conv2")
    return ad.add(out, x)
