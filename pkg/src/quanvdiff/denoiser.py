"""Class-conditioned U-Net-style noise predictor hosting the hybrid blocks.

Layout: a stem convolution, encoder levels of channel-preserving residual
blocks with 1x1 transition convolutions and 2x2 average-pool downsampling
after every level, a bottleneck block at 2x2 spatial size, and a mirrored
decoder with skip concatenations. Conditioning = sinusoidal step embedding
passed through a small MLP plus a learned class-embedding row, injected as a
per-channel shift into every residual block.

``quantum_position`` selects where circuits sit:

* ``none``            - purely classical denoiser
* ``bottleneck_only`` - bottleneck block routes channels through circuits
* ``p1_encoder``      - quanvolution in the first encoder level, plus the
                        quantum bottleneck
* ``p2_deeper``       - quanvolution in the second encoder level, plus the
                        quantum bottleneck
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .quanv import (
    BottleneckConfig,
    QuanvConfig,
    q_resnet_block,
    quan_resnet_block,
    quantum_channel_count,
)

QUANTUM_POSITIONS = ("none", "p1_encoder", "p2_deeper", "bottleneck_only")


def time_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos features of log-spaced frequencies: (B,) -> (B, dim)."""
    if dim % 2:
        raise ValueError("embedding dim must be even")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if (t < 0).any():
        raise ValueError("step index must be non-negative")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    out = np.empty((t.size, dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 8
    in_channels: int = 3
    base_channels: int = 12
    channel_multipliers: Tuple[int, ...] = (1, 2)
    res_blocks_per_level: int = 1
    time_embed_dim: int = 32
    num_classes: int = 4
    quantum_position: str = "none"
    norm_groups: int = 3
    self_conditioning: bool = False
    quanv: QuanvConfig = field(default_factory=QuanvConfig)
    bottleneck: BottleneckConfig = field(default_factory=BottleneckConfig)

    def __post_init__(self):
        if self.quantum_position not in QUANTUM_POSITIONS:
            raise ValueError(
                f"quantum_position must be one of {QUANTUM_POSITIONS}, "
                f"got {self.quantum_position!r}")
        if self.in_channels != 3:
            raise ValueError("only 3-channel images are supported")
        levels = len(self.channel_multipliers)
        if self.image_size % (2 ** levels):
            raise ValueError(
                f"image_size {self.image_size} must be divisible by "
                f"2**levels = {2 ** levels}")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        for ch in self.level_channels():
            if ch % self.norm_groups:
                raise ValueError(
                    f"channel width {ch} not divisible by norm_groups "
                    f"{self.norm_groups}")
        if self.quantum_position != "none":
            if self.bottleneck_spatial() != 2:
                raise ValueError(
                    "quantum bottleneck needs 2x2 spatial size; got "
                    f"{self.bottleneck_spatial()} from image_size "
                    f"{self.image_size} with {levels} level(s)")
            for ch in self.quantum_widths():
                if ch % 3:
                    raise ValueError(
                        f"channel width {ch} at a quantum insertion point "
                        "must be divisible by 3")

    def level_channels(self) -> Tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    def bottleneck_channels(self) -> int:
        return self.level_channels()[-1]

    def bottleneck_spatial(self) -> int:
        return self.image_size // (2 ** len(self.channel_multipliers))

    def quanv_level(self) -> Optional[int]:
        if self.quantum_position == "p1_encoder":
            return 0
        if self.quantum_position == "p2_deeper":
            return 1 if len(self.channel_multipliers) > 1 else 0
        return None

    def quantum_widths(self) -> Tuple[int, ...]:
        widths = []
        lvl = self.quanv_level()
        if lvl is not None:
            widths.append(self.level_channels()[lvl])
        widths.append(self.bottleneck_channels())
        return tuple(widths)


def res_block(x: ad.Tensor, cond: ad.Tensor, params: Dict[str, ad.Tensor],
              norm_groups: int) -> ad.Tensor:
    """Classical residual block: gn-silu-conv, +cond shift, gn-silu-conv, +skip."""
    h = ad.silu(ad.group_norm(x, params["gn1_gamma"], params["gn1_beta"], norm_groups))
    h = ad.conv2d(h, params["conv1_w"], params["conv1_b"])
    shift = ad.linear(ad.silu(cond), params["cond_w"], params["cond_b"])
    bsz, ch = shift.data.shape
    h = ad.add(h, ad.reshape(shift, (bsz, 1, 1, ch)))
    h = ad.silu(ad.group_norm(h, params["gn2_gamma"], params["gn2_beta"], norm_groups))
    h = ad.conv2d(h, params["conv2_w"], params["conv2_b"])
    return ad.add(h, x)


class Denoiser:
    """Parameter registry plus the forward pass for one DenoiserConfig."""

    def __init__(self, cfg: DenoiserConfig):
        self.cfg = cfg
        self._shapes = self._build_shapes()

    # -- parameter registry -------------------------------------------------

    def _block_shapes(self, prefix: str, ch: int, kind: str) -> Dict[str, tuple]:
        cfg = self.cfg
        shapes = {
            f"{prefix}.gn1_gamma": (ch,),
            f"{prefix}.gn1_beta": (ch,),
            f"{prefix}.gn2_gamma": (ch,),
            f"{prefix}.gn2_beta": (ch,),
            f"{prefix}.cond_w": (cfg.time_embed_dim, ch),
            f"{prefix}.cond_b": (ch,),
            f"{prefix}.conv2_w": (3, 3, ch, ch),
            f"{prefix}.conv2_b": (ch,),
        }
        if kind == "classical":
            shapes[f"{prefix}.conv1_w"] = (3, 3, ch, ch)
            shapes[f"{prefix}.conv1_b"] = (ch,)
        elif kind == "quanv":
            shapes[f"{prefix}.quanv_angles"] = (cfg.quanv.ansatz.parameter_count,)
        elif kind == "qbottleneck":
            q = quantum_channel_count(cfg.bottleneck.rho, ch)
            pcount = cfg.bottleneck.ansatz.parameter_count
            del shapes[f"{prefix}.conv2_w"], shapes[f"{prefix}.conv2_b"]
            if q > 0:
                shapes[f"{prefix}.vqc1_angles"] = (pcount,)
                shapes[f"{prefix}.vqc2_angles"] = (pcount,)
            if q < ch:
                shapes[f"{prefix}.conv1_w"] = (3, 3, ch - q, ch - q)
                shapes[f"{prefix}.conv1_b"] = (ch - q,)
                shapes[f"{prefix}.conv2_w"] = (3, 3, ch - q, ch - q)
                shapes[f"{prefix}.conv2_b"] = (ch - q,)
        else:
            raise ValueError(kind)
        return shapes

    def _build_shapes(self) -> Dict[str, tuple]:
        cfg = self.cfg
        chans = cfg.level_channels()
        emb = cfg.time_embed_dim
        in_ch = 6 if cfg.self_conditioning else 3
        shapes: Dict[str, tuple] = {
            "temb.l1_w": (emb, emb),
            "temb.l1_b": (emb,),
            "temb.l2_w": (emb, emb),
            "temb.l2_b": (emb,),
            "cls.table": (cfg.num_classes, emb),
            "stem.conv_w": (3, 3, in_ch, chans[0]),
            "stem.conv_b": (chans[0],),
        }
        qlvl = cfg.quanv_level()
        prev = chans[0]
        for li, ch in enumerate(chans):
            if ch != prev:
                shapes[f"enc{li}.proj_w"] = (1, 1, prev, ch)
                shapes[f"enc{li}.proj_b"] = (ch,)
            for bi in range(cfg.res_blocks_per_level):
                kind = "quanv" if (li == qlvl and bi == 0) else "classical"
                shapes.update(self._block_shapes(f"enc{li}.b{bi}", ch, kind))
            prev = ch
        bkind = "classical" if cfg.quantum_position == "none" else "qbottleneck"
        shapes.update(self._block_shapes("mid.b0", chans[-1], bkind))
        prev = chans[-1]
        for li in range(len(chans) - 1, -1, -1):
            ch = chans[li]
            shapes[f"dec{li}.proj_w"] = (1, 1, prev + ch, ch)
            shapes[f"dec{li}.proj_b"] = (ch,)
            for bi in range(cfg.res_blocks_per_level):
                shapes.update(self._block_shapes(f"dec{li}.b{bi}", ch, "classical"))
            prev = ch
        shapes["out.gn_gamma"] = (chans[0],)
        shapes["out.gn_beta"] = (chans[0],)
        shapes["out.conv_w"] = (3, 3, chans[0], 3)
        shapes["out.conv_b"] = (3,)
        return shapes

    def param_shapes(self) -> Dict[str, tuple]:
        return dict(self._shapes)

    def init_params(self, seed: int) -> Dict[str, np.ndarray]:
        """Deterministic initialization: truncated normal (std 0.02)
        convolution/linear weights, zero biases, unit norm scales, a zero
        final convolution (the model starts predicting zero noise),
        unit-scale class-embedding rows, and circuit angles uniform in
        [-0.1, 0.1]."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
        params: Dict[str, np.ndarray] = {}
        for path, shape in self._shapes.items():
            if path.endswith("_angles"):
                params[path] = rng.uniform(-0.1, 0.1, shape)
            elif path.endswith(("gn_gamma", "gn1_gamma", "gn2_gamma")):
                params[path] = np.ones(shape)
            elif path == "out.conv_w":
                params[path] = np.zeros(shape)
            elif path.endswith(("_b", "_beta", "gn_beta")):
                params[path] = np.zeros(shape)
            elif path == "cls.table":
                # unit-scale rows so class identities separate from step one
                params[path] = rng.standard_normal(shape)
            elif path.endswith("_w"):
                params[path] = _trunc_normal(rng, shape, std=0.02)
            else:
                raise AssertionError(f"unclassified parameter path {path}")
        return params

    # -- forward ------------------------------------------------------------

    def forward(self, params: Dict[str, ad.Tensor], x_t, t, y,
                self_cond=None) -> ad.Tensor:
        """Predict the injected noise for a batch: (B, S, S, 3) -> same shape."""
        cfg = self.cfg
        x_t = ad.as_tensor(x_t)
        bsz, h, w, c = x_t.data.shape
        if (h, w, c) != (cfg.image_size, cfg.image_size, 3):
            raise ValueError(
                f"input shape {x_t.data.shape} incompatible with image_size "
                f"{cfg.image_size}")
        y = np.asarray(y, dtype=np.int64)
        if y.min() < 0 or y.max() >= cfg.num_classes:
            raise ValueError(f"class labels out of range [0, {cfg.num_classes})")

        p = params
        te = ad.Tensor(time_embedding(t, cfg.time_embed_dim))
        cond = ad.linear(ad.silu(ad.linear(te, p["temb.l1_w"], p["temb.l1_b"])),
                         p["temb.l2_w"], p["temb.l2_b"])
        cond = ad.add(cond, ad.embed_lookup(p["cls.table"], y))

        if cfg.self_conditioning:
            sc = ad.as_tensor(self_cond) if self_cond is not None else \
                ad.Tensor(np.zeros_like(x_t.data))
            hcur = ad.concat([x_t, sc], axis=-1)
        else:
            if self_cond is not None:
                raise ValueError("self_cond passed but self_conditioning is off")
            hcur = x_t
        hcur = ad.conv2d(hcur, p["stem.conv_w"], p["stem.conv_b"])

        def block_params(prefix):
            return {k[len(prefix) + 1:]: p[k] for k in self._shapes if
                    k.startswith(prefix + ".")}

        qlvl = cfg.quanv_level()
        skips = []
        chans = cfg.level_channels()
        for li in range(len(chans)):
            if f"enc{li}.proj_w" in self._shapes:
                hcur = ad.conv2d(hcur, p[f"enc{li}.proj_w"], p[f"enc{li}.proj_b"])
            for bi in range(cfg.res_blocks_per_level):
                prefix = f"enc{li}.b{bi}"
                if li == qlvl and bi == 0:
                    hcur = quan_resnet_block(hcur, cond, block_params(prefix),
                                             cfg.quanv, cfg.norm_groups)
                else:
                    hcur = res_block(hcur, cond, block_params(prefix),
                                     cfg.norm_groups)
            skips.append(hcur)
            hcur = ad.downsample_avg(hcur)

        if cfg.quantum_position == "none":
            hcur = res_block(hcur, cond, block_params("mid.b0"), cfg.norm_groups)
        else:
            hcur = q_resnet_block(hcur, cond, block_params("mid.b0"),
                                  cfg.bottleneck, cfg.norm_groups)

        for li in range(len(chans) - 1, -1, -1):
            hcur = ad.upsample_nearest(hcur)
            hcur = ad.concat([hcur, skips[li]], axis=-1)
            hcur = ad.conv2d(hcur, p[f"dec{li}.proj_w"], p[f"dec{li}.proj_b"])
            for bi in range(cfg.res_blocks_per_level):
                hcur = res_block(hcur, cond, block_params(f"dec{li}.b{bi}"),
                                 cfg.norm_groups)

        hcur = ad.silu(ad.group_norm(hcur, p["out.gn_gamma"], p["out.gn_beta"],
                                     cfg.norm_groups))
        return ad.conv2d(hcur, p["out.conv_w"], p["out.conv_b"])


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) with redraws outside two standard deviations."""
    out = rng.standard_normal(shape)
    for _ in range(8):
        mask = np.abs(out) > 2.0
        if not mask.any():
            break
        out[mask] = rng.standard_normal(int(mask.sum()))
    return np.clip(out, -2.0, 2.0) * std


def wrap_params(params: Dict[str, np.ndarray],
                requires_grad: bool = True) -> Dict[str, ad.Tensor]:
    """Wrap raw arrays as autodiff leaves (sorted paths, stable iteration)."""
    return {k: ad.Tensor(params[k], requires_grad=requires_grad)
            for k in sorted(params)}


def collect_grads(wrapped: Dict[str, ad.Tensor]) -> Dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in wrapped.items()}
