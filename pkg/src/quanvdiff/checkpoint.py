"""Checkpoint files: a structured-text manifest followed by a raw payload.

Layout (all text lines tab-separated, UTF-8):

    quanvdiff-checkpoint 1
    seed<TAB><int>
    step<TAB><int>
    config<TAB><key><TAB><value>        (one line per config entry)
    meta<TAB><key><TAB><value>          (optional free-form metadata)
    param<TAB><path><TAB><shape-csv><TAB>f8
    ...
    payload<TAB><total element count>
    <blank line>
    <raw little-endian float64 payload, parameters in manifest order>

Optimizer state rides along as ordinary entries under ``opt.m.*`` /
``opt.v.*`` paths so a resumed run continues exactly.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

MAGIC = "quanvdiff-checkpoint 1"


@dataclass
class Checkpoint:
    seed: int
    step: int
    config: Dict[str, str]
    params: Dict[str, np.ndarray]
    meta: Dict[str, str] = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [MAGIC, f"seed\t{ckpt.seed}", f"step\t{ckpt.step}"]
    for key in sorted(ckpt.config):
        lines.append(f"config\t{key}\t{ckpt.config[key]}")
    for key in sorted(ckpt.meta):
        lines.append(f"meta\t{key}\t{ckpt.meta[key]}")
    order = sorted(ckpt.params)
    total = 0
    for name in order:
        arr = ckpt.params[name]
        shape = ",".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"param\t{name}\t{shape}\tf8")
        total += arr.size
    lines.append(f"payload\t{total}")
    lines.append("")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("utf-8"))
    for name in order:
        buf.write(np.ascontiguousarray(ckpt.params[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_end = blob.find(b"\n\n")
    if head_end < 0:
        raise ValueError(f"{path}: missing manifest terminator")
    header = blob[:head_end].decode("utf-8").splitlines()
    payload = blob[head_end + 2:]
    if not header or header[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    seed = step = None
    config: Dict[str, str] = {}
    meta: Dict[str, str] = {}
    entries = []
    declared: Optional[int] = None
    for line in header[1:]:
        fields = line.split("\t")
        tag = fields[0]
        if tag == "seed":
            seed = int(fields[1])
        elif tag == "step":
            step = int(fields[1])
        elif tag == "config":
            config[fields[1]] = fields[2] if len(fields) > 2 else ""
        elif tag == "meta":
            meta[fields[1]] = fields[2] if len(fields) > 2 else ""
        elif tag == "param":
            name, shape_csv, dtype = fields[1], fields[2], fields[3]
            if dtype != "f8":
                raise ValueError(f"{path}: unsupported element type {dtype}")
            shape = () if shape_csv == "scalar" else tuple(
                int(s) for s in shape_csv.split(","))
            entries.append((name, shape))
        elif tag == "payload":
            declared = int(fields[1])
        else:
            raise ValueError(f"{path}: unknown manifest tag {tag!r}")
    if seed is None or step is None or declared is None:
        raise ValueError(f"{path}: incomplete manifest")
    expected = sum(int(np.prod(s, dtype=np.int64)) if s else 1 for _, s in entries)
    if expected != declared:
        raise ValueError(
            f"{path}: payload count {declared} != manifest total {expected}")
    if len(payload) < declared * 8:
        raise ValueError(f"{path}: truncated payload "
                         f"({len(payload)} bytes, need {declared * 8})")
    flat = np.frombuffer(payload, dtype="<f8", count=declared)
    params: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = flat[offset:offset + size].reshape(shape).astype(np.float64)
        params[name] = arr.copy()
        offset += size
    return Checkpoint(seed=seed, step=step, config=config, params=params, meta=meta)
