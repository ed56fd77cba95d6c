"""Training-run orchestration: loop, logging, checkpointing, resume.

Every random quantity at step s comes from a stream keyed on
(seed, stream-tag, s) and batches are addressed by global step, so resuming
from a checkpoint reproduces the uninterrupted run exactly (optimizer
moments ride along in the checkpoint under ``opt.*`` paths).
"""
from __future__ import annotations

import os
import time
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import qsim
from .qsim.circuit import set_precision
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, denoiser_config_from_echo, schedule_from_echo
from .data import Dataset, batch_at_step, make_toy_dataset, load_image_folder, \
    split_dataset
from .denoiser import Denoiser
from .diffusion import adam_init, adam_step, loss_simple, make_schedule

LOG_NAME = "train_log.tsv"
FINAL_CKPT = "ckpt_final.qckpt"


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), 2718, int(step)]))


def load_run_dataset(cfg: RunConfig) -> Tuple[Dataset, Dataset]:
    """(train, validation) datasets for a run configuration."""
    if cfg.data_source == "toy":
        full = make_toy_dataset(cfg.n_per_class,
                                image_size=cfg.denoiser.image_size,
                                num_classes=cfg.denoiser.num_classes,
                                seed=cfg.seed)
    else:
        full = load_image_folder(cfg.data_root)
        if full.num_classes != cfg.denoiser.num_classes:
            raise ValueError(
                f"dataset has {full.num_classes} classes, model expects "
                f"{cfg.denoiser.num_classes}")
        if full.image_size != cfg.denoiser.image_size:
            raise ValueError(
                f"dataset images are {full.image_size}, model expects "
                f"{cfg.denoiser.image_size}")
    train, val = split_dataset(full, (1.0 - cfg.val_fraction, cfg.val_fraction),
                               seed=cfg.seed)
    return train, val


def _split_opt_state(all_params: Dict[str, np.ndarray]):
    """Separate model parameters from optimizer-state entries."""
    params, m, v = {}, {}, {}
    for key, arr in all_params.items():
        if key.startswith("opt.m."):
            m[key[6:]] = arr
        elif key.startswith("opt.v."):
            v[key[6:]] = arr
        elif key == "opt.step":
            continue
        else:
            params[key] = arr
    return params, m, v


def _merge_opt_state(params: Dict[str, np.ndarray], state: Dict) -> Dict[str, np.ndarray]:
    merged = dict(params)
    for key, arr in state["m"].items():
        merged[f"opt.m.{key}"] = arr
    for key, arr in state["v"].items():
        merged[f"opt.v.{key}"] = arr
    merged["opt.step"] = np.array(float(state["step"]))
    return merged


def write_checkpoint(path, cfg: RunConfig, params: Dict[str, np.ndarray],
                     state: Dict, step: int, meta: Optional[Dict] = None) -> None:
    save_checkpoint(path, Checkpoint(
        seed=cfg.seed, step=step, config=cfg.echo(),
        params=_merge_opt_state(params, state),
        meta={k: str(v) for k, v in (meta or {}).items()}))


def read_checkpoint(path):
    """Returns (checkpoint, denoiser_config, schedule_kind, schedule_T,
    params, adam_state)."""
    ck = load_checkpoint(path)
    den_cfg = denoiser_config_from_echo(ck.config)
    kind, T = schedule_from_echo(ck.config)
    params, m, v = _split_opt_state(ck.params)
    step = int(ck.params.get("opt.step", np.array(0.0)))
    state = {"step": step, "m": m, "v": v}
    return ck, den_cfg, kind, T, params, state


def run_training(cfg: RunConfig, out_dir: Optional[str] = None,
                 resume: Optional[str] = None,
                 log_fn: Optional[Callable[[str], None]] = None) -> str:
    """Run (or resume) a training loop; returns the final checkpoint path.

    Appends one tab-separated log line per step: step, loss, wall seconds,
    cumulative circuit evaluations. A non-finite loss aborts with the last
    good checkpoint retained on disk.
    """
    out_dir = out_dir or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    set_precision(cfg.precision)
    train_ds, _ = load_run_dataset(cfg)

    den = Denoiser(cfg.denoiser)
    sched = make_schedule(cfg.schedule_kind, cfg.schedule_T)
    if resume:
        ck, den_cfg, kind, T, params, state = read_checkpoint(resume)
        if den_cfg != cfg.denoiser or (kind, T) != (cfg.schedule_kind, cfg.schedule_T):
            raise ValueError(
                "checkpoint configuration does not match the run config")
        start_step = ck.step
    else:
        params = den.init_params(cfg.seed)
        state = adam_init(params)
        start_step = 0

    log_path = os.path.join(out_dir, LOG_NAME)
    mode = "a" if (resume and os.path.exists(log_path)) else "w"
    t0 = time.perf_counter()
    try:
        with open(log_path, mode) as log:
            if mode == "w":
                log.write("step\tloss\twall_s\tcircuit_evals\n")
            for step in range(start_step + 1, cfg.train.total_steps + 1):
                x, y = batch_at_step(train_ds, cfg.train.batch_size, cfg.seed,
                                     step)
                rng = step_rng(cfg.seed, step)
                # a NumericalError aborts here, leaving the last periodic
                # checkpoint as the most recent state on disk
                loss, grads, _ = loss_simple(den, params, sched, cfg.train,
                                             x, y, rng)
                adam_step(params, grads, state, cfg.train)
                line = (f"{step}\t{loss:.12e}\t{time.perf_counter() - t0:.3f}\t"
                        f"{qsim.circuit_eval_count()}")
                log.write(line + "\n")
                log.flush()
                if log_fn:
                    log_fn(line)
                if step % cfg.checkpoint_every == 0:
                    write_checkpoint(
                        os.path.join(out_dir, f"ckpt_step_{step}.qckpt"),
                        cfg, params, state, step)
        final = os.path.join(out_dir, FINAL_CKPT)
        write_checkpoint(final, cfg, params, state, cfg.train.total_steps)
    finally:
        set_precision("f64")
    return final


def read_log_losses(out_dir: str) -> np.ndarray:
    path = os.path.join(out_dir, LOG_NAME)
    losses = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            losses.append(float(line.split("\t")[1]))
    return np.asarray(losses)
