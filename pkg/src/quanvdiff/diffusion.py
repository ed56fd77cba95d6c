"""Noise schedules, forward corruption, training objective, and the
ancestral reverse sampler.

Steps are 1-based: t runs over {1, ..., T}; the schedule arrays are stored
0-indexed (entry i describes step i+1) and the ``*_t`` accessors take step
indices. The reverse kernel keeps its variance fixed at beta_t.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .denoiser import Denoiser, collect_grads, wrap_params

SCHEDULE_KINDS = ("linear", "cosine")
LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02
COSINE_OFFSET = 0.008
COSINE_BETA_CLIP = 0.999


class NumericalError(RuntimeError):
    """Raised when training or sampling produces non-finite values."""


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sqrt_alpha_bar: np.ndarray = field(init=False)
    sqrt_one_minus_alpha_bar: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        if not ((self.beta > 0) & (self.beta < 1)).all():
            raise ValueError("beta values must lie in (0, 1)")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "sqrt_alpha_bar", np.sqrt(self.alpha_bar))
        object.__setattr__(self, "sqrt_one_minus_alpha_bar",
                           np.sqrt(1.0 - self.alpha_bar))
        object.__setattr__(self, "sigma", np.sqrt(self.beta))

    def _at(self, arr: np.ndarray, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if (t < 1).any() or (t > self.T).any():
            raise ValueError(f"step index out of range [1, {self.T}]")
        return arr[t - 1]

    def beta_t(self, t):
        return self._at(self.beta, t)

    def alpha_t(self, t):
        return self._at(self.alpha, t)

    def alpha_bar_t(self, t):
        return self._at(self.alpha_bar, t)

    def sigma_t(self, t):
        return self._at(self.sigma, t)

    def snr_t(self, t):
        ab = self.alpha_bar_t(t)
        return ab / (1.0 - ab)


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    """Linear: beta spaced 1e-4..0.02. Cosine: alpha_bar follows the squared
    cosine profile f(t)/f(0) with offset s=0.008 and betas clipped at 0.999."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind == "linear":
        beta = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T)
    elif kind == "cosine":
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * np.pi / 2.0) ** 2
        alpha_bar_profile = f / f[0]
        beta = 1.0 - alpha_bar_profile[1:] / alpha_bar_profile[:-1]
        beta = np.clip(beta, None, COSINE_BETA_CLIP)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(kind, T, beta, alpha, alpha_bar)


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward corruption: sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    sab = sched._at(sched.sqrt_alpha_bar, t)
    somab = sched._at(sched.sqrt_one_minus_alpha_bar, t)
    if np.ndim(sab):
        sab = sab.reshape(sab.shape + (1,) * (x0.ndim - 1))
        somab = somab.reshape(somab.shape + (1,) * (x0.ndim - 1))
    return sab * x0 + somab * eps


def mu_theta(x_t: np.ndarray, t, eps_hat: np.ndarray,
             sched: NoiseSchedule) -> np.ndarray:
    """Reverse-kernel mean (1/sqrt(a_t)) (x_t - (1-a_t)/sqrt(1-ab_t) eps_hat)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"eps_hat shape {eps_hat.shape} != x_t shape {x_t.shape}")
    a = sched.alpha_t(t)
    somab = sched._at(sched.sqrt_one_minus_alpha_bar, t)
    if np.ndim(a):
        a = a.reshape(a.shape + (1,) * (x_t.ndim - 1))
        somab = somab.reshape(somab.shape + (1,) * (x_t.ndim - 1))
    return (x_t - (1.0 - a) / somab * eps_hat) / np.sqrt(a)


def clean_estimate(x_t: np.ndarray, t, eps_hat: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """x0 implied by a noise prediction: (x_t - sqrt(1-ab_t) eps_hat)/sqrt(ab_t)."""
    sab = sched._at(sched.sqrt_alpha_bar, t)
    somab = sched._at(sched.sqrt_one_minus_alpha_bar, t)
    if np.ndim(sab):
        sab = sab.reshape(sab.shape + (1,) * (x_t.ndim - 1))
        somab = somab.reshape(somab.shape + (1,) * (x_t.ndim - 1))
    return (x_t - somab * eps_hat) / sab


def posterior_mean(x_t: np.ndarray, t, x0: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """Forward-posterior mean of x_{t-1} given (x_t, x0); algebraically equal
    to mu_theta when x0 is the unclipped clean estimate."""
    t = np.asarray(t, dtype=np.int64)
    ab = sched.alpha_bar_t(t)
    ab_prev = np.where(t > 1, sched.alpha_bar[np.maximum(t - 2, 0)], 1.0)
    beta = sched.beta_t(t)
    alpha = sched.alpha_t(t)
    coef0 = np.sqrt(ab_prev) * beta / (1.0 - ab)
    coeft = np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab)
    if np.ndim(coef0):
        coef0 = coef0.reshape(coef0.shape + (1,) * (x_t.ndim - 1))
        coeft = coeft.reshape(coeft.shape + (1,) * (x_t.ndim - 1))
    return coef0 * x0 + coeft * x_t


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.95
    adam_beta2: float = 0.99
    adam_eps: float = 1e-7
    self_cond_prob: float = 0.5
    p2_gamma: float = 1.0
    p2_k: float = 1.0
    total_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 0:
            raise ValueError("batch_size and total_steps must be positive")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ValueError("rates must be positive")
        for name in ("adam_beta1", "adam_beta2", "self_cond_prob"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0 and name != "self_cond_prob":
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
            if name == "self_cond_prob" and not 0.0 <= v <= 1.0:
                raise ValueError(f"self_cond_prob must lie in [0, 1], got {v}")


def loss_weights(t, sched: NoiseSchedule, p2_k: float, p2_gamma: float) -> np.ndarray:
    """Per-step weight (k + SNR_t)^(-gamma); gamma = 0 recovers uniform 1."""
    return (p2_k + sched.snr_t(t)) ** (-p2_gamma)


def loss_simple(den: Denoiser, params: Dict[str, np.ndarray], sched: NoiseSchedule,
                tc: TrainConfig, x0: np.ndarray, y: np.ndarray,
                rng: np.random.Generator,
                want_grads: bool = True
                ) -> Tuple[float, Optional[Dict[str, np.ndarray]], Dict]:
    """Noise-prediction objective on one batch.

    Draws t uniform in [1, T] and unit Gaussian noise per item, optionally
    feeds a no-gradient clean-image estimate back as self-conditioning, and
    returns mean_b w_t * ||eps_hat - eps||^2 with its parameter gradients.
    """
    bsz = x0.shape[0]
    t = rng.integers(1, sched.T + 1, size=bsz)
    eps = rng.standard_normal(x0.shape)
    x_t = q_sample(x0, t, eps, sched)

    self_cond = None
    if den.cfg.self_conditioning:
        coins = rng.random(bsz) < tc.self_cond_prob
        sc = np.zeros_like(x0)
        if coins.any():
            with ad.no_grad():
                eps0 = den.forward(wrap_params(params, requires_grad=False),
                                   x_t, t, y).data
            sab = sched._at(sched.sqrt_alpha_bar, t).reshape(-1, 1, 1, 1)
            somab = sched._at(sched.sqrt_one_minus_alpha_bar, t).reshape(-1, 1, 1, 1)
            x0_hat = (x_t - somab * eps0) / sab
            sc[coins] = x0_hat[coins]
        self_cond = sc

    w = loss_weights(t, sched, tc.p2_k, tc.p2_gamma)
    wrapped = wrap_params(params, requires_grad=want_grads)
    eps_hat = den.forward(wrapped, x_t, t, y, self_cond=self_cond)
    diff = ad.sub(eps_hat, ad.Tensor(eps))
    per_item = ad.tsum(ad.square(diff), axis=(1, 2, 3))
    loss = ad.tmean(ad.mul(per_item, ad.Tensor(w)))
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss {value}")
    grads = None
    if want_grads:
        loss.backward()
        grads = collect_grads(wrapped)
        for path, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient in {path}")
    aux = {"t": t, "weights": w}
    return value, grads, aux


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_init(params: Dict[str, np.ndarray]) -> Dict:
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: Dict, tc: TrainConfig) -> None:
    """Standard bias-corrected Adam update, in place, over sorted paths.

    Applies uniformly to classical weights and circuit angles.
    """
    state["step"] += 1
    k = state["step"]
    b1, b2 = tc.adam_beta1, tc.adam_beta2
    c1 = 1.0 - b1 ** k
    c2 = 1.0 - b2 ** k
    for path in sorted(params):
        g = grads[path]
        if g.shape != params[path].shape:
            raise ValueError(f"gradient shape mismatch for {path}")
        m = state["m"][path]
        v = state["v"][path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (tc.learning_rate * (m / c1)
                  / (np.sqrt(v / c2) + tc.adam_eps))
        if not np.isfinite(update).all():
            raise NumericalError(f"non-finite update for {path}")
        params[path] -= update


# ---------------------------------------------------------------------------
# ancestral sampling
# ---------------------------------------------------------------------------

def ddpm_sample(den: Denoiser, params: Dict[str, np.ndarray], sched: NoiseSchedule,
                labels: np.ndarray, seed: int, chunk: int = 64,
                progress=None) -> np.ndarray:
    """Reverse-chain sampling: x_T ~ N(0, I), then x_{t-1} = mu + sigma_t z
    down to t=1 (z = 0 at the last step); output clipped to [-1, 1].

    The mean is evaluated in its posterior form with the implied clean image
    clipped to [-1, 1] first; identical to the eps-form mean whenever the
    estimate is in range, and bounded where late-schedule 1/sqrt(alpha_t)
    amplification would otherwise blow up model error.

    Noise is drawn from one stream per sample item, so results are
    deterministic in `seed` regardless of chunking.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    size = den.cfg.image_size
    if n == 0:
        return np.zeros((0, size, size, 3))
    out = np.zeros((n, size, size, 3))
    wrapped = wrap_params(params, requires_grad=False)
    with ad.no_grad():
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), i]))
                    for i in range(lo, hi)]
            x = np.stack([r.standard_normal((size, size, 3)) for r in rngs])
            self_cond = None
            for t in range(sched.T, 0, -1):
                tarr = np.full(hi - lo, t)
                eps_hat = den.forward(wrapped, x, tarr, labels[lo:hi],
                                      self_cond=self_cond).data
                x0_hat = np.clip(clean_estimate(x, tarr, eps_hat, sched), -1.0, 1.0)
                if den.cfg.self_conditioning:
                    self_cond = x0_hat
                x = posterior_mean(x, tarr, x0_hat, sched)
                if t > 1:
                    z = np.stack([r.standard_normal((size, size, 3)) for r in rngs])
                    x = x + sched.sigma_t(t) * z
                if not np.isfinite(x).all():
                    raise NumericalError(f"non-finite sample state at step {t}")
                if progress is not None:
                    progress(t, lo, hi, n)
            out[lo:hi] = np.clip(x, -1.0, 1.0)
    return out
