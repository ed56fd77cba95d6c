"""Small CNN classifier: the conditioning referee and FID/KID feature source.

Trained on real data, then frozen; its penultimate activations are the
feature space for the distribution metrics and its softmax outputs feed the
diversity score. The frozen model is a plain parameter dict, so repeated
inference is bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from . import autodiff as ad
from .data import Dataset, epoch_batches
from .diffusion import TrainConfig, adam_init, adam_step

FEATURE_DIM = 64
_HID1, _HID2 = 16, 32


class ClassifierTrainingError(RuntimeError):
    """Raised when the accuracy floor cannot be reached within budget."""


@dataclass
class ClassifierModel:
    params: Dict[str, np.ndarray]
    num_classes: int
    image_size: int
    feature_dim: int = FEATURE_DIM
    val_accuracy: float = 0.0
    extractor_id: str = ""

    def _forward(self, x: np.ndarray, want_features: bool):
        p = {k: ad.Tensor(v) for k, v in self.params.items()}
        return _forward(p, x, want_features)

    def features(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Penultimate activations: (N, H, W, 3) -> (N, feature_dim)."""
        out = np.zeros((images.shape[0], self.feature_dim))
        with ad.no_grad():
            for lo in range(0, images.shape[0], chunk):
                hi = min(lo + chunk, images.shape[0])
                _, feats = self._forward(images[lo:hi], True)
                out[lo:hi] = feats.data
        return out

    def probabilities(self, images: np.ndarray, chunk: int = 256) -> np.ndarray:
        out = np.zeros((images.shape[0], self.num_classes))
        with ad.no_grad():
            for lo in range(0, images.shape[0], chunk):
                hi = min(lo + chunk, images.shape[0])
                logits, _ = self._forward(images[lo:hi], False)
                out[lo:hi] = ad.softmax(logits.data)
        return out

    def predict(self, images: np.ndarray) -> np.ndarray:
        return self.probabilities(images).argmax(axis=1)


def _param_shapes(image_size: int, num_classes: int) -> Dict[str, tuple]:
    pooled = image_size // 4
    flat = pooled * pooled * _HID2
    return {
        "conv1_w": (3, 3, 3, _HID1), "conv1_b": (_HID1,),
        "gn1_gamma": (_HID1,), "gn1_beta": (_HID1,),
        "conv2_w": (3, 3, _HID1, _HID2), "conv2_b": (_HID2,),
        "gn2_gamma": (_HID2,), "gn2_beta": (_HID2,),
        "fc1_w": (flat, FEATURE_DIM), "fc1_b": (FEATURE_DIM,),
        "fc2_w": (FEATURE_DIM, num_classes), "fc2_b": (num_classes,),
    }


def _forward(p: Dict[str, ad.Tensor], x: np.ndarray, want_features: bool):
    h = ad.conv2d(ad.Tensor(np.asarray(x, dtype=np.float64)), p["conv1_w"], p["conv1_b"])
    h = ad.silu(ad.group_norm(h, p["gn1_gamma"], p["gn1_beta"], groups=4))
    h = ad.downsample_avg(h)
    h = ad.conv2d(h, p["conv2_w"], p["conv2_b"])
    h = ad.silu(ad.group_norm(h, p["gn2_gamma"], p["gn2_beta"], groups=4))
    h = ad.downsample_avg(h)
    bsz = h.data.shape[0]
    h = ad.reshape(h, (bsz, -1))
    feats = ad.silu(ad.linear(h, p["fc1_w"], p["fc1_b"]))
    logits = ad.linear(feats, p["fc2_w"], p["fc2_b"])
    return logits, feats


def _init_params(image_size: int, num_classes: int,
                 rng: np.random.Generator) -> Dict[str, np.ndarray]:
    params = {}
    for name, shape in _param_shapes(image_size, num_classes).items():
        if name.endswith("_w"):
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith("gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def _accuracy(model: ClassifierModel, ds: Dataset) -> float:
    return float((model.predict(ds.images) == ds.labels).mean())


def train_eval_classifier(train_ds: Dataset, val_ds: Dataset, seed: int = 0,
                          target_accuracy: float = 0.99,
                          floor_accuracy: float = 0.95,
                          max_steps: int = 2000,
                          learning_rate: float = 2e-3,
                          batch_size: int = 64) -> ClassifierModel:
    """Train until validation accuracy reaches the target (or the budget
    runs out); below the floor the run fails hard with diagnostics."""
    if train_ds.image_size % 4:
        raise ValueError("image size must be divisible by 4 for two poolings")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 8001]))
    params = _init_params(train_ds.image_size, train_ds.num_classes, rng)
    tc = TrainConfig(batch_size=batch_size, learning_rate=learning_rate,
                     adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8,
                     total_steps=max_steps, seed=seed)
    state = adam_init(params)
    model = ClassifierModel(params, train_ds.num_classes, train_ds.image_size)
    best = (0.0, None)
    step = 0
    epoch = 0
    while step < max_steps:
        for x, y in epoch_batches(train_ds, batch_size, seed, epoch):
            step += 1
            wrapped = {k: ad.Tensor(v, requires_grad=True)
                       for k, v in params.items()}
            logits, _ = _forward(wrapped, x, False)
            loss = ad.softmax_cross_entropy(logits, y)
            loss.backward()
            grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for k, t in wrapped.items()}
            adam_step(params, grads, state, tc)
            if step % 50 == 0 or step >= max_steps:
                acc = _accuracy(model, val_ds)
                if acc > best[0]:
                    best = (acc, {k: v.copy() for k, v in params.items()})
                if acc >= target_accuracy:
                    break
            if step >= max_steps:
                break
        epoch += 1
        if best[0] >= target_accuracy:
            break
    final_acc = _accuracy(model, val_ds)
    if final_acc < best[0] and best[1] is not None:
        model.params = best[1]
        final_acc = best[0]
    if final_acc < floor_accuracy:
        raise ClassifierTrainingError(
            f"validation accuracy {final_acc:.4f} below floor "
            f"{floor_accuracy} after {step} steps "
            f"(n_train={len(train_ds)}, n_val={len(val_ds)})")
    model.val_accuracy = final_acc
    model.extractor_id = (f"smallcnn-d{model.feature_dim}-seed{seed}"
                          f"-acc{final_acc:.4f}")
    return model
