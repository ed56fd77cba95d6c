"""Generative-quality metrics over a pluggable feature extractor.

The feature space is whatever extractor produced the FeatureSet (here the
evaluation classifier's penultimate layer), so absolute values are not
comparable across extractors; only trends and orderings within one
extractor are meaningful.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

COV_SYM_TOL = 1e-10
FID_EIG_FLOOR = -1e-8


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray  # (n_samples, d)
    extractor_id: str

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 2:
            raise ValueError(f"need a (n >= 2, d) feature matrix, got {f.shape}")
        if not np.isfinite(f).all():
            raise ValueError("non-finite features")
        object.__setattr__(self, "features", f)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if np.abs(cov - cov.T).max() > COV_SYM_TOL:
            raise ValueError("covariance not symmetric")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", (cov + cov.T) / 2.0)


def gaussian_stats(fs: FeatureSet) -> GaussianStats:
    f = fs.features
    mean = f.mean(axis=0)
    cov = np.cov(f, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean, (cov + cov.T) / 2.0)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; small negative
    eigenvalues are clamped, ones below the floor are rejected."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < FID_EIG_FLOOR:
        raise ValueError(f"matrix not PSD within tolerance: min eig {vals.min()}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(stats_x: GaussianStats, stats_y: GaussianStats) -> float:
    """||mu_x - mu_y||^2 + Tr(Sx + Sy - 2 (Sx Sy)^(1/2)).

    The cross term is computed as the square root of Sx^(1/2) Sy Sx^(1/2),
    which is similar to Sx Sy but symmetric, so a real eigendecomposition
    applies.
    """
    if stats_x.mean.shape != stats_y.mean.shape:
        raise ValueError(
            f"feature dims differ: {stats_x.mean.shape} vs {stats_y.mean.shape}")
    dmu = stats_x.mean - stats_y.mean
    sx_half = _psd_sqrt(stats_x.cov)
    inner = _psd_sqrt(sx_half @ stats_y.cov @ sx_half)
    value = float(dmu @ dmu + np.trace(stats_x.cov) + np.trace(stats_y.cov)
                  - 2.0 * np.trace(inner))
    return max(value, 0.0)


def fid_from_features(x: FeatureSet, y: FeatureSet) -> float:
    return fid(gaussian_stats(x), gaussian_stats(y))


def polynomial_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """k(x, y) = (x . y / d + 1)^3 for all row pairs."""
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** 3


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    m = x.shape[0]
    n = y.shape[0]
    kxx = polynomial_kernel(x, x)
    kyy = polynomial_kernel(y, y)
    kxy = polynomial_kernel(x, y)
    sum_xx = kxx.sum() - np.trace(kxx)   # diagonal excluded: unbiased
    sum_yy = kyy.sum() - np.trace(kyy)
    return float(sum_xx / (m * (m - 1)) + sum_yy / (n * (n - 1))
                 - 2.0 * kxy.mean())


def kid(x: FeatureSet, y: FeatureSet, subset_size: int = 100,
        n_subsets: int = 10, seed: int = 0) -> Tuple[float, float]:
    """Unbiased squared-MMD estimate averaged over random subsets.

    Each subset draws `subset_size` rows without replacement from each set
    (resampled per subset); returns (mean, std) over subsets.
    """
    if x.dim != y.dim:
        raise ValueError(f"feature dims differ: {x.dim} vs {y.dim}")
    if len(x.features) < subset_size or len(y.features) < subset_size:
        raise ValueError(
            f"need at least {subset_size} samples per set, got "
            f"{len(x.features)} and {len(y.features)}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 9001]))
    values = []
    for _ in range(n_subsets):
        xi = rng.choice(len(x.features), size=subset_size, replace=False)
        yi = rng.choice(len(y.features), size=subset_size, replace=False)
        values.append(_mmd2_unbiased(x.features[xi], y.features[yi]))
    values = np.asarray(values)
    return float(values.mean()), float(values.std())


def inception_style_score(probs: np.ndarray, splits: int = 10
                          ) -> Tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) over splits.

    Rows must be probability vectors; the marginal is the per-split row mean.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"need (n, classes) probabilities, got {probs.shape}")
    if (probs < -1e-12).any() or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("rows must be probability vectors summing to 1")
    n = probs.shape[0]
    if n < splits:
        raise ValueError(f"need at least {splits} rows, got {n}")
    scores = []
    for chunk in np.array_split(np.arange(n), splits):
        p = probs[chunk]
        marginal = p.mean(axis=0, keepdims=True)
        log_marginal = np.where(marginal > 0, np.log(np.maximum(marginal, 1e-300)), 0.0)
        mask = p > 0
        ratio = np.zeros_like(p)
        ratio[mask] = np.log(p[mask]) - np.broadcast_to(log_marginal, p.shape)[mask]
        kl = (p * ratio).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


@dataclass
class ClassificationReport:
    accuracy: float
    per_class: List[Dict[str, float]]   # label, precision, recall, f1, support
    macro: Dict[str, float] = field(default_factory=dict)

    def rows(self) -> List[Tuple]:
        out = [(int(r["label"]), r["precision"], r["recall"], r["f1"],
                int(r["support"])) for r in self.per_class]
        return out


def classification_report(intended: np.ndarray, predicted: np.ndarray,
                          num_classes: int) -> ClassificationReport:
    """Accuracy plus per-class precision/recall/F1/support from the
    confusion matrix of intended vs predicted labels."""
    intended = np.asarray(intended, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if intended.shape != predicted.shape:
        raise ValueError("label arrays differ in shape")
    if intended.size == 0:
        raise ValueError("empty label arrays")
    for arr, name in ((intended, "intended"), (predicted, "predicted")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} labels outside [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (intended, predicted), 1)
    accuracy = float(np.trace(conf) / conf.sum())
    per_class = []
    for c in range(num_classes):
        tp = conf[c, c]
        support = conf[c].sum()
        pred_c = conf[:, c].sum()
        precision = float(tp / pred_c) if pred_c else 0.0
        recall = float(tp / support) if support else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        per_class.append({"label": c, "precision": precision, "recall": recall,
                          "f1": f1, "support": int(support)})
    macro = {k: float(np.mean([r[k] for r in per_class]))
             for k in ("precision", "recall", "f1")}
    return ClassificationReport(accuracy, per_class, macro)


def conditioning_accuracy(intended: np.ndarray, predicted: np.ndarray,
                          num_classes: int) -> ClassificationReport:
    """Fraction of generated samples classified as their intended class,
    with the full per-class breakdown."""
    return classification_report(intended, predicted, num_classes)


@dataclass(frozen=True)
class ChannelHistograms:
    bin_centers: np.ndarray       # (bins,)
    densities: np.ndarray         # (3, bins); integrates to 1 per channel
    means: np.ndarray             # (3,)
    medians: np.ndarray           # (3,)
    bins: int


def channel_histograms(images: np.ndarray, bins: int = 256) -> ChannelHistograms:
    """Per-channel densities over common bins in [0, 1] plus mean and median.

    Input pixels must already be mapped to [0, 1].
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {images.shape}")
    if images.min() < -1e-9 or images.max() > 1.0 + 1e-9:
        raise ValueError(
            f"pixel range [{images.min()}, {images.max()}] outside [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2.0
    densities = np.zeros((3, bins))
    means = np.zeros(3)
    medians = np.zeros(3)
    for c in range(3):
        values = np.clip(images[..., c].reshape(-1), 0.0, 1.0)
        counts, _ = np.histogram(values, bins=edges)
        densities[c] = counts / counts.sum() * bins  # sum(density)/bins == 1
        means[c] = values.mean()
        medians[c] = float(np.median(values))
    return ChannelHistograms(centers, densities, means, medians, bins)
