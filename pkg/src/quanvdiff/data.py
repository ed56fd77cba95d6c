"""Toy dataset generation, RGB image-folder ingestion, splits, and batching.

Pixels live in [-1, 1] everywhere in the model; 8-bit files map through
x / 127.5 - 1 on load and the exact inverse on save. The toy generator is
fully deterministic in its seed.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image

MANIFEST_NAME = "dataset_manifest.tsv"


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray  # (H, W, 3) in [-1, 1]
    label: int
    source_id: str


@dataclass
class Dataset:
    images: np.ndarray          # (N, S, S, 3) float64 in [-1, 1]
    labels: np.ndarray          # (N,) int64
    class_names: List[str]
    source_ids: List[str]

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i) -> LabeledImage:
        return LabeledImage(self.images[i], int(self.labels[i]), self.source_ids[i])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> int:
        return self.images.shape[1]


@dataclass
class DatasetManifest:
    class_names: List[str]
    counts: List[int]
    image_size: int
    normalization: str = "x/127.5-1"
    split_seed: Optional[int] = None
    split_fractions: Optional[Tuple[float, ...]] = None

    def write(self, root):
        lines = ["field\tvalue"]
        lines.append("image_size\t%d" % self.image_size)
        lines.append("normalization\t%s" % self.normalization)
        if self.split_seed is not None:
            lines.append("split_seed\t%d" % self.split_seed)
        if self.split_fractions is not None:
            lines.append("split_fractions\t%s" % ",".join(
                str(f) for f in self.split_fractions))
        for name, count in zip(self.class_names, self.counts):
            lines.append(f"class\t{name}\t{count}")
        with open(os.path.join(root, MANIFEST_NAME), "w") as fh:
            fh.write("\n".join(lines) + "\n")


# numeric prefixes keep sorted directory order aligned with class ids
TOY_CLASS_NAMES = ("0_red_gradient", "1_green_checker", "2_blue_stripes",
                   "3_yellow_disk")


def make_toy_dataset(n_per_class: int, image_size: int = 8, num_classes: int = 4,
                     seed: int = 0) -> Dataset:
    """Four chromatic-structural classes, deterministic in `seed`.

    0: red-dominant horizontal gradient, 1: green checkerboard, 2: blue
    vertical stripes, 3: yellow disk on dark ground. Each image gets mild
    offset/amplitude/phase jitter plus pixel noise (std 0.05), then is
    clipped to [-1, 1]: learnable classes, not point masses.
    """
    if n_per_class < 1 or image_size < 4:
        raise ValueError("n_per_class must be >= 1 and image_size >= 4")
    if not 1 <= num_classes <= 4:
        raise ValueError("num_classes must lie in [1, 4]")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7001]))
    s = image_size
    xs = np.arange(s)
    images, labels, ids = [], [], []
    for cls in range(num_classes):
        for i in range(n_per_class):
            img = np.full((s, s, 3), -0.75)
            off = rng.uniform(-0.04, 0.04, 3)
            if cls == 0:
                slope = rng.uniform(1.3, 1.45)
                start = rng.uniform(-0.53, -0.47)
                img[:, :, 0] = start + slope * xs[None, :] / (s - 1)
            elif cls == 1:
                amp = rng.uniform(0.7, 0.8)
                checker = ((xs[:, None] // 2 + xs[None, :] // 2) % 2) * 2.0 - 1.0
                img[:, :, 1] = amp * checker
            elif cls == 2:
                amp = rng.uniform(0.7, 0.8)
                stripes = ((xs[None, :] // 2) % 2) * 2.0 - 1.0
                img[:, :, 2] = amp * np.broadcast_to(stripes, (s, s))
            else:
                cy = (s - 1) / 2.0 + rng.uniform(-0.1, 0.1)
                cx = (s - 1) / 2.0 + rng.uniform(-0.1, 0.1)
                radius = s / 3.0 + rng.uniform(-0.05, 0.05)
                dist = np.sqrt((xs[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2)
                disk = 0.5 * (1.0 + np.tanh((radius - dist) / 1.1))
                img[:, :, 0] = -0.8 + 1.7 * disk
                img[:, :, 1] = -0.8 + 1.7 * disk
                img[:, :, 2] = -0.9
            img += off
            img += rng.normal(0.0, 0.05, img.shape)
            images.append(np.clip(img, -1.0, 1.0))
            labels.append(cls)
            ids.append(f"toy/{TOY_CLASS_NAMES[cls]}/{i:05d}")
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64),
                   list(TOY_CLASS_NAMES[:num_classes]), ids)


def to_unit(images: np.ndarray) -> np.ndarray:
    """Map model-range pixels [-1, 1] to histogram range [0, 1]."""
    return (np.asarray(images) + 1.0) / 2.0


def to_uint8(images: np.ndarray) -> np.ndarray:
    arr = (np.asarray(images) + 1.0) * 127.5
    return np.clip(np.round(arr), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 127.5 - 1.0


def save_image_folder(dataset: Dataset, root) -> None:
    """Write 8-bit PNGs in one directory per class plus a manifest."""
    os.makedirs(root, exist_ok=True)
    counts = [0] * dataset.num_classes
    for i in range(len(dataset)):
        cls = int(dataset.labels[i])
        cdir = os.path.join(root, dataset.class_names[cls])
        os.makedirs(cdir, exist_ok=True)
        img = Image.fromarray(to_uint8(dataset.images[i]), mode="RGB")
        img.save(os.path.join(cdir, f"{counts[cls]:05d}.png"))
        counts[cls] += 1
    DatasetManifest(dataset.class_names, counts, dataset.image_size).write(root)


def load_image_folder(root) -> Dataset:
    """Load a directory-per-class tree of uniform 8-bit RGB images.

    Labels follow sorted directory-name order; unreadable files are skipped
    with a warning, inconsistent sizes are a hard error.
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} is not a directory")
    class_names = sorted(d for d in os.listdir(root)
                         if os.path.isdir(os.path.join(root, d)))
    if not class_names:
        raise ValueError(f"no class directories under {root!r}")
    images, labels, ids = [], [], []
    size = None
    skipped = 0
    for label, name in enumerate(class_names):
        cdir = os.path.join(root, name)
        for fname in sorted(os.listdir(cdir)):
            fpath = os.path.join(cdir, fname)
            if not os.path.isfile(fpath):
                continue
            try:
                with Image.open(fpath) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
            except Exception as exc:  # unreadable file: skip, count, warn
                skipped += 1
                warnings.warn(f"skipping unreadable image {fpath}: {exc}")
                continue
            if size is None:
                size = arr.shape[:2]
                if size[0] != size[1]:
                    raise ValueError(f"non-square image {fpath}: {arr.shape}")
            elif arr.shape[:2] != size:
                raise ValueError(
                    f"inconsistent image size {arr.shape[:2]} vs {size} at {fpath}")
            images.append(from_uint8(arr))
            labels.append(label)
            ids.append(os.path.join(name, fname))
    if not images:
        raise ValueError(f"no readable images under {root!r}")
    ds = Dataset(np.stack(images), np.array(labels, dtype=np.int64),
                 class_names, ids)
    ds.skipped_files = skipped  # type: ignore[attr-defined]
    counts = [int((ds.labels == c).sum()) for c in range(len(class_names))]
    ds.manifest = DatasetManifest(class_names, counts,  # type: ignore[attr-defined]
                                  ds.image_size)
    return ds


def split_dataset(dataset: Dataset, fractions: Tuple[float, ...],
                  seed: int) -> List[Dataset]:
    """Stratified-by-class split into len(fractions) disjoint parts."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7002]))
    parts: List[List[int]] = [[] for _ in fractions]
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == cls)
        idx = idx[rng.permutation(idx.size)]
        if idx.size and min(fractions) > 0 and idx.size < len(fractions):
            raise ValueError(f"class {cls} too small to split")
        bounds = np.floor(np.cumsum(fractions) * idx.size + 1e-9).astype(int)
        lo = 0
        for pi, hi in enumerate(bounds):
            parts[pi].extend(idx[lo:hi].tolist())
            lo = hi
    out = []
    for pi, rows in enumerate(parts):
        rows = np.array(sorted(rows), dtype=np.int64)
        if rows.size == 0 and fractions[pi] > 0:
            raise ValueError(f"split {pi} came out empty")
        out.append(Dataset(dataset.images[rows], dataset.labels[rows],
                           dataset.class_names,
                           [dataset.source_ids[r] for r in rows]))
    return out


def epoch_batches(dataset: Dataset, batch_size: int, seed: int,
                  epoch: int) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Shuffled batches for one epoch, deterministic in (seed, epoch);
    the final partial batch is kept."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7003, int(epoch)]))
    perm = rng.permutation(len(dataset))
    for lo in range(0, len(dataset), batch_size):
        rows = perm[lo:lo + batch_size]
        yield dataset.images[rows], dataset.labels[rows]


def batch_at_step(dataset: Dataset, batch_size: int, seed: int,
                  step: int) -> Tuple[np.ndarray, np.ndarray]:
    """Random-access view of the epoch stream: global step -> (epoch, batch).

    Steps are 1-based; resuming from a checkpoint reproduces the exact batch
    sequence of an uninterrupted run.
    """
    if step < 1:
        raise ValueError("step is 1-based")
    per_epoch = (len(dataset) + batch_size - 1) // batch_size
    epoch, bi = divmod(step - 1, per_epoch)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7003, int(epoch)]))
    perm = rng.permutation(len(dataset))
    rows = perm[bi * batch_size:(bi + 1) * batch_size]
    return dataset.images[rows], dataset.labels[rows]
