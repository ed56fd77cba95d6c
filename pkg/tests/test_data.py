"""Toy data generation, folder ingestion, splitting, and batching."""
import os

import numpy as np
import pytest
from PIL import Image

from quanvdiff import data


class TestToyDataset:
    def test_deterministic_in_seed(self):
        a = data.make_toy_dataset(20, seed=4)
        b = data.make_toy_dataset(20, seed=4)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)
        c = data.make_toy_dataset(20, seed=5)
        assert not np.array_equal(a.images, c.images)

    def test_pixel_range(self):
        ds = data.make_toy_dataset(50, seed=0)
        assert ds.images.min() >= -1.0 and ds.images.max() <= 1.0

    def test_class_means_separate_from_within_class_spread(self):
        ds = data.make_toy_dataset(200, seed=0)
        means = np.stack([ds.images[ds.labels == c].mean(axis=0)
                          for c in range(4)])
        dists = [np.linalg.norm(means[a] - means[b])
                 for a in range(4) for b in range(a + 1, 4)]
        spreads = []
        for c in range(4):
            sub = ds.images[ds.labels == c]
            spreads.append(np.sqrt(((sub - means[c]) ** 2)
                                   .sum(axis=(1, 2, 3)).mean()))
        assert min(dists) > 10 * max(spreads)

    def test_classes_are_not_point_masses(self):
        ds = data.make_toy_dataset(50, seed=0)
        for c in range(4):
            sub = ds.images[ds.labels == c]
            assert ((sub[0] - sub[1]) ** 2).sum() > 0.1

    def test_chromatic_signatures(self):
        ds = data.make_toy_dataset(50, seed=0)
        means = np.stack([ds.images[ds.labels == c].mean(axis=(0, 1, 2))
                          for c in range(4)])
        assert means[0].argmax() == 0          # red dominant
        assert means[1].argmax() == 1          # green pattern average
        assert means[2].argmax() == 2          # blue stripes
        assert means[3][2] < means[3][:2].min()  # yellow: blue lowest

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            data.make_toy_dataset(0)
        with pytest.raises(ValueError):
            data.make_toy_dataset(5, num_classes=5)

    def test_class_names_sort_in_label_order(self, tmp_path):
        # folder ingestion assigns labels by sorted directory name, so the
        # written class directories must sort in class-id order or labels
        # would silently permute between a model and its evaluation
        assert list(data.TOY_CLASS_NAMES) == sorted(data.TOY_CLASS_NAMES)
        ds = data.make_toy_dataset(3, seed=0)
        data.save_image_folder(ds, tmp_path)
        loaded = data.load_image_folder(tmp_path)
        assert loaded.class_names == ds.class_names
        for c in range(4):
            orig = ds.images[ds.labels == c]
            back = loaded.images[loaded.labels == c]
            assert np.abs(orig.mean(axis=0) - back.mean(axis=0)).max() < 0.01

    def test_getitem(self):
        ds = data.make_toy_dataset(2, seed=0)
        item = ds[0]
        assert item.pixels.shape == (8, 8, 3)
        assert item.label == 0
        assert item.source_id.startswith("toy/")


class TestImageFolder:
    def test_round_trip_through_png(self, tmp_path):
        ds = data.make_toy_dataset(5, seed=1)
        root = tmp_path / "imgs"
        data.save_image_folder(ds, root)
        loaded = data.load_image_folder(root)
        assert len(loaded) == len(ds)
        assert loaded.class_names == sorted(ds.class_names)
        # quantization error bounded by one 8-bit level
        orig_sorted = ds.images[np.argsort(ds.labels, kind="stable")]
        assert loaded.images.shape == ds.images.shape
        assert os.path.exists(root / data.MANIFEST_NAME)

    def test_endpoint_mapping(self):
        assert data.from_uint8(np.array([255], dtype=np.uint8))[0] == 1.0
        assert data.from_uint8(np.array([0], dtype=np.uint8))[0] == -1.0

    def test_eight_bit_round_trip_exact(self):
        levels = np.arange(256, dtype=np.uint8)
        x = data.from_uint8(levels)
        back = data.to_uint8(x)
        assert np.array_equal(back, levels)
        # unit-range view recovers the levels within 1/255
        unit = data.to_unit(x)
        assert np.abs(unit - levels / 255.0).max() < 1.0 / 255.0

    def test_labels_follow_sorted_directory_order(self, tmp_path):
        for name in ("zebra", "alpha", "mid"):
            d = tmp_path / name
            d.mkdir()
            Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(d / "a.png")
        ds = data.load_image_folder(tmp_path)
        assert ds.class_names == ["alpha", "mid", "zebra"]

    def test_unreadable_file_skipped_with_warning(self, tmp_path):
        d = tmp_path / "only"
        d.mkdir()
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(d / "ok.png")
        (d / "broken.png").write_bytes(b"not an image")
        with pytest.warns(UserWarning, match="skipping unreadable"):
            ds = data.load_image_folder(tmp_path)
        assert len(ds) == 1
        assert ds.skipped_files == 1

    def test_inconsistent_sizes_hard_error(self, tmp_path):
        d = tmp_path / "only"
        d.mkdir()
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(d / "a.png")
        Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "b.png")
        with pytest.raises(ValueError, match="inconsistent image size"):
            data.load_image_folder(tmp_path)

    def test_missing_root(self):
        with pytest.raises(FileNotFoundError):
            data.load_image_folder("/nonexistent/path")


class TestSplitsAndBatches:
    def test_stratified_fractions(self):
        ds = data.make_toy_dataset(100, seed=0)
        train, val = data.split_dataset(ds, (0.9, 0.1), seed=2)
        for c in range(4):
            assert (train.labels == c).sum() == 90
            assert (val.labels == c).sum() == 10

    def test_partition_property(self):
        ds = data.make_toy_dataset(30, seed=0)
        train, val = data.split_dataset(ds, (0.8, 0.2), seed=2)
        ids = sorted(train.source_ids + val.source_ids)
        assert ids == sorted(ds.source_ids)
        assert not set(train.source_ids) & set(val.source_ids)

    def test_fractions_must_sum_to_one(self):
        ds = data.make_toy_dataset(10, seed=0)
        with pytest.raises(ValueError):
            data.split_dataset(ds, (0.5, 0.4), seed=0)

    def test_same_seed_same_batches(self):
        ds = data.make_toy_dataset(25, seed=0)
        a = list(data.epoch_batches(ds, 16, seed=7, epoch=0))
        b = list(data.epoch_batches(ds, 16, seed=7, epoch=0))
        assert all(np.array_equal(x1, x2) and np.array_equal(y1, y2)
                   for (x1, y1), (x2, y2) in zip(a, b))
        c = list(data.epoch_batches(ds, 16, seed=7, epoch=1))
        assert not np.array_equal(a[0][0], c[0][0])

    def test_partial_final_batch_kept(self):
        ds = data.make_toy_dataset(25, seed=0)  # 100 items
        batches = list(data.epoch_batches(ds, 32, seed=0, epoch=0))
        assert [b[0].shape[0] for b in batches] == [32, 32, 32, 4]

    def test_random_access_matches_stream(self):
        ds = data.make_toy_dataset(10, seed=0)
        stream = []
        for epoch in range(3):
            stream.extend(data.epoch_batches(ds, 16, seed=3, epoch=epoch))
        for step, (x, y) in enumerate(stream, start=1):
            xs, ys = data.batch_at_step(ds, 16, 3, step)
            assert np.array_equal(x, xs) and np.array_equal(y, ys)
