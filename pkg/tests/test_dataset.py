import gzip
import json
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from noiserank.dataset import (
    Dataset,
    constellation_templates,
    export_csv,
    load_csv,
    load_idx,
    partition,
    subset,
    synthetic_patterns,
)
from noiserank.errors import (
    BadMagic,
    CountMismatch,
    DatasetError,
    KTooLarge,
    LabelOutOfRange,
    NonNumericCell,
    RowLengthMismatch,
    TruncatedFile,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def write_idx_pair(tmp_path, images: np.ndarray, labels: list[int],
                   image_magic=IMAGE_MAGIC, label_magic=LABEL_MAGIC,
                   label_count=None, truncate_pixels=0):
    n, h, w = images.shape
    img_bytes = struct.pack(">IIII", image_magic, n, h, w) + images.astype(np.uint8).tobytes()
    if truncate_pixels:
        img_bytes = img_bytes[:-truncate_pixels]
    lab_bytes = struct.pack(">II", label_magic, label_count if label_count is not None else n)
    lab_bytes += bytes(labels)
    img_path = tmp_path / "images.idx"
    lab_path = tmp_path / "labels.idx"
    img_path.write_bytes(img_bytes)
    lab_path.write_bytes(lab_bytes)
    return img_path, lab_path


@pytest.fixture()
def idx_fixture(tmp_path):
    # 4 authored 2x3 images; image 0 pixel (0,0) is 0x7F on purpose
    images = np.arange(4 * 2 * 3, dtype=np.uint8).reshape(4, 2, 3)
    images[0, 0, 0] = 0x7F
    return write_idx_pair(tmp_path, images, [0, 1, 2, 1])


class TestLoadIdx:
    def test_fixture_decodes_exactly(self, idx_fixture):
        ds = load_idx(*idx_fixture)
        assert len(ds) == 4
        assert ds.shape == (2, 3, 1)
        assert ds.pixels[0, 0, 0, 0] == pytest.approx(0x7F / 255, abs=0)
        assert ds.pixels[0, 0, 0, 0] == pytest.approx(0.4980392156862745, abs=1e-15)
        assert list(ds.labels) == [0, 1, 2, 1]

    def test_label_file_with_image_magic(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [0, 1], label_magic=IMAGE_MAGIC)
        with pytest.raises(BadMagic):
            load_idx(img, lab)

    def test_image_file_with_label_magic(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [0, 1], image_magic=LABEL_MAGIC)
        with pytest.raises(BadMagic):
            load_idx(img, lab)

    def test_truncated_pixels(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [0, 1], truncate_pixels=3)
        with pytest.raises(TruncatedFile):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [0, 1, 0], label_count=3)
        with pytest.raises(CountMismatch):
            load_idx(img, lab)

    def test_zero_item_files_are_valid(self, tmp_path):
        images = np.zeros((0, 4, 4), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [])
        ds = load_idx(img, lab)
        assert len(ds) == 0
        assert ds.shape == (4, 4, 1)

    def test_label_out_of_declared_range(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, [0, 7])
        with pytest.raises(LabelOutOfRange):
            load_idx(img, lab, n_classes=4)

    def test_gzip_transparent(self, tmp_path, idx_fixture):
        img, lab = idx_fixture
        gz_img = tmp_path / "images.idx.gz"
        gz_lab = tmp_path / "labels.idx.gz"
        gz_img.write_bytes(gzip.compress(img.read_bytes()))
        gz_lab.write_bytes(gzip.compress(lab.read_bytes()))
        ds = load_idx(gz_img, gz_lab)
        assert len(ds) == 4

    def test_real_mnist_when_present(self):
        root = os.environ.get("NOISERANK_MNIST_DIR")
        if not root:
            pytest.skip("no NOISERANK_MNIST_DIR configured")
        ds = load_idx(
            Path(root) / "t10k-images-idx3-ubyte",
            Path(root) / "t10k-labels-idx1-ubyte",
            n_classes=10,
        )
        assert len(ds) == 10_000
        assert ds.shape == (28, 28, 1)
        assert ds.labels.min() >= 0 and ds.labels.max() <= 9


class TestLoadCsv:
    def test_single_black_row(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("3," + ",".join(["0"] * 784) + "\n")
        ds = load_csv(path, (28, 28, 1), 10)
        assert len(ds) == 1
        assert ds.labels[0] == 3
        assert ds.pixels.max() == 0.0

    def test_row_length_mismatch(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("3," + ",".join(["0"] * 783) + "\n")
        with pytest.raises(RowLengthMismatch):
            load_csv(path, (28, 28, 1), 10)

    def test_eight_bit_rows_are_rescaled(self, tmp_path):
        path = tmp_path / "bytes.csv"
        path.write_text("1,255,0,128,64\n0,10,20,30,40\n")
        ds = load_csv(path, (2, 2, 1), 2)
        assert ds.pixels.max() == pytest.approx(1.0)
        assert ds.pixels[0, 1, 0, 0] == pytest.approx(128 / 255)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,0.2,x,0.1,0.4\n")
        with pytest.raises(NonNumericCell):
            load_csv(path, (2, 2, 1), 2)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "lab.csv"
        path.write_text("9,0,0,0,0\n")
        with pytest.raises(LabelOutOfRange):
            load_csv(path, (2, 2, 1), 2)

    def test_round_trip_is_exact(self, tmp_path):
        ds = synthetic_patterns(12, seed=5, side=6, n_classes=4)
        path = tmp_path / "dump.csv"
        export_csv(ds, path)
        back = load_csv(path, ds.shape, ds.n_classes)
        assert np.array_equal(back.labels, ds.labels)
        assert np.max(np.abs(back.pixels - ds.pixels)) <= 1e-9

    def test_sidecar_records_provenance(self, tmp_path):
        ds = subset(synthetic_patterns(30, seed=5, side=6, n_classes=4), 10, seed=8)
        path = tmp_path / "sub.csv"
        export_csv(ds, path)
        sidecar = json.loads((tmp_path / "sub.csv.json").read_text())
        assert sidecar["shape"] == [6, 6, 1]
        assert sidecar["n_classes"] == 4
        assert sidecar["seed"] == 8
        assert len(sidecar["original_ids"]) == 10
        assert len(set(sidecar["original_ids"])) == 10


class TestSubset:
    def test_k_equals_m_is_permutation(self):
        ds = synthetic_patterns(20, seed=1, side=6, n_classes=4)
        sub = subset(ds, 20, seed=2)
        assert sorted(sub.source_ids) == list(range(20))
        order = list(sub.source_ids)
        assert np.array_equal(sub.pixels, ds.pixels[order])

    def test_same_seed_identical(self):
        ds = synthetic_patterns(20, seed=1, side=6, n_classes=4)
        a = subset(ds, 7, seed=9)
        b = subset(ds, 7, seed=9)
        assert a.source_ids == b.source_ids
        assert np.array_equal(a.pixels, b.pixels)

    def test_k_too_large(self):
        ds = synthetic_patterns(5, seed=1, side=6, n_classes=4)
        with pytest.raises(KTooLarge):
            subset(ds, 6, seed=0)

    def test_class_proportions_track_parent(self):
        # balanced 10,000-example parent: k=100 subsets stay within +-15pp
        labels = np.tile(np.arange(10), 1000).astype(np.int64)
        pixels = np.zeros((10_000, 2, 2, 1))
        parent = Dataset(pixels=pixels, labels=labels, n_classes=10)
        for seed in range(100):
            sub = subset(parent, 100, seed=seed)
            fractions = np.bincount(sub.labels, minlength=10) / 100
            assert np.all(np.abs(fractions - 0.1) <= 0.15)

    def test_provenance_chains_through_nested_subsets(self):
        ds = synthetic_patterns(30, seed=1, side=6, n_classes=4)
        first = subset(ds, 15, seed=2)
        second = subset(first, 5, seed=3)
        for new_index in range(5):
            original = second.source_ids[new_index]
            assert np.array_equal(second.pixels[new_index], ds.pixels[original])


def test_partition_is_disjoint_and_sized():
    ds = synthetic_patterns(40, seed=1, side=6, n_classes=4)
    a, b, c = partition(ds, [10, 20, 5], seed=4)
    assert (len(a), len(b), len(c)) == (10, 20, 5)
    combined = set(a.source_ids) | set(b.source_ids) | set(c.source_ids)
    assert len(combined) == 35
    with pytest.raises(KTooLarge):
        partition(ds, [30, 20], seed=4)


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_patterns(25, seed=7, side=10, n_classes=6)
        b = synthetic_patterns(25, seed=7, side=10, n_classes=6)
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.labels, b.labels)

    def test_shapes_and_ranges(self):
        ds = synthetic_patterns(25, seed=7, side=10, n_classes=6)
        assert ds.shape == (10, 10, 1)
        assert ds.pixels.min() >= 0.0 and ds.pixels.max() <= 1.0
        assert ds.labels.min() >= 0 and ds.labels.max() < 6

    def test_classes_are_exchangeable_templates(self):
        templates = constellation_templates(28, 10)
        masses = [t.sum() for t in templates]
        assert max(masses) - min(masses) <= 0.1 * max(masses)
        for i in range(10):
            for j in range(i + 1, 10):
                assert np.any(templates[i] != templates[j])

    def test_rejects_single_class(self):
        with pytest.raises(DatasetError):
            synthetic_patterns(4, seed=0, n_classes=1)
