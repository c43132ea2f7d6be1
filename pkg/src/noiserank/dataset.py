"""Labeled image datasets: IDX and CSV ingestion, seeded subsets, export.

Pixels are normalized to [0, 1] everywhere downstream, so "reverse a pixel"
is v -> 1 - v and perturbation replacement values live on the same scale.
Datasets are immutable after load and safe to share between workers.
"""
from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
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


@dataclass(frozen=True)
class Example:
    id: int
    pixels: np.ndarray  # (h, w, c), values in [0, 1]
    true_label: int


@dataclass(frozen=True)
class Dataset:
    """Immutable image set with contiguous ids 0..m-1.

    ``source_ids`` preserves provenance through subsetting: entry i is the id
    the i-th example had in the original full dataset.
    """

    pixels: np.ndarray  # (m, h, w, c)
    labels: np.ndarray  # (m,)
    n_classes: int
    source: str | None = None
    seed: int | None = None
    source_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise DatasetError(f"pixels must be (m, h, w, c), got shape {self.pixels.shape}")
        if self.pixels.shape[0] != self.labels.shape[0]:
            raise CountMismatch(
                f"{self.pixels.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        if self.n_classes < 2:
            raise DatasetError("need at least 2 classes")
        if self.pixels.size:
            if not np.all(np.isfinite(self.pixels)):
                raise DatasetError("non-finite pixel values")
            lo, hi = float(self.pixels.min()), float(self.pixels.max())
            if lo < 0.0 or hi > 1.0:
                raise DatasetError(f"pixels outside [0, 1]: range [{lo}, {hi}]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelOutOfRange(
                f"labels must lie in [0, {self.n_classes}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        self.pixels.flags.writeable = False
        self.labels.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def example(self, i: int) -> Example:
        return Example(id=i, pixels=self.pixels[i], true_label=int(self.labels[i]))

    def __iter__(self) -> Iterator[Example]:
        return (self.example(i) for i in range(len(self)))


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _take(buf: bytes, offset: int, count: int, path) -> bytes:
    if offset + count > len(buf):
        raise TruncatedFile(f"{path}: wanted {offset + count} bytes, file has {len(buf)}")
    return buf[offset : offset + count]


def load_idx(
    images_path: str | Path, labels_path: str | Path, n_classes: int | None = None
) -> Dataset:
    """Decode a big-endian IDX image/label file pair.

    Image files carry magic 0x00000803 and dimensions (count, rows, cols);
    label files carry magic 0x00000801. 8-bit pixels are divided by 255.
    """
    img_buf = _read_bytes(images_path)
    magic, count, rows, cols = struct.unpack(">IIII", _take(img_buf, 0, 16, images_path))
    if magic != IMAGE_MAGIC:
        raise BadMagic(f"{images_path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
    pixel_bytes = _take(img_buf, 16, count * rows * cols, images_path)

    lab_buf = _read_bytes(labels_path)
    lab_magic, lab_count = struct.unpack(">II", _take(lab_buf, 0, 8, labels_path))
    if lab_magic != LABEL_MAGIC:
        raise BadMagic(f"{labels_path}: magic {lab_magic:#010x}, expected {LABEL_MAGIC:#010x}")
    if lab_count != count:
        raise CountMismatch(f"{count} images but {lab_count} labels")
    label_bytes = _take(lab_buf, 8, count, labels_path)

    pixels = np.frombuffer(pixel_bytes, dtype=np.uint8).astype(np.float64) / 255.0
    pixels = pixels.reshape(count, rows, cols, 1)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 2
    return Dataset(pixels=pixels, labels=labels, n_classes=n_classes, source=str(images_path))


def load_csv(path: str | Path, shape: Sequence[int], n_classes: int) -> Dataset:
    """Load ``label,p_0,...,p_{hwc-1}`` rows; 0-255 pixels are auto-rescaled.

    Rescaling triggers when the file-wide pixel maximum exceeds 1.
    """
    h, w, c = (int(s) for s in shape)
    expected = h * w * c
    labels: list[int] = []
    rows: list[np.ndarray] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) - 1 != expected:
                raise RowLengthMismatch(
                    f"{path}:{lineno}: {len(row) - 1} pixel cells, expected {expected}"
                )
            try:
                label = int(row[0])
                values = np.array([float(cell) for cell in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise NonNumericCell(f"{path}:{lineno}: {exc}") from exc
            if not np.all(np.isfinite(values)):
                raise NonNumericCell(f"{path}:{lineno}: non-finite pixel value")
            if not 0 <= label < n_classes:
                raise LabelOutOfRange(f"{path}:{lineno}: label {label} not in [0, {n_classes})")
            labels.append(label)
            rows.append(values)
    if rows:
        pixels = np.stack(rows).reshape(len(rows), h, w, c)
        if pixels.max() > 1.0:
            pixels = pixels / 255.0
    else:
        pixels = np.zeros((0, h, w, c), dtype=np.float64)
    return Dataset(
        pixels=pixels,
        labels=np.asarray(labels, dtype=np.int64),
        n_classes=n_classes,
        source=str(path),
    )


def _source_ids(ds: Dataset, indices: np.ndarray) -> tuple[int, ...]:
    if ds.source_ids is not None:
        return tuple(ds.source_ids[i] for i in indices)
    return tuple(int(i) for i in indices)


def subset(ds: Dataset, k: int, seed: int) -> Dataset:
    """Seeded uniform sample of ``k`` examples without replacement.

    Ids are reassigned contiguously; the originals survive in ``source_ids``
    and in the export sidecar.
    """
    if k > len(ds):
        raise KTooLarge(f"k={k} but dataset has {len(ds)} examples")
    rng = np.random.Generator(np.random.PCG64(seed))
    indices = rng.choice(len(ds), size=k, replace=False)
    return Dataset(
        pixels=ds.pixels[indices].copy(),
        labels=ds.labels[indices].copy(),
        n_classes=ds.n_classes,
        source=ds.source,
        seed=seed,
        source_ids=_source_ids(ds, indices),
    )


def partition(ds: Dataset, sizes: Sequence[int], seed: int) -> list[Dataset]:
    """Split into disjoint seeded parts of the given sizes."""
    if sum(sizes) > len(ds):
        raise KTooLarge(f"partition sizes sum to {sum(sizes)} but dataset has {len(ds)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(ds))
    parts: list[Dataset] = []
    start = 0
    for size in sizes:
        indices = perm[start : start + size]
        start += size
        parts.append(
            Dataset(
                pixels=ds.pixels[indices].copy(),
                labels=ds.labels[indices].copy(),
                n_classes=ds.n_classes,
                source=ds.source,
                seed=seed,
                source_ids=_source_ids(ds, indices),
            )
        )
    return parts


def export_csv(ds: Dataset, path: str | Path) -> None:
    """Write the loadable CSV plus a ``<path>.json`` provenance sidecar.

    Floats are written with repr so a reload reproduces pixels exactly.
    """
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for ex in ds:
            writer.writerow([ex.true_label] + [repr(float(v)) for v in ex.pixels.reshape(-1)])
    sidecar = {
        "shape": list(ds.shape),
        "n_classes": ds.n_classes,
        "source": ds.source,
        "seed": ds.seed,
        "original_ids": list(ds.source_ids) if ds.source_ids is not None else None,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


# --- synthetic constellation data ---------------------------------------------
#
# Each class is a constellation of three round blobs on a ring; class k is the
# rotation of class 0 by k ring positions, so classes are exchangeable by
# construction (same pixel mass, same pairwise overlap structure). Example
# difficulty is controlled by a per-example intensity factor and optional
# blending with a second class, which yields a smooth spectrum from confident
# to boundary-hugging model outputs without any external data files.

_BLOB_OFFSETS = (0, 2, 5)


def constellation_templates(side: int, n_classes: int) -> list[np.ndarray]:
    """One rotationally-symmetric blob pattern per class, values in {0, 1}."""
    ring = n_classes if n_classes >= 7 else 3 * n_classes
    center = (side - 1) / 2.0
    ring_radius = side * 0.32
    blob_radius = max(1.5, side / 12.7)
    yy, xx = np.mgrid[0:side, 0:side]
    templates = []
    for k in range(n_classes):
        img = np.zeros((side, side), dtype=np.float64)
        for offset in _BLOB_OFFSETS:
            angle = 2.0 * np.pi * ((k + offset) % ring) / ring
            by = center - ring_radius * np.cos(angle)
            bx = center + ring_radius * np.sin(angle)
            img = np.maximum(img, ((yy - by) ** 2 + (xx - bx) ** 2 <= blob_radius**2) * 1.0)
        templates.append(img)
    return templates


def synthetic_patterns(
    n: int,
    seed: int,
    side: int = 28,
    n_classes: int = 10,
    ambiguity: float = 0.15,
    noise: float = 0.08,
    intensity: tuple[float, float] = (0.55, 1.0),
) -> Dataset:
    """Generate ``n`` seeded constellation images.

    ``ambiguity`` is the fraction of examples blended with a second class
    (blend weight uniform in [0.05, 0.35]); ``intensity`` scales each whole
    example, so faint examples produce low-confidence model outputs; ``noise``
    is additive Gaussian sigma per pixel.
    """
    if n_classes < 2:
        raise DatasetError("need at least 2 classes")
    rng = np.random.Generator(np.random.PCG64(seed))
    templates = constellation_templates(side, n_classes)
    pixels = np.zeros((n, side, side, 1), dtype=np.float64)
    labels = rng.integers(0, n_classes, size=n)
    for i in range(n):
        label = int(labels[i])
        img = templates[label].copy()
        if rng.random() < ambiguity:
            other = int(rng.integers(0, n_classes - 1))
            if other >= label:
                other += 1
            alpha = rng.uniform(0.05, 0.35)
            img = (1.0 - alpha) * img + alpha * templates[other]
        img = img * rng.uniform(intensity[0], intensity[1])
        if noise > 0.0:
            img = img + rng.normal(0.0, noise, size=img.shape)
        pixels[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(
        pixels=pixels,
        labels=labels.astype(np.int64),
        n_classes=n_classes,
        source=f"synthetic(seed={seed})",
        seed=seed,
    )
