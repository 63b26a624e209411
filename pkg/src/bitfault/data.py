"""Datasets: IDX and CSV ingestion, a deterministic synthetic 10-class image
set, and attack-sample drawing with model-predicted pseudo-targets.

Images are float64 in [0, 1], shaped (n, channels, h, w) for image data or
(n, features) for flat data; labels are int64 class indices.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray

    def __post_init__(self):
        self.train_images = np.asarray(self.train_images, nn.FLOAT)
        self.test_images = np.asarray(self.test_images, nn.FLOAT)
        self.train_labels = np.asarray(self.train_labels, np.int64)
        self.test_labels = np.asarray(self.test_labels, np.int64)
        for split, images, labels in (
            ("train", self.train_images, self.train_labels),
            ("test", self.test_images, self.test_labels),
        ):
            if len(images) != len(labels):
                raise DatasetFormatError(
                    f"{split}: {len(images)} images but {len(labels)} labels"
                )
            if labels.size and labels.min() < 0:
                raise DatasetFormatError(f"{split}: negative label")

    @property
    def num_classes(self):
        return int(max(self.train_labels.max(), self.test_labels.max())) + 1

    @property
    def sample_shape(self):
        return self.train_images.shape[1:]


@dataclass
class AttackSample:
    """Frozen attack batch: inputs plus the clean model's argmax labels."""

    inputs: np.ndarray
    pseudo_targets: np.ndarray
    indices: np.ndarray
    seed: int

    @property
    def size(self):
        return len(self.inputs)


# ---------------------------------------------------------------- IDX format

_IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

_IDX_CODES = {np.uint8: 0x08}

_IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def load_idx(path):
    """One IDX tensor: big-endian magic, dims, then row-major payload."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: truncated header, expected >= 4 bytes, got {len(raw)}")
    if raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4].hex()} at byte 0")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code not in _IDX_DTYPES:
        raise DatasetFormatError(f"{path}: unknown element type 0x{dtype_code:02x} at byte 2")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetFormatError(f"{path}: truncated dims, expected {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[dtype_code]
    expected = header + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise DatasetFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype, offset=header).reshape(dims).copy()


def _write_idx(path, array):
    dtype_code = _IDX_CODES[array.dtype.type]
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">BBBB{array.ndim}I", 0, 0, dtype_code, array.ndim, *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())


def _as_images(arr, path):
    if arr.ndim == 3:
        arr = arr[:, None]
    elif arr.ndim != 4:
        raise DatasetFormatError(f"{path}: image tensor must be rank 3 or 4, got rank {arr.ndim}")
    if arr.dtype == np.uint8:
        return arr.astype(nn.FLOAT) / 255.0
    return arr.astype(nn.FLOAT)


def _as_labels(arr, path):
    if arr.ndim != 1:
        raise DatasetFormatError(f"{path}: label tensor must be rank 1, got rank {arr.ndim}")
    return arr.astype(np.int64)


# ----------------------------------------------------------------- CSV format

def _load_csv_split(path):
    """Rows of ``label,p0,...,p(k-1)`` with square images, pixels 0..255."""
    path = Path(path)
    labels, pixels = [], []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise DatasetFormatError(f"{path}:{lineno}: need label plus pixels")
            elif len(parts) != width:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {width} fields, got {len(parts)}"
                )
            try:
                labels.append(int(parts[0]))
                pixels.append([float(p) for p in parts[1:]])
            except ValueError:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric field") from None
    if width is None:
        raise DatasetFormatError(f"{path}: empty file")
    side = math.isqrt(width - 1)
    if side * side != width - 1:
        raise DatasetFormatError(f"{path}: {width - 1} pixels is not a square image")
    images = np.asarray(pixels, nn.FLOAT).reshape(-1, 1, side, side) / 255.0
    return images, np.asarray(labels, np.int64)


def _write_csv_split(path, images, labels):
    flat = np.rint(images.reshape(len(images), -1) * 255.0).astype(np.int64)
    with open(path, "w", encoding="ascii", newline="") as fh:
        for label, row in zip(labels, flat):
            fh.write(f"{int(label)}," + ",".join(str(v) for v in row) + "\n")


# ------------------------------------------------------------------- loaders

def load_dataset(path, fmt="idx"):
    """Load a train/test dataset directory in ``idx`` or ``csv`` layout."""
    root = Path(path)
    if fmt == "idx":
        paths = {key: root / name for key, name in _IDX_FILES.items()}
        missing = [p.name for p in paths.values() if not p.exists()]
        if missing:
            raise FileNotFoundError(f"{root}: missing IDX files: {', '.join(missing)}")
        return Dataset(
            _as_images(load_idx(paths["train_images"]), paths["train_images"]),
            _as_labels(load_idx(paths["train_labels"]), paths["train_labels"]),
            _as_images(load_idx(paths["test_images"]), paths["test_images"]),
            _as_labels(load_idx(paths["test_labels"]), paths["test_labels"]),
        )
    if fmt == "csv":
        train = root / "train.csv"
        test = root / "test.csv"
        for p in (train, test):
            if not p.exists():
                raise FileNotFoundError(f"{root}: missing {p.name}")
        train_x, train_y = _load_csv_split(train)
        test_x, test_y = _load_csv_split(test)
        return Dataset(train_x, train_y, test_x, test_y)
    raise ValueError(f"unknown dataset format {fmt!r} (expected 'idx' or 'csv')")


def save_dataset(dataset, path, fmt="idx"):
    """Write a dataset directory in the layout :func:`load_dataset` reads."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    to_u8 = lambda x: np.rint(np.asarray(x) * 255.0).astype(np.uint8)  # noqa: E731
    if fmt == "idx":
        _write_idx(root / _IDX_FILES["train_images"], to_u8(dataset.train_images[:, 0]))
        _write_idx(root / _IDX_FILES["train_labels"], dataset.train_labels.astype(np.uint8))
        _write_idx(root / _IDX_FILES["test_images"], to_u8(dataset.test_images[:, 0]))
        _write_idx(root / _IDX_FILES["test_labels"], dataset.test_labels.astype(np.uint8))
    elif fmt == "csv":
        _write_csv_split(root / "train.csv", dataset.train_images, dataset.train_labels)
        _write_csv_split(root / "test.csv", dataset.test_images, dataset.test_labels)
    else:
        raise ValueError(f"unknown dataset format {fmt!r} (expected 'idx' or 'csv')")
    return root


# ------------------------------------------------------------ synthetic data

_GLYPH_ROWS = {
    0: ("########", "##....##", "#......#", "#......#", "#......#", "#......#", "##....##", "########"),
    1: ("...##...",) * 8,
    2: ("##....##", "###..###", ".######.", "..####..", "..####..", ".######.", "###..###", "##....##"),
    3: ("...##...", "...##...", "########", "########", "...##...", "...##...", "...##...", "...##..."),
    4: ("########", "########", "........", "........", "########", "########", "........", "........"),
    5: ("##..##..", "##..##..", "##..##..", "##..##..", "##..##..", "##..##..", "##..##..", "##..##.."),
    6: ("########",) * 8,
    7: ("########", "########", "...##...", "...##...", "...##...", "...##...", "...##...", "...##..."),
    8: ("##......", "##......", "##......", "##......", "##......", "##......", "########", "########"),
    9: ("##......", ".##.....", "..##....", "...##...", "....##..", ".....##.", "......##", ".......#"),
}


def _prototypes():
    protos = np.zeros((10, 8, 8), nn.FLOAT)
    for cls, rows in _GLYPH_ROWS.items():
        for r, row in enumerate(rows):
            protos[cls, r] = [1.0 if ch == "#" else 0.0 for ch in row]
    return protos


def synthetic_glyphs(n_train=4000, n_test=1000, seed=7, image_size=28, noise=0.25):
    """Balanced 10-class 28x28 set: jittered, noisy, rescaled glyph stamps.

    Pixel values are snapped to the 1/255 grid so loading the set back from
    an IDX/CSV export reproduces the exact same tensors.
    """
    if n_train % 10 or n_test % 10:
        raise ValueError("split sizes must be multiples of 10 for exact class balance")
    rng = np.random.default_rng(seed)
    protos = _prototypes()
    stamp = 16  # 8x8 prototype scaled x2
    span = image_size - stamp
    n = n_train + n_test
    # balance each split exactly so random guessing is exactly 1/10 on both
    labels = np.concatenate(
        [
            rng.permutation(np.repeat(np.arange(10, dtype=np.int64), n_train // 10)),
            rng.permutation(np.repeat(np.arange(10, dtype=np.int64), n_test // 10)),
        ]
    )
    images = np.empty((n, 1, image_size, image_size), nn.FLOAT)
    for i in range(n):
        canvas = rng.normal(0.0, noise, (image_size, image_size))
        y, x = rng.integers(0, span + 1, 2)
        scale = rng.uniform(0.45, 1.0)
        glyph = np.kron(protos[labels[i]], np.ones((2, 2))) * scale
        canvas[y : y + stamp, x : x + stamp] += glyph
        images[i, 0] = np.rint(np.clip(canvas, 0.0, 1.0) * 255.0) / 255.0
    return Dataset(images[:n_train], labels[:n_train], images[n_train:], labels[n_train:])


# -------------------------------------------------------------- attack sample

def draw_attack_sample(dataset, size, model, seed):
    """Uniform test-split subset with pseudo-targets from the clean model.

    Targets are the model's argmax predictions, frozen here; ground-truth
    labels and the training split are never read.
    """
    n = len(dataset.test_images)
    if not 1 <= size <= n:
        raise ValueError(f"sample size must be in [1, {n}], got {size}")
    rng = np.random.default_rng(seed)
    indices = rng.choice(n, size=size, replace=False)
    inputs = dataset.test_images[indices].copy()
    pseudo = nn.predict(model, inputs)
    return AttackSample(inputs, pseudo, indices, seed)
