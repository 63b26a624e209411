import struct

import numpy as np
import pytest

from bitfault import data, nn

import helpers


# ------------------------------------------------------------------ synthetic

def test_synthetic_shapes_and_range():
    ds = data.synthetic_glyphs(50, 20, seed=1)
    assert ds.train_images.shape == (50, 1, 28, 28)
    assert ds.test_images.shape == (20, 1, 28, 28)
    assert ds.num_classes == 10
    assert ds.sample_shape == (1, 28, 28)
    for split in (ds.train_images, ds.test_images):
        assert split.min() >= 0.0 and split.max() <= 1.0
        # snapped to the 1/255 grid so file round trips are exact
        assert np.array_equal(split, np.rint(split * 255.0) / 255.0)


def test_synthetic_exact_class_balance():
    ds = data.synthetic_glyphs(200, 50, seed=2)
    assert np.bincount(ds.train_labels, minlength=10).tolist() == [20] * 10
    assert np.bincount(ds.test_labels, minlength=10).tolist() == [5] * 10


def test_synthetic_determinism():
    a = data.synthetic_glyphs(30, 10, seed=3)
    b = data.synthetic_glyphs(30, 10, seed=3)
    c = data.synthetic_glyphs(30, 10, seed=4)
    assert np.array_equal(a.train_images, b.train_images)
    assert np.array_equal(a.test_labels, b.test_labels)
    assert not np.array_equal(a.train_images, c.train_images)


def test_synthetic_rejects_unbalanced_sizes():
    with pytest.raises(ValueError):
        data.synthetic_glyphs(101, 10)


# ------------------------------------------------------------------- dataset

def test_dataset_validation():
    x = np.zeros((4, 1, 2, 2))
    with pytest.raises(data.DatasetFormatError, match="train"):
        data.Dataset(x, np.zeros(3, np.int64), x, np.zeros(4, np.int64))
    with pytest.raises(data.DatasetFormatError, match="negative"):
        data.Dataset(x, np.array([0, 1, -1, 0]), x, np.zeros(4, np.int64))


# ----------------------------------------------------------------------- IDX

def test_idx_handcrafted_bytes(tmp_path):
    payload = np.arange(10 * 4 * 4, dtype=np.uint8)
    raw = struct.pack(">BBBB3I", 0, 0, 0x08, 3, 10, 4, 4) + payload.tobytes()
    path = tmp_path / "hand.idx"
    path.write_bytes(raw)
    arr = data.load_idx(path)
    assert arr.shape == (10, 4, 4)
    assert arr.dtype == np.uint8
    assert arr[0, 0, 3] == 3


@pytest.mark.parametrize(
    "raw, message",
    [
        (b"\x01\x00\x08\x01", "bad magic"),
        (b"\x00\x00\x07\x01" + struct.pack(">I", 4), "unknown element type"),
        (b"\x00\x00\x08\x02" + struct.pack(">I", 4), "truncated dims"),
        # header 8 bytes + 5 declared elements = 13 expected, 12 on disk
        (b"\x00\x00\x08\x01" + struct.pack(">I", 5) + b"\x00" * 4, "expected 13 bytes, got 12"),
        (b"\x00\x00", "truncated header"),
    ],
)
def test_idx_error_reporting(tmp_path, raw, message):
    p = tmp_path / "bad.idx"
    p.write_bytes(raw)
    with pytest.raises(data.DatasetFormatError, match=message):
        data.load_idx(p)


def test_idx_round_trip(tmp_path):
    ds = data.synthetic_glyphs(30, 10, seed=6)
    root = data.save_dataset(ds, tmp_path / "d", fmt="idx")
    names = sorted(p.name for p in root.iterdir())
    assert names == [
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
    ]
    back = data.load_dataset(root, fmt="idx")
    assert np.array_equal(back.train_images, ds.train_images)
    assert np.array_equal(back.train_labels, ds.train_labels)
    assert np.array_equal(back.test_images, ds.test_images)
    assert np.array_equal(back.test_labels, ds.test_labels)


def test_idx_missing_files(tmp_path):
    (tmp_path / "train-images-idx3-ubyte").write_bytes(b"")
    with pytest.raises(FileNotFoundError, match="t10k-images"):
        data.load_dataset(tmp_path, fmt="idx")


# ----------------------------------------------------------------------- CSV

def test_csv_round_trip(tmp_path):
    ds = data.synthetic_glyphs(20, 10, seed=7)
    root = data.save_dataset(ds, tmp_path / "d", fmt="csv")
    assert (root / "train.csv").exists() and (root / "test.csv").exists()
    back = data.load_dataset(root, fmt="csv")
    assert np.array_equal(back.train_images, ds.train_images)
    assert np.array_equal(back.test_labels, ds.test_labels)


@pytest.mark.parametrize(
    "text, message",
    [
        ("1,0,0,0,0\n2,0,0,0\n", r"bad.csv:2: expected 5 fields, got 4"),
        ("1,0,x,0,0\n", "non-numeric field"),
        ("1,0,0,0\n", "not a square image"),
        ("", "empty file"),
        ("3\n", "need label plus pixels"),
    ],
)
def test_csv_error_reporting(tmp_path, text, message):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(data.DatasetFormatError, match=message):
        data._load_csv_split(p)


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="unknown dataset format"):
        data.load_dataset(tmp_path, fmt="parquet")
    with pytest.raises(ValueError, match="unknown dataset format"):
        data.save_dataset(data.synthetic_glyphs(10, 10), tmp_path / "x", fmt="parquet")


# -------------------------------------------------------------- attack sample

def test_draw_sample_size_bounds():
    ds = data.synthetic_glyphs(20, 10, seed=8)
    model = helpers.tiny_mlp(8, n_in=784, classes=10)
    flat = data.Dataset(
        ds.train_images.reshape(20, -1), ds.train_labels, ds.test_images.reshape(10, -1), ds.test_labels
    )
    with pytest.raises(ValueError):
        data.draw_attack_sample(flat, 0, model, seed=0)
    with pytest.raises(ValueError):
        data.draw_attack_sample(flat, 11, model, seed=0)


def test_draw_sample_full_split_is_permutation():
    ds = data.synthetic_glyphs(20, 10, seed=9)
    model = helpers.tiny_mlp(9, n_in=784, classes=10)
    flat = data.Dataset(
        ds.train_images.reshape(20, -1), ds.train_labels, ds.test_images.reshape(10, -1), ds.test_labels
    )
    sample = data.draw_attack_sample(flat, 10, model, seed=3)
    assert sorted(sample.indices.tolist()) == list(range(10))
    assert sample.size == 10


def test_draw_sample_deterministic_and_pseudo_labeled():
    ds = data.synthetic_glyphs(20, 10, seed=10)
    model = helpers.tiny_mlp(10, n_in=784, classes=10)
    flat = data.Dataset(
        ds.train_images.reshape(20, -1), ds.train_labels, ds.test_images.reshape(10, -1), ds.test_labels
    )
    a = data.draw_attack_sample(flat, 6, model, seed=5)
    b = data.draw_attack_sample(flat, 6, model, seed=5)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.pseudo_targets, b.pseudo_targets)
    # pseudo-targets are the clean model's own calls on those inputs
    assert np.array_equal(a.pseudo_targets, nn.predict(model, a.inputs))
    assert np.array_equal(a.inputs, flat.test_images[a.indices])


def test_draw_sample_never_reads_train_split_or_labels():
    ds = data.synthetic_glyphs(20, 10, seed=11)
    model = helpers.tiny_mlp(11, n_in=784, classes=10)
    flat = data.Dataset(
        ds.train_images.reshape(20, -1), ds.train_labels, ds.test_images.reshape(10, -1), ds.test_labels
    )
    flat.train_images = helpers.Boom()
    flat.train_labels = helpers.Boom()
    flat.test_labels = helpers.Boom()
    sample = data.draw_attack_sample(flat, 4, model, seed=1)
    assert sample.size == 4
