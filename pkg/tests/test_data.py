import struct

import numpy as np
import pytest

from faultrange.data import (
    CLASS_NAMES,
    Dataset,
    generate_dataset,
    generate_image,
    load_mnist,
)
from faultrange.errors import ConfigError, FormatError


def test_same_seed_identical_bytes():
    a = generate_dataset(7, 4, 0.1)
    b = generate_dataset(7, 4, 0.1)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.labels, b.labels)


def test_different_seed_differs():
    a = generate_dataset(7, 4, 0.1)
    b = generate_dataset(8, 4, 0.1)
    assert a.images.tobytes() != b.images.tobytes()


def test_counts_and_balance():
    ds = generate_dataset(1, 100, 0.1)
    assert len(ds) == 600
    assert np.array_equal(np.bincount(ds.labels), [100] * 6)
    # parity split keeps every class balanced on both sides
    for idx in (ds.train_indices, ds.test_indices):
        assert np.array_equal(np.bincount(ds.labels[idx]), [50] * 6)


def test_pixels_in_unit_interval():
    ds = generate_dataset(3, 10, 0.5)
    assert ds.images.min() >= 0.0
    assert ds.images.max() <= 1.0


def test_image_pure_function_of_seed_index():
    img1, label1 = generate_image(5, 9, 0.2)
    img2, label2 = generate_image(5, 9, 0.2)
    assert img1.tobytes() == img2.tobytes()
    assert label1 == label2


def test_per_class_validation():
    with pytest.raises(ConfigError):
        generate_dataset(1, 0)


def test_class_names_stable():
    assert len(CLASS_NAMES) == 6
    assert CLASS_NAMES[0] == "filled_square"


def test_length_mismatch_rejected():
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 1, 4, 4), np.float32), np.zeros(3, np.int64), ("a",), "x")


# --------------------------------------------------------------------------
# IDX loading

def write_idx_pair(tmp_path, n=7, rows=28, cols=28, image_magic=0x803, label_magic=0x801,
                   truncate_images=0):
    pixels = (np.arange(n * rows * cols) % 256).astype(np.uint8)
    raw = struct.pack(">IIII", image_magic, n, rows, cols) + pixels.tobytes()
    if truncate_images:
        raw = raw[:-truncate_images]
    images_path = tmp_path / "images.idx"
    images_path.write_bytes(raw)
    labels = (np.arange(n) % 10).astype(np.uint8)
    labels_path = tmp_path / "labels.idx"
    labels_path.write_bytes(struct.pack(">II", label_magic, n) + labels.tobytes())
    return str(images_path), str(labels_path)


def test_idx_round_trip(tmp_path):
    images_path, labels_path = write_idx_pair(tmp_path)
    ds = load_mnist(images_path, labels_path)
    assert ds.images.shape == (7, 1, 28, 28)
    assert ds.images.dtype == np.float32
    assert ds.images.max() <= 1.0
    # scaling is exact division by 255
    assert ds.images[0, 0, 0, 1] == np.float32(1.0) / np.float32(255.0)
    assert list(ds.labels) == [0, 1, 2, 3, 4, 5, 6]


def test_idx_bad_image_magic(tmp_path):
    images_path, labels_path = write_idx_pair(tmp_path, image_magic=0x801)
    with pytest.raises(FormatError, match="magic.*offset 0"):
        load_mnist(images_path, labels_path)


def test_idx_bad_label_magic(tmp_path):
    images_path, labels_path = write_idx_pair(tmp_path, label_magic=0x803)
    with pytest.raises(FormatError, match="magic"):
        load_mnist(images_path, labels_path)


def test_idx_truncated_payload(tmp_path):
    images_path, labels_path = write_idx_pair(tmp_path, truncate_images=10)
    with pytest.raises(FormatError, match="truncated"):
        load_mnist(images_path, labels_path)


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    images_path, _ = write_idx_pair(tmp_path / "a", n=7)
    _, labels_path = write_idx_pair(tmp_path / "b", n=5)
    with pytest.raises(FormatError, match="mismatch"):
        load_mnist(images_path, labels_path)
