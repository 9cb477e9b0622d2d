"""Datasets: a deterministic synthetic-shapes classification set and IDX loading.

The synthetic set is the self-contained stand-in for a real benchmark: six
28x28 grayscale shape classes with jittered geometry and uniform noise.
Every image is a pure function of (seed, index), so the same seed always
reproduces the same bytes. Even indices form the training split, odd
indices the test split.
"""

import struct
from dataclasses import dataclass

import numpy as np

from faultrange.errors import ConfigError, FormatError
from faultrange.rng import derive_rng

CLASS_NAMES = (
    "filled_square",
    "hollow_square",
    "disk",
    "ring",
    "plus_cross",
    "diag_cross",
)
IMAGE_SIZE = 28


@dataclass
class Dataset:
    images: np.ndarray  # [N, 1, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    class_names: tuple[str, ...]
    dataset_id: str

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigError("images and labels must have equal length")

    def __len__(self):
        return len(self.labels)

    @property
    def train_indices(self) -> np.ndarray:
        return np.arange(0, len(self), 2)

    @property
    def test_indices(self) -> np.ndarray:
        return np.arange(1, len(self), 2)

    def split_indices(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_indices
        if split == "test":
            return self.test_indices
        if split == "all":
            return np.arange(len(self))
        raise ConfigError(f"unknown split {split!r} (expected train/test/all)")


def _draw_shape(label: int, rng: np.random.Generator) -> np.ndarray:
    """One noiseless shape image on a coordinate grid, geometry jittered.

    Large, bold, nearly-uniform shapes keep activations dense and class
    margins uniform across images; both matter for fault campaigns (dense
    activations expose flipped weights, uniform margins keep single faults
    from flipping borderline images).
    """
    cy = 13.5 + rng.uniform(-0.75, 0.75)
    cx = 13.5 + rng.uniform(-0.75, 0.75)
    r = rng.uniform(10.5, 12.0)
    brightness = rng.uniform(0.9, 1.0)
    thickness = 3.5

    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    dy = yy - cy
    dx = xx - cx
    ady, adx = np.abs(dy), np.abs(dx)

    if label == 0:  # filled square
        mask = (ady <= r) & (adx <= r)
    elif label == 1:  # hollow square
        outer = (ady <= r) & (adx <= r)
        inner = (ady <= r - thickness) & (adx <= r - thickness)
        mask = outer & ~inner
    elif label == 2:  # disk
        mask = dy * dy + dx * dx <= r * r
    elif label == 3:  # ring
        d2 = dy * dy + dx * dx
        mask = (d2 <= r * r) & (d2 >= (r - thickness) ** 2)
    elif label == 4:  # plus cross
        mask = ((adx <= thickness / 2) & (ady <= r)) | ((ady <= thickness / 2) & (adx <= r))
    elif label == 5:  # diagonal cross
        box = (ady <= r) & (adx <= r)
        mask = box & ((np.abs(dy - dx) <= thickness) | (np.abs(dy + dx) <= thickness))
    else:
        raise ConfigError(f"no shape defined for label {label}")
    return mask.astype(np.float32) * np.float32(brightness)


def generate_image(seed: int, index: int, noise: float) -> tuple[np.ndarray, int]:
    rng = derive_rng(seed, "shape-image", index)
    # Consecutive index pairs share a class, so the parity split (even = train,
    # odd = test) sees every class on both sides.
    label = (index // 2) % len(CLASS_NAMES)
    img = _draw_shape(label, rng)
    if noise > 0:
        img = img + rng.uniform(0.0, noise, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)[None, :, :], label


def generate_dataset(seed: int, per_class: int, noise: float = 0.1) -> Dataset:
    """Materialize the synthetic set: per_class images for each of the 6 classes."""
    if per_class < 1:
        raise ConfigError("per_class must be >= 1")
    n = per_class * len(CLASS_NAMES)
    images = np.empty((n, 1, IMAGE_SIZE, IMAGE_SIZE), np.float32)
    labels = np.empty(n, np.int64)
    for i in range(n):
        images[i], labels[i] = generate_image(seed, i, noise)
    dataset_id = f"shapes-seed{seed}-n{n}-noise{noise:g}"
    return Dataset(images, labels, CLASS_NAMES, dataset_id)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_exact(fh, count: int, what: str, offset: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated IDX file: expected {count} bytes for {what} at offset {offset}")
    return data


def load_mnist(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian, MNIST layout)."""
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header", 0))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"bad IDX magic 0x{magic:08x} at offset 0 in {images_path} "
                f"(expected 0x{IDX_IMAGES_MAGIC:08x})")
        raw = _read_exact(fh, n * rows * cols, "image payload", 16)
    pixels = np.frombuffer(raw, np.uint8).reshape(n, 1, rows, cols)

    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header", 0))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"bad IDX magic 0x{magic:08x} at offset 0 in {labels_path} "
                f"(expected 0x{IDX_LABELS_MAGIC:08x})")
        raw = _read_exact(fh, n_labels, "label payload", 8)
    labels = np.frombuffer(raw, np.uint8).astype(np.int64)
    if n != n_labels:
        raise FormatError(f"IDX pair mismatch: {n} images vs {n_labels} labels")

    images = (pixels.astype(np.float32) / np.float32(255.0))
    class_names = tuple(str(d) for d in range(10))
    return Dataset(images, labels, class_names, f"mnist-n{n}")
