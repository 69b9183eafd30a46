"""Datasets: IDX (MNIST-family) files, synthetic blobs and the bundled 8x8 digits."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .rng import as_rng

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray  # [N, D] in [0, 1]
    labels: np.ndarray  # [N] ints in [0, C)
    class_count: int
    split: str = "train"
    image_shape: tuple | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ContractError(f"inputs must be [N, D], got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ContractError("inputs and labels disagree on N")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ContractError("inputs must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ContractError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def take(self, idx, split=None):
        return Dataset(self.inputs[idx], self.labels[idx], self.class_count,
                       split or self.split, self.image_shape)

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.labels[idx]


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header", offset=len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) < header + size:
        raise FormatError(f"{path}: truncated payload, need {header + size} bytes", offset=len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)
    return count, dims, data


def load_idx(images_path, labels_path, class_count=None, split="train", dtype=np.float32) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255 and flattened."""
    n_img, dims, images = _read_idx(images_path, IDX_IMAGES)
    n_lab, _, labels = _read_idx(labels_path, IDX_LABELS)
    if n_img != n_lab:
        raise FormatError(f"count mismatch: {n_img} images vs {n_lab} labels", offset=4)
    rows, cols = dims[1], dims[2]
    inputs = images.reshape(n_img, rows * cols).astype(dtype) / dtype(255.0)
    labels = labels.astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(inputs, labels, class_count, split, (rows, cols))


def write_idx(dataset: Dataset, images_path, labels_path, image_shape=None):
    """Write a dataset as IDX files (pixels quantised to round(255 x))."""
    shape = image_shape or dataset.image_shape
    if shape is None:
        shape = (1, dataset.dim)
    rows, cols = shape
    if rows * cols != dataset.dim:
        raise ContractError(f"image shape {shape} does not match D={dataset.dim}")
    n = len(dataset)
    pixels = np.rint(np.asarray(dataset.inputs, dtype=np.float64) * 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def make_blobs(n_per_class, n_classes, dim, margin, rng, split="train", dtype=np.float32) -> Dataset:
    """Gaussian blobs around scaled simplex corners inside [0.2, 0.8]^D.

    Class means are ``0.5 + s (e_c - 1/C)`` on the first C coordinates, with
    ``s = margin / sqrt(2)`` so every pair of means is ``margin`` apart.
    Jitter has standard deviation ``margin / 6``; samples are clipped to [0, 1].
    """
    if margin <= 0:
        raise ConfigError("margin must be positive")
    if n_classes < 2 or n_classes > dim:
        raise ConfigError(f"need 2 <= classes <= dim, got C={n_classes}, D={dim}")
    s = margin / np.sqrt(2.0)
    if 0.5 + s * (1 - 1 / n_classes) > 0.8 + 1e-12 or 0.5 - s / n_classes < 0.2 - 1e-12:
        raise ConfigError(f"margin {margin} infeasible for C={n_classes} inside [0.2, 0.8]^D")
    means = np.full((n_classes, dim), 0.5)
    means[:, :n_classes] += s * (np.eye(n_classes) - 1.0 / n_classes)
    gen = as_rng(rng).child("blobs", split).generator()
    labels = np.repeat(np.arange(n_classes), n_per_class)
    x = means[labels] + gen.normal(0.0, margin / 6.0, (labels.size, dim))
    order = gen.permutation(labels.size)
    return Dataset(np.clip(x, 0, 1).astype(dtype)[order], labels[order], n_classes, split)


def subset(dataset: Dataset, rng, fraction=None, count=None) -> Dataset:
    """Uniform sample without replacement, sized by ``fraction`` or ``count``.

    Subsets drawn with different seeds may overlap.
    """
    n = len(dataset)
    if count is None:
        if fraction is None or not 0 < fraction <= 1:
            raise ContractError("fraction must lie in (0, 1]")
        count = int(round(fraction * n))
    if not 0 <= count <= n:
        raise ContractError(f"count {count} outside [0, {n}]")
    gen = as_rng(rng).child("subset").generator()
    idx = gen.permutation(n)[:count]
    return dataset.take(idx)


def load_digits(classes=None, n_train=None, n_test=None, rng=0, dtype=np.float32, upsample=1):
    """The 8x8 handwritten digits bundled with scikit-learn, split into train/test.

    Pixel intensities 0..16 are quantised to 0..255 first so the data is
    byte-identical to its IDX export. ``upsample=f`` repeats every pixel into
    an f x f block, giving 8f x 8f images.
    """
    from sklearn.datasets import load_digits as _sk_digits

    upsample = int(upsample)
    if upsample < 1:
        raise ConfigError("upsample factor must be >= 1")
    bunch = _sk_digits()
    pixels = np.rint(bunch.data * (255.0 / 16.0)).astype(np.uint8)
    side = 8 * upsample
    if upsample > 1:
        blocks = np.ones((1, upsample, upsample), dtype=np.uint8)
        pixels = np.kron(pixels.reshape(-1, 8, 8), blocks).reshape(len(pixels), side * side)
    labels = bunch.target.astype(np.int64)
    if classes is not None:
        classes = list(classes)
        keep = np.isin(labels, classes)
        pixels, labels = pixels[keep], labels[keep]
        labels = np.searchsorted(np.asarray(sorted(classes)), labels)
        class_count = len(classes)
    else:
        class_count = 10
    gen = as_rng(rng).child("digits-split").generator()
    order = gen.permutation(labels.size)
    n_test = int(n_test) if n_test is not None else labels.size // 4
    n_train = int(n_train) if n_train is not None else labels.size - n_test
    if n_train + n_test > labels.size:
        raise ConfigError(f"requested {n_train}+{n_test} examples, only {labels.size} available")
    inputs = pixels.astype(dtype) / dtype(255.0)
    tr, te = order[n_test:n_test + n_train], order[:n_test]
    train = Dataset(inputs[tr], labels[tr], class_count, "train", (side, side))
    test = Dataset(inputs[te], labels[te], class_count, "test", (side, side))
    return train, test
