"""Datasets: MNIST-style IDX files and seeded synthetic blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ratenorm.errors import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def take(self, idx, split: str | None = None) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split, self.name)

    def flat(self) -> Dataset:
        return Dataset(self.inputs.reshape(len(self), -1), self.labels, self.split, self.name)


def _read_idx(path: Path, magic: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header != expected:
        raise FormatError(f"{path}: expected {expected} data bytes for shape {dims}, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, split: str = "train") -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    for p in (images_path, labels_path):
        if not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), split, images_path.stem)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: str | Path, labels_path: str | Path) -> None:
    """Write uint8 images ``[N, rows, cols]`` and labels ``[N]`` as IDX files."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError(f"expected images [N, rows, cols] and labels [N], got {images.shape} and {labels.shape}")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def gen_synthetic(seed: int, n: int, classes: int, dim: int, split: str = "train") -> Dataset:
    """Gaussian blobs in ``[0, 1]^dim``, one per class, labels assigned round-robin.

    The blob width is one eighth of the smallest distance between centres,
    so any two centres are at least 8 sigma apart.
    """
    if n < classes:
        raise ValueError(f"need n >= classes, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(classes, dim))
    if classes > 1:
        d = np.linalg.norm(centres[:, None, :] - centres[None, :, :], axis=2)
        sigma = d[np.triu_indices(classes, 1)].min() / 8.0
    else:
        sigma = 0.05
    labels = np.arange(n) % classes
    x = np.clip(centres[labels] + sigma * rng.standard_normal((n, dim)), 0.0, 1.0)
    return Dataset(x, labels, split, f"blobs-{classes}x{dim}")


def train_test_subset(
    train: Dataset, test: Dataset | None, n_train: int, n_test: int, seed: int
) -> tuple[Dataset, Dataset]:
    """Seeded subsets; draws disjoint subsets from ``train`` when ``test`` is None."""
    rng = np.random.default_rng(seed)
    if test is None:
        if n_train + n_test > len(train):
            raise ValueError(f"cannot draw {n_train}+{n_test} disjoint samples from {len(train)}")
        idx = rng.permutation(len(train))
        return train.take(np.sort(idx[:n_train]), "train"), train.take(np.sort(idx[n_train : n_train + n_test]), "test")
    if n_train > len(train) or n_test > len(test):
        raise ValueError(f"subset sizes {n_train}/{n_test} exceed available {len(train)}/{len(test)}")
    tr = rng.permutation(len(train))[:n_train]
    te = rng.permutation(len(test))[:n_test]
    return train.take(np.sort(tr), "train"), test.take(np.sort(te), "test")
