import os
import struct
from pathlib import Path

import numpy as np
import pytest

from ratenorm.data import Dataset, gen_synthetic, load_idx, train_test_subset, write_idx
from ratenorm.errors import FormatError


def _pair(tmp_path, n=5, rows=4, cols=3, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    ip, lp = tmp_path / "img", tmp_path / "lab"
    write_idx(images, labels, ip, lp)
    return images, labels, ip, lp


def test_idx_roundtrip(tmp_path):
    images, labels, ip, lp = _pair(tmp_path)
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (5, 1, 4, 3)
    np.testing.assert_array_equal(np.rint(ds.inputs[:, 0] * 255).astype(np.uint8), images)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_idx_all_zero_images(tmp_path):
    ip, lp = tmp_path / "img", tmp_path / "lab"
    write_idx(np.zeros((3, 2, 2), np.uint8), np.array([1, 2, 3], np.uint8), ip, lp)
    ds = load_idx(ip, lp)
    assert not ds.inputs.any()


def test_idx_bad_magic(tmp_path):
    _, _, ip, lp = _pair(tmp_path)
    raw = bytearray(ip.read_bytes())
    raw[:4] = struct.pack(">I", 0x0801)
    ip.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_idx(ip, lp)


def test_idx_truncated(tmp_path):
    _, _, ip, lp = _pair(tmp_path)
    ip.write_bytes(ip.read_bytes()[:-7])
    with pytest.raises(FormatError):
        load_idx(ip, lp)
    ip.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    _, _, ip, lp = _pair(tmp_path)
    write_idx(np.zeros((4, 1, 1), np.uint8), np.zeros(4, np.uint8), tmp_path / "i2", tmp_path / "l2")
    with pytest.raises(FormatError, match="labels"):
        load_idx(ip, tmp_path / "l2")


def test_idx_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope"):
        load_idx(tmp_path / "nope", tmp_path / "nope2")


def test_mnist_sample_loads(mnist_dir):
    ds = load_idx(mnist_dir / "images-idx3-ubyte", mnist_dir / "labels-idx1-ubyte")
    assert ds.inputs.shape[1:] == (1, 28, 28)
    assert ds.n_classes == 10


@pytest.mark.skipif(
    not (os.environ.get("RATENORM_MNIST_DIR") and (Path(os.environ.get("RATENORM_MNIST_DIR", "")) / "t10k-images-idx3-ubyte").is_file()),
    reason="official MNIST test files not available",
)
def test_official_mnist_test_file():
    root = Path(os.environ["RATENORM_MNIST_DIR"])
    ds = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", "test")
    assert ds.inputs.shape == (10000, 1, 28, 28)
    assert set(np.unique(ds.labels)) == set(range(10))


def test_synthetic_determinism():
    a, b = gen_synthetic(4, 100, 3, 6), gen_synthetic(4, 100, 3, 6)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.inputs, gen_synthetic(5, 100, 3, 6).inputs)


def test_synthetic_balanced_and_in_range():
    ds = gen_synthetic(0, 103, 4, 5)
    counts = np.bincount(ds.labels)
    assert counts.max() - counts.min() <= 1
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_synthetic_linearly_separable(seed):
    # nearest-centroid is a linear classifier; fit on one draw, score on another
    train = gen_synthetic(seed, 400, 5, 12)
    centres = np.stack([train.inputs[train.labels == c].mean(axis=0) for c in range(5)])
    rng = np.random.default_rng(seed)
    held = train.take(rng.permutation(400)[:200])
    d = np.linalg.norm(held.inputs[:, None, :] - centres[None], axis=2)
    assert np.mean(d.argmin(axis=1) == held.labels) >= 0.99


def test_synthetic_rejects_too_few():
    with pytest.raises(ValueError):
        gen_synthetic(0, 2, 3, 4)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[1.5]]), np.array([0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([0]))


def test_subset_disjoint_and_seeded():
    ds = gen_synthetic(0, 50, 2, 3)
    tr, te = train_test_subset(ds, None, 30, 15, seed=9)
    assert len(tr) == 30 and len(te) == 15
    key = lambda d: {tuple(r) for r in d.inputs}
    assert not key(tr) & key(te)
    tr2, _ = train_test_subset(ds, None, 30, 15, seed=9)
    np.testing.assert_array_equal(tr.inputs, tr2.inputs)
    with pytest.raises(ValueError):
        train_test_subset(ds, None, 40, 20, seed=0)
