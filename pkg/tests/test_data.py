import gzip
import struct

import numpy as np
import pytest

from snaplab import data
from snaplab.errors import ConfigError, ContractError, FormatError
from snaplab.rng import Rng


def write_raw_idx(tmp_path, pixels, labels, img_magic=0x803, lbl_count=None, gz=False):
    n, r, c = pixels.shape
    img = struct.pack(">IIII", img_magic, n, r, c) + pixels.astype(np.uint8).tobytes()
    lbl = struct.pack(">II", 0x801, n if lbl_count is None else lbl_count) + labels.astype(np.uint8).tobytes()
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lbl{suffix}"
    opener = gzip.open if gz else open
    with opener(ip, "wb") as fh:
        fh.write(img)
    with opener(lp, "wb") as fh:
        fh.write(lbl)
    return ip, lp


@pytest.mark.parametrize("gz", [False, True])
def test_idx_pixel_scaling(tmp_path, gz):
    pixels = np.zeros((2, 2, 3), dtype=np.uint8)
    pixels[0, 0, 0] = 255
    ip, lp = write_raw_idx(tmp_path, pixels, np.array([1, 0]), gz=gz)
    ds = data.load_idx(ip, lp, class_count=2)
    assert ds.inputs.shape == (2, 6) and ds.image_shape == (2, 3)
    assert ds.inputs[0, 0] == 1.0 and ds.inputs.sum() == 1.0
    assert ds.labels.tolist() == [1, 0]


def test_idx_count_mismatch(tmp_path):
    ip, lp = write_raw_idx(tmp_path, np.zeros((3, 2, 2)), np.zeros(3), lbl_count=2)
    with pytest.raises(FormatError, match="offset"):
        data.load_idx(ip, lp)


def test_idx_bad_magic(tmp_path):
    ip, lp = write_raw_idx(tmp_path, np.zeros((1, 2, 2)), np.zeros(1), img_magic=0x804)
    with pytest.raises(FormatError) as err:
        data.load_idx(ip, lp)
    assert err.value.offset == 0


def test_idx_truncated(tmp_path):
    ip, lp = write_raw_idx(tmp_path, np.zeros((2, 4, 4)), np.zeros(2))
    ip.write_bytes(ip.read_bytes()[:-5])
    with pytest.raises(FormatError):
        data.load_idx(ip, lp)


def test_idx_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_idx(tmp_path / "nope", tmp_path / "nope2")


def test_idx_round_trip_digits(tmp_path):
    train, _ = data.load_digits(n_train=50, n_test=10, rng=0)
    data.write_idx(train, tmp_path / "i", tmp_path / "l")
    back = data.load_idx(tmp_path / "i", tmp_path / "l", class_count=10)
    assert np.array_equal(back.inputs, train.inputs)
    assert np.array_equal(back.labels, train.labels)


def test_dataset_validation():
    with pytest.raises(ContractError):
        data.Dataset(np.full((2, 3), 1.5), np.zeros(2), 2)
    with pytest.raises(ContractError):
        data.Dataset(np.zeros((2, 3)), np.array([0, 2]), 2)
    with pytest.raises(ContractError):
        data.Dataset(np.zeros((2, 3)), np.zeros(3), 2)


def test_blobs_geometry_and_determinism():
    a = data.make_blobs(200, 3, 5, 0.4, Rng(0))
    b = data.make_blobs(200, 3, 5, 0.4, Rng(0))
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    assert a.inputs.shape == (600, 5) and np.bincount(a.labels).tolist() == [200] * 3
    means = np.stack([a.inputs[a.labels == c].mean(axis=0) for c in range(3)])
    dists = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(3, 1)]
    np.testing.assert_allclose(dists, 0.4, atol=0.03)
    # nearest-mean classification is close to perfect at this margin
    pred = np.argmin(np.linalg.norm(a.inputs[:, None] - means[None], axis=-1), axis=1)
    assert np.mean(pred == a.labels) > 0.97
    test = data.make_blobs(200, 3, 5, 0.4, Rng(0), split="test")
    assert not np.array_equal(test.inputs, a.inputs)


def test_blobs_infeasible_margin():
    with pytest.raises(ConfigError):
        data.make_blobs(10, 2, 4, 2.0, Rng(0))
    with pytest.raises(ConfigError):
        data.make_blobs(10, 5, 4, 0.1, Rng(0))


def test_subset_sizes_and_membership():
    ds = data.make_blobs(50, 2, 4, 0.3, Rng(0))
    part = data.subset(ds, Rng(1), fraction=0.2)
    assert len(part) == 20
    rows = {r.tobytes() for r in ds.inputs}
    assert all(r.tobytes() in rows for r in part.inputs)
    assert len({r.tobytes() for r in part.inputs}) == 20
    assert len(data.subset(ds, Rng(1), count=7)) == 7
    with pytest.raises(ContractError):
        data.subset(ds, Rng(1), fraction=1.5)


def test_digits_split():
    train, test = data.load_digits(n_train=100, n_test=40, rng=3)
    assert (len(train), len(test)) == (100, 40) and train.dim == 64
    t2, _ = data.load_digits(n_train=100, n_test=40, rng=3)
    assert np.array_equal(train.inputs, t2.inputs)
    binary, _ = data.load_digits(classes=[3, 8], n_train=50, n_test=10)
    assert set(binary.labels.tolist()) <= {0, 1} and binary.class_count == 2
    with pytest.raises(ConfigError):
        data.load_digits(n_train=5000, n_test=10)


def test_batches_cover_order():
    ds = data.make_blobs(5, 2, 3, 0.3, Rng(0))
    order = np.arange(10)[::-1]
    seen = np.concatenate([yb for _, yb in ds.batches(3, order)])
    assert np.array_equal(seen, ds.labels[order])


def test_digits_upsampling_repeats_pixels():
    small, _ = data.load_digits(n_train=20, n_test=5, rng=1)
    big, _ = data.load_digits(n_train=20, n_test=5, rng=1, upsample=2)
    assert big.dim == 256 and big.image_shape == (16, 16)
    img = big.inputs.reshape(-1, 16, 16)
    np.testing.assert_array_equal(img[:, ::2, ::2].reshape(20, 64), small.inputs)
    np.testing.assert_array_equal(img[:, 1::2, 1::2].reshape(20, 64), small.inputs)
    assert np.array_equal(big.labels, small.labels)
    with pytest.raises(ConfigError):
        data.load_digits(upsample=0)
