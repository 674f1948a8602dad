import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advlab import data as D


# CIFAR binary

def test_cifar_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(bytes([7]) + bytes([255]) * 3072)
    ds = D.load_cifar_binary(p)
    assert len(ds) == 1 and ds.labels[0] == 7
    assert ds.images.shape == (1, 3, 32, 32) and np.all(ds.images == 1.0)


def test_cifar_empty_file(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    assert len(D.load_cifar_binary(p)) == 0


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pix = rng.integers(0, 256, size=(2, 3, 32, 32), dtype=np.uint8)
    p = tmp_path / "two.bin"
    D.write_cifar_binary(p, pix, [3, 9])
    raw = p.read_bytes()
    ds = D.load_cifar_binary(p)
    np.testing.assert_array_equal(ds.labels, [3, 9])
    np.testing.assert_array_equal(np.round(ds.images * 255).astype(np.uint8), pix)
    D.write_cifar_binary(tmp_path / "again.bin", np.round(ds.images * 255), ds.labels)
    assert (tmp_path / "again.bin").read_bytes() == raw


def test_cifar_plane_layout(tmp_path):
    rec = bytearray([1]) + bytearray(3072)
    rec[1 + 1024 + 32 * 2 + 5] = 255  # green plane, row 2, column 5
    p = tmp_path / "r.bin"
    p.write_bytes(bytes(rec))
    img = D.load_cifar_binary(p).images[0]
    assert img[1, 2, 5] == 1.0 and img.sum() == 1.0


def test_cifar_truncated_names_offset(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(bytes(3073 + 100))
    with pytest.raises(D.FormatError, match="offset 3073"):
        D.load_cifar_binary(p)


def test_cifar_bad_label(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes(bytes(3073) + bytes([10]) + bytes(3072))
    with pytest.raises(D.FormatError, match="offset 3073"):
        D.load_cifar_binary(p)


# IDX

def test_idx_labels(tmp_path):
    p = tmp_path / "l.idx"
    p.write_bytes(bytes([0, 0, 8, 1]) + (3).to_bytes(4, "big") + bytes([1, 2, 3]))
    out = D.load_idx(p)
    np.testing.assert_array_equal(out, [1, 2, 3])


def test_idx_images(tmp_path):
    p = tmp_path / "i.idx"
    p.write_bytes(bytes([0, 0, 8, 3]) + b"".join(d.to_bytes(4, "big") for d in (1, 2, 2)) + bytes([0, 255, 0, 255]))
    np.testing.assert_array_equal(D.load_idx(p), [[[0, 1], [0, 1]]])


@pytest.mark.parametrize("raw,field", [
    (bytes([1, 0, 8, 1, 0, 0, 0, 0]), "magic"),
    (bytes([0, 0, 9, 1, 0, 0, 0, 0]), "type code"),
    (bytes([0, 0, 8, 2, 0, 0, 0, 1]), "dimension"),
    (bytes([0, 0, 8, 1, 0, 0, 0, 4, 1, 2]), "payload"),
])
def test_idx_errors_name_field(tmp_path, raw, field):
    p = tmp_path / "bad.idx"
    p.write_bytes(raw)
    with pytest.raises(D.FormatError, match=field):
        D.load_idx(p)


@settings(max_examples=30)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**31))
def test_idx_round_trip(dims, seed):
    a = np.random.default_rng(seed).integers(0, 256, size=dims, dtype=np.uint8)
    p = Path(tempfile.mkdtemp()) / "x.idx"
    D.write_idx(p, a)
    np.testing.assert_array_equal(D._read_idx_raw(p), a)
    raw = p.read_bytes()
    D.write_idx(p, D._read_idx_raw(p))
    assert p.read_bytes() == raw


def test_mnist_directory_layout(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(4, 28, 28), dtype=np.uint8)
    for prefix in ("train", "t10k"):
        D.write_idx(tmp_path / f"{prefix}-images-idx3-ubyte", imgs)
        D.write_idx(tmp_path / f"{prefix}-labels-idx1-ubyte", np.array([0, 1, 2, 9], np.uint8))
    tr, te = D.load_mnist(tmp_path)
    assert tr.images.shape == (4, 1, 28, 28) and te.labels.tolist() == [0, 1, 2, 9]


def test_data_dir_resolution(monkeypatch, tmp_path):
    monkeypatch.setenv(D.DATA_DIR_ENV, str(tmp_path))
    assert D.resolve_data_dir(None) == tmp_path
    assert str(D.resolve_data_dir("/x")) == "/x"
    monkeypatch.delenv(D.DATA_DIR_ENV)
    with pytest.raises(D.FormatError):
        D.resolve_data_dir(None)


# synthetic

def test_synthetic_zero_noise_copies_template():
    ds = D.make_synthetic(3, 10, (8, 8), 3, 0.0, seed=1)
    for c in range(3):
        imgs = ds.images[ds.labels == c]
        assert np.all(imgs == imgs[0])


def test_synthetic_seed_changes_templates():
    a = D.make_synthetic(3, 5, (8, 8), 3, 0.0, seed=1)
    b = D.make_synthetic(3, 5, (8, 8), 3, 0.0, seed=2)
    assert not np.array_equal(a.images[a.labels == 0][0], b.images[b.labels == 0][0])


def test_synthetic_deterministic_and_in_range():
    a = D.make_synthetic(3, 20, (8, 8), 3, 0.3, seed=4, sample_seed=9)
    b = D.make_synthetic(3, 20, (8, 8), 3, 0.3, seed=4, sample_seed=9)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.bincount(a.labels).tolist() == [20, 20, 20]


def test_synthetic_linearly_separable():
    """Least-squares linear classifier on half the data, scored on the other half."""
    ds = D.make_synthetic(3, 200, (8, 8), 3, 0.05, seed=0)
    x = ds.images.reshape(len(ds), -1).astype(np.float64)
    x = np.hstack([x, np.ones((len(x), 1))])
    y = np.eye(3)[ds.labels]
    half = len(ds) // 2
    w, *_ = np.linalg.lstsq(x[:half], y[:half], rcond=None)
    acc = ((x[half:] @ w).argmax(1) == ds.labels[half:]).mean()
    assert acc > 0.95


def test_synthetic_label_noise_fraction():
    clean = D.make_synthetic(3, 300, (4, 4), 1, 0.1, seed=0, sample_seed=1)
    noisy = D.make_synthetic(3, 300, (4, 4), 1, 0.1, seed=0, sample_seed=1, label_noise=0.2)
    np.testing.assert_array_equal(clean.images, noisy.images)
    assert 0.15 < (clean.labels != noisy.labels).mean() < 0.25


def test_synthetic_needs_two_classes():
    with pytest.raises(ValueError):
        D.make_synthetic(1, 5)


# augmentation

def test_zero_probability_pipeline_is_identity(rng):
    img = rng.random((3, 8, 8))
    pipe = (D.RandomCrop(0), D.HorizontalFlip(0.0), D.RandomErase(0.0))
    np.testing.assert_array_equal(D.augment(pipe, img, np.random.default_rng(1)), img)


def test_double_flip_is_identity(rng):
    img = rng.random((3, 8, 8))
    out = D.augment((D.HorizontalFlip(1.0), D.HorizontalFlip(1.0)), img, np.random.default_rng(0))
    np.testing.assert_array_equal(out, img)


def test_forced_erase_is_a_4x4_block(rng):
    img = rng.random((3, 8, 8)) * 0.5 + 0.25
    out = D.augment((D.RandomErase(1.0, (0.25, 0.25), (1.0, 1.0), fill=0.0),), img, np.random.default_rng(5))
    diff = np.any(out != img, axis=0)
    rows, cols = np.flatnonzero(diff.any(1)), np.flatnonzero(diff.any(0))
    assert diff.sum() == 16 and len(rows) == 4 and len(cols) == 4
    assert rows[-1] - rows[0] == 3 and cols[-1] - cols[0] == 3


def test_erase_gives_up_silently(rng):
    img = rng.random((1, 4, 4))
    out = D.RandomErase(1.0, (0.001, 0.001), (1.0, 1.0))(img, np.random.default_rng(0))
    np.testing.assert_array_equal(out, img)


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.sampled_from(["cifar", "svhn"]))
def test_augment_preserves_shape_and_range(seed, preset):
    pipe = D.cifar_pipeline() if preset == "cifar" else D.svhn_pipeline()
    img = np.random.default_rng(seed).random((3, 8, 8))
    out = D.augment(pipe, img, np.random.default_rng(seed + 1))
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_svhn_pipeline_has_no_flip():
    assert [op.kind for op in D.svhn_pipeline()] == ["crop", "erase"]
    assert [op.kind for op in D.cifar_pipeline()] == ["crop", "flip", "erase"]


def test_augment_batch_is_order_independent(rng):
    imgs = rng.random((6, 3, 8, 8))
    pipe = D.cifar_pipeline()
    full = D.augment_batch(pipe, imgs, 3, (1,), np.arange(6))
    part = D.augment_batch(pipe, imgs[3:], 3, (1,), np.arange(3, 6))
    np.testing.assert_array_equal(full[3:], part)


def test_augment_dict_round_trip():
    for op in D.cifar_pipeline():
        assert D.augment_from_dict(D.augment_to_dict(op)) == op


# corruptions

def test_identity_corruption_bitwise(rng):
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    for s in range(1, 6):
        assert D.corrupt(x, D.Corruption("identity"), s).tobytes() == x.tobytes()


def test_unit_contrast_bitwise(rng):
    x = rng.random((2, 3, 8, 8))
    assert D.corrupt(x, D.Corruption("contrast", 1.0), 4).tobytes() == x.tobytes()


def test_noise_mse_increases_with_severity(rng):
    x = rng.random((4, 3, 8, 8)) * 0.5 + 0.25
    mse = [((D.corrupt(x, D.Corruption("gaussian_noise", 0.2), s, seed=3) - x) ** 2).mean() for s in range(1, 6)]
    assert all(a < b for a, b in zip(mse, mse[1:]))


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.sampled_from(D.DEFAULT_CORRUPTIONS), st.integers(1, 5))
def test_corrupt_shape_range_determinism(seed, kind, severity):
    x = np.random.default_rng(seed).random((2, 3, 8, 8))
    a = D.corrupt(x, kind, severity, seed)
    assert a.shape == x.shape and a.min() >= 0 and a.max() <= 1
    assert a.tobytes() == D.corrupt(x, kind, severity, seed).tobytes()


def test_corrupt_rejects_bad_severity(rng):
    with pytest.raises(ValueError):
        D.corrupt(rng.random((1, 3, 4, 4)), D.Corruption("brightness", 0.1), 0)


# splits

def test_split_half_small():
    ds = D.Dataset(np.arange(4)[:, None], [0, 1, 0, 1], 2)
    a, b = D.split_half(ds, 0)
    assert (len(a), len(b)) == (2, 2)
    assert sorted(a.images[:, 0].tolist() + b.images[:, 0].tolist()) == [0, 1, 2, 3]


def test_split_half_seed_contract():
    ds = D.Dataset(np.arange(40)[:, None], np.arange(40) % 4, 4)
    first = D.split_half_indices(ds, 0)[0].tolist()
    assert D.split_half_indices(ds, 0)[0].tolist() == first
    others = [sorted(D.split_half_indices(ds, s)[0].tolist()) for s in range(1, 11)]
    assert all(o != sorted(first) for o in others)


@settings(max_examples=50)
@given(st.integers(2, 60), st.integers(2, 5), st.integers(0, 2**31))
def test_split_half_partition_and_stratification(n, classes, seed):
    labels = np.random.default_rng(seed).integers(0, classes, n)
    ds = D.Dataset(np.arange(n)[:, None], labels, classes)
    a, b = D.split_half_indices(ds, seed)
    assert len(a) == -(-n // 2) and len(b) == n // 2
    assert set(a.tolist()) | set(b.tolist()) == set(range(n))
    assert not set(a.tolist()) & set(b.tolist())
    ca = np.bincount(labels[a], minlength=classes)
    cb = np.bincount(labels[b], minlength=classes)
    assert np.abs(ca - cb).max() <= 1


def test_dataset_validates_labels():
    with pytest.raises(ValueError):
        D.Dataset(np.zeros((2, 1)), [0, 3], 3)
