"""Datasets, binary loaders, augmentation, corruptions and dataset splits.

Images are float arrays of shape (N, channels, H, W) with values in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass
import math
import os
from pathlib import Path
import struct

import numpy as np
from scipy import ndimage

CIFAR_RECORD = 3073
DATA_DIR_ENV = "ADVLAB_DATA_DIR"


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.classes)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])


def resolve_data_dir(flag=None):
    d = flag or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise FormatError(f"no data directory: pass --data-dir or set {DATA_DIR_ENV}")
    return Path(d)


# -- CIFAR binary ----------------------------------------------------------

def load_cifar_binary(path, classes=10):
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        full = len(raw) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(f"truncated CIFAR record at byte offset {full} "
                          f"(file length {len(raw)} is not a multiple of {CIFAR_RECORD})")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"label byte {labels[i]} >= {classes} at byte offset {i * CIFAR_RECORD}")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255
    return Dataset(images, labels, classes)


def write_cifar_binary(path, images_u8, labels):
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(len(labels), 3072)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_u8], axis=1)
    Path(path).write_bytes(rec.tobytes())


# -- IDX --------------------------------------------------------------------

def _read_idx_raw(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError("truncated IDX header (magic)")
    if raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"bad IDX magic bytes {raw[0]:#04x} {raw[1]:#04x}")
    if raw[2] != 0x08:
        raise FormatError(f"unsupported IDX type code {raw[2]:#04x} (only 0x08 unsigned byte)")
    ndim = raw[3]
    if len(raw) < 4 + 4 * ndim:
        raise FormatError("truncated IDX header (dimension sizes)")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    payload = raw[4 + 4 * ndim:]
    need = int(np.prod(dims)) if dims else 1
    if len(payload) != need:
        raise FormatError(f"IDX payload has {len(payload)} bytes, dimensions need {need}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(path):
    """1-D files come back as int64 labels, others as images scaled to [0, 1]."""
    arr = _read_idx_raw(path)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    return arr.astype(np.float32) / 255


def write_idx(path, array_u8):
    a = np.asarray(array_u8, dtype=np.uint8)
    header = bytes([0, 0, 0x08, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.tobytes())


def load_cifar10(data_dir):
    d = Path(data_dir)
    train = [load_cifar_binary(d / f"data_batch_{i}.bin") for i in range(1, 6)]
    test = load_cifar_binary(d / "test_batch.bin")
    train = Dataset(np.concatenate([t.images for t in train]), np.concatenate([t.labels for t in train]), 10)
    return train, test


def load_mnist(data_dir):
    d = Path(data_dir)

    def pair(prefix):
        x = load_idx(d / f"{prefix}-images-idx3-ubyte")[:, None]
        y = load_idx(d / f"{prefix}-labels-idx1-ubyte")
        return Dataset(x, y, 10)

    return pair("train"), pair("t10k")


# -- synthetic ----------------------------------------------------------------

def make_synthetic(classes=3, per_class=200, size=(8, 8), channels=3, template_noise=0.05,
                   seed=0, sample_seed=None, template_scale=1.0, label_noise=0.0):
    """Noisy copies of one random template per class.

    Templates depend only on ``seed`` (and ``template_scale``, which shrinks them
    towards mid-grey); ``sample_seed`` picks the noise so train and test sets
    can share templates. ``label_noise`` relabels that fraction of samples to a
    uniformly drawn different class.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if isinstance(size, int):
        size = (size, size)
    shape = (channels, *size)
    rng = np.random.default_rng(seed)
    templates = 0.5 + template_scale * (rng.uniform(0, 1, size=(classes, *shape)) - 0.5)
    noise_rng = rng if sample_seed is None else np.random.default_rng([seed, sample_seed])
    labels = np.repeat(np.arange(classes), per_class)
    images = templates[labels]
    if template_noise > 0:
        images = images + template_noise * noise_rng.normal(size=images.shape)
    images = np.clip(images, 0, 1)
    order = noise_rng.permutation(len(labels))
    images, labels = images[order], labels[order]
    if label_noise > 0:
        flip = np.flatnonzero(noise_rng.random(len(labels)) < label_noise)
        labels = labels.copy()
        labels[flip] = (labels[flip] + noise_rng.integers(1, classes, size=flip.size)) % classes
    return Dataset(images, labels, classes)


# -- augmentation -----------------------------------------------------------

@dataclass(frozen=True)
class RandomCrop:
    pad: int = 4
    kind = "crop"

    def __call__(self, img, rng):
        c, h, w = img.shape
        padded = np.pad(img, ((0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        i = rng.integers(0, 2 * self.pad + 1)
        j = rng.integers(0, 2 * self.pad + 1)
        return padded[:, i:i + h, j:j + w]


@dataclass(frozen=True)
class HorizontalFlip:
    p: float = 0.5
    kind = "flip"

    def __call__(self, img, rng):
        if rng.random() < self.p:
            return img[:, :, ::-1]
        return img


@dataclass(frozen=True)
class RandomErase:
    p: float = 0.5
    scale: tuple = (0.02, 0.33)
    ratio: tuple = (0.3, 3.3)
    fill: str | float = "random"
    kind = "erase"

    def __call__(self, img, rng):
        if rng.random() >= self.p:
            return img
        c, h, w = img.shape
        area = h * w
        log_ratio = (math.log(self.ratio[0]), math.log(self.ratio[1]))
        for _ in range(10):
            target = rng.uniform(*self.scale) * area
            aspect = math.exp(rng.uniform(*log_ratio))
            eh = int(math.sqrt(target * aspect))
            ew = int(math.sqrt(target / aspect))
            if 0 < eh <= h and 0 < ew <= w:
                i = rng.integers(0, h - eh + 1)
                j = rng.integers(0, w - ew + 1)
                out = img.copy()
                if self.fill == "random":
                    out[:, i:i + eh, j:j + ew] = rng.uniform(0, 1, size=(c, eh, ew))
                else:
                    out[:, i:i + eh, j:j + ew] = float(self.fill)
                return out
        return img


AUGMENTS = {cls.kind: cls for cls in (RandomCrop, HorizontalFlip, RandomErase)}


def augment(pipeline, image, rng):
    for op in pipeline:
        image = op(image, rng)
    return np.ascontiguousarray(image)


def augment_batch(pipeline, images, seed, key, indices):
    if not pipeline:
        return images
    out = np.empty_like(images)
    for n, (img, i) in enumerate(zip(images, indices)):
        rng = np.random.default_rng([int(seed), *map(int, key), int(i)])
        out[n] = augment(pipeline, img, rng)
    return out


def cifar_pipeline():
    return (RandomCrop(4), HorizontalFlip(0.5), RandomErase())


def svhn_pipeline():
    return (RandomCrop(4), RandomErase())


def augment_to_dict(op):
    d = {"kind": op.kind}
    for k, v in op.__dict__.items():
        d[k] = list(v) if isinstance(v, tuple) else v
    return d


def augment_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in AUGMENTS:
        raise ValueError(f"unknown augmentation {kind!r}")
    for k in ("scale", "ratio"):
        if k in d:
            d[k] = tuple(d[k])
    return AUGMENTS[kind](**d)


# -- corruptions --------------------------------------------------------------

@dataclass(frozen=True)
class Corruption:
    """A parametric corruption; ``param`` is the strength at severity 5.

    Severity s uses ``param * s / 5`` (for contrast, the factor moves from 1
    towards ``param``; for blur, the radius is rounded up).
    """
    kind: str = "identity"
    param: float = 0.0

    @property
    def label(self):
        return self.kind if self.kind == "identity" else f"{self.kind}({self.param:g})"


CORRUPTION_KINDS = ("identity", "gaussian_noise", "box_blur", "brightness", "contrast")

DEFAULT_CORRUPTIONS = (
    Corruption("gaussian_noise", 0.2),
    Corruption("box_blur", 2),
    Corruption("brightness", 0.4),
    Corruption("contrast", 0.2),
)


def corrupt(images, kind, severity, seed=0):
    """Apply ``kind`` at ``severity`` (1..5) to one image or a batch."""
    if severity not in (1, 2, 3, 4, 5):
        raise ValueError("severity must be in 1..5")
    if kind.kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption {kind.kind!r}")
    x = np.asarray(images)
    level = severity / 5
    if kind.kind == "identity":
        return x.copy()
    if kind.kind == "gaussian_noise":
        if kind.param == 0:
            return x.copy()
        rng = np.random.default_rng(int(seed))
        out = x + kind.param * level * rng.normal(size=x.shape)
    elif kind.kind == "box_blur":
        r = math.ceil(kind.param * level)
        if r == 0:
            return x.copy()
        k = 2 * r + 1
        size = (1,) * (x.ndim - 2) + (k, k)
        out = ndimage.uniform_filter(x.astype(np.float64), size=size, mode="reflect")
    elif kind.kind == "brightness":
        if kind.param == 0:
            return x.copy()
        out = x + kind.param * level
    else:
        factor = 1 - (1 - kind.param) * level
        if factor == 1:
            return x.copy()
        mean = x.mean(axis=(-3, -2, -1), keepdims=True)
        out = (x - mean) * factor + mean
    return np.clip(out, 0, 1).astype(x.dtype)


# -- splits -----------------------------------------------------------------

def split_parts(dataset, parts, seed, stratified=True):
    """Random partition into ``parts`` near-equal pieces.

    Stratified: each class is shuffled and dealt round-robin, continuing the
    deal across classes, so part sizes differ by at most one overall and per
    class.
    """
    n = len(dataset)
    if n < parts:
        raise ValueError(f"need at least {parts} samples to split")
    rng = np.random.default_rng(seed)
    if stratified:
        order = []
        for c in rng.permutation(dataset.classes):
            members = np.flatnonzero(dataset.labels == c)
            order.extend(rng.permutation(members))
        order = np.asarray(order, dtype=np.int64)
    else:
        order = rng.permutation(n)
    pieces = [order[j::parts] for j in range(parts)]
    return [dataset.subset(rng.permutation(p)) for p in pieces]


def split_half(dataset, seed, stratified=True):
    a, b = split_parts(dataset, 2, seed, stratified)
    return a, b


def split_half_indices(dataset, seed, stratified=True):
    """Same partition as :func:`split_half`, returned as index arrays."""
    tagged = Dataset(np.arange(len(dataset))[:, None], dataset.labels, dataset.classes)
    a, b = split_parts(tagged, 2, seed, stratified)
    return a.images[:, 0], b.images[:, 0]
