"""Dataset ingestion and synthesis.

IDX image/label pairs (the MNIST family's format), a Gaussian-blob generator
for fast deterministic tests, an image-blob variant for conv smoke tests,
stratified splits, and a CIFAR-10 binary reader. Everything lands in the same
immutable Dataset shape.
"""

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .rng import RandomStream


class IdxMagicError(DataError):
    """File does not start with the expected IDX magic number."""


class IdxTruncatedError(DataError):
    """File ends before the extents promised by its header."""


class IdxCountError(DataError):
    """Image and label files disagree on the sample count."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = "unknown"
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        inputs = np.asarray(self.inputs)
        if inputs.shape[0] != labels.shape[0]:
            raise DataError(
                f"{inputs.shape[0]} inputs but {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"labels outside [0, {self.num_classes})")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        counts = np.bincount(labels, minlength=self.num_classes)
        counts.flags.writeable = False
        object.__setattr__(self, "class_counts", counts)

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, indices, provenance=None):
        return Dataset(
            self.inputs[indices],
            self.labels[indices],
            self.num_classes,
            provenance or self.provenance,
        )

    def flat_inputs(self):
        """Inputs as (n, features), flattening any image axes."""
        return self.inputs.reshape(self.inputs.shape[0], -1)

    def inputs_for(self, input_shape):
        """Inputs reshaped to match a model's per-sample input shape."""
        input_shape = tuple(int(d) for d in input_shape)
        per_sample = int(np.prod(self.inputs.shape[1:]))
        if int(np.prod(input_shape)) != per_sample:
            raise DataError(
                f"dataset samples have {per_sample} values, model wants {input_shape}"
            )
        return self.inputs.reshape((self.inputs.shape[0],) + input_shape)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _opener(path):
    return gzip.open if str(path).endswith(".gz") else open


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise IdxTruncatedError(f"{path}: expected {n} bytes of {what}, got {len(buf)}")
    return buf


def read_idx(path, expect_rank=None):
    """One IDX tensor as a u8 array; big-endian header, u8 payload."""
    with _opener(path)(path, "rb") as fh:
        magic = struct.unpack(">I", _read_exact(fh, 4, path, "magic"))[0]
        rank = magic & 0xFF
        want = 0x00000800 | (expect_rank if expect_rank is not None else rank)
        if magic != want or rank == 0:
            raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{want:08x}")
        extents = struct.unpack(
            f">{rank}I", _read_exact(fh, 4 * rank, path, "extents")
        )
        count = int(np.prod(extents, dtype=np.int64))
        payload = _read_exact(fh, count, path, "payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(extents)


def save_idx(path, array):
    """Write a u8 array in IDX form; gzip-compresses when path ends in .gz."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim == 0 or arr.ndim > 0xFF:
        raise DataError(f"IDX rank must be 1..255, got {arr.ndim}")
    with _opener(path)(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x00000800 | arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_idx(images_path, labels_path, dtype=np.float64):
    """An image/label IDX pair as one Dataset.

    Images come out as (n, 1, H, W) scaled so byte 0 maps to 0.0 and byte
    255 to 1.0; labels stay integer class indices.
    """
    images = read_idx(images_path, expect_rank=3)
    labels = read_idx(labels_path, expect_rank=1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    scaled = (images.astype(dtype) / 255.0)[:, None, :, :]
    return Dataset(
        scaled,
        labels.astype(np.int64),
        num_classes=int(labels.max()) + 1 if labels.size else 0,
        provenance=f"idx:{images_path}",
    )


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def synth_blobs(classes, n_per_class, dim, separation, seed):
    """Isotropic Gaussian blobs, one unit-variance cluster per class.

    Class centers sit at separation * (random unit vector), so larger
    separation means easier classification. Deterministic per seed.
    """
    if separation <= 0:
        raise ContractError(f"separation must be positive, got {separation}")
    stream = RandomStream(seed).child("synth_blobs")
    raw = stream.child("centers").normal(0.0, 1.0, (classes, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centers = separation * raw / norms

    points = stream.child("points").normal(0.0, 1.0, (classes, n_per_class, dim))
    inputs = (centers[:, None, :] + points).reshape(classes * n_per_class, dim)
    labels = np.repeat(np.arange(classes, dtype=np.int64), n_per_class)
    return Dataset(
        inputs, labels, classes,
        provenance=f"synth_blobs(C={classes},n={n_per_class},dim={dim},sep={separation},seed={seed})",
    )


def synth_image_blobs(classes, n_per_class, shape, seed, noise=0.15, hard_fraction=0.0):
    """Image-shaped classification data: one bright bump per class position.

    Each class owns a fixed bump center on the (H, W) grid; samples add pixel
    noise and small center jitter, clipped to [0, 1]. hard_fraction of the
    samples get doubled jitter and halved amplitude, giving the cascade
    something genuinely harder to defer.
    """
    c, h, w = (int(d) for d in shape)
    stream = RandomStream(seed).child("synth_image_blobs")
    grid = int(np.ceil(np.sqrt(classes)))
    ys = (np.arange(classes) // grid + 0.5) / grid * h
    xs = (np.arange(classes) % grid + 0.5) / grid * w

    n = classes * n_per_class
    labels = np.repeat(np.arange(classes, dtype=np.int64), n_per_class)
    jitter = stream.child("jitter").normal(0.0, 1.0, (n, 2))
    amp = 0.7 + 0.3 * stream.child("amp").uniform(0.0, 1.0, n)
    hard = stream.child("hard").uniform(0.0, 1.0, n) < hard_fraction
    jitter[hard] *= 2.0
    amp[hard] *= 0.5

    yy, xx = np.mgrid[0:h, 0:w]
    sigma = max(h, w) / (2.0 * grid)
    cy = ys[labels] + jitter[:, 0]
    cx = xs[labels] + jitter[:, 1]
    bump = np.exp(
        -((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)
        / (2.0 * sigma ** 2)
    )
    images = amp[:, None, None] * bump
    images = images[:, None, :, :] * np.ones((1, c, 1, 1))
    images += noise * stream.child("noise").normal(0.0, 1.0, images.shape)
    images = np.clip(images, 0.0, 1.0)

    order = stream.child("shuffle").permutation(n)
    return Dataset(
        images[order], labels[order], classes,
        provenance=f"synth_image_blobs(C={classes},n={n_per_class},shape={(c, h, w)},seed={seed})",
    )


def split(dataset, fraction, seed):
    """Stratified disjoint split into (first, second) with |first| ~ fraction.

    Per class, a seeded permutation is cut at round(fraction * count), so
    class proportions survive within one sample.
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"split fraction must be in (0, 1), got {fraction}")
    stream = RandomStream(seed).child("split")
    first, second = [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        perm = idx[stream.child(f"class{c}").permutation(idx.size)]
        cut = int(np.floor(fraction * idx.size + 0.5))
        first.append(perm[:cut])
        second.append(perm[cut:])
    first = np.sort(np.concatenate(first)) if first else np.array([], dtype=np.int64)
    second = np.sort(np.concatenate(second)) if second else np.array([], dtype=np.int64)
    return (
        dataset.subset(first, f"{dataset.provenance}[train@{fraction}]"),
        dataset.subset(second, f"{dataset.provenance}[test@{fraction}]"),
    )


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches (same Dataset on the way out)
# ---------------------------------------------------------------------------

def load_cifar10(*batch_paths, dtype=np.float64):
    """CIFAR-10 .bin batches: records of 1 label byte + 3072 pixel bytes."""
    record = 1 + 3 * 32 * 32
    images, labels = [], []
    for path in batch_paths:
        with _opener(path)(path, "rb") as fh:
            raw = fh.read()
        if len(raw) % record:
            raise IdxTruncatedError(f"{path}: {len(raw)} bytes is not a whole number of records")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(arr[:, 0].astype(np.int64))
        images.append(arr[:, 1:].reshape(-1, 3, 32, 32).astype(dtype) / 255.0)
    if not images:
        raise DataError("no CIFAR-10 batch files given")
    return Dataset(
        np.concatenate(images),
        np.concatenate(labels),
        num_classes=10,
        provenance=f"cifar10:{','.join(str(p) for p in batch_paths)}",
    )
