"""Image datasets: IDX files, group-orbit datasets and translated digits."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .groups import FiniteGroup, GroupSubset, apply
from .tensor import ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class UnexpectedEndError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


@dataclass
class Dataset:
    """Grayscale images ``(N, H, W)`` with values in ``[0, 1]`` and int labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3:
            raise ShapeError(f"images must be (N, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise CountMismatchError(
                f"count mismatch: {len(self.images)} images, {len(self.labels)} labels")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _read_idx(path, magic):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 4:
        raise UnexpectedEndError(f"{path}: unexpected end of data")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise UnexpectedEndError(f"{path}: unexpected end of data")
    shape = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    payload = data[4 + 4 * ndim:]
    need = int(np.prod(shape))
    if len(payload) < need:
        raise UnexpectedEndError(f"{path}: unexpected end of data")
    if len(payload) > need:
        raise DataFormatError(f"{path}: {len(payload) - need} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def load_idx(image_path, label_path, split="train"):
    """Read an IDX image file (``0x00000803``) and label file (``0x00000801``).

    Pixel bytes are scaled by 1/255.
    """
    images = _read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(label_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"count mismatch: {len(images)} images in {image_path}, {len(labels)} labels in {label_path}")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), split)


def save_idx(dataset, image_path, label_path):
    """Write a dataset as IDX files; pixels are rounded to ``round(255 * v)``."""
    pixels = np.clip(np.rint(dataset.images * 255.0), 0, 255).astype(np.uint8)
    labels = dataset.labels.astype(np.uint8)
    with open(image_path, "wb") as f:
        f.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        f.write(struct.pack(">3I", *pixels.shape))
        f.write(pixels.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">I", IDX_LABELS_MAGIC))
        f.write(struct.pack(">I", len(labels)))
        f.write(labels.tobytes())


def load_csv(path, split="train", image_shape=None):
    """Read ``label,pixel0,pixel1,...`` rows with pixel bytes 0..255.

    A header line is skipped when its first field is not an integer. Images
    are square unless ``image_shape`` is given.
    """
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if rows and not rows[0][0].strip().lstrip("-").isdigit():
        rows = rows[1:]
    if not rows:
        raise UnexpectedEndError(f"{path}: unexpected end of data")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: rows have different lengths")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric field") from None
    labels, pixels = table[:, 0], table[:, 1:]
    if np.any(labels != np.rint(labels)) or labels.min() < 0:
        raise DataFormatError(f"{path}: labels must be non-negative integers")
    if pixels.min() < 0 or pixels.max() > 255:
        raise DataFormatError(f"{path}: pixel values must lie in [0, 255]")
    if image_shape is None:
        side = int(round(np.sqrt(pixels.shape[1])))
        image_shape = (side, side)
    if int(np.prod(image_shape)) != pixels.shape[1]:
        raise ShapeError(f"{path}: {pixels.shape[1]} pixels per row do not form {tuple(image_shape)}")
    return Dataset(pixels.reshape(len(rows), *image_shape) / 255.0, labels.astype(np.int64), split)


def gen_orbit_dataset(patterns, group, samples_per_class, seed=0, split="train"):
    """Samples ``g x_c`` for random ``g`` drawn from ``group``, labeled ``c``.

    ``patterns`` has shape ``(C, d)`` or ``(C, H, W)`` with values in
    ``[0, 1]``; ``group`` is a ``FiniteGroup`` or a ``GroupSubset`` (the
    transformation range to sample from). 1-D patterns become ``1 x d``
    images. The result is shuffled with the same seeded generator.
    """
    subset = group.full() if isinstance(group, FiniteGroup) else group
    if not isinstance(subset, GroupSubset):
        raise TypeError("group must be a FiniteGroup or GroupSubset")
    parent = subset.parent
    patterns = np.asarray(patterns, dtype=np.float64)
    if patterns.ndim == 2:
        patterns = patterns[:, None, :]
    if patterns.ndim != 3 or patterns[0].size != parent.degree:
        raise ShapeError(
            f"pattern size {patterns[0].size if patterns.ndim == 3 else '?'} vs group degree {parent.degree}")
    if patterns.min() < 0 or patterns.max() > 1:
        raise ValueError("pattern values must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    members = np.asarray(subset.members)
    images, labels = [], []
    for c, pattern in enumerate(patterns):
        for g in rng.choice(members, size=samples_per_class):
            images.append(apply(parent, g, pattern))
            labels.append(c)
    order = rng.permutation(len(labels))
    return Dataset(np.stack(images)[order], np.asarray(labels)[order], split)


def shifted_digits(n_train, n_test, canvas=28, digit_size=20, seed=0, test_fraction=0.25,
                   max_shift=None):
    """Ten-class digit images at random translations.

    Built from the 1,797 handwritten 8x8 digits bundled with scikit-learn.
    The source digits are first split into disjoint train and test pools;
    each sample is one source digit upscaled (bilinear) to ``digit_size``
    pixels and pasted on a ``canvas`` square at a uniformly random offset of
    at most ``max_shift`` pixels per axis from the centered position (the
    whole canvas when ``max_shift`` is None). Returns ``(train, test)``.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    if digit_size > canvas:
        raise ValueError("digit_size must not exceed canvas")
    slack = canvas - digit_size
    lo, hi = 0, slack
    if max_shift is not None:
        lo, hi = max(0, slack // 2 - max_shift), min(slack, slack // 2 + max_shift)
    digits = load_digits()
    rng = np.random.default_rng(seed)
    src = digits.images / 16.0
    big = np.clip(np.stack([zoom(im, digit_size / 8.0, order=1) for im in src]), 0.0, 1.0)
    perm = rng.permutation(len(src))
    n_test_src = int(round(test_fraction * len(src)))
    pools = {"test": perm[:n_test_src], "train": perm[n_test_src:]}

    def make(split, count):
        pool = pools[split]
        pick = np.concatenate([rng.permutation(pool) for _ in range(-(-count // len(pool)))])[:count]
        offs = rng.integers(lo, hi + 1, size=(count, 2))
        out = np.zeros((count, canvas, canvas))
        for k, (i, (r, c)) in enumerate(zip(pick, offs)):
            out[k, r:r + digit_size, c:c + digit_size] = big[i]
        return Dataset(out, digits.target[pick], split)

    return make("train", n_train), make("test", n_test)
