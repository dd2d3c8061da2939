"""MNIST ingestion: IDX parsing, pixel normalization and seeded mini-batching.

IDX layout (big endian)::

    u32   | magic  (0x00000803 images, 0x00000801 labels)
    u32[] | one size per dimension
    u8[]  | payload, row-major

Files may be raw or gzip-compressed; gzip is detected from the 0x1f8b magic.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10

# Anything above this many payload bytes is treated as a corrupt header.
MAX_PAYLOAD = 1 << 34

_GZIP_MAGIC = b"\x1f\x8b"


class IDXError(ValueError):
    """Base class for IDX decoding failures."""


class MagicError(IDXError):
    pass


class TruncatedError(IDXError):
    pass


class DimensionOverflowError(IDXError):
    pass


class TrailingDataError(IDXError):
    pass


class LabelRangeError(IDXError):
    pass


@dataclass(frozen=True, eq=False)
class ImageSet:
    pixels: np.ndarray  # uint8, (count, rows, cols)

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3:
            raise ValueError("pixels must be a uint8 array of shape (count, rows, cols)")
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("rows and cols must be positive")

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def rows(self) -> int:
        return self.pixels.shape[1]

    @property
    def cols(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ImageSet):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def subset(self, indices) -> "ImageSet":
        return ImageSet(self.pixels[np.asarray(indices)])


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray  # uint8, (count,)

    def __post_init__(self):
        if self.labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if self.labels.size and int(self.labels.max()) >= N_CLASSES:
            raise LabelRangeError(f"label {int(self.labels.max())} outside [0, {N_CLASSES - 1}]")

    @property
    def count(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def subset(self, indices) -> "LabelSet":
        return LabelSet(self.labels[np.asarray(indices)])


@dataclass(frozen=True)
class MiniBatch:
    inputs: np.ndarray  # float64, (batch, rows, cols) in [0, 1]
    targets: np.ndarray  # float64 one-hot, (batch, 10)
    indices: np.ndarray  # positions in the source arrays

    def __len__(self):
        return self.inputs.shape[0]


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == _GZIP_MAGIC:
        return gzip.decompress(data)
    return data


def _parse_idx(data: bytes, magic: int, rank: int) -> tuple[tuple[int, ...], memoryview]:
    data = _maybe_gunzip(bytes(data))
    header_len = 4 + 4 * rank
    if len(data) < 4:
        raise TruncatedError("file shorter than the 4-byte magic number")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise MagicError(f"magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(data) < header_len:
        raise TruncatedError(f"header needs {header_len} bytes, got {len(data)}")
    dims = struct.unpack(f">{rank}I", data[4:header_len])
    expected = 1
    for d in dims:
        if d >= 1 << 31:
            raise DimensionOverflowError(f"dimension {d} does not fit a signed 32-bit size")
        expected *= d
    if expected > MAX_PAYLOAD:
        raise DimensionOverflowError(f"dimensions {dims} imply {expected} payload bytes")
    payload = memoryview(data)[header_len:]
    if len(payload) < expected:
        raise TruncatedError(f"payload has {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise TrailingDataError(f"{len(payload) - expected} bytes after the declared payload")
    return dims, payload


def parse_idx_images(data: bytes) -> ImageSet:
    dims, payload = _parse_idx(data, IMAGE_MAGIC, 3)
    count, rows, cols = dims
    if rows == 0 or cols == 0:
        raise DimensionOverflowError("rows and cols must be positive")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols).copy()
    return ImageSet(pixels)


def parse_idx_labels(data: bytes) -> LabelSet:
    _, payload = _parse_idx(data, LABEL_MAGIC, 1)
    labels = np.frombuffer(payload, dtype=np.uint8).copy()
    return LabelSet(labels)


def serialize_images(images: ImageSet) -> bytes:
    header = struct.pack(">4I", IMAGE_MAGIC, images.count, images.rows, images.cols)
    return header + np.ascontiguousarray(images.pixels).tobytes()


def serialize_labels(labels: LabelSet) -> bytes:
    return struct.pack(">2I", LABEL_MAGIC, labels.count) + labels.labels.astype(np.uint8).tobytes()


def load_images(path) -> ImageSet:
    return parse_idx_images(Path(path).read_bytes())


def load_labels(path) -> LabelSet:
    return parse_idx_labels(Path(path).read_bytes())


_SPLIT_STEMS = {"train": "train", "test": "t10k"}


def find_split_files(data_dir, split: str) -> tuple[Path, Path]:
    """Locate the image and label files of an MNIST split inside ``data_dir``.

    Both the ``train-images-idx3-ubyte`` and ``train-images.idx3-ubyte``
    spellings are recognized, with or without a ``.gz`` suffix.
    """
    stem = _SPLIT_STEMS[split]
    data_dir = Path(data_dir)
    found = []
    for kind, rank in (("images", 3), ("labels", 1)):
        names = [
            f"{stem}-{kind}-idx{rank}-ubyte",
            f"{stem}-{kind}.idx{rank}-ubyte",
        ]
        candidates = [data_dir / (n + ext) for n in names for ext in ("", ".gz")]
        path = next((p for p in candidates if p.is_file()), None)
        if path is None:
            raise FileNotFoundError(f"no {split} {kind} file in {data_dir} (tried {names[0]}[.gz])")
        found.append(path)
    return found[0], found[1]


def load_split(data_dir, split: str) -> tuple[ImageSet, LabelSet]:
    image_path, label_path = find_split_files(data_dir, split)
    images, labels = load_images(image_path), load_labels(label_path)
    if images.count != labels.count:
        raise IDXError(f"{images.count} images but {labels.count} labels in {split} split")
    return images, labels


def normalize(images: ImageSet) -> np.ndarray:
    return images.pixels.astype(np.float64) / 255.0


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def stratified_subset(labels: LabelSet, k: int) -> np.ndarray:
    """Indices of the first ``k`` samples, balanced across classes.

    Each class gets ``k // 10`` slots (the remainder goes to the lowest class
    ids), filled in file order. Slots a class cannot fill are handed to the
    earliest unused samples. The returned indices are sorted.
    """
    n = labels.count
    if k <= 0 or k >= n:
        return np.arange(n)
    quota = np.full(N_CLASSES, k // N_CLASSES)
    quota[: k % N_CLASSES] += 1
    taken = np.zeros(n, dtype=bool)
    for c in range(N_CLASSES):
        idx = np.flatnonzero(labels.labels == c)[: quota[c]]
        taken[idx] = True
    short = k - int(taken.sum())
    if short > 0:
        taken[np.flatnonzero(~taken)[:short]] = True
    return np.flatnonzero(taken)


def make_batches(images: np.ndarray, labels: LabelSet, batch_size: int, seed: int) -> list[MiniBatch]:
    """Shuffle with ``seed`` and cut into batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = images.shape[0]
    if n != labels.count:
        raise ValueError(f"{n} images but {labels.count} labels")
    order = np.random.default_rng(seed).permutation(n)
    targets = one_hot(labels.labels)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        batches.append(MiniBatch(images[idx], targets[idx], idx))
    return batches
