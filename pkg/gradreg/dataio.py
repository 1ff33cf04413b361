"""
Dataset loading: IDX (MNIST) readers and writers, one-hot targets, synthetic
Gaussian blobs for tests and the ordered train/validation split.

IDX layout (big-endian):

    images (IDX3): u32 magic 0x00000803 | u32 N | u32 rows | u32 cols | u8[N*rows*cols]
    labels (IDX1): u32 magic 0x00000801 | u32 N | u8[N]

Files may be gzip-compressed; the two-byte gzip magic decides.
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from gradreg.errors import FormatError, InvalidLabelError, InvalidParameterError, LengthError, ShapeError

logger = logging.getLogger(__name__)

IDX3_MAGIC = 0x00000803
IDX1_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Dataset:
    """Row-matrix of inputs in [0,1]^d with class labels in [0, K)."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise ShapeError(f"inputs must be N x d, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ShapeError(f"expected {inputs.shape[0]} labels, got shape {labels.shape}")
        if self.num_classes < 1:
            raise InvalidParameterError(f"num_classes must be positive, got {self.num_classes}")
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise InvalidParameterError("dataset inputs must lie in [0, 1]")
        _check_labels(labels, self.num_classes)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return one_hot(self.labels, self.num_classes)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)


def _check_labels(labels: np.ndarray, num_classes: int) -> None:
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        row = int(bad[0])
        raise InvalidLabelError(f"label {int(labels[row])} at row {row} is outside [0, {num_classes})")


def _read_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        logger.debug("Decompressing gzip file %s", path)
        return gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes, path: PathLike, magic: int, n_dims: int) -> Tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(raw) < header_len:
        raise LengthError(f"{path}: header needs {header_len} bytes, file has {len(raw)}")
    fields = struct.unpack(">" + "I" * (1 + n_dims), raw[:header_len])
    if fields[0] != magic:
        raise FormatError(f"{path}: expected magic 0x{magic:08x}, got 0x{fields[0]:08x}")
    return fields[1:]


def _payload(raw: bytes, path: PathLike, offset: int, expected: int) -> np.ndarray:
    available = len(raw) - offset
    if available < expected:
        raise LengthError(f"{path}: payload needs {expected} bytes, file has {available}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset)


def load_idx_images(path: PathLike) -> np.ndarray:
    """Read an IDX3 file into an N x (rows*cols) matrix scaled by 1/255."""
    raw = _read_bytes(path)
    n, rows, cols = _parse_header(raw, path, IDX3_MAGIC, 3)
    pixels = _payload(raw, path, 16, n * rows * cols)
    logger.info("Loaded %d images of %dx%d from %s", n, rows, cols, path)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    (n,) = _parse_header(raw, path, IDX1_MAGIC, 1)
    labels = _payload(raw, path, 8, n)
    logger.info("Loaded %d labels from %s", n, path)
    return labels.astype(np.int64)


def write_idx_images(path: PathLike, inputs: np.ndarray, rows: int, cols: int) -> None:
    """Write an N x (rows*cols) matrix of [0,1] values as IDX3 bytes (round(v*255))."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != rows * cols:
        raise ShapeError(f"inputs of shape {inputs.shape} do not match {rows}x{cols} images")
    pixels = np.rint(np.clip(inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = struct.pack(">IIII", IDX3_MAGIC, inputs.shape[0], rows, cols)
    Path(path).write_bytes(header + pixels.tobytes())


def write_idx_labels(path: PathLike, labels: Sequence[int]) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise InvalidParameterError("IDX1 labels must fit in one unsigned byte")
    header = struct.pack(">II", IDX1_MAGIC, labels.shape[0])
    Path(path).write_bytes(header + labels.astype(np.uint8).tobytes())


def resolve_mnist_file(directory: PathLike, stem: str) -> Path:
    """The raw file if present, else its ``.gz`` sibling."""
    base = Path(directory) / stem
    gz = base.with_name(base.name + ".gz")
    if not base.exists() and gz.exists():
        return gz
    return base


def load_dataset(images_path: PathLike, labels_path: PathLike, num_classes: int = 10) -> Dataset:
    inputs = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if inputs.shape[0] != labels.shape[0]:
        raise ShapeError(
            f"{images_path} holds {inputs.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    return Dataset(inputs, labels, num_classes)


def load_mnist(directory: PathLike) -> Tuple[Dataset, Dataset]:
    """Load the standard MNIST train and test sets from one directory."""
    files = {key: resolve_mnist_file(directory, stem) for key, stem in MNIST_FILES.items()}
    train = load_dataset(files["train_images"], files["train_labels"])
    test = load_dataset(files["test_images"], files["test_labels"])
    return train, test


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    _check_labels(labels, num_classes)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def blob_centers(d: int, num_classes: int) -> np.ndarray:
    """
    Fixed class centers in [0.25, 0.75]^d.

    Center k has coordinate j at ``0.25 + 0.5 * ((k + j) mod K) / (K - 1)``,
    so every pair of centers differs in every coordinate.
    """
    k = np.arange(num_classes)[:, None]
    j = np.arange(d)[None, :]
    return 0.25 + 0.5 * ((k + j) % num_classes) / (num_classes - 1)


def synthetic_blobs(
    rng: np.random.Generator, n_per_class: int, d: int, num_classes: int, spread: float
) -> Dataset:
    """Gaussian clusters around fixed centers, clamped to [0,1] and shuffled."""
    if num_classes < 2 or d < 2:
        raise InvalidParameterError(f"synthetic_blobs needs K >= 2 and d >= 2, got K={num_classes}, d={d}")
    if spread < 0:
        raise InvalidParameterError(f"spread must be non-negative, got {spread}")
    centers = blob_centers(d, num_classes)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = rng.normal(0.0, 1.0, size=(labels.shape[0], d)) * spread
    inputs = np.clip(centers[labels] + noise, 0.0, 1.0)
    order = rng.permutation(labels.shape[0])
    return Dataset(inputs[order], labels[order], num_classes)


def split(data: Dataset, n_train: int) -> Tuple[Dataset, Dataset]:
    """First ``n_train`` rows and the remainder, order preserved."""
    if n_train < 0 or n_train > len(data):
        raise InvalidParameterError(f"n_train={n_train} outside [0, {len(data)}]")
    return data.subset(slice(0, n_train)), data.subset(slice(n_train, len(data)))
