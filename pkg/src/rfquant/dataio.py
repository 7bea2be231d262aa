"""Synthetic inputs, MNIST IDX files, subsampling, CSV tables and config files."""

from __future__ import annotations

import csv
import gzip
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagic,
    ConfigError,
    InsufficientClass,
    IoError,
    OutOfRange,
    ParseError,
    ShapeMismatch,
    Truncated,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_NDIMS = {IMAGES_MAGIC: 3, LABELS_MAGIC: 1}

RESULT_COLUMNS = (
    "experiment",
    "weight_kind",
    "L",
    "d",
    "d_hidden",
    "n",
    "n_test",
    "seed",
    "mirror",
    "metric",
    "value",
)


@dataclass(frozen=True)
class Dataset:
    """Inputs with regression targets or class labels.

    ``meta`` holds the source tag and the normalization record.
    """

    X: np.ndarray
    y: np.ndarray | None = None
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X must be finite")
        if self.labels is not None and (np.min(self.labels, initial=0) < 0 or np.max(self.labels, initial=0) > 9):
            raise OutOfRange("class ids must lie in 0..9")


def gen_synthetic(d: int, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. rows from ``N(0, I_d / d)``."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)) / np.sqrt(d)


# ---------------------------------------------------------------------------
# IDX


@dataclass(frozen=True)
class IdxHeader:
    magic: int
    dims: tuple[int, ...]

    @property
    def size(self) -> int:
        return 4 + 4 * len(self.dims)


def parse_idx(buf: bytes) -> tuple[IdxHeader, np.ndarray]:
    """Decode an IDX image or label file (gzip accepted).

    Images come back as ``n x (rows*cols)`` uint8, labels as a length-``n``
    uint8 vector.
    """
    buf = bytes(buf)
    if buf[:2] == b"\x1f\x8b":
        try:
            buf = gzip.decompress(buf)
        except (OSError, EOFError) as exc:
            raise Truncated(0, len(buf), f"bad gzip stream: {exc}") from None
    if len(buf) < 4:
        raise Truncated(4, len(buf), "magic")
    (magic,) = struct.unpack_from(">I", buf)
    if magic not in _NDIMS:
        raise BadMagic("unknown IDX magic", magic=f"0x{magic:08x}")
    ndim = _NDIMS[magic]
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise Truncated(head, len(buf), "header")
    dims = struct.unpack_from(f">{ndim}I", buf, 4)
    count = math.prod(dims)
    if len(buf) < head + count:
        raise Truncated(head + count, len(buf), "payload")
    data = np.frombuffer(buf, dtype=np.uint8, count=count, offset=head)
    if magic == IMAGES_MAGIC:
        data = data.reshape(dims[0], dims[1] * dims[2])
    return IdxHeader(magic, tuple(dims)), data.copy()


def encode_idx(array: np.ndarray, image_shape: tuple[int, int] | None = None) -> bytes:
    """Inverse of :func:`parse_idx` for uint8 images (2-D) or labels (1-D)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ShapeMismatch("IDX payload must be uint8", dtype=str(array.dtype))
    if array.ndim == 1:
        return struct.pack(">II", LABELS_MAGIC, array.shape[0]) + array.tobytes()
    if array.ndim != 2:
        raise ShapeMismatch("expected labels or flattened images", shape=array.shape)
    if image_shape is None:
        side = math.isqrt(array.shape[1])
        if side * side != array.shape[1]:
            raise ShapeMismatch("pass image_shape for non-square images", width=array.shape[1])
        image_shape = (side, side)
    return struct.pack(">IIII", IMAGES_MAGIC, array.shape[0], *image_shape) + np.ascontiguousarray(array).tobytes()


def read_idx(path) -> tuple[IdxHeader, np.ndarray]:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(str(exc.strerror), path=path) from None
    return parse_idx(buf)


def normalize_mnist(images, scale: float | None = None) -> tuple[np.ndarray, float]:
    """Pixels over 255, then one global factor giving mean squared row norm 1.

    Pass the ``scale`` returned for the training split when normalizing the
    test split.  An all-zero training split gets scale 1.
    """
    X = np.asarray(images, dtype=np.float64) / 255.0
    if scale is None:
        ms = float(np.mean(np.sum(X * X, axis=1)))
        scale = 1.0 / np.sqrt(ms) if ms > 0 else 1.0
    return X * scale, float(scale)


def balanced_subsample(labels, k_per_class: int, seed: int) -> np.ndarray:
    """``k_per_class`` indices per class drawn without replacement, sorted."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < k_per_class:
            raise InsufficientClass(int(c), int(idx.size), int(k_per_class))
        picks.append(rng.choice(idx, size=k_per_class, replace=False))
    if not picks:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(picks))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise OutOfRange("label outside 0..num_classes-1", num_classes=num_classes)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# CSV


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r} cannot be written")
        s = f"{float(v):.17g}"
        # keep floats distinguishable from ints on read
        return s if any(ch in s for ch in ".e") else s + ".0"
    return str(v)


def _parse_cell(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        x = float(s)
    except ValueError:
        return s
    return x if math.isfinite(x) else s


def write_csv(table: dict, path) -> None:
    """Write named columns with a header row; floats keep 17 significant digits.

    Non-finite floats raise ``ValueError`` before anything is written.
    """
    cols = list(table)
    lengths = {len(table[c]) for c in cols}
    if len(lengths) > 1:
        raise ShapeMismatch("columns differ in length", lengths=sorted(lengths))
    nrows = lengths.pop() if lengths else 0
    rows = [[_format_cell(table[c][i]) for c in cols] for i in range(nrows)]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            w.writerows(rows)
    except OSError as exc:
        raise IoError(str(exc.strerror), path=str(path)) from None


def read_csv(path) -> dict:
    """Columns of a file written by :func:`write_csv`, cells typed as int, float or str."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(str(exc.strerror), path=str(path)) from None
    if not rows:
        raise ParseError(1, "missing header")
    header = rows[0]
    out = {c: [] for c in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
        for c, cell in zip(header, row):
            out[c].append(_parse_cell(cell))
    return out


# ---------------------------------------------------------------------------
# config files


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        out[key.replace("-", "_")] = value
    return out


def load_config(path) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError("config file not found", path=str(path))
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.items())
