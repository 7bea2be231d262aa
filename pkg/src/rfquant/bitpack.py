"""One-bit weight storage and a packed mat-vec kernel.

Signs are packed into 64-bit words, little-endian within a word (bit 0 is
the lowest column index); padding bits past ``d_in`` are always zero.  The
kernel uses

    y_i = scale * (2 * S_i - T),   S_i = sum_{j: bit(i,j)=1} x_j,   T = sum_j x_j

and evaluates every S_i with a per-input byte table: for each byte position
the 256 possible partial sums are tabulated once, so each row costs one
lookup per 8 columns.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

import numba
import numpy as np

from .errors import BadMagic, DimMismatch, ShapeMismatch, Truncated

MAGIC = b"RFB1"
VERSION = 1
_HEADER = struct.Struct("<4sIII")

# index of the lowest set bit of every nonzero byte value
_LOWBIT = np.array([0] + [(v & -v).bit_length() - 1 for v in range(1, 256)], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PackedOneBit:
    """Sign bits of a ``d_out x d_in`` matrix scaled by ``1/sqrt(d_in)``.

    Attributes
    ----------
    d_out, d_in : int
        Matrix shape.
    bits : ndarray of uint64, shape (d_out, words_per_row)
        Bit ``j`` of row ``i`` is set iff ``W[i, j] >= 0``.
    scale : float
        ``1/sqrt(d_in)``.
    """

    d_out: int
    d_in: int
    bits: np.ndarray
    scale: float

    @property
    def words_per_row(self) -> int:
        return words_per_row(self.d_in)

    @property
    def nbytes(self) -> int:
        return self.d_out * self.words_per_row * 8

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedOneBit):
            return NotImplemented
        return (
            self.d_out == other.d_out
            and self.d_in == other.d_in
            and self.scale == other.scale
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None

    def byte_rows(self) -> np.ndarray:
        """Row bytes in little-endian order, shape ``(d_out, 8*words_per_row)``."""
        return self.bits.astype("<u8", copy=False).view(np.uint8).reshape(self.d_out, -1)


def words_per_row(d_in: int) -> int:
    return (d_in + 63) // 64


def packed_bytes(d_out: int, d_in: int) -> int:
    return d_out * words_per_row(d_in) * 8


def pack_signs(W) -> PackedOneBit:
    """Quantize a dense matrix to its signs, with ``sign(0) = +1``."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise ShapeMismatch("expected a nonempty matrix", shape=W.shape)
    d_out, d_in = W.shape
    wpr = words_per_row(d_in)
    mask = np.zeros((d_out, wpr * 64), dtype=bool)
    mask[:, :d_in] = W >= 0
    raw = np.packbits(mask, axis=1, bitorder="little")
    bits = np.ascontiguousarray(raw).view("<u8").astype(np.uint64).reshape(d_out, wpr)
    bits.flags.writeable = False
    return PackedOneBit(d_out, d_in, bits, 1.0 / np.sqrt(d_in))


def unpack(P: PackedOneBit) -> np.ndarray:
    """Dense ``+-scale`` matrix represented by ``P``."""
    signs = np.unpackbits(P.byte_rows(), axis=1, bitorder="little")[:, : P.d_in]
    return np.where(signs == 1, P.scale, -P.scale)


@numba.njit(cache=True)
def _build_table(x, nbytes, table):
    for b in range(nbytes):
        base = 8 * b
        table[b, 0] = 0.0
        for v in range(1, 256):
            table[b, v] = table[b, v & (v - 1)] + x[base + _LOWBIT[v]]


@numba.njit(cache=True)
def _total(x):
    t = 0.0
    for j in range(x.shape[0]):
        t += x[j]
    return t


@numba.njit(cache=True)
def _row_sum(rows, i, table):
    s = 0.0
    for b in range(rows.shape[1]):
        s += table[b, rows[i, b]]
    return s


@numba.njit(cache=True)
def _matvec_serial(rows, xpad, scale, out, table):
    _build_table(xpad, rows.shape[1], table)
    t = _total(xpad)
    for i in range(rows.shape[0]):
        out[i] = scale * (2.0 * _row_sum(rows, i, table) - t)


@numba.njit(cache=True, parallel=True)
def _matvec_parallel(rows, xpad, scale, out):
    table = np.empty((rows.shape[1], 256))
    _build_table(xpad, rows.shape[1], table)
    t = _total(xpad)
    for i in numba.prange(rows.shape[0]):
        out[i] = scale * (2.0 * _row_sum(rows, i, table) - t)


@numba.njit(cache=True, parallel=True)
def _matmul_parallel(rows, Xpad, scale, out):
    for r in numba.prange(Xpad.shape[0]):
        table = np.empty((rows.shape[1], 256))
        _matvec_serial(rows, Xpad[r], scale, out[r], table)


def _padded(X: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(X.shape[:-1] + (width,))
    out[..., : X.shape[-1]] = X
    return out


def packed_matvec(P: PackedOneBit, x) -> np.ndarray:
    """``unpack(P) @ x`` computed from the bits."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != P.d_in:
        raise DimMismatch("input length must equal d_in", d_in=P.d_in, got=x.shape)
    out = np.empty(P.d_out)
    _matvec_parallel(P.byte_rows(), _padded(x, P.words_per_row * 64), P.scale, out)
    return out


def packed_matmul(P: PackedOneBit, X) -> np.ndarray:
    """Row-wise :func:`packed_matvec`; returns ``X @ unpack(P).T``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != P.d_in:
        raise DimMismatch("input columns must equal d_in", d_in=P.d_in, got=X.shape)
    out = np.empty((X.shape[0], P.d_out))
    _matmul_parallel(P.byte_rows(), _padded(X, P.words_per_row * 64), P.scale, out)
    return out


def dumps(P: PackedOneBit) -> bytes:
    """Binary dump: header ``RFB1, version, d_out, d_in`` then row words, all little-endian."""
    head = _HEADER.pack(MAGIC, VERSION, P.d_out, P.d_in)
    return head + P.bits.astype("<u8").tobytes()


def loads(buf: bytes) -> PackedOneBit:
    if len(buf) < _HEADER.size:
        raise Truncated(_HEADER.size, len(buf), "header")
    magic, version, d_out, d_in = _HEADER.unpack_from(buf)
    if magic != MAGIC or version != VERSION:
        raise BadMagic("not an RFB1 v1 dump", magic=magic.hex(), version=version)
    need = _HEADER.size + packed_bytes(d_out, d_in)
    if len(buf) < need:
        raise Truncated(need, len(buf), "payload")
    wpr = words_per_row(d_in)
    bits = np.frombuffer(buf, dtype="<u8", count=d_out * wpr, offset=_HEADER.size)
    bits = bits.astype(np.uint64).reshape(d_out, wpr)
    bits.flags.writeable = False
    return PackedOneBit(d_out, d_in, bits, 1.0 / np.sqrt(d_in))


def save(P: PackedOneBit, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(P))


def load(path) -> PackedOneBit:
    with open(path, "rb") as fh:
        return loads(fh.read())


@dataclass(frozen=True)
class BenchReport:
    d_in: int
    d_out: int
    reps: int
    dense_ns: float
    packed_ns: float
    speedup: float
    dense_bytes: int
    packed_bytes: int

    @property
    def memory_ratio(self) -> float:
        return self.dense_bytes / self.packed_bytes


def _mean_ns(fn, reps: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter_ns()
    for _ in range(reps):
        fn()
    return (time.perf_counter_ns() - t0) / reps


def bench_kernel(d_in: int, d_out: int, reps: int = 100, warmup: int = 10, seed: int = 0) -> BenchReport:
    """Time the dense 64-bit mat-vec against :func:`packed_matvec` on one input.

    Memory fields come from the storage formulas, not from measurement.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
    x = rng.standard_normal(d_in)
    P = pack_signs(W)
    dense = unpack(P)
    dense_ns = _mean_ns(lambda: dense @ x, reps, warmup)
    packed_ns = _mean_ns(lambda: packed_matvec(P, x), reps, max(warmup, 1))
    return BenchReport(
        d_in=d_in,
        d_out=d_out,
        reps=reps,
        dense_ns=dense_ns,
        packed_ns=packed_ns,
        speedup=dense_ns / packed_ns,
        dense_bytes=d_out * d_in * 8,
        packed_bytes=packed_bytes(d_out, d_in),
    )
