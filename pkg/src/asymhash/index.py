"""Bit-packed +-1 codes and exhaustive Hamming-space search.

Bit b of a code lives in 64-bit word ``b // 64`` at position ``b % 64``;
+1 is stored as 1 and -1 as 0. Padding bits above K are always zero, so
popcount over whole words counts exactly the differing code bits.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CODES_MAGIC = b"AHC1"
CODES_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class PackedCodeMatrix:
    words: np.ndarray  # (n, ceil(K / 64)) uint64
    bits: int

    def __post_init__(self):
        if self.words.dtype != np.uint64 or self.words.ndim != 2:
            raise ValueError("words must be a 2-D uint64 array")
        if self.words.shape[1] != words_per_code(self.bits):
            raise ValueError("word count does not match code length")
        self.words.setflags(write=False)

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index) -> PackedCodeMatrix:
        rows = self.words[index]
        return PackedCodeMatrix(np.atleast_2d(rows).copy(), self.bits)

    def padding_is_zero(self) -> bool:
        spare = 64 * self.words.shape[1] - self.bits
        if spare == 0 or self.n == 0:
            return True
        return not np.any(self.words[:, -1] >> np.uint64(64 - spare))


def words_per_code(bits: int) -> int:
    return (bits + 63) // 64


def pack(codes) -> PackedCodeMatrix:
    codes = np.atleast_2d(np.asarray(codes))
    if not np.all(np.abs(codes) == 1):
        raise ValueError("codes must contain only -1/+1")
    n, K = codes.shape
    width = 64 * words_per_code(K)
    bits = np.zeros((n, width), dtype=np.uint8)
    bits[:, :K] = codes > 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    words = np.ascontiguousarray(packed).view("<u8").astype(np.uint64)
    return PackedCodeMatrix(words.reshape(n, -1), K)


def unpack(packed: PackedCodeMatrix) -> np.ndarray:
    raw = np.ascontiguousarray(packed.words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw.reshape(packed.n, -1), axis=1, bitorder="little")[:, : packed.bits]
    return np.where(bits == 1, 1.0, -1.0)


def _require_same_bits(a: PackedCodeMatrix, b: PackedCodeMatrix):
    if a.bits != b.bits:
        raise ValueError(f"code length mismatch: {a.bits} vs {b.bits}")


def hamming_to_all(query: PackedCodeMatrix, db: PackedCodeMatrix) -> np.ndarray:
    """Distances from a single packed query to every database code."""
    _require_same_bits(query, db)
    if query.n != 1:
        raise ValueError("query must hold exactly one code")
    x = np.bitwise_xor(db.words, query.words[0])
    return np.bitwise_count(x).sum(axis=1, dtype=np.int64)


def hamming(a: PackedCodeMatrix, b: PackedCodeMatrix) -> int:
    if b.n != 1:
        raise ValueError("hamming() compares two single codes; use hamming_to_all for a matrix")
    return int(hamming_to_all(a, b)[0])


def inner_product(a: PackedCodeMatrix, b: PackedCodeMatrix) -> int:
    """+-1 dot product, recovered as K - 2 * hamming."""
    return a.bits - 2 * hamming(a, b)


def rank_topk(query: PackedCodeMatrix, db: PackedCodeMatrix, k: int) -> list[tuple[int, int]]:
    """k nearest codes as (index, distance), ascending, ties by ascending index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if db.n == 0:
        raise ValueError("empty database")
    dist = hamming_to_all(query, db)
    n = db.n
    # distance-major composite key is unique, so selection + sort is deterministic
    key = dist * n + np.arange(n)
    if k < n:
        top = np.argpartition(key, k - 1)[:k]
        top = top[np.argsort(key[top])]
    else:
        top = np.argsort(key)
    return [(int(i), int(dist[i])) for i in top]


def rank_all(queries: PackedCodeMatrix, db: PackedCodeMatrix, k: int, threads: int = 1):
    """rank_topk for every query row; output order follows the query order."""
    jobs = [queries[i] for i in range(queries.n)]
    if threads <= 1:
        return [rank_topk(q, db, k) for q in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda q: rank_topk(q, db, k), jobs))


def radius_search(query: PackedCodeMatrix, db: PackedCodeMatrix, r: int) -> list[int]:
    if not 0 <= r <= query.bits:
        raise ValueError(f"radius must lie in [0, {query.bits}]")
    return np.flatnonzero(hamming_to_all(query, db) <= r).tolist()


def save_codes(packed: PackedCodeMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CODES_MAGIC, CODES_VERSION, packed.n, packed.bits))
        fh.write(packed.words.astype("<u8").tobytes())


def load_codes(path) -> PackedCodeMatrix:
    buf = Path(path).read_bytes()
    if buf[:4] != CODES_MAGIC:
        raise ValueError(f"{path}: not an AHC1 codes file")
    if len(buf) < _HEADER.size:
        raise ValueError(f"{path}: truncated codes header")
    _, version, n, K = _HEADER.unpack_from(buf)
    if version != CODES_VERSION:
        raise ValueError(f"{path}: unsupported codes version {version}")
    W = words_per_code(K)
    if len(buf) != _HEADER.size + 8 * n * W:
        raise ValueError(f"{path}: codes file size does not match header")
    words = np.frombuffer(buf, dtype="<u8", offset=_HEADER.size).astype(np.uint64).reshape(n, W)
    packed = PackedCodeMatrix(words, K)
    if not packed.padding_is_zero():
        raise ValueError(f"{path}: nonzero padding bits")
    return packed
