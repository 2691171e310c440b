"""Continuous and binary hash codes plus the cosine/Hamming kernels.

A continuous code is a plain float64 vector with every element in [-1, 1]
(the tanh head guarantees this for model outputs). A binary code stores one
bit per element, packed little-endian into 64-bit words: logical element i
lives in word i // 64 at bit i % 64, with bit 1 meaning +1 and bit 0
meaning -1. Pad bits past the code length are always zero, so XOR+popcount
over whole words is exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, FormatError, InvalidInputError

WORD_BITS = 64
NORM_EPS = 1e-12

CODE_MAGIC = b"DHDC"
CODE_VERSION = 1
_CODE_HEADER = struct.Struct("<4sHHQ")

if hasattr(np, "bitwise_count"):
    def _popcount(words: np.ndarray) -> np.ndarray:
        return np.bitwise_count(words)
else:  # numpy < 2.0
    def _popcount(words: np.ndarray) -> np.ndarray:
        x = words.copy()
        x -= (x >> np.uint64(1)) & np.uint64(0x5555555555555555)
        x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
        x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
        return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


def words_per_code(length: int) -> int:
    return (length + WORD_BITS - 1) // WORD_BITS


def tail_mask(length: int) -> np.uint64:
    """Mask of the valid bits in the final word of a packed code."""
    used = length % WORD_BITS
    if used == 0:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64((1 << used) - 1)


def pack_signs(values: np.ndarray) -> np.ndarray:
    """Pack sign bits of a (K,) or (N, K) array into uint64 words.

    An element maps to bit 1 iff it is >= 0 (the sign(0) = +1 rule). Pad
    bits in the last word are zero.
    """
    values = np.asarray(values, dtype=np.float64)
    single = values.ndim == 1
    if single:
        values = values[None, :]
    n, k = values.shape
    bits = (values >= 0.0).astype(np.uint8)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    n_bytes = words_per_code(k) * 8
    if packed.shape[1] < n_bytes:
        packed = np.pad(packed, ((0, 0), (0, n_bytes - packed.shape[1])))
    words = np.ascontiguousarray(packed).view(np.dtype("<u8")).reshape(n, -1)
    words = words.astype(np.uint64, copy=False)
    return words[0] if single else words


def unpack_signs(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_signs`; returns +-1.0 float64 values."""
    words = np.asarray(words, dtype=np.uint64)
    single = words.ndim == 1
    if single:
        words = words[None, :]
    raw = np.frombuffer(words.astype("<u8", copy=False).tobytes(), dtype=np.uint8)
    bits = np.unpackbits(raw.reshape(words.shape[0], -1), axis=-1, bitorder="little")
    signs = bits[:, :length].astype(np.float64) * 2.0 - 1.0
    return signs[0] if single else signs


@dataclass(frozen=True, eq=False)
class BinaryCode:
    """A K-bit code in {-1,+1}^K stored as packed little-endian words."""

    words: np.ndarray
    length: int

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.length < 1:
            raise InvalidInputError("code length must be >= 1")
        if words.shape != (words_per_code(self.length),):
            raise InvalidInputError(
                f"expected {words_per_code(self.length)} words for length {self.length}, "
                f"got shape {words.shape}"
            )
        if words.size and (words[-1] & ~tail_mask(self.length)):
            raise InvalidInputError("pad bits beyond the code length must be zero")
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    def to_signs(self) -> np.ndarray:
        return unpack_signs(self.words, self.length)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.length == other.length and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.length, self.words.tobytes()))


def quantize(h: np.ndarray) -> BinaryCode:
    """Sign-quantize a continuous code; sign(0) is defined as +1."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or h.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D code, got shape {h.shape}")
    if not np.isfinite(h).all():
        raise InvalidInputError("code contains non-finite elements")
    return BinaryCode(pack_signs(h), h.size)


def hamming(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing positions, computed via XOR + popcount."""
    if a.length != b.length:
        raise InvalidInputError(f"code lengths differ: {a.length} vs {b.length}")
    return int(_popcount(a.words ^ b.words).sum())


def hamming_to_all(query: np.ndarray, database: np.ndarray, pairwise: bool = True) -> np.ndarray:
    """Hamming distances from packed query words to packed database rows.

    With ``pairwise=True`` (default) `query` is a single (W,) code and the
    result has one distance per database row. With ``pairwise=False`` both
    arguments are (N, W) and distances are taken row against row.
    """
    query = np.asarray(query, dtype=np.uint64)
    database = np.asarray(database, dtype=np.uint64)
    if pairwise:
        if query.ndim != 1 or database.ndim != 2 or database.shape[1] != query.shape[0]:
            raise InvalidInputError("query/database word shapes do not match")
        xored = database ^ query[None, :]
    else:
        if query.shape != database.shape:
            raise InvalidInputError("row-wise distance needs equal shapes")
        xored = database ^ query
    return _popcount(xored).sum(axis=-1, dtype=np.int64)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; rejects near-zero norms."""
    s, _, _ = cosine_grad(u, v)
    return s


def cosine_grad(u: np.ndarray, v: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Cosine similarity plus its analytic gradients w.r.t. both arguments."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise InvalidInputError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_EPS or nv < NORM_EPS:
        raise DegenerateInputError(f"norm below {NORM_EPS}: |u|={nu:.3g}, |v|={nv:.3g}")
    raw = float(u @ v) / (nu * nv)
    s = min(1.0, max(-1.0, raw))
    grad_u = v / (nu * nv) - raw * u / (nu * nu)
    grad_v = u / (nu * nv) - raw * v / (nv * nv)
    return s, grad_u, grad_v


def hamming_from_cosine(s: float, length: int) -> float:
    """Hamming distance implied by a cosine similarity: K/2 * (1 - s)."""
    if not -1.0 <= s <= 1.0:
        raise InvalidInputError(f"similarity {s} outside [-1, 1]")
    if length < 1:
        raise InvalidInputError("code length must be >= 1")
    return 0.5 * length * (1.0 - s)


def write_codes(path, words: np.ndarray, length: int) -> None:
    """Write packed codes to the binary code file format (bit-exact)."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.ndim != 2 or words.shape[1] != words_per_code(length):
        raise InvalidInputError(
            f"expected (N, {words_per_code(length)}) words for length {length}, got {words.shape}"
        )
    if words.size and (words[:, -1] & ~tail_mask(length)).any():
        raise InvalidInputError("pad bits beyond the code length must be zero")
    header = _CODE_HEADER.pack(CODE_MAGIC, CODE_VERSION, length, words.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(words.astype("<u8", copy=False).tobytes())


def read_codes(path) -> tuple[np.ndarray, int]:
    """Read a code file; returns (words (N, W) uint64, code length)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CODE_HEADER.size:
        raise FormatError("code file too short for its header")
    magic, version, length, count = _CODE_HEADER.unpack_from(raw)
    if magic != CODE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CODE_MAGIC!r}")
    if version != CODE_VERSION:
        raise FormatError(f"unsupported code file version {version}")
    w = words_per_code(length)
    body = raw[_CODE_HEADER.size:]
    if len(body) != count * w * 8:
        raise FormatError(f"code file body has {len(body)} bytes, expected {count * w * 8}")
    words = np.frombuffer(body, dtype="<u8").reshape(count, w).astype(np.uint64)
    return words, length
