"""Keyed derivation of cell indices, challenge coordinates and selections.

Everything both sides of the protocol must derive identically lives here:
SHAKE-256 extendable-output streams seeded from a nonce and a password
digest, and the samplers built on top of them. All functions are pure;
identical inputs give byte-identical outputs on every platform.

Interop constants (documented in docs/derivation.md):

* 32-bit values are read from a stream in little-endian byte order;
* challenge coordinates consume one byte per axis, x first;
* landmark selection rejects bytes >= 204 (the largest multiple of 68
  below 256) so each of the 68 indices is exactly equally likely.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

NONCE_BYTES = 64
PUF_CELLS = 1_048_576
TABLE_CELLS = 65_536
LANDMARK_COUNT = 68
LANDMARK_SELECTION = 64

# Stream values are consumed as uint32 little-endian.
_U32 = np.dtype("<u4")


@dataclass(frozen=True)
class Nonce512:
    """512-bit opaque nonce exchanged during enrollment and challenges."""

    value: bytes

    def __post_init__(self):
        if not isinstance(self.value, bytes) or len(self.value) != NONCE_BYTES:
            raise ValueError(f"nonce must be exactly {NONCE_BYTES} bytes")

    @classmethod
    def generate(cls) -> "Nonce512":
        """Draw a fresh nonce from the OS entropy source."""
        return cls(secrets.token_bytes(NONCE_BYTES))

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Nonce512":
        return cls(bytes(raw))

    def hex(self) -> str:
        return self.value.hex()


class XofStream:
    """Incremental byte stream squeezed from SHAKE-256.

    hashlib recomputes the whole squeeze on every ``digest`` call, so the
    stream buffers output and grows it geometrically; total squeeze work
    stays linear in the number of bytes actually read.
    """

    __slots__ = ("_xof", "_buf", "_pos")

    def __init__(self, seed: bytes):
        self._xof = hashlib.shake_256(seed)
        self._buf = b""
        self._pos = 0

    def read(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("read size must be non-negative")
        end = self._pos + n
        if end > len(self._buf):
            capacity = max(end, 2 * len(self._buf), 4096)
            self._buf = self._xof.digest(capacity)
        out = self._buf[self._pos:end]
        self._pos = end
        return out

    def read_u32(self, count: int) -> np.ndarray:
        """Read ``count`` little-endian 32-bit unsigned values."""
        return np.frombuffer(self.read(4 * count), dtype=_U32)


def make_xof(seed_parts: Iterable[bytes]) -> XofStream:
    """Seed a SHAKE-256 stream with the concatenation of ``seed_parts``."""
    parts = list(seed_parts)
    if not parts:
        raise ValueError("seed_parts must not be empty")
    return XofStream(b"".join(parts))


def password_digest(password: str) -> bytes:
    """SHA3-512 digest of the password, the seed half shared by both sides."""
    if not password:
        raise ValueError("password must be non-empty")
    return hashlib.sha3_512(password.encode("utf-8")).digest()


def _unique_moduli(stream: XofStream, modulus: int, count: int) -> list[int]:
    # Draw uint32 values, reduce, and keep first occurrences until `count`
    # distinct values are collected.
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < count:
        for u in stream.read_u32(1024):
            s = int(u) % modulus
            if s not in seen:
                seen.add(s)
                out.append(s)
                if len(out) == count:
                    break
    return out


@lru_cache(maxsize=64)
def _cell_indices_cached(nonce: bytes, digest: bytes, total_cells: int,
                         table_cells: int) -> tuple[int, ...]:
    stream = make_xof([nonce, digest])
    return tuple(_unique_moduli(stream, total_cells, table_cells))


def derive_cell_indices(enroll_nonce: Nonce512, password: str,
                        total_cells: int = PUF_CELLS,
                        table_cells: int = TABLE_CELLS) -> list[int]:
    """Select ``table_cells`` distinct memory addresses out of ``total_cells``.

    The stream is SHAKE-256(nonce || SHA3-512(password)); each draw is a
    uint32 reduced mod ``total_cells``, duplicates skipped, first-drawn
    order preserved. With the default power-of-two cell count the
    reduction is exactly uniform.
    """
    if table_cells > total_cells:
        raise ValueError("cannot select more cells than the device has")
    if total_cells < 1:
        raise ValueError("total_cells must be positive")
    return list(_cell_indices_cached(enroll_nonce.value, password_digest(password),
                                     total_cells, table_cells))


@lru_cache(maxsize=64)
def _challenge_coords_cached(nonce: bytes, digest: bytes, frame_size: int,
                             count: int) -> bytes:
    # Stored packed (x0, y0, x1, y1, ...) to keep the cache compact.
    stream = make_xof([nonce, digest])
    raw = stream.read(2 * count)
    if frame_size == 256:
        return raw
    arr = np.frombuffer(raw, dtype=np.uint8) % frame_size
    return arr.astype(np.uint8).tobytes()


def derive_challenge_coords(enroll_nonce: Nonce512, password: str,
                            frame_size: int = 256,
                            count: int = TABLE_CELLS) -> np.ndarray:
    """Derive ``count`` pseudorandom (x, y) challenge points in [0, frame_size)^2.

    Each coordinate consumes exactly two stream bytes (x then y). Only
    divisors of 256 are accepted for ``frame_size`` so the byte-mod
    reduction stays exactly uniform.

    Returns an array of shape (count, 2), dtype uint8.
    """
    if not (1 <= frame_size <= 256) or 256 % frame_size != 0:
        raise ValueError("frame_size must be a divisor of 256 in [1, 256]")
    if count < 1:
        raise ValueError("count must be >= 1")
    raw = _challenge_coords_cached(enroll_nonce.value, password_digest(password),
                                   frame_size, count)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, 2)


def derive_challenge_index_stream(challenge_nonce: Nonce512, password: str,
                                  table_cells: int = TABLE_CELLS) -> Iterator[int]:
    """Unbounded stream of table indices in [0, table_cells).

    Seeded with SHAKE-256(nonce || SHA3-512(password)); uint32 draws are
    reduced mod ``table_cells``, which must be a power of two to keep the
    reduction bias-free. Duplicates are NOT removed here: the stable-bit
    collector deduplicates, and both protocol sides must walk identical
    streams.
    """
    return index_stream_from_digest(challenge_nonce, password_digest(password),
                                    table_cells)


def index_stream_from_digest(challenge_nonce: Nonce512, pwd_digest: bytes,
                             table_cells: int = TABLE_CELLS) -> Iterator[int]:
    """Same as :func:`derive_challenge_index_stream`, from a precomputed digest.

    Lets a server session hold only the password digest rather than the
    password itself.
    """
    if table_cells < 1 or table_cells & (table_cells - 1) != 0:
        raise ValueError("table_cells must be a power of two")
    stream = make_xof([challenge_nonce.value, pwd_digest])
    mask = table_cells - 1
    while True:
        for u in stream.read_u32(1024):
            yield int(u) & mask


@lru_cache(maxsize=64)
def _landmark_selection_cached(sha256_digest: bytes, total: int,
                               k: int) -> tuple[int, ...]:
    stream = XofStream(sha256_digest)
    limit = (256 // total) * total  # rejection threshold: 204 for total=68
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < k:
        for b in stream.read(256):
            if b >= limit:
                continue
            v = b % total
            if v not in seen:
                seen.add(v)
                out.append(v)
                if len(out) == k:
                    break
    return tuple(out)


def select_landmark_indices(password: str, total: int = LANDMARK_COUNT,
                            k: int = LANDMARK_SELECTION) -> list[int]:
    """Pick ``k`` distinct landmark indices keyed by the password alone.

    The stream is SHAKE-256 seeded with SHA-256(password) (SHA-2 here, by
    design; the table derivations use SHA3-512). One byte is drawn at a
    time with rejection sampling, so every index is exactly equally
    likely before deduplication.
    """
    if not password:
        raise ValueError("password must be non-empty")
    if k > total:
        raise ValueError("cannot select more landmarks than exist")
    if not (1 <= total <= 256):
        raise ValueError("total must be in [1, 256]")
    digest = hashlib.sha256(password.encode("utf-8")).digest()
    return list(_landmark_selection_cached(digest, total, k))
