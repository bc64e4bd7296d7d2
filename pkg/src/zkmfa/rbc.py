"""Response-based reconciliation of noisy session keys.

The prover never transmits its key: it sends one 32-byte SHA3-256 digest
per key fragment. The verifier checks its own fragments against those
digests and, on mismatch, searches its Hamming neighborhood fragment by
fragment (all single-bit flips, then all two-bit flips, and so on up to
``max_hamming``), accepting the first candidate whose digest matches.
Errors are corrected per fragment, so the total correctable noise scales
with the fragmentation level.

Digest input is the fragment's packed bytes followed by the fragment
index as one byte; the index byte domain-separates identical fragments
at different positions. Fragment bits pack MSB-first, zero-padded to a
byte boundary.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import FragmentStatus, ReconciliationFailure

DEFAULT_KEY_BITS = 256
DEFAULT_MAX_HAMMING = 3
DIGEST_BYTES = 32


@dataclass(frozen=True)
class KeyBits:
    """A session key as an explicit bit vector."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.bits, dtype=np.uint8)
        object.__setattr__(self, "bits", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("key must be a non-empty flat bit array")
        if arr.max() > 1:
            raise ValueError("key bits must be 0 or 1")
        arr.setflags(write=False)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other):
        return isinstance(other, KeyBits) and np.array_equal(self.bits, other.bits)

    def packed(self) -> bytes:
        return np.packbits(self.bits).tobytes()

    @classmethod
    def from_packed(cls, raw: bytes, bit_count: int) -> "KeyBits":
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=bit_count)
        return cls(bits)

    def hamming(self, other: "KeyBits") -> int:
        if len(other) != len(self):
            raise ValueError("length mismatch")
        return int(np.count_nonzero(self.bits != other.bits))

    def fingerprint(self) -> str:
        """SHA3-256 of the packed key; safe to print, the key is not."""
        return hashlib.sha3_256(self.packed()).hexdigest()


@dataclass(frozen=True)
class FragmentDigestSet:
    """One 32-byte digest per key fragment."""

    frag_level: int
    digests: tuple[bytes, ...]

    def __post_init__(self):
        if len(self.digests) != self.frag_level:
            raise ValueError("digest count must equal frag_level")
        if any(len(d) != DIGEST_BYTES for d in self.digests):
            raise ValueError(f"digests must be {DIGEST_BYTES} bytes")


def fragment(key: KeyBits, frag_level: int) -> list[np.ndarray]:
    """Split the key into ``frag_level`` contiguous equal bit slices."""
    if frag_level < 1 or frag_level > 256:
        raise ValueError("frag_level must lie in [1, 256]")
    if len(key) % frag_level != 0:
        raise ValueError(
            f"frag_level {frag_level} does not divide key length {len(key)}")
    size = len(key) // frag_level
    return [key.bits[i * size:(i + 1) * size] for i in range(frag_level)]


def _digest(packed: bytes, index: int) -> bytes:
    return hashlib.sha3_256(packed + bytes([index])).digest()


def digest_fragments(key: KeyBits, frag_level: int) -> FragmentDigestSet:
    """Hash each fragment with its position appended as the final byte."""
    digests = tuple(
        _digest(np.packbits(frag).tobytes(), i)
        for i, frag in enumerate(fragment(key, frag_level))
    )
    return FragmentDigestSet(frag_level, digests)


def search_space(fragment_bits: int, max_hamming: int) -> int:
    """Candidates examined for one unresolved fragment, direct check included."""
    return sum(math.comb(fragment_bits, t) for t in range(max_hamming + 1))


def _resolve_fragment(frag_bits: np.ndarray, index: int, target: bytes,
                      max_hamming: int) -> tuple[bytes | None, int | None, int]:
    """Search one fragment's Hamming ball; returns (packed, distance, checked)."""
    packed = np.packbits(frag_bits).tobytes()
    nbytes = len(packed)
    checked = 1
    if _digest(packed, index) == target:
        return packed, 0, checked
    nbits = frag_bits.size
    pad = 8 * nbytes
    base = int.from_bytes(packed, "big")
    flip = [1 << (pad - 1 - j) for j in range(nbits)]
    suffix = bytes([index])
    sha3 = hashlib.sha3_256
    for dist in range(1, max_hamming + 1):
        for combo in combinations(range(nbits), dist):
            mask = 0
            for j in combo:
                mask |= flip[j]
            cand = (base ^ mask).to_bytes(nbytes, "big")
            checked += 1
            if sha3(cand + suffix).digest() == target:
                return cand, dist, checked
    return None, None, checked


def reconcile(key: KeyBits, digest_set: FragmentDigestSet,
              max_hamming: int = DEFAULT_MAX_HAMMING) -> KeyBits:
    """Correct the verifier's key toward the prover's fragment digests.

    Fragments whose digest already matches are kept; the rest are
    searched in increasing Hamming distance, flip positions in
    lexicographic order, so the result is deterministic. The search
    stops at the first fragment that cannot be resolved within
    ``max_hamming`` (remaining fragments are reported unattempted).

    Raises :class:`ReconciliationFailure` carrying per-fragment status
    when any fragment is unresolved; on success the corrected key's
    digests equal ``digest_set`` exactly.
    """
    if max_hamming < 0:
        raise ValueError("max_hamming must be non-negative")
    frags = fragment(key, digest_set.frag_level)
    size = len(key) // digest_set.frag_level
    statuses: list[FragmentStatus] = []
    corrected: list[np.ndarray] = []
    failed = False
    for i, frag_bits in enumerate(frags):
        if failed:
            statuses.append(FragmentStatus(i, False, None, 0, attempted=False))
            continue
        packed, dist, checked = _resolve_fragment(
            frag_bits, i, digest_set.digests[i], max_hamming)
        if packed is None:
            statuses.append(FragmentStatus(i, False, None, checked))
            failed = True
        else:
            statuses.append(FragmentStatus(i, True, dist, checked))
            bits = np.unpackbits(np.frombuffer(packed, dtype=np.uint8),
                                 count=size)
            corrected.append(bits)
    if failed:
        raise ReconciliationFailure(statuses)
    result = KeyBits(np.concatenate(corrected))
    assert digest_fragments(result, digest_set.frag_level) == digest_set
    return result
