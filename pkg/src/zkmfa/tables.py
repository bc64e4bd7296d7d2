"""Binary and ternary reference tables and their cellwise operators.

A reference table is a 256x256 grid. Binary tables hold one-shot reads
({0,1} per cell); ternary tables additionally mark cells that disagreed
across repeated reads with X, excluding them from key material. Cells are
stored row-major as uint8 with 0, 1 and 2 (=X).

The ``.tt`` on-disk format (TT01) packs cells at two bits each:
magic ``TT01`` | rows u16 BE | cols u16 BE | payload. Bit-pair codes are
00=zero, 01=one, 10=X; 11 is reserved and rejected. Cells are packed
MSB-first, i.e. cell 4k occupies bits 7..6 of payload byte k, and the
final byte is zero-padded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FormatError

X = 2  # ternary "unstable" marker

_MAGIC = b"TT01"


def _as_cells(cells, limit: int) -> np.ndarray:
    arr = np.ascontiguousarray(cells, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("cells must be a flat row-major array")
    if arr.size and arr.max() > limit:
        raise ValueError(f"cell values must be <= {limit}")
    return arr


@dataclass(frozen=True)
class BinaryTable:
    """One-shot read table: every cell is 0 or 1."""

    rows: int
    cols: int
    cells: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cells", _as_cells(self.cells, 1))
        if self.cells.size != self.rows * self.cols:
            raise ValueError("cell count must equal rows*cols")
        self.cells.setflags(write=False)

    def __eq__(self, other):
        return (isinstance(other, BinaryTable) and self.rows == other.rows
                and self.cols == other.cols
                and np.array_equal(self.cells, other.cells))

    def xor(self, other: "BinaryTable") -> "BinaryTable":
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise ValueError("dimension mismatch")
        return BinaryTable(self.rows, self.cols, self.cells ^ other.cells)


@dataclass(frozen=True)
class TernaryTable:
    """Reference table over {0, 1, X}."""

    rows: int
    cols: int
    cells: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cells", _as_cells(self.cells, X))
        if self.cells.size != self.rows * self.cols:
            raise ValueError("cell count must equal rows*cols")
        self.cells.setflags(write=False)

    def __eq__(self, other):
        return (isinstance(other, TernaryTable) and self.rows == other.rows
                and self.cols == other.cols
                and np.array_equal(self.cells, other.cells))

    @property
    def x_density(self) -> float:
        """Fraction of cells marked X (flaky-cell ratio)."""
        return float(np.count_nonzero(self.cells == X)) / self.cells.size


@dataclass(frozen=True)
class MaskVector:
    """Bit per cell, 1 where the reference table holds X."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_cells(self.bits, 1))
        self.bits.setflags(write=False)

    def __eq__(self, other):
        return isinstance(other, MaskVector) and np.array_equal(self.bits, other.bits)

    def __len__(self) -> int:
        return self.bits.size

    def packed(self) -> bytes:
        """Pack to bytes, bit j of the vector = bit (7 - j%8) of byte j//8."""
        return np.packbits(self.bits).tobytes()

    @classmethod
    def from_packed(cls, raw: bytes, length: int) -> "MaskVector":
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=length)
        return cls(bits)


def superimpose(reads: Sequence[BinaryTable]) -> TernaryTable:
    """Fuse repeated reads: unanimous cells keep their bit, the rest become X."""
    if not reads:
        raise ValueError("need at least one read")
    first = reads[0]
    for r in reads[1:]:
        if (r.rows, r.cols) != (first.rows, first.cols):
            raise ValueError("dimension mismatch between reads")
    stack = np.stack([r.cells for r in reads])
    lo = stack.min(axis=0)
    hi = stack.max(axis=0)
    cells = np.where(lo == hi, lo, np.uint8(X))
    return TernaryTable(first.rows, first.cols, cells)


def merge_xor(a: TernaryTable, b: TernaryTable,
              c: BinaryTable | None = None) -> TernaryTable:
    """Cellwise composite: X wherever either input is X, else a XOR b XOR c.

    The binary third table defaults to all zeros. The operator is
    deliberately many-to-one: each binary output cell has exactly four
    (a, b, c) preimages, so the composite reveals nothing about which
    factor contributed which bit.
    """
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError("dimension mismatch")
    if c is not None and (c.rows, c.cols) != (a.rows, a.cols):
        raise ValueError("dimension mismatch")
    unstable = (a.cells == X) | (b.cells == X)
    mixed = a.cells ^ b.cells
    if c is not None:
        mixed = mixed ^ c.cells
    cells = np.where(unstable, np.uint8(X), mixed)
    return TernaryTable(a.rows, a.cols, cells)


def mask_of(table: TernaryTable) -> MaskVector:
    """Ternary map of a table: bit j set iff cell j is X."""
    return MaskVector((table.cells == X).astype(np.uint8))


def apply_mask(table: BinaryTable, mask: MaskVector) -> TernaryTable:
    """Stamp X over a one-shot table wherever the mask bit is set."""
    if len(mask) != table.cells.size:
        raise ValueError("mask length must equal cell count")
    cells = np.where(mask.bits == 1, np.uint8(X), table.cells)
    return TernaryTable(table.rows, table.cols, cells)


def match_fraction(ref: TernaryTable, probe: BinaryTable) -> float:
    """Fraction of the reference's stable cells that the probe reproduces.

    X cells are excluded from numerator and denominator: only cells that
    enrolled as stable carry information about the subject.
    """
    if (ref.rows, ref.cols) != (probe.rows, probe.cols):
        raise ValueError("dimension mismatch")
    stable = ref.cells != X
    total = int(np.count_nonzero(stable))
    if total == 0:
        raise ValueError("reference table has no stable cells")
    agree = int(np.count_nonzero(stable & (ref.cells == probe.cells)))
    return agree / total


def serialize(table: TernaryTable) -> bytes:
    """Encode a table in the TT01 format."""
    header = _MAGIC + struct.pack(">HH", table.rows, table.cols)
    cells = table.cells
    pad = (-cells.size) % 4
    if pad:
        cells = np.concatenate([cells, np.zeros(pad, dtype=np.uint8)])
    quads = cells.reshape(-1, 4)
    payload = (quads[:, 0] << 6) | (quads[:, 1] << 4) | (quads[:, 2] << 2) | quads[:, 3]
    return header + payload.astype(np.uint8).tobytes()


def deserialize(raw: bytes) -> TernaryTable:
    """Decode TT01 bytes; reject bad magic, truncation and reserved codes."""
    if len(raw) < 8:
        raise FormatError("truncated header")
    if raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    rows, cols = struct.unpack(">HH", raw[4:8])
    if rows == 0 or cols == 0:
        raise FormatError("zero dimension")
    count = rows * cols
    expected = (2 * count + 7) // 8
    payload = raw[8:]
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, expected {expected}")
    packed = np.frombuffer(payload, dtype=np.uint8)
    quads = np.empty((packed.size, 4), dtype=np.uint8)
    quads[:, 0] = packed >> 6
    quads[:, 1] = (packed >> 4) & 3
    quads[:, 2] = (packed >> 2) & 3
    quads[:, 3] = packed & 3
    codes = quads.reshape(-1)
    if np.any(codes[:count] == 3):
        raise FormatError("reserved cell code 11 in payload")
    if np.any(codes[count:] != 0):
        raise FormatError("nonzero padding bits")
    return TernaryTable(rows, cols, codes[:count])


def write_table(path, table: TernaryTable) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(table))


def read_table(path) -> TernaryTable:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
