"""SRAM power-up state simulation, dump ingestion and token enrollment.

A device model holds each cell's preferred power-up value plus a per-cell
flip probability. The default noise model is two-population: most cells
never flip, a small flaky fraction flips with a fixed probability. A
Beta-distributed per-cell variant is available for smoother noise.

Real hardware enters through dump directories: raw 131,072-byte files
named ``read_<k>.bin``, one per power cycle, bit i of the device being
bit (7 - i%8) of byte i//8 (MSB-first). Simulated reads use the same
packed layout.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .derivation import Nonce512, XofStream, derive_cell_indices, make_xof
from .errors import FormatError
from .tables import BinaryTable, TernaryTable, superimpose

DEVICE_CELLS = 1_048_576
DEVICE_BYTES = DEVICE_CELLS // 8
DEFAULT_FLAKY_FRACTION = 0.05
DEFAULT_FLAKY_FLIP_PROB = 0.15

_SYNTH_PREFIX = b"zkmfa:puf:synth:"
_READ_PREFIX = b"zkmfa:puf:read:"

_U32_SCALE = float(2**32)


@dataclass
class SramDeviceModel:
    """Per-cell nominal power-up values and flip probabilities."""

    device_id: str
    nominal: np.ndarray          # uint8 bits, length = cell count
    flip_prob: np.ndarray        # float64 in [0, 0.5], same length
    seed: bytes = b""
    noise_model: str = "two_population"
    flaky_fraction: float = DEFAULT_FLAKY_FRACTION
    flaky_flip_prob: float = DEFAULT_FLAKY_FLIP_PROB
    _noisy: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.nominal = np.ascontiguousarray(self.nominal, dtype=np.uint8)
        self.flip_prob = np.ascontiguousarray(self.flip_prob, dtype=np.float64)
        if self.nominal.size != self.flip_prob.size:
            raise ValueError("nominal and flip_prob lengths differ")
        if self.flip_prob.size and (self.flip_prob.min() < 0.0
                                    or self.flip_prob.max() > 0.5):
            raise ValueError("flip probabilities must lie in [0, 0.5]")

    @property
    def cells(self) -> int:
        return self.nominal.size

    @property
    def noisy_indices(self) -> np.ndarray:
        if self._noisy is None:
            self._noisy = np.flatnonzero(self.flip_prob > 0.0)
        return self._noisy


def _uniform_draws(stream: XofStream, count: int) -> np.ndarray:
    """Uniform floats in [0, 1) with 2^-32 granularity."""
    return stream.read_u32(count).astype(np.float64) / _U32_SCALE


def _beta_draws(stream: XofStream, count: int, a: float, b: float) -> np.ndarray:
    # Johnk's algorithm, vectorized round by round; the rejection loop is
    # stream-driven and therefore deterministic.
    out = np.empty(count, dtype=np.float64)
    pending = np.arange(count)
    while pending.size:
        u = _uniform_draws(stream, pending.size)
        v = _uniform_draws(stream, pending.size)
        x = u ** (1.0 / a)
        y = v ** (1.0 / b)
        s = x + y
        ok = (s > 0.0) & (s <= 1.0)
        out[pending[ok]] = x[ok] / s[ok]
        pending = pending[~ok]
    return out


def synth_device(seed: bytes,
                 flaky_fraction: float = DEFAULT_FLAKY_FRACTION,
                 flaky_flip_prob: float = DEFAULT_FLAKY_FLIP_PROB,
                 device_id: str = "",
                 cells: int = DEVICE_CELLS,
                 noise_model: str = "two_population",
                 beta_shape: tuple[float, float] = (0.15, 4.0)) -> SramDeviceModel:
    """Synthesize a deterministic device from a seed.

    Nominal bits are i.i.d. uniform. Under ``two_population`` a
    ``flaky_fraction`` of cells flips with ``flaky_flip_prob`` and the
    rest are perfectly stable; under ``beta`` every cell gets
    0.5 * Beta(*beta_shape*) as its flip probability.
    """
    if not 0.0 <= flaky_fraction <= 1.0:
        raise ValueError("flaky_fraction must lie in [0, 1]")
    if not 0.0 <= flaky_flip_prob <= 0.5:
        raise ValueError("flaky_flip_prob must lie in [0, 0.5]")
    if cells % 8 != 0 or cells <= 0:
        raise ValueError("cell count must be a positive multiple of 8")
    stream = make_xof([_SYNTH_PREFIX, seed])
    nominal = np.unpackbits(np.frombuffer(stream.read(cells // 8), dtype=np.uint8))
    if noise_model == "two_population":
        flaky = _uniform_draws(stream, cells) < flaky_fraction
        flip_prob = np.where(flaky, flaky_flip_prob, 0.0)
    elif noise_model == "beta":
        flip_prob = 0.5 * _beta_draws(stream, cells, *beta_shape)
    else:
        raise ValueError(f"unknown noise model {noise_model!r}")
    return SramDeviceModel(
        device_id=device_id or seed.hex()[:12],
        nominal=nominal,
        flip_prob=flip_prob,
        seed=bytes(seed),
        noise_model=noise_model,
        flaky_fraction=flaky_fraction,
        flaky_flip_prob=flaky_flip_prob,
    )


def power_cycle_read(model: SramDeviceModel, read_seed: bytes) -> bytes:
    """One simulated power cycle: nominal bits with per-cell Bernoulli flips.

    Returns the packed dump (cells/8 bytes). Deterministic in
    (model, read_seed); cells with zero flip probability never flip, so
    distinct seeds differ only at flaky cells.
    """
    bits = model.nominal.copy()
    noisy = model.noisy_indices
    if noisy.size:
        stream = make_xof([_READ_PREFIX, model.seed,
                           model.device_id.encode(), read_seed])
        u = _uniform_draws(stream, noisy.size)
        flips = noisy[u < model.flip_prob[noisy]]
        bits[flips] ^= 1
    return np.packbits(bits).tobytes()


def _project(read: bytes, indices, cells: int) -> np.ndarray:
    if len(read) * 8 != cells:
        raise ValueError(
            f"read is {len(read)} bytes, expected {cells // 8}")
    bits = np.unpackbits(np.frombuffer(read, dtype=np.uint8))
    return bits[np.asarray(indices, dtype=np.int64)]


def enroll_token(reads: list[bytes], enroll_nonce: Nonce512, password: str,
                 rows: int = 256, cols: int = 256,
                 device_cells: int = DEVICE_CELLS) -> TernaryTable:
    """Build the token reference table from repeated power-cycle dumps.

    Cell addresses are derived from (nonce, password); a selected cell
    keeps its bit only if every read agrees there, otherwise it is
    flagged X as flaky.
    """
    if not reads:
        raise ValueError("need at least one read")
    indices = derive_cell_indices(enroll_nonce, password,
                                  total_cells=device_cells,
                                  table_cells=rows * cols)
    projections = [BinaryTable(rows, cols, _project(r, indices, device_cells))
                   for r in reads]
    return superimpose(projections)


def one_shot_token_table(read: bytes, enroll_nonce: Nonce512, password: str,
                         rows: int = 256, cols: int = 256,
                         device_cells: int = DEVICE_CELLS) -> BinaryTable:
    """Project a single dump onto the derived cell addresses."""
    indices = derive_cell_indices(enroll_nonce, password,
                                  total_cells=device_cells,
                                  table_cells=rows * cols)
    return BinaryTable(rows, cols, _project(read, indices, device_cells))


@dataclass
class DumpSet:
    """Ordered power-cycle dumps ingested from a device directory."""

    device_id: str
    reads: list[bytes]


_READ_FILE = re.compile(r"^read_(\d+)\.bin$")


def load_dumps(directory) -> DumpSet:
    """Load ``read_<k>.bin`` files, ordered by k ascending."""
    path = Path(directory)
    if not path.is_dir():
        raise FileNotFoundError(f"dump directory not found: {path}")
    entries = []
    for child in path.iterdir():
        m = _READ_FILE.match(child.name)
        if m:
            entries.append((int(m.group(1)), child))
    if not entries:
        raise FileNotFoundError(f"no read_<k>.bin files in {path}")
    entries.sort()
    reads = []
    for _, child in entries:
        raw = child.read_bytes()
        if len(raw) != DEVICE_BYTES:
            raise FormatError(
                f"{child}: {len(raw)} bytes, expected {DEVICE_BYTES}")
        reads.append(raw)
    return DumpSet(device_id=path.name, reads=reads)


def save_model(path, model: SramDeviceModel) -> None:
    """Write the reconstruction descriptor (seed + parameters, no arrays)."""
    doc = {
        "device_id": model.device_id,
        "M": model.cells,
        "seed_hex": model.seed.hex(),
        "flaky_fraction": model.flaky_fraction,
        "flaky_flip_prob": model.flaky_flip_prob,
        "noise_model": model.noise_model,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SramDeviceModel:
    """Resynthesize a device from its descriptor."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return synth_device(
            seed=bytes.fromhex(doc["seed_hex"]),
            flaky_fraction=doc["flaky_fraction"],
            flaky_flip_prob=doc["flaky_flip_prob"],
            device_id=doc["device_id"],
            cells=doc["M"],
            noise_model=doc.get("noise_model", "two_population"),
        )
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad device model {path}: {exc}") from exc
