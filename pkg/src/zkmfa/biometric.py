"""Template-less biometric encoding.

A challenge point is compared to the 68 detected facial landmarks by
Euclidean distance. Each distance is quantized to ``accuracy_bits``, the
``chopped_msbs`` most significant bits are discarded to strip coarse
(face-nonspecific) variation, and the remainder is binary-reflected Gray
coded so that a near-boundary wobble costs a single bit. Responses from
consecutive challenges are concatenated and the first 65,536 bits fill a
256x256 table; multiple frames are fused by unanimity into a ternary
table exactly like repeated PUF reads.

No raw landmark template ever needs to be stored: the table is keyed by
the enrollment nonce and password, and the stored reference is ternary
response data only.

Landmark ingestion replaces an upstream detector. The accepted file is a
single JSON document::

    {"person_id": str,
     "frames": [{"frame_id": str, "kind": "moment"|"variation",
                 "points": [[x, y] * 68]}]}

with every component finite and in [0, 256). A synthetic generator
stands in for a photo dataset: one canonical face-shaped landmark set
per person plus Gaussian per-frame jitter (a small sigma for repeat
"moment" shots, a larger one for high-variation shots).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .derivation import (LANDMARK_COUNT, Nonce512, TABLE_CELLS, XofStream,
                         derive_challenge_coords, make_xof,
                         select_landmark_indices)
from .errors import FormatError
from .tables import BinaryTable, TernaryTable, superimpose

FRAME_SIZE = 256
DEFAULT_MOMENT_SIGMA = 0.5
DEFAULT_VARIATION_SIGMA = 2.0
FRAME_KINDS = ("moment", "variation")

_PERSON_PREFIX = b"zkmfa:bio:person:"
_FRAME_PREFIX = b"zkmfa:bio:frame:"


@dataclass(frozen=True)
class QuantParams:
    """Distance quantizer settings.

    ``accuracy_bits`` is the quantizer precision; ``chopped_msbs`` of the
    most significant bits are dropped before Gray coding. The full-scale
    distance is the frame diagonal.
    """

    accuracy_bits: int
    chopped_msbs: int
    frame_size: int = FRAME_SIZE

    def __post_init__(self):
        if not 1 <= self.accuracy_bits <= 16:
            raise ValueError("accuracy_bits must lie in [1, 16]")
        if not 0 <= self.chopped_msbs < self.accuracy_bits:
            raise ValueError("chopped_msbs must lie in [0, accuracy_bits)")
        if self.frame_size < 1:
            raise ValueError("frame_size must be positive")

    @property
    def max_distance(self) -> float:
        return math.sqrt(2.0) * self.frame_size

    @property
    def response_bits(self) -> int:
        """Bits emitted per (challenge, landmark) distance."""
        return self.accuracy_bits - self.chopped_msbs


def quantize_distance(distance: float, params: QuantParams) -> np.ndarray:
    """Quantize one Euclidean distance to its Gray-coded response bits.

    The raw level is floor(distance / max_distance * 2^accuracy_bits),
    clamped to the top level for distances at or beyond full scale. The
    chopped MSBs are removed from the binary representation first, then
    the remaining value v is emitted as v XOR (v >> 1), most significant
    bit first.
    """
    if distance < 0:
        raise ValueError("distance must be non-negative")
    g = params.accuracy_bits
    level = int(distance / params.max_distance * (1 << g))
    level = min(level, (1 << g) - 1)
    kept = g - params.chopped_msbs
    v = level & ((1 << kept) - 1)
    gray = v ^ (v >> 1)
    return np.array([(gray >> s) & 1 for s in range(kept - 1, -1, -1)],
                    dtype=np.uint8)


def _quantize_block(distances: np.ndarray, params: QuantParams) -> np.ndarray:
    """Vectorized quantizer: (...,) distances -> (..., response_bits) bits."""
    g = params.accuracy_bits
    levels = (distances / params.max_distance * float(1 << g)).astype(np.int64)
    np.minimum(levels, (1 << g) - 1, out=levels)
    kept = g - params.chopped_msbs
    v = levels & ((1 << kept) - 1)
    gray = v ^ (v >> 1)
    shifts = np.arange(kept - 1, -1, -1, dtype=np.int64)
    bits = (gray[..., None] >> shifts) & 1
    return bits.astype(np.uint8)


@dataclass(frozen=True)
class LandmarkFrame:
    """One detected-landmark set for one image of one person."""

    person_id: str
    frame_id: str
    kind: str
    points: np.ndarray  # (68, 2) float64, components in [0, 256)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.shape != (LANDMARK_COUNT, 2):
            raise ValueError(f"expected {LANDMARK_COUNT} landmark points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark components must be finite")
        if pts.min() < 0.0 or pts.max() >= FRAME_SIZE:
            raise ValueError("landmark components must lie in [0, 256)")
        if self.kind not in FRAME_KINDS:
            raise ValueError(f"kind must be one of {FRAME_KINDS}")
        pts.setflags(write=False)


def challenges_needed(params: QuantParams, bit_count: int = TABLE_CELLS,
                      landmarks: int = 64) -> int:
    """Challenges consumed to emit at least ``bit_count`` response bits."""
    per_challenge = landmarks * params.response_bits
    return -(-bit_count // per_challenge)


def frame_response_stream(frame: LandmarkFrame,
                          challenges: Iterable[Sequence[float]] | np.ndarray,
                          landmark_sel: Sequence[int],
                          params: QuantParams,
                          bit_count: int = TABLE_CELLS) -> np.ndarray:
    """Concatenated response bits of one frame against a challenge stream.

    For each challenge in order, the distances to the selected landmarks
    (in selection order) are quantized and appended; challenges are
    consumed until at least ``bit_count`` bits exist, and the result is
    truncated to exactly ``bit_count``.
    """
    needed = challenges_needed(params, bit_count, len(landmark_sel))
    if isinstance(challenges, np.ndarray):
        chal = challenges[:needed]
    else:
        it: Iterator = iter(challenges)
        chal = np.array([c for _, c in zip(range(needed), it)], dtype=np.float64)
    if len(chal) < needed:
        raise ValueError(
            f"challenge iterator exhausted: got {len(chal)}, need {needed}")
    chal = np.asarray(chal, dtype=np.float64).reshape(needed, 2)
    pts = frame.points[np.asarray(landmark_sel, dtype=np.int64)]
    deltas = chal[:, None, :] - pts[None, :, :]
    distances = np.sqrt(np.einsum("ijk,ijk->ij", deltas, deltas))
    bits = _quantize_block(distances, params)
    return bits.reshape(-1)[:bit_count]


def enroll_bio(frames: Sequence[LandmarkFrame], enroll_nonce: Nonce512,
               password: str, params: QuantParams,
               rows: int = 256, cols: int = 256) -> TernaryTable:
    """Fuse multiple frames of one subject into the ternary reference table.

    All frames share the challenge points derived from (nonce, password)
    and the password-selected landmark subset; a table bit survives only
    if every frame produced the same value there.
    """
    if not frames:
        raise ValueError("need at least one frame")
    bit_count = rows * cols
    sel = select_landmark_indices(password)
    chal = derive_challenge_coords(
        enroll_nonce, password, params.frame_size,
        challenges_needed(params, bit_count, len(sel))).astype(np.float64)
    reads = [BinaryTable(rows, cols,
                         frame_response_stream(f, chal, sel, params, bit_count))
             for f in frames]
    return superimpose(reads)


def one_shot_bio_table(frame: LandmarkFrame, enroll_nonce: Nonce512,
                       password: str, params: QuantParams,
                       rows: int = 256, cols: int = 256) -> BinaryTable:
    """Single-frame response table (client side of a key generation)."""
    bit_count = rows * cols
    sel = select_landmark_indices(password)
    chal = derive_challenge_coords(
        enroll_nonce, password, params.frame_size,
        challenges_needed(params, bit_count, len(sel))).astype(np.float64)
    return BinaryTable(rows, cols,
                       frame_response_stream(frame, chal, sel, params, bit_count))


@dataclass(frozen=True)
class PersonModel:
    """Synthetic subject: canonical landmark set plus jitter magnitudes."""

    person_id: str
    canonical: np.ndarray  # (68, 2), components in [8, 248)
    moment_sigma: float = DEFAULT_MOMENT_SIGMA
    variation_sigma: float = DEFAULT_VARIATION_SIGMA

    def __post_init__(self):
        pts = np.ascontiguousarray(self.canonical, dtype=np.float64)
        object.__setattr__(self, "canonical", pts)
        if pts.shape != (LANDMARK_COUNT, 2):
            raise ValueError(f"expected {LANDMARK_COUNT} canonical points")
        if pts.min() < 8.0 or pts.max() >= 248.0:
            raise ValueError("canonical points must lie in [8, 248)")
        pts.setflags(write=False)


@lru_cache(maxsize=1)
def _face_template() -> np.ndarray:
    """68 anchor points laid out like a frontal face in a 256x256 chip.

    Standard ordering: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47,
    outer lip 48-59, inner lip 60-67.
    """
    pts = np.zeros((LANDMARK_COUNT, 2))
    t = np.linspace(0.0, 1.0, 17)
    pts[0:17, 0] = 128.0 - 62.0 * np.cos(np.pi * t)
    pts[0:17, 1] = 120.0 + 78.0 * np.sin(np.pi * t)
    t = np.linspace(0.0, 1.0, 5)
    pts[17:22, 0] = 78.0 + 38.0 * t
    pts[17:22, 1] = 96.0 - 6.0 * np.sin(np.pi * t)
    pts[22:27, 0] = 140.0 + 38.0 * t
    pts[22:27, 1] = 96.0 - 6.0 * np.sin(np.pi * t)
    pts[27:31, 0] = 128.0
    pts[27:31, 1] = np.linspace(108.0, 138.0, 4)
    pts[31:36, 0] = np.linspace(112.0, 144.0, 5)
    pts[31:36, 1] = 146.0
    eye = np.array([[-14.0, 0.0], [-7.0, -5.0], [7.0, -5.0],
                    [14.0, 0.0], [7.0, 5.0], [-7.0, 5.0]])
    pts[36:42] = np.array([97.0, 110.0]) + eye
    pts[42:48] = np.array([159.0, 110.0]) + eye
    phi = np.pi + 2.0 * np.pi * np.arange(12) / 12.0
    pts[48:60, 0] = 128.0 + 26.0 * np.cos(phi)
    pts[48:60, 1] = 172.0 + 12.0 * np.sin(phi)
    phi = np.pi + 2.0 * np.pi * np.arange(8) / 8.0
    pts[60:68, 0] = 128.0 + 16.0 * np.cos(phi)
    pts[60:68, 1] = 172.0 + 5.0 * np.sin(phi)
    pts.setflags(write=False)
    return pts


def _stream_uniform(stream: XofStream, count: int) -> np.ndarray:
    return stream.read_u32(count).astype(np.float64) / float(2**32)


def _stream_normal(stream: XofStream, count: int) -> np.ndarray:
    # Box-Muller; u1 shifted away from zero so the log is finite.
    half = -(-count // 2)
    u1 = (stream.read_u32(half).astype(np.float64) + 1.0) / float(2**32)
    u2 = _stream_uniform(stream, half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2),
                        r * np.sin(2.0 * np.pi * u2)])
    return z[:count]


PERSON_OFFSET_PX = 16.0


def synth_person(seed: bytes, person_id: str = "",
                 moment_sigma: float = DEFAULT_MOMENT_SIGMA,
                 variation_sigma: float = DEFAULT_VARIATION_SIGMA,
                 offset_px: float = PERSON_OFFSET_PX) -> PersonModel:
    """Deterministic synthetic subject: template plus bounded offsets.

    Each landmark of the shared face template is shifted by an
    independent uniform offset in [-offset_px, offset_px) per axis, so
    different seeds give distinct but equally face-shaped subjects whose
    global geometry still correlates (the property MSB chopping
    exploits).
    """
    stream = make_xof([_PERSON_PREFIX, seed])
    offsets = _stream_uniform(stream, 2 * LANDMARK_COUNT) * (2.0 * offset_px) - offset_px
    canonical = _face_template() + offsets.reshape(LANDMARK_COUNT, 2)
    return PersonModel(
        person_id=person_id or f"person-{seed.hex()[:8]}",
        canonical=canonical,
        moment_sigma=moment_sigma,
        variation_sigma=variation_sigma,
    )


def synth_frame(model: PersonModel, kind: str, frame_seed: bytes,
                frame_id: str = "") -> LandmarkFrame:
    """One jittered capture of a synthetic subject."""
    if kind not in FRAME_KINDS:
        raise ValueError(f"kind must be one of {FRAME_KINDS}")
    sigma = model.moment_sigma if kind == "moment" else model.variation_sigma
    stream = make_xof([_FRAME_PREFIX, model.person_id.encode(), kind.encode(),
                       frame_seed])
    jitter = sigma * _stream_normal(stream, 2 * LANDMARK_COUNT)
    pts = model.canonical + jitter.reshape(LANDMARK_COUNT, 2)
    np.clip(pts, 0.0, np.nextafter(float(FRAME_SIZE), 0.0), out=pts)
    return LandmarkFrame(
        person_id=model.person_id,
        frame_id=frame_id or f"{kind}-{frame_seed.hex()[:8]}",
        kind=kind,
        points=pts,
    )


def load_frames(path) -> list[LandmarkFrame]:
    """Load and validate one person's landmark file."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "person_id" not in doc or "frames" not in doc:
        raise FormatError(f"{path}: expected person_id and frames keys")
    person_id = doc["person_id"]
    frames = []
    for entry in doc["frames"]:
        frame_id = entry.get("frame_id", "<missing frame_id>")
        try:
            frames.append(LandmarkFrame(
                person_id=person_id,
                frame_id=frame_id,
                kind=entry["kind"],
                points=np.asarray(entry["points"], dtype=np.float64),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: frame {frame_id!r}: {exc}") from exc
    return frames


def save_frames(path, person_id: str, frames: Sequence[LandmarkFrame]) -> None:
    """Write the landmark JSON document for one person."""
    doc = {
        "person_id": person_id,
        "frames": [
            {"frame_id": f.frame_id, "kind": f.kind,
             "points": [[float(x), float(y)] for x, y in f.points]}
            for f in frames
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
