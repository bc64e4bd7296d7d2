"""Frame encoding for the two-message key-generation exchange.

Every frame is ``ZKMF`` | version u8 (=1) | msg_type u8 | body_len u32 |
body, all integers big-endian. Message types:

* 1, challenge (server to client): session_id (16) | enrollment nonce
  (64) | challenge nonce (64) | accuracy_bits u8 | chopped_msbs u8 |
  oversample u16 | key_bits u16 | frag_level u8 | max_hamming u8 |
  mask (8,192 bytes; bit j = cell j row-major, MSB-first per byte).
* 2, response (client to server): session_id (16) | frag_level u8 |
  digests (frag_level x 32 bytes).
* 3, verdict (server to client, network transport only): session_id
  (16) | status u8 (0 accept, 1 reject) | key fingerprint (32 bytes,
  zero on reject). The two-message exchange itself never needs this
  frame; it exists so a remote client learns the outcome.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .derivation import Nonce512
from .errors import FormatError
from .protocol import ChallengeMessage, ResponseMessage, SessionParams
from .rbc import DIGEST_BYTES, FragmentDigestSet
from .tables import MaskVector

MAGIC = b"ZKMF"
VERSION = 1
MSG_CHALLENGE = 1
MSG_RESPONSE = 2
MSG_VERDICT = 3

SESSION_ID_BYTES = 16
MASK_BYTES = 8192
_HEADER = struct.Struct(">4sBBI")
_CHALLENGE_FIXED = struct.Struct(">16s64s64sBBHHBB")


@dataclass(frozen=True)
class Verdict:
    """Server's outcome notification for the network transport."""

    session_id: bytes
    accepted: bool
    fingerprint: bytes = b"\x00" * 32


def _frame(msg_type: int, body: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(body)) + body


def encode_challenge(msg: ChallengeMessage) -> bytes:
    p = msg.params
    if p.oversample > 0xFFFF or p.key_bits > 0xFFFF:
        raise FormatError("oversample and key_bits must fit 16 bits on the wire")
    mask = msg.mask.packed()
    if len(mask) != MASK_BYTES:
        raise FormatError(f"mask must pack to {MASK_BYTES} bytes")
    body = _CHALLENGE_FIXED.pack(
        msg.session_id, msg.enroll_nonce.value, msg.challenge_nonce.value,
        p.accuracy_bits, p.chopped_msbs, p.oversample, p.key_bits,
        p.frag_level, p.max_hamming) + mask
    return _frame(MSG_CHALLENGE, body)


def encode_response(msg: ResponseMessage) -> bytes:
    body = (msg.session_id + bytes([msg.digests.frag_level])
            + b"".join(msg.digests.digests))
    return _frame(MSG_RESPONSE, body)


def encode_verdict(v: Verdict) -> bytes:
    if len(v.fingerprint) != 32:
        raise FormatError("fingerprint must be 32 bytes")
    body = v.session_id + bytes([0 if v.accepted else 1]) + v.fingerprint
    return _frame(MSG_VERDICT, body)


def split_frame(raw: bytes) -> tuple[int, bytes]:
    """Validate the header and return (msg_type, body)."""
    if len(raw) < _HEADER.size:
        raise FormatError("truncated frame header")
    magic, version, msg_type, body_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if len(raw) != _HEADER.size + body_len:
        raise FormatError("frame length does not match header")
    return msg_type, raw[_HEADER.size:]


def decode_challenge_body(body: bytes) -> ChallengeMessage:
    if len(body) != _CHALLENGE_FIXED.size + MASK_BYTES:
        raise FormatError("challenge body has wrong length")
    (session_id, rn_enroll, rn_challenge, accuracy_bits, chopped_msbs,
     oversample, key_bits, frag_level, max_hamming) = _CHALLENGE_FIXED.unpack_from(body)
    mask_raw = body[_CHALLENGE_FIXED.size:]
    try:
        params = SessionParams(
            accuracy_bits=accuracy_bits, chopped_msbs=chopped_msbs,
            oversample=oversample, key_bits=key_bits,
            frag_level=frag_level, max_hamming=max_hamming)
    except ValueError as exc:
        raise FormatError(f"invalid session parameters: {exc}") from exc
    return ChallengeMessage(
        session_id=session_id,
        enroll_nonce=Nonce512.from_bytes(rn_enroll),
        challenge_nonce=Nonce512.from_bytes(rn_challenge),
        mask=MaskVector.from_packed(mask_raw, 8 * MASK_BYTES),
        params=params,
    )


def decode_response_body(body: bytes) -> ResponseMessage:
    if len(body) < SESSION_ID_BYTES + 1:
        raise FormatError("response body too short")
    session_id = body[:SESSION_ID_BYTES]
    frag_level = body[SESSION_ID_BYTES]
    rest = body[SESSION_ID_BYTES + 1:]
    if frag_level < 1 or len(rest) != frag_level * DIGEST_BYTES:
        raise FormatError("digest block has wrong length")
    digests = tuple(rest[i * DIGEST_BYTES:(i + 1) * DIGEST_BYTES]
                    for i in range(frag_level))
    return ResponseMessage(session_id=session_id,
                           digests=FragmentDigestSet(frag_level, digests))


def decode_verdict_body(body: bytes) -> Verdict:
    if len(body) != SESSION_ID_BYTES + 1 + 32:
        raise FormatError("verdict body has wrong length")
    status = body[SESSION_ID_BYTES]
    if status not in (0, 1):
        raise FormatError(f"unknown verdict status {status}")
    return Verdict(session_id=body[:SESSION_ID_BYTES],
                   accepted=status == 0,
                   fingerprint=body[SESSION_ID_BYTES + 1:])


def decode(raw: bytes):
    """Decode a whole frame into its message object."""
    msg_type, body = split_frame(raw)
    if msg_type == MSG_CHALLENGE:
        return decode_challenge_body(body)
    if msg_type == MSG_RESPONSE:
        return decode_response_body(body)
    if msg_type == MSG_VERDICT:
        return decode_verdict_body(body)
    raise FormatError(f"unknown message type {msg_type}")
