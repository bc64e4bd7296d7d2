"""Two-message ephemeral key agreement between server and client.

The server holds a composite ternary table (token XOR biometric, X
wherever either factor was flaky) built once at enrollment. Per session
it sends the enrollment nonce, a fresh challenge nonce, its ternary map
and the session parameters; the client rebuilds binary one-shot tables
from its physical factors, masks them with the received map, and both
sides walk the same keyed challenge-index stream collecting bits at
stable cells. The client answers only with fragmented key digests; the
server reconciles residual noise against them and both end with the
identical key or the attempt is rejected.

Sessions are single-shot: a nonce pair is never reused, so each accepted
run yields a fresh ephemeral key.
"""

from __future__ import annotations

import enum
import secrets
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import biometric, puf, rbc
from .biometric import LandmarkFrame, QuantParams
from .derivation import (Nonce512, TABLE_CELLS, index_stream_from_digest,
                         password_digest)
from .errors import (InsufficientStableBits, ProtocolStateError,
                     ReconciliationFailure)
from .rbc import FragmentDigestSet, KeyBits
from .tables import (MaskVector, TernaryTable, X, apply_mask, mask_of,
                     merge_xor)

SESSION_ID_BYTES = 16
DRAW_BUDGET_FACTOR = 16


@dataclass(frozen=True)
class SessionParams:
    """Quantizer, oversampling and reconciliation settings for one session."""

    accuracy_bits: int
    chopped_msbs: int
    oversample: int = 384
    key_bits: int = 256
    frag_level: int = 4
    max_hamming: int = 3

    def __post_init__(self):
        QuantParams(self.accuracy_bits, self.chopped_msbs)  # range check
        if not self.key_bits <= self.oversample <= TABLE_CELLS:
            raise ValueError("need key_bits <= oversample <= table size")
        if self.key_bits < 1:
            raise ValueError("key_bits must be positive")
        if self.frag_level < 1 or self.key_bits % self.frag_level != 0:
            raise ValueError("frag_level must divide key_bits")
        if self.max_hamming < 0:
            raise ValueError("max_hamming must be non-negative")

    @property
    def quant(self) -> QuantParams:
        return QuantParams(self.accuracy_bits, self.chopped_msbs)


@dataclass(frozen=True)
class ChallengeMessage:
    session_id: bytes
    enroll_nonce: Nonce512
    challenge_nonce: Nonce512
    mask: MaskVector
    params: SessionParams
    version: int = 1

    def __post_init__(self):
        if len(self.session_id) != SESSION_ID_BYTES:
            raise ValueError(f"session_id must be {SESSION_ID_BYTES} bytes")
        if len(self.mask) != TABLE_CELLS:
            raise ValueError(f"mask must cover {TABLE_CELLS} cells")


@dataclass(frozen=True)
class ResponseMessage:
    session_id: bytes
    digests: FragmentDigestSet
    version: int = 1

    def __post_init__(self):
        if len(self.session_id) != SESSION_ID_BYTES:
            raise ValueError(f"session_id must be {SESSION_ID_BYTES} bytes")


class ServerState(enum.Enum):
    CREATED = "created"
    CHALLENGED = "challenged"
    VERIFIED = "verified"
    FAILED = "failed"


class ClientState(enum.Enum):
    CREATED = "created"
    KEYED = "keyed"


@dataclass(frozen=True)
class ServerEnrollment:
    """Reusable enrollment artifacts; sessions are minted from these.

    Holds the password digest, never the password: everything the server
    needs after enrollment is derivable from the digest.
    """

    composite: TernaryTable
    mask: MaskVector
    params: SessionParams
    enroll_nonce: Nonce512
    pwd_digest: bytes


@dataclass
class ServerSession:
    enrollment: ServerEnrollment
    session_id: bytes = field(default_factory=lambda: secrets.token_bytes(SESSION_ID_BYTES))
    state: ServerState = ServerState.CREATED
    challenge_nonce: Nonce512 | None = None
    final_key: KeyBits | None = None
    corrected_bits: int | None = None

    @property
    def composite(self) -> TernaryTable:
        return self.enrollment.composite

    @property
    def mask(self) -> MaskVector:
        return self.enrollment.mask

    @property
    def params(self) -> SessionParams:
        return self.enrollment.params


@dataclass
class ClientSession:
    session_id: bytes
    state: ClientState = ClientState.CREATED
    key: KeyBits | None = None


def build_enrollment(token_reads: Sequence[bytes],
                     bio_frames: Sequence[LandmarkFrame],
                     password: str,
                     enroll_nonce: Nonce512,
                     params: SessionParams) -> ServerEnrollment:
    """Enroll both factors under one nonce and merge them into the composite."""
    token = puf.enroll_token(list(token_reads), enroll_nonce, password)
    bio = biometric.enroll_bio(bio_frames, enroll_nonce, password, params.quant)
    composite = merge_xor(token, bio)
    return ServerEnrollment(
        composite=composite,
        mask=mask_of(composite),
        params=params,
        enroll_nonce=enroll_nonce,
        pwd_digest=password_digest(password),
    )


def server_enroll(token_reads: Sequence[bytes],
                  bio_frames: Sequence[LandmarkFrame],
                  password: str,
                  enroll_nonce: Nonce512,
                  params: SessionParams) -> ServerSession:
    """Convenience: enroll and open a first session over the artifacts."""
    return ServerSession(build_enrollment(token_reads, bio_frames, password,
                                          enroll_nonce, params))


def server_challenge(session: ServerSession,
                     challenge_nonce: Nonce512) -> ChallengeMessage:
    """Emit the challenge message and consume the session's one nonce slot."""
    if session.state is not ServerState.CREATED:
        raise ProtocolStateError(
            f"cannot challenge in state {session.state.value}; "
            "nonces are single-use, open a new session")
    session.challenge_nonce = challenge_nonce
    session.state = ServerState.CHALLENGED
    return ChallengeMessage(
        session_id=session.session_id,
        enroll_nonce=session.enrollment.enroll_nonce,
        challenge_nonce=challenge_nonce,
        mask=session.mask,
        params=session.params,
    )


def collect_stable_bits(table: TernaryTable, stream: Iterator[int],
                        oversample: int, key_bits: int,
                        draw_budget: int | None = None) -> list[tuple[int, int]]:
    """Walk the challenge-index stream collecting bits at stable cells.

    A cell contributes once: X cells and repeated indices are skipped.
    Collection stops at ``oversample`` entries or when the draw budget
    (16x the table size by default) runs out; fewer than ``key_bits``
    collected is an abort.
    """
    if oversample < key_bits:
        raise ValueError("oversample must be at least key_bits")
    cells = table.cells
    if draw_budget is None:
        draw_budget = DRAW_BUDGET_FACTOR * cells.size
    collected: list[tuple[int, int]] = []
    seen: set[int] = set()
    draws = 0
    for idx in stream:
        if draws >= draw_budget:
            break
        draws += 1
        if idx in seen:
            continue
        value = cells[idx]
        if value == X:
            continue
        seen.add(idx)
        collected.append((idx, int(value)))
        if len(collected) == oversample:
            break
    if len(collected) < key_bits:
        raise InsufficientStableBits(len(collected), key_bits, draws)
    return collected


def derive_key(collected: Sequence[tuple[int, int]], key_bits: int) -> KeyBits:
    """Concatenate the first ``key_bits`` collected bits, in stream order."""
    if len(collected) < key_bits:
        raise ValueError(
            f"only {len(collected)} bits collected, need {key_bits}")
    return KeyBits(np.array([b for _, b in collected[:key_bits]], dtype=np.uint8))


def _session_key(table: TernaryTable, challenge_nonce: Nonce512,
                 pwd_digest: bytes, params: SessionParams) -> KeyBits:
    stream = index_stream_from_digest(challenge_nonce, pwd_digest,
                                      table.cells.size)
    collected = collect_stable_bits(table, stream, params.oversample,
                                    params.key_bits)
    return derive_key(collected, params.key_bits)


def client_keygen(msg: ChallengeMessage, token_read: bytes,
                  bio_frame: LandmarkFrame, password: str,
                  tamper: Callable[[KeyBits], KeyBits] | None = None
                  ) -> tuple[ClientSession, ResponseMessage]:
    """Rebuild one-shot tables, derive the client key, answer with digests.

    ``tamper`` is a test hook applied to the derived key before hashing
    (noise injection); real clients leave it unset.
    """
    params = msg.params
    token = puf.one_shot_token_table(token_read, msg.enroll_nonce, password)
    bio = biometric.one_shot_bio_table(bio_frame, msg.enroll_nonce, password,
                                       params.quant)
    table = apply_mask(token.xor(bio), msg.mask)
    key = _session_key(table, msg.challenge_nonce,
                       password_digest(password), params)
    if tamper is not None:
        key = tamper(key)
    session = ClientSession(session_id=msg.session_id,
                            state=ClientState.KEYED, key=key)
    response = ResponseMessage(
        session_id=msg.session_id,
        digests=rbc.digest_fragments(key, params.frag_level),
    )
    return session, response


def server_verify(session: ServerSession, response: ResponseMessage) -> KeyBits:
    """Derive the server key, reconcile it against the client digests.

    Returns the final agreed key and marks the session verified; on any
    failure the session is failed and the error propagates.
    """
    if session.state is not ServerState.CHALLENGED:
        raise ProtocolStateError(
            f"cannot verify in state {session.state.value}")
    if response.session_id != session.session_id:
        session.state = ServerState.FAILED
        raise ProtocolStateError("response belongs to a different session")
    params = session.params
    if response.digests.frag_level != params.frag_level:
        session.state = ServerState.FAILED
        raise ProtocolStateError("response fragmentation level mismatch")
    try:
        own = _session_key(session.composite, session.challenge_nonce,
                           session.enrollment.pwd_digest, params)
        final = rbc.reconcile(own, response.digests, params.max_hamming)
    except Exception:
        session.state = ServerState.FAILED
        raise
    session.final_key = final
    session.corrected_bits = final.hamming(own)
    session.state = ServerState.VERIFIED
    return final


@dataclass(frozen=True)
class ExchangeResult:
    """Outcome of one full challenge/response exchange."""

    accepted: bool
    reason: str                      # "ok", "reconciliation", "insufficient-bits"
    corrected_bits: int | None = None
    final_key: KeyBits | None = None
    client_key: KeyBits | None = None
    server_key: KeyBits | None = None


def run_loopback(enrollment: ServerEnrollment, token_read: bytes,
                 bio_frame: LandmarkFrame, password: str,
                 challenge_nonce: Nonce512,
                 session_id: bytes | None = None,
                 tamper: Callable[[KeyBits], KeyBits] | None = None
                 ) -> ExchangeResult:
    """Run server and client in-process over a fresh session."""
    session = ServerSession(enrollment)
    if session_id is not None:
        session.session_id = session_id
    msg = server_challenge(session, challenge_nonce)
    try:
        client, response = client_keygen(msg, token_read, bio_frame, password,
                                         tamper=tamper)
    except InsufficientStableBits:
        return ExchangeResult(accepted=False, reason="insufficient-bits")
    try:
        final = server_verify(session, response)
    except InsufficientStableBits:
        return ExchangeResult(accepted=False, reason="insufficient-bits",
                              client_key=client.key)
    except ReconciliationFailure:
        return ExchangeResult(accepted=False, reason="reconciliation",
                              client_key=client.key)
    return ExchangeResult(
        accepted=True, reason="ok",
        corrected_bits=session.corrected_bits,
        final_key=final,
        client_key=client.key,
        server_key=final,
    )
