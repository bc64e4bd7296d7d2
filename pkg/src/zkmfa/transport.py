"""Framed TCP transport for running the exchange across two processes.

The server is enrolled before listening; each accepted connection gets
one session: challenge out, response in, verdict out. Frames are whole
messages in the documented format, so no partial-message state survives
between sessions.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass
from typing import Callable

from . import wire
from .biometric import LandmarkFrame
from .derivation import Nonce512
from .errors import (FormatError, InsufficientStableBits,
                     ReconciliationFailure)
from .protocol import (ClientSession, ServerEnrollment, ServerSession,
                       client_keygen, server_challenge, server_verify)
from .rbc import KeyBits

DEFAULT_TIMEOUT = 30.0
_HEADER_LEN = 10


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("peer closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(frame)


def recv_frame(sock: socket.socket):
    """Read one frame and decode it.

    A malformed frame from the peer surfaces as a connection error: at
    this layer it means the transport is not carrying the protocol.
    """
    header = _recv_exact(sock, _HEADER_LEN)
    try:
        _, _, _, body_len = wire._HEADER.unpack(header)
        body = _recv_exact(sock, body_len) if body_len else b""
        return wire.decode(header + body)
    except FormatError as exc:
        raise ConnectionError(f"malformed frame from peer: {exc}") from exc


@dataclass(frozen=True)
class ServeOutcome:
    accepted: bool
    reason: str
    corrected_bits: int | None
    final_key: KeyBits | None


def serve_once(enrollment: ServerEnrollment, challenge_nonce: Nonce512,
               host: str, port: int,
               timeout: float = DEFAULT_TIMEOUT,
               ready: Callable[[int], None] | None = None) -> ServeOutcome:
    """Listen, run exactly one session, report the outcome.

    ``ready`` is called with the bound port once listening (lets a test
    or operator use port 0).
    """
    with socket.create_server((host, port)) as listener:
        listener.settimeout(timeout)
        if ready is not None:
            ready(listener.getsockname()[1])
        conn, _ = listener.accept()
        with conn:
            conn.settimeout(timeout)
            session = ServerSession(enrollment)
            send_frame(conn, wire.encode_challenge(
                server_challenge(session, challenge_nonce)))
            response = recv_frame(conn)
            if not hasattr(response, "digests"):
                raise ConnectionError("peer did not send a response frame")
            try:
                final = server_verify(session, response)
            except (ReconciliationFailure, InsufficientStableBits) as exc:
                reason = ("reconciliation"
                          if isinstance(exc, ReconciliationFailure)
                          else "insufficient-bits")
                send_frame(conn, wire.encode_verdict(
                    wire.Verdict(session.session_id, accepted=False)))
                return ServeOutcome(False, reason, None, None)
            send_frame(conn, wire.encode_verdict(wire.Verdict(
                session.session_id, accepted=True,
                fingerprint=bytes.fromhex(final.fingerprint()))))
            return ServeOutcome(True, "ok", session.corrected_bits, final)


def connect_keygen(host: str, port: int, token_read: bytes,
                   bio_frame: LandmarkFrame, password: str,
                   timeout: float = DEFAULT_TIMEOUT,
                   tamper=None) -> tuple[ClientSession, wire.Verdict]:
    """Client side over TCP: receive challenge, respond, await verdict."""
    with socket.create_connection((host, port), timeout=timeout) as sock:
        challenge = recv_frame(sock)
        if not hasattr(challenge, "enroll_nonce"):
            raise ConnectionError("peer did not send a challenge frame")
        session, response = client_keygen(challenge, token_read, bio_frame,
                                          password, tamper=tamper)
        send_frame(sock, wire.encode_response(response))
        verdict = recv_frame(sock)
        if not isinstance(verdict, wire.Verdict):
            raise ConnectionError("peer did not send a verdict frame")
        return session, verdict
