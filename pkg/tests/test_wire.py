import hashlib
import socket
import threading
from pathlib import Path

import numpy as np
import pytest

from conftest import PASSWORD, tag, tag_nonce
from zkmfa import transport, wire
from zkmfa.derivation import Nonce512
from zkmfa.errors import FormatError
from zkmfa.protocol import (ChallengeMessage, ResponseMessage, SessionParams)
from zkmfa.rbc import FragmentDigestSet
from zkmfa.tables import MaskVector

GOLDEN_FRAME = Path(__file__).parent.parent / "corpus" / "golden" / "challenge.frame"
GOLDEN_SHA3 = "ef7b351c3c3806e2e02c0838b1642caec8ee486babe6d76cb5b64e46168436ec"

RNG = np.random.default_rng(31337)


def random_challenge() -> ChallengeMessage:
    frag = int(RNG.choice([1, 2, 4, 8]))
    return ChallengeMessage(
        session_id=RNG.bytes(16),
        enroll_nonce=Nonce512.from_bytes(RNG.bytes(64)),
        challenge_nonce=Nonce512.from_bytes(RNG.bytes(64)),
        mask=MaskVector(RNG.integers(0, 2, 65536, dtype=np.uint8)),
        params=SessionParams(
            accuracy_bits=int(RNG.integers(5, 9)),
            chopped_msbs=int(RNG.integers(0, 3)),
            oversample=int(RNG.integers(256, 1024)),
            key_bits=256,
            frag_level=frag,
            max_hamming=int(RNG.integers(0, 4)),
        ),
    )


def random_response() -> ResponseMessage:
    frag = int(RNG.choice([1, 2, 4, 8]))
    return ResponseMessage(
        session_id=RNG.bytes(16),
        digests=FragmentDigestSet(frag, tuple(RNG.bytes(32) for _ in range(frag))),
    )


def test_challenge_round_trip_random():
    for _ in range(50):
        msg = random_challenge()
        back = wire.decode(wire.encode_challenge(msg))
        assert back == msg


def test_response_round_trip_random():
    for _ in range(50):
        msg = random_response()
        assert wire.decode(wire.encode_response(msg)) == msg


def test_verdict_round_trip():
    v = wire.Verdict(bytes(16), accepted=True, fingerprint=bytes(range(32)))
    assert wire.decode(wire.encode_verdict(v)) == v
    v2 = wire.Verdict(bytes(16), accepted=False)
    assert wire.decode(wire.encode_verdict(v2)) == v2


def test_golden_frame_matches_checked_in_bytes():
    frame = GOLDEN_FRAME.read_bytes()
    assert hashlib.sha3_256(frame).hexdigest() == GOLDEN_SHA3
    mask_bits = np.zeros(65536, dtype=np.uint8)
    mask_bits[::5] = 1
    msg = ChallengeMessage(
        session_id=bytes(range(16)),
        enroll_nonce=Nonce512.from_bytes(bytes(range(64))),
        challenge_nonce=Nonce512.from_bytes(bytes(range(64, 128))),
        mask=MaskVector(mask_bits),
        params=SessionParams(accuracy_bits=7, chopped_msbs=1, oversample=384,
                             key_bits=256, frag_level=4, max_hamming=3),
    )
    assert wire.encode_challenge(msg) == frame
    assert wire.decode(frame) == msg


def test_header_layout():
    frame = wire.encode_response(random_response())
    assert frame[:4] == b"ZKMF"
    assert frame[4] == 1           # version
    assert frame[5] == 2           # response type
    assert int.from_bytes(frame[6:10], "big") == len(frame) - 10


def test_decode_rejects_corruption():
    frame = bytearray(wire.encode_challenge(random_challenge()))
    with pytest.raises(FormatError, match="magic"):
        wire.decode(b"XKMF" + bytes(frame[4:]))
    bad_version = bytearray(frame)
    bad_version[4] = 9
    with pytest.raises(FormatError, match="version"):
        wire.decode(bytes(bad_version))
    with pytest.raises(FormatError, match="length"):
        wire.decode(bytes(frame[:-1]))
    bad_type = bytearray(frame)
    bad_type[5] = 7
    with pytest.raises(FormatError, match="type"):
        wire.decode(bytes(bad_type))


def test_decode_rejects_bad_verdict_status():
    frame = bytearray(wire.encode_verdict(wire.Verdict(bytes(16), True,
                                                       bytes(32))))
    frame[10 + 16] = 5
    with pytest.raises(FormatError, match="status"):
        wire.decode(bytes(frame))


def test_challenge_body_length_enforced():
    frame = wire.encode_challenge(random_challenge())
    truncated = frame[:10] + frame[10:-1]
    # fix header length so only the body check can complain
    fixed = truncated[:6] + (len(truncated) - 10).to_bytes(4, "big") + truncated[10:]
    with pytest.raises(FormatError):
        wire.decode(fixed)


# --- transport ---------------------------------------------------------------

def exchange_over_tcp(enrollment, read, frame, password):
    port_holder = {}
    ready = threading.Event()

    def note_port(port):
        port_holder["port"] = port
        ready.set()

    outcome_holder = {}

    def server():
        outcome_holder["outcome"] = transport.serve_once(
            enrollment, tag_nonce("tcp"), "127.0.0.1", 0, timeout=20,
            ready=note_port)

    thread = threading.Thread(target=server)
    thread.start()
    assert ready.wait(10)
    session, verdict = transport.connect_keygen(
        "127.0.0.1", port_holder["port"], read, frame, password, timeout=20)
    thread.join(timeout=30)
    return outcome_holder["outcome"], session, verdict


def test_tcp_exchange_accepts_genuine(enrollment, device_reads, enroll_frames):
    outcome, session, verdict = exchange_over_tcp(
        enrollment, device_reads[0], enroll_frames[0], PASSWORD)
    assert outcome.accepted and verdict.accepted
    assert verdict.fingerprint.hex() == outcome.final_key.fingerprint()
    assert session.key.fingerprint() == outcome.final_key.fingerprint()


def test_tcp_exchange_rejects_wrong_password(enrollment, device_reads,
                                             enroll_frames):
    outcome, _, verdict = exchange_over_tcp(
        enrollment, device_reads[0], enroll_frames[0], "bad-password")
    assert not outcome.accepted and not verdict.accepted
    assert verdict.fingerprint == bytes(32)


def test_recv_frame_rejects_garbage(enrollment):
    with socket.create_server(("127.0.0.1", 0)) as listener:
        port = listener.getsockname()[1]

        def client():
            with socket.create_connection(("127.0.0.1", port), timeout=10) as s:
                s.sendall(b"NOPE" + bytes(20))

        thread = threading.Thread(target=client)
        thread.start()
        conn, _ = listener.accept()
        with conn:
            conn.settimeout(10)
            with pytest.raises(ConnectionError):
                transport.recv_frame(conn)
        thread.join()
