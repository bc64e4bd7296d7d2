import numpy as np
import pytest

from zkmfa.errors import ReconciliationFailure
from zkmfa.rbc import (KeyBits, digest_fragments, fragment, reconcile,
                       search_space)

RNG = np.random.default_rng(424242)


def random_key(bits=256):
    return KeyBits(RNG.integers(0, 2, bits, dtype=np.uint8))


def flipped(key: KeyBits, positions) -> KeyBits:
    bits = key.bits.copy()
    for p in positions:
        bits[p] ^= 1
    return KeyBits(bits)


def test_keybits_validation():
    with pytest.raises(ValueError):
        KeyBits(np.array([0, 2], dtype=np.uint8))
    with pytest.raises(ValueError):
        KeyBits(np.array([], dtype=np.uint8))


def test_keybits_pack_round_trip():
    key = random_key()
    assert KeyBits.from_packed(key.packed(), 256) == key


def test_fragment_shapes():
    key = random_key()
    frags = fragment(key, 4)
    assert len(frags) == 4
    assert all(f.size == 64 for f in frags)
    assert np.array_equal(np.concatenate(frags), key.bits)
    whole = fragment(key, 1)
    assert len(whole) == 1 and whole[0].size == 256


def test_fragment_rejects_non_divisor():
    with pytest.raises(ValueError):
        fragment(random_key(), 3)
    with pytest.raises(ValueError):
        fragment(random_key(), 0)


def test_digests_deterministic_and_sensitive():
    key = random_key()
    assert digest_fragments(key, 4) == digest_fragments(key, 4)
    tampered = flipped(key, [70])  # inside fragment 1
    a = digest_fragments(key, 4)
    b = digest_fragments(tampered, 4)
    assert a.digests[1] != b.digests[1]
    assert all(a.digests[i] == b.digests[i] for i in (0, 2, 3))


def test_identical_fragments_get_distinct_digests():
    # The appended index byte domain-separates equal fragment payloads.
    key = KeyBits(np.tile(RNG.integers(0, 2, 64, dtype=np.uint8), 4))
    digests = digest_fragments(key, 4).digests
    assert len(set(digests)) == 4


def test_reconcile_exact_match_is_direct():
    key = random_key()
    out = reconcile(key, digest_fragments(key, 4), max_hamming=3)
    assert out == key


def test_reconcile_single_flip_recovery():
    client = random_key()
    server = flipped(client, [37])
    out = reconcile(server, digest_fragments(client, 4), max_hamming=1)
    assert out == client


def test_reconcile_recovers_errors_up_to_budget():
    client = random_key()
    # up to 3 flips in every 64-bit fragment
    server = flipped(client, [1, 2, 3, 64, 65, 130, 250])
    out = reconcile(server, digest_fragments(client, 4), max_hamming=3)
    assert out == client


def test_reconcile_statuses_report_distance():
    client = random_key()
    server = flipped(client, [0, 100, 101])
    digests = digest_fragments(client, 4)
    out = reconcile(server, digests, max_hamming=3)
    assert out == client
    # soundness holds by contract
    assert digest_fragments(out, 4) == digests


def test_reconcile_beyond_budget_fails():
    client = random_key()
    server = flipped(client, [10, 20, 30, 40])  # 4 errors in fragment 0
    with pytest.raises(ReconciliationFailure) as info:
        reconcile(server, digest_fragments(client, 4), max_hamming=3)
    statuses = info.value.statuses
    assert statuses[0].resolved is False
    assert statuses[0].candidates_checked == search_space(64, 3)
    assert all(not s.attempted for s in statuses[1:])


def test_search_space_constant():
    assert search_space(64, 3) == 43745


def test_reconcile_deterministic_choice():
    client = random_key()
    server = flipped(client, [5, 6])
    digests = digest_fragments(client, 2)
    a = reconcile(server, digests, max_hamming=2)
    b = reconcile(server, digests, max_hamming=2)
    assert a == b == client


def test_reconcile_capacity_scales_with_fragmentation():
    # total correctable errors = frag_level * max_hamming when spread out
    client = random_key()
    positions = [i * 32 for i in range(8)]  # one per 32-bit fragment
    server = flipped(client, positions)
    out = reconcile(server, digest_fragments(client, 8), max_hamming=1)
    assert out == client
    with pytest.raises(ReconciliationFailure):
        reconcile(server, digest_fragments(client, 4), max_hamming=1)


def test_reconcile_validates_max_hamming():
    key = random_key()
    with pytest.raises(ValueError):
        reconcile(key, digest_fragments(key, 4), max_hamming=-1)


def test_reconcile_mixed_distances_random_trials():
    for trial in range(20):
        client = random_key()
        errors = RNG.choice(256, size=RNG.integers(0, 7), replace=False)
        by_frag = {}
        for e in errors:
            by_frag.setdefault(e // 64, []).append(e)
        if any(len(v) > 3 for v in by_frag.values()):
            continue
        server = flipped(client, errors)
        assert reconcile(server, digest_fragments(client, 4), 3) == client
