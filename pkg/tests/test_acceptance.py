"""Acceptance gate: the quantitative exit criteria for the whole package.

Each test is one criterion at its stated tolerance and prints one
PASS line when it holds (run with ``pytest -v -s tests/test_acceptance.py``
to see the lines; the test verdicts themselves carry the same
information). Statistical criteria run at pinned seeds so results are
reproducible run to run.
"""

import itertools
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import PASSWORD, tag, tag_nonce
from zkmfa import biometric, puf, wire
from zkmfa.biometric import QuantParams, quantize_distance, _quantize_block
from zkmfa.derivation import Nonce512
from zkmfa.errors import ReconciliationFailure
from zkmfa.protocol import (ChallengeMessage, ResponseMessage, SessionParams,
                            build_enrollment, run_loopback)
from zkmfa.rbc import (KeyBits, digest_fragments, fragment, reconcile,
                       search_space)
from zkmfa.stats import (DeviceConfig, GridPoint, SweepConfig,
                         binomial_bias_test, enrollment_error_curve,
                         exact_binomial_p_value, far_frr_sweep,
                         harvest_key_bits, match_fraction_samples,
                         standardized_gap, write_sweep_csv)
from zkmfa.tables import BinaryTable, MaskVector, TernaryTable, merge_xor

RNG = np.random.default_rng(20260809)


def report(num: int, name: str, detail: str = ""):
    line = f"ACCEPTANCE {num:02d} {name}: PASS"
    if detail:
        line += f" ({detail})"
    print("\n" + line, flush=True)


def test_criterion_01_merge_non_injectivity():
    start = time.perf_counter()
    # Exhaustive per-cell preimage count: 4 per binary output value.
    for target in (0, 1):
        count = sum(
            1 for a, b, c in itertools.product((0, 1), repeat=3)
            if merge_xor(TernaryTable(1, 1, np.array([a], dtype=np.uint8)),
                         TernaryTable(1, 1, np.array([b], dtype=np.uint8)),
                         BinaryTable(1, 1, np.array([c], dtype=np.uint8))
                         ).cells[0] == target
        )
        assert count == 4
    # Explicit (0,0) -> (1,1) collision on 1,000 random tables.
    for trial in range(1000):
        a = RNG.integers(0, 3, 64).astype(np.uint8)
        b = RNG.integers(0, 3, 64).astype(np.uint8)
        c = RNG.integers(0, 2, 64).astype(np.uint8)
        a[0] = b[0] = 0
        out = merge_xor(TernaryTable(8, 8, a), TernaryTable(8, 8, b),
                        BinaryTable(8, 8, c))
        a2, b2 = a.copy(), b.copy()
        a2[0] = b2[0] = 1
        collided = merge_xor(TernaryTable(8, 8, a2), TernaryTable(8, 8, b2),
                             BinaryTable(8, 8, c))
        assert collided == out
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(1, "merge non-injectivity", f"{elapsed:.2f}s")


def test_criterion_02_error_free_agreement():
    start = time.perf_counter()
    device = puf.synth_device(tag("acc2-device"), flaky_fraction=0.0)
    read = puf.power_cycle_read(device, tag("acc2-read"))
    person = biometric.synth_person(tag("acc2-person"))
    frame = biometric.synth_frame(person, "moment", tag("acc2-frame"))
    params = SessionParams(accuracy_bits=7, chopped_msbs=1)
    enrollment = build_enrollment([read], [frame], PASSWORD,
                                  tag_nonce("acc2-enroll"), params)
    for t in range(1000):
        res = run_loopback(enrollment, read, frame, PASSWORD,
                           tag_nonce(f"acc2-session-{t}"))
        assert res.accepted
        assert res.corrected_bits == 0
        assert res.client_key == res.final_key
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(2, "error-free agreement over 1000 noiseless runs",
           f"{elapsed:.1f}s")


def _inject_per_fragment(key: KeyBits, frag_level: int, errors: int,
                         rng) -> KeyBits:
    size = len(key) // frag_level
    bits = key.bits.copy()
    for f in range(frag_level):
        for pos in rng.choice(size, size=errors, replace=False):
            bits[f * size + int(pos)] ^= 1
    return KeyBits(bits)


def test_criterion_03_rbc_capacity():
    start = time.perf_counter()
    rng = np.random.default_rng(333)
    # Success trials: every fragment carries e <= 3 errors; allocation is
    # weighted so expensive search spaces get fewer trials while every
    # (frag_level, e) combination is covered and the total reaches 1,000.
    allocation = {
        (4, 0): 110, (4, 1): 110, (4, 2): 110, (4, 3): 100,
        (2, 0): 110, (2, 1): 110, (2, 2): 100, (2, 3): 40,
        (1, 0): 110, (1, 1): 60, (1, 2): 30, (1, 3): 10,
    }
    assert sum(allocation.values()) == 1000
    for (frag_level, errors), trials in allocation.items():
        for _ in range(trials):
            client = KeyBits(rng.integers(0, 2, 256, dtype=np.uint8))
            server = _inject_per_fragment(client, frag_level, errors, rng)
            out = reconcile(server, digest_fragments(client, frag_level),
                            max_hamming=3)
            assert out == client
    # Failure trials: one fragment with 4 errors can never resolve.
    for frag_level, trials in ((4, 120), (2, 15), (1, 2)):
        size = 256 // frag_level
        for _ in range(trials):
            client = KeyBits(rng.integers(0, 2, 256, dtype=np.uint8))
            bits = client.bits.copy()
            for pos in rng.choice(size, size=4, replace=False):
                bits[int(pos)] ^= 1
            server = KeyBits(bits)
            with pytest.raises(ReconciliationFailure) as info:
                reconcile(server, digest_fragments(client, frag_level),
                          max_hamming=3)
            status = info.value.statuses[0]
            assert not status.resolved
            assert status.candidates_checked == search_space(size, 3)
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0
    report(3, "RBC capacity and bounded failure", f"{elapsed:.0f}s")


def test_criterion_04_enrollment_error_curve():
    start = time.perf_counter()
    points = enrollment_error_curve(DeviceConfig(seed=11),
                                    [1, 5, 10, 20, 40], trials=1000)
    means = dict(points)
    ordered = [means[c] for c in (1, 5, 10, 20, 40)]
    for a, b in zip(ordered, ordered[1:]):
        assert b <= a + 0.05
    assert means[20] <= 12.0
    assert means[1] > means[40]
    elapsed = time.perf_counter() - start
    assert elapsed < 300.0
    report(4, "enrollment error curve",
           f"means={['%.3f' % m for m in ordered]}, {elapsed:.0f}s")


def test_criterion_05_chopped_msb_separation():
    start = time.perf_counter()
    cfg = SweepConfig(seed=1)
    gaps = {}
    for g in (6, 7, 8):
        for m in (0, 1, 2):
            genuine, impostor = match_fraction_samples(cfg, g, m)
            assert genuine.mean() > impostor.mean(), (g, m)
            gaps[(g, m)] = standardized_gap(genuine, impostor)
    assert gaps[(7, 2)] >= gaps[(7, 0)]
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    report(5, "chopped-MSB separation",
           f"gap(7,2)={gaps[(7, 2)]:.2f} >= gap(7,0)={gaps[(7, 0)]:.2f}, "
           f"{elapsed:.0f}s")


def test_criterion_06_sweep_contains_zero_error_configuration(tmp_path):
    start = time.perf_counter()
    cfg = SweepConfig(seed=2)  # pinned evaluation seed
    rows = far_frr_sweep(cfg)
    write_sweep_csv(tmp_path / "sweep.csv", rows)
    zero = [r for r in rows
            if r.far_percent == 0.0 and r.frr_percent == 0.0
            and r.impostor_tests >= 900 and r.genuine_tests >= 300]
    assert zero, [(r.accuracy_bits, r.chopped_msbs, r.frag_level,
                   r.far_percent, r.frr_percent) for r in rows]
    best = zero[0]
    elapsed = time.perf_counter() - start
    assert elapsed < 900.0
    report(6, "sweep reaches 0.0% FAR / 0.0% FRR",
           f"g={best.accuracy_bits} m={best.chopped_msbs} "
           f"frag={best.frag_level}, {elapsed:.0f}s")


def test_criterion_07_bias_test():
    start = time.perf_counter()
    # (a) implementation against an exact rational tail-sum oracle
    assert exact_binomial_p_value(10, 0) == pytest.approx(0.0019531, abs=5e-8)

    def oracle(n, k):
        pmf = [Fraction(math.comb(n, j), 2**n) for j in range(n + 1)]
        return float(sum(p for p in pmf if p <= pmf[k]))

    rng = np.random.default_rng(77)
    for _ in range(30):
        n = int(rng.integers(1, 120))
        k = int(rng.integers(0, n + 1))
        assert exact_binomial_p_value(n, k) == pytest.approx(oracle(n, k),
                                                             rel=1e-9)
    for _ in range(100):
        n = int(rng.integers(1, 20_000))
        k = int(rng.integers(0, n + 1))
        assert exact_binomial_p_value(n, k) == exact_binomial_p_value(n, n - k)
    # (b) a 115,200-bit pool whose ones-count matches an observed
    # proportion of 0.4998 must test as unbiased
    ones = round(0.4998 * 115_200)
    p = exact_binomial_p_value(115_200, ones)
    assert 0.88 <= p <= 0.93
    # (c) system-level pool from genuine protocol runs
    cfg = SweepConfig(persons=6, enroll_moment_frames=4,
                      enroll_variation_frames=8, token_reads=5, seed=1)
    bits = harvest_key_bits(cfg, 100_000)
    result = binomial_bias_test(bits)
    assert result.n >= 100_000
    assert result.p_value > 0.01
    assert result.ci_low <= 0.5 <= result.ci_high
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report(7, "key bias",
           f"reference-shape p={p:.4f}, pool p={result.p_value:.3f}, "
           f"{elapsed:.0f}s")


def _oracle_quantize(distance: float, g: int, m: int) -> str:
    """Naive reference: floor, bit-string slice, table-free Gray code."""
    level = int(distance / (math.sqrt(2.0) * 256.0) * (2 ** g))
    if level > 2 ** g - 1:
        level = 2 ** g - 1
    kept_bits = format(level, f"0{g}b")[m:]
    v = int(kept_bits, 2)
    gray = v ^ (v >> 1)
    return format(gray, f"0{g - m}b")


def test_criterion_08_quantizer_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(88)
    total = 0
    for g in range(4, 9):
        for m in range(0, min(5, g)):
            n = 1_000_000 // (5 * 4)
            distances = rng.uniform(0.0, 450.0, n)
            params = QuantParams(g, m)
            block = _quantize_block(distances, params)
            strings = np.char.mod("%d", block).view("U" + str(g - m)).ravel()
            for i in range(n):
                assert strings[i] == _oracle_quantize(float(distances[i]), g, m)
            total += n
    # spot-check the scalar entry point against the block path
    for _ in range(2000):
        d = float(rng.uniform(0, 450))
        g = int(rng.integers(4, 9))
        m = int(rng.integers(0, min(5, g)))
        assert "".join(map(str, quantize_distance(d, QuantParams(g, m)))) \
            == _oracle_quantize(d, g, m)
        total += 1
    elapsed = time.perf_counter() - start
    assert total >= 1_000_000
    assert elapsed < 10.0
    report(8, "quantizer oracle agreement", f"{total} triples, {elapsed:.1f}s")


def test_criterion_09_wire_round_trip():
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    for _ in range(500):
        msg = ChallengeMessage(
            session_id=rng.bytes(16),
            enroll_nonce=Nonce512.from_bytes(rng.bytes(64)),
            challenge_nonce=Nonce512.from_bytes(rng.bytes(64)),
            mask=MaskVector(rng.integers(0, 2, 65536, dtype=np.uint8)),
            params=SessionParams(
                accuracy_bits=int(rng.integers(5, 9)),
                chopped_msbs=int(rng.integers(0, 3)),
                oversample=int(rng.integers(256, 2048)),
                key_bits=256,
                frag_level=int(rng.choice([1, 2, 4, 8])),
                max_hamming=int(rng.integers(0, 4))),
        )
        assert wire.decode(wire.encode_challenge(msg)) == msg
    for _ in range(500):
        frag = int(rng.choice([1, 2, 4, 8]))
        from zkmfa.rbc import FragmentDigestSet
        msg = ResponseMessage(
            session_id=rng.bytes(16),
            digests=FragmentDigestSet(frag,
                                      tuple(rng.bytes(32) for _ in range(frag))))
        assert wire.decode(wire.encode_response(msg)) == msg
    golden = Path(__file__).parent.parent / "corpus" / "golden" / "challenge.frame"
    frame = golden.read_bytes()
    decoded = wire.decode(frame)
    assert wire.encode_challenge(decoded) == frame
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(9, "wire round-trip + golden frame", f"{elapsed:.1f}s")


def test_criterion_10_sweep_determinism(tmp_path):
    start = time.perf_counter()
    base = dict(persons=4, enroll_moment_frames=3, enroll_variation_frames=6,
                probe_frames=3, impostor_probes=4, token_reads=5, seed=17,
                grid=(GridPoint(7, 1, 4), GridPoint(7, 2, 2)))
    outputs = []
    for name, workers in (("run1", 1), ("run2", 1), ("parallel", 2)):
        rows = far_frr_sweep(SweepConfig(workers=workers, **base))
        path = tmp_path / f"{name}.csv"
        write_sweep_csv(path, rows)
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
    elapsed = time.perf_counter() - start
    report(10, "sweep determinism (reruns and parallel)", f"{elapsed:.0f}s")
