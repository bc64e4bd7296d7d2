import shutil
from pathlib import Path

import pytest

from zkmfa.corpus import verify_golden

CORPUS = Path(__file__).parent.parent / "corpus"


@pytest.fixture()
def corpus_copy(tmp_path):
    dest = tmp_path / "corpus"
    shutil.copytree(CORPUS, dest)
    return dest


def test_pristine_corpus_verifies():
    report = verify_golden(CORPUS)
    assert len(report.entries) == 7
    assert report.ok, [e for e in report.entries if not e.ok]


def test_corrupted_table_is_reported_exactly_once(corpus_copy):
    path = corpus_copy / "golden" / "token.tt"
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    report = verify_golden(corpus_copy)
    bad = [e for e in report.entries if not e.ok]
    assert len(bad) == 1
    assert bad[0].path == "golden/token.tt"
    assert "corrupted" in bad[0].detail


def test_different_seed_is_a_negative_control(corpus_copy):
    report = verify_golden(corpus_copy, seed_override=999)
    drifted = [e for e in report.entries if not e.ok]
    # Every synth-data artifact regenerates differently under another seed.
    assert {e.path for e in drifted} >= {
        "persons/person-000.json", "devices/token-000/model.json"}
    assert all("drift" in e.detail for e in drifted)


def test_missing_artifact_reported(corpus_copy):
    (corpus_copy / "golden" / "bio.tt").unlink()
    report = verify_golden(corpus_copy)
    bad = {e.path: e for e in report.entries if not e.ok}
    assert set(bad) == {"golden/bio.tt"}
    assert "missing" in bad["golden/bio.tt"].detail


def test_verify_golden_cli_exit_codes(corpus_copy, capsys):
    from zkmfa.cli import main
    assert main(["verify-golden", "--corpus", str(corpus_copy)]) == 0
    (corpus_copy / "golden" / "token.tt").write_bytes(b"junk")
    assert main(["verify-golden", "--corpus", str(corpus_copy)]) == 1
    assert "FAIL" in capsys.readouterr().out
