"""Synthetic data corpus generation and golden-artifact verification.

``synthesize_corpus`` stands in for the photo dataset and the physical
tokens: it writes person landmark files and device model descriptors
(plus simulated dump files) that the rest of the toolchain ingests.

The checked-in miniature corpus carries a golden manifest: every golden
artifact records its SHA3-256 digest and the exact command line that
produced it. ``verify_golden`` replays each command into a scratch
directory and reports stored-copy corruption and regeneration drift
separately.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import biometric, puf

DEFAULT_READS = 40
DEFAULT_MOMENT_FRAMES = 10
DEFAULT_VARIATION_FRAMES = 15


def _tag(seed: int, *labels) -> bytes:
    text = ":".join(str(x) for x in labels)
    return hashlib.shake_256(f"zkmfa:corpus:{seed}:{text}".encode()).digest(32)


def synthesize_corpus(out_dir, persons: int, devices: int, seed: int,
                      reads: int = DEFAULT_READS,
                      moment_frames: int = DEFAULT_MOMENT_FRAMES,
                      variation_frames: int = DEFAULT_VARIATION_FRAMES,
                      flaky_fraction: float = puf.DEFAULT_FLAKY_FRACTION,
                      flaky_flip_prob: float = puf.DEFAULT_FLAKY_FLIP_PROB
                      ) -> tuple[list[Path], list[Path]]:
    """Write persons/<id>.json and devices/<id>/{model.json,read_k.bin}."""
    out = Path(out_dir)
    persons_dir = out / "persons"
    devices_dir = out / "devices"
    persons_dir.mkdir(parents=True, exist_ok=True)
    devices_dir.mkdir(parents=True, exist_ok=True)
    person_files = []
    for p in range(persons):
        person_id = f"person-{p:03d}"
        model = biometric.synth_person(_tag(seed, "person", p), person_id=person_id)
        frames = [biometric.synth_frame(model, "moment",
                                        _tag(seed, "frame", p, "m", i),
                                        frame_id=f"moment-{i:02d}")
                  for i in range(moment_frames)]
        frames += [biometric.synth_frame(model, "variation",
                                         _tag(seed, "frame", p, "v", i),
                                         frame_id=f"variation-{i:02d}")
                   for i in range(variation_frames)]
        path = persons_dir / f"{person_id}.json"
        biometric.save_frames(path, person_id, frames)
        person_files.append(path)
    device_files = []
    for d in range(devices):
        device_id = f"token-{d:03d}"
        device = puf.synth_device(_tag(seed, "device", d),
                                  flaky_fraction=flaky_fraction,
                                  flaky_flip_prob=flaky_flip_prob,
                                  device_id=device_id)
        ddir = devices_dir / device_id
        ddir.mkdir(parents=True, exist_ok=True)
        puf.save_model(ddir / "model.json", device)
        for k in range(reads):
            read = puf.power_cycle_read(device, _tag(seed, "read", d, k))
            (ddir / f"read_{k}.bin").write_bytes(read)
        device_files.append(ddir / "model.json")
    return person_files, device_files


@dataclass(frozen=True)
class GoldenArtifact:
    """A pinned output: its path, digest and producing command line."""

    path: str               # relative to the corpus root
    sha3_256: str
    command: tuple[str, ...]  # argv with {CORPUS} and {OUT} placeholders


@dataclass
class GoldenEntry:
    path: str
    ok: bool
    detail: str


@dataclass
class GoldenReport:
    entries: list[GoldenEntry]

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)


def file_digest(path) -> str:
    return hashlib.sha3_256(Path(path).read_bytes()).hexdigest()


def _diff_summary(expected: bytes, actual: bytes) -> str:
    if len(expected) != len(actual):
        return f"size {len(actual)} != {len(expected)}"
    for offset, (e, a) in enumerate(zip(expected, actual)):
        if e != a:
            return f"first differing byte at offset {offset}"
    return "contents differ"


def load_manifest(corpus_dir) -> tuple[list[GoldenArtifact], str]:
    path = Path(corpus_dir) / "golden_manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"golden manifest not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    artifacts = [GoldenArtifact(a["path"], a["sha3_256"], tuple(a["command"]))
                 for a in doc["artifacts"]]
    return artifacts, doc["password"]


def save_manifest(corpus_dir, artifacts: list[GoldenArtifact],
                  password: str) -> None:
    doc = {
        "password": password,
        "artifacts": [
            {"path": a.path, "sha3_256": a.sha3_256, "command": list(a.command)}
            for a in artifacts
        ],
    }
    path = Path(corpus_dir) / "golden_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def verify_golden(corpus_dir, seed_override: int | None = None) -> GoldenReport:
    """Regenerate every golden artifact and compare digests.

    Checks two things per artifact: the checked-in copy still matches
    its recorded digest (corruption), and rerunning the recorded command
    reproduces that digest (drift). ``seed_override`` rewrites ``--seed``
    arguments and serves as a negative control: a different seed must
    produce mismatches.
    """
    from .cli import main as cli_main  # deferred: cli imports this module

    corpus = Path(corpus_dir).resolve()
    artifacts, password = load_manifest(corpus)
    entries: list[GoldenEntry] = []
    env_before = os.environ.get("ZKMFA_PWD")
    os.environ["ZKMFA_PWD"] = password
    try:
        with tempfile.TemporaryDirectory(prefix="zkmfa-golden-") as tmp:
            commands_run: set[tuple[str, ...]] = set()
            for art in artifacts:
                stored = corpus / art.path
                if not stored.is_file():
                    entries.append(GoldenEntry(art.path, False, "stored copy missing"))
                    continue
                stored_digest = file_digest(stored)
                if stored_digest != art.sha3_256:
                    entries.append(GoldenEntry(
                        art.path, False,
                        f"stored copy corrupted (digest {stored_digest[:16]}...)"))
                    continue
                argv = [a.replace("{CORPUS}", str(corpus)).replace("{OUT}", tmp)
                        for a in art.command]
                if seed_override is not None:
                    argv = [str(seed_override) if argv[i - 1] == "--seed" else a
                            for i, a in enumerate(argv)]
                key = tuple(argv)
                if key not in commands_run:
                    with contextlib.redirect_stdout(io.StringIO()):
                        code = cli_main(argv)
                    if code != 0:
                        entries.append(GoldenEntry(
                            art.path, False, f"command exited {code}"))
                        continue
                    commands_run.add(key)
                regenerated = Path(tmp) / art.path
                if not regenerated.is_file():
                    entries.append(GoldenEntry(
                        art.path, False, "command did not produce the artifact"))
                    continue
                if file_digest(regenerated) == art.sha3_256:
                    entries.append(GoldenEntry(art.path, True, "ok"))
                else:
                    entries.append(GoldenEntry(
                        art.path, False,
                        "regeneration drift: "
                        + _diff_summary(stored.read_bytes(),
                                        regenerated.read_bytes())))
    finally:
        if env_before is None:
            os.environ.pop("ZKMFA_PWD", None)
        else:
            os.environ["ZKMFA_PWD"] = env_before
    return GoldenReport(entries)
