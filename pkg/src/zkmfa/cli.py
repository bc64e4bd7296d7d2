"""Command-line surface.

Exit codes are a stable scripting contract: 0 success/accept, 1 input
error, 2 usage error, 3 authentication reject, 4 transport error.
Passwords come from the ZKMFA_PWD environment variable or an interactive
prompt, never argv; keys are only ever printed as SHA3-256 fingerprints.
"""

from __future__ import annotations

import argparse
import getpass
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import biometric, corpus, puf, stats, transport
from .config import (ConfigError, Key, k_float, k_grid, k_hex, k_int,
                     k_int_list, k_path, k_str, load_config)
from .derivation import Nonce512
from .errors import (FormatError, InsufficientStableBits, ProtocolStateError,
                     ReconciliationFailure)
from .protocol import SessionParams, build_enrollment, run_loopback
from .rbc import KeyBits
from .stats import DeviceConfig, SweepConfig
from .tables import write_table

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2
EXIT_REJECT = 3
EXIT_TRANSPORT = 4

PWD_ENV = "ZKMFA_PWD"


def _nonce(seed: int, label: str) -> Nonce512:
    return Nonce512.from_bytes(
        hashlib.shake_256(f"zkmfa:cli:nonce:{seed}:{label}".encode()).digest(64))


def _tag(seed: int, label: str) -> bytes:
    return hashlib.shake_256(f"zkmfa:cli:{seed}:{label}".encode()).digest(32)


def _get_password() -> str:
    pwd = os.environ.get(PWD_ENV)
    if pwd:
        return pwd
    pwd = getpass.getpass("password: ")
    if not pwd:
        raise ValueError("empty password")
    return pwd


# ---------------------------------------------------------------------------
# config schemas

_TOKEN_SOURCE_KEYS = [
    k_path("device_model"),
    k_path("dumps_dir"),
    k_int("token_reads", 20),
]

_BIO_SOURCE_KEYS = [
    k_path("person_file"),
    k_int("enroll_moment_frames", 10),
    k_int("enroll_variation_frames", 10),
]

_PARAM_KEYS = [
    k_int("accuracy_bits", 7),
    k_int("chopped_msbs", 1),
    k_int("oversample", 384),
    k_int("key_bits", 256),
    k_int("frag_level", 4),
    k_int("max_hamming", 3),
]

KEYGEN_SCHEMA = (_TOKEN_SOURCE_KEYS + _BIO_SOURCE_KEYS + _PARAM_KEYS + [
    k_int("seed", 1),
    k_hex("enroll_nonce_hex"),
    k_hex("challenge_nonce_hex"),
    k_int("probe_read_index", -1),
    k_str("probe_kind", "variation"),
    k_int("probe_index", -1),
    k_int("inject_bit_errors", 0),
    k_str("host", "127.0.0.1"),
    k_int("port", 9410),
])

# One config file naturally serves both enrollment and key generation, so
# enroll accepts the full keygen vocabulary and ignores the probe keys.
ENROLL_SCHEMA = KEYGEN_SCHEMA

_POPULATION_KEYS = [
    k_int("persons", 30),
    k_int("enroll_moment_frames", 10),
    k_int("enroll_variation_frames", 40),
    k_int("probe_frames", 10),
    k_int("impostor_probes", 30),
    k_int("token_reads", 20),
    k_float("flaky_fraction", puf.DEFAULT_FLAKY_FRACTION),
    k_float("flaky_flip_prob", puf.DEFAULT_FLAKY_FLIP_PROB),
    k_float("moment_sigma", biometric.DEFAULT_MOMENT_SIGMA),
    k_float("variation_sigma", biometric.DEFAULT_VARIATION_SIGMA),
    k_int("oversample", 384),
    k_int("key_bits", 256),
    k_str("password", stats.DEFAULT_PASSWORD),
    k_int("seed", 1),
    k_int("workers", 1),
]

SWEEP_SCHEMA = _POPULATION_KEYS + [k_grid("grid", stats.DEFAULT_GRID)]

CURVE_SCHEMA = [
    k_float("flaky_fraction", puf.DEFAULT_FLAKY_FRACTION),
    k_float("flaky_flip_prob", puf.DEFAULT_FLAKY_FLIP_PROB),
    k_int("oversample", 384),
    k_int("key_bits", 256),
    k_str("password", stats.DEFAULT_PASSWORD),
    k_int("seed", 1),
    k_int("workers", 1),
    k_int_list("cycles", (1, 5, 10, 20, 40)),
    k_int("trials", 200),
]

HIST_SCHEMA = _POPULATION_KEYS + [
    Key("hist_points", lambda s: tuple(
        tuple(int(x) for x in row.split(","))
        for row in s.split(";") if row.strip()), ((7, 0), (7, 1), (7, 2))),
]

BIAS_SCHEMA = _POPULATION_KEYS + [
    k_int("harvest_bits", 120_000),
    k_int("accuracy_bits", 7),
    k_int("chopped_msbs", 1),
    k_int("frag_level", 4),
]


def _sweep_config(cfg: dict, grid=None) -> SweepConfig:
    return SweepConfig(
        persons=cfg["persons"],
        enroll_moment_frames=cfg["enroll_moment_frames"],
        enroll_variation_frames=cfg["enroll_variation_frames"],
        probe_frames=cfg["probe_frames"],
        impostor_probes=cfg["impostor_probes"],
        grid=grid if grid is not None else cfg.get("grid", stats.DEFAULT_GRID),
        token_reads=cfg["token_reads"],
        flaky_fraction=cfg["flaky_fraction"],
        flaky_flip_prob=cfg["flaky_flip_prob"],
        moment_sigma=cfg["moment_sigma"],
        variation_sigma=cfg["variation_sigma"],
        oversample=cfg["oversample"],
        key_bits=cfg["key_bits"],
        password=cfg["password"],
        seed=cfg["seed"],
        workers=cfg["workers"],
    )


# ---------------------------------------------------------------------------
# factor loading

def _load_token_reads(cfg: dict, count: int, seed: int, label: str) -> list[bytes]:
    if cfg.get("dumps_dir"):
        dumps = puf.load_dumps(cfg["dumps_dir"])
        if len(dumps.reads) < count:
            raise ValueError(
                f"dump set has {len(dumps.reads)} reads, need {count}")
        return dumps.reads[:count]
    if cfg.get("device_model"):
        device = puf.load_model(cfg["device_model"])
        return [puf.power_cycle_read(device, _tag(seed, f"{label}-{k}"))
                for k in range(count)]
    raise ConfigError("config needs device_model or dumps_dir")


def _load_probe_read(cfg: dict, seed: int) -> bytes:
    if cfg.get("dumps_dir"):
        dumps = puf.load_dumps(cfg["dumps_dir"])
        return dumps.reads[cfg["probe_read_index"]]
    device = puf.load_model(cfg["device_model"])
    return puf.power_cycle_read(device, _tag(seed, "probe-read"))


def _load_bio_frames(cfg: dict) -> list[biometric.LandmarkFrame]:
    if not cfg.get("person_file"):
        raise ConfigError("config needs person_file")
    frames = biometric.load_frames(cfg["person_file"])
    moment = [f for f in frames if f.kind == "moment"]
    variation = [f for f in frames if f.kind == "variation"]
    nm, nv = cfg["enroll_moment_frames"], cfg["enroll_variation_frames"]
    if len(moment) < nm or len(variation) < nv:
        raise ValueError(
            f"person file has {len(moment)} moment / {len(variation)} "
            f"variation frames, need {nm}/{nv} for enrollment")
    return moment[:nm] + variation[:nv]


def _load_probe_frame(cfg: dict) -> biometric.LandmarkFrame:
    frames = biometric.load_frames(cfg["person_file"])
    pool = [f for f in frames if f.kind == cfg["probe_kind"]]
    if not pool:
        raise ValueError(f"person file has no {cfg['probe_kind']} frames")
    return pool[cfg["probe_index"]]


def _session_params(cfg: dict) -> SessionParams:
    return SessionParams(
        accuracy_bits=cfg["accuracy_bits"],
        chopped_msbs=cfg["chopped_msbs"],
        oversample=cfg["oversample"],
        key_bits=cfg["key_bits"],
        frag_level=cfg["frag_level"],
        max_hamming=cfg["max_hamming"],
    )


def _enroll_nonce(cfg: dict) -> Nonce512:
    if cfg.get("enroll_nonce_hex"):
        return Nonce512.from_bytes(cfg["enroll_nonce_hex"])
    return _nonce(cfg["seed"], "enroll")


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    person_files, device_files = corpus.synthesize_corpus(
        out, persons=args.persons, devices=args.devices, seed=args.seed,
        reads=args.reads, moment_frames=args.moment_frames,
        variation_frames=args.variation_frames)
    print(f"wrote {len(person_files)} person files, "
          f"{len(device_files)} device dirs under {out}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    cfg = load_config(args.config, ENROLL_SCHEMA)
    password = _get_password()
    nonce = _enroll_nonce(cfg)
    if args.factor == "token":
        reads = _load_token_reads(cfg, cfg["token_reads"], cfg["seed"],
                                  "enroll-read")
        table = puf.enroll_token(reads, nonce, password)
    else:
        params = biometric.QuantParams(cfg["accuracy_bits"], cfg["chopped_msbs"])
        table = biometric.enroll_bio(_load_bio_frames(cfg), nonce, password,
                                     params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, table)
    print(f"wrote {out} (X-density {table.x_density:.4f})")
    return EXIT_OK


def _tamper_fn(inject: int):
    if inject <= 0:
        return None

    def tamper(key: KeyBits) -> KeyBits:
        bits = key.bits.copy()
        positions = np.linspace(0, bits.size - 1, inject).astype(int)
        bits[positions] ^= 1
        return KeyBits(bits)

    return tamper


def cmd_keygen(args) -> int:
    cfg = load_config(args.config, KEYGEN_SCHEMA)
    password = _get_password()
    params = _session_params(cfg)
    seed = cfg["seed"]
    tamper = _tamper_fn(cfg["inject_bit_errors"])
    if cfg.get("challenge_nonce_hex"):
        challenge_nonce = Nonce512.from_bytes(cfg["challenge_nonce_hex"])
    else:
        challenge_nonce = _nonce(seed, "challenge")

    if args.mode == "connect":
        session, verdict = transport.connect_keygen(
            cfg["host"], cfg["port"], _load_probe_read(cfg, seed),
            _load_probe_frame(cfg), password, tamper=tamper)
        if not verdict.accepted:
            print("REJECT (server verdict)")
            return EXIT_REJECT
        print("ACCEPT")
        print(f"key_sha3_256={session.key.fingerprint()}")
        return EXIT_OK

    enrollment = build_enrollment(
        _load_token_reads(cfg, cfg["token_reads"], seed, "enroll-read"),
        _load_bio_frames(cfg), password, _enroll_nonce(cfg), params)

    if args.mode == "serve":
        print(f"serving one session on {cfg['host']}:{cfg['port']}",
              file=sys.stderr)
        outcome = transport.serve_once(enrollment, challenge_nonce,
                                       cfg["host"], cfg["port"])
        if not outcome.accepted:
            print(f"REJECT ({outcome.reason})")
            return EXIT_REJECT
        print(f"ACCEPT, corrected={outcome.corrected_bits}")
        print(f"key_sha3_256={outcome.final_key.fingerprint()}")
        return EXIT_OK

    result = run_loopback(enrollment, _load_probe_read(cfg, seed),
                          _load_probe_frame(cfg), password, challenge_nonce,
                          tamper=tamper)
    if not result.accepted:
        print(f"REJECT ({result.reason})")
        return EXIT_REJECT
    print(f"ACCEPT, corrected={result.corrected_bits}")
    print(f"key_sha3_256={result.final_key.fingerprint()}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, SWEEP_SCHEMA)
    sweep_cfg = _sweep_config(cfg, grid=cfg["grid"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = stats.far_frr_sweep(sweep_cfg)
    stats.write_sweep_csv(out / "sweep.csv", rows)
    stats.write_manifest(out, "sweep", sweep_cfg)
    for r in rows:
        print(f"g={r.accuracy_bits} m={r.chopped_msbs} frag={r.frag_level}: "
              f"FAR={r.far_percent:.2f}% FRR={r.frr_percent:.2f}% "
              f"({r.impostor_tests} impostor / {r.genuine_tests} genuine)")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_curve(args) -> int:
    cfg = load_config(args.config, CURVE_SCHEMA)
    device_cfg = DeviceConfig(
        flaky_fraction=cfg["flaky_fraction"],
        flaky_flip_prob=cfg["flaky_flip_prob"],
        oversample=cfg["oversample"], key_bits=cfg["key_bits"],
        password=cfg["password"], seed=cfg["seed"], workers=cfg["workers"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = stats.enrollment_error_curve(device_cfg, cfg["cycles"],
                                          cfg["trials"])
    stats.write_curve_csv(out / "curve.csv", points)
    stats.write_manifest(out, "curve",
                         {"device": device_cfg.__dict__,
                          "cycles": list(cfg["cycles"]),
                          "trials": cfg["trials"]})
    for cycles, mean_errors in points:
        print(f"cycles={cycles}: mean key errors {mean_errors:.4f}")
    print(f"wrote {out / 'curve.csv'}")
    return EXIT_OK


def cmd_hist(args) -> int:
    cfg = load_config(args.config, HIST_SCHEMA)
    sweep_cfg = _sweep_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for g, m in cfg["hist_points"]:
        result = stats.histogram_emit(sweep_cfg, g, m)
        path = out / f"hist_{g}_{m}.csv"
        stats.write_hist_csv(path, result)
        print(f"g={g} m={m}: genuine mean {result.genuine_mean:.4f}, "
              f"impostor mean {result.impostor_mean:.4f}, "
              f"standardized gap {result.standardized_gap:.2f}")
    stats.write_manifest(out, "hist", sweep_cfg)
    print(f"wrote histograms under {out}")
    return EXIT_OK


def cmd_bias_test(args) -> int:
    cfg = load_config(args.config, BIAS_SCHEMA)
    sweep_cfg = _sweep_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gp = stats.GridPoint(cfg["accuracy_bits"], cfg["chopped_msbs"],
                         cfg["frag_level"])
    bits = stats.harvest_key_bits(sweep_cfg, cfg["harvest_bits"], gp)
    result = stats.binomial_bias_test(bits)
    stats.write_bias_csv(out / "bias.csv", result)
    stats.write_manifest(out, "bias-test", sweep_cfg)
    print(f"n={result.n} ones={result.ones} p_hat={result.p_hat:.4f} "
          f"CI=[{result.ci_low:.4f}, {result.ci_high:.4f}] "
          f"p_value={result.p_value:.4f}")
    print(f"wrote {out / 'bias.csv'}")
    return EXIT_OK


def cmd_verify_golden(args) -> int:
    report = corpus.verify_golden(args.corpus)
    for entry in report.entries:
        print(f"{'ok  ' if entry.ok else 'FAIL'} {entry.path}: {entry.detail}")
    return EXIT_OK if report.ok else EXIT_INPUT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zkmfa",
        description="SRAM-PUF + template-less biometric ephemeral key MFA")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate synthetic persons and devices")
    p.add_argument("--persons", type=int, required=True)
    p.add_argument("--devices", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--reads", type=int, default=corpus.DEFAULT_READS)
    p.add_argument("--moment-frames", type=int, default=corpus.DEFAULT_MOMENT_FRAMES)
    p.add_argument("--variation-frames", type=int,
                   default=corpus.DEFAULT_VARIATION_FRAMES)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("enroll", help="enroll one factor into a .tt table")
    p.add_argument("--factor", choices=("token", "bio"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_enroll)

    p = sub.add_parser("keygen", help="run the two-message key agreement")
    p.add_argument("--mode", choices=("loopback", "serve", "connect"),
                   default="loopback")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_keygen)

    for name, fn in (("sweep", cmd_sweep), ("curve", cmd_curve),
                     ("hist", cmd_hist), ("bias-test", cmd_bias_test)):
        p = sub.add_parser(name, help=f"run the {name} evaluation")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("verify-golden",
                       help="regenerate golden artifacts and compare digests")
    p.add_argument("--corpus", default="corpus")
    p.set_defaults(fn=cmd_verify_golden)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth-data" and (args.persons < 1 or args.devices < 0):
        parser.error("--persons must be >= 1 and --devices >= 0")
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConnectionError, TimeoutError, OSError) as exc:
        if args.command == "keygen" and getattr(args, "mode", "") in ("serve",
                                                                      "connect"):
            print(f"transport error: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ReconciliationFailure, InsufficientStableBits):
        print("REJECT", file=sys.stderr)
        return EXIT_REJECT
    except (ConfigError, FormatError, ProtocolStateError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
