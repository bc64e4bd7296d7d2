"""Statistical evaluation harness: FAR/FRR sweeps, enrollment curves,
match-fraction histograms and the key-bias binomial test.

Every run is seed-deterministic: nonces, device reads and synthetic
frames are all derived from (run seed, structured labels) through the
same extendable-output streams the rest of the package uses, and each
parallel work unit derives its own seeds, so serial and parallel
execution produce byte-identical CSV output.

Accept/reject in the sweep is the full-protocol outcome (digest
reconciliation), not a score threshold: a false accept means an impostor
actually walked away with the agreed key.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__, biometric, puf
from .biometric import QuantParams
from .derivation import Nonce512, password_digest
from .protocol import SessionParams, _session_key, build_enrollment, run_loopback
from .tables import apply_mask, mask_of, match_fraction

DEFAULT_PASSWORD = "shared-eval-password"

# Search budgets keep the per-fragment candidate count bounded as the
# fragment length grows; the sweep exposes these per grid row.
DEFAULT_MAX_HAMMING_BY_FRAG = {1: 1, 2: 2, 4: 3, 8: 3}


def _tag(seed: int, *labels) -> bytes:
    """Derive a sub-seed from the run seed and a structured label path."""
    text = ":".join(str(x) for x in labels)
    return hashlib.shake_256(f"zkmfa:stats:{seed}:{text}".encode()).digest(32)


def _tag_nonce(seed: int, *labels) -> Nonce512:
    text = ":".join(str(x) for x in labels)
    return Nonce512.from_bytes(
        hashlib.shake_256(f"zkmfa:stats:nonce:{seed}:{text}".encode()).digest(64))


@dataclass(frozen=True)
class GridPoint:
    """One sweep configuration: quantizer plus reconciliation settings."""

    accuracy_bits: int
    chopped_msbs: int
    frag_level: int
    max_hamming: int | None = None  # None -> DEFAULT_MAX_HAMMING_BY_FRAG

    def resolved_max_hamming(self) -> int:
        if self.max_hamming is not None:
            return self.max_hamming
        return DEFAULT_MAX_HAMMING_BY_FRAG.get(self.frag_level, 3)


# Default evaluation grid: the five best-performing configurations of the
# combined system, as (frag_level, accuracy_bits, chopped_msbs) =
# (1,7,1), (1,7,2), (2,7,2), (1,6,2), (4,7,2).
DEFAULT_GRID: tuple[GridPoint, ...] = (
    GridPoint(7, 1, 1),
    GridPoint(7, 2, 1),
    GridPoint(7, 2, 2),
    GridPoint(6, 2, 1),
    GridPoint(7, 2, 4),
)


@dataclass(frozen=True)
class SweepConfig:
    """Population, factor-noise and trial-count settings for evaluations."""

    persons: int = 30
    enroll_moment_frames: int = 10
    enroll_variation_frames: int = 40
    probe_frames: int = 10           # genuine probes per person
    impostor_probes: int = 30        # impostor probes per enrolled person
    grid: tuple[GridPoint, ...] = DEFAULT_GRID
    token_reads: int = 20
    flaky_fraction: float = puf.DEFAULT_FLAKY_FRACTION
    flaky_flip_prob: float = puf.DEFAULT_FLAKY_FLIP_PROB
    moment_sigma: float = biometric.DEFAULT_MOMENT_SIGMA
    variation_sigma: float = biometric.DEFAULT_VARIATION_SIGMA
    oversample: int = 384
    key_bits: int = 256
    password: str = DEFAULT_PASSWORD
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.persons < 2:
            raise ValueError("need at least two persons")
        if self.probe_frames < 1 or self.impostor_probes < 1:
            raise ValueError("trial counts must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        for gp in self.grid:
            QuantParams(gp.accuracy_bits, gp.chopped_msbs)  # range check

    def session_params(self, gp: GridPoint) -> SessionParams:
        return SessionParams(
            accuracy_bits=gp.accuracy_bits,
            chopped_msbs=gp.chopped_msbs,
            oversample=self.oversample,
            key_bits=self.key_bits,
            frag_level=gp.frag_level,
            max_hamming=gp.resolved_max_hamming(),
        )


@dataclass(frozen=True)
class SweepRow:
    accuracy_bits: int
    chopped_msbs: int
    frag_level: int
    far_percent: float
    frr_percent: float
    genuine_tests: int
    impostor_tests: int


def _population(cfg: SweepConfig) -> list[biometric.PersonModel]:
    return [biometric.synth_person(_tag(cfg.seed, "person", p),
                                   person_id=f"person-{p:03d}",
                                   moment_sigma=cfg.moment_sigma,
                                   variation_sigma=cfg.variation_sigma)
            for p in range(cfg.persons)]


def _device(cfg: SweepConfig) -> puf.SramDeviceModel:
    return puf.synth_device(_tag(cfg.seed, "device"),
                            flaky_fraction=cfg.flaky_fraction,
                            flaky_flip_prob=cfg.flaky_flip_prob,
                            device_id="token-000")


def _enroll_frames(cfg: SweepConfig, person: biometric.PersonModel,
                   pidx: int) -> list[biometric.LandmarkFrame]:
    frames = [biometric.synth_frame(person, "moment",
                                    _tag(cfg.seed, "enroll-frame", pidx, "m", i))
              for i in range(cfg.enroll_moment_frames)]
    frames += [biometric.synth_frame(person, "variation",
                                     _tag(cfg.seed, "enroll-frame", pidx, "v", i))
               for i in range(cfg.enroll_variation_frames)]
    return frames


def _sweep_point(cfg: SweepConfig, gidx: int) -> SweepRow:
    gp = cfg.grid[gidx]
    params = cfg.session_params(gp)
    device = _device(cfg)
    persons = _population(cfg)
    genuine_rejects = genuine_total = 0
    impostor_accepts = impostor_total = 0
    for pidx, person in enumerate(persons):
        reads = [puf.power_cycle_read(device, _tag(cfg.seed, "enroll-read",
                                                   gidx, pidx, k))
                 for k in range(cfg.token_reads)]
        enrollment = build_enrollment(
            reads, _enroll_frames(cfg, person, pidx), cfg.password,
            _tag_nonce(cfg.seed, "enroll", gidx, pidx), params)
        for t in range(cfg.probe_frames):
            probe = biometric.synth_frame(
                person, "variation", _tag(cfg.seed, "probe", pidx, t))
            read = puf.power_cycle_read(
                device, _tag(cfg.seed, "gen-read", gidx, pidx, t))
            res = run_loopback(enrollment, read, probe, cfg.password,
                               _tag_nonce(cfg.seed, "gen", gidx, pidx, t))
            genuine_total += 1
            genuine_rejects += not res.accepted
        for j in range(cfg.impostor_probes):
            other = persons[(pidx + 1 + j % (cfg.persons - 1)) % cfg.persons]
            probe = biometric.synth_frame(
                other, "variation", _tag(cfg.seed, "imp-frame", pidx, j))
            read = puf.power_cycle_read(
                device, _tag(cfg.seed, "imp-read", gidx, pidx, j))
            res = run_loopback(enrollment, read, probe, cfg.password,
                               _tag_nonce(cfg.seed, "imp", gidx, pidx, j))
            impostor_total += 1
            impostor_accepts += res.accepted
    return SweepRow(
        accuracy_bits=gp.accuracy_bits,
        chopped_msbs=gp.chopped_msbs,
        frag_level=gp.frag_level,
        far_percent=100.0 * impostor_accepts / impostor_total,
        frr_percent=100.0 * genuine_rejects / genuine_total,
        genuine_tests=genuine_total,
        impostor_tests=impostor_total,
    )


def _run_units(fn, cfg, count: int) -> list:
    """Run `fn(cfg, i)` for i in range(count), optionally across workers.

    Results come back in unit order either way, so parallel and serial
    runs are indistinguishable downstream.
    """
    if cfg.workers == 1 or count == 1:
        return [fn(cfg, i) for i in range(count)]
    with ProcessPoolExecutor(max_workers=min(cfg.workers, count)) as pool:
        return list(pool.map(fn, [cfg] * count, range(count)))


def far_frr_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """Full-protocol FAR/FRR over the grid, best configurations first."""
    rows = _run_units(_sweep_point, cfg, len(cfg.grid))
    rows.sort(key=lambda r: (r.far_percent + r.frr_percent,
                             r.accuracy_bits, r.chopped_msbs, r.frag_level))
    return rows


@dataclass(frozen=True)
class DeviceConfig:
    """Token-only settings for the enrollment error curve."""

    flaky_fraction: float = puf.DEFAULT_FLAKY_FRACTION
    flaky_flip_prob: float = puf.DEFAULT_FLAKY_FLIP_PROB
    oversample: int = 384
    key_bits: int = 256
    password: str = DEFAULT_PASSWORD
    seed: int = 1
    workers: int = 1


def _curve_point(task, index: int) -> tuple[int, float]:
    cfg, cycles_list, trials = task
    cycles = cycles_list[index]
    device = puf.synth_device(_tag(cfg.seed, "curve-device"),
                              flaky_fraction=cfg.flaky_fraction,
                              flaky_flip_prob=cfg.flaky_flip_prob)
    nonce = _tag_nonce(cfg.seed, "curve-enroll")
    pwd_digest = password_digest(cfg.password)
    params = SessionParams(accuracy_bits=7, chopped_msbs=1,
                           oversample=cfg.oversample, key_bits=cfg.key_bits)
    reads = [puf.power_cycle_read(device, _tag(cfg.seed, "curve-read", k))
             for k in range(cycles)]
    table = puf.enroll_token(reads, nonce, cfg.password)
    mask = mask_of(table)
    total_errors = 0
    for t in range(trials):
        probe = puf.power_cycle_read(device, _tag(cfg.seed, "curve-probe", t))
        projected = puf.one_shot_token_table(probe, nonce, cfg.password)
        client_table = apply_mask(projected, mask)
        challenge = _tag_nonce(cfg.seed, "curve-session", cycles, t)
        k_server = _session_key(table, challenge, pwd_digest, params)
        k_client = _session_key(client_table, challenge, pwd_digest, params)
        total_errors += k_server.hamming(k_client)
    return cycles, total_errors / trials


def enrollment_error_curve(device_cfg: DeviceConfig,
                           cycles_list: Sequence[int],
                           trials: int) -> list[tuple[int, float]]:
    """Mean pre-reconciliation key errors per enrollment cycle count.

    Enrollment read lists are nested (cycle count N uses the first N of
    one read pool) and every cycle count faces the same probe reads, so
    the curve isolates the effect of flagging more flaky cells.
    """
    if list(cycles_list) != sorted(cycles_list):
        raise ValueError("cycles_list must be ascending")
    if trials < 1:
        raise ValueError("trials must be positive")
    task = (device_cfg, tuple(cycles_list), trials)
    if device_cfg.workers == 1 or len(cycles_list) == 1:
        return [_curve_point(task, i) for i in range(len(cycles_list))]
    with ProcessPoolExecutor(max_workers=min(device_cfg.workers,
                                             len(cycles_list))) as pool:
        return list(pool.map(_curve_point, [task] * len(cycles_list),
                             range(len(cycles_list))))


def match_fraction_samples(cfg: SweepConfig, accuracy_bits: int,
                           chopped_msbs: int) -> tuple[np.ndarray, np.ndarray]:
    """Biometric-only genuine and impostor match fractions."""
    quant = QuantParams(accuracy_bits, chopped_msbs)
    persons = _population(cfg)
    genuine: list[float] = []
    impostor: list[float] = []
    for pidx, person in enumerate(persons):
        nonce = _tag_nonce(cfg.seed, "hist-enroll", accuracy_bits,
                           chopped_msbs, pidx)
        ref = biometric.enroll_bio(_enroll_frames(cfg, person, pidx),
                                   nonce, cfg.password, quant)
        for t in range(cfg.probe_frames):
            probe = biometric.synth_frame(
                person, "variation", _tag(cfg.seed, "probe", pidx, t))
            genuine.append(match_fraction(
                ref, biometric.one_shot_bio_table(probe, nonce,
                                                  cfg.password, quant)))
        for j in range(cfg.impostor_probes):
            other = persons[(pidx + 1 + j % (cfg.persons - 1)) % cfg.persons]
            probe = biometric.synth_frame(
                other, "variation", _tag(cfg.seed, "imp-frame", pidx, j))
            impostor.append(match_fraction(
                ref, biometric.one_shot_bio_table(probe, nonce,
                                                  cfg.password, quant)))
    return np.array(genuine), np.array(impostor)


HISTOGRAM_BINS = 50


@dataclass(frozen=True)
class HistogramResult:
    accuracy_bits: int
    chopped_msbs: int
    bin_edges: np.ndarray        # 51 edges over [0, 1]
    genuine_counts: np.ndarray
    impostor_counts: np.ndarray
    genuine_mean: float
    impostor_mean: float
    standardized_gap: float


def standardized_gap(genuine: np.ndarray, impostor: np.ndarray) -> float:
    """Mean separation in units of the pooled standard deviation."""
    pooled = math.sqrt((genuine.var() + impostor.var()) / 2.0)
    return float((genuine.mean() - impostor.mean()) / pooled)


def histogram_emit(cfg: SweepConfig, accuracy_bits: int,
                   chopped_msbs: int) -> HistogramResult:
    """Genuine and impostor match-fraction distributions, 50 uniform bins."""
    genuine, impostor = match_fraction_samples(cfg, accuracy_bits, chopped_msbs)
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    g_counts, _ = np.histogram(genuine, bins=edges)
    i_counts, _ = np.histogram(impostor, bins=edges)
    return HistogramResult(
        accuracy_bits=accuracy_bits,
        chopped_msbs=chopped_msbs,
        bin_edges=edges,
        genuine_counts=g_counts,
        impostor_counts=i_counts,
        genuine_mean=float(genuine.mean()),
        impostor_mean=float(impostor.mean()),
        standardized_gap=standardized_gap(genuine, impostor),
    )


# 95% two-sided normal quantile, for the Wilson interval.
_Z95 = 1.959963984540054


def wilson_interval(ones: int, n: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ValueError("n must be positive")
    p = ones / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return center - half, center + half


@dataclass(frozen=True)
class BiasResult:
    n: int
    ones: int
    p_hat: float
    ci_low: float
    ci_high: float
    p_value: float


def exact_binomial_p_value(n: int, ones: int) -> float:
    """Two-sided exact binomial test against p = 0.5.

    Sums the probability of every outcome no more likely than the
    observed one. Probabilities are computed in log space (they underflow
    for pools of 10^5 bits) and summed smallest-first for a result that
    is exactly symmetric in ones vs n - ones.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= ones <= n:
        raise ValueError("ones must lie in [0, n]")
    log_half_n = n * math.log(0.5)
    lg = math.lgamma

    def logpmf(k: int) -> float:
        return lg(n + 1) - lg(k + 1) - lg(n - k + 1) + log_half_n

    observed = logpmf(ones)
    # Small relative slack absorbs rounding in the comparison, same idea
    # as the classical implementations of the minimum-likelihood method.
    threshold = observed + 1e-7
    terms = sorted(lp for k in range(n + 1) if (lp := logpmf(k)) <= threshold)
    if len(terms) == n + 1:
        return 1.0  # observed count is the mode; every outcome is included
    return float(min(1.0, math.fsum(math.exp(lp) for lp in terms)))


def binomial_bias_test(bit_pool: np.ndarray | Sequence[int]) -> BiasResult:
    """Exact unbiasedness test plus Wilson 95% interval for a bit pool."""
    bits = np.asarray(bit_pool, dtype=np.uint8)
    if bits.size == 0:
        raise ValueError("bit pool must be non-empty")
    if bits.max() > 1:
        raise ValueError("pool must contain bits")
    n = int(bits.size)
    ones = int(np.count_nonzero(bits))
    lo, hi = wilson_interval(ones, n)
    return BiasResult(
        n=n, ones=ones, p_hat=ones / n,
        ci_low=lo, ci_high=hi,
        p_value=exact_binomial_p_value(n, ones),
    )


def harvest_key_bits(cfg: SweepConfig, min_bits: int,
                     grid_point: GridPoint | None = None) -> np.ndarray:
    """Collect server session-key bits from genuine protocol runs.

    Keys are harvested pre-reconciliation so every trial contributes,
    accepted or not.
    """
    gp = grid_point or GridPoint(7, 1, 4)
    params = cfg.session_params(gp)
    device = _device(cfg)
    persons = _population(cfg)
    pwd_digest = password_digest(cfg.password)
    pool: list[np.ndarray] = []
    have = 0
    t = 0
    while have < min_bits:
        for pidx, person in enumerate(persons):
            reads = [puf.power_cycle_read(device,
                                          _tag(cfg.seed, "harvest-read", pidx, k))
                     for k in range(cfg.token_reads)]
            enrollment = build_enrollment(
                reads, _enroll_frames(cfg, person, pidx), cfg.password,
                _tag_nonce(cfg.seed, "harvest-enroll", pidx, t), params)
            key = _session_key(enrollment.composite,
                               _tag_nonce(cfg.seed, "harvest-session", pidx, t),
                               pwd_digest, params)
            pool.append(key.bits)
            have += key.bits.size
            if have >= min_bits:
                break
        t += 1
    return np.concatenate(pool)


def write_sweep_csv(path, rows: Iterable[SweepRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["accuracy_bits", "chopped_msbs", "frag_level",
                    "far_percent", "frr_percent",
                    "genuine_tests", "impostor_tests"])
        for r in rows:
            w.writerow([r.accuracy_bits, r.chopped_msbs, r.frag_level,
                        f"{r.far_percent:.4f}", f"{r.frr_percent:.4f}",
                        r.genuine_tests, r.impostor_tests])


def write_curve_csv(path, points: Iterable[tuple[int, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cycles", "mean_key_errors"])
        for cycles, mean_errors in points:
            w.writerow([cycles, f"{mean_errors:.6f}"])


def write_hist_csv(path, result: HistogramResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "genuine_count", "impostor_count"])
        for i in range(HISTOGRAM_BINS):
            w.writerow([f"{result.bin_edges[i]:.4f}",
                        f"{result.bin_edges[i + 1]:.4f}",
                        int(result.genuine_counts[i]),
                        int(result.impostor_counts[i])])


def write_bias_csv(path, result: BiasResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "ones", "p_hat", "ci_low", "ci_high", "p_value"])
        w.writerow([result.n, result.ones, f"{result.p_hat:.6f}",
                    f"{result.ci_low:.6f}", f"{result.ci_high:.6f}",
                    f"{result.p_value:.6f}"])


def write_manifest(out_dir, command: str, config) -> None:
    """Record the full configuration of a run next to its outputs."""
    doc = {
        "command": command,
        "package_version": __version__,
        "config": _config_doc(config),
    }
    path = Path(out_dir) / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_doc(config):
    if hasattr(config, "__dataclass_fields__"):
        doc = asdict(config)
        if "grid" in doc:
            doc["grid"] = [asdict(gp) if hasattr(gp, "__dataclass_fields__")
                           else gp for gp in config.grid]
        return doc
    return config
