"""Configuration-driven experiment runner and CLI.

Scenarios quantize the left-singular subspace of a fading channel at every
time instant and aggregate distortion / feedback-bit / stage-update
statistics over a sweep of normalized Doppler shifts. All randomness comes
from per-trajectory substreams of a master seed, so results are bitwise
reproducible for any worker count.

Config files are plain "key = value" text: '#' starts a comment, lists are
comma separated. See ExperimentConfig for the keys.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import channel as channel_mod
from . import classifier as classifier_mod
from .codebook import (CodebookLadder, build_flat_codebook, build_ladder,
                       load_codebook, save_codebook)
from .errors import ConfigError, GrassquantError
from .numerics import compact_svd, complex_gaussian
from .quantizer import (QuantizerState, SingleStageState, calibrate_constant,
                        quantize_chain_batch, quantize_single_stage,
                        recursive_quantize_selective, single_stage_selective,
                        theory_multi_stage, theory_single_stage)

SCENARIOS = ("single_stage_memoryless", "single_stage_selective",
             "multistage_full", "multistage_selective", "classifier_eval",
             "stage_table")

RESULT_FORMAT_VERSION = 1
OUTPUT_DIR_ENV = "GRASSQUANT_OUT"


@dataclass
class ExperimentConfig:
    scenario: str = ""
    n: int = 0
    m: int = 1
    bits: int = 6  # flat-codebook bits or bits per stage
    doppler_sweep: list[float] = field(default_factory=list)
    channel_model: str = "gauss_markov"  # gauss_markov | clarke_sos | iid
    trajectory_length: int = 500
    trajectory_count: int = 50
    c_upper: float = 2.0
    c_lower: float = 1.5
    seed: int = 1
    ladder_seed: int = 101
    warmup_discard: int = 50
    num_sinusoids: int = 32
    classifier: bool = False
    network_dir: str = ""
    samples: int = 10000  # stage_table / classifier_eval sample count
    output: str = ""
    workers: int = 1

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; "
                              f"expected one of {', '.join(SCENARIOS)}")
        if self.n < 2 or self.m < 1 or self.m >= self.n:
            raise ConfigError(f"invalid dimensions n={self.n}, m={self.m}")
        if self.bits < 1:
            raise ConfigError("bits must be positive")
        if self.channel_model not in channel_mod.MODEL_TAGS:
            raise ConfigError(f"unknown channel_model {self.channel_model!r}")
        sweep_needed = self.scenario not in ("stage_table", "classifier_eval")
        if sweep_needed:
            if not self.doppler_sweep:
                raise ConfigError(f"{self.scenario} needs a doppler_sweep")
            if any(nu < 0 for nu in self.doppler_sweep):
                raise ConfigError("doppler values must be nonnegative")
            if self.trajectory_length < 1 or self.trajectory_count < 1:
                raise ConfigError("trajectory length/count must be positive")
        if "selective" in self.scenario:
            if not (1.0 <= self.c_lower <= self.c_upper):
                raise ConfigError("need 1 <= c_lower <= c_upper for selective "
                                  "scenarios")
        if self.scenario in ("classifier_eval",) or self.classifier:
            if not self.network_dir:
                raise ConfigError("classifier scenarios need network_dir")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def canonical_text(self) -> str:
        # workers and output are execution details: the result is identical
        # for any parallelism degree and does not depend on where it lands
        parts = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in ("workers", "output"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(repr(v) for v in value)
            parts.append(f"{f.name}={value!r}")
        return "\n".join(parts)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_BOOL_WORDS = {"true": True, "on": True, "1": True, "yes": True,
               "false": False, "off": False, "0": False, "no": False}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the key=value grammar into a validated ExperimentConfig."""
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key == "doppler_sweep":
                parsed = [float(v) for v in value.split(",") if v.strip()]
            elif key == "classifier":
                parsed = _BOOL_WORDS[value.lower()]
            elif key in ("scenario", "channel_model", "network_dir", "output"):
                parsed = value
            elif key in ("c_upper", "c_lower"):
                parsed = float(value)
            else:
                parsed = int(value)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        setattr(cfg, key, parsed)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


@dataclass
class SweepRow:
    """Aggregates for one Doppler point."""

    nu_d: float
    instants: int
    mean_distortion: float
    se_distortion: float
    mean_bits: float
    se_bits: float
    mean_updated_stages: float
    update_histogram: np.ndarray  # counts for 0..R updated stages
    hysteresis_violations: int


@dataclass
class ResultTable:
    rows: list[SweepRow]
    metadata: dict

    def to_csv(self) -> str:
        """Documented schema: comment header lines, then a header row
        nu_d,instants,mean_distortion,se_distortion,mean_bits,se_bits,
        mean_updated_stages,hysteresis_violations,hist_0..hist_R and one
        data row per sweep point (full %.17g precision)."""
        hist_len = len(self.rows[0].update_histogram) if self.rows else 0
        lines = [f"# grassquant result v{RESULT_FORMAT_VERSION}"]
        for key in sorted(self.metadata):
            lines.append(f"# {key}={self.metadata[key]}")
        header = ["nu_d", "instants", "mean_distortion", "se_distortion",
                  "mean_bits", "se_bits", "mean_updated_stages",
                  "hysteresis_violations"]
        header += [f"hist_{i}" for i in range(hist_len)]
        lines.append(",".join(header))
        for row in self.rows:
            values = [f"{row.nu_d:.17g}", str(row.instants),
                      f"{row.mean_distortion:.17g}", f"{row.se_distortion:.17g}",
                      f"{row.mean_bits:.17g}", f"{row.se_bits:.17g}",
                      f"{row.mean_updated_stages:.17g}",
                      str(row.hysteresis_violations)]
            values += [str(int(c)) for c in row.update_histogram]
            lines.append(",".join(values))
        return "\n".join(lines) + "\n"

    def to_plotdata(self) -> str:
        """One '# series:' block per metric, x y pairs per line."""
        blocks = []
        for name, attr in (("distortion", "mean_distortion"),
                           ("feedback_bits", "mean_bits"),
                           ("updated_stages", "mean_updated_stages")):
            lines = [f"# series: {name}"]
            for row in self.rows:
                lines.append(f"{row.nu_d:.17g} {getattr(row, attr):.17g}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"


def emit_csv(table: ResultTable, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
    except OSError as exc:
        raise GrassquantError(f"cannot write result table to {path}: {exc}") from exc


def emit_plotdata(table: ResultTable, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(table.to_plotdata())
    except OSError as exc:
        raise GrassquantError(f"cannot write plot data to {path}: {exc}") from exc


def _extract_subspace(h: np.ndarray, m: int) -> np.ndarray:
    """Left singular basis of one channel matrix; normalized column for
    m = 1 (identical span, no SVD needed)."""
    if m == 1:
        return h / np.linalg.norm(h)
    u, _, _ = compact_svd(h)
    return u


def _generate(cfg: ExperimentConfig, nu_d: float, rng: np.random.Generator):
    if cfg.channel_model == "gauss_markov":
        return channel_mod.generate_gauss_markov(cfg.n, cfg.m, cfg.trajectory_length,
                                                 nu_d, rng)
    if cfg.channel_model == "clarke_sos":
        return channel_mod.generate_clarke_sos(cfg.n, cfg.m, cfg.trajectory_length,
                                               nu_d, cfg.num_sinusoids, rng)
    return channel_mod.generate_iid(cfg.n, cfg.m, cfg.trajectory_length, rng)


@dataclass
class _TrajStats:
    """Order-independent aggregate of per-instant records."""

    instants: int = 0
    sum_dist: float = 0.0
    sum_bits: float = 0.0
    sum_updated: float = 0.0
    histogram: np.ndarray | None = None
    violations: int = 0
    trace: list | None = None

    def add(self, record, target_ceiling: float | None):
        self.instants += 1
        self.sum_dist += record.achieved_distortion
        self.sum_bits += record.bit_cost
        self.sum_updated += record.updated_stage_count
        if self.histogram is not None:
            self.histogram[record.updated_stage_count] += 1
        if (target_ceiling is not None and record.updated_stage_count == 0
                and record.achieved_distortion > target_ceiling):
            self.violations += 1

    def merge(self, other: "_TrajStats"):
        self.instants += other.instants
        self.sum_dist += other.sum_dist
        self.sum_bits += other.sum_bits
        self.sum_updated += other.sum_updated
        if self.histogram is None:
            self.histogram = other.histogram
        elif other.histogram is not None:
            self.histogram += other.histogram
        self.violations += other.violations
        if other.trace:
            self.trace = (self.trace or []) + other.trace


def _run_trajectory(cfg: ExperimentConfig, nu_d: float, stream_id: int,
                    traj_index: int, keep_trace: bool) -> _TrajStats:
    rng = channel_mod.substream(cfg.seed, stream_id)
    traj = _generate(cfg, nu_d, rng)
    stats = _TrajStats()
    scenario = cfg.scenario

    if scenario in ("multistage_full", "multistage_selective"):
        ladder = build_ladder(cfg.n, cfg.m, cfg.bits, cfg.ladder_seed)
        dm = theory_multi_stage(ladder)
        state = QuantizerState(ladder, dm, cfg.c_upper, cfg.c_lower)
        stats.histogram = np.zeros(ladder.num_stages + 1, dtype=np.int64)
        ceiling = cfg.c_upper * dm.total
        full_bits = ladder.num_stages * ladder.bits_per_stage
        discard = cfg.warmup_discard if scenario == "multistage_selective" else 0
        for k in range(traj.length):
            u = _extract_subspace(traj[k], cfg.m)
            if scenario == "multistage_selective":
                record = recursive_quantize_selective(u, state)
            else:
                from .quantizer import FeedbackRecord, recursive_quantize_full
                indices, recon, dists = recursive_quantize_full(u, ladder)
                total = 1.0 - float(np.prod(1.0 - np.asarray(dists)))
                record = FeedbackRecord(k, ladder.num_stages, tuple(indices),
                                        full_bits, total, "full")
            if k >= discard:
                stats.add(record, ceiling if scenario == "multistage_selective" else None)
                if keep_trace:
                    if stats.trace is None:
                        stats.trace = []
                    stats.trace.append((nu_d, traj_index, k, record.updated_stage_count,
                                        record.bit_cost, record.achieved_distortion))
        return stats

    if scenario in ("single_stage_memoryless", "single_stage_selective"):
        cb = build_flat_codebook(cfg.n, cfg.m, cfg.bits, cfg.ladder_seed)
        expected = theory_single_stage(cfg.n, cfg.m, cfg.bits) if cfg.m == 1 else None
        stats.histogram = np.zeros(2, dtype=np.int64)
        if scenario == "single_stage_selective":
            if expected is None:
                raise ConfigError("single_stage_selective needs m = 1 (closed-form "
                                  "target) in this artifact")
            state = SingleStageState(cb, expected, cfg.c_upper)
            ceiling = cfg.c_upper * expected
            discard = cfg.warmup_discard
        else:
            state = None
            ceiling = None
            discard = 0
        from .quantizer import FeedbackRecord
        for k in range(traj.length):
            u = _extract_subspace(traj[k], cfg.m)
            if state is not None:
                record = single_stage_selective(u, state)
            else:
                index, _, dist = quantize_single_stage(u, cb)
                record = FeedbackRecord(k, 1, (index,), cfg.bits, dist, "full")
            if k >= discard:
                stats.add(record, ceiling)
                if keep_trace:
                    if stats.trace is None:
                        stats.trace = []
                    stats.trace.append((nu_d, traj_index, k, record.updated_stage_count,
                                        record.bit_cost, record.achieved_distortion))
        return stats

    raise ConfigError(f"scenario {scenario} is not trajectory-based")


def _run_point(args) -> _TrajStats:
    cfg, nu_d, sweep_index, traj_index, keep_trace = args
    stream_id = sweep_index * cfg.trajectory_count + traj_index
    return _run_trajectory(cfg, nu_d, stream_id, traj_index, keep_trace)


def run_experiment(cfg: ExperimentConfig, keep_trace: bool = False) -> ResultTable:
    """Run a sweep scenario and aggregate per-Doppler statistics."""
    cfg.validate()
    if cfg.scenario in ("stage_table", "classifier_eval"):
        raise ConfigError("use run_stage_table for per-stage scenarios")
    rows = []
    trace_rows: list = []
    sweep = sorted(cfg.doppler_sweep)
    for sweep_index, nu_d in enumerate(sweep):
        tasks = [(cfg, nu_d, sweep_index, t, keep_trace)
                 for t in range(cfg.trajectory_count)]
        total = _TrajStats()
        per_traj: list[_TrajStats] = []
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                per_traj = list(pool.map(_run_point, tasks))
        else:
            per_traj = [_run_point(task) for task in tasks]
        for stats in per_traj:
            total.merge(stats)
        count = max(1, total.instants)
        # instants within a trajectory are correlated, so standard errors
        # come from the spread of the (i.i.d.) per-trajectory means
        traj_dist = np.array([s.sum_dist / max(1, s.instants) for s in per_traj])
        traj_bits = np.array([s.sum_bits / max(1, s.instants) for s in per_traj])
        denom = math.sqrt(len(per_traj))
        rows.append(SweepRow(
            nu_d=nu_d,
            instants=total.instants,
            mean_distortion=total.sum_dist / count,
            se_distortion=float(traj_dist.std(ddof=1)) / denom
            if len(per_traj) > 1 else 0.0,
            mean_bits=total.sum_bits / count,
            se_bits=float(traj_bits.std(ddof=1)) / denom
            if len(per_traj) > 1 else 0.0,
            mean_updated_stages=total.sum_updated / count,
            update_histogram=(total.histogram if total.histogram is not None
                              else np.zeros(1, dtype=np.int64)),
            hysteresis_violations=total.violations,
        ))
        if keep_trace and total.trace:
            trace_rows.extend(total.trace)
    metadata = {
        "config_hash": cfg.config_hash(),
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "ladder_seed": cfg.ladder_seed,
        "format_version": RESULT_FORMAT_VERSION,
    }
    table = ResultTable(rows, metadata)
    if keep_trace:
        table.trace = trace_rows  # type: ignore[attr-defined]
    return table


def trace_to_csv(table: ResultTable) -> str:
    """Per-instant audit trace: nu_d,trajectory,k,updated,bits,distortion."""
    rows = getattr(table, "trace", None)
    if rows is None:
        raise GrassquantError("experiment was run without keep_trace")
    lines = ["nu_d,trajectory,k,updated_stages,bit_cost,distortion"]
    for nu_d, traj, k, upd, bits, dist in rows:
        lines.append(f"{nu_d:.17g},{traj},{k},{upd},{bits},{dist:.17g}")
    return "\n".join(lines) + "\n"


def audit_trace_csv(text: str) -> dict:
    """Recompute sweep aggregates from a dumped trace (consistency audit)."""
    out: dict = {}
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    for line in lines[1:]:
        nu_d, _traj, _k, upd, bits, dist = line.split(",")
        bucket = out.setdefault(float(nu_d), {"n": 0, "dist": 0.0, "bits": 0.0,
                                              "updated": 0.0})
        bucket["n"] += 1
        bucket["dist"] += float(dist)
        bucket["bits"] += float(bits)
        bucket["updated"] += float(upd)
    for bucket in out.values():
        n = bucket.pop("n")
        bucket["mean_distortion"] = bucket.pop("dist") / n
        bucket["mean_bits"] = bucket.pop("bits") / n
        bucket["mean_updated_stages"] = bucket.pop("updated") / n
        bucket["instants"] = n
    return out


@dataclass
class StageRow:
    stage: int  # 1-based, matching the recursion order
    input_dim: int
    mean_exhaustive: float
    se_exhaustive: float
    mean_classifier: float | None = None
    se_classifier: float | None = None
    classifier_agreement: float | None = None


def isotropic_bases(n: int, m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """(count, n, m) stack of isotropic semi-unitary bases."""
    if m == 1:
        v = complex_gaussian(rng, (count, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v[:, :, None]
    g = complex_gaussian(rng, (count, n, m))
    q, _ = np.linalg.qr(g)
    return q


def run_stage_table(n: int, m: int, bits_per_stage: int, samples: int,
                    with_classifier: bool = False, ladder_seed: int = 101,
                    input_seed: int = 777, networks: list | None = None,
                    chunk: int = 2048) -> tuple[list[StageRow], CodebookLadder]:
    """Per-stage mean distortion of the recursive quantizer on isotropic
    inputs, under exhaustive search and optionally classifier selection.

    The classifier pass runs its own chain (a misclassified stage changes
    the inputs of later stages, as it would in operation); agreement is the
    fraction of instants where the classifier matches the exhaustive scan
    on the classifier chain's own stage inputs.
    """
    ladder = build_ladder(n, m, bits_per_stage, ladder_seed)
    num_stages = ladder.num_stages
    if with_classifier:
        if networks is None or len(networks) != num_stages:
            raise ValueError(f"need {num_stages} trained networks")
        for net, sc in zip(networks, ladder.stages):
            net.require_binding(sc)
    rng = channel_mod.substream(input_seed, 0)

    sums_ex = np.zeros(num_stages)
    sumsq_ex = np.zeros(num_stages)
    sums_cl = np.zeros(num_stages)
    sumsq_cl = np.zeros(num_stages)
    agree = np.zeros(num_stages)
    done = 0
    while done < samples:
        batch = min(chunk, samples - done)
        bases = isotropic_bases(n, m, batch, rng)
        _, dists = quantize_chain_batch(ladder, bases)
        sums_ex += dists.sum(axis=0)
        sumsq_ex += (dists ** 2).sum(axis=0)
        if with_classifier:
            agreement = np.zeros(num_stages)

            def pick(stage_index: int, stage_inputs: np.ndarray) -> np.ndarray:
                idx = classifier_mod.classify_many(networks[stage_index], stage_inputs)
                energy = np.sum(np.abs(np.einsum(
                    "kd,sdm->skm", ladder.stages[stage_index].complements.conj(),
                    stage_inputs)) ** 2, axis=2)
                agreement[stage_index] = np.sum(idx == np.argmin(energy, axis=1))
                return idx

            _, dists_cl = quantize_chain_batch(ladder, bases, selector=pick)
            sums_cl += dists_cl.sum(axis=0)
            sumsq_cl += (dists_cl ** 2).sum(axis=0)
            agree += agreement
        done += batch

    rows = []
    for i in range(num_stages):
        mean_ex = sums_ex[i] / samples
        var_ex = max(0.0, sumsq_ex[i] / samples - mean_ex ** 2)
        row = StageRow(stage=i + 1, input_dim=ladder.stages[i].input_dim,
                       mean_exhaustive=mean_ex,
                       se_exhaustive=math.sqrt(var_ex / samples))
        if with_classifier:
            mean_cl = sums_cl[i] / samples
            var_cl = max(0.0, sumsq_cl[i] / samples - mean_cl ** 2)
            row.mean_classifier = mean_cl
            row.se_classifier = math.sqrt(var_cl / samples)
            row.classifier_agreement = agree[i] / samples
        rows.append(row)
    return rows, ladder


def stage_table_csv(rows: list[StageRow], metadata: dict) -> str:
    lines = [f"# grassquant stage table v{RESULT_FORMAT_VERSION}"]
    for key in sorted(metadata):
        lines.append(f"# {key}={metadata[key]}")
    lines.append("stage,input_dim,mean_exhaustive,se_exhaustive,"
                 "mean_classifier,se_classifier,classifier_agreement")
    for row in rows:
        cl = ("" if row.mean_classifier is None
              else f"{row.mean_classifier:.17g}")
        se = "" if row.se_classifier is None else f"{row.se_classifier:.17g}"
        ag = ("" if row.classifier_agreement is None
              else f"{row.classifier_agreement:.17g}")
        lines.append(f"{row.stage},{row.input_dim},{row.mean_exhaustive:.17g},"
                     f"{row.se_exhaustive:.17g},{cl},{se},{ag}")
    return "\n".join(lines) + "\n"


# per-dimension training budgets: the narrow middle dims need far more
# optimization than the wide ones to reach their distortion band
def default_hyperparams(input_dim: int, bits: int) -> classifier_mod.Hyperparams:
    base = classifier_mod.Hyperparams()
    if input_dim <= 2:
        base.epochs = 30
    elif input_dim <= 6:
        base.epochs = 90
        base.learning_rate = 1.2e-3
    elif input_dim <= 10:
        base.epochs = 60
    else:
        base.epochs = 35
        base.batch_size = 64
    return base


def default_training_samples(input_dim: int, bits: int) -> int:
    if input_dim <= 2:
        return 200_000
    if input_dim <= 6:
        return 700_000
    if input_dim <= 10:
        return 500_000
    return 400_000


def network_filename(m: int, bits: int, ladder_seed: int, input_dim: int) -> str:
    # keyed by stage input dim: ladders sharing a master seed share stages
    return f"stage_d{input_dim:02d}_m{m}_b{bits}_s{ladder_seed}.gqnn"


def train_ladder_networks(n: int, m: int, bits_per_stage: int, ladder_seed: int,
                          out_dir: str, dropout: float = 0.0,
                          sample_scale: float = 1.0, epoch_scale: float = 1.0,
                          train_seed: int = 31, log=print) -> list:
    """Train one network per ladder stage and persist them to out_dir.

    Seeds are keyed by stage input dimension, so ladders sharing a master
    seed reuse each other's networks. Next to each weight file a .report.txt
    records one epoch per line (epoch, loss, train-acc, val-acc).
    """
    ladder = build_ladder(n, m, bits_per_stage, ladder_seed)
    os.makedirs(out_dir, exist_ok=True)
    nets = []
    for i, sc in enumerate(ladder.stages):
        hp = default_hyperparams(sc.input_dim, bits_per_stage)
        hp.epochs = max(3, int(round(hp.epochs * epoch_scale)))
        hp.seed = train_seed + sc.input_dim
        count = max(2000, int(default_training_samples(sc.input_dim, bits_per_stage)
                              * sample_scale))
        rng = channel_mod.substream(train_seed, 1000 + sc.input_dim)
        ts = classifier_mod.generate_training_set(sc, m, count, rng)
        net = classifier_mod.init_network(sc, m, dropout_rate=dropout,
                                          seed=hp.seed, structured=True)
        net, report = classifier_mod.train(net, ts, hp)
        path = os.path.join(out_dir, network_filename(m, bits_per_stage,
                                                      ladder_seed, sc.input_dim))
        classifier_mod.save_network(net, path)
        with open(path + ".report.txt", "w", encoding="utf-8") as fh:
            fh.write(report.format_lines() + "\n")
        log(f"stage {i + 1}/{ladder.num_stages} (dim {sc.input_dim}): "
            f"val_acc={report.final_val_accuracy:.3f} "
            f"({report.duration_seconds:.0f}s) -> {path}")
        nets.append(net)
    return nets


def load_ladder_networks(n: int, m: int, bits_per_stage: int, ladder_seed: int,
                         network_dir: str) -> list:
    ladder = build_ladder(n, m, bits_per_stage, ladder_seed)
    nets = []
    for i, sc in enumerate(ladder.stages):
        path = os.path.join(network_dir,
                            network_filename(m, bits_per_stage, ladder_seed,
                                             sc.input_dim))
        net = classifier_mod.load_network(path)
        net.require_binding(sc)
        nets.append(net)
    return nets


def _default_out_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, ".")


def _cmd_codebook(args) -> int:
    if args.kind == "flat":
        cb = build_flat_codebook(args.n, args.m, args.bits, args.seed)
    else:
        cb = build_ladder(args.n, args.m, args.bits, args.seed)
    save_codebook(cb, args.out)
    print(f"wrote {args.kind} codebook to {args.out}")
    return 0


def _cmd_train(args) -> int:
    train_ladder_networks(args.n, args.m, args.bits, args.ladder_seed,
                          args.out_dir, dropout=args.dropout,
                          sample_scale=args.sample_scale,
                          epoch_scale=args.epoch_scale,
                          train_seed=args.train_seed)
    return 0


def _cmd_eval_stages(args) -> int:
    networks = None
    if args.networks:
        networks = load_ladder_networks(args.n, args.m, args.bits,
                                        args.ladder_seed, args.networks)
    rows, ladder = run_stage_table(args.n, args.m, args.bits, args.samples,
                                   with_classifier=networks is not None,
                                   ladder_seed=args.ladder_seed,
                                   input_seed=args.input_seed,
                                   networks=networks)
    text = stage_table_csv(rows, {
        "n": args.n, "m": args.m, "bits": args.bits,
        "ladder_seed": args.ladder_seed, "samples": args.samples,
        "format_version": RESULT_FORMAT_VERSION,
    })
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote stage table to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    out = cfg.output or os.path.join(_default_out_dir(),
                                     f"{cfg.scenario}_{cfg.config_hash()}.csv")
    if cfg.scenario in ("stage_table", "classifier_eval"):
        networks = None
        if cfg.scenario == "classifier_eval" or cfg.classifier:
            networks = load_ladder_networks(cfg.n, cfg.m, cfg.bits,
                                            cfg.ladder_seed, cfg.network_dir)
        rows, _ = run_stage_table(cfg.n, cfg.m, cfg.bits, cfg.samples,
                                  with_classifier=networks is not None,
                                  ladder_seed=cfg.ladder_seed,
                                  input_seed=cfg.seed, networks=networks)
        text = stage_table_csv(rows, {
            "config_hash": cfg.config_hash(), "n": cfg.n, "m": cfg.m,
            "bits": cfg.bits, "ladder_seed": cfg.ladder_seed,
            "samples": cfg.samples, "format_version": RESULT_FORMAT_VERSION,
        })
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote stage table to {out}")
        return 0
    table = run_experiment(cfg, keep_trace=args.trace is not None)
    emit_csv(table, out)
    print(f"wrote result table to {out}")
    if args.trace is not None:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace_to_csv(table))
        print(f"wrote per-instant trace to {args.trace}")
    if args.plotdata:
        emit_plotdata(table, args.plotdata)
        print(f"wrote plot data to {args.plotdata}")
    return 0


def _cmd_calibrate(args) -> int:
    rng = channel_mod.substream(args.seed, 0)
    k, se = calibrate_constant(args.d_prev, args.m, args.d_next,
                               args.probe_bits, args.samples, rng)
    rel = se / k if k else float("inf")
    print(f"k({args.d_prev},{args.m},{args.d_next}) = {k:.6g} +- {se:.2g}")
    if rel > 0.05:
        print(f"warning: wide confidence interval ({100 * rel:.1f}% relative); "
              "increase --samples")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grassquant",
        description="Recursive multi-stage Grassmannian CSI quantization "
                    "simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", help="build and persist a codebook")
    ps = p.add_subparsers(dest="codebook_command", required=True)
    pb = ps.add_parser("build", help="build a flat codebook or stage ladder")
    pb.add_argument("--kind", choices=("flat", "ladder"), required=True)
    pb.add_argument("--n", type=int, required=True)
    pb.add_argument("--m", type=int, required=True)
    pb.add_argument("--bits", type=int, required=True,
                    help="total bits (flat) or bits per stage (ladder)")
    pb.add_argument("--seed", type=int, default=101)
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=_cmd_codebook)

    p = sub.add_parser("train", help="train per-stage classifier networks")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--ladder-seed", type=int, default=101)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--sample-scale", type=float, default=1.0,
                   help="multiplier on the per-stage training-set size")
    p.add_argument("--epoch-scale", type=float, default=1.0)
    p.add_argument("--train-seed", type=int, default=31)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval-stages", help="per-stage distortion table")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--bits", type=int, required=True)
    p.add_argument("--ladder-seed", type=int, default=101)
    p.add_argument("--input-seed", type=int, default=777)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--networks", default="",
                   help="directory of trained networks (adds classifier columns)")
    p.add_argument("--out", default="")
    p.set_defaults(func=_cmd_eval_stages)

    p = sub.add_parser("simulate", help="run a sweep experiment from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--trace", default=None,
                   help="also dump the per-instant audit trace CSV here")
    p.add_argument("--plotdata", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="Monte-Carlo distortion constant")
    p.add_argument("--d-prev", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d-next", type=int, required=True)
    p.add_argument("--probe-bits", type=int, default=8)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_calibrate)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except GrassquantError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
