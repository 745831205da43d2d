"""End-to-end experiment driver: data, both generators, NFE sweep, tables and figure."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path


from .diffusion import DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_T, ddpm_batch_generate, make_schedule, train_ddpm
from .errors import ConfigError
from .flow import DEFAULT_BATCH_SIZE, TrainOptions, train_flow, write_loss_trace
from .metrics import METRIC_NAMES, MetricOptions, evaluate_all
from .nn import DEFAULT_LR, DEFAULT_TIME_MAX_FREQ, DEFAULT_TIME_WIDTH, Checkpoint, init_model, save_model
from .plot import SWEEP_COLUMNS, render_sweep_plot
from .sampler import INTEGRATORS, batch_generate
from .seeding import hash64
from .signal import SynthSpec, load_dataset, save_dataset, standardize_dataset, synth_dataset

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
METHODS = ("fm", "ddpm")


@dataclass(frozen=True)
class DatasetConfig:
    n_signals: int = 256
    n_eval: int = 256
    channels: int = 2
    samples: int = 64
    sample_rate_hz: float = 50.0
    condition_dim: int = 4
    noise_std: float = 0.02
    bumps_per_beat: int = 3
    standardize: bool = True


@dataclass(frozen=True)
class ModelConfig:
    hidden_sizes: tuple[int, ...] = (256, 256)
    time_width: int = DEFAULT_TIME_WIDTH
    time_max_freq: float = DEFAULT_TIME_MAX_FREQ


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 5000
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    log_every: int = 1


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = DEFAULT_T
    beta_min: float = DEFAULT_BETA_MIN
    beta_max: float = DEFAULT_BETA_MAX


@dataclass(frozen=True)
class SamplingConfig:
    nfe_list: tuple[int, ...] = (2, 5, 10, 25, 50, 100, 200)
    integrator: str = "euler"


@dataclass(frozen=True)
class MetricsConfig:
    dtw_local: str = "sq_euclidean"
    dtw_pairing: str = "aligned"
    mmd_kernel: str = "rbf"
    mmd_bandwidth: float | None = None
    welch_segment: int = 256
    welch_overlap: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    output_dir: str | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "schedule": ScheduleConfig,
    "sampling": SamplingConfig,
    "metrics": MetricsConfig,
}


def _coerce(value, default, where, problems):
    """Type-check one leaf against the type of its default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            problems.append(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            problems.append(f"{where}: expected a list of integers, got {value!r}")
            return default
        return tuple(value)
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, int):
        return value
    if isinstance(default, int):
        problems.append(f"{where}: expected an integer, got {value!r}")
        return default
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        problems.append(f"{where}: expected a number, got {value!r}")
        return default
    if isinstance(default, str):
        if not isinstance(value, str):
            problems.append(f"{where}: expected a string, got {value!r}")
            return default
        return value
    return value


def _build(cls, raw: dict, where: str, problems: list):
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in fields:
            problems.append(f"{where}.{key}: unknown key")
    defaults = cls()
    kwargs = {}
    for name in fields:
        if name in raw:
            kwargs[name] = _coerce(raw[name], getattr(defaults, name), f"{where}.{name}", problems)
    return cls(**kwargs)


def parse_config(raw: dict) -> ExperimentConfig:
    """Build and validate a config from parsed JSON; unknown keys are errors."""
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a JSON object"])
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in raw:
        if key not in top:
            problems.append(f"{key}: unknown key")
    if "version" not in raw:
        problems.append("version: missing (expected 1)")
    elif raw["version"] != CONFIG_VERSION:
        problems.append(f"version: unsupported {raw['version']!r}, expected {CONFIG_VERSION}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed: expected a non-negative integer, got {seed!r}")
        seed = 0
    out_dir = raw.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        problems.append("output_dir: expected a string")
        out_dir = None
    sections = {name: _build(cls, raw.get(name, {}), name, problems) for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(CONFIG_VERSION, seed, out_dir, **sections)
    problems += validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(cfg: ExperimentConfig) -> list[str]:
    p = []
    d = cfg.dataset
    for name in ("n_signals", "n_eval", "channels", "condition_dim"):
        if getattr(d, name) < 1:
            p.append(f"dataset.{name}: must be >= 1")
    if d.samples < 8:
        p.append("dataset.samples: must be >= 8 (spectral features)")
    if not d.sample_rate_hz > 0:
        p.append("dataset.sample_rate_hz: must be > 0")
    if d.noise_std < 0:
        p.append("dataset.noise_std: must be >= 0")
    if d.bumps_per_beat not in (1, 2, 3):
        p.append("dataset.bumps_per_beat: must be 1, 2 or 3")
    m = cfg.model
    if not m.hidden_sizes or any(h < 1 for h in m.hidden_sizes):
        p.append("model.hidden_sizes: need at least one positive width")
    if m.time_width < 2 or m.time_width % 2:
        p.append("model.time_width: must be even and >= 2")
    if not m.time_max_freq > 0:
        p.append("model.time_max_freq: must be > 0")
    t = cfg.training
    if t.steps < 0:
        p.append("training.steps: must be >= 0")
    if t.batch_size < 1:
        p.append("training.batch_size: must be >= 1")
    if not t.lr > 0:
        p.append("training.lr: must be > 0")
    if t.log_every < 1:
        p.append("training.log_every: must be >= 1")
    s = cfg.schedule
    if s.T < 2:
        p.append("schedule.T: must be >= 2")
    if not (0 < s.beta_min < s.beta_max < 1):
        p.append("schedule: need 0 < beta_min < beta_max < 1")
    sm = cfg.sampling
    if not sm.nfe_list:
        p.append("sampling.nfe_list: must not be empty")
    if len(set(sm.nfe_list)) != len(sm.nfe_list):
        p.append("sampling.nfe_list: duplicate entries")
    for n in sm.nfe_list:
        if n < 1:
            p.append(f"sampling.nfe_list: {n} is not a positive step count")
        elif n > s.T:
            p.append(f"sampling.nfe_list: {n} exceeds schedule.T={s.T} for the ddpm arm")
        if sm.integrator == "midpoint" and n % 2:
            p.append(f"sampling.nfe_list: {n} is odd but the midpoint integrator needs even budgets")
    if sm.integrator not in INTEGRATORS:
        p.append(f"sampling.integrator: must be one of {INTEGRATORS}")
    p += [f"metrics: {msg}" for msg in _metric_options(cfg, 0).validate()]
    return p


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    return parse_config(raw)


def _metric_options(cfg: ExperimentConfig, seed: int) -> MetricOptions:
    return MetricOptions(**dataclasses.asdict(cfg.metrics), seed=seed)


def seeds_for(cfg: ExperimentConfig) -> dict[str, int]:
    """Every RNG consumer's seed, derived as hash64(master, component, index)."""
    s = cfg.seed
    return {
        "train_data": hash64(s, "dataset", 0),
        "eval_data": hash64(s, "dataset", 1),
        "model_init": hash64(s, "model_init", 0),
        "train_fm": hash64(s, "train", 0),
        "train_ddpm": hash64(s, "train", 1),
        "sample_fm": hash64(s, "sample", 0),
        "sample_ddpm": hash64(s, "sample", 1),
        "metrics": hash64(s, "metrics", 0),
    }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FLOWGEN_THREADS", "1")))
    except ValueError:
        return 1


def _synth(cfg: ExperimentConfig, n: int, seed: int):
    d = cfg.dataset
    return synth_dataset(
        SynthSpec(n, d.channels, d.samples, d.sample_rate_hz, d.condition_dim, seed, d.noise_std, d.bumps_per_beat)
    )


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run the full protocol and write all artifacts into ``out_dir``.

    Returns a summary dict with artifact paths and the sweep rows.
    """
    out = Path(out_dir or cfg.output_dir or "flowgen-run")
    (out / "reports").mkdir(parents=True, exist_ok=True)
    seeds = seeds_for(cfg)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    train = _synth(cfg, cfg.dataset.n_signals, seeds["train_data"])
    evalset = _synth(cfg, cfg.dataset.n_eval, seeds["eval_data"])
    if cfg.dataset.standardize:
        train, mean, std = standardize_dataset(train)
        evalset, _, _ = standardize_dataset(evalset, mean, std)
    save_dataset(train, out / "train.fgts")
    save_dataset(evalset, out / "eval.fgts")
    # train and evaluate on exactly what is on disk
    train = load_dataset(out / "train.fgts")
    evalset = load_dataset(out / "eval.fgts")

    m = cfg.model
    init = init_model(
        cfg.dataset.channels,
        cfg.dataset.samples,
        cfg.dataset.condition_dim,
        m.hidden_sizes,
        time_width=m.time_width,
        time_max_freq=m.time_max_freq,
        sample_rate_hz=train.sample_rate_hz,
        seed=seeds["model_init"],
    )
    sched = make_schedule(cfg.schedule.T, cfg.schedule.beta_min, cfg.schedule.beta_max)
    tr = cfg.training
    models = {}
    for method in METHODS:
        opts = TrainOptions(tr.steps, tr.batch_size, tr.lr, seeds[f"train_{method}"], tr.log_every)
        log.info("training %s for %d steps", method, tr.steps)
        if method == "fm":
            model, trace = train_flow(init, train, opts)
            ck = Checkpoint(model, "fm", lr=tr.lr)
        else:
            model, trace = train_ddpm(init, train, sched, opts)
            ck = Checkpoint(model, "ddpm", lr=tr.lr, schedule=(sched.T, cfg.schedule.beta_min, cfg.schedule.beta_max))
        save_model(out / f"{method}.ckpt", ck)
        write_loss_trace(trace, out / f"loss_{method}.csv")
        models[method] = model

    metric_opts = _metric_options(cfg, seeds["metrics"])
    conditions = evalset.conditions

    def sweep_point(method: str, nfe: int):
        start = time.perf_counter()
        if method == "fm":
            gen = batch_generate(models["fm"], conditions, nfe, seeds["sample_fm"], cfg.sampling.integrator)
        else:
            gen = ddpm_batch_generate(models["ddpm"], conditions, sched, nfe, seeds["sample_ddpm"])
        wall_ms = (time.perf_counter() - start) * 1e3
        report = evaluate_all(evalset, gen, metric_opts)
        report.metadata.update(method=method, nfe=nfe)
        (out / "reports" / f"{method}_nfe{nfe:03d}.json").write_text(report.to_json() + "\n")
        log.info("%s nfe=%d %s", method, nfe, {k: round(v, 4) for k, v in report.mean.items()})
        return report, wall_ms

    points = [(method, nfe) for method in METHODS for nfe in sorted(cfg.sampling.nfe_list)]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda mn: sweep_point(*mn), points))

    rows = []
    for (method, nfe), (report, wall_ms) in zip(points, results):
        rows.append({"method": method, "nfe": nfe, **report.mean, "wall_ms": wall_ms})
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["method"], r["nfe"], *(repr(r[k]) for k in METRIC_NAMES), f"{r['wall_ms']:.1f}"])
    top = max(cfg.sampling.nfe_list)
    with open(out / "table1.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "nfe", *METRIC_NAMES])
        for r in rows:
            if r["nfe"] == top:
                w.writerow([r["method"], r["nfe"], *(repr(r[k]) for k in METRIC_NAMES)])
    render_sweep_plot(out / "sweep.csv", out / "figure2.svg")
    return {"output_dir": str(out), "rows": rows, "seeds": seeds}


def degradation(rows: list[dict], method: str, metric: str, nfe: int, ref_nfe: int) -> float:
    """metric(method, nfe) / metric(method, ref_nfe) from sweep rows."""
    value = {(r["method"], r["nfe"]): r[metric] for r in rows}
    return value[(method, nfe)] / value[(method, ref_nfe)]


def read_sweep_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            {"method": r["method"], "nfe": int(r["nfe"]), **{k: float(r[k]) for k in METRIC_NAMES}, "wall_ms": float(r["wall_ms"])}
            for r in reader
        ]


def deterministic_digest(path) -> list[list[str]]:
    """sweep.csv rows with the wall-clock column dropped."""
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]
