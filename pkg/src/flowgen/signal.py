"""Signal containers, limb-lead algebra, a synthetic ECG source and dataset I/O."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ContractViolation,
    FormatError,
    MagicMismatchError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

EIGHT_LEAD = ("I", "II", "V1", "V2", "V3", "V4", "V5", "V6")
TWELVE_LEAD = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")

DATASET_MAGIC = b"FGTS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHIHIfH")

# Degenerate-channel threshold shared with the moment features in metrics.
STD_FLOOR = 1e-12


def default_lead_names(channels: int) -> tuple[str, ...]:
    if channels == len(EIGHT_LEAD):
        return EIGHT_LEAD
    if channels == len(TWELVE_LEAD):
        return TWELVE_LEAD
    return tuple(f"ch{i}" for i in range(channels))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MultiLeadSignal:
    """A channels x samples amplitude matrix.

    ``data`` is copied to a read-only float64 array on construction.
    """

    data: np.ndarray
    sample_rate_hz: float
    lead_names: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ContractViolation(f"signal data must be 2-D (channels, samples), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 2:
            raise ContractViolation(f"signal needs >=1 channel and >=2 samples, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractViolation("signal contains non-finite values")
        rate = float(self.sample_rate_hz)
        if not (rate > 0 and np.isfinite(rate)):
            raise ContractViolation(f"sample rate must be positive, got {self.sample_rate_hz}")
        names = default_lead_names(data.shape[0]) if self.lead_names is None else tuple(self.lead_names)
        if len(names) != data.shape[0]:
            raise ContractViolation(f"{len(names)} lead names for {data.shape[0]} channels")
        if len(set(names)) != len(names):
            raise ContractViolation(f"lead names are not unique: {names}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "sample_rate_hz", rate)
        object.__setattr__(self, "lead_names", names)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.lead_names.index(name)]


@dataclass(frozen=True, eq=False)
class ConditionVector:
    """Binary label vector steering generation."""

    bits: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.bits)
        if raw.ndim != 1 or raw.size == 0:
            raise ContractViolation(f"condition must be a non-empty 1-D vector, got shape {raw.shape}")
        if not np.all((raw == 0) | (raw == 1)):
            raise ContractViolation("condition entries must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(raw.astype(np.uint8)))

    @property
    def dim(self) -> int:
        return self.bits.size

    @classmethod
    def from_active(cls, dim: int, active: Sequence[int]) -> "ConditionVector":
        bits = np.zeros(dim, dtype=np.uint8)
        bits[list(active)] = 1
        return cls(bits)

    def __eq__(self, other):
        return isinstance(other, ConditionVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    signals: tuple[MultiLeadSignal, ...]
    conditions: tuple[ConditionVector, ...]

    def __post_init__(self):
        signals = tuple(self.signals)
        conditions = tuple(self.conditions)
        if not signals:
            raise ContractViolation("dataset must hold at least one signal")
        if len(signals) != len(conditions):
            raise ContractViolation(f"{len(signals)} signals but {len(conditions)} conditions")
        first = signals[0]
        for i, s in enumerate(signals):
            if s.data.shape != first.data.shape or s.sample_rate_hz != first.sample_rate_hz:
                raise ContractViolation(
                    f"signal {i} has shape {s.data.shape} @ {s.sample_rate_hz} Hz, "
                    f"expected {first.data.shape} @ {first.sample_rate_hz} Hz"
                )
        dims = {c.dim for c in conditions}
        if len(dims) != 1:
            raise ContractViolation(f"conditions have mixed widths {sorted(dims)}")
        object.__setattr__(self, "signals", signals)
        object.__setattr__(self, "conditions", conditions)

    @classmethod
    def from_arrays(cls, data, conditions, sample_rate_hz, lead_names=None) -> "LabeledDataset":
        data = np.asarray(data, dtype=np.float64)
        conditions = np.asarray(conditions)
        if data.ndim != 3:
            raise ContractViolation(f"expected (n, channels, samples) array, got shape {data.shape}")
        return cls(
            tuple(MultiLeadSignal(d, sample_rate_hz, lead_names) for d in data),
            tuple(ConditionVector(c) for c in conditions),
        )

    def __len__(self) -> int:
        return len(self.signals)

    @property
    def shape(self) -> tuple[int, int]:
        return self.signals[0].data.shape

    @property
    def sample_rate_hz(self) -> float:
        return self.signals[0].sample_rate_hz

    @property
    def condition_dim(self) -> int:
        return self.conditions[0].dim

    @property
    def lead_names(self) -> tuple[str, ...]:
        return self.signals[0].lead_names

    @cached_property
    def array(self) -> np.ndarray:
        """All signals stacked as (n, channels, samples)."""
        return _frozen(np.stack([s.data for s in self.signals]))

    @cached_property
    def condition_matrix(self) -> np.ndarray:
        return _frozen(np.stack([c.bits for c in self.conditions]).astype(np.float64))


# ---------------------------------------------------------------------------
# Lead algebra
# ---------------------------------------------------------------------------

def reconstruct_twelve_lead(eight: MultiLeadSignal) -> MultiLeadSignal:
    """Derive III, aVR, aVL and aVF from leads I and II.

    Input must carry exactly the leads I, II, V1..V6 in that order. The
    eight input rows are copied through untouched.
    """
    if eight.lead_names != EIGHT_LEAD:
        raise ContractViolation(f"expected leads {EIGHT_LEAD}, got {eight.lead_names}")
    lead_i, lead_ii = eight.data[0], eight.data[1]
    lead_iii = lead_ii - lead_i
    avl = (lead_i - lead_iii) / 2
    avf = (lead_ii + lead_iii) / 2
    avr = -(lead_i + lead_ii) / 2
    out = np.vstack([lead_i, lead_ii, lead_iii, avr, avl, avf, eight.data[2:]])
    return MultiLeadSignal(out, eight.sample_rate_hz, TWELVE_LEAD)


def normalize_per_channel(s: MultiLeadSignal) -> MultiLeadSignal:
    """Zero-mean, unit population-std per channel; flat channels are only centered."""
    centered = s.data - s.data.mean(axis=1, keepdims=True)
    std = centered.std(axis=1, keepdims=True)
    scale = np.where(std > STD_FLOOR, std, 1.0)
    return MultiLeadSignal(centered / scale, s.sample_rate_hz, s.lead_names)


def standardize_dataset(ds: LabeledDataset, mean=None, std=None):
    """Dataset-level per-channel standardization.

    Statistics are pooled over all signals and samples unless given, so the
    same transform can be applied to a held-out set. Returns
    ``(standardized, mean, std)`` with mean/std of shape (channels,).
    """
    arr = ds.array
    if mean is None:
        mean = arr.mean(axis=(0, 2))
    if std is None:
        std = arr.std(axis=(0, 2))
    mean = np.asarray(mean, dtype=np.float64)
    std = np.where(np.asarray(std, dtype=np.float64) > STD_FLOOR, std, 1.0)
    out = (arr - mean[None, :, None]) / std[None, :, None]
    return LabeledDataset.from_arrays(out, ds.condition_matrix, ds.sample_rate_hz, ds.lead_names), mean, std


# ---------------------------------------------------------------------------
# Synthetic source
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_signals: int
    channels: int = 8
    samples: int = 1000
    sample_rate_hz: float = 100.0
    condition_dim: int = 8
    rng_seed: int = 0
    noise_std: float = 0.02
    bumps_per_beat: int = 3

    def validate(self):
        problems = []
        for name in ("n_signals", "channels", "samples", "condition_dim"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be positive")
        if self.samples < 2:
            problems.append("samples must be >= 2")
        if not self.sample_rate_hz > 0:
            problems.append("sample_rate_hz must be positive")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        if self.bumps_per_beat not in (1, 2, 3):
            problems.append("bumps_per_beat must be 1, 2 or 3")
        if problems:
            raise ContractViolation("; ".join(problems))


# (name, offset in RR-scaled seconds, base amplitude, base width in s, axis angle)
_WAVES = (
    ("QRS", 0.0, 1.0, 0.018, 1.0),
    ("T", 0.28, 0.3, 0.06, 0.7),
    ("P", -0.16, 0.15, 0.03, 0.9),
)


@dataclass(frozen=True)
class SignalPlan:
    """Everything needed to render one noiseless synthetic signal in closed form.

    ``gains[c, w] * amps[w] * exp(-(t - beat - offsets[w])**2 / (2 * widths[w]**2))``
    summed over beats and waves gives channel ``c``.
    """

    beat_times: np.ndarray
    offsets: np.ndarray
    amps: np.ndarray
    widths: np.ndarray
    gains: np.ndarray
    active: tuple[int, ...]


def _class_profile(bit: int) -> np.ndarray:
    # heart rate (bpm), QRS scale, T scale (may invert), P scale, width scale
    rng = np.random.default_rng([0x5EED, bit])
    return np.array([
        rng.uniform(55.0, 115.0),
        rng.uniform(0.6, 1.4),
        rng.uniform(-0.8, 1.4),
        rng.uniform(0.0, 1.4),
        rng.uniform(0.8, 1.4),
    ])


def draw_plans(spec: SynthSpec) -> list[SignalPlan]:
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    duration = spec.samples / spec.sample_rate_hz
    waves = _WAVES[: spec.bumps_per_beat]
    lead_angles = 2 * np.pi * np.arange(spec.channels) / spec.channels
    plans = []
    for _ in range(spec.n_signals):
        n_active = 1 if spec.condition_dim == 1 else int(rng.integers(1, 3))
        active = tuple(sorted(rng.choice(spec.condition_dim, size=n_active, replace=False).tolist()))
        hr, qrs_s, t_s, p_s, w_s = np.mean([_class_profile(b) for b in active], axis=0)
        rr = 60.0 / (hr * rng.uniform(0.93, 1.07))
        scale = {"QRS": qrs_s, "T": t_s, "P": p_s}
        offsets = np.array([w[1] * np.sqrt(rr) for w in waves])
        amps = np.array([w[2] * scale[w[0]] * rng.uniform(0.9, 1.1) for w in waves])
        widths = np.array([w[3] * w_s * rng.uniform(0.9, 1.1) for w in waves])
        axis_jitter = rng.uniform(-0.2, 0.2)
        axes = np.array([w[4] for w in waves]) + axis_jitter
        gains = 0.4 + 0.6 * np.cos(lead_angles[:, None] - axes[None, :])
        first = rng.uniform(0.0, rr)
        n_beats = int(np.ceil((duration + rr - first) / rr)) + 1
        beat_times = first - rr + rr * np.arange(n_beats + 1)
        plans.append(SignalPlan(beat_times, offsets, amps, widths, gains, active))
    return plans


def render_plan(plan: SignalPlan, samples: int, sample_rate_hz: float) -> np.ndarray:
    t = np.arange(samples) / sample_rate_hz
    out = np.zeros((plan.gains.shape[0], samples))
    for beat in plan.beat_times:
        for w in range(plan.amps.size):
            bump = plan.amps[w] * np.exp(-((t - (beat + plan.offsets[w])) ** 2) / (2 * plan.widths[w] ** 2))
            out += plan.gains[:, w : w + 1] * bump[None, :]
    return out


def synth_dataset(spec: SynthSpec) -> LabeledDataset:
    """Deterministic labeled dataset of Gaussian-bump pseudo-ECGs.

    Each active condition bit selects a class profile (heart rate, wave
    amplitudes, widths); signals with two active bits blend two profiles.
    """
    plans = draw_plans(spec)
    noise_rng = np.random.default_rng([spec.rng_seed, 1])
    data = np.empty((spec.n_signals, spec.channels, spec.samples))
    for i, plan in enumerate(plans):
        data[i] = render_plan(plan, spec.samples, spec.sample_rate_hz)
    if spec.noise_std > 0:
        data += noise_rng.normal(0.0, spec.noise_std, size=data.shape)
    conds = np.zeros((spec.n_signals, spec.condition_dim), dtype=np.uint8)
    for i, plan in enumerate(plans):
        conds[i, list(plan.active)] = 1
    return LabeledDataset.from_arrays(data, conds, spec.sample_rate_hz)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def save_dataset(ds: LabeledDataset, path) -> None:
    """Write ``ds`` in the FGTS binary layout (amplitudes as float32)."""
    n = len(ds)
    channels, samples = ds.shape
    header = _HEADER.pack(
        DATASET_MAGIC, DATASET_VERSION, n, channels, samples, ds.sample_rate_hz, ds.condition_dim
    )
    amps = ds.array.astype("<f4").reshape(n, -1)
    bits = ds.condition_matrix.astype(np.uint8)
    rows = np.concatenate([amps.view(np.uint8), bits], axis=1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rows.tobytes())


def load_dataset(path) -> LabeledDataset:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated ({len(blob)} of {_HEADER.size} bytes)")
    _, version, n, channels, samples, rate, cdim = _HEADER.unpack_from(blob)
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"{path}: dataset format version {version}, expected {DATASET_VERSION}")
    if n == 0 or channels == 0 or samples < 2 or cdim == 0:
        raise ShapeMismatchError(
            f"{path}: degenerate header shape n={n} channels={channels} samples={samples} condition_dim={cdim}"
        )
    if not (rate > 0 and np.isfinite(rate)):
        raise ShapeMismatchError(f"{path}: invalid sample rate {rate}")
    row = channels * samples * 4 + cdim
    payload = blob[_HEADER.size :]
    if len(payload) < n * row:
        raise TruncatedPayloadError(
            f"{path}: header declares {n} signals but payload holds {len(payload) // row} "
            f"({len(payload)} of {n * row} bytes)"
        )
    if len(payload) > n * row:
        raise ShapeMismatchError(f"{path}: {len(payload) - n * row} trailing bytes after {n} signals")
    rows = np.frombuffer(payload, dtype=np.uint8).reshape(n, row)
    amps = rows[:, : row - cdim].copy().view("<f4").reshape(n, channels, samples)
    bits = rows[:, row - cdim :]
    if not np.all(np.isfinite(amps)):
        raise FormatError(f"{path}: non-finite amplitude in payload")
    if np.any(bits > 1):
        raise FormatError(f"{path}: condition bytes must be 0 or 1")
    return LabeledDataset.from_arrays(amps.astype(np.float64), bits, float(rate))


def read_csv_signal(path, sample_rate_hz: float) -> MultiLeadSignal:
    """One signal per file: header row of lead names, one column per channel."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise FormatError(f"{path}: need at least 2 samples, found {len(rows)}")
    return MultiLeadSignal(np.array(rows).T, sample_rate_hz, header)


def import_csv(paths, sample_rate_hz: float, conditions: Sequence[ConditionVector]) -> LabeledDataset:
    signals = [read_csv_signal(p, sample_rate_hz) for p in paths]
    return LabeledDataset(tuple(signals), tuple(conditions))
