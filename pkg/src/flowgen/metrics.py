"""Per-channel fidelity metrics: DTW, feature-space Wasserstein, MMD^2 and spectral similarity.

Every metric is computed channel by channel and then averaged over
channels. Inputs are signal sets: a LabeledDataset, a sequence of
MultiLeadSignal, or an (n, channels, samples) array plus a sample rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import signal as sps

from .errors import ContractViolation
from .signal import STD_FLOOR, LabeledDataset, MultiLeadSignal

FEATURE_NAMES = (
    "mean",
    "std",
    "skewness",
    "excess_kurtosis",
    "min",
    "max",
    "rms",
    "zero_crossing_rate",
    "peak_count",
    "dominant_freq_hz",
    "spectral_centroid_hz",
    "band_power_0_4",
    "band_power_4_15",
    "band_power_15_40",
)
PSD_FEATURES = FEATURE_NAMES[9:]
BANDS_HZ = ((0.0, 4.0), (4.0, 15.0), (15.0, 40.0))
METRIC_NAMES = ("dtw", "wasserstein", "mmd2", "spec_sim")

# cap on pairs * n * m cells held at once by the batched DTW
_DTW_CELL_BUDGET = 1 << 22


# ---------------------------------------------------------------------------
# DTW
# ---------------------------------------------------------------------------

def _local_cost(x, y, local):
    diff = x[..., :, None] - y[..., None, :]
    if local == "sq_euclidean":
        return diff * diff
    if local == "abs":
        return np.abs(diff)
    raise ContractViolation(f"unknown local distance {local!r}")


def dtw_batch(X, Y, local: str = "sq_euclidean") -> np.ndarray:
    """DTW distance for each row pair (X[p], Y[p]); X is (P, n), Y is (P, m).

    Fills the accumulated-cost table one anti-diagonal at a time, which
    vectorises over both the diagonal and the pair axis.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] != Y.shape[0]:
        raise ContractViolation(f"pair count mismatch {X.shape[0]} vs {Y.shape[0]}")
    P, n = X.shape
    m = Y.shape[1]
    if n == 0 or m == 0:
        raise ContractViolation("DTW needs non-empty sequences")
    step = max(1, _DTW_CELL_BUDGET // (n * m))
    if P > step:
        return np.concatenate([dtw_batch(X[i : i + step], Y[i : i + step], local) for i in range(0, P, step)])
    cost = _local_cost(X, Y, local)
    acc = np.full((P, n + 1, m + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[:, i - 1, j], acc[:, i, j - 1]), acc[:, i - 1, j - 1])
        acc[:, i, j] = cost[:, i - 1, j - 1] + best
    return acc[:, n, m]


def dtw_distance(x, y, local: str = "sq_euclidean") -> float:
    """Accumulated cost of the best monotone alignment of two 1-D sequences."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise ContractViolation("DTW needs non-empty sequences")
    return float(dtw_batch(x[None], y[None], local)[0])


# ---------------------------------------------------------------------------
# Wasserstein
# ---------------------------------------------------------------------------

def wasserstein1_1d(a, b) -> float:
    """Exact W1 between two empirical distributions on the real line."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ContractViolation("W1 needs non-empty sample sets")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    grid = np.sort(np.concatenate([a, b]))
    widths = np.diff(grid)
    cdf_a = np.searchsorted(a, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


# ---------------------------------------------------------------------------
# Spectra and features
# ---------------------------------------------------------------------------

def welch_psd(channel, sample_rate_hz: float, segment_len: int = 256, overlap_frac: float = 0.5, window: str = "hann"):
    """One-sided Welch PSD (density scaling). Returns ``(freqs_hz, psd)``.

    Segments are mean-detrended, so ``psd.sum() * df`` approximates the
    signal variance.
    """
    x = np.asarray(channel, dtype=np.float64).ravel()
    if segment_len < 2 or segment_len > x.size:
        raise ContractViolation(f"segment length {segment_len} invalid for a {x.size}-sample signal")
    if not 0.0 <= overlap_frac <= 0.9:
        raise ContractViolation(f"overlap fraction must lie in [0, 0.9], got {overlap_frac}")
    freqs, psd = sps.welch(
        x,
        fs=sample_rate_hz,
        window=window,
        nperseg=segment_len,
        noverlap=int(overlap_frac * segment_len),
        scaling="density",
        detrend="constant",
    )
    return freqs, psd


def _spectral_features(x, fs, segment_len, overlap_frac):
    freqs, psd = welch_psd(x, fs, min(segment_len, x.size), overlap_frac)
    total = psd.sum()
    if total <= 0:
        return [0.0] * len(PSD_FEATURES)
    out = [float(freqs[np.argmax(psd)]), float(np.sum(freqs * psd) / total)]
    for lo, hi in BANDS_HZ:
        out.append(float(psd[(freqs >= lo) & (freqs < hi)].sum() / total))
    return out


def channel_features(x, sample_rate_hz: float, segment_len: int = 256, overlap_frac: float = 0.5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 8:
        raise ContractViolation(f"feature extraction needs >= 8 samples, got {x.size}")
    mean = x.mean()
    centered = x - mean
    std = np.sqrt(np.mean(centered**2))
    if std > STD_FLOOR:
        z = centered / std
        skew = np.mean(z**3)
        kurt = np.mean(z**4) - 3.0
    else:
        skew = kurt = 0.0
    rms = np.sqrt(np.mean(x**2))
    zcr = np.count_nonzero(centered[:-1] * centered[1:] < 0) / (x.size - 1)
    inner = x[1:-1]
    peaks = np.count_nonzero((inner > x[:-2]) & (inner >= x[2:]) & (inner > mean + std))
    head = [mean, std, skew, kurt, x.min(), x.max(), rms, zcr, float(peaks)]
    return np.array(head + _spectral_features(x, sample_rate_hz, segment_len, overlap_frac))


def extract_features(s: MultiLeadSignal, segment_len: int = 256, overlap_frac: float = 0.5) -> np.ndarray:
    """Feature matrix of shape (channels, len(FEATURE_NAMES))."""
    return np.stack([channel_features(ch, s.sample_rate_hz, segment_len, overlap_frac) for ch in s.data])


# ---------------------------------------------------------------------------
# Set-level metrics
# ---------------------------------------------------------------------------

def as_signal_array(signals, sample_rate_hz: float | None = None):
    """Normalise a signal set to ``(array (n, C, S), sample_rate_hz)``."""
    if isinstance(signals, LabeledDataset):
        return signals.array, signals.sample_rate_hz
    if isinstance(signals, np.ndarray):
        if signals.ndim != 3 or signals.shape[0] == 0:
            raise ContractViolation(f"expected a non-empty (n, channels, samples) array, got {signals.shape}")
        if sample_rate_hz is None:
            raise ContractViolation("raw arrays need an explicit sample rate")
        return np.asarray(signals, dtype=np.float64), float(sample_rate_hz)
    signals = list(signals)
    if not signals:
        raise ContractViolation("signal set must be non-empty")
    rates = {s.sample_rate_hz for s in signals}
    shapes = {s.data.shape for s in signals}
    if len(rates) != 1 or len(shapes) != 1:
        raise ContractViolation(f"signal set is not homogeneous: shapes {shapes}, rates {rates}")
    return np.stack([s.data for s in signals]), rates.pop()


def _pair_up(real, gen, fs_r, fs_g):
    r, fs_r = as_signal_array(real, fs_r)
    g, fs_g = as_signal_array(gen, fs_g)
    if r.shape[1:] != g.shape[1:]:
        raise ContractViolation(f"shape mismatch: real {r.shape[1:]} vs generated {g.shape[1:]}")
    if fs_r != fs_g:
        raise ContractViolation(f"sample rate mismatch: real {fs_r} vs generated {fs_g}")
    return r, g, fs_r


def _feature_tensor(arr, fs, segment_len, overlap_frac, psd_only=False):
    n, C, _ = arr.shape
    fn = _spectral_features if psd_only else channel_features
    width = len(PSD_FEATURES) if psd_only else len(FEATURE_NAMES)
    out = np.empty((C, n, width))
    for c in range(C):
        for i in range(n):
            out[c, i] = fn(arr[i, c], fs, segment_len, overlap_frac)
    return out


def _w1_per_dim(fr, fg):
    return np.array([wasserstein1_1d(fr[:, k], fg[:, k]) for k in range(fr.shape[1])])


def wasserstein_metric(real, gen, *, segment_len=256, overlap_frac=0.5, sample_rate_hz=None):
    """Per-channel mean over feature dimensions of W1 between real and generated feature samples.

    Returns ``(per_channel, mean)``.
    """
    r, g, fs = _pair_up(real, gen, sample_rate_hz, sample_rate_hz)
    fr = _feature_tensor(r, fs, segment_len, overlap_frac)
    fg = _feature_tensor(g, fs, segment_len, overlap_frac)
    per_channel = np.array([_w1_per_dim(fr[c], fg[c]).mean() for c in range(r.shape[1])])
    return per_channel, float(per_channel.mean())


def spectral_similarity(real, gen, *, segment_len=256, overlap_frac=0.5, sample_rate_hz=None):
    """1 / (1 + mean W1 over PSD summary features), per channel. Returns ``(per_channel, mean)``."""
    r, g, fs = _pair_up(real, gen, sample_rate_hz, sample_rate_hz)
    fr = _feature_tensor(r, fs, segment_len, overlap_frac, psd_only=True)
    fg = _feature_tensor(g, fs, segment_len, overlap_frac, psd_only=True)
    per_channel = np.array([1.0 / (1.0 + _w1_per_dim(fr[c], fg[c]).mean()) for c in range(r.shape[1])])
    return per_channel, float(per_channel.mean())


def _sq_dists(A, B):
    d = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def median_bandwidth(X, Y) -> float:
    """Median pairwise Euclidean distance over the pooled sample; 1.0 if that is zero."""
    Z = np.vstack([X, Y])
    iu = np.triu_indices(Z.shape[0], k=1)
    d = np.sqrt(_sq_dists(Z, Z)[iu])
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def mmd2(X, Y, kernel: str = "rbf", bandwidth: float | None = None) -> float:
    """Biased (V-statistic) squared MMD between sample sets X (m, d) and Y (n, d).

    RBF kernel k(x, y) = exp(-|x - y|^2 / (2 sigma^2)); sigma defaults to
    the pooled median heuristic.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ContractViolation("MMD needs non-empty sample sets")
    if X.shape[1] != Y.shape[1]:
        raise ContractViolation(f"dimension mismatch {X.shape[1]} vs {Y.shape[1]}")
    if kernel == "linear":
        kxx, kyy, kxy = X @ X.T, Y @ Y.T, X @ Y.T
    elif kernel == "rbf":
        sigma = median_bandwidth(X, Y) if bandwidth is None else float(bandwidth)
        if not sigma > 0:
            raise ContractViolation(f"bandwidth must be positive, got {sigma}")
        g = 1.0 / (2.0 * sigma * sigma)
        kxx = np.exp(-g * _sq_dists(X, X))
        kyy = np.exp(-g * _sq_dists(Y, Y))
        kxy = np.exp(-g * _sq_dists(X, Y))
    else:
        raise ContractViolation(f"unknown kernel {kernel!r}")
    return float(kxx.mean() + kyy.mean() - 2.0 * kxy.mean())


@dataclass(frozen=True)
class MetricOptions:
    dtw_local: str = "sq_euclidean"
    dtw_pairing: str = "aligned"
    mmd_kernel: str = "rbf"
    mmd_bandwidth: float | None = None
    welch_segment: int = 256
    welch_overlap: float = 0.5
    seed: int = 0

    def validate(self):
        problems = []
        if self.dtw_local not in ("sq_euclidean", "abs"):
            problems.append(f"dtw_local must be sq_euclidean or abs, got {self.dtw_local!r}")
        if self.dtw_pairing not in ("aligned", "best_match"):
            problems.append(f"dtw_pairing must be aligned or best_match, got {self.dtw_pairing!r}")
        if self.mmd_kernel not in ("rbf", "linear"):
            problems.append(f"mmd_kernel must be rbf or linear, got {self.mmd_kernel!r}")
        if self.mmd_bandwidth is not None and not self.mmd_bandwidth > 0:
            problems.append("mmd_bandwidth must be positive")
        if self.welch_segment < 2:
            problems.append("welch_segment must be >= 2")
        if not 0 <= self.welch_overlap <= 0.9:
            problems.append("welch_overlap must lie in [0, 0.9]")
        return problems


def dtw_pairs(n_real: int, n_gen: int, seed: int):
    """Index pairs for DTW: position-aligned, with a seeded subsample of the larger set."""
    n = min(n_real, n_gen)
    rng = np.random.default_rng(seed)
    ri = np.sort(rng.choice(n_real, size=n, replace=False)) if n_real > n else np.arange(n)
    gi = np.sort(rng.choice(n_gen, size=n, replace=False)) if n_gen > n else np.arange(n)
    return ri, gi


def dtw_metric(real, gen, *, local="sq_euclidean", pairing="aligned", seed=0, sample_rate_hz=None):
    """Per-channel mean DTW over real/generated pairs. Returns ``(per_channel, mean)``."""
    r, g, _ = _pair_up(real, gen, sample_rate_hz, sample_rate_hz)
    C = r.shape[1]
    per_channel = np.empty(C)
    if pairing == "aligned":
        ri, gi = dtw_pairs(r.shape[0], g.shape[0], seed)
        for c in range(C):
            per_channel[c] = dtw_batch(r[ri, c], g[gi, c], local).mean()
    elif pairing == "best_match":
        for c in range(C):
            best = []
            for k in range(g.shape[0]):
                rep = np.broadcast_to(g[k, c], (r.shape[0], g.shape[2]))
                best.append(dtw_batch(r[:, c], rep, local).min())
            per_channel[c] = np.mean(best)
    else:
        raise ContractViolation(f"unknown DTW pairing {pairing!r}")
    return per_channel, float(per_channel.mean())


@dataclass
class MetricReport:
    per_channel: dict[str, list[float]]
    mean: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {name: {"per_channel": list(self.per_channel[name]), "mean": self.mean[name]} for name in METRIC_NAMES}
        out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            {k: list(d[k]["per_channel"]) for k in METRIC_NAMES},
            {k: float(d[k]["mean"]) for k in METRIC_NAMES},
            dict(d.get("metadata", {})),
        )

    def csv_header(self) -> list[str]:
        return list(METRIC_NAMES)

    def csv_row(self) -> list[str]:
        return [repr(self.mean[k]) for k in METRIC_NAMES]


# JSON schema for a serialised MetricReport.
REPORT_SCHEMA = {
    "type": "object",
    "required": [*METRIC_NAMES, "metadata"],
    "properties": {
        **{
            name: {
                "type": "object",
                "required": ["per_channel", "mean"],
                "properties": {
                    "per_channel": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "mean": {"type": "number"},
                },
                "additionalProperties": False,
            }
            for name in METRIC_NAMES
        },
        "metadata": {"type": "object"},
    },
    "additionalProperties": False,
}


def evaluate_all(real, gen, opts: MetricOptions | None = None, sample_rate_hz=None) -> MetricReport:
    """Compute all four metrics per channel for one (real, generated) pair of signal sets."""
    opts = opts or MetricOptions()
    problems = opts.validate()
    if problems:
        raise ContractViolation("; ".join(problems))
    r, g, fs = _pair_up(real, gen, sample_rate_hz, sample_rate_hz)
    C = r.shape[1]
    kw = dict(segment_len=opts.welch_segment, overlap_frac=opts.welch_overlap, sample_rate_hz=fs)
    dtw_pc, _ = dtw_metric(r, g, local=opts.dtw_local, pairing=opts.dtw_pairing, seed=opts.seed, sample_rate_hz=fs)
    w_pc, _ = wasserstein_metric(r, g, **kw)
    s_pc, _ = spectral_similarity(r, g, **kw)
    m_pc = np.array([mmd2(r[:, c], g[:, c], opts.mmd_kernel, opts.mmd_bandwidth) for c in range(C)])
    per = {"dtw": dtw_pc, "wasserstein": w_pc, "mmd2": m_pc, "spec_sim": s_pc}
    meta = {
        "n_real": int(r.shape[0]),
        "n_gen": int(g.shape[0]),
        "channels": int(C),
        "samples": int(r.shape[2]),
        "sample_rate_hz": fs,
        "options": asdict(opts),
        "features": list(FEATURE_NAMES),
    }
    return MetricReport(
        {k: [float(v) for v in per[k]] for k in METRIC_NAMES},
        {k: float(np.mean(per[k])) for k in METRIC_NAMES},
        meta,
    )
