import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from flowgen.errors import ContractViolation
from flowgen.metrics import (
    FEATURE_NAMES,
    METRIC_NAMES,
    MetricOptions,
    MetricReport,
    dtw_batch,
    dtw_distance,
    dtw_metric,
    evaluate_all,
    extract_features,
    median_bandwidth,
    mmd2,
    spectral_similarity,
    wasserstein1_1d,
    wasserstein_metric,
    welch_psd,
)
from flowgen.signal import MultiLeadSignal, SynthSpec, synth_dataset
from oracles import dtw_exhaustive, median_heuristic_naive, mmd2_naive, w1_transport_lp

FI = {name: k for k, name in enumerate(FEATURE_NAMES)}


def sine(freq, n=1000, fs=100.0, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs + phase)


class TestDTW:
    def test_identity_and_hand_cases(self):
        x = [0.3, -1.0, 2.5]
        assert dtw_distance(x, x, "abs") == 0.0
        assert dtw_distance(x, x, "sq_euclidean") == 0.0
        assert dtw_distance([0, 1, 2], [0, 2], "abs") == 1.0
        assert dtw_distance([1], [3], "sq_euclidean") == 4.0

    def test_empty(self):
        with pytest.raises(ContractViolation):
            dtw_distance([], [1.0])

    @pytest.mark.parametrize("local", ["sq_euclidean", "abs"])
    def test_exhaustive_small_lengths(self, local):
        # all sequences over {0,1,2} with lengths 1..3 against each other, both directions
        seqs = [s for n in range(1, 4) for s in itertools.product((0, 1, 2), repeat=n)]
        for x in seqs:
            for y in seqs:
                assert dtw_distance(x, y, local) == dtw_exhaustive(x, y, local)

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(st.integers(0, 2), min_size=1, max_size=6),
        st.lists(st.integers(0, 2), min_size=1, max_size=6),
        st.sampled_from(["sq_euclidean", "abs"]),
    )
    def test_exhaustive_up_to_six(self, x, y, local):
        assert dtw_distance(x, y, local) == dtw_exhaustive(x, y, local)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(2, 7, 12))
        out = dtw_batch(X, Y)
        assert out.tolist() == [dtw_distance(a, b) for a, b in zip(X, Y)]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_symmetric_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=rng.integers(1, 15)), rng.normal(size=rng.integers(1, 15))
        for local in ("sq_euclidean", "abs"):
            d = dtw_distance(x, y, local)
            assert d >= 0
            assert d == pytest.approx(dtw_distance(y, x, local), rel=1e-12)


class TestW1:
    def test_hand_cases(self):
        assert wasserstein1_1d([1, 2, 3], [3, 1, 2]) == 0.0
        assert wasserstein1_1d([0], [1]) == 1.0
        assert wasserstein1_1d([0, 1], [1, 2]) == 1.0

    def test_empty(self):
        with pytest.raises(ContractViolation):
            wasserstein1_1d([], [1.0])

    @pytest.mark.parametrize("seed", range(60))
    def test_transport_lp(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=rng.integers(1, 7))
        b = rng.normal(size=rng.integers(1, 7)) + rng.normal()
        assert abs(wasserstein1_1d(a, b) - w1_transport_lp(a, b)) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10**6))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.normal(size=rng.integers(1, 20)) for _ in range(3))
        shift = rng.normal()
        ab = wasserstein1_1d(a, b)
        assert ab == pytest.approx(wasserstein1_1d(b, a), abs=1e-12)
        assert ab <= wasserstein1_1d(a, c) + wasserstein1_1d(c, b) + 1e-9
        assert wasserstein1_1d(a + shift, b + shift) == pytest.approx(ab, abs=1e-9)
        assert ab == pytest.approx(wasserstein_distance(a, b), abs=1e-12)


class TestFeatures:
    def test_constant_channel(self):
        f = extract_features(MultiLeadSignal(np.full((1, 64), -3.0), 100.0))[0]
        assert f[FI["std"]] == 0.0
        assert f[FI["rms"]] == 3.0
        assert f[FI["zero_crossing_rate"]] == 0.0
        assert f[FI["skewness"]] == 0.0 and f[FI["excess_kurtosis"]] == 0.0
        assert np.all(np.isfinite(f))

    def test_sine(self):
        f = extract_features(MultiLeadSignal(sine(5.0)[None], 100.0))[0]
        assert abs(f[FI["dominant_freq_hz"]] - 5.0) <= 100.0 / 256
        assert f[FI["band_power_4_15"]] > 0.95
        assert f[FI["std"]] == pytest.approx(1 / math.sqrt(2), rel=1e-3)

    def test_length_and_bands(self):
        rng = np.random.default_rng(0)
        f = extract_features(MultiLeadSignal(rng.normal(size=(3, 500)), 100.0))
        assert f.shape == (3, len(FEATURE_NAMES))
        bands = f[:, FI["band_power_0_4"] :]
        assert np.all((bands >= 0) & (bands <= 1))
        assert np.all(bands.sum(axis=1) <= 1 + 1e-12)

    def test_duplication_invariance(self):
        # whole numbers of cycles, so the concatenation has no seam; long enough that
        # one extra crossing or Welch variance stays well under 1%
        n = 2048
        rng = np.random.default_rng(1)
        x = sine(64 * 100 / n, n) + 0.3 * sine(224 * 100 / n, n) + 0.05 * rng.normal(size=n)
        a = extract_features(MultiLeadSignal(x[None], 100.0))[0]
        b = extract_features(MultiLeadSignal(np.concatenate([x, x])[None], 100.0))[0]
        normalized = [k for k, name in enumerate(FEATURE_NAMES) if name != "peak_count"]
        rel = np.abs(a[normalized] - b[normalized]) / np.maximum(np.abs(a[normalized]), 1e-9)
        assert np.all(rel < 0.01), dict(zip(np.array(FEATURE_NAMES)[normalized], rel))
        assert abs(b[FI["peak_count"]] - 2 * a[FI["peak_count"]]) <= 1

    def test_too_short(self):
        with pytest.raises(ContractViolation):
            extract_features(MultiLeadSignal(np.zeros((1, 7)), 100.0))


class TestPSD:
    def test_zero_signal(self):
        _, p = welch_psd(np.zeros(300), 100.0)
        assert not np.any(p)

    def test_sine_peak(self):
        f, p = welch_psd(sine(5.0), 100.0, 256)
        assert f[np.argmax(p)] == f[np.argmin(np.abs(f - 5.0))]

    @pytest.mark.parametrize("seed", range(5))
    def test_parseval(self, seed):
        rng = np.random.default_rng(seed)
        x = np.convolve(rng.normal(size=4000), np.ones(5) / 5, mode="same") + sine(7.0, 4000)
        f, p = welch_psd(x, 100.0)
        assert p.sum() * (f[1] - f[0]) == pytest.approx(x.var(), rel=0.05)

    def test_segment_longer_than_signal(self):
        with pytest.raises(ContractViolation):
            welch_psd(np.zeros(100), 100.0, 256)


class TestMMD:
    def test_identity(self):
        X = np.random.default_rng(0).normal(size=(20, 5))
        assert abs(mmd2(X, X)) <= 1e-12

    def test_single_pair_closed_form(self):
        sigma = 0.7
        x = np.zeros((1, 2))
        y = np.array([[sigma * math.sqrt(2), 0.0]])
        assert mmd2(x, y, bandwidth=sigma) == pytest.approx(2 - 2 * math.exp(-1), abs=1e-14)
        assert 2 - 2 * math.exp(-1) == pytest.approx(1.264241, abs=1e-6)

    @pytest.mark.parametrize("seed", range(60))
    def test_naive_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(rng.integers(1, 9), d)).tolist()
        Y = (rng.normal(size=(rng.integers(1, 9), d)) + rng.normal()).tolist()
        sigma = median_heuristic_naive(X, Y)
        assert median_bandwidth(np.array(X), np.array(Y)) == pytest.approx(sigma, rel=1e-12)
        assert abs(mmd2(X, Y) - mmd2_naive(X, Y, sigma)) < 1e-10

    @pytest.mark.parametrize("seed", range(10))
    def test_linear_kernel_identity(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(13, 4)), rng.normal(size=(7, 4)) + 0.5
        diff = X.mean(axis=0) - Y.mean(axis=0)
        assert abs(mmd2(X, Y, "linear") - diff @ diff) < 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_nonnegative_and_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = rng.normal(size=(6, 3)), rng.normal(size=(5, 3))
        v = mmd2(X, Y)
        assert v >= 0
        sigma = median_bandwidth(X, Y)
        assert mmd2(X[::-1], Y[rng.permutation(5)], bandwidth=sigma) == pytest.approx(v, abs=1e-12)


@pytest.fixture(scope="module")
def structured():
    return synth_dataset(SynthSpec(12, channels=2, samples=128, sample_rate_hz=50.0, condition_dim=3, rng_seed=2))


class TestSetMetrics:
    def test_identity_report(self, structured):
        rep = evaluate_all(structured, structured)
        assert rep.mean["dtw"] == 0.0
        assert rep.mean["wasserstein"] == 0.0
        assert rep.mean["mmd2"] <= 1e-12
        assert rep.mean["spec_sim"] == 1.0

    def test_means_are_channel_averages(self, structured):
        rng = np.random.default_rng(0)
        gen = structured.array + 0.2 * rng.normal(size=structured.array.shape)
        rep = evaluate_all(structured, gen, sample_rate_hz=50.0)
        for name in METRIC_NAMES:
            assert rep.mean[name] == pytest.approx(np.mean(rep.per_channel[name]), rel=1e-15)
        assert rep.metadata["n_real"] == 12 and rep.metadata["channels"] == 2
        assert MetricReport.from_dict(rep.to_dict()).mean == rep.mean

    def test_white_noise_worse(self, structured):
        ident = evaluate_all(structured, structured)
        noise = np.random.default_rng(3).normal(size=structured.array.shape)
        rep = evaluate_all(structured, noise, sample_rate_hz=50.0)
        assert rep.mean["dtw"] > ident.mean["dtw"]
        assert rep.mean["wasserstein"] > ident.mean["wasserstein"]
        assert rep.mean["mmd2"] > ident.mean["mmd2"]
        assert rep.mean["spec_sim"] < ident.mean["spec_sim"]

    def test_amplitude_shift_recomputed(self, structured):
        arr = structured.array
        per, _ = wasserstein_metric(arr, arr + 1.0, sample_rate_hz=50.0)
        # only mean, min, max (each moved by exactly 1) and RMS change under a shift
        for c in range(arr.shape[1]):
            rms_r = np.sqrt(np.mean(arr[:, c] ** 2, axis=1))
            rms_g = np.sqrt(np.mean((arr[:, c] + 1.0) ** 2, axis=1))
            expected = (3.0 + wasserstein_distance(rms_r, rms_g)) / len(FEATURE_NAMES)
            assert per[c] > 0
            assert per[c] == pytest.approx(expected, rel=1e-9)

    def test_symmetry(self, structured):
        noise = np.random.default_rng(4).normal(size=structured.array.shape)
        a, _ = wasserstein_metric(structured.array, noise, sample_rate_hz=50.0)
        b, _ = wasserstein_metric(noise, structured.array, sample_rate_hz=50.0)
        assert np.allclose(a, b, rtol=1e-12, atol=0)

    def test_spectral_similarity_monotone_in_shift(self):
        fs, n = 100.0, 1000
        rng = np.random.default_rng(5)
        phases = rng.uniform(0, 2 * np.pi, 10)
        real = np.stack([sine(5.0, n, fs, phase=p)[None] for p in phases])
        scores = []
        for shift in np.arange(0.0, 10.5, 1.0):
            gen = np.stack([sine(5.0 + shift, n, fs, phase=p)[None] for p in phases])
            scores.append(spectral_similarity(real, gen, sample_rate_hz=fs)[1])
        assert scores[0] == 1.0
        assert np.all(np.diff(scores) < 0), scores

    def test_spec_sim_formula(self):
        # one PSD feature dimension moved by W: score is 1 / (1 + W / 5)
        x = sine(5.0)[None, None]
        _, s = spectral_similarity(x, x, sample_rate_hz=100.0)
        assert s == 1.0

    def test_dtw_pairing_options(self, structured):
        arr = structured.array
        per, mean = dtw_metric(arr, arr, pairing="best_match", sample_rate_hz=50.0)
        assert mean == 0.0
        per, mean = dtw_metric(arr, arr[:5], sample_rate_hz=50.0)
        assert mean > 0.0

    def test_deterministic(self, structured):
        noise = np.random.default_rng(4).normal(size=(20, 2, 128))
        opts = MetricOptions(seed=7)
        a = evaluate_all(structured, noise, opts, sample_rate_hz=50.0).to_json()
        b = evaluate_all(structured, noise, opts, sample_rate_hz=50.0).to_json()
        assert a == b

    def test_shape_mismatch(self, structured):
        with pytest.raises(ContractViolation):
            evaluate_all(structured, np.zeros((3, 1, 128)), sample_rate_hz=50.0)

    def test_bad_options(self, structured):
        with pytest.raises(ContractViolation):
            evaluate_all(structured, structured, MetricOptions(mmd_kernel="poly"))
