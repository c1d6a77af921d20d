import math
import warnings

import numpy as np
import pytest
import pywt
from hypothesis import given, settings
from hypothesis import strategies as st

from kanfault.features import (
    ChannelSpec,
    FeatureId,
    FeatureMatrix,
    Recording,
    RecordingMeta,
    WaveletBundle,
    channel_features,
    crossings,
    dwt,
    extract_library,
    library_columns,
    segment,
    segment_length,
    spectral_features,
    time_features,
    wavelet_features,
    wavelet_stats,
)

# ---------------------------------------------------------------- oracles


def o_mean(v):
    return math.fsum(v) / len(v)


def o_moments(v):
    mu = o_mean(v)
    var = math.fsum((x - mu) ** 2 for x in v) / len(v)
    if var == 0:
        return mu, 0.0, 0.0, 0.0
    sd = math.sqrt(var)
    skew = math.fsum(((x - mu) / sd) ** 3 for x in v) / len(v)
    kurt = math.fsum(((x - mu) / sd) ** 4 for x in v) / len(v)
    return mu, var, skew, kurt


def o_entropy(v, bins=100):
    lo, hi = min(v), max(v)
    if hi <= lo:
        return 0.0
    counts = [0] * bins
    width = (hi - lo) / bins
    for x in v:
        counts[min(int((x - lo) / width), bins - 1)] += 1
    return -math.fsum(c / len(v) * math.log(c / len(v)) for c in counts if c)


def o_percentile(v, p):
    s = sorted(v)
    h = (len(s) - 1) * p / 100
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def o_crossings(v):
    count, prev = 0, 0
    for x in v:
        sign = int(x > 0) - int(x < 0)
        if sign == 0:
            continue
        if prev and sign != prev:
            count += 1
        prev = sign
    return count


def o_time(v):
    v = list(v)
    mu, var, skew, kurt = o_moments(v)
    rms = math.sqrt(math.fsum(x * x for x in v) / len(v))
    peak = max(abs(x) for x in v)
    mabs = math.fsum(abs(x) for x in v) / len(v)
    msq = math.fsum(math.sqrt(abs(x)) for x in v) / len(v)
    ratios = [rms / mabs, peak / rms, peak / mabs, peak / msq**2] if rms > 0 else [0.0] * 4
    return [mu, var, kurt, skew, rms, *ratios, o_entropy(v), max(v), min(v)]


def o_spectrum(v, fs):
    """Direct DFT of the mean-removed signal, single-sided amplitude scale."""
    n = len(v)
    mu = o_mean(v)
    c = [x - mu for x in v]
    w = np.exp(-2j * np.pi * np.outer(np.arange(n // 2 + 1), np.arange(n)) / n)
    mag = np.abs(w @ np.array(c)) * 2 / n
    return mag, np.arange(n // 2 + 1) * fs / n


def o_spectral(v, fr, fs):
    mag, freqs = o_spectrum(v, fs)
    out = []
    for h in (1, 2, 3):
        f = h * fr
        out.append(0.0 if f > fs / 2 else float(mag[int(np.argmin(np.abs(freqs - f)))]))
    _, _, skew, kurt = o_moments(list(mag))
    return out + [skew, kurt]


def o_wavelet(c):
    c = list(c)
    mu, var, skew, kurt = o_moments(c)
    rms = math.sqrt(math.fsum(x * x for x in c) / len(c))
    pct = [o_percentile(c, p) for p in (5, 25, 75, 95)]
    return [
        mu,
        o_percentile(c, 50),
        rms,
        math.sqrt(var),
        var,
        *pct,
        o_crossings([x - mu for x in c]),
        o_crossings(c),
        o_entropy(c),
        skew,
        kurt,
    ]


def o_analysis(x, wavelet, levels):
    """Filter bank with half-sample symmetric extension and decimation."""
    w = pywt.Wavelet(wavelet)
    F = w.dec_len
    a, details = np.asarray(x, dtype=float), []
    for _ in range(levels):
        n_out = (a.size + F - 1) // 2
        ext = np.pad(a, F - 1, mode="symmetric")
        details.append(np.convolve(ext, w.dec_hi)[F::2][:n_out])
        a = np.convolve(ext, w.dec_lo)[F::2][:n_out]
    return a, details


def o_synthesis(a, details, wavelet, n):
    w = pywt.Wavelet(wavelet)
    L = w.rec_len
    for d in reversed(details):
        if a.size == d.size + 1:
            a = a[:-1]
        up_a, up_d = np.kron(a, [1, 0]), np.kron(d, [1, 0])
        full = np.convolve(up_a, w.rec_lo) + np.convolve(up_d, w.rec_hi)
        a = full[L - 2 : L - 2 + 2 * d.size - L + 2]
    return a[:n]


def random_signal(rng):
    n = int(rng.integers(256, 1500))
    t = np.arange(n) / 2000.0
    kind = rng.integers(3)
    if kind == 0:
        s = rng.normal(size=n)
    elif kind == 1:
        s = rng.uniform(0.5, 3) * np.sin(2 * np.pi * rng.uniform(10, 200) * t) + 0.3 * rng.normal(size=n)
    else:
        s = rng.exponential(size=n) * rng.choice([-1, 1], size=n) + rng.uniform(-2, 2)
    return s


SIGNALS = [random_signal(np.random.default_rng(1000 + i)) for i in range(100)]
FS, FR = 2000.0, 25.0


# ---------------------------------------------------------------- tests


class TestFeatureId:
    def test_name_roundtrip(self):
        f = FeatureId(24, 2)
        assert f.name == "x24^2"
        assert FeatureId.parse("x24^2") == f

    @pytest.mark.parametrize("n,domain", [(1, "Frequency"), (5, "Frequency"), (6, "Time"), (17, "Time"), (18, "Time-Frequency"), (31, "Time-Frequency")])
    def test_domain(self, n, domain):
        assert FeatureId(n, 1).domain == domain

    @pytest.mark.parametrize("args", [(0, 1), (32, 1), (3, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            FeatureId(*args)

    @pytest.mark.parametrize("text", ["f3", "x^2", "xa^1"])
    def test_parse_error(self, text):
        with pytest.raises(ValueError):
            FeatureId.parse(text)

    def test_descriptions(self):
        assert FeatureId(12, 1).description == "Crest Factor"
        assert FeatureId(28, 1).description == "Zero Crossings"


class TestSegmentation:
    def meta(self, fs=50_000.0, fr=50.0):
        return RecordingMeta(fs, fr, "Normal", [ChannelSpec("a")])

    def test_example_lengths(self):
        assert segment_length(50_000, 50) == 48_000
        segs = segment(Recording(self.meta(), np.zeros(250_000)))
        assert len(segs) == 5
        assert all(s.data.shape == (48_000, 1) for s in segs)

    def test_exact_one(self):
        assert len(segment(Recording(self.meta(), np.zeros(48_000)))) == 1

    def test_floor(self):
        assert segment_length(1000, 7, n_cycles=48) == 6857

    def test_too_short_warns(self):
        with pytest.warns(UserWarning):
            assert segment(Recording(self.meta(), np.zeros(100))) == []

    def test_consecutive(self):
        data = np.arange(10_000.0)
        segs = segment(Recording(self.meta(1000, 10), data), n_cycles=30)
        assert [s.data[0, 0] for s in segs] == [0, 3000, 6000]

    @given(st.integers(1, 5000), st.integers(1, 50))
    @settings(max_examples=40, deadline=None)
    def test_count_identity(self, n, fr):
        meta = RecordingMeta(1000.0, float(fr), "c", [ChannelSpec("a")])
        length = segment_length(1000.0, fr, 2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert len(segment(Recording(meta, np.zeros(n)), n_cycles=2)) == n // length


class TestTimeFeatures:
    @pytest.mark.parametrize("idx", range(100))
    def test_oracle(self, idx):
        s = SIGNALS[idx]
        np.testing.assert_allclose(time_features(s), o_time(s), rtol=1e-10, atol=1e-10)

    def test_constant(self):
        f = time_features(np.full(64, 3.0))
        mean, var, kurt, skew, rms, shape, crest, impulse, margin, ent, hi, lo = f
        assert (mean, var, skew, kurt, ent) == (3.0, 0.0, 0.0, 0.0, 0.0)
        assert shape == pytest.approx(1.0) and crest == pytest.approx(1.0) and impulse == pytest.approx(1.0)
        assert (hi, lo) == (3.0, 3.0)

    def test_zero_signal_ratios_guarded(self):
        f = time_features(np.zeros(16))
        np.testing.assert_array_equal(f, 0.0)

    def test_sine(self):
        A = 2.5
        s = A * np.sin(2 * np.pi * 7 * np.arange(20_000) / 20_000)
        f = time_features(s)
        assert f[4] == pytest.approx(A / math.sqrt(2), rel=0.01)
        assert f[6] == pytest.approx(math.sqrt(2), rel=0.01)

    @pytest.mark.parametrize("c", [0.01, 3.0, 1e4])
    def test_amplitude_scaling(self, c):
        s = SIGNALS[3]
        a, b = time_features(s), time_features(c * s)
        for i in (4, 10, 11):  # RMS and bounds scale
            assert b[i] == pytest.approx(c * a[i], rel=1e-9)
        for i in (2, 3, 5, 6, 7):  # shape, crest, impulse, skewness, kurtosis invariant
            assert b[i] == pytest.approx(a[i], rel=1e-9)

    def test_too_short(self):
        with pytest.raises(ValueError):
            time_features([1.0])


class TestSpectral:
    @pytest.mark.parametrize("idx", range(100))
    def test_direct_dft_oracle(self, idx):
        s = SIGNALS[idx]
        np.testing.assert_allclose(spectral_features(s, FR, FS), o_spectral(s, FR, FS), rtol=1e-10, atol=1e-10)

    def test_pure_tone(self):
        n = 4000
        s = 1.7 * np.sin(2 * np.pi * FR * np.arange(n) / FS)
        x1, x2, x3, _, _ = spectral_features(s, FR, FS)
        assert x1 == pytest.approx(1.7, rel=1e-9)
        assert x2 < 1e-9 and x3 < 1e-9

    def test_constant_is_zero(self):
        f = spectral_features(np.full(100, 4.2), FR, FS)
        np.testing.assert_allclose(f, 0.0, atol=1e-12)

    def test_two_tones(self):
        t = np.arange(3333) / FS  # non-integer periods: leakage present
        s = np.sin(2 * np.pi * FR * t) + 0.5 * np.sin(2 * np.pi * 2 * FR * t)
        x1, x2, *_ = spectral_features(s, FR, FS)
        assert x1 / x2 == pytest.approx(2.0, rel=0.05)

    def test_above_nyquist(self):
        with pytest.warns(UserWarning, match="Nyquist"):
            f = spectral_features(np.random.default_rng(0).normal(size=64), 400.0, 1000.0)
        assert f[1] == 0.0 and f[2] == 0.0 and f[0] > 0

    @pytest.mark.parametrize("c", [0.5, 40.0])
    def test_scaling(self, c):
        s = SIGNALS[10]
        a, b = spectral_features(s, FR, FS), spectral_features(c * s, FR, FS)
        np.testing.assert_allclose(b[:3], c * a[:3], rtol=1e-9)
        np.testing.assert_allclose(b[3:], a[3:], rtol=1e-9)


class TestDwt:
    @pytest.mark.parametrize("idx", range(0, 100, 5))
    def test_filter_bank_oracle(self, idx):
        s = SIGNALS[idx]
        bundle = dwt(s)
        a, details = o_analysis(s, "bior3.5", 4)
        np.testing.assert_allclose(bundle.approximation, a, atol=1e-10)
        for got, want in zip(bundle.details, details):
            np.testing.assert_allclose(got, want, atol=1e-10)

    @pytest.mark.parametrize("idx", range(0, 100, 5))
    def test_reconstruction(self, idx):
        s = SIGNALS[idx]
        bundle = dwt(s)
        rec = o_synthesis(bundle.approximation, bundle.details, bundle.wavelet, s.size)
        assert np.sqrt(np.mean((rec - s) ** 2)) < 1e-8
        assert np.sqrt(np.mean((bundle.reconstruct() - s) ** 2)) < 1e-8

    def test_zero(self):
        b = dwt(np.zeros(300))
        assert all(np.all(d == 0) for d in [b.approximation, *b.details])
        np.testing.assert_array_equal(wavelet_features(np.zeros(300)), 0.0)

    def test_halving(self):
        b = dwt(np.ones(200), levels=1)
        F = pywt.Wavelet("bior3.5").dec_len
        assert b.detail(1).size == (200 + F - 1) // 2
        assert b.levels == 1

    def test_unknown_wavelet(self):
        with pytest.raises(ValueError, match="unknown wavelet"):
            dwt(np.ones(100), wavelet="nope")

    def test_too_short(self):
        with pytest.raises(ValueError):
            dwt(np.ones(4))


class TestWaveletStats:
    @pytest.mark.parametrize("idx", range(100))
    def test_oracle(self, idx):
        s = SIGNALS[idx]
        _, details = o_analysis(s, "bior3.5", 1)
        np.testing.assert_allclose(wavelet_features(s), o_wavelet(details[0]), rtol=1e-10, atol=1e-10)

    def test_alternating(self):
        c = np.tile([1.0, -1.0], 25)
        f = wavelet_stats(c)
        assert f[0] == 0 and f[1] == 0
        assert f[9] == c.size - 1 and f[10] == c.size - 1

    def test_zero_inherits_sign(self):
        assert crossings([1, 0, 0, 2, -1, 0, -3, 4]) == 2

    def test_bundle_level_choice(self, rng):
        s = rng.normal(size=500)
        b = dwt(s)
        np.testing.assert_array_equal(wavelet_features(s, level=3), wavelet_stats(b.detail(3)))
        assert isinstance(b, WaveletBundle)


def make_recordings(channels, n_recordings=2, seed=0, n_segments=3):
    rng = np.random.default_rng(seed)
    fs, fr = 2000.0, 25.0
    length = segment_length(fs, fr, 8)
    recs = []
    for r in range(n_recordings):
        meta = RecordingMeta(fs, fr, f"class{r % 2}", channels, f"s{r}", f"rec{r}")
        recs.append(Recording(meta, rng.normal(size=(length * n_segments + 17, len(channels)))))
    return recs


class TestLibrary:
    def test_two_full_channels(self):
        fm = extract_library(make_recordings([ChannelSpec("a"), ChannelSpec("b")]), n_cycles=8)
        assert fm.values.shape == (6, 62)

    def test_seven_plus_tachometer(self):
        chans = [ChannelSpec(f"c{i}") for i in range(7)] + [ChannelSpec("tach", no_spectral=True)]
        fm = extract_library(make_recordings(chans, n_recordings=1, n_segments=1), n_cycles=8)
        assert fm.values.shape == (1, 243)
        assert fm.columns[-26] == FeatureId(6, 8)

    @given(st.lists(st.booleans(), min_size=1, max_size=10))
    def test_column_formula(self, flags):
        cols = library_columns([ChannelSpec(str(i), f) for i, f in enumerate(flags)])
        assert len(cols) == sum(26 if f else 31 for f in flags)
        assert len(set(cols)) == len(cols)

    def test_row_content_and_labels(self):
        recs = make_recordings([ChannelSpec("a"), ChannelSpec("b", True)])
        fm = extract_library(recs, n_cycles=8)
        seg = segment(recs[1], 8)[2]
        want = np.concatenate(
            [channel_features(seg.data[:, 0], recs[1].meta, False), channel_features(seg.data[:, 1], recs[1].meta, True)]
        )
        np.testing.assert_array_equal(fm.values[5], want)
        assert fm.classes == ["class0"] * 3 + ["class1"] * 3
        assert fm.severities[4] == "s1"
        assert fm.groups == [0, 0, 0, 1, 1, 1]

    def test_six_segments(self):
        fm = extract_library(make_recordings([ChannelSpec("a")], n_recordings=1, n_segments=6), n_cycles=8)
        assert fm.values.shape[0] == 6

    def test_deterministic(self):
        a = extract_library(make_recordings([ChannelSpec("a")]), n_cycles=8)
        b = extract_library(make_recordings([ChannelSpec("a")]), n_cycles=8)
        assert a.values.tobytes() == b.values.tobytes()

    def test_no_nan(self):
        recs = make_recordings([ChannelSpec("a")])
        recs[0].data[:] = 0.0
        fm = extract_library(recs, n_cycles=8)
        assert np.all(np.isfinite(fm.values))

    def test_schema_mismatch(self):
        recs = make_recordings([ChannelSpec("a")]) + make_recordings([ChannelSpec("b")])
        with pytest.raises(ValueError, match="schema"):
            extract_library(recs, n_cycles=8)

    def test_column_count_mismatch(self):
        meta = RecordingMeta(1000.0, 10.0, "x", [ChannelSpec("a"), ChannelSpec("b")])
        with pytest.raises(ValueError):
            Recording(meta, np.zeros((10, 3)))


class TestFeatureMatrix:
    def test_subset(self):
        fm = FeatureMatrix(np.arange(6.0).reshape(3, 2), ["p", FeatureId(1, 1)], ["a", "b", "c"], groups=[0, 0, 1])
        sub = fm.subset([2, 0])
        assert sub.names == ["p", "x1^1"]
        assert sub.classes == ["c", "a"] and sub.groups == [1, 0]
        np.testing.assert_array_equal(sub.values, [[4, 5], [0, 1]])

    @pytest.mark.parametrize(
        "kw",
        [
            {"columns": ["a"]},
            {"classes": ["a"]},
            {"severities": ["s"]},
            {"groups": [1]},
        ],
    )
    def test_validation(self, kw):
        base = {"values": np.zeros((2, 2)), "columns": ["a", "b"], "classes": ["x", "y"]}
        base.update(kw)
        with pytest.raises(ValueError):
            FeatureMatrix(**base)
