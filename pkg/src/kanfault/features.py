"""Segmentation and the 31-per-signal feature library.

Feature index ``n`` follows the notation table::

    x1..x5    spectral: magnitudes at f_r, 2 f_r, 3 f_r; spectral skewness, kurtosis
    x6..x17   time: mean, variance, kurtosis, skewness, RMS, shape, crest,
              impulse, margin factor, Shannon entropy, histogram upper/lower bound
    x18..x31  finest-scale wavelet details: mean, median, RMS, std, variance,
              5/25/75/95th percentiles, mean crossings, zero crossings,
              Shannon entropy, skewness, kurtosis

Column ``x{n}^{i}`` is feature ``n`` of signal ``i`` (1-based).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pywt

log = logging.getLogger(__name__)

N_CYCLES = 48
HIST_BINS = 100
DEFAULT_WAVELET = "bior3.5"
DWT_LEVELS = 4

SPECTRAL = list(range(1, 6))
TIME = list(range(6, 18))
WAVELET = list(range(18, 32))

FEATURE_NAMES = {
    1: "Magnitude at fundamental frequency",
    2: "Magnitude at second harmonic",
    3: "Magnitude at third harmonic",
    4: "Spectral Skewness",
    5: "Spectral Kurtosis",
    6: "Statistical Mean",
    7: "Statistical Variance",
    8: "Statistical Kurtosis",
    9: "Statistical Skewness",
    10: "Statistical RMS",
    11: "Shape Factor",
    12: "Crest Factor",
    13: "Impulse Factor",
    14: "Margin Factor",
    15: "Shannon Entropy",
    16: "Histogram Upper Bound",
    17: "Histogram Lower Bound",
    18: "Wavelet Mean",
    19: "Wavelet Median",
    20: "Wavelet RMS",
    21: "Wavelet Standard Deviation",
    22: "Wavelet Variance",
    23: "5th percentile value",
    24: "25th percentile value",
    25: "75th percentile value",
    26: "95th percentile value",
    27: "Mean Crossings",
    28: "Zero Crossings",
    29: "Wavelet Shannon Entropy",
    30: "Wavelet Skewness",
    31: "Wavelet Kurtosis",
}


@dataclass(frozen=True, order=True)
class FeatureId:
    n: int
    channel: int

    def __post_init__(self):
        if not 1 <= self.n <= 31:
            raise ValueError(f"feature index must lie in 1..31, got {self.n}")
        if self.channel < 1:
            raise ValueError("channel index is 1-based")

    @property
    def name(self) -> str:
        return f"x{self.n}^{self.channel}"

    @property
    def description(self) -> str:
        return FEATURE_NAMES[self.n]

    @property
    def domain(self) -> str:
        if self.n <= 5:
            return "Frequency"
        return "Time" if self.n <= 17 else "Time-Frequency"

    @classmethod
    def parse(cls, name: str) -> "FeatureId":
        try:
            n, ch = name.strip().lstrip("x").split("^")
            return cls(int(n), int(ch))
        except (ValueError, AttributeError):
            raise ValueError(f"not a feature name: {name!r}") from None

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    no_spectral: bool = False


@dataclass
class RecordingMeta:
    sampling_rate: float
    rotation_frequency: float
    class_label: str
    channels: list[ChannelSpec]
    severity_label: str | None = None
    source: str | None = None

    def __post_init__(self):
        if self.sampling_rate <= 0 or self.rotation_frequency <= 0:
            raise ValueError("sampling and rotation frequencies must be positive")
        if len(self.channels) < 1:
            raise ValueError("a recording needs at least one channel")

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]


@dataclass
class Recording:
    meta: RecordingMeta
    data: np.ndarray  # (n_samples, n_channels)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim == 1:
            self.data = self.data[:, None]
        if self.data.shape[1] != len(self.meta.channels):
            raise ValueError(
                f"recording has {self.data.shape[1]} columns but "
                f"{len(self.meta.channels)} channels are declared"
            )


@dataclass
class Segment:
    data: np.ndarray  # (length, n_channels)
    meta: RecordingMeta


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (rows, columns)
    columns: list  # FeatureId for extracted columns, plain strings otherwise
    classes: list[str] = field(default_factory=list)
    severities: list[str | None] = field(default_factory=list)
    groups: list[int] = field(default_factory=list)  # source recording per row

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError(f"{len(self.columns)} column names for values of shape {self.values.shape}")
        n = self.values.shape[0]
        if len(self.classes) != n:
            raise ValueError(f"{len(self.classes)} class labels for {n} rows")
        if not self.severities:
            self.severities = [None] * n
        if len(self.severities) != n:
            raise ValueError(f"{len(self.severities)} severity labels for {n} rows")
        if not self.groups:
            self.groups = list(range(n))
        if len(self.groups) != n:
            raise ValueError(f"{len(self.groups)} group ids for {n} rows")

    @property
    def names(self) -> list[str]:
        return [c.name if isinstance(c, FeatureId) else str(c) for c in self.columns]

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=int)
        return FeatureMatrix(
            self.values[idx],
            list(self.columns),
            [self.classes[i] for i in idx],
            [self.severities[i] for i in idx],
            [self.groups[i] for i in idx],
        )


# ---------------------------------------------------------------- segmentation


def segment_length(sampling_rate: float, rotation_frequency: float, n_cycles: int = N_CYCLES) -> int:
    return int(np.floor(n_cycles * sampling_rate / rotation_frequency))


def segment(recording: Recording, n_cycles: int = N_CYCLES) -> list[Segment]:
    """Cut non-overlapping windows of ``n_cycles`` shaft rotations; drop the tail."""
    meta = recording.meta
    length = segment_length(meta.sampling_rate, meta.rotation_frequency, n_cycles)
    count = recording.data.shape[0] // length if length > 0 else 0
    if count == 0:
        warnings.warn(
            f"recording {meta.source or ''} has {recording.data.shape[0]} samples, "
            f"shorter than one segment of {length}",
            stacklevel=2,
        )
    return [Segment(recording.data[s * length : (s + 1) * length], meta) for s in range(count)]


# ---------------------------------------------------------------- statistics


def _moments(s):
    mu = s.mean()
    sigma = s.std()
    if sigma == 0:
        return mu, 0.0, 0.0, 0.0
    z = (s - mu) / sigma
    return mu, sigma, float(np.mean(z**3)), float(np.mean(z**4))


def histogram_entropy(s, bins: int = HIST_BINS) -> float:
    lo, hi = s.min(), s.max()
    if hi <= lo:
        return 0.0
    counts, _ = np.histogram(s, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / s.size
    return float(-np.sum(p * np.log(p)))


def crossings(values) -> int:
    """Sign changes, with zeros inheriting the previous nonzero sign."""
    signs = np.sign(values)
    signs = signs[signs != 0]
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def time_features(signal) -> np.ndarray:
    """Features x6..x17 of one signal."""
    s = np.asarray(signal, dtype=float)
    if s.size < 2:
        raise ValueError("time features need at least two samples")
    mean, sigma, skew, kurt = _moments(s)
    abs_s = np.abs(s)
    rms = float(np.sqrt(np.mean(s * s)))
    peak = float(abs_s.max())
    mean_abs = float(abs_s.mean())
    sqrt_mean = float(np.mean(np.sqrt(abs_s)))
    if rms > 0:
        shape = rms / mean_abs
        crest = peak / rms
        impulse = peak / mean_abs
        margin = peak / sqrt_mean**2
    else:
        shape = crest = impulse = margin = 0.0
    return np.array(
        [
            mean,
            sigma**2,
            kurt,
            skew,
            rms,
            shape,
            crest,
            impulse,
            margin,
            histogram_entropy(s),
            float(s.max()),
            float(s.min()),
        ]
    )


def magnitude_spectrum(signal, sampling_rate: float):
    """Single-sided amplitude spectrum of the mean-removed signal and bin frequencies."""
    s = np.asarray(signal, dtype=float)
    s = s - s.mean()
    mag = np.abs(np.fft.rfft(s)) * (2.0 / s.size)
    freqs = np.fft.rfftfreq(s.size, d=1.0 / sampling_rate)
    return mag, freqs


def spectral_features(signal, rotation_frequency: float, sampling_rate: float) -> np.ndarray:
    """Features x1..x5: harmonic magnitudes plus spectral skewness and kurtosis."""
    s = np.asarray(signal, dtype=float)
    if s.size < 8:
        raise ValueError("spectral features need at least 8 samples")
    mag, _ = magnitude_spectrum(s, sampling_rate)
    out = np.zeros(5)
    for h in range(1, 4):
        f = h * rotation_frequency
        if f > sampling_rate / 2:
            warnings.warn(f"harmonic {h} at {f} Hz lies above Nyquist; magnitude set to 0", stacklevel=2)
            continue
        # nearest bin; a frequency exactly halfway between two bins takes the lower one
        out[h - 1] = mag[math.ceil(f * s.size / sampling_rate - 0.5)]
    _, _, out[3], out[4] = _moments(mag)
    return out


# ---------------------------------------------------------------- wavelets


@dataclass
class WaveletBundle:
    approximation: np.ndarray
    details: list[np.ndarray]  # details[0] is level 1 (finest)
    wavelet: str
    length: int

    @property
    def levels(self) -> int:
        return len(self.details)

    def detail(self, level: int) -> np.ndarray:
        return self.details[level - 1]

    def reconstruct(self) -> np.ndarray:
        coeffs = [self.approximation, *reversed(self.details)]
        return pywt.waverec(coeffs, self.wavelet, mode="symmetric")[: self.length]


def dwt(signal, levels: int = DWT_LEVELS, wavelet: str = DEFAULT_WAVELET) -> WaveletBundle:
    """Multilevel DWT with symmetric extension."""
    s = np.asarray(signal, dtype=float)
    try:
        w = pywt.Wavelet(wavelet)
    except ValueError:
        raise ValueError(f"unknown wavelet {wavelet!r}") from None
    if s.size < w.dec_len:
        raise ValueError(f"signal of length {s.size} is shorter than the {wavelet} filter")
    with warnings.catch_warnings():
        # short signals exceed pywt's suggested maximum level; the transform is still defined
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(s, w, mode="symmetric", level=levels)
    return WaveletBundle(coeffs[0], list(reversed(coeffs[1:])), wavelet, s.size)


def wavelet_stats(coeffs) -> np.ndarray:
    """Features x18..x31 computed over one coefficient array."""
    c = np.asarray(coeffs, dtype=float)
    mean, sigma, skew, kurt = _moments(c)
    p5, p25, p75, p95 = np.percentile(c, [5, 25, 75, 95], method="linear")
    return np.array(
        [
            mean,
            float(np.median(c)),
            float(np.sqrt(np.mean(c * c))),
            sigma,
            sigma**2,
            p5,
            p25,
            p75,
            p95,
            crossings(c - mean),
            crossings(c),
            histogram_entropy(c),
            skew,
            kurt,
        ]
    )


def wavelet_features(signal, wavelet: str = DEFAULT_WAVELET, level: int = 1) -> np.ndarray:
    return wavelet_stats(dwt(signal, DWT_LEVELS, wavelet).detail(level))


# ---------------------------------------------------------------- library


def channel_features(signal, meta: RecordingMeta, no_spectral: bool, wavelet=DEFAULT_WAVELET,
                     wavelet_level: int = 1) -> np.ndarray:
    parts = []
    if not no_spectral:
        parts.append(spectral_features(signal, meta.rotation_frequency, meta.sampling_rate))
    parts.append(time_features(signal))
    parts.append(wavelet_features(signal, wavelet, wavelet_level))
    return np.concatenate(parts)


def library_columns(channels: list[ChannelSpec]) -> list[FeatureId]:
    cols = []
    for i, ch in enumerate(channels, start=1):
        first = 6 if ch.no_spectral else 1
        cols.extend(FeatureId(n, i) for n in range(first, 32))
    return cols


def extract_library(recordings, n_cycles: int = N_CYCLES, wavelet: str = DEFAULT_WAVELET,
                    wavelet_level: int = 1) -> FeatureMatrix:
    """Segment every recording and stack per-segment feature rows.

    Rows follow recording order, then segment order.
    """
    recordings = list(recordings)
    if not recordings:
        return FeatureMatrix(np.zeros((0, 0)), [])
    schema = recordings[0].meta.channels
    for rec in recordings[1:]:
        if rec.meta.channels != schema:
            raise ValueError(
                f"recording {rec.meta.source or ''} channel schema differs from the first recording"
            )
    columns = library_columns(schema)
    rows, classes, severities, groups = [], [], [], []
    for g, rec in enumerate(recordings):
        for seg in segment(rec, n_cycles):
            rows.append(
                np.concatenate(
                    [
                        channel_features(seg.data[:, c], rec.meta, ch.no_spectral, wavelet, wavelet_level)
                        for c, ch in enumerate(schema)
                    ]
                )
            )
            classes.append(rec.meta.class_label)
            severities.append(rec.meta.severity_label)
            groups.append(g)
    values = np.vstack(rows) if rows else np.zeros((0, len(columns)))
    if not np.all(np.isfinite(values)):
        raise ValueError("feature extraction produced non-finite values")
    return FeatureMatrix(values, columns, classes, severities, groups)
