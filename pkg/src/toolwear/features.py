"""Per-hole statistical features, smoothing and feature selection.

DFT convention: unnormalised forward transform
``Y(k) = sum_n y_n exp(-2j*pi*k*n/N)``, so Parseval reads
``sum_k |Y(k)|^2 == N * sum_n y_n^2``. Bin ``k`` sits at ``k*fs/N`` Hz;
bins above ``fs/2`` are the mirrored negative frequencies.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    DomainError,
    MalformedRowError,
    MissingInputError,
    ParseError,
)
from .synthrig import CHANNELS

STATS = ("RMS", "STD", "SPW")
FEATURE_COLUMNS = tuple(f"{c}_{s}" for c in CHANNELS for s in STATS)
SPW_COLUMNS = tuple(f"{c}_SPW" for c in CHANNELS)


@dataclass(frozen=True)
class SpectralBand:
    omega_start_hz: float = 10.0
    omega_end_hz: float = 250.0

    def __post_init__(self):
        if not 0 <= self.omega_start_hz < self.omega_end_hz:
            raise DomainError(
                f"invalid band [{self.omega_start_hz}, {self.omega_end_hz}) Hz")

    def check_nyquist(self, fs: float) -> None:
        if self.omega_end_hz > fs / 2:
            raise DomainError(f"band end {self.omega_end_hz} Hz exceeds Nyquist {fs / 2} Hz")


def _as_signal(y, min_len: int = 1) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size < min_len:
        raise DimensionError(f"expected a 1-D sequence of at least {min_len} samples, got shape {y.shape}")
    return y


def rms(y) -> float:
    y = _as_signal(y)
    return float(np.sqrt(np.mean(y * y)))


def std(y) -> float:
    """Population standard deviation (divisor N)."""
    y = _as_signal(y)
    d = y - y.mean()
    return float(np.sqrt(np.mean(d * d)))


def dft(y) -> np.ndarray:
    return np.fft.fft(_as_signal(y))


def spectral_power(y, band: SpectralBand, fs: float) -> float:
    """Half the summed squared DFT magnitude over bins with ``start <= k*fs/N < end``.

    The band may extend past Nyquist up to ``fs`` so that two-sided sums
    (Parseval) can be formed; anything beyond ``fs`` is a domain error.
    """
    y = _as_signal(y, min_len=2)
    if fs <= 0:
        raise DomainError("sampling rate must be positive")
    if band.omega_end_hz > fs:
        raise DomainError(f"band end {band.omega_end_hz} Hz lies beyond the DFT range [0, {fs})")
    n = y.size
    Y = np.fft.fft(y)
    # k*fs is exact, so bins sitting exactly on a band edge are classified exactly
    freqs = np.arange(n) * fs / n
    sel = (freqs >= band.omega_start_hz) & (freqs < band.omega_end_hz)
    p = Y.real[sel] ** 2 + Y.imag[sel] ** 2
    return float(0.5 * p.sum())


# ----------------------------------------------------------------- matrices

@dataclass(frozen=True)
class FeatureMatrix:
    hole_index: np.ndarray
    values: np.ndarray
    column_names: tuple = FEATURE_COLUMNS
    smoothed: bool = False

    def __post_init__(self):
        holes = np.asarray(self.hole_index, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape != (holes.size, len(self.column_names)):
            raise DimensionError(
                f"values shape {vals.shape} does not match {holes.size} rows x "
                f"{len(self.column_names)} columns")
        if np.any(np.diff(holes) <= 0):
            raise DimensionError("hole_index must be strictly increasing")
        object.__setattr__(self, "hole_index", holes)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    def __len__(self) -> int:
        return self.hole_index.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.column_names.index(name)]
        except ValueError:
            raise ConfigurationError(f"unknown column {name!r}") from None


def feature_row(segment, band: SpectralBand) -> np.ndarray:
    out = np.empty(len(FEATURE_COLUMNS))
    fs = segment.sampling_rate_hz
    for i, name in enumerate(CHANNELS):
        y = segment.channel(name)
        out[3 * i] = rms(y)
        out[3 * i + 1] = std(y)
        out[3 * i + 2] = spectral_power(y, band, fs)
    return out


def extract_features(segments, band: SpectralBand | None = None) -> FeatureMatrix:
    """One 9-column row (RMS, STD, SPW for Im, Fz, Tz) per segment, in hole order."""
    band = band or SpectralBand()
    segments = sorted(segments, key=lambda s: s.hole_index)
    if not segments:
        raise DimensionError("no segments to extract features from")
    rows = np.empty((len(segments), len(FEATURE_COLUMNS)))
    for r, seg in enumerate(segments):
        try:
            rows[r] = feature_row(seg, band)
        except (DimensionError, DomainError) as exc:
            raise type(exc)(f"hole {seg.hole_index}: {exc}") from exc
    return FeatureMatrix(np.array([s.hole_index for s in segments]), rows, FEATURE_COLUMNS)


def moving_average(m: FeatureMatrix, window: int) -> FeatureMatrix:
    """Trailing mean over the current row and up to ``window - 1`` rows before it.

    Early rows average over the rows available so far.
    """
    n = len(m)
    if window < 1:
        raise DimensionError("window must be >= 1")
    if window > n:
        raise DimensionError(f"window {window} exceeds {n} rows")
    padded = np.concatenate([np.zeros((window - 1, m.values.shape[1])), m.values])
    sums = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0).sum(axis=-1)
    counts = np.minimum(np.arange(1, n + 1), window)[:, None]
    return replace(m, values=sums / counts, smoothed=True)


def select_features(m: FeatureMatrix, drop=SPW_COLUMNS) -> FeatureMatrix:
    drop = list(drop)
    unknown = [d for d in drop if d not in m.column_names]
    if unknown:
        raise ConfigurationError(f"unknown feature column(s): {', '.join(unknown)}")
    keep = [i for i, c in enumerate(m.column_names) if c not in drop]
    return replace(m, values=m.values[:, keep], column_names=tuple(m.column_names[i] for i in keep))


def trend_sensitivity(column, wear) -> float:
    """Absolute Pearson correlation of a (smoothed) feature column with wear."""
    x = np.asarray(column, dtype=np.float64)
    w = np.asarray(wear, dtype=np.float64)
    if x.shape != w.shape or x.ndim != 1 or x.size < 3:
        raise DimensionError("column and wear must be equal-length 1-D sequences of length >= 3")
    dx, dw = x - x.mean(), w - w.mean()
    denom = np.sqrt(np.dot(dx, dx) * np.dot(dw, dw))
    if denom == 0:
        warnings.warn("zero-variance input to trend_sensitivity; returning 0", RuntimeWarning,
                      stacklevel=2)
        return 0.0
    return float(min(abs(np.dot(dx, dw)) / denom, 1.0))


def sensitivity_table(m: FeatureMatrix, wear) -> dict[str, float]:
    return {name: trend_sensitivity(m.values[:, i], wear) for i, name in enumerate(m.column_names)}


# ---------------------------------------------------------------------- CSV

def write_feature_matrix(m: FeatureMatrix, path) -> Path:
    path = Path(path)
    table = np.column_stack([m.hole_index, m.values])
    np.savetxt(path, table, delimiter=",", header=",".join(("hole_index",) + m.column_names),
               comments="", fmt=["%d"] + ["%.17g"] * len(m.column_names))
    return path


def read_feature_matrix(path, smoothed: bool = False) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "hole_index" or len(header) < 2:
        raise MalformedRowError("expected header hole_index,<columns...>", path=path, line=1)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"unreadable feature matrix: {exc}", path=path) from None
    if data.shape[1] != len(header):
        raise MalformedRowError(f"expected {len(header)} columns", path=path)
    return FeatureMatrix(data[:, 0].astype(np.int64), data[:, 1:], tuple(header[1:]), smoothed)
