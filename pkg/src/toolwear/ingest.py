"""Recording I/O and isolation of per-hole cutting segments."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    MalformedRowError,
    MissingInputError,
    ParseError,
    RaggedChannelError,
    SegmentationError,
    ValidationError,
)
from .synthrig import CHANNELS, RawRecording, WearMeasurement, markers_path

log = logging.getLogger(__name__)

RECORDING_HEADER = ["sample_index", "Im", "Fz", "Tz"]
MARKER_HEADER = ["hole_index", "start_sample", "end_sample"]
MEASUREMENT_HEADER = ["hole_index", "wear_um"]


@dataclass(frozen=True)
class CuttingSegment:
    hole_index: int
    im: np.ndarray
    fz: np.ndarray
    tz: np.ndarray
    sampling_rate_hz: float
    start_sample: int = 0
    end_sample: int = 0

    def __post_init__(self):
        if not (self.im.shape == self.fz.shape == self.tz.shape) or self.fz.ndim != 1:
            raise DimensionError(f"hole {self.hole_index}: channel lengths differ")
        if self.fz.size < 2:
            raise DimensionError(f"hole {self.hole_index}: segment shorter than 2 samples")

    def channel(self, name: str) -> np.ndarray:
        return {"Im": self.im, "Fz": self.fz, "Tz": self.tz}[name]

    def __len__(self) -> int:
        return self.fz.size


def _read_rows(path: Path, header: list[str]):
    """Yield (line_number, fields) for every data row after checking the header."""
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != header:
            raise MalformedRowError(f"expected header {','.join(header)}", path=path, line=1)
        for row in reader:
            if row:
                yield reader.line_num, row


def _parse_numeric(path: Path, header: list[str], kind=float) -> np.ndarray:
    """Parse a numeric CSV, reporting the first bad line.

    Fast path through ``np.loadtxt``; on failure a row-by-row pass locates
    the offending line.
    """
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    with open(path) as fh:
        first = fh.readline().strip()
    if first.split(",") != header:
        raise MalformedRowError(f"expected header {','.join(header)}", path=path, line=1)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    except ValueError:
        data = None
    if data is not None and (data.size == 0 or data.shape[1] == len(header)):
        return data.reshape(-1, len(header))

    rows = []
    for line, fields in _read_rows(path, header):
        if len(fields) != len(header):
            raise RaggedChannelError(
                f"expected {len(header)} fields, found {len(fields)}", path=path, line=line)
        try:
            rows.append([kind(f) for f in fields])
        except ValueError:
            raise MalformedRowError(f"non-numeric field in {fields!r}", path=path, line=line) from None
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(header))


def load_markers(path) -> np.ndarray:
    path = Path(path)
    data = _parse_numeric(path, MARKER_HEADER, kind=int)
    markers = data.astype(np.int64)
    if np.any(markers != data):
        raise MalformedRowError("marker fields must be integers", path=path)
    return markers


def load_recording(path, markers=None, sampling_rate_hz: float = 500.0) -> RawRecording:
    """Load ``sample_index,Im,Fz,Tz``; markers come from the sidecar if present.

    The CSV schema carries no sampling rate, so it is passed in.
    """
    path = Path(path)
    data = _parse_numeric(path, RECORDING_HEADER)
    if data.shape[0] and np.any(data[:, 0] != np.arange(data.shape[0])):
        bad = int(np.flatnonzero(data[:, 0] != np.arange(data.shape[0]))[0])
        raise MalformedRowError("sample_index is not contiguous from 0", path=path, line=bad + 2)
    if markers is None:
        side = markers_path(path)
        markers = load_markers(side) if side.exists() else np.empty((0, 3), dtype=np.int64)
    channels = {name: data[:, i + 1].copy() for i, name in enumerate(CHANNELS)}
    try:
        return RawRecording(channels=channels, sampling_rate_hz=sampling_rate_hz,
                            hole_markers=markers)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def load_measurements(path) -> list[WearMeasurement]:
    path = Path(path)
    data = _parse_numeric(path, MEASUREMENT_HEADER)
    return [WearMeasurement(int(h), float(w)) for h, w in data]


def _make_segment(rec: RawRecording, hole: int, start: int, end: int) -> CuttingSegment:
    c = rec.channels
    return CuttingSegment(hole_index=int(hole), im=c["Im"][start:end], fz=c["Fz"][start:end],
                          tz=c["Tz"][start:end], sampling_rate_hz=rec.sampling_rate_hz,
                          start_sample=int(start), end_sample=int(end))


def segment_by_markers(rec: RawRecording) -> list[CuttingSegment]:
    if rec.hole_markers.size == 0:
        raise SegmentationError(
            "recording has no hole markers; use segment_by_threshold to detect cutting runs")
    order = np.argsort(rec.hole_markers[:, 0], kind="stable")
    return [_make_segment(rec, *rec.hole_markers[i]) for i in order]


def window_rms(y: np.ndarray, window: int) -> np.ndarray:
    """Centred moving RMS with a window of ``window`` samples (edges use partial windows)."""
    sq = np.asarray(y, dtype=np.float64) ** 2
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    n = sq.size
    half = window // 2
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx - half + window, 0, n)
    return np.sqrt(np.maximum(csum[hi] - csum[lo], 0.0) / (hi - lo))


def detect_runs(rec: RawRecording, window_samples: int = 50, threshold_ratio: float = 0.25,
                channel: str = "Fz") -> np.ndarray:
    """Return ``(k, 3)`` markers of detected cutting runs."""
    if window_samples < 1:
        raise ConfigurationError("window_samples must be >= 1")
    if not 0 < threshold_ratio < 1:
        raise ConfigurationError("threshold_ratio must lie in (0, 1)")
    y = rec.channels[channel]
    if y.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    r = window_rms(y, window_samples)
    peak = r.max()
    if not peak > 0:
        return np.empty((0, 3), dtype=np.int64)
    active = r > threshold_ratio * peak
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    keep = (ends - starts) >= window_samples
    starts, ends = starts[keep], ends[keep]
    return np.stack([np.arange(starts.size), starts, ends], axis=1).astype(np.int64)


def segment_by_threshold(rec: RawRecording, window_samples: int = 50,
                         threshold_ratio: float = 0.25) -> list[CuttingSegment]:
    """Detect cutting runs from the short-window RMS of Fz.

    A sample counts as cutting when its window RMS exceeds
    ``threshold_ratio`` times the largest window RMS in the recording. Runs
    shorter than ``window_samples`` are dropped; survivors are numbered in
    time order. A silent recording yields no segments.
    """
    runs = detect_runs(rec, window_samples, threshold_ratio)
    log.debug("threshold detector found %d runs", len(runs))
    return [_make_segment(rec, *m) for m in runs]


def segment_index(segments) -> np.ndarray:
    return np.array([[s.hole_index, s.start_sample, s.end_sample] for s in segments],
                    dtype=np.int64).reshape(-1, 3)


def write_segment_index(segments, path) -> Path:
    from .synthrig import write_markers
    return write_markers(segment_index(segments), path)


def read_segments(rec: RawRecording, index_path) -> list[CuttingSegment]:
    """Rebuild segments from a recording and a segment index CSV."""
    markers = load_markers(index_path)
    try:
        RawRecording(channels=rec.channels, sampling_rate_hz=rec.sampling_rate_hz,
                     hole_markers=markers)
    except ValidationError as exc:
        raise ParseError(str(exc), path=index_path) from None
    return [_make_segment(rec, *m) for m in markers]
