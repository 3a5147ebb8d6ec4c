"""Densify sparse flank-wear measurements into one value per hole."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionError,
    MalformedRowError,
    MissingInputError,
    ValidationError,
)


@dataclass(frozen=True)
class QuantizedWearCurve:
    wear_um: np.ndarray
    anchor_indices: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wear_um, dtype=np.float64)
        a = np.asarray(self.anchor_indices, dtype=np.int64)
        if w.ndim != 1 or np.any(w < 0):
            raise ValidationError("quantized wear must be a non-negative 1-D sequence")
        if a.size and (a.min() < 0 or a.max() >= w.size):
            raise ValidationError("anchor index outside the curve")
        object.__setattr__(self, "wear_um", w)
        object.__setattr__(self, "anchor_indices", a)

    def __len__(self) -> int:
        return self.wear_um.size

    @property
    def is_anchor(self) -> np.ndarray:
        flags = np.zeros(self.wear_um.size, dtype=bool)
        flags[self.anchor_indices] = True
        return flags


def quantize(measurements, n_holes: int, jitter_um: float = 1.0, seed: int = 0) -> QuantizedWearCurve:
    """Linear interpolation between consecutive measurements plus bounded noise.

    Each hole strictly between two anchors gets the interpolant plus a
    uniform draw from ``[-jitter_um, +jitter_um]``, clipped back into the
    interval spanned by the two anchor values (and at zero). Anchors keep
    their measured values exactly; holes after the last anchor repeat it.
    """
    ms = list(measurements)
    if len(ms) < 2:
        raise ConfigurationError("at least two wear measurements are required")
    if jitter_um < 0:
        raise ConfigurationError("jitter_um must be non-negative")
    holes = np.array([m.hole_index for m in ms], dtype=np.int64)
    values = np.array([m.wear_um for m in ms], dtype=np.float64)
    if np.any(np.diff(holes) <= 0):
        raise ValidationError("measurements must be sorted by strictly increasing hole_index")
    if holes[0] != 0:
        raise ValidationError(f"first measurement must be at hole 0, got {holes[0]}")
    if np.any(values < 0):
        raise ValidationError("measured wear must be non-negative")
    if n_holes <= holes[-1]:
        raise DimensionError(f"n_holes={n_holes} does not cover the last anchor {holes[-1]}")

    rng = np.random.default_rng([seed, 3])
    out = np.empty(n_holes, dtype=np.float64)
    for (h0, h1), (v0, v1) in zip(zip(holes[:-1], holes[1:]), zip(values[:-1], values[1:])):
        inner = np.arange(h0 + 1, h1)
        frac = (inner - h0) / (h1 - h0)
        lin = v0 + (v1 - v0) * frac
        noise = rng.uniform(-jitter_um, jitter_um, size=inner.size) if jitter_um > 0 else 0.0
        lo, hi = min(v0, v1), max(v0, v1)
        out[h0 + 1:h1] = np.maximum(np.clip(lin + noise, lo, hi), 0.0)
    out[holes] = values
    out[holes[-1] + 1:] = values[-1]
    return QuantizedWearCurve(out, holes)


def piecewise_linear(measurements, n_holes: int) -> np.ndarray:
    """Plain interpolant (flat after the last anchor); the zero-jitter reference."""
    holes = np.array([m.hole_index for m in measurements], dtype=np.float64)
    values = np.array([m.wear_um for m in measurements], dtype=np.float64)
    return np.interp(np.arange(n_holes, dtype=np.float64), holes, values)


def wear_at(curve: QuantizedWearCurve, hole_index: int) -> float:
    if not 0 <= hole_index < len(curve):
        raise IndexError(f"hole {hole_index} outside curve of length {len(curve)}")
    return float(curve.wear_um[hole_index])


def write_curve(curve: QuantizedWearCurve, path) -> Path:
    path = Path(path)
    flags = curve.is_anchor
    with open(path, "w") as fh:
        fh.write("hole_index,wear_um,is_anchor\n")
        for i, (v, a) in enumerate(zip(curve.wear_um, flags)):
            fh.write(f"{i},{float(v)!r},{int(a)}\n")
    return path


def read_curve(path) -> QuantizedWearCurve:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    with open(path) as fh:
        if fh.readline().strip() != "hole_index,wear_um,is_anchor":
            raise MalformedRowError("expected header hole_index,wear_um,is_anchor", path=path, line=1)
        holes, wear, flags = [], [], []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                h, w, a = int(parts[0]), float(parts[1]), int(parts[2])
            except (ValueError, IndexError):
                raise MalformedRowError(f"bad row {line.strip()!r}", path=path, line=line_no) from None
            holes.append(h)
            wear.append(w)
            flags.append(a)
    if holes != list(range(len(holes))):
        raise MalformedRowError("hole_index must run 0..n-1", path=path)
    return QuantizedWearCurve(np.array(wear), np.flatnonzero(np.array(flags) == 1))
