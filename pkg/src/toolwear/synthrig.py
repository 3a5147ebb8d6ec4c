"""Synthetic drilling rig.

Produces raw multi-channel recordings (spindle current ``Im``, thrust force
``Fz``, torque ``Tz``) and sparse flank-wear measurements that behave like a
long drilling campaign on a single tool, so every downstream stage can be
exercised without the original measurement campaign.

Signal model for one cutting burst of channel ``c`` at wear ``w`` (µm)::

    y(t) = offset_c + wear_gain_c * w + level noise          (DC level)
         + drift_gain_c * w * t / T                          (in-hole drift)
         + spindle_amp_c * sin(2π f_spindle t + φ)           (spindle line)
         + flute_amp_c * sin(2π f_flute t + φ)               (flute passing)
         + entry/exit damped oscillations
         + white noise

Holes are separated by idle gaps carrying a small idle level and noise.
All stochastic terms are scaled by ``RigConfig.noise_scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DimensionError, ValidationError

CHANNELS = ("Im", "Fz", "Tz")


@dataclass(frozen=True)
class ChannelModel:
    offset: float
    wear_gain: float  # DC increase per µm of flank wear
    drift_gain: float  # in-hole ramp height per µm of flank wear
    spindle_amp: float
    flute_amp: float
    noise_std: float
    level_noise_std: float  # per-hole jitter of the DC level
    idle_level: float
    idle_noise_std: float
    transient_amp: float
    phase: float = 0.0


def default_channel_models() -> dict[str, ChannelModel]:
    return {
        "Im": ChannelModel(offset=8.0, wear_gain=0.03, drift_gain=0.01,
                           spindle_amp=0.4, flute_amp=0.6, noise_std=0.3,
                           level_noise_std=0.08, idle_level=3.0,
                           idle_noise_std=0.05, transient_amp=1.0, phase=0.3),
        "Fz": ChannelModel(offset=600.0, wear_gain=3.0, drift_gain=0.5,
                           spindle_amp=25.0, flute_amp=60.0, noise_std=20.0,
                           level_noise_std=5.0, idle_level=0.0,
                           idle_noise_std=2.0, transient_amp=150.0, phase=0.0),
        "Tz": ChannelModel(offset=2.0, wear_gain=0.012, drift_gain=0.004,
                           spindle_amp=0.1, flute_amp=0.25, noise_std=0.08,
                           level_noise_std=0.02, idle_level=0.0,
                           idle_noise_std=0.005, transient_amp=0.5, phase=1.1),
    }


@dataclass(frozen=True)
class RigConfig:
    sampling_rate_hz: float = 500.0
    spindle_speed_rpm: float = 2400.0
    feed_mm_per_min: float = 400.0
    hole_depth_mm: float = 25.0
    n_holes: int = 1901
    wear_measure_interval: int = 48
    flutes: int = 2
    seed: int = 0
    gap_s: float = 0.5
    noise_scale: float = 1.0
    # wear curve shape (µm); see generate_wear_curve
    wear_initial_um: float = 5.0
    wear_breakin_um: float = 25.0
    wear_breakin_holes: float = 120.0
    wear_steady_um: float = 60.0
    wear_final_um: float = 35.0
    wear_final_fraction: float = 0.12
    wear_shape_jitter: float = 0.05
    transient_freq_hz: float = 120.0
    transient_tau_s: float = 0.04
    channels: dict = field(default_factory=default_channel_models)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.sampling_rate_hz > 0:
            raise ConfigurationError("sampling_rate_hz must be positive")
        if self.n_holes < 1:
            raise ConfigurationError("n_holes must be >= 1")
        if self.wear_measure_interval < 1:
            raise ConfigurationError("wear_measure_interval must be >= 1")
        if self.flutes < 1:
            raise ConfigurationError("flutes must be >= 1")
        if self.spindle_speed_rpm <= 0 or self.feed_mm_per_min <= 0 or self.hole_depth_mm <= 0:
            raise ConfigurationError("spindle speed, feed and hole depth must be positive")
        if self.gap_s < 0 or self.noise_scale < 0:
            raise ConfigurationError("gap_s and noise_scale must be non-negative")
        if self.samples_per_hole < 2:
            raise ConfigurationError("cutting phase shorter than 2 samples")
        if self.flute_freq_hz >= self.sampling_rate_hz / 2:
            raise ConfigurationError("flute-passing frequency at or above Nyquist")
        if set(self.channels) != set(CHANNELS):
            raise ConfigurationError(f"channels must be exactly {CHANNELS}")
        if min(self.wear_initial_um, self.wear_breakin_um, self.wear_steady_um,
               self.wear_final_um) < 0:
            raise ConfigurationError("wear shape amplitudes must be non-negative")
        if self.wear_breakin_holes <= 0 or self.wear_final_fraction <= 0:
            raise ConfigurationError("wear shape time constants must be positive")
        if not 0 <= self.wear_shape_jitter < 1:
            raise ConfigurationError("wear_shape_jitter must lie in [0, 1)")

    @property
    def samples_per_hole(self) -> int:
        return int(round(self.hole_depth_mm / self.feed_mm_per_min * 60.0 * self.sampling_rate_hz))

    @property
    def gap_samples(self) -> int:
        return int(round(self.gap_s * self.sampling_rate_hz))

    @property
    def spindle_freq_hz(self) -> float:
        return self.spindle_speed_rpm / 60.0

    @property
    def flute_freq_hz(self) -> float:
        return self.flutes * self.spindle_speed_rpm / 60.0


@dataclass(frozen=True)
class GroundTruthWearCurve:
    wear_um: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wear_um, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise DimensionError("wear curve must be a non-empty 1-D sequence")
        if w[0] < 0 or np.any(np.diff(w) < 0):
            raise ValidationError("wear curve must be non-negative and non-decreasing")
        object.__setattr__(self, "wear_um", w)

    def __len__(self) -> int:
        return self.wear_um.size


@dataclass(frozen=True)
class WearMeasurement:
    hole_index: int
    wear_um: float

    def __post_init__(self):
        if self.hole_index < 0:
            raise ValidationError(f"negative hole index {self.hole_index}")
        if not self.wear_um >= 0:
            raise ValidationError(f"wear must be non-negative, got {self.wear_um}")


@dataclass(frozen=True)
class RawRecording:
    channels: dict
    sampling_rate_hz: float
    hole_markers: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=np.int64))

    def __post_init__(self):
        if set(self.channels) != set(CHANNELS):
            raise DimensionError(f"recording needs channels {CHANNELS}, got {sorted(self.channels)}")
        chans = {k: np.asarray(self.channels[k], dtype=np.float64) for k in CHANNELS}
        lengths = {v.shape for v in chans.values()}
        if len(lengths) != 1 or chans["Fz"].ndim != 1:
            raise DimensionError(f"channels must be equal-length 1-D sequences, got shapes {lengths}")
        markers = np.asarray(self.hole_markers, dtype=np.int64).reshape(-1, 3)
        validate_markers(markers, chans["Fz"].size)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "hole_markers", markers)

    def __len__(self) -> int:
        return self.channels["Fz"].size


def validate_markers(markers: np.ndarray, n_samples: int) -> None:
    """Markers must be half-open, in bounds, disjoint and strictly increasing."""
    if markers.size == 0:
        return
    starts, ends = markers[:, 1], markers[:, 2]
    if np.any(starts < 0) or np.any(ends > n_samples) or np.any(ends <= starts):
        raise ValidationError("hole markers out of bounds or empty")
    if np.any(np.diff(markers[:, 0]) <= 0):
        raise ValidationError("hole indices in markers must be strictly increasing")
    if np.any(starts[1:] < ends[:-1]):
        raise ValidationError("hole markers overlap")


def generate_wear_curve(cfg: RigConfig) -> GroundTruthWearCurve:
    """Three-phase flank wear curve: break-in, steady, accelerating.

    The seed perturbs each phase amplitude by up to ``wear_shape_jitter``
    (relative); every phase term is non-decreasing so the sum is too.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    scale = 1.0 + cfg.wear_shape_jitter * rng.uniform(-1.0, 1.0, size=3)
    n = np.arange(cfg.n_holes, dtype=np.float64)
    x = n / max(cfg.n_holes - 1, 1)
    breakin = cfg.wear_breakin_um * scale[0] * -np.expm1(-n / cfg.wear_breakin_holes)
    steady = cfg.wear_steady_um * scale[1] * x
    k = 1.0 / cfg.wear_final_fraction
    final = cfg.wear_final_um * scale[2] * np.expm1(k * x) / math.expm1(k)
    wear = cfg.wear_initial_um + breakin + steady + final
    # guard against rounding producing a tiny decrease
    return GroundTruthWearCurve(np.maximum.accumulate(wear))


def _burst_template(cfg: RigConfig, ch: ChannelModel, t: np.ndarray) -> np.ndarray:
    """Wear-independent part of a cutting burst: spindle lines and transients."""
    y = ch.spindle_amp * np.sin(2 * np.pi * cfg.spindle_freq_hz * t + ch.phase)
    y += ch.flute_amp * np.sin(2 * np.pi * cfg.flute_freq_hz * t + ch.phase)
    decay = np.exp(-t / cfg.transient_tau_s)
    y += ch.transient_amp * decay * np.sin(2 * np.pi * cfg.transient_freq_hz * t)
    t_rev = t[-1] - t
    y += 0.5 * ch.transient_amp * np.exp(-t_rev / cfg.transient_tau_s) * np.sin(
        2 * np.pi * cfg.transient_freq_hz * t_rev)
    return y


def synthesize_recording(cfg: RigConfig, wear: GroundTruthWearCurve) -> RawRecording:
    cfg.validate()
    w = np.asarray(wear.wear_um if isinstance(wear, GroundTruthWearCurve) else wear, dtype=np.float64)
    if w.shape != (cfg.n_holes,):
        raise DimensionError(f"wear curve has {w.size} values, config has {cfg.n_holes} holes")
    rng = np.random.default_rng([cfg.seed, 1])
    L, G, n = cfg.samples_per_hole, cfg.gap_samples, cfg.n_holes
    fs = cfg.sampling_rate_hz
    t = np.arange(L) / fs
    ramp = np.arange(L) / (L - 1)
    ns = cfg.noise_scale

    channels = {}
    for name in CHANNELS:
        ch = cfg.channels[name]
        level = ch.offset + ch.wear_gain * w + ns * ch.level_noise_std * rng.standard_normal(n)
        cut = level[:, None] + (ch.drift_gain * w)[:, None] * ramp[None, :]
        cut += _burst_template(cfg, ch, t)[None, :]
        cut += ns * ch.noise_std * rng.standard_normal((n, L))
        gaps = ch.idle_level + ns * ch.idle_noise_std * rng.standard_normal((n + 1, G))
        body = np.concatenate([cut, gaps[1:]], axis=1).reshape(-1)
        channels[name] = np.concatenate([gaps[0], body])

    starts = G + np.arange(n, dtype=np.int64) * (L + G)
    markers = np.stack([np.arange(n, dtype=np.int64), starts, starts + L], axis=1)
    return RawRecording(channels=channels, sampling_rate_hz=fs, hole_markers=markers)


def measurement_holes(n_holes: int, interval: int, include_final: bool = False) -> np.ndarray:
    if interval < 1:
        raise ConfigurationError("interval must be >= 1")
    holes = np.arange(0, n_holes, interval, dtype=np.int64)
    if include_final and holes[-1] != n_holes - 1:
        holes = np.append(holes, n_holes - 1)
    return holes


def sample_wear_measurements(wear: GroundTruthWearCurve, interval: int, noise_um: float = 2.0,
                             seed: int = 0, include_final: bool = False) -> list[WearMeasurement]:
    """Microscope readings taken at holes 0, interval, 2*interval, ...

    With ``include_final`` the last hole is measured as well when it is not
    already on the grid.
    """
    w = wear.wear_um if isinstance(wear, GroundTruthWearCurve) else np.asarray(wear, dtype=np.float64)
    if noise_um < 0:
        raise ConfigurationError("noise_um must be non-negative")
    holes = measurement_holes(w.size, interval, include_final)
    rng = np.random.default_rng([seed, 2])
    noisy = np.maximum(w[holes] + noise_um * rng.standard_normal(holes.size), 0.0)
    return [WearMeasurement(int(h), float(v)) for h, v in zip(holes, noisy)]


# ---------------------------------------------------------------- CSV export

def write_recording(rec: RawRecording, path) -> Path:
    """Write ``sample_index,Im,Fz,Tz`` and the ``.markers.csv`` sidecar."""
    path = Path(path)
    n = len(rec)
    table = np.column_stack([np.arange(n)] + [rec.channels[c] for c in CHANNELS])
    np.savetxt(path, table, delimiter=",", header="sample_index,Im,Fz,Tz", comments="",
               fmt=["%d", "%.17g", "%.17g", "%.17g"])
    write_markers(rec.hole_markers, markers_path(path))
    return path


def markers_path(recording_path) -> Path:
    p = Path(recording_path)
    return p.with_name(p.stem + ".markers.csv")


def write_markers(markers: np.ndarray, path) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(markers, dtype=np.int64).reshape(-1, 3), delimiter=",",
               header="hole_index,start_sample,end_sample", comments="", fmt="%d")
    return path


def write_measurements(measurements, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("hole_index,wear_um\n")
        for m in measurements:
            fh.write(f"{m.hole_index},{m.wear_um!r}\n")
    return path


def write_wear_curve(wear: GroundTruthWearCurve, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("hole_index,wear_um\n")
        for i, v in enumerate(wear.wear_um):
            fh.write(f"{i},{float(v)!r}\n")
    return path
