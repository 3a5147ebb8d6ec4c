import dataclasses

import numpy as np
import pytest

import oracles
from toolwear import features as F
from toolwear import synthrig as sr
from toolwear.errors import ConfigurationError, DimensionError, ValidationError


def test_default_geometry():
    cfg = sr.RigConfig()
    assert cfg.samples_per_hole == 1875
    assert cfg.flute_freq_hz == 80.0
    assert cfg.gap_samples == 250


def test_wear_curve_default_shape(default_run):
    w = default_run.curve.wear_um
    assert w.size == 1901
    assert w[-1] > w[0]
    assert np.all(np.diff(w) >= 0)
    assert w[0] >= 0


def test_wear_curve_single_hole():
    w = sr.generate_wear_curve(sr.RigConfig(n_holes=1, seed=3)).wear_um
    assert w.shape == (1,) and w[0] >= 0


def test_determinism():
    cfg = sr.RigConfig(seed=42, n_holes=30)
    a, b = sr.generate_wear_curve(cfg), sr.generate_wear_curve(cfg)
    assert np.array_equal(a.wear_um, b.wear_um)
    ra, rb = sr.synthesize_recording(cfg, a), sr.synthesize_recording(cfg, b)
    for c in sr.CHANNELS:
        assert np.array_equal(ra.channels[c], rb.channels[c])
    other = sr.synthesize_recording(sr.RigConfig(seed=43, n_holes=30), a)
    assert not np.array_equal(ra.channels["Fz"], other.channels["Fz"])


def test_recording_layout(default_run):
    rec, cfg = default_run.rec, default_run.cfg
    assert rec.hole_markers.shape == (1901, 3)
    assert np.all(rec.hole_markers[:, 2] - rec.hole_markers[:, 1] == 1875)
    assert len(rec) == 1901 * (1875 + 250) + 250
    assert rec.hole_markers[0, 1] == cfg.gap_samples


def test_flute_line_dominates_fz_spectrum(default_run):
    seg = default_run.segments[900].fz
    n = seg.size
    ks = np.arange(1, n // 2)
    power = np.abs(oracles.dft_bins(seg - seg.mean(), ks)) ** 2
    peak = ks[np.argmax(power)] * 500.0 / n
    assert abs(peak - 80.0) <= 500.0 / n


def test_zero_wear_gives_no_trend():
    cfg = sr.RigConfig(seed=5, n_holes=200)
    rec = sr.synthesize_recording(cfg, np.zeros(200))
    fz = np.array([rec.channels["Fz"][s:e].mean() for _, s, e in rec.hole_markers])
    slope = np.polyfit(np.arange(200), fz, 1)[0]
    # noise-only: slope over 200 holes well below one per-hole noise sd
    assert abs(slope * 200) < 3 * fz.std()


def test_noise_free_rms_monotone_in_wear():
    cfg = sr.RigConfig(seed=1, n_holes=150, noise_scale=0.0)
    curve = sr.generate_wear_curve(cfg)
    rec = sr.synthesize_recording(cfg, curve)
    r = np.array([F.rms(rec.channels["Fz"][s:e]) for _, s, e in rec.hole_markers])
    assert np.all(np.diff(r) >= 0)


def test_burst_energy_parseval(default_run):
    y = default_run.segments[3].fz
    energy = np.sum(y * y)
    spectrum = np.sum(np.abs(oracles.dft_bins(y, np.arange(y.size))) ** 2) / y.size
    assert abs(energy - spectrum) / energy < 1e-9


def test_measurement_grid():
    assert sr.measurement_holes(1901, 48).size == 40
    assert sr.measurement_holes(1901, 48)[-1] == 1872
    assert sr.measurement_holes(1901, 48, include_final=True)[-1] == 1900
    assert sr.measurement_holes(1901, 48, include_final=True).size == 41


def test_measurements(default_run):
    curve = default_run.curve
    assert len(default_run.measurements) == 40
    exact = sr.sample_wear_measurements(curve, 48, noise_um=0.0)
    assert [m.wear_um for m in exact] == list(curve.wear_um[::48][:40])
    ident = sr.sample_wear_measurements(curve, 1, noise_um=0.0)
    assert np.array_equal([m.wear_um for m in ident], curve.wear_um)
    with pytest.raises(ConfigurationError):
        sr.sample_wear_measurements(curve, 0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        sr.RigConfig(n_holes=0)
    with pytest.raises(ConfigurationError):
        sr.RigConfig(spindle_speed_rpm=9000)  # flute line above Nyquist
    with pytest.raises(ConfigurationError):
        sr.RigConfig(channels={"Fz": sr.default_channel_models()["Fz"]})
    with pytest.raises(ConfigurationError):
        dataclasses.replace(sr.RigConfig(), wear_shape_jitter=1.5)


def test_wear_length_mismatch():
    cfg = sr.RigConfig(n_holes=10)
    with pytest.raises(DimensionError):
        sr.synthesize_recording(cfg, np.zeros(11))


def test_marker_validation():
    ch = {c: np.zeros(100) for c in sr.CHANNELS}
    with pytest.raises(ValidationError):
        sr.RawRecording(ch, 500.0, np.array([[0, 10, 50], [1, 40, 60]]))
    with pytest.raises(ValidationError):
        sr.RawRecording(ch, 500.0, np.array([[0, 90, 101]]))
    with pytest.raises(ValidationError):
        sr.GroundTruthWearCurve(np.array([3.0, 2.0]))
