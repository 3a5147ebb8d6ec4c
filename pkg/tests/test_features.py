import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from toolwear import features as F
from toolwear.errors import ConfigurationError, DimensionError, DomainError
from toolwear.ingest import CuttingSegment

BAND = F.SpectralBand(10.0, 250.0)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_subnormal=False).filter(
    lambda v: v == 0 or abs(v) > 1e-100)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_rms_examples():
    assert F.rms([4.2] * 7) == pytest.approx(4.2, rel=1e-15)
    assert F.rms([-3.0] * 3) == pytest.approx(3.0, rel=1e-15)
    assert F.rms([3, -4]) == pytest.approx(3.5355339059327378, rel=1e-15)
    assert F.rms([3, -4]) == pytest.approx(oracles.rms([3, -4]), rel=1e-15)


def test_std_examples():
    assert F.std([2, 4, 4, 4, 5, 5, 7, 9]) == 2.0
    assert F.std([1.5] * 11) == 0.0


def test_rms_matches_two_pass_oracle(rng):
    y = rng.normal(3.0, 2.0, 1000)
    assert rel(F.rms(y), oracles.rms(y)) < 1e-12
    assert rel(F.std(y), oracles.std(y)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=300))
def test_rms_std_mean_identity(values):
    y = np.array(values)
    lhs = F.rms(y) ** 2
    rhs = F.std(y) ** 2 + np.mean(y) ** 2
    assert abs(lhs - rhs) <= 1e-12 * max(lhs, 1e-300)


def test_empty_and_2d_inputs_rejected():
    with pytest.raises(DimensionError):
        F.rms([])
    with pytest.raises(DimensionError):
        F.std(np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        F.spectral_power([1.0], BAND, 500.0)


def test_spectral_power_impulse():
    # a unit impulse has Y(k) = 1 for every bin; [0, 2) at fs=4 covers bins 0 and 1
    assert F.spectral_power([1, 0, 0, 0], F.SpectralBand(0, 2), 4.0) == pytest.approx(1.0, rel=1e-15)


def test_spectral_power_zero_signal():
    assert F.spectral_power(np.zeros(50), BAND, 500.0) == 0.0


def test_spectral_power_matches_bruteforce(rng):
    for n in (2, 3, 17, 256, 1875):
        y = rng.normal(size=n)
        for band in (BAND, F.SpectralBand(0, 500), F.SpectralBand(37.5, 81.0)):
            got = F.spectral_power(y, band, 500.0)
            want = oracles.spectral_power(y, band.omega_start_hz, band.omega_end_hz, 500.0)
            assert rel(got, want) < 1e-9


def test_band_edge_bins_are_exact():
    # n=100 at fs=500 puts bin 2 exactly on 10 Hz and bin 50 exactly on 250 Hz
    y = np.arange(100, dtype=float) % 7
    got = F.spectral_power(y, BAND, 500.0)
    want = oracles.spectral_power(y, 10.0, 250.0, 500.0)
    assert rel(got, want) < 1e-9


def test_parseval_full_band(rng):
    for n in (3, 5, 6, 7, 100, 1875, 3001):
        y = rng.normal(size=n)
        total = np.sum(np.abs(F.dft(y)) ** 2)
        assert rel(total, n * np.sum(y * y)) < 1e-9
        assert rel(2 * F.spectral_power(y, F.SpectralBand(0, 500), 500.0), n * np.sum(y * y)) < 1e-9


def test_spectral_power_additive_over_bands(rng):
    y = rng.normal(size=1875)
    edges = [0.0, 10.0, 80.0, 250.0, 400.0, 500.0]
    parts = [F.spectral_power(y, F.SpectralBand(a, b), 500.0) for a, b in zip(edges, edges[1:])]
    whole = F.spectral_power(y, F.SpectralBand(0, 500), 500.0)
    assert rel(sum(parts), whole) < 1e-9


def test_band_validation():
    with pytest.raises(DomainError):
        F.SpectralBand(100, 50)
    with pytest.raises(DomainError):
        F.SpectralBand(-1, 50)
    with pytest.raises(DomainError):
        F.spectral_power(np.ones(8), F.SpectralBand(0, 600), 500.0)
    with pytest.raises(DomainError):
        F.SpectralBand(10, 300).check_nyquist(500.0)
    F.SpectralBand(10, 250).check_nyquist(500.0)


def _segment(hole, n, rng):
    return CuttingSegment(hole, rng.normal(size=n), rng.normal(5, 1, size=n), rng.normal(size=n),
                          500.0, 0, n)


def test_extract_features_shape_and_composition(rng):
    segs = [_segment(h, 64, rng) for h in (2, 0, 1)]
    m = F.extract_features(segs, BAND)
    assert m.values.shape == (3, 9)
    assert m.column_names == F.FEATURE_COLUMNS
    assert list(m.hole_index) == [0, 1, 2]
    seg = segs[1]
    assert m.column("Fz_RMS")[0] == F.rms(seg.fz)
    assert m.column("Tz_STD")[0] == F.std(seg.tz)
    assert m.column("Im_SPW")[0] == F.spectral_power(seg.im, BAND, 500.0)


def test_extract_features_single_segment(rng):
    m = F.extract_features([_segment(0, 10, rng)])
    assert m.values.shape == (1, 9)


def test_extract_features_names_bad_hole(rng):
    slow = _segment(1, 10, rng)
    slow = CuttingSegment(1, slow.im, slow.fz, slow.tz, 100.0, 0, 10)
    with pytest.raises(DomainError, match="hole 1"):
        F.extract_features([_segment(0, 10, rng), slow], BAND)


def _matrix(values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = tuple(f"c{i}" for i in range(values.shape[1]))
    return F.FeatureMatrix(np.arange(values.shape[0]), values, names)


def test_moving_average_window_one_is_identity(rng):
    m = _matrix(rng.normal(size=(30, 3)))
    assert np.array_equal(F.moving_average(m, 1).values, m.values)


def test_moving_average_constant_column():
    out = F.moving_average(_matrix(np.full(50, 2.5)), 20).values
    assert np.allclose(out, 2.5, rtol=0, atol=1e-15)


def test_moving_average_trailing_slices(default_run):
    raw = default_run.raw
    smooth = default_run.smooth
    for i in (0, 1, 57, 199, 200, 1000, 1900):
        lo = max(0, i - 199)
        want = raw.values[lo:i + 1].mean(axis=0)
        assert np.allclose(smooth.values[i], want, rtol=1e-12, atol=0)
    assert smooth.smoothed and not raw.smoothed


def test_moving_average_commutes_with_scaling(rng):
    x = rng.normal(size=(100, 2))
    a = F.moving_average(_matrix(3.0 * x), 10).values
    b = 3.0 * F.moving_average(_matrix(x), 10).values
    assert np.allclose(a, b, rtol=1e-14, atol=1e-14)


def test_moving_average_window_bounds():
    m = _matrix(np.ones(5))
    with pytest.raises(DimensionError):
        F.moving_average(m, 0)
    with pytest.raises(DimensionError):
        F.moving_average(m, 6)


def test_select_features(default_run):
    m = default_run.smooth
    assert F.select_features(m, []).values.shape == m.values.shape
    sel = F.select_features(m)
    assert sel.column_names == ("Im_RMS", "Im_STD", "Fz_RMS", "Fz_STD", "Tz_RMS", "Tz_STD")
    assert np.array_equal(sel.hole_index, m.hole_index)
    assert np.array_equal(sel.column("Fz_STD"), m.column("Fz_STD"))
    with pytest.raises(ConfigurationError):
        F.select_features(sel)


def test_trend_sensitivity():
    w = np.linspace(0, 100, 50) ** 1.3
    assert F.trend_sensitivity(w, w) == pytest.approx(1.0)
    assert F.trend_sensitivity(-w, w) == pytest.approx(1.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert F.trend_sensitivity(np.full(50, 3.0), w) == 0.0
    assert caught
    with pytest.raises(DimensionError):
        F.trend_sensitivity([1, 2], [1, 2])


def test_spw_is_least_wear_sensitive(default_run):
    table = F.sensitivity_table(default_run.smooth, default_run.quantized.wear_um)
    spw = max(table[c] for c in F.SPW_COLUMNS)
    others = min(v for k, v in table.items() if k not in F.SPW_COLUMNS)
    assert spw < others


def test_feature_csv_round_trip(tmp_path, rng):
    m = _matrix(rng.normal(size=(7, 4)))
    p = F.write_feature_matrix(m, tmp_path / "f.csv")
    back = F.read_feature_matrix(p)
    assert np.array_equal(back.values, m.values)
    assert np.array_equal(back.hole_index, m.hole_index)
    assert back.column_names == m.column_names


def test_feature_csv_bad_header(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("hole,a\n0,1\n")
    from toolwear.errors import MalformedRowError
    with pytest.raises(MalformedRowError):
        F.read_feature_matrix(p)


def test_oracle_self_check():
    # brute-force DFT of an impulse and of a pure tone
    assert np.allclose(oracles.dft_bins([1, 0, 0, 0], range(4)), 1.0)
    n = 64
    tone = np.cos(2 * math.pi * 5 * np.arange(n) / n)
    Y = oracles.dft_bins(tone, range(n))
    assert abs(Y[5] - n / 2) < 1e-9 and abs(Y[6]) < 1e-9
