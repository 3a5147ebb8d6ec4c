import numpy as np
import pytest

from toolwear import dataset as D
from toolwear import features as F
from toolwear import ingest
from toolwear import synthrig as sr
from toolwear import wear as W


class DefaultRun:
    """The seed-7 default synthetic run, shared by the tests that need it."""

    def __init__(self):
        self.cfg = sr.RigConfig(seed=7)
        self.curve = sr.generate_wear_curve(self.cfg)
        self.rec = sr.synthesize_recording(self.cfg, self.curve)
        self.segments = ingest.segment_by_markers(self.rec)
        self.raw = F.extract_features(self.segments)
        self.smooth = F.moving_average(self.raw, 200)
        self.selected = F.select_features(self.smooth)
        self.measurements = sr.sample_wear_measurements(self.curve, 48, 2.0, seed=7)
        self.quantized = W.quantize(self.measurements, self.cfg.n_holes, jitter_um=0.0, seed=7)

    def region(self, i):
        f, w = D.slice_region(self.selected, self.quantized, D.DEFAULT_REGIONS[i])
        windows = D.make_windows(f, w, 20)
        return f, windows, D.split(windows)


@pytest.fixture(scope="session")
def default_run():
    return DefaultRun()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
