"""Region slicing, sliding windows, chronological splits and min-max scaling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DatasetError,
    DimensionError,
    MalformedRowError,
    MissingInputError,
    RegionError,
    ScalingError,
)
from .features import FeatureMatrix


@dataclass(frozen=True)
class RegionSpec:
    name: str
    start_hole: int
    end_hole: int  # exclusive

    def __post_init__(self):
        if not self.start_hole < self.end_hole:
            raise ConfigurationError(f"region {self.name}: start must be < end")


DEFAULT_REGIONS = (
    RegionSpec("region1", 200, 800),
    RegionSpec("region2", 800, 1400),
    RegionSpec("region3", 1400, 1800),
)


def check_disjoint(regions) -> None:
    spans = sorted((r.start_hole, r.end_hole, r.name) for r in regions)
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ConfigurationError(f"regions {n0} and {n1} overlap")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.75
    val_frac: float = 0.15
    test_frac: float = 0.10

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be positive and sum to 1, got {fr}")


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # (n_samples, timestep, n_features)
    targets: np.ndarray
    hole_of_sample: np.ndarray
    feature_names: tuple = ()
    scaled: bool = False

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        h = np.asarray(self.hole_of_sample, dtype=np.int64).reshape(-1)
        if x.ndim != 3 or x.shape[0] != y.size or y.size != h.size:
            raise DimensionError(f"inconsistent dataset shapes {x.shape}, {y.shape}, {h.shape}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "hole_of_sample", h)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.targets.size

    @property
    def timestep(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    def subset(self, sl) -> "WindowedDataset":
        return replace(self, inputs=self.inputs[sl], targets=self.targets[sl],
                       hole_of_sample=self.hole_of_sample[sl])


@dataclass(frozen=True)
class ScalerParams:
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float
    feature_names: tuple = field(default=())

    def __post_init__(self):
        lo = np.asarray(self.feature_min, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.feature_max, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError("feature min/max length mismatch")
        if np.any(hi < lo) or self.target_max < self.target_min:
            raise ScalingError("scaler max must be >= min")
        object.__setattr__(self, "feature_min", lo)
        object.__setattr__(self, "feature_max", hi)
        object.__setattr__(self, "target_min", float(self.target_min))
        object.__setattr__(self, "target_max", float(self.target_max))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def degenerate(self) -> np.ndarray:
        return self.feature_max == self.feature_min

    @property
    def target_degenerate(self) -> bool:
        return self.target_max == self.target_min

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "feature_min": [float(v) for v in self.feature_min],
            "feature_max": [float(v) for v in self.feature_max],
            "degenerate": [bool(v) for v in self.degenerate],
            "target_min": self.target_min,
            "target_max": self.target_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.array(d["feature_min"], dtype=np.float64),
                   np.array(d["feature_max"], dtype=np.float64),
                   d["target_min"], d["target_max"], tuple(d.get("feature_names", ())))


def slice_region(features: FeatureMatrix, wear, region: RegionSpec):
    """Rows with ``start <= hole < end`` together with the aligned wear values."""
    w = np.asarray(getattr(wear, "wear_um", wear), dtype=np.float64)
    mask = (features.hole_index >= region.start_hole) & (features.hole_index < region.end_hole)
    if not mask.any():
        raise RegionError(f"region {region.name} [{region.start_hole}, {region.end_hole}) is empty")
    holes = features.hole_index[mask]
    if holes[-1] >= w.size:
        raise RegionError(f"region {region.name} runs past the wear curve ({w.size} holes)")
    sub = replace(features, hole_index=holes, values=features.values[mask])
    return sub, w[holes]


def make_windows(features: FeatureMatrix, wear, timestep: int = 20) -> WindowedDataset:
    """Window ``i`` covers rows ``[i, i + timestep)``; its target is the wear at the last row."""
    w = np.asarray(wear, dtype=np.float64)
    n = len(features)
    if w.size != n:
        raise DimensionError(f"{n} feature rows but {w.size} wear values")
    if timestep < 1 or n < timestep:
        raise DimensionError(f"need at least timestep={timestep} rows, got {n}")
    view = np.lib.stride_tricks.sliding_window_view(features.values, timestep, axis=0)
    inputs = np.ascontiguousarray(view.transpose(0, 2, 1))
    last = np.arange(timestep - 1, n)
    return WindowedDataset(inputs, w[last], features.hole_index[last], features.column_names)


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    # the epsilon keeps products like 20 * 0.15 from flooring one short
    n_val = math.floor(n * spec.val_frac + 1e-9)
    n_test = math.floor(n * spec.test_frac + 1e-9)
    return n - n_val - n_test, n_val, n_test


def split(ds: WindowedDataset, spec: SplitSpec = SplitSpec()):
    """Contiguous chronological split; rounding remainder goes to train."""
    n = len(ds)
    if n < 10:
        raise DatasetError(f"need at least 10 windows to split, got {n}")
    n_train, n_val, n_test = split_sizes(n, spec)
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"split of {n} windows leaves an empty set")
    return (ds.subset(slice(0, n_train)), ds.subset(slice(n_train, n_train + n_val)),
            ds.subset(slice(n_train + n_val, n)))


def fit_scaler(train: WindowedDataset) -> ScalerParams:
    if len(train) == 0:
        raise DatasetError("cannot fit a scaler on an empty training set")
    flat = train.inputs.reshape(-1, train.n_features)
    return ScalerParams(flat.min(axis=0), flat.max(axis=0), train.targets.min(),
                        train.targets.max(), train.feature_names)


def _scale(x, lo, hi):
    span = hi - lo
    safe = np.where(span == 0, 1.0, span)
    return np.where(span == 0, 0.0, (x - lo) / safe)


def apply_scaler(ds: WindowedDataset, p: ScalerParams) -> WindowedDataset:
    """Map features and targets with the training min/max; constant columns map to 0."""
    if ds.n_features != p.feature_min.size:
        raise DimensionError(f"dataset has {ds.n_features} features, scaler has {p.feature_min.size}")
    if ds.scaled:
        raise ScalingError("dataset is already scaled")
    x = _scale(ds.inputs, p.feature_min, p.feature_max)
    y = _scale(ds.targets, p.target_min, p.target_max)
    return replace(ds, inputs=x, targets=y, scaled=True)


def inverse_scale_features(x, p: ScalerParams) -> np.ndarray:
    """Undo feature scaling; degenerate columns come back as their constant."""
    return np.asarray(x) * (p.feature_max - p.feature_min) + p.feature_min


def inverse_scale_target(y_scaled, p: ScalerParams) -> np.ndarray:
    if p.target_degenerate:
        raise ScalingError("target scaler is degenerate (max == min); cannot invert")
    return np.asarray(y_scaled, dtype=np.float64) * (p.target_max - p.target_min) + p.target_min


# -------------------------------------------------------------- archive I/O

def write_split_csv(ds: WindowedDataset, path) -> Path:
    """Flattened windows: ``sample,step,<features>,target,hole`` (one line per step)."""
    path = Path(path)
    n, T, F = ds.inputs.shape
    sample = np.repeat(np.arange(n), T)
    step = np.tile(np.arange(T), n)
    table = np.column_stack([sample, step, ds.inputs.reshape(n * T, F),
                             np.repeat(ds.targets, T), np.repeat(ds.hole_of_sample, T)])
    header = ",".join(["sample", "step", *ds.feature_names, "target", "hole"])
    np.savetxt(path, table, delimiter=",", header=header, comments="",
               fmt=["%d", "%d"] + ["%.17g"] * (F + 1) + ["%d"])
    return path


def read_split_csv(path) -> WindowedDataset:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("file not found", path=path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != ["sample", "step"] or header[-2:] != ["target", "hole"]:
        raise MalformedRowError("expected header sample,step,<features...>,target,hole", path=path, line=1)
    names = tuple(header[2:-2])
    F = len(names)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise MalformedRowError(f"unreadable split: {exc}", path=path) from None
    if data.size == 0:
        return WindowedDataset(np.empty((0, 1, F)), np.empty(0), np.empty(0, dtype=np.int64), names)
    sample, step = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64)
    T = int(step.max()) + 1
    n = int(sample.max()) + 1
    if data.shape[0] != n * T or np.any(step != np.tile(np.arange(T), n)):
        raise MalformedRowError("windows are not complete and ordered", path=path)
    inputs = data[:, 2:2 + F].reshape(n, T, F)
    return WindowedDataset(inputs, data[T - 1::T, 2 + F], data[T - 1::T, 3 + F].astype(np.int64), names)


def write_archive(directory, train, val, test, scaler: ScalerParams, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_split_csv(train, d / "train.csv")
    write_split_csv(val, d / "val.csv")
    write_split_csv(test, d / "test.csv")
    doc = scaler.to_dict()
    if extra:
        doc.update(extra)
    (d / "scaler.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return d


def read_archive(directory):
    """Returns ``(train, val, test, scaler, scaler_doc)``; splits are unscaled."""
    d = Path(directory)
    sp = d / "scaler.json"
    if not sp.exists():
        raise MissingInputError("file not found", path=sp)
    doc = json.loads(sp.read_text())
    return (read_split_csv(d / "train.csv"), read_split_csv(d / "val.csv"),
            read_split_csv(d / "test.csv"), ScalerParams.from_dict(doc), doc)
