"""Pipeline configuration: YAML file + flag overrides, validated as a whole.

The document is a tree of sections. Every key is optional; missing keys take
the defaults in :data:`DEFAULTS`, unknown keys are rejected. Example::

    seeds: {rig: 7, model: 7}
    features: {ma_window: 200, band_hz: [10, 250]}
    regions:
      - {name: region1, start: 200, end: 800}
    model: {n_layers: 1, units_per_layer: [32]}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dataset import RegionSpec, SplitSpec, check_disjoint
from .errors import ConfigurationError, DomainError, MissingInputError, ParseError
from .features import FEATURE_COLUMNS, SpectralBand
from .neural.model import Hyperparameters
from .synthrig import RigConfig
from .tuner import SearchSpace

DEFAULTS = {
    "rig": {
        "sampling_rate_hz": 500.0,
        "spindle_speed_rpm": 2400.0,
        "feed_mm_per_min": 400.0,
        "hole_depth_mm": 25.0,
        "n_holes": 1901,
        "wear_measure_interval": 48,
        "flutes": 2,
        "gap_s": 0.5,
        "noise_scale": 1.0,
    },
    "measurements": {"noise_um": 2.0, "include_final": False},
    "segmentation": {"method": "markers", "window_samples": 50, "threshold_ratio": 0.25},
    "features": {
        "band_hz": [10.0, 250.0],
        "ma_window": 200,
        "drop": ["Im_SPW", "Fz_SPW", "Tz_SPW"],
    },
    "quantize": {"jitter_um": 1.0},
    "regions": [
        {"name": "region1", "start": 200, "end": 800},
        {"name": "region2", "start": 800, "end": 1400},
        {"name": "region3", "start": 1400, "end": 1800},
    ],
    "dataset": {"timestep": 20, "split": [0.75, 0.15, 0.10]},
    "model": {
        "n_layers": 2,
        "units_per_layer": [64, 64],
        "activation": "tanh",
        "dropout_rate": 0.1,
        "recurrent_dropout_rate": 0.0,
        "regularizer": "L2",
        "reg_factor": 1e-4,
        "learning_rate": 1e-3,
        "max_epochs": 100,
        "patience": 10,
        "batch_size": 32,
        "min_delta": 1e-4,
    },
    "tune": {
        "enabled": False,
        "n_trials": 16,
        "rungs": [5, 20, 100],
        "keep_fraction": 0.5,
        "n_jobs": 1,
        "space": {
            "min_layers": 1,
            "max_layers": 10,
            "min_units": 16,
            "max_units": 128,
            "units_step": 16,
            "activations": ["relu", "tanh"],
            "max_dropout": 0.5,
            "max_recurrent_dropout": 0.5,
            "regularizers": ["L1", "L2"],
            "reg_factors": [1e-5, 1e-4, 1e-3, 1e-2],
            "lr_min": 1e-4,
            "lr_max": 1e-2,
        },
    },
    "seeds": {"rig": 7, "measurements": 7, "quantize": 7, "model": 7, "tuner": 7},
    "paths": {"output_root": "runs", "recording": None, "measurements": None},
}

# Stage -> (upstream stages, config sections it reads, seed it uses).
# Paths never enter a hash so relocated runs keep their lineage.
STAGES = {
    "simulate": ((), ("rig", "measurements"), ("rig", "measurements")),
    "segment": (("simulate",), ("segmentation",), None),
    "extract": (("segment",), ("features",), None),
    "quantize": (("simulate",), ("quantize",), "quantize"),
    "build": (("extract", "quantize"), ("regions", "dataset"), None),
    "train": (("build",), ("model",), "model"),
    "tune": (("build",), ("model", "tune"), "tuner"),
}


def _merge(base, override, where: str):
    if isinstance(base, dict):
        if not isinstance(override, dict):
            raise ConfigurationError(f"{where or 'config'}: expected a mapping")
        out = copy.deepcopy(base)
        for k, v in override.items():
            if k not in base:
                raise ConfigurationError(f"unknown config key {where + '.' if where else ''}{k}")
            out[k] = _merge(base[k], v, f"{where}.{k}" if where else k)
        return out
    return copy.deepcopy(override)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PipelineConfig:
    tree: dict

    @classmethod
    def from_tree(cls, doc: dict | None = None, overrides=()) -> "PipelineConfig":
        tree = _merge(DEFAULTS, doc or {}, "")
        for key, value in overrides:
            tree = _merge(DEFAULTS, _set_path(tree, key, value), "")
        cfg = cls(tree)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        doc = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise MissingInputError("config file not found", path=path)
            try:
                doc = yaml.safe_load(path.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
            if not isinstance(doc, dict):
                raise ConfigurationError(f"{path}: top level must be a mapping")
        return cls.from_tree(doc, overrides)

    # ---------------------------------------------------------- typed views

    def rig(self) -> RigConfig:
        return RigConfig(seed=int(self.tree["seeds"]["rig"]), **self.tree["rig"])

    def band(self) -> SpectralBand:
        lo, hi = self.tree["features"]["band_hz"]
        return SpectralBand(float(lo), float(hi))

    def regions(self) -> tuple:
        return tuple(RegionSpec(r["name"], int(r["start"]), int(r["end"]))
                     for r in self.tree["regions"])

    def region(self, name: str) -> RegionSpec:
        for r in self.regions():
            if r.name == name:
                return r
        raise ConfigurationError(f"no region named {name!r}")

    def split_spec(self) -> SplitSpec:
        return SplitSpec(*(float(f) for f in self.tree["dataset"]["split"]))

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(seed=int(self.tree["seeds"]["model"]), **self.tree["model"])

    def search_space(self) -> SearchSpace:
        s = dict(self.tree["tune"]["space"])
        s["activations"] = tuple(s["activations"])
        s["regularizers"] = tuple(s["regularizers"])
        s["reg_factors"] = tuple(float(f) for f in s["reg_factors"])
        m = self.tree["model"]
        return SearchSpace(batch_size=int(m["batch_size"]), patience=int(m["patience"]), **s)

    def output_root(self) -> Path:
        return Path(self.tree["paths"]["output_root"])

    # ----------------------------------------------------------- validation

    def validate(self) -> None:
        t = self.tree
        try:
            rig = self.rig()
            self.band().check_nyquist(rig.sampling_rate_hz)
        except (TypeError, DomainError) as exc:
            raise ConfigurationError(f"rig/features: {exc}") from None
        f = t["features"]
        if int(f["ma_window"]) < 1:
            raise ConfigurationError("features.ma_window must be >= 1")
        unknown = set(f["drop"]) - set(FEATURE_COLUMNS)
        if unknown:
            raise ConfigurationError(f"features.drop: unknown columns {sorted(unknown)}")
        if len(f["drop"]) >= len(FEATURE_COLUMNS):
            raise ConfigurationError("features.drop removes every column")
        seg = t["segmentation"]
        if seg["method"] not in ("markers", "threshold"):
            raise ConfigurationError("segmentation.method must be markers or threshold")
        if int(seg["window_samples"]) < 1 or not 0 < float(seg["threshold_ratio"]) < 1:
            raise ConfigurationError("segmentation window must be >= 1 and threshold_ratio in (0, 1)")
        if float(t["measurements"]["noise_um"]) < 0 or float(t["quantize"]["jitter_um"]) < 0:
            raise ConfigurationError("measurement noise and quantizer jitter must be non-negative")
        if not t["regions"]:
            raise ConfigurationError("at least one region is required")
        for r in t["regions"]:
            if set(r) != {"name", "start", "end"}:
                raise ConfigurationError(f"region entries need exactly name/start/end, got {sorted(r)}")
        regions = self.regions()
        if len({r.name for r in regions}) != len(regions):
            raise ConfigurationError("region names must be unique")
        check_disjoint(regions)
        for r in regions:
            if r.end_hole > rig.n_holes:
                raise ConfigurationError(f"region {r.name} ends past the last hole ({rig.n_holes})")
        if int(t["dataset"]["timestep"]) < 1:
            raise ConfigurationError("dataset.timestep must be >= 1")
        if len(t["dataset"]["split"]) != 3:
            raise ConfigurationError("dataset.split needs three fractions")
        self.split_spec()
        try:
            self.hyperparameters().validate()
            self.search_space().validate()
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        tu = t["tune"]
        if int(tu["n_trials"]) < 1 or int(tu["n_jobs"]) < 1:
            raise ConfigurationError("tune.n_trials and tune.n_jobs must be >= 1")
        rungs = [int(r) for r in tu["rungs"]]
        if not rungs or any(b <= a for a, b in zip(rungs, rungs[1:])) or rungs[0] < 1:
            raise ConfigurationError("tune.rungs must be positive and strictly increasing")
        if not 0 < float(tu["keep_fraction"]) <= 1:
            raise ConfigurationError("tune.keep_fraction must lie in (0, 1]")
        for k, v in t["seeds"].items():
            if not isinstance(v, int) or v < 0:
                raise ConfigurationError(f"seeds.{k} must be a non-negative integer")

    # -------------------------------------------------------------- lineage

    def stage_hash(self, stage: str) -> str:
        """Hash of the config sections ``stage`` and everything upstream of it reads."""
        parents, sections, seeds = STAGES[stage]
        own = {s: self.tree[s] for s in sections}
        if seeds:
            names = (seeds,) if isinstance(seeds, str) else seeds
            own["seeds"] = {s: self.tree["seeds"][s] for s in names}
        upstream = [self.stage_hash(p) for p in parents]
        return _sha(_canonical({"stage": stage, "upstream": upstream, "config": own}))

    def stage_seed(self, stage: str):
        seeds = STAGES[stage][2]
        if seeds is None:
            return None
        if isinstance(seeds, str):
            return self.tree["seeds"][seeds]
        return {s: self.tree["seeds"][s] for s in seeds}

    def lineage(self, stage: str) -> dict:
        return {"stage": stage, "config_hash": self.stage_hash(stage), "seed": self.stage_seed(stage)}

    def config_hash(self) -> str:
        tree = {k: v for k, v in self.tree.items() if k != "paths"}
        return _sha(_canonical(tree))

    def write_effective(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        p = d / "effective_config.json"
        p.write_text(json.dumps(self.tree, indent=2, sort_keys=True) + "\n")
        return p


def parse_override(text: str) -> tuple[str, object]:
    """``section.key=value`` with the value read as YAML (``model.n_layers=1``)."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigurationError(f"override {text!r}: unreadable value") from None
    return key.strip(), value


def _set_path(tree: dict, key: str, value) -> dict:
    parts = key.split(".")
    out = copy.deepcopy(tree)
    node = out
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node, dict) or p not in node:
            raise ConfigurationError(f"unknown config key {'.'.join(parts[:i + 1])}")
        node = node[p]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigurationError(f"unknown config key {key}")
    node[parts[-1]] = value
    return out


def read_lineage(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingInputError("lineage record not found", path=path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", path=path) from None
