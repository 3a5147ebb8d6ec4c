import csv
import json

import numpy as np
import pytest
import yaml

from toolwear import cli
from toolwear.config import PipelineConfig, parse_override
from toolwear.errors import ConfigurationError, DimensionError, DomainError, NumericError
from toolwear.evaluation import mape, read_plot_data

SMALL = {
    "rig": {"n_holes": 260, "wear_measure_interval": 24},
    "features": {"ma_window": 20},
    "regions": [{"name": "early", "start": 30, "end": 130}, {"name": "late", "start": 130, "end": 250}],
    "dataset": {"timestep": 5},
    "model": {"n_layers": 1, "units_per_layer": [16], "max_epochs": 6, "dropout_rate": 0.0},
    "tune": {"n_trials": 2, "rungs": [1, 2],
             "space": {"max_layers": 1, "max_units": 16}},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


# ------------------------------------------------------------------ mape

def test_mape_examples():
    assert mape([10, 20], [10, 20]) == 0.0
    assert mape([100, 200], [110, 180]) == pytest.approx(10.0, rel=1e-15)
    with pytest.raises(DomainError):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        mape([-1.0], [1.0])
    with pytest.raises(DimensionError):
        mape([1.0], [1.0, 2.0])
    with pytest.raises(DimensionError):
        mape([], [])


# ---------------------------------------------------------------- config

def test_defaults_are_valid():
    cfg = PipelineConfig.load()
    assert [r.name for r in cfg.regions()] == ["region1", "region2", "region3"]
    assert cfg.regions()[0].start_hole == 200 and cfg.regions()[2].end_hole == 1800
    assert cfg.tree["features"]["ma_window"] == 200
    assert cfg.tree["dataset"]["timestep"] == 20
    assert cfg.split_spec().train_frac == 0.75
    hp = cfg.hyperparameters()
    assert hp.units_per_layer == (64, 64) and hp.seed == 7


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model:\n  n_units: 3\n")
    with pytest.raises(ConfigurationError, match="model.n_units"):
        PipelineConfig.load(p)
    with pytest.raises(ConfigurationError, match="nosuch"):
        PipelineConfig.load(None, [parse_override("nosuch.key=1")])


def test_overrides_and_validation():
    cfg = PipelineConfig.load(None, [parse_override("model.n_layers=1"),
                                     parse_override("model.units_per_layer=[32]")])
    assert cfg.hyperparameters().units_per_layer == (32,)
    bad = [
        [("regions", [{"name": "a", "start": 0, "end": 100}, {"name": "b", "start": 50, "end": 150}])],
        [("features.band_hz", [10, 300])],
        [("model.learning_rate", 0.5)],
        [("dataset.split", [0.5, 0.5, 0.5])],
        [("features.drop", ["Im_XYZ"])],
        [("regions", [{"name": "a", "start": 0, "end": 5000}])],
    ]
    for ov in bad:
        with pytest.raises(ConfigurationError):
            PipelineConfig.load(None, ov)


def test_stage_hashes_follow_dependencies():
    a = PipelineConfig.load()
    b = PipelineConfig.load(None, [("model.learning_rate", 2e-3)])
    c = PipelineConfig.load(None, [("seeds.rig", 8)])
    d = PipelineConfig.load(None, [("paths.output_root", "/elsewhere")])
    assert a.stage_hash("build") == b.stage_hash("build")
    assert a.stage_hash("train") != b.stage_hash("train")
    assert a.stage_hash("extract") != c.stage_hash("extract")
    assert a.config_hash() == d.config_hash()


# ------------------------------------------------------------- commands

def test_stage_by_stage(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    base = ["-c", small_config, "-o", out]
    for stage in ("simulate", "segment", "extract", "quantize", "build", "train", "evaluate"):
        code, io = run([stage, *base], capsys)
        assert code == 0, io.err
        assert io.out.startswith(stage + ":")
        assert len(io.out.strip().splitlines()) == 1
        if stage not in ("build", "train", "evaluate"):
            assert json.loads((out / stage / "lineage.json").read_text())["config_hash"]
            assert (out / stage / "effective_config.json").exists()

    raw = (out / "extract" / "features_raw.csv").read_text().splitlines()
    assert len(raw) == 261
    assert (out / "extract" / "features_ma20.csv").exists()

    for region in ("early", "late"):
        ev = json.loads((out / "evaluate" / region / "eval_report.json").read_text())
        n_test = len((out / "build" / region / "test.csv").read_text().splitlines()) - 1
        assert ev["n_test"] * 5 == n_test
        assert len(ev["records"]) == ev["n_test"]
        rows = read_plot_data(out / "evaluate" / region / "plot_data.csv")
        test_rows = [r for r in rows if r[3] == "test"]
        assert len(test_rows) == ev["n_test"]
        assert abs(mape([r[1] for r in test_rows], [r[2] for r in test_rows]) - ev["mape_percent"]) <= 1e-9
        assert {r[3] for r in rows} == {"train", "val", "test"}
        with open(out / "evaluate" / region / "plot_data.csv") as fh:
            assert next(csv.reader(fh)) == ["hole_index", "measured_um", "predicted_um", "split"]
        model = json.loads((out / "train" / region / "model.json").read_text())
        assert model["metadata"]["lineage"]["seed"] == 7
        assert len(model["metadata"]["lineage"]["config_hash"]) == 16


def test_rerun_is_byte_identical(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    base = ["-c", small_config, "-o", out]
    for stage in ("simulate", "segment", "extract", "quantize", "build"):
        assert run([stage, *base], capsys)[0] == 0
    first = (out / "build" / "early" / "train.csv").read_bytes()
    feats = (out / "extract" / "features_ma20.csv").read_bytes()
    for stage in ("extract", "build"):
        assert run([stage, *base], capsys)[0] == 0
    assert (out / "build" / "early" / "train.csv").read_bytes() == first
    assert (out / "extract" / "features_ma20.csv").read_bytes() == feats


def test_lineage_mismatch_refused(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    base = ["-c", small_config, "-o", out]
    for stage in ("simulate", "segment", "extract", "quantize", "build", "train"):
        assert run([stage, *base], capsys)[0] == 0
    # dataset rebuilt under a different timestep: the trained models no longer match
    code, io = run(["build", *base, "--set", "dataset.timestep=6"], capsys)
    assert code == 0
    code, io = run(["evaluate", *base, "--set", "dataset.timestep=6"], capsys)
    assert code == 2
    assert "re-run train" in io.err or "trained on dataset" in io.err
    # evaluating with the original config sees a build dir made by another config
    code, io = run(["evaluate", *base], capsys)
    assert code == 2 and "re-run build" in io.err


def test_tampered_artifact_refused(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    base = ["-c", small_config, "-o", out]
    for stage in ("simulate", "segment", "extract"):
        assert run([stage, *base], capsys)[0] == 0
    p = out / "segment" / "segments.csv"
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    code, io = run(["extract", *base], capsys)
    assert code == 2 and "contents changed" in io.err


def test_tune_and_evaluate_tuned(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    base = ["-c", small_config, "-o", out]
    for stage in ("simulate", "segment", "extract", "quantize", "build"):
        assert run([stage, *base], capsys)[0] == 0
    code, io = run(["tune", *base, "--region", "late"], capsys)
    assert code == 0, io.err
    lines = (out / "tune" / "late" / "leaderboard.csv").read_text().splitlines()
    assert lines[0] == "trial,val_loss,epochs,seconds" and len(lines) == 3
    code, io = run(["evaluate", *base, "--region", "late", "--source", "tune"], capsys)
    assert code == 0, io.err
    assert "late MAPE" in io.out


def test_external_recording_with_threshold(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    assert run(["simulate", "-c", small_config, "-o", out], capsys)[0] == 0
    rec = out / "simulate" / "recording.csv"
    ext = tmp_path / "ext.csv"
    ext.write_bytes(rec.read_bytes())  # no markers sidecar next to this copy
    code, io = run(["segment", "-c", small_config, "-o", tmp_path / "other", "--recording", ext,
                    "--method", "threshold"], capsys)
    assert code == 0, io.err
    assert io.out.strip() == "segment: 260 segments"


def test_pipeline_small(tmp_path, small_config, capsys):
    code, io = run(["pipeline", "-c", small_config, "-o", tmp_path / "p"], capsys)
    assert code == 0, io.err
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert set(rep["regions"]) == {"early", "late"}
    assert rep["segments"] == 260 and rep["feature_rows"] == 260
    assert rep["anchors"] == 11
    assert "seconds" not in json.dumps(rep) and "wall_time" not in json.dumps(rep)
    timings = json.loads((tmp_path / "p" / "timings.json").read_text())
    assert "train" in timings


def test_output_root_env(tmp_path, small_config, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "envroot"))
    assert run(["simulate", "-c", small_config], capsys)[0] == 0
    assert (tmp_path / "envroot" / "simulate" / "recording.csv").exists()


def test_exit_codes(tmp_path, small_config, capsys, monkeypatch):
    bad = tmp_path / "bad.yaml"
    bad.write_text("rig: {n_holz: 3}\n")
    assert run(["simulate", "-c", bad, "-o", tmp_path], capsys)[0] == 1
    assert run(["simulate", "--set", "model.activation=gelu", "-o", tmp_path], capsys)[0] == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    code, io = run(["segment", "-c", small_config, "-o", tmp_path, "--recording", tmp_path / "missing.csv"],
                   capsys)
    assert code == 2 and "missing.csv" in io.err
    code, io = run(["build", "-c", small_config, "-o", tmp_path / "empty"], capsys)
    assert code == 2 and "lineage.json" in io.err

    def boom(*a, **k):
        raise NumericError("training diverged")

    monkeypatch.setattr(cli, "run_simulate", boom)
    code, io = run(["simulate", "-c", small_config, "-o", tmp_path], capsys)
    assert code == 3 and "simulate" in io.err


def test_seed_flag_sets_every_seed(tmp_path, small_config):
    args = cli.build_parser().parse_args(["simulate", "-c", str(small_config), "--seed", "3"])
    cfg = cli._load_config(args)
    assert set(cfg.tree["seeds"].values()) == {3}
