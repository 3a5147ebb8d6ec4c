"""``toolwear`` command line: one subcommand per pipeline stage plus ``pipeline``.

Output layout under the output root::

    simulate/   recording.csv, recording.markers.csv, measurements.csv, wear_truth.csv
    segment/    segments.csv
    extract/    features_raw.csv, features_ma<W>.csv, sensitivity.json
    quantize/   wear_quantized.csv
    build/<region>/     train.csv, val.csv, test.csv, scaler.json
    train/<region>/     model.json, train_report.json
    tune/<region>/      model.json, search_report.json, leaderboard.csv
    evaluate/<region>/  eval_report.json, plot_data.csv
    report.json, timings.json   (pipeline only)

Every stage directory also holds ``effective_config.json`` and
``lineage.json`` (stage config hash, seed, SHA-256 of each artifact).

Environment: ``TOOLWEAR_OUTPUT_ROOT`` replaces the configured output root,
``TOOLWEAR_THREADS`` caps BLAS threads. Exit codes: 0 ok, 1 usage or
configuration, 2 data, 3 numeric failure.
"""

import os

_threads = os.environ.get("TOOLWEAR_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import dataset as ds_mod  # noqa: E402
from . import features as feat  # noqa: E402
from . import ingest, synthrig, wear  # noqa: E402
from .config import PipelineConfig, parse_override, read_lineage  # noqa: E402
from .errors import (  # noqa: E402
    ConfigurationError,
    LineageError,
    NumericError,
    ToolwearError,
)
from .evaluation import evaluate_split, mape, write_eval_report, write_plot_data  # noqa: E402
from .neural.model import init_model, load_model, predict, save_model  # noqa: E402
from .neural.train import train as train_model  # noqa: E402
from .tuner import run_search, write_search_report  # noqa: E402

log = logging.getLogger("toolwear")

OUTPUT_ROOT_ENV = "TOOLWEAR_OUTPUT_ROOT"


# ------------------------------------------------------------------ lineage

def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_lineage(directory: Path, cfg: PipelineConfig, stage: str, files, extra=None) -> Path:
    doc = cfg.lineage(stage)
    doc["files"] = {Path(f).name: _digest(f) for f in files}
    if extra:
        doc.update(extra)
    cfg.write_effective(directory)
    p = Path(directory) / "lineage.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return p


def check_lineage(directory: Path, cfg: PipelineConfig, stage: str) -> dict:
    """Refuse artifacts made under a different configuration or edited since."""
    doc = read_lineage(Path(directory) / "lineage.json")
    want = cfg.stage_hash(stage)
    if doc.get("config_hash") != want:
        raise LineageError(f"{directory}: produced by config {doc.get('config_hash')}, "
                           f"current {stage} config is {want}; re-run {stage}")
    for name, digest in doc.get("files", {}).items():
        f = Path(directory) / name
        if not f.exists():
            raise LineageError(f"{f}: listed in lineage.json but missing")
        if _digest(f) != digest:
            raise LineageError(f"{f}: contents changed since {stage} wrote it")
    return doc


# ------------------------------------------------------------------- stages

def _stage_dir(root: Path, stage: str, region: str | None = None) -> Path:
    d = Path(root) / stage
    if region:
        d = d / region
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_simulate(cfg: PipelineConfig, root: Path) -> dict:
    rig = cfg.rig()
    curve = synthrig.generate_wear_curve(rig)
    rec = synthrig.synthesize_recording(rig, curve)
    m = cfg.tree["measurements"]
    meas = synthrig.sample_wear_measurements(curve, rig.wear_measure_interval, float(m["noise_um"]),
                                             seed=int(cfg.tree["seeds"]["measurements"]),
                                             include_final=bool(m["include_final"]))
    d = _stage_dir(root, "simulate")
    files = [synthrig.write_recording(rec, d / "recording.csv"),
             synthrig.markers_path(d / "recording.csv"),
             synthrig.write_measurements(meas, d / "measurements.csv"),
             synthrig.write_wear_curve(curve, d / "wear_truth.csv")]
    write_lineage(d, cfg, "simulate", files)
    return {"holes": rig.n_holes, "samples": len(rec), "measurements": len(meas), "dir": d}


def _recording_path(cfg: PipelineConfig, root: Path) -> Path:
    external = cfg.tree["paths"]["recording"]
    if external:
        return Path(external)
    check_lineage(Path(root) / "simulate", cfg, "simulate")
    return Path(root) / "simulate" / "recording.csv"


def run_segment(cfg: PipelineConfig, root: Path) -> dict:
    src = _recording_path(cfg, root)
    rec = ingest.load_recording(src, sampling_rate_hz=cfg.rig().sampling_rate_hz)
    s = cfg.tree["segmentation"]
    if s["method"] == "markers":
        segs = ingest.segment_by_markers(rec)
    else:
        segs = ingest.segment_by_threshold(rec, int(s["window_samples"]), float(s["threshold_ratio"]))
    d = _stage_dir(root, "segment")
    out = ingest.write_segment_index(segs, d / "segments.csv")
    write_lineage(d, cfg, "segment", [out], {"recording": str(src.resolve())})
    return {"segments": len(segs), "dir": d}


def _ma_name(cfg: PipelineConfig) -> str:
    return f"features_ma{int(cfg.tree['features']['ma_window'])}.csv"


def run_extract(cfg: PipelineConfig, root: Path) -> dict:
    seg_dir = Path(root) / "segment"
    doc = check_lineage(seg_dir, cfg, "segment")
    rec = ingest.load_recording(doc["recording"], sampling_rate_hz=cfg.rig().sampling_rate_hz)
    segs = ingest.read_segments(rec, seg_dir / "segments.csv")
    raw = feat.extract_features(segs, cfg.band())
    smooth = feat.moving_average(raw, int(cfg.tree["features"]["ma_window"]))
    d = _stage_dir(root, "extract")
    files = [feat.write_feature_matrix(raw, d / "features_raw.csv"),
             feat.write_feature_matrix(smooth, d / _ma_name(cfg))]
    truth = Path(root) / "simulate" / "wear_truth.csv"
    if truth.exists() and not cfg.tree["paths"]["recording"]:
        w = np.array([m.wear_um for m in ingest.load_measurements(truth)])
        if w.size == len(smooth):
            sens = feat.sensitivity_table(smooth, w)
            p = d / "sensitivity.json"
            p.write_text(json.dumps(sens, indent=2, sort_keys=True) + "\n")
            files.append(p)
    write_lineage(d, cfg, "extract", files)
    return {"rows": len(raw), "dir": d}


def run_quantize(cfg: PipelineConfig, root: Path) -> dict:
    external = cfg.tree["paths"]["measurements"]
    if external:
        src = Path(external)
    else:
        check_lineage(Path(root) / "simulate", cfg, "simulate")
        src = Path(root) / "simulate" / "measurements.csv"
    meas = ingest.load_measurements(src)
    curve = wear.quantize(meas, cfg.rig().n_holes, float(cfg.tree["quantize"]["jitter_um"]),
                          seed=int(cfg.tree["seeds"]["quantize"]))
    d = _stage_dir(root, "quantize")
    out = wear.write_curve(curve, d / "wear_quantized.csv")
    write_lineage(d, cfg, "quantize", [out])
    return {"anchors": int(curve.anchor_indices.size), "holes": len(curve), "dir": d}


def _regions(cfg: PipelineConfig, names):
    if not names:
        return cfg.regions()
    return tuple(cfg.region(n) for n in names)


def run_build(cfg: PipelineConfig, root: Path, regions=None) -> dict:
    ex_dir, q_dir = Path(root) / "extract", Path(root) / "quantize"
    check_lineage(ex_dir, cfg, "extract")
    check_lineage(q_dir, cfg, "quantize")
    smooth = feat.read_feature_matrix(ex_dir / _ma_name(cfg), smoothed=True)
    sel = feat.select_features(smooth, cfg.tree["features"]["drop"])
    curve = wear.read_curve(q_dir / "wear_quantized.csv")
    timestep = int(cfg.tree["dataset"]["timestep"])
    out = {}
    for region in _regions(cfg, regions):
        f, w = ds_mod.slice_region(sel, curve, region)
        windows = ds_mod.make_windows(f, w, timestep)
        tr, va, te = ds_mod.split(windows, cfg.split_spec())
        scaler = ds_mod.fit_scaler(tr)
        d = _stage_dir(root, "build", region.name)
        lin = cfg.lineage("build")
        ds_mod.write_archive(d, tr, va, te, scaler, {"lineage": lin, "region": region.name})
        write_lineage(d, cfg, "build", [d / n for n in ("train.csv", "val.csv", "test.csv", "scaler.json")],
                      {"region": region.name})
        out[region.name] = {"rows": len(f), "windows": len(windows),
                            "split": [len(tr), len(va), len(te)]}
    return out


def _load_archive(cfg: PipelineConfig, root: Path, region: str):
    d = Path(root) / "build" / region
    doc = check_lineage(d, cfg, "build")
    tr, va, te, scaler, _ = ds_mod.read_archive(d)
    return tr, va, te, scaler, doc["config_hash"]


def run_train(cfg: PipelineConfig, root: Path, regions=None) -> dict:
    out = {}
    for region in _regions(cfg, regions):
        tr, va, te, scaler, build_hash = _load_archive(cfg, root, region.name)
        hp = cfg.hyperparameters()
        model = init_model(hp, tr.n_features)
        model.scaler = scaler
        t0 = time.perf_counter()
        report = train_model(model, ds_mod.apply_scaler(tr, scaler), ds_mod.apply_scaler(va, scaler), hp)
        seconds = time.perf_counter() - t0
        model.metadata.update(region=region.name, lineage=cfg.lineage("train"), build_hash=build_hash)
        d = _stage_dir(root, "train", region.name)
        files = [save_model(model, d / "model.json"), d / "train_report.json"]
        files[1].write_text(json.dumps(report.to_dict(include_time=False), indent=2, sort_keys=True) + "\n")
        write_lineage(d, cfg, "train", files, {"region": region.name})
        out[region.name] = {"best_epoch": report.best_epoch, "stopped_epoch": report.stopped_epoch,
                            "best_val_loss": report.best_val_loss, "seconds": seconds}
    return out


def run_tune(cfg: PipelineConfig, root: Path, regions=None) -> dict:
    t = cfg.tree["tune"]
    out = {}
    for region in _regions(cfg, regions):
        tr, va, te, scaler, build_hash = _load_archive(cfg, root, region.name)
        t0 = time.perf_counter()
        result = run_search(cfg.search_space(), ds_mod.apply_scaler(tr, scaler),
                            ds_mod.apply_scaler(va, scaler), n_trials=int(t["n_trials"]),
                            rungs=tuple(t["rungs"]), keep_fraction=float(t["keep_fraction"]),
                            master_seed=int(cfg.tree["seeds"]["tuner"]), n_jobs=int(t["n_jobs"]))
        seconds = time.perf_counter() - t0
        if not np.isfinite(result.best.best_val_loss):
            raise NumericError(f"{region.name}: every tuner trial diverged")
        model = result.best_trainer.model
        model.scaler = scaler
        model.metadata.update(region=region.name, lineage=cfg.lineage("tune"), build_hash=build_hash,
                              trial=result.best.trial)
        d = _stage_dir(root, "tune", region.name)
        write_search_report(result, d, include_time=False)
        files = [save_model(model, d / "model.json"), d / "search_report.json", d / "leaderboard.csv"]
        write_lineage(d, cfg, "tune", files, {"region": region.name})
        out[region.name] = {"best_trial": result.best.trial, "best_val_loss": result.best.best_val_loss,
                            "epochs_consumed": result.epochs_consumed,
                            "epochs_budgeted": result.epochs_budgeted, "seconds": seconds,
                            "hyperparameters": result.best.config.to_dict()}
    return out


def run_evaluate(cfg: PipelineConfig, root: Path, regions=None, source: str = "train",
                 model_path=None) -> dict:
    chosen = _regions(cfg, regions)
    if model_path is not None and len(chosen) != 1:
        raise ConfigurationError("--model needs exactly one --region")
    out = {}
    for region in chosen:
        tr, va, te, scaler, build_hash = _load_archive(cfg, root, region.name)
        if model_path is not None:
            mp = Path(model_path)
        else:
            mdir = Path(root) / source / region.name
            check_lineage(mdir, cfg, source)
            mp = mdir / "model.json"
        model = load_model(mp)
        if model.metadata.get("build_hash") != build_hash:
            raise LineageError(f"{mp}: trained on dataset {model.metadata.get('build_hash')}, "
                               f"archive for {region.name} is {build_hash}")
        preds = {name: predict(model, split) for name, split in (("train", tr), ("val", va), ("test", te))}
        lineage = {"build_hash": build_hash, "model": model.metadata.get("lineage", {})}
        report = evaluate_split(region.name, te.hole_of_sample, te.targets, preds["test"], lineage)
        d = _stage_dir(root, "evaluate", region.name)
        rows = [(h, m, p, name) for name, split in (("train", tr), ("val", va), ("test", te))
                for h, m, p in zip(split.hole_of_sample, split.targets, preds[name])]
        files = [write_eval_report(report, d / "eval_report.json"), write_plot_data(rows, d / "plot_data.csv")]
        cfg.write_effective(d)
        (d / "lineage.json").write_text(json.dumps(
            {**lineage, "files": {f.name: _digest(f) for f in files}}, indent=2, sort_keys=True) + "\n")
        out[region.name] = {
            "mape_percent": report.mape_percent,
            "mape_train_percent": mape(tr.targets, preds["train"]),
            "mape_val_percent": mape(va.targets, preds["val"]),
            "report": report,
        }
    return out


def run_pipeline(cfg: PipelineConfig, root: Path) -> dict:
    """All stages for every region; writes ``report.json`` (deterministic) and ``timings.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    timings = {}

    def timed(name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            res = fn(*args, **kw)
        except ToolwearError as exc:
            exc.stage = name
            raise
        timings[name] = time.perf_counter() - t0
        return res

    sim = timed("simulate", run_simulate, cfg, root)
    seg = timed("segment", run_segment, cfg, root)
    ext = timed("extract", run_extract, cfg, root)
    qnt = timed("quantize", run_quantize, cfg, root)
    bld = timed("build", run_build, cfg, root)
    tuned = bool(cfg.tree["tune"]["enabled"])
    fit = timed("tune" if tuned else "train", run_tune if tuned else run_train, cfg, root)
    ev = timed("evaluate", run_evaluate, cfg, root, source="tune" if tuned else "train")

    regions = {}
    for name, e in ev.items():
        rep = e["report"].to_dict()
        f = {k: v for k, v in fit[name].items() if k != "seconds"}
        regions[name] = {
            "dataset": bld[name],
            "fit": f,
            "mape_percent": e["mape_percent"],
            "mape_train_percent": e["mape_train_percent"],
            "mape_val_percent": e["mape_val_percent"],
            "test_records": rep["records"],
        }
    report = {
        "config_hash": cfg.config_hash(),
        "seeds": cfg.tree["seeds"],
        "model_source": "tune" if tuned else "train",
        "holes": sim["holes"],
        "measurements": sim["measurements"],
        "segments": seg["segments"],
        "feature_rows": ext["rows"],
        "anchors": qnt["anchors"],
        "regions": regions,
        "max_mape_percent": max(r["mape_percent"] for r in regions.values()),
    }
    (root / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    timings["per_region_fit_s"] = {n: v["seconds"] for n, v in fit.items()}
    (root / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    cfg.write_effective(root)
    return report


# ---------------------------------------------------------------------- CLI

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. model.n_layers=1 (repeatable)")
    p.add_argument("-o", "--out", help="output root (overrides config and $%s)" % OUTPUT_ROOT_ENV)
    p.add_argument("--seed", type=int, help="set every seed to this value")
    p.add_argument("-v", "--verbose", action="store_true")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors share exit status 1 with configuration errors
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="toolwear", description="Tool-wear prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a recording and wear measurements")
    _common(p)

    p = sub.add_parser("segment", help="isolate per-hole cutting segments")
    _common(p)
    p.add_argument("--recording", help="recording CSV (default: simulate output)")
    p.add_argument("--method", choices=("markers", "threshold"))
    p.add_argument("--window-samples", type=int)
    p.add_argument("--threshold-ratio", type=float)

    p = sub.add_parser("extract", help="per-hole features and moving average")
    _common(p)
    p.add_argument("--ma-window", type=int)

    p = sub.add_parser("quantize", help="densify sparse wear measurements")
    _common(p)
    p.add_argument("--measurements", help="measurement CSV (default: simulate output)")
    p.add_argument("--jitter", type=float, help="jitter half-width in um")

    for name, text in (("build", "windowed, split, scaled datasets per region"),
                       ("train", "train the configured network per region"),
                       ("tune", "successive-halving search per region"),
                       ("evaluate", "test-set MAPE and plot data per region")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--region", action="append", help="region name (repeatable; default all)")
        if name == "tune":
            p.add_argument("--trials", type=int)
            p.add_argument("--jobs", type=int)
        if name == "evaluate":
            p.add_argument("--source", choices=("train", "tune"), default="train",
                           help="which stage's model to evaluate")
            p.add_argument("--model", help="explicit model JSON (single region only)")

    p = sub.add_parser("pipeline", help="run every stage for every region")
    _common(p)
    p.add_argument("--tune", action="store_true", help="tune hyperparameters instead of the fixed config")
    return parser


def _load_config(args) -> PipelineConfig:
    overrides = [parse_override(o) for o in args.overrides]
    extra = []
    if args.seed is not None:
        extra += [(f"seeds.{k}", args.seed) for k in ("rig", "measurements", "quantize", "model", "tuner")]
    flag_map = {
        "recording": "paths.recording", "method": "segmentation.method",
        "window_samples": "segmentation.window_samples",
        "threshold_ratio": "segmentation.threshold_ratio", "ma_window": "features.ma_window",
        "measurements": "paths.measurements", "jitter": "quantize.jitter_um",
        "trials": "tune.n_trials", "jobs": "tune.n_jobs",
    }
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            extra.append((key, v))
    if getattr(args, "tune", False):
        extra.append(("tune.enabled", True))
    env_root = os.environ.get(OUTPUT_ROOT_ENV)
    if env_root:
        extra.append(("paths.output_root", env_root))
    if args.out:
        extra.append(("paths.output_root", args.out))
    return PipelineConfig.load(args.config, overrides + extra)


def _summary(command: str, res: dict) -> str:
    if command == "simulate":
        return f"simulate: {res['holes']} holes, {res['samples']} samples, {res['measurements']} measurements"
    if command == "segment":
        return f"segment: {res['segments']} segments"
    if command == "extract":
        return f"extract: {res['rows']} feature rows"
    if command == "quantize":
        return f"quantize: {res['holes']} wear values from {res['anchors']} anchors"
    if command == "build":
        return "build: " + "; ".join(f"{n} {r['rows']} rows, {r['windows']} windows, "
                                     f"split {'/'.join(map(str, r['split']))}" for n, r in res.items())
    if command == "train":
        return "train: " + "; ".join(f"{n} best epoch {r['best_epoch']}, val {r['best_val_loss']:.4g}"
                                     for n, r in res.items())
    if command == "tune":
        return "tune: " + "; ".join(f"{n} trial {r['best_trial']}, val {r['best_val_loss']:.4g}"
                                    for n, r in res.items())
    if command == "evaluate":
        return "evaluate: " + "; ".join(f"{n} MAPE {r['mape_percent']:.2f}%" for n, r in res.items())
    return "pipeline: " + "; ".join(f"{n} MAPE {r['mape_percent']:.2f}%" for n, r in res["regions"].items())


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigurationError):
        return 1
    if isinstance(exc, NumericError):
        return 3
    return 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _load_config(args)
        root = cfg.output_root()
        regions = getattr(args, "region", None)
        if stage == "simulate":
            res = run_simulate(cfg, root)
        elif stage == "segment":
            res = run_segment(cfg, root)
        elif stage == "extract":
            res = run_extract(cfg, root)
        elif stage == "quantize":
            res = run_quantize(cfg, root)
        elif stage == "build":
            res = run_build(cfg, root, regions)
        elif stage == "train":
            res = run_train(cfg, root, regions)
        elif stage == "tune":
            res = run_tune(cfg, root, regions)
        elif stage == "evaluate":
            res = run_evaluate(cfg, root, regions, args.source, args.model)
        else:
            res = run_pipeline(cfg, root)
    except ToolwearError as exc:
        where = getattr(exc, "stage", stage)
        print(f"toolwear {where}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except OSError as exc:
        print(f"toolwear {stage}: error: {exc}", file=sys.stderr)
        return 2
    print(_summary(stage, res))
    return 0


if __name__ == "__main__":
    sys.exit(main())
