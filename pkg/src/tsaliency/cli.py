"""Stage-cached command line pipeline.

    prepare  -> ingest, scale, split, window; caches arrays
    train    -> phase-1 joint forecaster + shared-mask optimization
    evaluate -> RSE/CORR on a cached split
    interpret-> phase-2 per-sample saliency masks on the frozen model
    permute  -> feature-order recovery from saliency masks
    analyze  -> per-feature importance + spectral periodicity
    export   -> dump run artifacts (tensors, masks) to open formats

Every stage writes its manifest before artifacts and reads only prior-stage
outputs plus the config. Exit codes: 0 success, 2 validation error, 1
runtime error. Logging level comes from SSAL_LOG (error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    AnalysisError,
    export_heatmap_pgm,
    fft_magnitude,
    mean_saliency_per_feature,
    periodicity_score,
)
from .config import ConfigError, PipelineConfig, load_config
from .data import (
    DataError,
    Scaler,
    WindowSet,
    apply_scaler,
    chronological_split,
    feature_means,
    fit_scaler,
    load_csv,
    make_windows,
)
from .interpretation import interpret_batch
from .mask import Mask, export_mask_csv
from .metrics import EvalBlock, UndefinedMetricError, corr_stats, rse
from .models import ModelError, build_forecaster, load_checkpoint, save_checkpoint
from .permutation import (
    AnnealSchedule,
    PermutationError,
    aggregate_masks,
    distance_matrix,
    simulated_annealing_restarts,
)
from .reference import ReferenceError
from .training import predict_all, train

log = logging.getLogger("tsaliency")

VALIDATION_ERRORS = (ConfigError, DataError, ModelError, ReferenceError,
                     PermutationError, AnalysisError, ValueError,
                     FileNotFoundError)

SPLITS = ("train", "val", "test")


class StageError(RuntimeError):
    pass


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(out_dir: Path, stage: str, cfg: PipelineConfig | dict,
                   seed: int | None, outputs: list[str]) -> None:
    """Run manifest, written before any artifact of the stage."""
    echo = cfg.echo() if isinstance(cfg, PipelineConfig) else cfg
    doc = {
        "stage": stage,
        "version": __version__,
        "seed": seed,
        "timestamp": _utc_now(),
        "config": echo,
        "outputs": outputs,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"manifest_{stage}.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- prepare

def stage_prepare(cfg: PipelineConfig, out_dir: Path) -> Path:
    d = cfg["data"]
    if not d["path"]:
        raise ConfigError("data.path is required for prepare")
    w, tau = d["window"], d["horizon"]
    write_manifest(out_dir, "prepare", cfg, cfg["train"]["seed"],
                   ["meta.json"] + [f"{kind}_{s}.npy" for s in SPLITS
                                    for kind in ("windows", "targets", "starts")])
    frame = load_csv(d["path"], has_header=d["has_header"],
                     missing_policy=d["missing_policy"],
                     timestamp_col=d["timestamp_col"],
                     sample_period=d["sample_period"] or None)
    intervals = chronological_split(frame, d["fractions"], min_len=w + tau)
    scaler = fit_scaler(frame, intervals[0])
    scaled = apply_scaler(frame, scaler)
    means = feature_means(scaled, intervals[0])
    meta = {
        "feature_names": scaled.feature_names,
        "window": w,
        "horizon": tau,
        "intervals": [list(iv) for iv in intervals],
        "scaler_min": scaler.min.tolist(),
        "scaler_max": scaler.max.tolist(),
        "train_feature_means": means.tolist(),
        "n_rows": frame.n_rows,
        "sample_period": frame.sample_period,
    }
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    for name, interval in zip(SPLITS, intervals):
        ws = make_windows(scaled, interval, w, tau)
        np.save(out_dir / f"windows_{name}.npy", ws.images)
        np.save(out_dir / f"targets_{name}.npy", ws.targets)
        np.save(out_dir / f"starts_{name}.npy", ws.start_indices)
        log.info("prepare: %s -> %d windows", name, len(ws))
    return out_dir


def load_prepared(prep_dir: Path) -> dict:
    meta_path = prep_dir / "meta.json"
    if not meta_path.exists():
        raise DataError(f"{prep_dir}: not a prepare output (meta.json missing)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    sets = {}
    for name in SPLITS:
        sets[name] = WindowSet(
            np.load(prep_dir / f"windows_{name}.npy"),
            np.load(prep_dir / f"targets_{name}.npy"),
            np.load(prep_dir / f"starts_{name}.npy"),
            meta["window"], meta["horizon"], list(meta["feature_names"]))
    scaler = Scaler(np.array(meta["scaler_min"]), np.array(meta["scaler_max"]))
    return {"meta": meta, "sets": sets, "scaler": scaler,
            "means": np.array(meta["train_feature_means"])}


# ------------------------------------------------------------------ train

def stage_train(cfg: PipelineConfig, out_dir: Path, data_dir: Path | None) -> Path:
    if data_dir is None:
        data_dir = stage_prepare(cfg, out_dir / "prep")
    prep = load_prepared(data_dir)
    meta = prep["meta"]
    w = meta["window"]
    n_features = len(meta["feature_names"])
    train_cfg = cfg.train_config()
    write_manifest(out_dir, "train", cfg, train_cfg.seed,
                   ["model.ssal", "history.csv", "config.json",
                    "mask_train.csv", "mask_train.pgm"])
    with open(out_dir / "config.json", "w") as fh:
        json.dump(cfg.echo(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    forecaster = build_forecaster(cfg.model_config(), w, n_features,
                                  seed=train_cfg.seed)
    mask = Mask(w, n_features, init_logit=cfg["mask"]["init_logit"]) \
        if train_cfg.mask_enabled else None
    result = train(prep["sets"]["train"], forecaster, mask, train_cfg,
                   reference=cfg.reference_spec(), val=prep["sets"]["val"],
                   train_feature_means=prep["means"])
    save_checkpoint(out_dir / "model.ssal", forecaster, window=w,
                    extra={"config": cfg.echo(),
                           "data_dir": str(Path(data_dir).resolve())})
    with open(out_dir / "history.csv", "w") as fh:
        fh.write("epoch,train_loss,val_rse,val_corr\n")
        for row in result.history:
            fh.write(f"{row.epoch},{_fmt(row.train_loss)},"
                     f"{_fmt(row.val_rse)},{_fmt(row.val_corr)}\n")
    if result.mask is not None:
        export_mask_csv(result.mask.values(), out_dir / "mask_train.csv")
        export_heatmap_pgm(result.mask.values(), out_dir / "mask_train.pgm")
    log.info("train: %d epochs, final loss %.6g", len(result.history),
             result.history[-1].train_loss if result.history else float("nan"))
    return out_dir


def _run_paths(run_dir: Path) -> dict:
    run_dir = Path(run_dir)
    ckpt = run_dir / "model.ssal"
    if not ckpt.exists():
        raise DataError(f"{run_dir}: no model.ssal (run `train` first)")
    with open(run_dir / "config.json") as fh:
        echo = json.load(fh)
    with open(ckpt) as fh:
        doc = json.load(fh)
    data_dir = Path(doc.get("extra", {}).get("data_dir", run_dir / "prep"))
    if not data_dir.is_absolute():
        data_dir = Path(data_dir)
    return {"run": run_dir, "checkpoint": ckpt, "echo": echo,
            "data_dir": data_dir}


def _config_from_echo(echo: dict) -> PipelineConfig:
    from .config import default_config
    cfg = default_config()
    for section, keys in echo.items():
        for key, value in keys.items():
            if isinstance(value, list):
                value = tuple(value)
            cfg.raw[section][key] = value
    return cfg


# --------------------------------------------------------------- evaluate

def _metrics_pair(targets: np.ndarray, preds: np.ndarray) -> tuple[float, float, int]:
    block = EvalBlock(targets, preds)
    r = rse(block)
    try:
        c, excluded = corr_stats(block)
    except UndefinedMetricError:
        c, excluded = float("nan"), targets.shape[1]
    return r, c, excluded


def stage_evaluate(run_dir: Path, split: str, target_col: int | None) -> dict:
    from .data import invert_scaler

    paths = _run_paths(run_dir)
    prep = load_prepared(paths["data_dir"])
    forecaster, _ = load_checkpoint(paths["checkpoint"])
    dataset = prep["sets"][split]
    if len(dataset) == 0:
        raise DataError(f"split {split!r} has no windows")
    write_manifest(paths["run"], "evaluate",
                   paths["echo"], None, ["metrics.csv"])
    preds = predict_all(forecaster, dataset)
    targets = dataset.targets
    raw_targets = invert_scaler(targets, prep["scaler"])
    raw_preds = invert_scaler(preds, prep["scaler"])
    if target_col is not None:
        if not 0 <= target_col < targets.shape[1]:
            raise DataError(f"target col {target_col} out of range")
        cols = [target_col]
        targets, preds = targets[:, cols], preds[:, cols]
        raw_targets, raw_preds = raw_targets[:, cols], raw_preds[:, cols]
    r, c, excluded = _metrics_pair(targets, preds)
    r_raw, c_raw, _ = _metrics_pair(raw_targets, raw_preds)
    with open(paths["run"] / "metrics.csv", "w") as fh:
        fh.write("split,rse,corr,excluded_features,rse_unscaled,corr_unscaled\n")
        fh.write(f"{split},{_fmt(r)},{_fmt(c)},{excluded},"
                 f"{_fmt(r_raw)},{_fmt(c_raw)}\n")
    print(f"rse={_fmt(r)} corr={_fmt(c)} excluded_features={excluded}")
    return {"rse": r, "corr": c, "excluded": excluded}


# -------------------------------------------------------------- interpret

def _sample_indices(n: int, count: int) -> list[int]:
    if n == 0:
        raise DataError("no test windows to interpret")
    if count < 1:
        raise DataError(f"samples must be >= 1, got {count}")
    count = min(count, n)
    return sorted({int(i) for i in np.linspace(0, n - 1, count)})


def stage_interpret(run_dir: Path, samples: int | None, jobs: int,
                    seed: int | None) -> list[Path]:
    paths = _run_paths(run_dir)
    cfg = _config_from_echo(paths["echo"])
    if seed is not None:
        cfg.override_seed(seed)
    icfg = cfg.interpret_config()
    count = samples if samples is not None else cfg["interpret"]["samples"]
    prep = load_prepared(paths["data_dir"])
    forecaster, _ = load_checkpoint(paths["checkpoint"])
    test = prep["sets"]["test"]
    picks = _sample_indices(len(test), count)
    out = paths["run"] / "saliency"
    write_manifest(paths["run"], "interpret", cfg, icfg.seed,
                   [f"saliency/saliency_<id>.{ext}"
                    for ext in ("csv", "trace.csv", "pgm")])
    out.mkdir(parents=True, exist_ok=True)
    maps = interpret_batch(forecaster, test.subset(picks), icfg,
                           parallelism=jobs, feature_means=prep["means"])
    written = []
    for smap in maps:
        base = out / f"saliency_{smap.sample_id}"
        export_mask_csv(smap.mask_values, base.with_suffix(".csv"))
        with open(f"{base}.trace.csv", "w") as fh:
            fh.write("step,loss\n")
            for step, value in enumerate(smap.loss_trace):
                fh.write(f"{step},{_fmt(value)}\n")
        export_heatmap_pgm(smap.mask_values, f"{base}.pgm")
        written.append(base)
    log.info("interpret: wrote %d saliency maps to %s", len(maps), out)
    return written


def _load_saliency_masks(run_dir: Path) -> tuple[list[np.ndarray], list[int]]:
    sal_dir = Path(run_dir) / "saliency"
    if not sal_dir.is_dir():
        raise DataError(f"{run_dir}: no saliency/ directory (run `interpret`)")
    masks, ids = [], []
    for path in sorted(sal_dir.glob("saliency_*.csv")):
        if path.name.endswith(".trace.csv"):
            continue
        masks.append(np.loadtxt(path, delimiter=",", ndmin=2))
        ids.append(int(path.stem.split("_")[1]))
    if not masks:
        raise DataError(f"{sal_dir}: no saliency_<id>.csv files")
    return masks, ids


# ---------------------------------------------------------------- permute

def stage_permute(run_dir: Path, seed: int | None) -> dict:
    paths = _run_paths(run_dir)
    cfg = _config_from_echo(paths["echo"])
    if seed is not None:
        cfg.override_seed(seed)
    p = cfg["permute"]
    prep = load_prepared(paths["data_dir"])
    names = prep["meta"]["feature_names"]
    masks, _ = _load_saliency_masks(paths["run"])
    write_manifest(paths["run"], "permute", cfg, p["seed"],
                   ["permutation.csv", "permutation_meta.json"])
    combined = aggregate_masks(masks, p["aggregate"])
    dist = distance_matrix(combined)
    schedule = AnnealSchedule(psi0=p["psi0"], psi_min=p["psi_min"],
                              alpha=p["alpha"],
                              iters_per_temp=p["iters_per_temp"])
    result = simulated_annealing_restarts(dist, restarts=p["restarts"],
                                          schedule=schedule, seed=p["seed"],
                                          cycle=p["cycle"])
    with open(paths["run"] / "permutation.csv", "w") as fh:
        fh.write("rank,feature_index,feature_name\n")
        for rank, feature in enumerate(result.permutation):
            fh.write(f"{rank},{feature},{names[feature]}\n")
    with open(paths["run"] / "permutation_meta.json", "w") as fh:
        json.dump({"objective": result.objective,
                   "n_masks": len(masks), "cycle": p["cycle"]}, fh, sort_keys=True)
        fh.write("\n")
    print(f"objective={_fmt(result.objective)}")
    return {"permutation": result.permutation, "objective": result.objective}


# ---------------------------------------------------------------- analyze

def stage_analyze(run_dir: Path, jobs: int) -> Path:
    import concurrent.futures

    paths = _run_paths(run_dir)
    prep = load_prepared(paths["data_dir"])
    names = prep["meta"]["feature_names"]
    test = prep["sets"]["test"]
    masks, ids = _load_saliency_masks(paths["run"])
    write_manifest(paths["run"], "analyze", paths["echo"], None,
                   ["feature_importance.csv", "mean_mask.pgm"])
    saliency = mean_saliency_per_feature(masks)

    start_to_row = {int(s): i for i, s in enumerate(test.start_indices)}
    images = [test.images[start_to_row[i]] for i in ids if i in start_to_row]
    if not images:
        raise DataError("saliency sample ids do not match the cached test split")

    def scores_for(image: np.ndarray) -> np.ndarray:
        return np.array([periodicity_score(fft_magnitude(image[:, d]))
                         for d in range(image.shape[1])])

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            per_sample = list(pool.map(scores_for, images))
    else:
        per_sample = [scores_for(img) for img in images]
    periodicity = np.mean(per_sample, axis=0)

    out = paths["run"] / "feature_importance.csv"
    with open(out, "w") as fh:
        fh.write("feature,mean_saliency,periodicity_score\n")
        for d, name in enumerate(names):
            fh.write(f"{name},{_fmt(saliency[d])},{_fmt(periodicity[d])}\n")
    export_heatmap_pgm(aggregate_masks(masks), paths["run"] / "mean_mask.pgm")
    log.info("analyze: %d features over %d maps", len(names), len(masks))
    return out


# ----------------------------------------------------------------- export

def stage_export(run_dir: Path) -> Path:
    paths = _run_paths(run_dir)
    out = paths["run"] / "export"
    write_manifest(paths["run"], "export", paths["echo"], None,
                   ["export/tensors/*.csv", "export/config.json"])
    tensors_dir = out / "tensors"
    tensors_dir.mkdir(parents=True, exist_ok=True)
    forecaster, doc = load_checkpoint(paths["checkpoint"])
    for name, value in sorted(forecaster.param_values().items()):
        flat = value.reshape(value.shape[0], -1) if value.ndim > 1 \
            else value.reshape(1, -1)
        np.savetxt(tensors_dir / f"{name}.csv", flat, delimiter=",", fmt="%.17g")
    with open(out / "config.json", "w") as fh:
        json.dump(doc.get("extra", {}).get("config", {}), fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    mask_csv = paths["run"] / "mask_train.csv"
    if mask_csv.exists():
        values = np.loadtxt(mask_csv, delimiter=",", ndmin=2)
        export_heatmap_pgm(np.clip(values, 0.0, 1.0), out / "mask_train.pgm")
    log.info("export: wrote %s", out)
    return out


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsaliency",
        description="Mask-based temporal saliency for multivariate "
                    "time series forecasting.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_prepare = sub.add_parser("prepare", help="ingest, scale, split, window")
    p_prepare.add_argument("--config", required=True)
    p_prepare.add_argument("--out", required=True)
    p_prepare.add_argument("--seed", type=int)
    p_prepare.add_argument("--timestamp-col", type=int, dest="timestamp_col")

    p_train = sub.add_parser("train", help="fit forecaster + shared mask")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--data", help="existing prepare output (default: "
                                        "prepare into <out>/prep)")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--timestamp-col", type=int, dest="timestamp_col")

    p_eval = sub.add_parser("evaluate", help="RSE/CORR on a cached split")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--split", choices=SPLITS, default="test")
    p_eval.add_argument("--target-col", type=int, dest="target_col")

    p_int = sub.add_parser("interpret", help="per-sample saliency masks")
    p_int.add_argument("--run", required=True)
    p_int.add_argument("--samples", type=int)
    p_int.add_argument("--jobs", type=int, default=1)
    p_int.add_argument("--seed", type=int)

    p_perm = sub.add_parser("permute", help="feature ordering from masks")
    p_perm.add_argument("--run", required=True)
    p_perm.add_argument("--seed", type=int)

    p_an = sub.add_parser("analyze", help="importance + periodicity report")
    p_an.add_argument("--run", required=True)
    p_an.add_argument("--jobs", type=int, default=1)

    p_exp = sub.add_parser("export", help="dump run artifacts to open formats")
    p_exp.add_argument("--run", required=True)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SSAL_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"SSAL_LOG must be error|info|debug, got {level!r}")
    logging.basicConfig(level=levels[level], force=True,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.override_seed(args.seed)
    if getattr(args, "timestamp_col", None) is not None:
        cfg.raw["data"]["timestamp_col"] = args.timestamp_col
    return cfg


def run_command(args) -> int:
    if args.command == "prepare":
        stage_prepare(_load_cfg(args), Path(args.out))
    elif args.command == "train":
        stage_train(_load_cfg(args), Path(args.out),
                    Path(args.data) if args.data else None)
    elif args.command == "evaluate":
        stage_evaluate(Path(args.run), args.split, args.target_col)
    elif args.command == "interpret":
        stage_interpret(Path(args.run), args.samples, args.jobs, args.seed)
    elif args.command == "permute":
        stage_permute(Path(args.run), args.seed)
    elif args.command == "analyze":
        stage_analyze(Path(args.run), args.jobs)
    elif args.command == "export":
        stage_export(Path(args.run))
    else:  # pragma: no cover - argparse enforces the choices
        raise StageError(f"unknown command {args.command!r}")
    return 0


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return run_command(args)
    except VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:   # noqa: BLE001 - single CLI boundary
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
