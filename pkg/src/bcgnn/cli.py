"""Command-line entry point: ``bcgnn {synth,train,infer,eval}``.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import logging
import sys
from pathlib import Path
from typing import Callable, TextIO

from .config import ABLATION_KEYS, ConfigError, RunConfig, parse_assignments
from .data import DataError, load_annotations, load_features, save_annotations, save_features, synth_dataset
from .model import BCGNN, ModelConfig
from .pipeline import eval_inputs, infer_many, video_windows
from .postprocess import load_results, metrics_report, save_results
from .tensor import NumericError, ParamStore, ShapeError
from .training import label_windows, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

ANNOTATION_FILE = "annotations.json"
FEATURE_SUFFIX = ".bcgf"


class MismatchError(ValueError):
    """Inputs produced under different configurations or for different videos."""


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    videos = synth_dataset(
        cfg.seed,
        cfg.n_videos,
        cfg.l_s,
        cfg.d_i,
        (cfg.instances_min, cfg.instances_max),
        cfg.min_duration,
        cfg.max_duration,
        cfg.noise,
    )
    written = []
    for seq, _ in videos:
        path = out / f"{seq.video_id}{FEATURE_SUFFIX}"
        save_features(path, seq)
        written.append(path)
    ann = out / ANNOTATION_FILE
    save_annotations(ann, {seq.video_id: (seq.length, insts) for seq, insts in videos})
    written.append(ann)
    return written


def load_dataset(data_dir: str | Path):
    data = Path(data_dir)
    ann = load_annotations(data / ANNOTATION_FILE)
    videos = []
    for vid, (duration, insts) in ann.items():
        seq = load_features(data / f"{vid}{FEATURE_SUFFIX}", video_id=vid)
        if seq.length != duration:
            raise DataError(f"{vid}: annotation says {duration} snippets, features have {seq.length}")
        videos.append((seq, insts))
    return videos, ann


def split_videos(videos: list, val_fraction: float) -> tuple[list, list]:
    """Deterministic split: the last ``ceil(fraction * n)`` videos (by id) validate."""
    ordered = sorted(videos, key=lambda v: v[0].video_id)
    n_val = 0 if len(ordered) < 2 else min(len(ordered) - 1, math.ceil(val_fraction * len(ordered)))
    return ordered[: len(ordered) - n_val], ordered[len(ordered) - n_val :]


def make_windows(cfg: RunConfig, videos: list, edges):
    windows = []
    for seq, insts in videos:
        windows.extend(video_windows(seq, insts, cfg.l_w, cfg.window_stride, cfg.window_mode)[0])
    return label_windows(windows, edges, cfg.l_w)


def checkpoint_header(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "run_config": cfg.to_dict(), "model": cfg.model_config().to_dict()}


def cmd_train(
    cfg: RunConfig,
    data_dir: str | Path,
    out_checkpoint: str | Path,
    emit: Callable[[dict], None] | None = None,
    init_seed: int | None = None,
):
    """Train on ``data_dir`` and write the best checkpoint; returns the TrainResult."""
    emit = emit or (lambda rec: None)
    videos, _ = load_dataset(data_dir)
    for seq, _ in videos:
        if seq.dim != cfg.d_i:
            raise ShapeError(f"{seq.video_id}: features have D_i={seq.dim}, config d_i={cfg.d_i}")
    train_v, val_v = split_videos(videos, cfg.val_fraction)
    model = BCGNN(cfg.model_config(), seed=cfg.seed if init_seed is None else init_seed)
    tr = make_windows(cfg, train_v, model.edges)
    va = make_windows(cfg, val_v, model.edges)
    emit({"event": "start", "config_hash": cfg.config_hash(), "train_windows": len(tr), "val_windows": len(va)})

    def on_epoch(rec):
        emit({"event": "epoch", **rec})

    result = train(
        model, tr, va, cfg.train_config(), on_epoch=on_epoch, on_init=lambda rec: emit({"event": "init", **rec})
    )
    if result.early_stopped:
        emit({"event": "early_stop", "epoch": result.stopped_epoch, "best_epoch": result.best_epoch})
    save_checkpoint(out_checkpoint, model.params, checkpoint_header(cfg))
    emit({"event": "done", "best_epoch": result.best_epoch, "checkpoint": str(out_checkpoint)})
    return result


def model_from_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> tuple[BCGNN, dict]:
    header, state = load_checkpoint(path)
    mcfg = ModelConfig(**header["model"])
    if cfg is not None:
        ours = cfg.model_config().to_dict()
        diff = {k: (v, ours[k]) for k, v in header["model"].items() if ours.get(k) != v}
        if diff:
            raise MismatchError(f"checkpoint/config mismatch (checkpoint, config): {diff}")
    params = ParamStore()
    for name, arr in state.items():
        params.add(name, arr)
    model = BCGNN(mcfg, params=params)
    # shapes must match a freshly initialised model of the declared config
    ref = BCGNN(mcfg, seed=0).params
    if ref.names() != params.names():
        raise MismatchError("checkpoint parameter names do not match its declared model config")
    for name, t in ref.items():
        if params[name].shape != t.shape:
            raise MismatchError(f"checkpoint parameter {name} has shape {params[name].shape}, expected {t.shape}")
    return model, header


def cmd_infer(cfg: RunConfig | None, checkpoint: str | Path, data_dir: str | Path, out_file: str | Path) -> dict:
    model, header = model_from_checkpoint(checkpoint, cfg)
    run = RunConfig(**header["run_config"]) if cfg is None else cfg
    videos, _ = load_dataset(data_dir)
    results = infer_many(
        model,
        [seq for seq, _ in videos],
        jobs=run.jobs,
        stride=run.window_stride,
        mode=run.window_mode,
        sigma=run.nms_sigma,
        score_floor=run.nms_floor,
        top_k=run.top_k,
    )
    save_results(out_file, results, {"config_hash": header["config_hash"], "units": "snippets"})
    return results


def cmd_eval(
    results_file: str | Path,
    annotations: str | Path,
    cfg: RunConfig | None = None,
    force: bool = False,
) -> dict:
    results, meta = load_results(results_file)
    ann = load_annotations(annotations)
    unknown = sorted(set(results) - set(ann))
    if unknown:
        raise MismatchError(f"results contain videos missing from annotations: {unknown[:5]}")
    run = cfg or RunConfig()
    their = meta.get("config_hash")
    if cfg is not None and their is not None and their != cfg.config_hash() and not force:
        raise MismatchError(f"results were produced under config {their}, evaluating with {cfg.config_hash()}")
    report = metrics_report(eval_inputs(results, ann), run.tiou_thresholds, max_an=100)
    report["config_hash"] = their if their is not None else run.config_hash()
    return report


# ---------------------------------------------------------------- argument parsing


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        overrides.update(parse_assignments(item))
    if args.ablation:
        abl = parse_assignments(args.ablation)
        bad = set(abl) - set(ABLATION_KEYS)
        if bad:
            raise ConfigError(f"unknown ablation flag(s): {sorted(bad)}")
        overrides.update(abl)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = str(args.jobs)
    return cfg.with_overrides(overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcgnn", description="Boundary-content graph proposals")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--ablation", help="e.g. directed=false,edge_update=true,gcn_baseline=false")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("--jobs", type=int, help="per-video worker threads for infer")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic feature dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="write JSON-lines epoch log here instead of stdout")

    p = sub.add_parser("infer", parents=[common], help="generate proposals")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="proposal result JSON")

    p = sub.add_parser("eval", parents=[common], help="AR@AN / AUC report")
    p.add_argument("--results", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--force", action="store_true", help="evaluate despite a config hash mismatch")

    p = sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return parser


def _writer(stream: TextIO) -> Callable[[dict], None]:
    def emit(rec: dict) -> None:
        stream.write(json.dumps(rec, sort_keys=True) + "\n")
        stream.flush()

    return emit


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
        explicit = bool(args.config or args.set or args.ablation or args.seed is not None)
        if args.command == "show-config":
            sys.stdout.write(cfg.dumps())
            sys.stdout.write(f"# config_hash = {cfg.config_hash()}\n")
        elif args.command == "synth":
            files = cmd_synth(cfg, args.out)
            print(json.dumps({"config_hash": cfg.config_hash(), "files": len(files), "out": args.out}))
        elif args.command == "train":
            if args.log:
                with open(args.log, "w") as fh:
                    cmd_train(cfg, args.data, args.out, emit=_writer(fh))
            else:
                cmd_train(cfg, args.data, args.out, emit=_writer(sys.stdout))
        elif args.command == "infer":
            results = cmd_infer(cfg if explicit else None, args.checkpoint, args.data, args.out)
            print(json.dumps({"videos": len(results), "out": args.out}))
        elif args.command == "eval":
            report = cmd_eval(args.results, args.annotations, cfg if explicit else None, args.force)
            text = json.dumps(report, indent=1, sort_keys=True)
            if args.out:
                Path(args.out).write_text(text)
                print(json.dumps({k: report[k] for k in ("AR@10", "AR@50", "AR@100", "AUC", "config_hash")}))
            else:
                print(text)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ShapeError, MismatchError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
