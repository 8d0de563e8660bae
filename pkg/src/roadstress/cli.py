"""Command-line entry point orchestrating the pipeline end to end.

Every subcommand reads its settings from an optional JSON config file,
with flags overriding file values, and writes artifacts under the
artifacts root (overridable via the ROADSTRESS_ARTIFACTS env var). Exit
codes: 0 ok, 2 config error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import classical, ingestion, scene_analysis, segmentation, splits, synthgen
from .config import ExperimentConfig, write_artifact_meta
from .errors import ConfigError, DataError, TrainingError
from .evaluation import (
    AccuracyReport,
    average_confusion,
    format_method_table,
    method_table,
    save_confusion,
)
from .ingestion import StressClass
from . import pipeline
from .deep import (
    TSNConfig,
    evaluate_model,
    load_checkpoint,
    save_checkpoint,
    window_sweep,
)
from .interpretability import cam_for_clip, export_cam
from .deep.data import clip_frame_paths, clip_tensor

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for key in (
        "corpus",
        "artifacts",
        "fps",
        "seed",
        "split",
        "segmenter",
        "window_seconds",
        "num_segments",
        "stride_seconds",
        "backbone",
        "learning_rate",
        "batch_size",
        "max_epochs",
        "classifier_kind",
    ):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            overrides[key] = value
    if os.environ.get("ROADSTRESS_ARTIFACTS") and "artifacts" not in overrides:
        overrides["artifacts"] = os.environ["ROADSTRESS_ARTIFACTS"]
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def _artifacts_dir(config: ExperimentConfig) -> Path:
    out = Path(config.artifacts)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plan(config: ExperimentConfig) -> splits.SplitPlan:
    plans = {p.split_id: p for p in splits.lodo_plan(sorted(splits.ALL_DRIVERS))}
    if config.split not in plans:
        raise ConfigError(f"unknown split id {config.split!r}; valid: {sorted(plans)}")
    return plans[config.split]


# --------------------------------------------------------------------------
# Subcommand bodies.


def cmd_synth(args) -> int:
    config = _load_config(args)
    out = Path(args.out or config.corpus)
    synthgen.make_corpus(
        out,
        seed=config.seed,
        segment_s=config.synth_segment_s,
        fps=config.fps,
        image_size=config.synth_image_size,
        lag_s=config.synth_lag_s,
        jitter=config.synth_jitter,
    )
    write_artifact_meta(out / "corpus.json", config)
    print(f"synthetic corpus with {len(synthgen.CANONICAL_DRIVERS)} drivers at {out}")
    return 0


def cmd_ingest(args) -> int:
    config = _load_config(args)
    frames = pipeline.load_labeled_corpus(config)
    out = _artifacts_dir(config) / "labels.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("driver_id,timestamp_s,normalized_score,stress_class\n")
        for f in frames:
            fh.write(f"{f.driver_id},{f.timestamp_s:.3f},{f.normalized_score:.6f},{f.stress_class.label}\n")
    write_artifact_meta(out, config)
    counts = {c.label: 0 for c in StressClass}
    for f in frames:
        counts[f.stress_class.label] += 1
    print(f"{len(frames)} labeled frames -> {out}; class counts {counts}")
    return 0


def cmd_features(args) -> int:
    config = _load_config(args)
    table = pipeline.corpus_features(config)
    out = _artifacts_dir(config) / "features.csv"
    segmentation.write_feature_csv(out, table)
    write_artifact_meta(out, config)
    print(f"{len(table)} feature rows -> {out}")
    return 0


def cmd_analyze(args) -> int:
    config = _load_config(args)
    features_path = Path(args.features or (_artifacts_dir(config) / "features.csv"))
    table = segmentation.read_feature_csv(features_path)
    ratios = scene_analysis.representation_ratios(table)
    out = _artifacts_dir(config) / "representation_ratios.csv"
    scene_analysis.export_ratio_plot_data(ratios, out)
    write_artifact_meta(out, config)
    for cls in scene_analysis.CLASS_ORDER:
        top = scene_analysis.top_overrepresented(ratios, cls, k=args.top_k)
        listing = ", ".join(f"{name} ({ratio:.2f}x)" for name, ratio in top)
        print(f"{cls.label:>6}: {listing}")
    return 0


def cmd_split(args) -> int:
    config = _load_config(args)
    if args.plan:
        sessions = ingestion.load_corpus(Path(config.corpus))
        plans = splits.lodo_plan([s.driver_id for s in sessions])
    else:
        plans = [_plan(config)]
    out_dir = _artifacts_dir(config) / "splits"
    out_dir.mkdir(exist_ok=True)
    for plan in plans:
        path = out_dir / f"{plan.split_id}.json"
        doc = plan.to_dict() | config.stamp()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"{len(plans)} split manifest(s) -> {out_dir}")
    return 0


def cmd_train_classical(args) -> int:
    config = _load_config(args)
    plan = _plan(config)
    features_path = Path(args.features or (_artifacts_dir(config) / "features.csv"))
    table = segmentation.read_feature_csv(features_path)
    model, accuracy, matrix = pipeline.run_classical(config, table, plan)
    out_dir = _artifacts_dir(config)
    model_path = out_dir / f"classical_{config.classifier_kind}_{plan.split_id}.pkl"
    classical.save_classifier(
        model, model_path, metrics={"test_accuracy": accuracy, **config.stamp()}
    )
    save_confusion(out_dir / f"confusion_{config.classifier_kind}_{plan.split_id}.json", matrix, meta=config.stamp())
    print(f"{config.classifier_kind} on {plan.split_id}: test accuracy {accuracy:.3f} -> {model_path}")
    return 0


def _train_deep(args, kind: str) -> int:
    config = _load_config(args)
    plan = _plan(config)
    frames = pipeline.load_labeled_corpus(config)
    window = args.window if getattr(args, "window", None) is not None else None
    trained, accuracy, matrix, _ = pipeline.run_deep(config, frames, plan, kind, window_seconds=window)
    out_dir = _artifacts_dir(config)
    ckpt = out_dir / f"{kind}_{plan.split_id}.pt"
    save_checkpoint(ckpt, trained, meta=config.stamp())
    log_path = out_dir / f"{kind}_{plan.split_id}_log.csv"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,loss,accuracy\n")
        for row in trained.log:
            fh.write(f"{row['epoch']},{row['split']},{row['loss']:.6f},{row['accuracy']:.6f}\n")
    write_artifact_meta(log_path, config)
    save_confusion(out_dir / f"confusion_{kind}_{plan.split_id}.json", matrix, meta=config.stamp())
    print(f"{kind} on {plan.split_id}: val {trained.best_val_accuracy:.3f}, test {accuracy:.3f} -> {ckpt}")
    return 0


def cmd_train_image(args) -> int:
    return _train_deep(args, "image")


def cmd_train_video(args) -> int:
    return _train_deep(args, "tsn")


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    split_ids = list(splits.SPLIT_IDS) if args.all_splits else [config.split]
    frames = None
    table = None
    accuracies: dict[str, float] = {}
    matrices = []
    out_dir = _artifacts_dir(config)
    for split_id in split_ids:
        plan = {p.split_id: p for p in splits.lodo_plan(sorted(splits.ALL_DRIVERS))}[split_id]
        if args.method in ("image", "tsn"):
            ckpt_path = out_dir / f"{args.method}_{split_id}.pt"
            trained = load_checkpoint(ckpt_path)
            if frames is None:
                frames = pipeline.load_labeled_corpus(config)
            parts = pipeline.clip_partitions(
                frames, plan, trained.tsn_config.window_seconds, config.stride_seconds, config.seed_for("balance")
            )
            _, _, _, store = pipeline.deep_components(config)
            acc, y_true, y_pred = evaluate_model(
                trained.model, trained.kind, parts["test"].samples, store, trained.tsn_config.num_segments
            )
            from .evaluation import ConfusionMatrix

            matrices.append(ConfusionMatrix.from_pairs(y_true, y_pred))
        else:
            if table is None:
                table = segmentation.read_feature_csv(out_dir / "features.csv")
            saved = out_dir / f"classical_{args.method}_{split_id}.pkl"
            if saved.exists():
                model = classical.load_classifier(saved)
                parts = pipeline.feature_partitions(table, plan, config.seed_for("balance"))
                X_test, y_test = parts["test"]
                preds = np.array([int(c) for c in model.predict(X_test)])
                from .evaluation import ConfusionMatrix

                matrices.append(ConfusionMatrix.from_pairs(y_test, preds))
                acc = matrices[-1].accuracy
            else:
                config_run = ExperimentConfig.from_dict(config.to_dict() | {"classifier_kind": args.method, "split": split_id})
                _, acc, matrix = pipeline.run_classical(config_run, table, plan)
                matrices.append(matrix)
        accuracies[split_id] = acc
        print(f"{args.method} {split_id}: accuracy {acc:.3f}")
    avg = average_confusion(matrices)
    save_confusion(out_dir / f"confusion_avg_{args.method}.json", avg, meta=config.stamp())
    report_path = out_dir / f"accuracy_{args.method}.json"
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"method": args.method, "per_split": accuracies, **config.stamp()}, fh, indent=2)
        fh.write("\n")
    print(f"mean accuracy {np.mean(list(accuracies.values())):.3f} -> {report_path}")
    return 0


def cmd_explain(args) -> int:
    config = _load_config(args)
    trained = load_checkpoint(Path(args.model))
    frames = pipeline.load_labeled_corpus(config)
    plan = _plan(config)
    parts = pipeline.clip_partitions(
        frames, plan, trained.tsn_config.window_seconds, config.stride_seconds, config.seed_for("balance")
    )
    clips = list(parts["test"].samples)[: args.count]
    _, _, _, store = pipeline.deep_components(config)
    out_dir = _artifacts_dir(config) / "cams"
    out_dir.mkdir(exist_ok=True)
    for clip in clips:
        tensor = clip_tensor(store, [clip], trained.tsn_config.num_segments)[0]
        probs = trained.model.forward_clips(tensor[None]).softmax(dim=1)
        target = int(probs.argmax()) if args.target_class is None else args.target_class
        maps = cam_for_clip(trained.model, tensor, target)
        paths = clip_frame_paths(clip, trained.tsn_config.num_segments)
        for i, (cam, path) in enumerate(zip(maps, paths)):
            frame_rgb = store.get(path)
            prefix = out_dir / f"{clip.driver_id}_{clip.end_timestamp:.1f}_{i}"
            export_cam(prefix, cam, frame_rgb, meta={"clip": clip.key, **config.stamp()})
    print(f"CAM maps for {len(clips)} clip(s) -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    out_dir = _artifacts_dir(config)
    reports = []
    for path in sorted(out_dir.glob("accuracy_*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        reports.append(AccuracyReport(method=doc["method"], per_split=doc["per_split"]))
    if not reports:
        raise DataError(f"no accuracy_*.json reports under {out_dir}; run `evaluate` first")
    split_ids = tuple(sorted(reports[0].per_split, key=lambda s: splits.SPLIT_IDS.index(s)))
    table = method_table(reports, split_ids)
    csv_path = out_dir / "method_table.csv"
    table.to_csv(csv_path)
    write_artifact_meta(csv_path, config)
    print(format_method_table(table))
    print(f"-> {csv_path}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    plan = _plan(config)
    frames = pipeline.load_labeled_corpus(config)
    backbone, tsn, training, store = pipeline.deep_components(config)
    windows = [float(w) for w in args.windows.split(",")]

    def make_partitions(n):
        return pipeline.clip_partitions(frames, plan, n, config.stride_seconds, config.seed_for("balance"))

    def test_clips_for(n):
        return make_partitions(n)["test"].samples

    rows = window_sweep(
        make_partitions,
        test_clips_for,
        windows,
        store,
        backbone_spec=backbone,
        tsn_config=tsn,
        train_config=training,
    )
    out = _artifacts_dir(config) / "window_sweep.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("window_seconds,accuracy,error\n")
        for row in rows:
            acc = "" if row["accuracy"] is None else f"{row['accuracy']:.6f}"
            err = row["error"] or ""
            fh.write(f"{row['window_seconds']},{acc},{err}\n")
    write_artifact_meta(out, config)
    for row in rows:
        status = f"accuracy {row['accuracy']:.3f}" if row["accuracy"] is not None else f"failed: {row['error']}"
        print(f"n={row['window_seconds']:g}s: {status}")
    return 0


# --------------------------------------------------------------------------
# Parser wiring.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadstress",
        description="Estimate discretized driver stress from road-scene imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--corpus", default=None, help="corpus directory")
        p.add_argument("--artifacts", default=None, help="artifact output root")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--fps", type=float, default=None)
        return p

    p = add("synth", cmd_synth, "generate a synthetic 9-driver corpus")
    p.add_argument("--out", default=None, help="output directory (defaults to --corpus)")

    add("ingest", cmd_ingest, "resample, normalize and label a corpus")

    p = add("features", cmd_features, "extract occupancy feature vectors")
    p.add_argument("--segmenter", default=None, choices=["synthetic", "cached"])

    p = add("analyze", cmd_analyze, "object over/under-representation per class")
    p.add_argument("--features", default=None, help="feature CSV (defaults to artifacts)")
    p.add_argument("--top-k", type=int, default=5)

    p = add("split", cmd_split, "write split plan manifests")
    p.add_argument("--plan", action="store_true", help="emit all 9 leave-one-driver-out plans")
    p.add_argument("--split", default=None)

    p = add("train-classical", cmd_train_classical, "train a feature classifier")
    p.add_argument("--kind", dest="classifier_kind", default=None, choices=list(classical.KINDS))
    p.add_argument("--split", default=None)
    p.add_argument("--features", default=None)

    for name, fn in (("train-image", cmd_train_image), ("train-video", cmd_train_video)):
        p = add(name, fn, f"train the {name.split('-')[1]} model on one split")
        p.add_argument("--split", default=None)
        p.add_argument("--window", type=float, default=None, help="clip window seconds")
        p.add_argument("--segments", dest="num_segments", type=int, default=None)
        p.add_argument("--backbone", default=None, choices=["tiny", "vgg16"])
        p.add_argument("--learning-rate", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--max-epochs", type=int, default=None)

    p = add("evaluate", cmd_evaluate, "evaluate a trained method on splits")
    p.add_argument("--method", required=True, help="tsn, image, or a classical kind")
    p.add_argument("--split", default=None)
    p.add_argument("--all-splits", action="store_true")

    p = add("explain", cmd_explain, "GradCAM maps for test clips")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--split", default=None)
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--target-class", type=int, default=None)

    add("report", cmd_report, "combine accuracy reports into the method table")

    p = add("sweep", cmd_sweep, "train the video model over several window lengths")
    p.add_argument("--windows", default="1,10,20", help="comma-separated window seconds")
    p.add_argument("--split", default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except TrainingError as exc:
        return _fail(EXIT_TRAINING, "training", str(exc))


if __name__ == "__main__":
    sys.exit(main())
