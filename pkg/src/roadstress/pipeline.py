"""High-level pipeline steps shared by the CLI, demos, and acceptance tests.

Each function is a thin composition of the per-module operations: load and
label a corpus, extract features, build balanced clip partitions for a
split, train and evaluate each model family.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from . import classical, ingestion, segmentation, splits
from .config import ExperimentConfig
from .deep import (
    BackboneSpec,
    FrameStore,
    PreprocessSpec,
    TSNConfig,
    TrainingConfig,
    evaluate_model,
    train_model,
)
from .errors import DataError
from .evaluation import ConfusionMatrix, evaluate_predictions
from .ingestion import DriveSession, LabeledFrame


def label_corpus(sessions: list[DriveSession], config: ExperimentConfig) -> list[LabeledFrame]:
    """Resample, (optionally) normalize, and label every session's frames."""
    frames: list[LabeledFrame] = []
    for session in sessions:
        session = ingestion.resample_frames(session, config.fps)
        if config.normalize:
            session = ingestion.normalize_session(session)
        frames.extend(
            ingestion.align_labels(session, config.thresholds, config.coverage_slack_s)
        )
    return frames


def load_labeled_corpus(config: ExperimentConfig) -> list[LabeledFrame]:
    return label_corpus(ingestion.load_corpus(Path(config.corpus)), config)


def corpus_features(config: ExperimentConfig, frames: list[LabeledFrame] | None = None) -> pd.DataFrame:
    """Occupancy feature table for a whole corpus."""
    frames = frames if frames is not None else load_labeled_corpus(config)
    if config.segmenter == "cached":
        # masks live beside each session's frames: <session>/masks/<ms>.png
        groups: dict[Path, list[LabeledFrame]] = {}
        for frame in frames:
            groups.setdefault(Path(frame.frame_path).parent.parent / "masks", []).append(frame)
        tables = [
            segmentation.extract_features(group, segmentation.CachedMaskSegmenter(mask_dir))
            for mask_dir, group in groups.items()
        ]
        if not tables:
            return segmentation.extract_features([], segmentation.SyntheticSegmenter())
        return pd.concat(tables, ignore_index=True)
    seg = segmentation.make_segmenter(config.segmenter)
    return segmentation.extract_features(frames, seg)


def frames_by_role(frames: list[LabeledFrame], plan: splits.SplitPlan) -> dict[str, list[LabeledFrame]]:
    out: dict[str, list[LabeledFrame]] = {"train": [], "val": [], "test": []}
    for f in frames:
        out[plan.role_of(f.driver_id)].append(f)
    return out


def clip_partitions(
    frames: list[LabeledFrame],
    plan: splits.SplitPlan,
    window_seconds: float,
    stride_seconds: float,
    seed: int,
    balance_test: bool = True,
) -> dict[str, splits.BalancedPartition]:
    """Balanced clip partitions of one split plan."""
    roles = frames_by_role(frames, plan)
    parts: dict[str, splits.BalancedPartition] = {}
    for role, role_frames in roles.items():
        clips = splits.build_clips(role_frames, window_seconds, stride_seconds)
        if role == "test" and not balance_test:
            parts[role] = splits.BalancedPartition(role="test", samples=tuple(clips), seed=seed)
            continue
        parts[role] = splits.balance(clips, role, seed)
    splits.assert_no_driver_leakage(plan, parts)
    return parts


def feature_partitions(
    table: pd.DataFrame, plan: splits.SplitPlan, seed: int
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Balanced (X, y) feature matrices per role for the classical models."""
    out = {}
    for role in ("train", "val", "test"):
        if role == "test":
            sub = table[table["driver_id"] == plan.test_driver]
        elif role == "val":
            sub = table[table["driver_id"].isin(plan.val_drivers)]
        else:
            sub = table[table["driver_id"].isin(plan.train_drivers)]
        if len(sub) == 0:
            raise DataError(f"no feature rows for the {role} drivers of {plan.split_id}")
        X, y = segmentation.feature_matrix(sub)
        idx = _balance_indices(y, role, seed)
        out[role] = (X[idx], y[idx])
    return out


def _balance_indices(y: np.ndarray, role: str, seed: int) -> np.ndarray:
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 3:
        raise DataError(f"{role} partition lacks {3 - len(classes)} class(es)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, {"train": 0, "val": 1, "test": 2}[role]]))
    picked = []
    if role == "train":
        target = counts.max()
        for c, n in zip(classes, counts):
            members = np.flatnonzero(y == c)
            picked.append(members)
            if n < target:
                picked.append(rng.choice(members, size=target - n, replace=True))
    else:
        target = counts.min()
        for c in classes:
            members = np.flatnonzero(y == c)
            picked.append(np.sort(rng.choice(members, size=target, replace=False)))
    return np.concatenate(picked)


def run_classical(config: ExperimentConfig, table: pd.DataFrame, plan: splits.SplitPlan):
    """Train + evaluate one classical classifier on one split."""
    parts = feature_partitions(table, plan, config.seed_for("balance"))
    spec = classical.FeatureClassifierSpec(
        kind=config.classifier_kind,
        seed=config.seed_for("classical"),
        hyperparameters=config.classifier_hyperparameters,
    )
    model = classical.train_feature_classifier(spec, *parts["train"])
    X_test, y_test = parts["test"]
    preds = np.array([int(c) for c in model.predict(X_test)])
    accuracy, matrix = evaluate_predictions(y_test, preds)
    return model, accuracy, matrix


def deep_components(config: ExperimentConfig) -> tuple[BackboneSpec, TSNConfig, TrainingConfig, FrameStore]:
    backbone = BackboneSpec(
        architecture=config.backbone,
        weights=config.backbone_weights,
        train_scope=config.train_scope,
    )
    tsn = TSNConfig(num_segments=config.num_segments, window_seconds=config.window_seconds)
    training = TrainingConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        patience=config.patience,
        seed=config.seed_for("deep"),
    )
    store = FrameStore(PreprocessSpec(resize=config.resize, crop=config.crop))
    return backbone, tsn, training, store


def run_deep(
    config: ExperimentConfig,
    frames: list[LabeledFrame],
    plan: splits.SplitPlan,
    kind: str,
    window_seconds: float | None = None,
):
    """Train + evaluate the image or video model on one split."""
    backbone, tsn, training, store = deep_components(config)
    if window_seconds is not None:
        tsn = TSNConfig(num_segments=tsn.num_segments, window_seconds=window_seconds)
    parts = clip_partitions(
        frames, plan, tsn.window_seconds, config.stride_seconds, config.seed_for("balance")
    )
    trained = train_model(kind, parts, store, backbone_spec=backbone, tsn_config=tsn, train_config=training)
    accuracy, y_true, y_pred = evaluate_model(
        trained.model, kind, parts["test"].samples, store, tsn.num_segments
    )
    return trained, accuracy, ConfusionMatrix.from_pairs(y_true, y_pred), parts
