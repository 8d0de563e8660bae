"""Training loops for the image and video stress classifiers.

Both kinds consume the same balanced clip partitions: the video model sees
the sampled segment frames of each clip, the image model only the last
frame (the labeled one), which keeps sample counts identical across model
families. Checkpoint selection is by validation accuracy with early
stopping; all shuffling derives from the run seed.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import ConfigError, DataError, TrainingError
from ..splits import BalancedPartition, ClipSample
from .data import FrameStore, clip_frame_paths, clip_tensor, last_frame_tensor
from .models import BackboneSpec, ImageHeadSpec, StressModel, TSNConfig, build_model

MODEL_KINDS = ("image", "tsn")


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and schedule settings shared by both model kinds."""

    learning_rate: float = 1e-5
    batch_size: int = 4
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning rate, batch size and epochs must be positive")


@dataclass
class TrainedModel:
    kind: str
    model: StressModel
    tsn_config: TSNConfig
    train_config: TrainingConfig
    best_val_accuracy: float
    log: list[dict] = field(default_factory=list)


def _batches(items: list, batch_size: int, rng: np.random.Generator | None):
    """Yield batches, never mixing clips with different segment counts."""
    order = rng.permutation(len(items)) if rng is not None else np.arange(len(items))
    buckets: dict[int, list] = {}
    for i in order:
        item = items[int(i)]
        buckets.setdefault(len(item.frame_paths), []).append(item)
    for bucket in buckets.values():
        for start in range(0, len(bucket), batch_size):
            yield bucket[start : start + batch_size]


def _forward(model: StressModel, kind: str, clips: list[ClipSample], store: FrameStore, num_segments: int) -> torch.Tensor:
    if kind == "image":
        return model(last_frame_tensor(store, clips))
    return model.forward_clips(clip_tensor(store, clips, num_segments))


def _labels(clips: list[ClipSample]) -> torch.Tensor:
    return torch.tensor([int(c.label) for c in clips], dtype=torch.long)


@torch.no_grad()
def evaluate_model(
    model: StressModel,
    kind: str,
    clips,
    store: FrameStore,
    num_segments: int,
    batch_size: int = 32,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Accuracy plus (true, predicted) label arrays on a clip collection."""
    model.eval()
    trues, preds = [], []
    for batch in _batches(list(clips), batch_size, rng=None):
        scores = _forward(model, kind, batch, store, num_segments)
        preds.extend(scores.argmax(dim=1).tolist())
        trues.extend(int(c.label) for c in batch)
    trues = np.array(trues)
    preds = np.array(preds)
    if len(trues) == 0:
        raise DataError("cannot evaluate on an empty clip collection")
    return float((trues == preds).mean()), trues, preds


def train_model(
    kind: str,
    partitions: dict[str, BalancedPartition],
    store: FrameStore,
    backbone_spec: BackboneSpec | None = None,
    tsn_config: TSNConfig | None = None,
    train_config: TrainingConfig | None = None,
    head_spec: ImageHeadSpec | None = None,
) -> TrainedModel:
    """Train one model kind on balanced train/val clip partitions."""
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; valid: {MODEL_KINDS}")
    backbone_spec = backbone_spec or BackboneSpec()
    tsn_config = tsn_config or TSNConfig()
    train_config = train_config or TrainingConfig()
    for role in ("train", "val"):
        if role not in partitions or len(partitions[role].samples) == 0:
            raise TrainingError(f"empty or missing {role} partition")
    train_clips = list(partitions["train"].samples)
    val_clips = list(partitions["val"].samples)

    torch.manual_seed(train_config.seed)
    model = build_model(backbone_spec, head_spec, seed=train_config.seed)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.RMSprop(trainable, lr=train_config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    rng = np.random.default_rng(train_config.seed)

    log: list[dict] = []
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_val = -1.0
    epochs_since_best = 0
    train_losses: list[float] = []

    for epoch in range(1, train_config.max_epochs + 1):
        model.train()
        epoch_loss = 0.0
        correct = 0
        total = 0
        for batch in _batches(train_clips, train_config.batch_size, rng):
            optimizer.zero_grad()
            scores = _forward(model, kind, batch, store, tsn_config.num_segments)
            labels = _labels(batch)
            loss = loss_fn(scores, labels)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (kind={kind}, "
                    f"lr={train_config.learning_rate}, batch={len(batch)})"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
            correct += int((scores.argmax(dim=1) == labels).sum())
            total += len(batch)
        train_loss = epoch_loss / total
        train_losses.append(train_loss)
        log.append({"epoch": epoch, "split": "train", "loss": train_loss, "accuracy": correct / total})

        val_acc, _, _ = evaluate_model(model, kind, val_clips, store, tsn_config.num_segments)
        log.append({"epoch": epoch, "split": "val", "loss": float("nan"), "accuracy": val_acc})

        if val_acc > best_val:
            best_val = val_acc
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= train_config.patience:
                break

    if len(train_losses) >= 3 and not (train_losses[0] > train_losses[1] > train_losses[2]):
        warnings.warn(f"training loss not monotonically decreasing over first 3 epochs: {train_losses[:3]}")

    model.load_state_dict(best_state)
    model.eval()
    return TrainedModel(
        kind=kind,
        model=model,
        tsn_config=tsn_config,
        train_config=train_config,
        best_val_accuracy=best_val,
        log=log,
    )


def window_sweep(
    make_partitions,
    test_clips_for,
    window_values,
    store: FrameStore,
    kind: str = "tsn",
    backbone_spec: BackboneSpec | None = None,
    tsn_config: TSNConfig | None = None,
    train_config: TrainingConfig | None = None,
) -> list[dict]:
    """Accuracy-vs-window-length table.

    `make_partitions(n)` must return balanced train/val partitions and
    `test_clips_for(n)` the evaluation clips, both built with window n.
    A failed training is recorded in its row and the sweep continues.
    """
    rows = []
    for n in window_values:
        row = {"window_seconds": float(n), "accuracy": None, "error": None}
        try:
            cfg = TSNConfig(
                num_segments=(tsn_config or TSNConfig()).num_segments,
                window_seconds=float(n),
            )
            trained = train_model(
                kind,
                make_partitions(n),
                store,
                backbone_spec=backbone_spec,
                tsn_config=cfg,
                train_config=train_config,
            )
            acc, _, _ = evaluate_model(trained.model, kind, test_clips_for(n), store, cfg.num_segments)
            row["accuracy"] = acc
        except (DataError, TrainingError) as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def save_checkpoint(path, trained: TrainedModel, meta: dict | None = None) -> None:
    torch.save(
        {
            "format": "roadstress-checkpoint-v1",
            "kind": trained.kind,
            "backbone_spec": asdict(trained.model.backbone_spec),
            "head_spec": asdict(trained.model.head_spec),
            "tsn_config": asdict(trained.tsn_config),
            "train_config": asdict(trained.train_config),
            "best_val_accuracy": trained.best_val_accuracy,
            "log": trained.log,
            "meta": meta or {},
            "state_dict": trained.model.state_dict(),
        },
        path,
    )


def load_checkpoint(path) -> TrainedModel:
    doc = torch.load(path, map_location="cpu", weights_only=False)
    if doc.get("format") != "roadstress-checkpoint-v1":
        raise DataError(f"{path} is not a model checkpoint")
    model = StressModel(BackboneSpec(**doc["backbone_spec"]), ImageHeadSpec(**doc["head_spec"]))
    model.load_state_dict(doc["state_dict"])
    model.eval()
    return TrainedModel(
        kind=doc["kind"],
        model=model,
        tsn_config=TSNConfig(**doc["tsn_config"]),
        train_config=TrainingConfig(**doc["train_config"]),
        best_val_accuracy=doc["best_val_accuracy"],
        log=doc["log"],
    )
