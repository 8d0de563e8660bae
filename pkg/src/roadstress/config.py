"""Experiment configuration: one JSON document drives a whole run.

All randomness flows from the single top-level seed, expanded per
component, so one number reproduces an experiment. Every artifact a run
writes carries the hash of the effective config plus that seed.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError


@dataclass
class ExperimentConfig:
    corpus: str = "corpus"
    artifacts: str = "artifacts"
    fps: float = 2.0
    thresholds: tuple[float, float] = (0.4, 0.75)
    normalize: bool = True
    coverage_slack_s: float = 1.0
    segmenter: str = "synthetic"
    window_seconds: float = 20.0
    num_segments: int = 8
    stride_seconds: float = 0.5
    seed: int = 0
    backbone: str = "tiny"
    backbone_weights: str | None = None
    train_scope: str = "all"
    resize: int | None = None
    crop: int | None = None
    learning_rate: float = 1e-5
    batch_size: int = 4
    max_epochs: int = 10
    patience: int = 3
    classifier_kind: str = "tree_ensemble"
    classifier_hyperparameters: dict = field(default_factory=dict)
    split: str = "D_1"
    # synthetic generation knobs
    synth_segment_s: float = 112.5
    synth_lag_s: float = 10.0
    synth_image_size: int = 64
    synth_jitter: float = 0.25

    def __post_init__(self):
        self.thresholds = tuple(self.thresholds)
        if len(self.thresholds) != 2 or not 0 < self.thresholds[0] < self.thresholds[1] <= 1:
            raise ConfigError(f"thresholds must be 0 < low < high <= 1, got {self.thresholds}")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.window_seconds < 1 or self.num_segments < 1 or self.stride_seconds <= 0:
            raise ConfigError("window, segments and stride must be positive")

    @classmethod
    def from_file(cls, path: Path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        doc.update(overrides or {})
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["thresholds"] = list(self.thresholds)
        return doc

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def seed_for(self, component: str) -> int:
        """Stable per-component child seed derived from the run seed."""
        child = np.random.SeedSequence([self.seed, zlib.crc32(component.encode())])
        return int(child.generate_state(1)[0])

    def stamp(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}


def write_artifact_meta(artifact_path: Path, config: ExperimentConfig, extra: dict | None = None) -> None:
    """Sidecar `<artifact>.meta.json` for formats that cannot embed fields."""
    doc = config.stamp()
    if extra:
        doc.update(extra)
    meta_path = Path(str(artifact_path) + ".meta.json")
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
