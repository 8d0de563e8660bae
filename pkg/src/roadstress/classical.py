"""Feature-vector stress classifiers: random forest and the two SVM kinds.

All three operate on the 66-dim occupancy vectors. Backends come from
scikit-learn; the margin-based kinds get train-fitted standardization
(they are scale sensitive), the tree ensemble sees raw fractions.
"""

from __future__ import annotations

import pickle
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from .errors import ConfigError, DataError
from .ingestion import StressClass
from .taxonomy import NUM_CATEGORIES

KINDS = ("tree_ensemble", "linear_max_margin", "rbf_max_margin")

_ARCHIVE_FORMAT = "roadstress-classical-v1"


@dataclass(frozen=True)
class FeatureClassifierSpec:
    """Which backend to train and with what hyperparameters."""

    kind: str
    seed: int = 0
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}; valid: {KINDS}")
        allowed = {
            "tree_ensemble": {"n_estimators", "max_depth"},
            "linear_max_margin": {"C"},
            "rbf_max_margin": {"C", "gamma"},
        }[self.kind]
        bad = set(self.hyperparameters) - allowed
        if bad:
            raise ConfigError(f"hyperparameters {sorted(bad)} not valid for {self.kind}")


@dataclass
class TrainedFeatureClassifier:
    spec: FeatureClassifierSpec
    pipeline: Pipeline
    taxonomy_version: str
    train_class_counts: dict[str, int]

    def predict(self, vectors: np.ndarray) -> list[StressClass]:
        classes, _ = self.predict_with_scores(vectors)
        return classes

    def predict_with_scores(self, vectors: np.ndarray) -> tuple[list[StressClass], np.ndarray | None]:
        """Classes plus per-class probability rows when the backend has them."""
        X = np.asarray(vectors, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != NUM_CATEGORIES:
            raise DataError(f"expected {NUM_CATEGORIES}-dim vectors, got {X.shape[1]}")
        pred = self.pipeline.predict(X)
        scores = None
        if hasattr(self.pipeline[-1], "predict_proba"):
            scores = self.pipeline.predict_proba(X)
        return [StressClass(int(p)) for p in pred], scores


def median_distance_gamma(X: np.ndarray, max_points: int = 500) -> float:
    """RBF bandwidth from the median pairwise distance heuristic."""
    pts = X[:max_points]
    diffs = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diffs**2).sum(axis=2))
    med = float(np.median(d[np.triu_indices(len(pts), k=1)]))
    if med <= 0:
        return 1.0
    return 1.0 / (2 * med * med)


def _build_pipeline(spec: FeatureClassifierSpec, X: np.ndarray) -> Pipeline:
    hp = spec.hyperparameters
    if spec.kind == "tree_ensemble":
        model = RandomForestClassifier(
            n_estimators=hp.get("n_estimators", 200),
            max_depth=hp.get("max_depth"),
            random_state=spec.seed,
        )
        return Pipeline([("model", model)])
    if spec.kind == "linear_max_margin":
        model = SVC(kernel="linear", C=hp.get("C", 1.0), random_state=spec.seed)
    else:
        # bandwidth heuristic runs on the standardized features the kernel
        # will actually see, so rescaled inputs give the same classifier
        gamma = hp.get("gamma")
        if gamma is None:
            gamma = median_distance_gamma(StandardScaler().fit_transform(X))
        model = SVC(kernel="rbf", C=hp.get("C", 1.0), gamma=gamma, random_state=spec.seed)
    return Pipeline([("scale", StandardScaler()), ("model", model)])


def train_feature_classifier(
    spec: FeatureClassifierSpec,
    X: np.ndarray,
    y: np.ndarray,
    taxonomy_version: str = "mapillary-vistas-v1.2",
) -> TrainedFeatureClassifier:
    """Fit one classifier on a (balanced) training partition."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] != NUM_CATEGORIES:
        raise DataError(f"training vectors must be (n, {NUM_CATEGORIES}), got {X.shape}")
    if len(X) != len(y) or len(X) == 0:
        raise DataError("training features and labels must be non-empty and aligned")
    counts = {c: int((y == int(c)).sum()) for c in StressClass}
    present = [c for c, n in counts.items() if n > 0]
    if len(present) < 2:
        raise DataError("training partition is single-class; nothing to separate")
    if len(set(counts.values())) > 1:
        warnings.warn(f"training partition is not balanced: { {c.label: n for c, n in counts.items()} }")
    pipeline = _build_pipeline(spec, X)
    pipeline.fit(X, y)
    return TrainedFeatureClassifier(
        spec=spec,
        pipeline=pipeline,
        taxonomy_version=taxonomy_version,
        train_class_counts={c.label: n for c, n in counts.items()},
    )


def save_classifier(model: TrainedFeatureClassifier, path: Path, metrics: dict | None = None) -> None:
    """Persist the fitted model with its spec, seed and metrics in one archive."""
    doc = {
        "format": _ARCHIVE_FORMAT,
        "spec": {"kind": model.spec.kind, "seed": model.spec.seed, "hyperparameters": model.spec.hyperparameters},
        "taxonomy_version": model.taxonomy_version,
        "train_class_counts": model.train_class_counts,
        "metrics": metrics or {},
        "pipeline": model.pipeline,
    }
    with open(path, "wb") as fh:
        pickle.dump(doc, fh)


def load_classifier(path: Path) -> TrainedFeatureClassifier:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model archive not found: {path}")
    with open(path, "rb") as fh:
        doc = pickle.load(fh)
    if doc.get("format") != _ARCHIVE_FORMAT:
        raise DataError(f"{path} is not a classical model archive")
    spec = FeatureClassifierSpec(**doc["spec"])
    return TrainedFeatureClassifier(
        spec=spec,
        pipeline=doc["pipeline"],
        taxonomy_version=doc["taxonomy_version"],
        train_class_counts=doc["train_class_counts"],
    )
