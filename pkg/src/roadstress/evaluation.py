"""Accuracy reports, confusion matrices, and the per-method comparison table."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .ingestion import StressClass
from .splits import SPLIT_IDS

_CLASS_LABELS = [c.label for c in StressClass]


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predicted."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.shape != (3, 3) or np.any(arr < 0):
            raise DataError("confusion matrix must be 3x3 with non-negative counts")
        object.__setattr__(self, "counts", arr.astype(np.int64))

    @classmethod
    def from_pairs(cls, y_true, y_pred) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        if y_true.shape != y_pred.shape or y_true.size == 0:
            raise DataError("need equal-length, non-empty label arrays")
        counts = np.zeros((3, 3), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total

    def row_normalized(self) -> np.ndarray:
        """Rows scaled to sum to 1; rows with zero support become NaN."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            normed = self.counts / sums
        return np.where(sums > 0, normed, np.nan)


def evaluate_predictions(y_true, y_pred) -> tuple[float, ConfusionMatrix]:
    matrix = ConfusionMatrix.from_pairs(y_true, y_pred)
    return matrix.accuracy, matrix


def average_confusion(matrices: list[ConfusionMatrix]) -> np.ndarray:
    """Elementwise mean of the row-normalized matrices (each split weighs
    equally, regardless of its sample count). Rows sum to 1."""
    if not matrices:
        raise DataError("no confusion matrices to average")
    normed = []
    for m in matrices:
        rn = m.row_normalized()
        if np.isnan(rn).any():
            raise DataError("cannot average a matrix with an unsupported true class")
        normed.append(rn)
    return np.mean(normed, axis=0)


def save_confusion(path: Path, matrix: np.ndarray | ConfusionMatrix, meta: dict | None = None) -> None:
    if isinstance(matrix, ConfusionMatrix):
        payload = {"counts": matrix.counts.tolist(), "normalized": matrix.row_normalized().tolist()}
    else:
        payload = {"normalized": np.asarray(matrix).tolist()}
    payload["classes"] = _CLASS_LABELS
    if meta:
        payload.update(meta)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class AccuracyReport:
    """Per-split test accuracies of one method."""

    method: str
    per_split: dict[str, float]

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_split.values())))


def method_table(reports: list[AccuracyReport], split_ids: tuple[str, ...] = SPLIT_IDS) -> pd.DataFrame:
    """Rows = methods, columns = split ids + Avg."""
    if not reports:
        raise DataError("no reports to tabulate")
    for rep in reports:
        missing = [s for s in split_ids if s not in rep.per_split]
        extra = [s for s in rep.per_split if s not in split_ids]
        if missing or extra:
            raise DataError(
                f"report {rep.method!r} split coverage mismatch: missing={missing} extra={extra}"
            )
    rows = {}
    for rep in reports:
        rows[rep.method] = {s: rep.per_split[s] for s in split_ids} | {"Avg": rep.mean}
    table = pd.DataFrame.from_dict(rows, orient="index", columns=[*split_ids, "Avg"])
    table.index.name = "method"
    return table


def format_method_table(table: pd.DataFrame) -> str:
    return table.to_string(float_format=lambda v: f"{v:.3f}")
