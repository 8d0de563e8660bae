"""Over/under-representation of scene objects per stress class.

For each category i the representation ratio in class p is the mean
occupancy of i over frames of class p divided by its mean over all frames.
Ratios above 1 mean the object is over-represented in that class. Means
are plain per-frame means (each frame counts once, no balancing), and
categories whose global mean is zero are reported as undefined rather
than silently dropped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .ingestion import StressClass
from .segmentation import FEATURE_COLUMNS
from .taxonomy import DEFAULT_TAXONOMY, NUM_CATEGORIES

CLASS_ORDER = (StressClass.LOW, StressClass.MEDIUM, StressClass.HIGH)


@dataclass(frozen=True)
class RepresentationRatioTable:
    """ratios[i, p] = class mean / global mean; NaN where undefined."""

    ratios: np.ndarray
    class_counts: np.ndarray
    global_means: np.ndarray

    def ratio(self, category: int, stress_class: StressClass) -> float:
        return float(self.ratios[category, int(stress_class)])

    def defined(self, category: int) -> bool:
        return self.global_means[category] > 0


def representation_ratios(features: pd.DataFrame) -> RepresentationRatioTable:
    """Compute the per-class representation ratios from a feature table."""
    if len(features) == 0:
        raise DataError("feature table is empty")
    if features["stress_class"].isna().any():
        raise DataError("every feature row needs a stress class")
    values = features[FEATURE_COLUMNS].to_numpy(dtype=float)
    labels = np.array([StressClass.from_label(c) for c in features["stress_class"]], dtype=int)
    counts = np.bincount(labels, minlength=3)
    missing = [CLASS_ORDER[p].label for p in range(3) if counts[p] == 0]
    if missing:
        raise DataError(f"no rows for stress class(es): {missing}")

    global_means = values.mean(axis=0)
    ratios = np.full((NUM_CATEGORIES, 3), np.nan)
    for p in range(3):
        class_mean = values[labels == p].mean(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = class_mean / global_means
        ratios[:, p] = np.where(global_means > 0, r, np.nan)
    return RepresentationRatioTable(ratios=ratios, class_counts=counts, global_means=global_means)


def export_ratio_plot_data(
    table: RepresentationRatioTable,
    path: Path,
    ordering: list[int] | None = None,
) -> None:
    """Long-format CSV (category, class, ratio), undefined ratios left empty."""
    if ordering is None:
        ordering = list(range(NUM_CATEGORIES))
    bad = [i for i in ordering if not 0 <= i < NUM_CATEGORIES]
    if bad:
        raise DataError(f"ordering references unknown categories: {bad}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "class", "ratio"])
        for i in ordering:
            name = DEFAULT_TAXONOMY.name_of(i)
            for p, cls in enumerate(CLASS_ORDER):
                r = table.ratios[i, p]
                writer.writerow([name, cls.label, "" if math.isnan(r) else f"{r:.9f}"])


def top_overrepresented(table: RepresentationRatioTable, stress_class: StressClass, k: int = 5) -> list[tuple[str, float]]:
    """The k categories with the largest ratio in the given class."""
    col = table.ratios[:, int(stress_class)]
    order = np.argsort(np.nan_to_num(col, nan=-np.inf))[::-1]
    out = []
    for i in order[:k]:
        if not math.isnan(col[i]):
            out.append((DEFAULT_TAXONOMY.name_of(int(i)), float(col[i])))
    return out
