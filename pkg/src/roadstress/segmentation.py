"""Per-frame semantic masks and object-occupancy feature vectors.

Masks label every pixel with one of the 66 taxonomy categories (or void,
255). The occupancy vector of a mask holds, per category, the fraction of
image area that category covers; void pixels count in the denominator
only, so fractions stay area-true.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd
from PIL import Image

from .errors import DataError
from .ingestion import LabeledFrame, StressClass
from .taxonomy import NUM_CATEGORIES, VOID_INDEX

FEATURE_COLUMNS = [f"f{i:02d}" for i in range(NUM_CATEGORIES)]


@dataclass(frozen=True)
class SegmentationMask:
    """Per-pixel category indices (uint8), shape (height, width)."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError("mask must be a non-empty 2-d array")
        object.__setattr__(self, "labels", arr.astype(np.uint8, copy=False))
        bad = (self.labels >= NUM_CATEGORIES) & (self.labels != VOID_INDEX)
        if bad.any():
            offending = int(self.labels[bad][0])
            raise DataError(
                f"mask contains category index {offending}; valid indices are 0..65 and 255"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class OccupancyVector:
    """Area fractions per category, plus the exact pixel counts behind them.

    Integer counts are kept so that `sum(counts) + void_count == total_pixels`
    can be checked exactly; `values` is the float view counts/total.
    """

    counts: np.ndarray
    void_count: int
    total_pixels: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (NUM_CATEGORIES,):
            raise DataError(f"occupancy needs {NUM_CATEGORIES} counts, got {counts.shape}")
        if self.total_pixels <= 0:
            raise DataError("occupancy over an empty image")
        if int(counts.sum()) + self.void_count != self.total_pixels:
            raise DataError("occupancy counts do not add up to the pixel total")

    @property
    def values(self) -> np.ndarray:
        return self.counts / self.total_pixels

    @property
    def void_fraction(self) -> float:
        return self.void_count / self.total_pixels


def occupancy_vector(mask: SegmentationMask) -> OccupancyVector:
    """Count the area fraction each category occupies in the mask."""
    flat = mask.labels.ravel()
    counts = np.bincount(flat, minlength=256)
    return OccupancyVector(
        counts=counts[:NUM_CATEGORIES],
        void_count=int(counts[NUM_CATEGORIES:].sum()),
        total_pixels=flat.size,
    )


# ---------------------------------------------------------------------------
# Segmenter adapters. The external neural segmenter stays outside this
# package; adapters only deliver masks for frames, by whatever means.


class Segmenter(Protocol):
    def segment(self, frame_path: str, timestamp_s: float) -> SegmentationMask: ...


def read_mask_png(path: Path) -> SegmentationMask:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask file not found: {path}")
    img = Image.open(path)
    if img.mode != "L":
        raise DataError(f"mask {path} must be single-channel 8-bit PNG, got mode {img.mode}")
    return SegmentationMask(np.asarray(img))


def write_mask_png(path: Path, mask: SegmentationMask) -> None:
    Image.fromarray(mask.labels, mode="L").save(path, format="PNG")


def mask_filename(timestamp_s: float) -> str:
    """Canonical mask/frame file name: the timestamp in milliseconds."""
    return f"{round(timestamp_s * 1000)}.png"


class CachedMaskSegmenter:
    """Serves pre-computed masks stored as `<mask_dir>/<timestamp_ms>.png`."""

    def __init__(self, mask_dir: Path):
        self.mask_dir = Path(mask_dir)

    def segment(self, frame_path: str, timestamp_s: float) -> SegmentationMask:
        mask = read_mask_png(self.mask_dir / mask_filename(timestamp_s))
        _check_dims_against_frame(mask, frame_path)
        return mask


def category_palette() -> np.ndarray:
    """Fixed (66, 3) uint8 palette, one distinct color per category.

    Hues walk the color wheel with a stride coprime to 66 so neighboring
    indices get distant colors. Synthetic frames are rendered with these
    colors, which makes color->category inversion exact.
    """
    palette = np.zeros((NUM_CATEGORIES, 3), dtype=np.uint8)
    for i in range(NUM_CATEGORIES):
        hue = ((i * 29) % NUM_CATEGORIES) / NUM_CATEGORIES
        value = 0.95 - 0.35 * ((i * 13) % 3) / 2
        r, g, b = colorsys.hsv_to_rgb(hue, 0.72, value)
        palette[i] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


_PALETTE = category_palette()


class SyntheticSegmenter:
    """Exact segmenter for synthetic frames rendered with the fixed palette."""

    def segment(self, frame_path: str, timestamp_s: float) -> SegmentationMask:
        path = Path(frame_path)
        if not path.exists():
            raise DataError(f"frame file not found: {path}")
        rgb = np.asarray(Image.open(path).convert("RGB"))
        flat = rgb.reshape(-1, 3)
        # brute-force nearest palette color; exact match expected
        dists = np.abs(flat[:, None, :].astype(np.int16) - _PALETTE[None, :, :].astype(np.int16)).sum(axis=2)
        labels = dists.argmin(axis=1).astype(np.uint8)
        if dists[np.arange(len(flat)), labels].max() > 0:
            raise DataError(f"frame {path} contains colors outside the synthetic palette")
        return SegmentationMask(labels.reshape(rgb.shape[:2]))


SEGMENTER_REGISTRY = {
    "cached": CachedMaskSegmenter,
    "synthetic": SyntheticSegmenter,
}


def make_segmenter(name: str, **kwargs) -> Segmenter:
    if name not in SEGMENTER_REGISTRY:
        raise DataError(f"unknown segmenter {name!r}; registered: {sorted(SEGMENTER_REGISTRY)}")
    return SEGMENTER_REGISTRY[name](**kwargs)


def _check_dims_against_frame(mask: SegmentationMask, frame_path: str) -> None:
    path = Path(frame_path)
    if not path.exists():
        return
    with Image.open(path) as img:
        w, h = img.size
    if (mask.height, mask.width) != (h, w):
        raise DataError(
            f"mask size {mask.width}x{mask.height} does not match frame "
            f"{w}x{h} for {frame_path}"
        )


# ---------------------------------------------------------------------------
# Feature tables.


def extract_features(frames: list[LabeledFrame], segmenter: Segmenter) -> pd.DataFrame:
    """Occupancy features for every labeled frame.

    Returns a deterministic table keyed by (driver_id, timestamp_s) with
    one f00..f65 column per category plus the frame's stress class.
    """
    rows = []
    for frame in frames:
        try:
            mask = segmenter.segment(frame.frame_path, frame.timestamp_s)
        except DataError as exc:
            raise DataError(
                f"no usable mask for frame {frame.driver_id}@{frame.timestamp_s:.3f}s: {exc}"
            ) from exc
        occ = occupancy_vector(mask)
        rows.append(
            {
                "driver_id": frame.driver_id,
                "timestamp_s": frame.timestamp_s,
                "stress_class": frame.stress_class.label,
                **dict(zip(FEATURE_COLUMNS, occ.values)),
            }
        )
    return pd.DataFrame(rows, columns=["driver_id", "timestamp_s", "stress_class", *FEATURE_COLUMNS])


def write_feature_csv(path: Path, table: pd.DataFrame) -> None:
    table.to_csv(path, index=False)


def read_feature_csv(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"feature table not found: {path}")
    table = pd.read_csv(path)
    missing = [c for c in ("driver_id", "timestamp_s", "stress_class", *FEATURE_COLUMNS) if c not in table.columns]
    if missing:
        raise DataError(f"feature table {path} missing columns: {missing[:4]}...")
    return table


def feature_matrix(table: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """Split a feature table into (X, y) arrays for the classifiers."""
    X = table[FEATURE_COLUMNS].to_numpy(dtype=float)
    y = np.array([StressClass.from_label(c) for c in table["stress_class"]], dtype=int)
    return X, y
