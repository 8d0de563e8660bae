"""Leave-one-driver-out split plans, class balancing, and clip windows.

The nine split plans are fixed by the evaluation protocol: each driver is
the test subject exactly once, two named drivers validate, the remaining
six train. Training partitions are balanced by upsampling every class to
the majority count; validation/test partitions by downsampling to the
minority count (never duplicating a sample).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .ingestion import LabeledFrame, StressClass

# Validation / test assignments of the nine-driver protocol, keyed by the
# experiment id of the held-out driver.
LODO_ASSIGNMENTS = {
    "D_1": (("2.Drv2-1", "10.Drv8-1"), "1.Drv1-1"),
    "D_2": (("3.Drv3-1", "11.Drv9-1"), "2.Drv2-1"),
    "D_3": (("1.Drv1-1", "9.Drv7-1"), "3.Drv3-1"),
    "D_4": (("9.Drv7-1", "2.Drv2-1"), "4.Drv4-1"),
    "D_5": (("1.Drv1-1", "11.Drv9-1"), "5.Drv5-1"),
    "D_7": (("4.Drv4-1", "10.Drv8-1"), "7.Drv6-1"),
    "D_9": (("3.Drv3-1", "5.Drv5-1"), "9.Drv7-1"),
    "D_10": (("7.Drv6-1", "5.Drv5-1"), "10.Drv8-1"),
    "D_11": (("3.Drv3-1", "4.Drv4-1"), "11.Drv9-1"),
}

ALL_DRIVERS = frozenset(test for _, test in LODO_ASSIGNMENTS.values())
SPLIT_IDS = tuple(LODO_ASSIGNMENTS)


@dataclass(frozen=True)
class SplitPlan:
    """One leave-one-driver-out assignment."""

    split_id: str
    train_drivers: frozenset[str]
    val_drivers: frozenset[str]
    test_driver: str

    def __post_init__(self):
        groups = [self.train_drivers, self.val_drivers, {self.test_driver}]
        union = set().union(*groups)
        if len(union) != sum(len(g) for g in groups):
            raise DataError(f"split {self.split_id}: train/val/test overlap")
        if union != set(ALL_DRIVERS):
            raise DataError(f"split {self.split_id}: drivers do not cover the corpus")

    def role_of(self, driver_id: str) -> str:
        if driver_id == self.test_driver:
            return "test"
        if driver_id in self.val_drivers:
            return "val"
        if driver_id in self.train_drivers:
            return "train"
        raise DataError(f"driver {driver_id!r} not part of split {self.split_id}")

    def to_dict(self) -> dict:
        return {
            "split_id": self.split_id,
            "train_drivers": sorted(self.train_drivers),
            "val_drivers": sorted(self.val_drivers),
            "test_driver": self.test_driver,
        }


def lodo_plan(corpus_drivers: Sequence[str]) -> list[SplitPlan]:
    """The nine fixed split plans for the canonical nine-driver corpus."""
    given = set(corpus_drivers)
    if given != set(ALL_DRIVERS):
        missing = sorted(ALL_DRIVERS - given)
        extra = sorted(given - ALL_DRIVERS)
        raise DataError(f"corpus must hold exactly the 9 first-drive ids; missing={missing} extra={extra}")
    plans = []
    for split_id, (val, test) in LODO_ASSIGNMENTS.items():
        train = frozenset(ALL_DRIVERS - set(val) - {test})
        plans.append(SplitPlan(split_id, train, frozenset(val), test))
    return plans


def save_split_plans(plans: list[SplitPlan], path: Path) -> None:
    doc = [p.to_dict() for p in plans]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Clip windows for the sequence models.


@dataclass(frozen=True)
class ClipSample:
    """A fixed-length frame window ending at a labeled timestamp.

    Frames span [end - window_seconds, end]; the label is the class of the
    window's last frame.
    """

    driver_id: str
    end_timestamp: float
    frame_paths: tuple[str, ...]
    frame_timestamps: tuple[float, ...]
    window_seconds: float
    label: StressClass

    @property
    def key(self) -> str:
        return f"{self.driver_id}@{self.end_timestamp:.3f}"


def build_clips(
    frames: list[LabeledFrame],
    window_seconds: float,
    stride_seconds: float,
) -> list[ClipSample]:
    """One clip per stride position whose full window fits inside the drive.

    A drive shorter than the window yields an empty list (with a warning),
    not an error.
    """
    if window_seconds <= 0 or stride_seconds <= 0:
        raise DataError("window and stride must be positive")
    if not frames:
        return []
    by_driver: dict[str, list[LabeledFrame]] = {}
    for f in frames:
        by_driver.setdefault(f.driver_id, []).append(f)

    clips: list[ClipSample] = []
    tol = 1e-6
    for driver_id, dframes in by_driver.items():
        dframes = sorted(dframes, key=lambda f: f.timestamp_s)
        ts = np.array([f.timestamp_s for f in dframes])
        t0, t_last = ts[0], ts[-1]
        if t_last - t0 < window_seconds:
            warnings.warn(
                f"drive {driver_id} ({t_last - t0:.1f}s) shorter than the "
                f"{window_seconds:.1f}s window; no clips produced"
            )
            continue
        n_pos = int(np.floor((t_last - t0 - window_seconds) / stride_seconds + tol))
        seen_ends = set()
        for j in range(n_pos + 1):
            end_target = t0 + window_seconds + j * stride_seconds
            end_idx = int(np.argmin(np.abs(ts - end_target)))
            end_t = ts[end_idx]
            if end_t - t0 < window_seconds - tol or end_idx in seen_ends:
                continue
            seen_ends.add(end_idx)
            lo = np.searchsorted(ts, end_t - window_seconds - tol, side="left")
            window = dframes[lo : end_idx + 1]
            clips.append(
                ClipSample(
                    driver_id=driver_id,
                    end_timestamp=float(end_t),
                    frame_paths=tuple(f.frame_path for f in window),
                    frame_timestamps=tuple(f.timestamp_s for f in window),
                    window_seconds=window_seconds,
                    label=dframes[end_idx].stress_class,
                )
            )
    return clips


# ---------------------------------------------------------------------------
# Class balancing.


@dataclass(frozen=True)
class BalancedPartition:
    """Samples of one role after balancing, with the seed that produced them."""

    role: str
    samples: tuple
    seed: int

    def class_counts(self) -> dict[StressClass, int]:
        counts = {c: 0 for c in StressClass}
        for s in self.samples:
            counts[_label_of(s)] += 1
        return counts


def _label_of(sample) -> StressClass:
    return sample.label if isinstance(sample, ClipSample) else sample.stress_class


def balance(samples: Sequence, role: str, seed: int) -> BalancedPartition:
    """Balance class counts: train upsamples to the max, val/test downsample
    to the min (subset of the originals, no duplication)."""
    if role not in ("train", "val", "test"):
        raise DataError(f"unknown partition role {role!r}")
    groups: dict[StressClass, list] = {c: [] for c in StressClass}
    for s in samples:
        groups[_label_of(s)].append(s)
    empty = [c.label for c in StressClass if not groups[c]]
    if empty:
        raise DataError(f"cannot balance {role}: no samples for class(es) {empty}")

    rng = np.random.default_rng(np.random.SeedSequence([seed, {"train": 0, "val": 1, "test": 2}[role]]))
    out: list = []
    if role == "train":
        target = max(len(g) for g in groups.values())
        for c in StressClass:
            g = groups[c]
            out.extend(g)
            extra = target - len(g)
            if extra > 0:
                out.extend(g[i] for i in rng.integers(len(g), size=extra))
    else:
        target = min(len(g) for g in groups.values())
        for c in StressClass:
            g = groups[c]
            keep = rng.choice(len(g), size=target, replace=False)
            out.extend(g[i] for i in sorted(keep))
    return BalancedPartition(role=role, samples=tuple(out), seed=seed)


def assert_no_driver_leakage(plan: SplitPlan, partitions: dict[str, BalancedPartition]) -> None:
    """Generalization hygiene: a driver appears in at most one role."""
    seen: dict[str, str] = {}
    for role, part in partitions.items():
        for s in part.samples:
            driver = s.driver_id
            if plan.role_of(driver) != role:
                raise DataError(
                    f"driver {driver} found in {role} partition but assigned "
                    f"to {plan.role_of(driver)} by split {plan.split_id}"
                )
            if seen.setdefault(driver, role) != role:
                raise DataError(f"driver {driver} leaks across {seen[driver]} and {role}")


def save_partition_manifest(part: BalancedPartition, path: Path, extra: dict | None = None) -> None:
    """Partitions serialize as manifests of sample keys, never raw pixels."""
    keys = [s.key if isinstance(s, ClipSample) else f"{s.driver_id}@{s.timestamp_s:.3f}" for s in part.samples]
    doc = {
        "role": part.role,
        "seed": part.seed,
        "class_counts": {c.label: n for c, n in part.class_counts().items()},
        "samples": keys,
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
