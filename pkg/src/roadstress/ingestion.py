"""Drive-session ingestion: loading, resampling, label normalization and alignment.

A drive session is an ordered list of (timestamp, frame path) pairs plus a
continuous stress signal in [0, 1]. The continuous score is min-max
normalized per driver, discretized into {low, medium, high}, and attached
to each frame by nearest-neighbor lookup in time.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

# Class boundaries for the normalized score. Low is [0, 0.4), medium is
# [0.4, 0.75], high is (0.75, 1]: "higher than 0.75" excludes the boundary
# from the high class, and 0.4 goes to medium by symmetry.
DEFAULT_THRESHOLDS = (0.4, 0.75)

DEFAULT_COVERAGE_SLACK_S = 1.0


class StressClass(enum.IntEnum):
    """Discrete stress level. Total order: LOW < MEDIUM < HIGH."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "StressClass":
        try:
            return cls[label.upper()]
        except KeyError:
            raise DataError(f"unknown stress class label: {label!r}") from None


@dataclass(frozen=True)
class StressSignal:
    """Continuous stress score over time.

    timestamps: seconds from drive start, strictly increasing.
    values: unitless scores in [0, 1], one per timestamp.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)
        if ts.ndim != 1 or vs.ndim != 1 or ts.shape != vs.shape:
            raise DataError("stress timestamps and values must be 1-d and equal length")
        if len(ts) < 2:
            raise DataError("stress signal needs at least 2 samples")
        if not np.all(np.diff(ts) > 0):
            raise DataError("stress timestamps must be strictly increasing")
        if np.any(vs < 0) or np.any(vs > 1):
            raise DataError("stress values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass(frozen=True)
class DriveSession:
    """One drive: ordered frames plus the continuous stress signal.

    frame_index holds (timestamp seconds, frame path) pairs with strictly
    increasing timestamps. fps is the nominal frame rate of frame_index.
    """

    driver_id: str
    frame_index: tuple[tuple[float, str], ...]
    stress: StressSignal
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frame_index", tuple(tuple(f) for f in self.frame_index))
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        ts = self.frame_timestamps
        if len(ts) and not np.all(np.diff(ts) > 0):
            raise DataError(f"frame timestamps must be strictly increasing ({self.driver_id})")

    @property
    def frame_timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.frame_index], dtype=float)

    @property
    def duration_s(self) -> float:
        ts = self.frame_timestamps
        return float(ts[-1] - ts[0]) if len(ts) else 0.0


@dataclass(frozen=True)
class LabeledFrame:
    """A frame with its normalized stress score and discrete class."""

    driver_id: str
    timestamp_s: float
    frame_path: str
    normalized_score: float
    stress_class: StressClass


def discretize(score: float, thresholds: tuple[float, float] = DEFAULT_THRESHOLDS) -> StressClass:
    """Map a normalized score in [0, 1] to a discrete stress class."""
    low_upper, medium_upper = thresholds
    if not 0.0 <= score <= 1.0:
        raise DataError(f"score {score} outside [0, 1]")
    if score < low_upper:
        return StressClass.LOW
    if score <= medium_upper:
        return StressClass.MEDIUM
    return StressClass.HIGH


def normalize_stress(signal: StressSignal) -> StressSignal:
    """Min-max normalize a stress signal to span [0, 1].

    Rejects constant signals, for which the normalization is undefined.
    """
    lo = float(np.min(signal.values))
    hi = float(np.max(signal.values))
    if hi <= lo:
        raise DataError(f"constant stress signal (value {lo}); min-max normalization undefined")
    return StressSignal(signal.timestamps, (signal.values - lo) / (hi - lo))


def normalize_session(session: DriveSession) -> DriveSession:
    """Return the session with its stress signal min-max normalized."""
    return replace(session, stress=normalize_stress(session.stress))


def resample_frames(session: DriveSession, target_fps: float) -> DriveSession:
    """Thin the frame index to the frames nearest an ideal target_fps grid.

    The grid is anchored at the first frame timestamp. Each grid point
    selects the nearest existing frame (ties toward the earlier frame);
    duplicates are dropped, so the output has roughly duration*target_fps
    frames.
    """
    if target_fps <= 0:
        raise DataError(f"target fps must be positive, got {target_fps}")
    if target_fps > session.fps:
        raise DataError(
            f"target fps {target_fps} exceeds source fps {session.fps} "
            f"for driver {session.driver_id}"
        )
    ts = session.frame_timestamps
    if len(ts) == 0:
        return replace(session, fps=target_fps)
    # half a source period of slack so a last frame sitting just below a
    # grid point still claims it; makes resampling idempotent
    slack = 0.5 / session.fps
    n_grid = int(np.floor((ts[-1] - ts[0] + slack) * target_fps)) + 1
    grid = ts[0] + np.arange(n_grid) / target_fps
    picked = _nearest_indices(ts, grid)
    keep = sorted(set(int(i) for i in picked))
    frames = tuple(session.frame_index[i] for i in keep)
    return replace(session, frame_index=frames, fps=target_fps)


def _nearest_indices(sorted_ts: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the nearest value in sorted_ts per query, ties to the earlier one."""
    right = np.searchsorted(sorted_ts, queries, side="left")
    right = np.clip(right, 0, len(sorted_ts) - 1)
    left = np.clip(right - 1, 0, len(sorted_ts) - 1)
    d_left = np.abs(queries - sorted_ts[left])
    d_right = np.abs(sorted_ts[right] - queries)
    # strict '<' keeps the earlier sample on exact ties
    return np.where(d_right < d_left, right, left)


def align_labels(
    session: DriveSession,
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
    coverage_slack_s: float = DEFAULT_COVERAGE_SLACK_S,
) -> list[LabeledFrame]:
    """Assign each frame the stress value at the nearest stress timestamp.

    Nearest-neighbor in time, ties toward the earlier sample; the slider
    signal is step-like, so interpolating would invent intermediate stress.
    The stress signal must cover the frame range up to coverage_slack_s.
    """
    ts = session.frame_timestamps
    if len(ts) == 0:
        return []
    st = session.stress.timestamps
    gap_start = st[0] - ts[0]
    gap_end = ts[-1] - st[-1]
    if gap_start > coverage_slack_s:
        raise DataError(
            f"stress signal starts {gap_start:.3f}s after the first frame "
            f"(slack {coverage_slack_s}s) for driver {session.driver_id}"
        )
    if gap_end > coverage_slack_s:
        raise DataError(
            f"stress signal ends {gap_end:.3f}s before the last frame "
            f"(slack {coverage_slack_s}s) for driver {session.driver_id}"
        )
    idx = _nearest_indices(st, ts)
    values = session.stress.values[idx]
    return [
        LabeledFrame(
            driver_id=session.driver_id,
            timestamp_s=float(t),
            frame_path=path,
            normalized_score=float(v),
            stress_class=discretize(float(v), thresholds),
        )
        for (t, path), v in zip(session.frame_index, values)
    ]


# ---------------------------------------------------------------------------
# On-disk formats: one manifest JSON per drive plus a two-column stress CSV.


def read_stress_csv(path: Path) -> StressSignal:
    """Read a `timestamp_s,score` CSV (header required, '.' decimals)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"stress CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["timestamp_s", "score"]:
            raise DataError(f"stress CSV {path} must start with header 'timestamp_s,score'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise DataError(f"stress CSV {path} has no samples")
    ts, vs = zip(*rows)
    return StressSignal(np.array(ts), np.array(vs))


def write_stress_csv(path: Path, signal: StressSignal) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "score"])
        for t, v in zip(signal.timestamps, signal.values):
            writer.writerow([f"{t:.6f}", f"{v:.6f}"])


def load_session(manifest_path: Path) -> DriveSession:
    """Load a drive session from its manifest JSON.

    The manifest lists driver_id, fps, [timestamp, frame path] pairs and
    the stress CSV path; relative paths resolve against the manifest dir.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"session manifest not found: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("driver_id", "fps", "frames", "stress_csv"):
        if key not in doc:
            raise DataError(f"manifest {manifest_path} missing field {key!r}")
    base = manifest_path.parent

    def resolve(p: str) -> str:
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    frames = tuple((float(t), resolve(p)) for t, p in doc["frames"])
    stress = read_stress_csv(Path(resolve(doc["stress_csv"])))
    return DriveSession(
        driver_id=str(doc["driver_id"]),
        frame_index=frames,
        stress=stress,
        fps=float(doc["fps"]),
    )


def save_session_manifest(session: DriveSession, manifest_path: Path, stress_csv: str) -> None:
    """Write the manifest JSON; frame paths are stored relative to it."""
    base = Path(manifest_path).parent

    def relativize(p: str) -> str:
        try:
            return str(Path(p).relative_to(base))
        except ValueError:
            return p

    doc = {
        "driver_id": session.driver_id,
        "fps": session.fps,
        "frames": [[t, relativize(p)] for t, p in session.frame_index],
        "stress_csv": stress_csv,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_corpus(corpus_dir: Path) -> list[DriveSession]:
    """Load every session under corpus_dir (one subdirectory per drive)."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory not found: {corpus_dir}")
    sessions = []
    for manifest in sorted(corpus_dir.glob("*/manifest.json")):
        sessions.append(load_session(manifest))
    if not sessions:
        raise DataError(f"no session manifests under {corpus_dir}")
    return sessions
