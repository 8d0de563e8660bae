"""Deterministic synthetic drive generator.

Stands in for the (private) real dataset in every end-to-end test. Each
synthetic regime (parking/Z-zone, highway, city) maps to one stress class
and owns a category-composition distribution; frames are flat-colored
horizontal bands whose segmentation masks follow that composition, so the
trivial palette segmenter is exact and every pipeline stage has a known
ground truth.

The stress label lags the visual scene: the continuous score at time t is
the band value of the regime that was on screen at time t - lag. Temporal
models that see at least `lag` seconds of history can therefore beat any
single-frame model, which is the mechanism behind the window-sweep checks.

Per-frame compositions are drawn uniformly from a small set of jittered
variants of the regime composition, built as symmetric pairs so their mean
is exactly the declared composition. A finite variant set keeps the best
achievable classification accuracy computable by exhaustive enumeration
(see `bayes_accuracy`).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .ingestion import (
    DriveSession,
    StressClass,
    StressSignal,
    save_session_manifest,
    write_stress_csv,
)
from .segmentation import SegmentationMask, category_palette, mask_filename, write_mask_png
from .taxonomy import DEFAULT_TAXONOMY, NUM_CATEGORIES

# Continuous-score band centers per class; +-noise stays inside the class
# bounds both raw and after per-driver min-max normalization (the low band
# keeps the session minimum, the high band the maximum).
CLASS_BAND_CENTERS = {
    StressClass.LOW: 0.2,
    StressClass.MEDIUM: 0.575,
    StressClass.HIGH: 0.875,
}
DEFAULT_STRESS_NOISE = 0.05

DEFAULT_JITTER = 0.25
DEFAULT_NUM_VARIANTS = 6

# The nine first-drive participant codes of the source dataset; synthetic
# corpora reuse them so the leave-one-driver-out split plans apply as-is.
CANONICAL_DRIVERS = (
    "1.Drv1-1",
    "2.Drv2-1",
    "3.Drv3-1",
    "4.Drv4-1",
    "5.Drv5-1",
    "7.Drv6-1",
    "9.Drv7-1",
    "10.Drv8-1",
    "11.Drv9-1",
)

_SKY = DEFAULT_TAXONOMY.index_of("sky")
_ROAD = DEFAULT_TAXONOMY.index_of("road")
_BUILDING = DEFAULT_TAXONOMY.index_of("building")

# Background shared by all regimes; only the signature categories carry
# class information.
_BACKGROUND = {_SKY: 0.22, _ROAD: 0.25, _BUILDING: 0.15}


def _composition(signature: dict[str, float]) -> np.ndarray:
    comp = np.zeros(NUM_CATEGORIES)
    for idx, frac in _BACKGROUND.items():
        comp[idx] = frac
    for name, frac in signature.items():
        comp[DEFAULT_TAXONOMY.index_of(name)] = frac
    if not np.isclose(comp.sum(), 1.0):
        raise DataError(f"regime composition sums to {comp.sum():.4f}, expected 1")
    return comp


@dataclass(frozen=True)
class SyntheticRegime:
    """One road context: a stress class plus a scene composition.

    `composition` holds 66 fractions summing to 1. `lag_s` is the delay
    between the scene changing and the stress label following it.
    Explicit `variants` override the generated jitter set (useful for
    engineered-overlap tests); otherwise variants derive deterministically
    from the composition itself.
    """

    name: str
    stress_class: StressClass
    composition: np.ndarray
    lag_s: float = 10.0
    jitter: float = DEFAULT_JITTER
    num_variants: int = DEFAULT_NUM_VARIANTS
    variants: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        comp = np.asarray(self.composition, dtype=float)
        object.__setattr__(self, "composition", comp)
        if comp.shape != (NUM_CATEGORIES,):
            raise DataError(f"composition must have {NUM_CATEGORIES} entries")
        if np.any(comp < 0) or not np.isclose(comp.sum(), 1.0, atol=1e-9):
            raise DataError("composition must be a probability vector over the taxonomy")

    def variant_set(self) -> np.ndarray:
        """(V, 66) array of per-frame composition variants, mean == composition."""
        if self.variants is not None:
            return np.asarray(self.variants, dtype=float)
        return _jitter_variants(self.composition, self.jitter, self.num_variants)


def _jitter_variants(composition: np.ndarray, jitter: float, count: int) -> np.ndarray:
    """Symmetric perturbation pairs of a composition.

    Seeded from the composition values (not the regime name) so identical
    compositions always share identical variant sets.
    """
    if count < 1:
        raise DataError("need at least one composition variant")
    key = hashlib.sha256(
        np.round(composition, 12).tobytes() + f"|{jitter:.9f}|{count}".encode()
    ).digest()
    rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
    support = composition > 0
    variants = []
    for _ in range(count // 2):
        raw = np.zeros(NUM_CATEGORIES)
        raw[support] = rng.standard_normal(int(support.sum()))
        raw[support] -= raw[support].mean()  # zero-sum keeps variants normalized
        ratio = np.max(np.abs(raw[support]) / composition[support])
        delta = raw * (jitter / ratio) if ratio > 0 else raw
        variants.append(composition + delta)
        variants.append(composition - delta)
    if count % 2:
        variants.append(composition.copy())
    return np.array(variants)


def default_regimes(lag_s: float = 10.0, jitter: float = DEFAULT_JITTER) -> dict[str, SyntheticRegime]:
    """The three standard regimes with paper-style signature objects."""
    make = lambda name, cls, sig: SyntheticRegime(
        name=name, stress_class=cls, composition=_composition(sig), lag_s=lag_s, jitter=jitter
    )
    return {
        "parking_z": make(
            "parking_z",
            StressClass.LOW,
            {"parking": 0.14, "fence": 0.10, "crosswalk plain": 0.08, "trash can": 0.06},
        ),
        "highway": make(
            "highway",
            StressClass.MEDIUM,
            {"tunnel": 0.10, "guard rail": 0.10, "bridge": 0.08, "terrain": 0.10},
        ),
        "city": make(
            "city",
            StressClass.HIGH,
            {"motorcycle": 0.10, "bicycle": 0.08, "banner": 0.10, "truck": 0.10},
        ),
    }


def signature_categories(regime: SyntheticRegime) -> list[int]:
    """Indices whose occupancy differs from the shared background."""
    return [i for i in np.flatnonzero(regime.composition) if i not in _BACKGROUND]


# ---------------------------------------------------------------------------
# Session planning and rendering.


@dataclass(frozen=True)
class FramePlan:
    timestamp_s: float
    regime: str
    variant_idx: int
    composition: np.ndarray


@dataclass(frozen=True)
class SessionPlan:
    """Everything a session's files will contain, before any rendering."""

    driver_id: str
    fps: float
    image_size: int
    frames: tuple[FramePlan, ...]
    stress: StressSignal
    # per-frame true class of the (lagged) label at that frame's timestamp
    true_classes: tuple[StressClass, ...] = field(repr=False, default=())


def _regime_at(schedule: list[tuple[str, float]], t: float) -> str:
    elapsed = 0.0
    for name, dur in schedule:
        elapsed += dur
        if t < elapsed:
            return name
    return schedule[-1][0]


def plan_session(
    driver_id: str,
    seed: int,
    schedule: list[tuple[str, float]],
    regimes: dict[str, SyntheticRegime] | None = None,
    fps: float = 2.0,
    image_size: int = 64,
    stress_hz: float = 2.5,
    stress_noise: float = DEFAULT_STRESS_NOISE,
) -> SessionPlan:
    """Plan one synthetic drive; pure function of its arguments."""
    if not schedule:
        raise DataError("regime schedule is empty")
    regimes = regimes if regimes is not None else default_regimes()
    unknown = [name for name, _ in schedule if name not in regimes]
    if unknown:
        raise DataError(f"schedule references unknown regimes: {unknown}")
    lags = {regimes[name].lag_s for name, _ in schedule}
    if len(lags) > 1:
        raise DataError("all regimes in one schedule must share the same lag")
    lag = lags.pop()
    duration = sum(d for _, d in schedule)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_hash(driver_id)]))

    variant_sets = {name: regimes[name].variant_set() for name, _ in schedule}
    frames = []
    n_frames = int(round(duration * fps)) + 1
    for k in range(n_frames):
        t = k / fps
        name = _regime_at(schedule, t)
        vs = variant_sets[name]
        idx = int(rng.integers(len(vs)))
        frames.append(FramePlan(t, name, idx, vs[idx]))

    n_stress = int(np.floor(duration * stress_hz)) + 1
    st = np.arange(n_stress) / stress_hz
    lagged = [regimes[_regime_at(schedule, max(0.0, t - lag))].stress_class for t in st]
    centers = np.array([CLASS_BAND_CENTERS[c] for c in lagged])
    values = centers + rng.uniform(-stress_noise, stress_noise, size=n_stress)
    stress = StressSignal(st, np.clip(values, 0.0, 1.0))

    true_classes = tuple(
        regimes[_regime_at(schedule, max(0.0, f.timestamp_s - lag))].stress_class for f in frames
    )
    return SessionPlan(driver_id, fps, image_size, tuple(frames), stress, true_classes)


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def _pixel_counts(composition: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of composition * total to integer counts."""
    ideal = composition * total
    counts = np.floor(ideal).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(ideal - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def render_mask(composition: np.ndarray, image_size: int) -> SegmentationMask:
    """Fill the image with horizontal bands: sky first, road last."""
    total = image_size * image_size
    counts = _pixel_counts(composition, total)
    present = [int(i) for i in np.flatnonzero(counts)]
    order = []
    if _SKY in present:
        order.append(_SKY)
    order += [i for i in sorted(present) if i not in (_SKY, _ROAD)]
    if _ROAD in present:
        order.append(_ROAD)
    flat = np.empty(total, dtype=np.uint8)
    pos = 0
    for idx in order:
        n = int(counts[idx])
        flat[pos : pos + n] = idx
        pos += n
    return SegmentationMask(flat.reshape(image_size, image_size))


_PALETTE = category_palette()


def render_frame(mask: SegmentationMask) -> np.ndarray:
    """(H, W, 3) uint8 image: each category painted with its palette color."""
    return _PALETTE[mask.labels]


def generate_session(plan: SessionPlan, out_dir: Path) -> DriveSession:
    """Materialize a planned session: frames/, masks/, stress.csv, manifest.json."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    masks_dir = out_dir / "masks"
    frames_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)

    frame_index = []
    for fp in plan.frames:
        mask = render_mask(fp.composition, plan.image_size)
        name = mask_filename(fp.timestamp_s)
        Image.fromarray(render_frame(mask), mode="RGB").save(frames_dir / name, format="PNG")
        write_mask_png(masks_dir / name, mask)
        frame_index.append((fp.timestamp_s, str(frames_dir / name)))

    write_stress_csv(out_dir / "stress.csv", plan.stress)
    session = DriveSession(
        driver_id=plan.driver_id,
        frame_index=tuple(frame_index),
        stress=plan.stress,
        fps=plan.fps,
    )
    save_session_manifest(session, out_dir / "manifest.json", "stress.csv")
    return session


def rotated_schedule(driver_index: int, segment_s: float, base=("parking_z", "highway", "city")) -> list[tuple[str, float]]:
    """Four segments cycling the regimes, starting point rotated per driver."""
    k = driver_index % len(base)
    order = list(base[k:]) + list(base[:k])
    order.append(order[0])
    return [(name, segment_s) for name in order]


def make_corpus(
    out_dir: Path,
    seed: int,
    segment_s: float = 112.5,
    drivers: tuple[str, ...] = CANONICAL_DRIVERS,
    regimes: dict[str, SyntheticRegime] | None = None,
    fps: float = 2.0,
    image_size: int = 64,
    lag_s: float = 10.0,
    jitter: float = DEFAULT_JITTER,
) -> list[DriveSession]:
    """Generate one session per driver, each with a rotated regime schedule."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    regimes = regimes if regimes is not None else default_regimes(lag_s=lag_s, jitter=jitter)
    sessions = []
    meta_sessions = []
    for i, driver in enumerate(drivers):
        schedule = rotated_schedule(i, segment_s)
        plan = plan_session(driver, seed, schedule, regimes, fps=fps, image_size=image_size)
        sessions.append(generate_session(plan, out_dir / driver))
        meta_sessions.append({"driver_id": driver, "schedule": schedule})
    meta = {
        "seed": seed,
        "fps": fps,
        "image_size": image_size,
        "segment_s": segment_s,
        "lag_s": lag_s,
        "jitter": jitter,
        "regimes": {
            name: {
                "stress_class": r.stress_class.label,
                "composition": r.composition.tolist(),
                "lag_s": r.lag_s,
            }
            for name, r in regimes.items()
        },
        "sessions": meta_sessions,
    }
    with open(out_dir / "corpus.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return sessions


# ---------------------------------------------------------------------------
# Analytic yardstick.


def bayes_accuracy(regimes: list[SyntheticRegime] | dict[str, SyntheticRegime]) -> float:
    """Best achievable accuracy for regime-from-occupancy classification.

    The per-frame composition is drawn uniformly from each regime's finite
    variant set (uniform regime priors), so the optimum is an exhaustive
    enumeration over the distinct compositions: pick the regime with the
    highest likelihood at each observable composition.
    """
    if isinstance(regimes, dict):
        regimes = list(regimes.values())
    if not regimes:
        raise DataError("no regimes given")
    likelihood: dict[tuple, np.ndarray] = {}
    for p, regime in enumerate(regimes):
        vs = regime.variant_set()
        for v in vs:
            key = tuple(np.round(v, 12))
            likelihood.setdefault(key, np.zeros(len(regimes)))[p] += 1.0 / len(vs)
    prior = 1.0 / len(regimes)
    return min(1.0, float(sum(prior * probs.max() for probs in likelihood.values())))


def sample_occupancy(regime: SyntheticRegime, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Draw n occupancy vectors the way frames of this regime would produce."""
    vs = regime.variant_set()
    idx = rng.integers(len(vs), size=n)
    return vs[idx]
