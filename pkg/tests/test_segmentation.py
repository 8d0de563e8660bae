from fractions import Fraction

import numpy as np
import pytest
from PIL import Image

from roadstress.errors import DataError
from roadstress.ingestion import LabeledFrame, StressClass
from roadstress.segmentation import (
    CachedMaskSegmenter,
    FEATURE_COLUMNS,
    SegmentationMask,
    SyntheticSegmenter,
    category_palette,
    extract_features,
    make_segmenter,
    mask_filename,
    occupancy_vector,
    read_mask_png,
    write_mask_png,
)
from roadstress import synthgen


def test_single_class_mask():
    mask = SegmentationMask(np.full((2, 2), 7, dtype=np.uint8))
    occ = occupancy_vector(mask)
    assert occ.values[7] == 1.0
    assert occ.values.sum() == 1.0


def test_half_half_mask():
    mask = SegmentationMask(np.array([[0, 0], [1, 1]], dtype=np.uint8))
    occ = occupancy_vector(mask)
    assert occ.values[0] == 0.5
    assert occ.values[1] == 0.5


def test_void_counts_in_denominator_only():
    mask = SegmentationMask(np.array([[3, 255], [255, 255]], dtype=np.uint8))
    occ = occupancy_vector(mask)
    assert occ.values[3] == 0.25
    assert occ.void_fraction == 0.75


def test_occupancy_matches_bruteforce_counting(rng):
    # 200 random 8x8 masks vs per-pixel loop, exact
    for _ in range(200):
        labels = rng.integers(0, 66, size=(8, 8)).astype(np.uint8)
        labels[rng.random(size=(8, 8)) < 0.1] = 255
        occ = occupancy_vector(SegmentationMask(labels))
        for cat in range(66):
            n = 0
            for r in range(8):
                for c in range(8):
                    if labels[r, c] == cat:
                        n += 1
            assert occ.counts[cat] == n
            assert occ.values[cat] == n / 64


def test_occupancy_sum_identity_is_exact(rng):
    for _ in range(50):
        labels = rng.integers(0, 66, size=(7, 5)).astype(np.uint8)
        labels[rng.random(size=(7, 5)) < 0.2] = 255
        occ = occupancy_vector(SegmentationMask(labels))
        total = sum(Fraction(int(c), occ.total_pixels) for c in occ.counts)
        total += Fraction(occ.void_count, occ.total_pixels)
        assert total == 1


def test_occupancy_permutation_equivariant(rng):
    labels = rng.integers(0, 66, size=(16, 16)).astype(np.uint8)
    perm = rng.permutation(66).astype(np.uint8)
    relabeled = perm[labels]
    occ = occupancy_vector(SegmentationMask(labels))
    occ_p = occupancy_vector(SegmentationMask(relabeled))
    assert np.array_equal(occ_p.values[perm], occ.values)


def test_mask_rejects_invalid_index():
    with pytest.raises(DataError, match="80"):
        SegmentationMask(np.full((2, 2), 80, dtype=np.uint8))


def test_mask_rejects_empty():
    with pytest.raises(DataError):
        SegmentationMask(np.zeros((0, 4), dtype=np.uint8))


def test_palette_colors_unique():
    palette = category_palette()
    assert len({tuple(c) for c in palette}) == 66


# ---------------------------------------------------------------------------
# adapters


def test_cached_adapter_roundtrip(tmp_path, rng):
    labels = rng.integers(0, 66, size=(12, 10)).astype(np.uint8)
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    write_mask_png(mask_dir / mask_filename(3.5), SegmentationMask(labels))
    adapter = CachedMaskSegmenter(mask_dir)
    got = adapter.segment("missing-frame.png", 3.5)
    assert np.array_equal(got.labels, labels)


def test_cached_adapter_rejects_invalid_index(tmp_path):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    Image.fromarray(np.full((4, 4), 80, dtype=np.uint8), mode="L").save(mask_dir / mask_filename(1.0))
    with pytest.raises(DataError, match="80"):
        CachedMaskSegmenter(mask_dir).segment("x.png", 1.0)


def test_cached_adapter_rejects_dimension_mismatch(tmp_path):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    write_mask_png(mask_dir / mask_filename(1.0), SegmentationMask(np.zeros((4, 4), dtype=np.uint8)))
    frame = tmp_path / "frame.png"
    Image.new("RGB", (8, 8)).save(frame)
    with pytest.raises(DataError, match="does not match"):
        CachedMaskSegmenter(mask_dir).segment(str(frame), 1.0)


def test_synthetic_adapter_inverts_generator(tmp_path):
    regimes = synthgen.default_regimes()
    plan = synthgen.plan_session("1.Drv1-1", 3, [("city", 5)], regimes, fps=2.0, image_size=32)
    synthgen.generate_session(plan, tmp_path / "s")
    adapter = SyntheticSegmenter()
    for fp in plan.frames[:3]:
        frame_path = tmp_path / "s" / "frames" / mask_filename(fp.timestamp_s)
        got = adapter.segment(str(frame_path), fp.timestamp_s)
        stored = read_mask_png(tmp_path / "s" / "masks" / mask_filename(fp.timestamp_s))
        assert np.array_equal(got.labels, stored.labels)


def test_registry():
    assert isinstance(make_segmenter("synthetic"), SyntheticSegmenter)
    with pytest.raises(DataError):
        make_segmenter("neural-net-of-the-week")


# ---------------------------------------------------------------------------
# feature extraction


def _frame(driver, t, path, cls=StressClass.LOW):
    return LabeledFrame(driver, t, path, 0.1, cls)


def test_extract_features_composition(tmp_path, rng):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    frames = []
    expected = []
    for i, t in enumerate([0.0, 0.5, 1.0]):
        labels = rng.integers(0, 66, size=(8, 8)).astype(np.uint8)
        write_mask_png(mask_dir / mask_filename(t), SegmentationMask(labels))
        frames.append(_frame("d", t, f"frame{i}.png"))
        expected.append(occupancy_vector(SegmentationMask(labels)).values)
    table = extract_features(frames, CachedMaskSegmenter(mask_dir))
    assert len(table) == 3
    assert np.allclose(table[FEATURE_COLUMNS].to_numpy(), np.array(expected))
    assert list(table["driver_id"]) == ["d", "d", "d"]


def test_extract_features_empty():
    table = extract_features([], SyntheticSegmenter())
    assert len(table) == 0
    assert list(table.columns)[:3] == ["driver_id", "timestamp_s", "stress_class"]


def test_extract_features_missing_mask_names_frame(tmp_path):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    with pytest.raises(DataError, match="d@1.000"):
        extract_features([_frame("d", 1.0, "f.png")], CachedMaskSegmenter(mask_dir))


def test_extract_features_deterministic(tmp_path, rng):
    mask_dir = tmp_path / "masks"
    mask_dir.mkdir()
    labels = rng.integers(0, 66, size=(8, 8)).astype(np.uint8)
    write_mask_png(mask_dir / mask_filename(0.0), SegmentationMask(labels))
    frames = [_frame("d", 0.0, "f.png")]
    t1 = extract_features(frames, CachedMaskSegmenter(mask_dir))
    t2 = extract_features(frames, CachedMaskSegmenter(mask_dir))
    assert t1.equals(t2)


def test_extract_matches_generator_declared_composition(tmp_path):
    regimes = synthgen.default_regimes()
    plan = synthgen.plan_session("1.Drv1-1", 11, [("highway", 10)], regimes, fps=2.0, image_size=32)
    synthgen.generate_session(plan, tmp_path / "s")
    frames = [
        _frame("1.Drv1-1", fp.timestamp_s, str(tmp_path / "s" / "frames" / mask_filename(fp.timestamp_s)))
        for fp in plan.frames
    ]
    table = extract_features(frames, SyntheticSegmenter())
    got = table[FEATURE_COLUMNS].to_numpy()
    declared = np.stack([fp.composition for fp in plan.frames])
    assert np.abs(got - declared).max() <= 1 / (32 * 32)
