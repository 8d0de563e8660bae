import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from roadstress.errors import DataError
from roadstress.ingestion import LabeledFrame, StressClass
from roadstress.splits import (
    ALL_DRIVERS,
    BalancedPartition,
    ClipSample,
    SplitPlan,
    assert_no_driver_leakage,
    balance,
    build_clips,
    lodo_plan,
    save_split_plans,
)

FIXTURE = Path(__file__).parent / "data" / "lodo_plans_expected.json"


def test_lodo_d1_assignment():
    plans = {p.split_id: p for p in lodo_plan(sorted(ALL_DRIVERS))}
    d1 = plans["D_1"]
    assert d1.val_drivers == {"2.Drv2-1", "10.Drv8-1"}
    assert d1.test_driver == "1.Drv1-1"
    assert len(d1.train_drivers) == 6


def test_lodo_d11_assignment():
    plans = {p.split_id: p for p in lodo_plan(sorted(ALL_DRIVERS))}
    d11 = plans["D_11"]
    assert d11.val_drivers == {"3.Drv3-1", "4.Drv4-1"}
    assert d11.test_driver == "11.Drv9-1"


def test_every_driver_tests_exactly_once():
    plans = lodo_plan(sorted(ALL_DRIVERS))
    assert Counter(p.test_driver for p in plans) == Counter({d: 1 for d in ALL_DRIVERS})


def test_lodo_matches_fixture_bytes(tmp_path):
    plans = lodo_plan(sorted(ALL_DRIVERS))
    out = tmp_path / "plans.json"
    save_split_plans(plans, out)
    assert out.read_bytes() == FIXTURE.read_bytes()


def test_lodo_rejects_wrong_corpus():
    with pytest.raises(DataError, match="missing"):
        lodo_plan(["1.Drv1-1"])
    with pytest.raises(DataError, match="extra"):
        lodo_plan(sorted(ALL_DRIVERS) + ["99.DrvX-1"])


def test_split_plan_rejects_overlap():
    with pytest.raises(DataError):
        SplitPlan(
            "D_X",
            frozenset(sorted(ALL_DRIVERS)[:6]),
            frozenset(sorted(ALL_DRIVERS)[5:7]),  # overlaps train
            sorted(ALL_DRIVERS)[8],
        )


# ---------------------------------------------------------------------------
# build_clips


def _labeled_frames(duration_s, fps=2.0, driver="1.Drv1-1", cls=StressClass.LOW):
    n = int(duration_s * fps) + 1
    return [
        LabeledFrame(driver, k / fps, f"{driver}/{k}.png", 0.1, cls)
        for k in range(n)
    ]


def test_clips_100s_window32_stride_half():
    frames = _labeled_frames(100)
    clips = build_clips(frames, window_seconds=32, stride_seconds=0.5)
    # brute force over candidate stride positions
    expected_ends = []
    e = 32.0
    while e <= 100.0 + 1e-9:
        expected_ends.append(round(e, 3))
        e += 0.5
    assert len(clips) == 137
    assert [round(c.end_timestamp, 3) for c in clips] == expected_ends


def test_clips_window_longer_than_drive():
    frames = _labeled_frames(10)
    with pytest.warns(UserWarning, match="shorter"):
        clips = build_clips(frames, window_seconds=32, stride_seconds=0.5)
    assert clips == []


def test_clip_frame_count_and_span():
    frames = _labeled_frames(100)
    clips = build_clips(frames, window_seconds=32, stride_seconds=0.5)
    for clip in clips:
        assert len(clip.frame_paths) == 65  # 32 s at 2 fps, inclusive window
        assert clip.frame_timestamps[0] >= clip.end_timestamp - 32 - 1e-9
        assert clip.frame_timestamps[-1] == clip.end_timestamp


def test_clip_label_is_end_frame_class():
    frames = _labeled_frames(50)
    # flip the class of the last frames
    frames = frames[:-1] + [
        LabeledFrame(frames[-1].driver_id, frames[-1].timestamp_s, frames[-1].frame_path, 0.9, StressClass.HIGH)
    ]
    clips = build_clips(frames, window_seconds=20, stride_seconds=1.0)
    assert clips[-1].label is StressClass.HIGH
    assert clips[0].label is StressClass.LOW


def test_clips_rejects_bad_params():
    with pytest.raises(DataError):
        build_clips(_labeled_frames(10), window_seconds=0, stride_seconds=1)
    with pytest.raises(DataError):
        build_clips(_labeled_frames(10), window_seconds=5, stride_seconds=-1)


# ---------------------------------------------------------------------------
# balance


def _clip(driver, t, cls):
    return ClipSample(driver, t, (f"{t}.png",), (t,), 1.0, cls)


def _partition_samples(counts):
    samples = []
    t = 0.0
    for cls, n in zip(StressClass, counts):
        for _ in range(n):
            samples.append(_clip("1.Drv1-1", t, cls))
            t += 0.5
    return samples


def test_balance_train_upsamples_to_max():
    # 12/33/55 class shares on 100 samples
    samples = _partition_samples((12, 33, 55))
    part = balance(samples, "train", seed=1)
    assert part.class_counts() == {StressClass.LOW: 55, StressClass.MEDIUM: 55, StressClass.HIGH: 55}
    # originals all kept
    originals = set(s.key for s in samples)
    assert originals <= {s.key for s in part.samples}


def test_balance_test_downsamples_to_min_subset():
    samples = _partition_samples((10, 20, 30))
    part = balance(samples, "test", seed=2)
    assert part.class_counts() == {c: 10 for c in StressClass}
    keys = [s.key for s in part.samples]
    assert len(set(keys)) == len(keys)  # no duplication
    assert set(keys) <= {s.key for s in samples}


def test_balance_already_balanced_identity_up_to_order():
    samples = _partition_samples((5, 5, 5))
    for role in ("train", "val", "test"):
        part = balance(samples, role, seed=3)
        assert sorted(s.key for s in part.samples) == sorted(s.key for s in samples)


def test_balance_deterministic():
    samples = _partition_samples((4, 9, 7))
    a = balance(samples, "train", seed=11)
    b = balance(samples, "train", seed=11)
    assert [s.key for s in a.samples] == [s.key for s in b.samples]
    c = balance(samples, "train", seed=12)
    assert [s.key for s in a.samples] != [s.key for s in c.samples]


def test_balance_rejects_missing_class():
    samples = _partition_samples((4, 9, 0))
    with pytest.raises(DataError, match="high"):
        balance(samples, "test", seed=0)


def test_random_baseline_on_balanced_partition(rng):
    samples = _partition_samples((150, 100, 210))
    part = balance(samples, "test", seed=4)
    labels = np.array([int(s.label) for s in part.samples])
    assert len(labels) >= 300
    accs = []
    for seed in range(5):
        guesser = np.random.default_rng(seed)
        accs.append(float((guesser.integers(0, 3, size=len(labels)) == labels).mean()))
    assert abs(np.mean(accs) - 1 / 3) < 0.05


def test_no_driver_leakage_detection():
    plans = {p.split_id: p for p in lodo_plan(sorted(ALL_DRIVERS))}
    plan = plans["D_1"]
    good = {
        "test": BalancedPartition("test", (_clip("1.Drv1-1", 0.0, StressClass.LOW),), 0),
        "val": BalancedPartition("val", (_clip("2.Drv2-1", 0.0, StressClass.LOW),), 0),
    }
    assert_no_driver_leakage(plan, good)
    bad = {
        "train": BalancedPartition("train", (_clip("1.Drv1-1", 0.0, StressClass.LOW),), 0),
    }
    with pytest.raises(DataError, match="assigned"):
        assert_no_driver_leakage(plan, bad)
