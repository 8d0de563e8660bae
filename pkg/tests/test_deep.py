import hashlib

import numpy as np
import pytest
import torch
from torch import nn

from roadstress.errors import DataError, TrainingError
from roadstress.deep import (
    BackboneSpec,
    FrameStore,
    PreprocessSpec,
    TSNConfig,
    TrainingConfig,
    build_model,
    evaluate_model,
    image_forward,
    load_checkpoint,
    save_checkpoint,
    segment_sample,
    train_model,
    tsn_forward,
    window_sweep,
)
from roadstress.deep.models import ImageHeadSpec, StressModel
from roadstress.ingestion import StressClass
from roadstress.splits import BalancedPartition, ClipSample
from roadstress import synthgen
from roadstress.segmentation import mask_filename


# ---------------------------------------------------------------------------
# segment sampling


def test_segment_sample_even_division():
    assert segment_sample(40, 8) == [0, 5, 10, 15, 20, 25, 30, 35]


def test_segment_sample_one_frame_per_segment():
    assert segment_sample(8, 8) == list(range(8))


def test_segment_sample_uneven():
    assert segment_sample(12, 8) == [0, 1, 3, 4, 6, 7, 9, 10]


def test_segment_sample_rejects_too_few_frames():
    with pytest.raises(DataError):
        segment_sample(7, 8)


def test_segment_sample_matches_floor_formula_bruteforce():
    # independent evaluation of the floor partition using exact fractions:
    # segment s covers [floor(s*m/K), floor((s+1)*m/K)), take its first index
    import math
    from fractions import Fraction

    for m in range(8, 65):
        for k in range(1, 9):
            got = segment_sample(m, k)
            expected = []
            for seg in range(k):
                lo = math.floor(Fraction(seg * m, k))
                hi = math.floor(Fraction((seg + 1) * m, k))
                members = [i for i in range(m) if lo <= i < hi]
                assert members, (m, k, seg)
                expected.append(members[0])
            assert got == expected, (m, k)


# ---------------------------------------------------------------------------
# forwards


@pytest.fixture(scope="module")
def tiny_model():
    return build_model(BackboneSpec(), seed=0)


def test_image_forward_simplex(tiny_model):
    x = torch.randn(5, 3, 32, 32)
    probs = image_forward(tiny_model, x)
    assert probs.shape == (5, 3)
    assert torch.allclose(probs.sum(dim=1), torch.ones(5), atol=1e-6)
    assert (probs >= 0).all()


def test_image_forward_eval_deterministic(tiny_model):
    x = torch.randn(2, 3, 32, 32)
    a = image_forward(tiny_model, x)
    b = image_forward(tiny_model, x)
    assert torch.equal(a, b)  # bit-stable: dropout off in eval mode


def test_tsn_equals_image_on_identical_frames(tiny_model):
    frame = torch.randn(3, 32, 32)
    clip = frame.expand(8, -1, -1, -1).clone()
    single = image_forward(tiny_model, frame)
    consensus = tsn_forward(tiny_model, clip)
    assert torch.allclose(single, consensus, atol=1e-6)


class _StubModel(nn.Module):
    """Maps each frame to a fixed pre-softmax row (keyed by frame index)."""

    def __init__(self, rows):
        super().__init__()
        self.rows = torch.tensor(rows, dtype=torch.float32)

    def forward(self, x):
        idx = x[:, 0, 0, 0].long()
        return self.rows[idx]

    def forward_clips(self, clips):
        b, k = clips.shape[:2]
        scores = self.forward(clips.reshape(b * k, *clips.shape[2:]))
        return scores.reshape(b, k, -1).mean(dim=1)


def test_consensus_is_elementwise_average():
    stub = _StubModel([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    clip = torch.zeros(2, 3, 4, 4)
    clip[1, 0, 0, 0] = 1.0
    consensus = stub.forward_clips(clip[None])[0]
    assert torch.allclose(consensus, torch.tensor([0.5, 0.5, 0.0]))


def test_tsn_matches_per_frame_loop_oracle(tiny_model):
    clip = torch.randn(8, 3, 32, 32)
    consensus = tsn_forward(tiny_model, clip)[0]
    with torch.no_grad():
        tiny_model.eval()
        per_frame = torch.stack([tiny_model(f[None])[0] for f in clip])
    expected = torch.softmax(per_frame.mean(dim=0), dim=0)
    assert torch.allclose(consensus, expected, atol=1e-6)


def test_consensus_permutation_invariant(tiny_model):
    clip = torch.randn(8, 3, 32, 32)
    base = tsn_forward(tiny_model, clip)
    perm = torch.randperm(8)
    assert torch.allclose(base, tsn_forward(tiny_model, clip[perm]), atol=1e-6)


def test_forward_clips_shape_validation(tiny_model):
    with pytest.raises(DataError):
        tiny_model.forward_clips(torch.randn(8, 3, 32, 32))


# ---------------------------------------------------------------------------
# training on synthetic frames


@pytest.fixture(scope="module")
def mini_session(tmp_path_factory):
    """One 80 s drive (no lag): 161 frames at 2 fps, 3 regimes."""
    out = tmp_path_factory.mktemp("mini_session")
    regimes = synthgen.default_regimes(lag_s=0.0)
    plan = synthgen.plan_session(
        "1.Drv1-1",
        21,
        [("parking_z", 26), ("highway", 26), ("city", 28)],
        regimes,
        fps=2.0,
        image_size=32,
    )
    session = synthgen.generate_session(plan, out)
    return plan, session, out


def _clips_from_plan(plan, out, window_frames=1):
    clips = []
    for fp, cls in zip(plan.frames, plan.true_classes):
        path = str(out / "frames" / mask_filename(fp.timestamp_s))
        clips.append(
            ClipSample("1.Drv1-1", fp.timestamp_s, (path,) * window_frames, (fp.timestamp_s,) * window_frames, 1.0, cls)
        )
    return clips


def test_memorization_of_twelve_frames(mini_session):
    plan, _, out = mini_session
    clips = _clips_from_plan(plan, out)
    by_class = {c: [x for x in clips if x.label is c] for c in StressClass}
    twelve = [x for c in StressClass for x in by_class[c][:4]]
    store = FrameStore()
    parts = {
        "train": BalancedPartition("train", tuple(twelve), 0),
        "val": BalancedPartition("val", tuple(twelve), 0),
    }
    trained = train_model(
        "image",
        parts,
        store,
        train_config=TrainingConfig(learning_rate=2e-3, batch_size=4, max_epochs=40, patience=40, seed=0),
    )
    acc, _, _ = evaluate_model(trained.model, "image", twelve, store, 8)
    assert acc == 1.0


def test_frozen_prefix_checksum_unchanged(mini_session):
    plan, _, out = mini_session
    clips = _clips_from_plan(plan, out)[:24]
    store = FrameStore()
    parts = {
        "train": BalancedPartition("train", tuple(clips), 0),
        "val": BalancedPartition("val", tuple(clips), 0),
    }

    def checksum(params):
        h = hashlib.sha256()
        for p in params:
            h.update(p.detach().numpy().tobytes())
        return h.hexdigest()

    spec = BackboneSpec(train_scope="last_block")
    torch.manual_seed(3)
    trained = train_model(
        "image",
        parts,
        store,
        backbone_spec=spec,
        train_config=TrainingConfig(learning_rate=1e-3, batch_size=8, max_epochs=2, patience=5, seed=3),
    )
    model = trained.model
    frozen_after = checksum(model.frozen_parameters())
    reference = build_model(spec, seed=3)
    frozen_before = checksum(reference.frozen_parameters())
    assert frozen_after == frozen_before
    # trainable parameters did move
    assert checksum([p for p in model.parameters() if p.requires_grad]) != checksum(
        [p for p in reference.parameters() if p.requires_grad]
    )


def test_training_rejects_empty_partition():
    with pytest.raises(TrainingError):
        train_model("image", {"train": BalancedPartition("train", (), 0)}, FrameStore())


def test_training_rejects_unknown_kind():
    from roadstress.errors import ConfigError

    with pytest.raises(ConfigError):
        train_model("late-fusion", {}, FrameStore())


def test_shared_weights_one_parameter_set(tiny_model):
    # the consensus applies one shared frame model: no per-segment copies
    clip = torch.randn(4, 3, 32, 32)
    before = [p.clone() for p in tiny_model.parameters()]
    out = tiny_model.forward_clips(clip[None]).sum()
    out.backward()
    # every trainable parameter receives gradient from all segments at once
    grads = [p.grad for p in tiny_model.parameters() if p.requires_grad]
    assert all(g is not None for g in grads)
    tiny_model.zero_grad(set_to_none=True)
    for p, b in zip(tiny_model.parameters(), before):
        assert torch.equal(p, b)


# ---------------------------------------------------------------------------
# gradient check of the classification head


def test_head_gradients_match_central_differences():
    torch.manual_seed(0)
    head = StressModel(BackboneSpec(), ImageHeadSpec(hidden_units=512)).head.double()
    head.eval()  # dropout off: deterministic scalar field
    loss_fn = torch.nn.CrossEntropyLoss()
    params = [p for p in head.parameters()]
    rng = np.random.default_rng(1)
    for probe in range(20):
        x = torch.from_numpy(rng.standard_normal((2, 64, 2, 2)))
        y = torch.from_numpy(rng.integers(0, 3, size=2))
        head.zero_grad(set_to_none=True)
        loss_fn(head(x), y).backward()
        analytic = torch.cat([p.grad.flatten() for p in params])
        direction = torch.from_numpy(rng.standard_normal(analytic.shape[0]))
        direction /= direction.norm()
        eps = 1e-6
        offset = 0
        with torch.no_grad():
            for p in params:
                n = p.numel()
                p.add_(eps * direction[offset : offset + n].view_as(p))
                offset += n
            loss_plus = loss_fn(head(x), y).item()
            offset = 0
            for p in params:
                n = p.numel()
                p.add_(-2 * eps * direction[offset : offset + n].view_as(p))
                offset += n
            loss_minus = loss_fn(head(x), y).item()
            offset = 0
            for p in params:
                n = p.numel()
                p.add_(eps * direction[offset : offset + n].view_as(p))
                offset += n
        numeric = (loss_plus - loss_minus) / (2 * eps)
        directional = float(analytic @ direction)
        rel_err = abs(numeric - directional) / max(abs(numeric), abs(directional), 1e-12)
        assert rel_err < 1e-4, f"probe {probe}: rel err {rel_err}"


# ---------------------------------------------------------------------------
# sweep plumbing and checkpoints


def test_window_sweep_records_failures_and_continues(mini_session):
    plan, _, out = mini_session
    clips = _clips_from_plan(plan, out)[:24]
    store = FrameStore()
    parts = {
        "train": BalancedPartition("train", tuple(clips), 0),
        "val": BalancedPartition("val", tuple(clips), 0),
    }

    def make_partitions(n):
        if n > 10:
            raise DataError(f"window {n} longer than the drive")
        return parts

    rows = window_sweep(
        make_partitions,
        lambda n: clips,
        [1, 99],
        store,
        kind="image",
        train_config=TrainingConfig(learning_rate=1e-3, batch_size=8, max_epochs=1, patience=2, seed=0),
    )
    assert len(rows) == 2
    assert rows[0]["accuracy"] is not None and rows[0]["error"] is None
    assert rows[1]["accuracy"] is None and "longer" in rows[1]["error"]


def test_checkpoint_roundtrip(tmp_path, mini_session):
    plan, _, out = mini_session
    clips = _clips_from_plan(plan, out)[:12]
    store = FrameStore()
    parts = {
        "train": BalancedPartition("train", tuple(clips), 0),
        "val": BalancedPartition("val", tuple(clips), 0),
    }
    trained = train_model(
        "image",
        parts,
        store,
        train_config=TrainingConfig(learning_rate=1e-3, batch_size=4, max_epochs=1, patience=2, seed=0),
    )
    path = tmp_path / "model.pt"
    save_checkpoint(path, trained, meta={"config_hash": "abc", "seed": 0})
    loaded = load_checkpoint(path)
    x = torch.randn(2, 3, 32, 32)
    assert torch.equal(image_forward(loaded.model, x), image_forward(trained.model, x))
    assert loaded.kind == "image"
    assert [r["accuracy"] for r in loaded.log] == [r["accuracy"] for r in trained.log]


def test_batches_never_mix_segment_counts(mini_session):
    plan, _, out = mini_session
    short = _clips_from_plan(plan, out, window_frames=2)[:6]
    long = _clips_from_plan(plan, out, window_frames=8)[6:18]
    store = FrameStore()
    acc, y_true, y_pred = evaluate_model(
        build_model(BackboneSpec(), seed=0), "tsn", short + long, store, num_segments=8
    )
    assert len(y_true) == 18  # mixed window lengths evaluated without error
