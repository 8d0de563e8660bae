"""Frame CNN and temporal-segment consensus models.

A single frame model (backbone + classification head) serves both the
image classifier and the video classifier: the video model splits a clip
into segments of near-equal length, runs the shared-weight frame model on
the first frame of each segment, averages the pre-softmax scores, and
only then applies softmax. Averaging before softmax keeps the consensus
linear in the per-segment scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..errors import ConfigError, DataError

NUM_CLASSES = 3


def segment_sample(frame_count: int, num_segments: int) -> list[int]:
    """First-frame index of each of `num_segments` near-equal segments.

    Segment k covers indices [floor(k*m/K), floor((k+1)*m/K)); its
    representative is the first index.
    """
    if num_segments < 1:
        raise DataError("need at least one segment")
    if frame_count < num_segments:
        raise DataError(f"cannot cut {frame_count} frames into {num_segments} segments")
    return [(k * frame_count) // num_segments for k in range(num_segments)]


@dataclass(frozen=True)
class BackboneSpec:
    """Which convolutional stack to use and how much of it trains.

    weights: identifier or path of pretrained weights; None means random
    initialization (the desk-scale default, nothing to download).
    train_scope: "all" or "last_block" (everything earlier is frozen).
    """

    architecture: str = "tiny"
    weights: str | None = None
    train_scope: str = "all"

    def __post_init__(self):
        if self.architecture not in ("tiny", "vgg16"):
            raise ConfigError(f"unknown backbone architecture {self.architecture!r}")
        if self.train_scope not in ("all", "last_block"):
            raise ConfigError(f"unknown train scope {self.train_scope!r}")


@dataclass(frozen=True)
class ImageHeadSpec:
    """Two 512-unit fully connected layers with 0.5 dropout each, then the
    3-way prediction layer (softmax applied by the callers)."""

    hidden_units: int = 512
    dropout: float = 0.5
    pooled_size: int = 2


@dataclass(frozen=True)
class TSNConfig:
    """Segment count and window length of the video model."""

    num_segments: int = 8
    window_seconds: float = 20.0
    consensus: str = "average"

    def __post_init__(self):
        if self.num_segments < 1 or self.window_seconds < 1:
            raise ConfigError("num_segments and window_seconds must be >= 1")
        if self.consensus != "average":
            raise ConfigError(f"unsupported consensus {self.consensus!r}")


class _TinyBackbone(nn.Module):
    """Three small conv blocks; enough capacity for flat-rendered scenes.

    The entry conv runs at stride 2: full-resolution work dominates CPU
    cost and the synthetic scenes carry no fine detail worth keeping.
    """

    out_channels = 64

    def __init__(self):
        super().__init__()
        self.block1 = nn.Sequential(nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU())
        self.block2 = nn.Sequential(nn.Conv2d(16, 32, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2))
        self.block3 = nn.Sequential(nn.Conv2d(32, 64, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2))

    @property
    def blocks(self) -> list[nn.Module]:
        return [self.block1, self.block2, self.block3]

    @property
    def last_conv(self) -> nn.Module:
        return self.block3[0]

    def forward(self, x):
        return self.block3(self.block2(self.block1(x)))


class _Vgg16Backbone(nn.Module):
    """VGG-16 conv stack; the paper's choice, pretrained weights optional."""

    out_channels = 512
    _LAST_BLOCK_START = 24  # conv5_1 onward

    def __init__(self, weights: str | None):
        super().__init__()
        from torchvision.models import vgg16

        net = vgg16(weights=None)
        if weights is not None:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            net.load_state_dict(state, strict=False)
        self.features = net.features

    @property
    def blocks(self) -> list[nn.Module]:
        return [self.features[: self._LAST_BLOCK_START], self.features[self._LAST_BLOCK_START :]]

    @property
    def last_conv(self) -> nn.Module:
        convs = [m for m in self.features if isinstance(m, nn.Conv2d)]
        return convs[-1]

    def forward(self, x):
        return self.features(x)


class ImageHead(nn.Module):
    def __init__(self, in_channels: int, spec: ImageHeadSpec):
        super().__init__()
        self.pool = nn.AdaptiveAvgPool2d(spec.pooled_size)
        in_features = in_channels * spec.pooled_size * spec.pooled_size
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(in_features, spec.hidden_units),
            nn.ReLU(),
            nn.Dropout(spec.dropout),
            nn.Linear(spec.hidden_units, spec.hidden_units),
            nn.ReLU(),
            nn.Dropout(spec.dropout),
            nn.Linear(spec.hidden_units, NUM_CLASSES),
        )

    def forward(self, x):
        return self.classifier(self.pool(x))


class StressModel(nn.Module):
    """Shared frame model: backbone + head, emitting pre-softmax scores.

    `forward` maps a (B, 3, H, W) frame batch to (B, 3) scores;
    `forward_clips` maps (B, K, 3, H, W) sampled clip frames to (B, 3)
    consensus scores (elementwise average over the K segment scores).
    """

    def __init__(self, backbone_spec: BackboneSpec, head_spec: ImageHeadSpec | None = None):
        super().__init__()
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec or ImageHeadSpec()
        if backbone_spec.architecture == "tiny":
            self.backbone = _TinyBackbone()
        else:
            self.backbone = _Vgg16Backbone(backbone_spec.weights)
        self.head = ImageHead(self.backbone.out_channels, self.head_spec)
        self.apply_freeze()

    @property
    def last_conv_layer(self) -> nn.Module:
        return self.backbone.last_conv

    def frozen_parameters(self):
        return [p for p in self.parameters() if not p.requires_grad]

    def apply_freeze(self) -> None:
        if self.backbone_spec.train_scope == "last_block":
            blocks = self.backbone.blocks
            for block in blocks[:-1]:
                for p in block.parameters():
                    p.requires_grad_(False)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(frames))

    def forward_clips(self, clips: torch.Tensor) -> torch.Tensor:
        if clips.ndim != 5:
            raise DataError(f"clip batch must be (B, K, 3, H, W), got {tuple(clips.shape)}")
        b, k = clips.shape[:2]
        scores = self.forward(clips.reshape(b * k, *clips.shape[2:]))
        return scores.reshape(b, k, NUM_CLASSES).mean(dim=1)


def build_model(backbone_spec: BackboneSpec, head_spec: ImageHeadSpec | None = None, seed: int = 0) -> StressModel:
    torch.manual_seed(seed)
    return StressModel(backbone_spec, head_spec)


@torch.no_grad()
def image_forward(model: StressModel, frames: torch.Tensor) -> torch.Tensor:
    """Per-frame class probabilities (rows sum to 1). Eval mode, dropout off."""
    model.eval()
    if frames.ndim == 3:
        frames = frames[None]
    return torch.softmax(model(frames), dim=1)


@torch.no_grad()
def tsn_forward(model: StressModel, clips: torch.Tensor) -> torch.Tensor:
    """Consensus class probabilities for (B, K, 3, H, W) or (K, 3, H, W) clips."""
    model.eval()
    if clips.ndim == 4:
        clips = clips[None]
    return torch.softmax(model.forward_clips(clips), dim=1)
