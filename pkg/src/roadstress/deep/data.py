"""Frame loading, preprocessing, and clip tensor assembly.

Frames are cached as uint8 arrays (a whole desk-scale corpus fits in
memory); float conversion and normalization happen per batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from ..errors import DataError
from ..splits import ClipSample
from .models import segment_sample


@dataclass(frozen=True)
class PreprocessSpec:
    """Resolution and normalization applied to every frame.

    The conventional 224 center crop suits pretrained backbones; synthetic
    corpora run at their native resolution (set resize/crop to None).
    """

    resize: int | None = None
    crop: int | None = None
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    @classmethod
    def imagenet_224(cls) -> "PreprocessSpec":
        return cls(resize=256, crop=224, mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225))


class FrameStore:
    """Lazy in-memory cache of frame images as (H, W, 3) uint8 arrays."""

    def __init__(self, preprocess: PreprocessSpec | None = None):
        self.preprocess = preprocess or PreprocessSpec()
        self._cache: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        arr = self._cache.get(path)
        if arr is None:
            arr = _load_frame(path, self.preprocess)
            self._cache[path] = arr
        return arr

    def preload(self, paths) -> None:
        for p in paths:
            self.get(p)

    def __len__(self) -> int:
        return len(self._cache)


def _load_frame(path: str, spec: PreprocessSpec) -> np.ndarray:
    try:
        img = Image.open(path).convert("RGB")
    except FileNotFoundError:
        raise DataError(f"frame file not found: {path}") from None
    if spec.resize is not None:
        w, h = img.size
        scale = spec.resize / min(w, h)
        img = img.resize((round(w * scale), round(h * scale)), Image.BILINEAR)
    if spec.crop is not None:
        w, h = img.size
        if w < spec.crop or h < spec.crop:
            raise DataError(f"frame {path} ({w}x{h}) smaller than crop {spec.crop}")
        left = (w - spec.crop) // 2
        top = (h - spec.crop) // 2
        img = img.crop((left, top, left + spec.crop, top + spec.crop))
    return np.asarray(img, dtype=np.uint8)


def _normalize(batch: np.ndarray, spec: PreprocessSpec) -> torch.Tensor:
    # batch: (..., H, W, 3) uint8 -> (..., 3, H, W) float32
    x = torch.from_numpy(batch.astype(np.float32) / 255.0)
    x = x.movedim(-1, -3)
    mean = torch.tensor(spec.mean).view(3, 1, 1)
    std = torch.tensor(spec.std).view(3, 1, 1)
    return (x - mean) / std


def frame_tensor(store: FrameStore, paths: list[str]) -> torch.Tensor:
    """(B, 3, H, W) tensor for a list of frame paths."""
    batch = np.stack([store.get(p) for p in paths])
    return _normalize(batch, store.preprocess)


def clip_frame_paths(clip: ClipSample, num_segments: int) -> list[str]:
    """The sampled frame paths of a clip, one per segment.

    Windows shorter than the segment count (a 1 s window at 2 fps, say)
    fall back to one segment per available frame.
    """
    m = len(clip.frame_paths)
    k = min(num_segments, m)
    return [clip.frame_paths[i] for i in segment_sample(m, k)]


def clip_tensor(store: FrameStore, clips: list[ClipSample], num_segments: int) -> torch.Tensor:
    """(B, K, 3, H, W) tensor of sampled segment frames.

    All clips in one batch must yield the same effective segment count.
    """
    sampled = [clip_frame_paths(c, num_segments) for c in clips]
    sizes = {len(s) for s in sampled}
    if len(sizes) > 1:
        raise DataError(f"mixed segment counts in one batch: {sorted(sizes)}")
    batch = np.stack([np.stack([store.get(p) for p in paths]) for paths in sampled])
    return _normalize(batch, store.preprocess)


def last_frame_tensor(store: FrameStore, clips: list[ClipSample]) -> torch.Tensor:
    """(B, 3, H, W) tensor of each clip's final frame (the labeled one)."""
    return frame_tensor(store, [c.frame_paths[-1] for c in clips])
