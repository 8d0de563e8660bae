"""GradCAM heat maps for the frame and video models.

The map of a target class is the rectified, gradient-weighted sum of the
last convolutional feature maps, bilinearly upsampled to the input frame
and scaled so its maximum is 1 (an identically-zero map passes through
unscaled). For a clip, one map per sampled segment frame is computed
against the consensus score of the target class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn
from torch.nn import functional as F

from .errors import DataError


@dataclass(frozen=True)
class CamMap:
    """Heat map over one input frame.

    values: (H, W) floats in [0, 1], max 1 unless the raw map is all zero.
    raw: the pre-normalization map (useful for linearity checks).
    """

    values: np.ndarray
    raw: np.ndarray
    target_class: int
    layer_name: str

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class _LayerProbe:
    """Collects activations and their gradients at one module's output."""

    def __init__(self, layer: nn.Module):
        self.activations = None
        self._h1 = layer.register_forward_hook(self._on_forward)

    def _on_forward(self, module, inputs, output):
        self.activations = output
        output.retain_grad()

    @property
    def gradients(self):
        return None if self.activations is None else self.activations.grad

    def close(self):
        self._h1.remove()


def _resolve_layer(model: nn.Module, layer: nn.Module | str | None) -> tuple[nn.Module, str]:
    if layer is None:
        target = getattr(model, "last_conv_layer", None)
        if target is None:
            raise DataError("model does not expose last_conv_layer; pass a layer explicitly")
        return target, "last_conv_layer"
    if isinstance(layer, str):
        named = dict(model.named_modules())
        if layer not in named:
            raise DataError(f"no module named {layer!r} in model")
        return named[layer], layer
    return layer, layer.__class__.__name__


def _maps_from(acts: torch.Tensor, grads: torch.Tensor, out_hw: tuple[int, int], target: int, layer_name: str) -> list[CamMap]:
    if acts.ndim != 4:
        raise DataError(f"target layer output must be (B, C, h, w), got {tuple(acts.shape)}")
    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * acts).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=out_hw, mode="bilinear", align_corners=False)
    out = []
    for raw_t in cam[:, 0]:
        raw = raw_t.detach().cpu().numpy()
        peak = raw.max()
        values = raw / peak if peak > 0 else raw.copy()
        out.append(CamMap(values=values, raw=raw, target_class=target, layer_name=layer_name))
    return out


def gradcam(model: nn.Module, frame: torch.Tensor, target_class: int, layer: nn.Module | str | None = None) -> CamMap:
    """Heat map of `target_class` for a single (3, H, W) frame."""
    if frame.ndim == 3:
        frame = frame[None]
    if frame.ndim != 4 or frame.shape[0] != 1:
        raise DataError(f"gradcam expects one frame, got shape {tuple(frame.shape)}")
    target_layer, layer_name = _resolve_layer(model, layer)
    model.eval()
    probe = _LayerProbe(target_layer)
    try:
        model.zero_grad(set_to_none=True)
        scores = model(frame)
        if not 0 <= target_class < scores.shape[1]:
            raise DataError(f"target class {target_class} out of range 0..{scores.shape[1] - 1}")
        scores[0, target_class].backward()
        grads = probe.gradients
        if grads is None:  # score did not depend on the probed layer
            grads = torch.zeros_like(probe.activations)
        return _maps_from(
            probe.activations, grads, frame.shape[-2:], target_class, layer_name
        )[0]
    finally:
        probe.close()


def cam_for_clip(model, clip: torch.Tensor, target_class: int, layer: nn.Module | str | None = None) -> list[CamMap]:
    """One map per sampled segment frame of a (K, 3, H, W) clip.

    Gradients are taken of the consensus (average pre-softmax) score for
    the target class, so each map shows that frame's contribution to the
    clip-level decision.
    """
    if clip.ndim != 4:
        raise DataError(f"clip must be (K, 3, H, W), got {tuple(clip.shape)}")
    target_layer, layer_name = _resolve_layer(model, layer)
    model.eval()
    probe = _LayerProbe(target_layer)
    try:
        model.zero_grad(set_to_none=True)
        consensus = model.forward_clips(clip[None])
        if not 0 <= target_class < consensus.shape[1]:
            raise DataError(f"target class {target_class} out of range 0..{consensus.shape[1] - 1}")
        consensus[0, target_class].backward()
        grads = probe.gradients
        if grads is None:
            grads = torch.zeros_like(probe.activations)
        return _maps_from(probe.activations, grads, clip.shape[-2:], target_class, layer_name)
    finally:
        probe.close()


# ---------------------------------------------------------------------------
# Export: raw arrays with a JSON sidecar, plus alpha-blended overlays.


def _heat_rgb(values: np.ndarray) -> np.ndarray:
    """Simple blue->red heat colormap over [0, 1]."""
    v = np.clip(values, 0.0, 1.0)
    r = np.clip(1.5 * v - 0.25, 0, 1)
    g = np.clip(1.0 - np.abs(2 * v - 1.0), 0, 1) * 0.9
    b = np.clip(1.0 - 1.5 * v, 0, 1)
    return (np.stack([r, g, b], axis=-1) * 255).astype(np.uint8)


def overlay_image(frame_rgb: np.ndarray, cam: CamMap, alpha: float = 0.45) -> np.ndarray:
    """Alpha-blend the heat map onto an (H, W, 3) uint8 frame."""
    if frame_rgb.shape[:2] != cam.values.shape:
        raise DataError(
            f"frame {frame_rgb.shape[:2]} and map {cam.values.shape} sizes differ"
        )
    heat = _heat_rgb(cam.values).astype(np.float32)
    base = frame_rgb.astype(np.float32)
    return np.clip((1 - alpha) * base + alpha * heat, 0, 255).astype(np.uint8)


def export_cam(out_prefix: Path, cam: CamMap, frame_rgb: np.ndarray | None = None, meta: dict | None = None) -> None:
    """Write `<prefix>.npz` (+ `.json` sidecar, + `.png` overlay if a frame is given)."""
    out_prefix = Path(out_prefix)
    np.savez(out_prefix.with_suffix(".npz"), values=cam.values, raw=cam.raw)
    sidecar = {
        "target_class": cam.target_class,
        "layer": cam.layer_name,
        "width": cam.width,
        "height": cam.height,
    }
    if meta:
        sidecar.update(meta)
    with open(out_prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    if frame_rgb is not None:
        Image.fromarray(overlay_image(frame_rgb, cam), mode="RGB").save(out_prefix.with_suffix(".png"))
