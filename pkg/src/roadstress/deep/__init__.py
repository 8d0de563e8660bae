from .models import (
    BackboneSpec,
    ImageHeadSpec,
    StressModel,
    TSNConfig,
    build_model,
    image_forward,
    segment_sample,
    tsn_forward,
)
from .data import FrameStore, PreprocessSpec, clip_tensor, frame_tensor
from .training import (
    TrainingConfig,
    TrainedModel,
    evaluate_model,
    load_checkpoint,
    save_checkpoint,
    train_model,
    window_sweep,
)

__all__ = [
    "BackboneSpec",
    "ImageHeadSpec",
    "StressModel",
    "TSNConfig",
    "TrainingConfig",
    "TrainedModel",
    "FrameStore",
    "PreprocessSpec",
    "build_model",
    "clip_tensor",
    "frame_tensor",
    "evaluate_model",
    "image_forward",
    "load_checkpoint",
    "save_checkpoint",
    "segment_sample",
    "train_model",
    "tsn_forward",
    "window_sweep",
]
