"""roadstress: estimating discretized driver stress from road-scene imagery.

The pipeline covers label processing (min-max normalization, three-class
discretization, nearest-neighbor alignment), segmentation-derived object
occupancy features, leave-one-driver-out evaluation, three model families
(feature classifiers, a single-frame CNN, a temporal segment network),
GradCAM interpretability, scene-composition analysis, and a deterministic
synthetic-drive generator that serves as ground truth for every
end-to-end check.
"""

from .ingestion import (
    DriveSession,
    LabeledFrame,
    StressClass,
    StressSignal,
    align_labels,
    discretize,
    normalize_stress,
    resample_frames,
)
from .segmentation import OccupancyVector, SegmentationMask, extract_features, occupancy_vector
from .scene_analysis import representation_ratios
from .splits import ClipSample, SplitPlan, balance, build_clips, lodo_plan
from .synthgen import SyntheticRegime, bayes_accuracy, default_regimes, make_corpus
from .taxonomy import DEFAULT_TAXONOMY, CategoryTaxonomy, load_taxonomy

__version__ = "0.1.0"

__all__ = [
    "DriveSession",
    "LabeledFrame",
    "StressClass",
    "StressSignal",
    "align_labels",
    "discretize",
    "normalize_stress",
    "resample_frames",
    "OccupancyVector",
    "SegmentationMask",
    "extract_features",
    "occupancy_vector",
    "representation_ratios",
    "ClipSample",
    "SplitPlan",
    "balance",
    "build_clips",
    "lodo_plan",
    "SyntheticRegime",
    "bayes_accuracy",
    "default_regimes",
    "make_corpus",
    "DEFAULT_TAXONOMY",
    "CategoryTaxonomy",
    "load_taxonomy",
    "__version__",
]
