"""Anomaly localization through pluralistic image completion.

Train a completion network on normal images, sample multiple plausible
fills of each masked region with inference-time channel dropout, and score
regions by the distance of the closest completion to the ground truth.
Includes a sliding-window heatmapper, pixel-level evaluation, a synthetic
corpus generator, and a Monte-Carlo lab for the score's AUC behavior.
"""

__version__ = "0.1.0"

from .rng import RandomStream
from .samplers import (
    CompletionSet,
    DeterministicCompletionSampler,
    DropoutCompletionSampler,
    GaussianOracleSampler,
    PatchTriple,
    sample_completions,
    split_patch,
)
from .scoring import IdentityEncoder, TrunkEncoder, mcd_score, mean_cd_score, median_cd_score
from .heatmap import AnomalyHeatmap, RasterGrid, ScoreConfig, heatmap_image, raster_windows

__all__ = [
    "RandomStream",
    "CompletionSet",
    "DeterministicCompletionSampler",
    "DropoutCompletionSampler",
    "GaussianOracleSampler",
    "PatchTriple",
    "sample_completions",
    "split_patch",
    "IdentityEncoder",
    "TrunkEncoder",
    "mcd_score",
    "mean_cd_score",
    "median_cd_score",
    "AnomalyHeatmap",
    "RasterGrid",
    "ScoreConfig",
    "heatmap_image",
    "raster_windows",
    "__version__",
]
