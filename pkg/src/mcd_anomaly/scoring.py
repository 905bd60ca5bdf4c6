"""Completion encoders and anomaly score metrics.

A region's anomaly score is a statistic of the Euclidean distances between
the encoded ground truth and the encoded sampled completions: the minimum
(the default), the mean, or the median. The identity encoder compares raw
pixels; the trunk encoder reuses the trained inpainter's strided encoder
stack as a learned feature map.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, UsageError
from .nn import ops
from .nn.model import InpainterModel

METRICS = ("min", "mean", "median")


class IdentityEncoder:
    """Row-major pixel flattening; distances are image-space distances."""

    name = "identity"

    def encode(self, completion: np.ndarray) -> np.ndarray:
        return np.asarray(completion, dtype=np.float64).reshape(-1)

    def encode_batch(self, completions: np.ndarray) -> np.ndarray:
        completions = np.asarray(completions, dtype=np.float64)
        return completions.reshape(completions.shape[0], -1)


class TrunkEncoder:
    """Deepest activation of the inpainter's strided encoder prefix.

    The completion is fed as (intensity, empty-hole-mask) so the prefix
    sees the same channel layout it was trained with; the deepest feature
    map is flattened into one vector.
    """

    name = "trunk"

    def __init__(self, model: InpainterModel):
        self.model = model
        self.prefix = model.encoder_prefix_length()

    def output_dim(self, mask_size: int) -> int:
        down = 1
        for s in self.model.stages[: self.prefix]:
            down *= s.stride
        if mask_size % down != 0:
            raise ConfigError(f"completion size {mask_size} not divisible by encoder stride {down}")
        side = mask_size // down
        return self.model.stages[self.prefix - 1].out_ch * side * side

    def _run_prefix(self, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(self.prefix):
            s = self.model.stages[i]
            z = ops.conv2d_forward(h, self.model.weights[i], self.model.biases[i],
                                   s.stride, s.padding)
            h = ops.leaky_relu(z, self.model.leaky_slope) if s.activation == "lrelu" else z
        return h

    def encode(self, completion: np.ndarray) -> np.ndarray:
        return self.encode_batch(np.asarray(completion)[None])[0]

    def encode_batch(self, completions: np.ndarray) -> np.ndarray:
        completions = np.asarray(completions, dtype=np.float32)
        if completions.ndim != 3:
            raise ConfigError(f"expected (M, d_m, d_m) completions, got shape {completions.shape}")
        x = np.stack([completions, np.zeros_like(completions)], axis=1)
        feats = self._run_prefix(x)
        return feats.reshape(feats.shape[0], -1).astype(np.float64)


def encode(encoder, completion: np.ndarray) -> np.ndarray:
    """Encode one completion region into its feature vector."""
    return encoder.encode(completion)


def _distances(gt: np.ndarray, samples) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None]
    if samples.shape[0] == 0:
        raise UsageError("need at least one completion sample")
    if samples.shape[1] != gt.shape[0]:
        raise ConfigError(
            f"sample vectors have length {samples.shape[1]}, ground truth has {gt.shape[0]}"
        )
    diff = samples - gt
    # hypot-style scaling: keeps the norm exactly zero iff diff is all-zero
    # even where naive squaring would underflow
    scale = np.abs(diff).max(axis=1)
    nonzero = scale > 0
    out = np.zeros(samples.shape[0])
    if np.any(nonzero):
        scaled = diff[nonzero] / scale[nonzero, None]
        out[nonzero] = scale[nonzero] * np.sqrt((scaled * scaled).sum(axis=1))
    return out


def mcd_score(gt, samples) -> float:
    """Minimum completion distance: the closest sample's L2 distance."""
    return float(_distances(gt, samples).min())


def mean_cd_score(gt, samples) -> float:
    return float(_distances(gt, samples).mean())


def median_cd_score(gt, samples) -> float:
    return float(np.median(_distances(gt, samples)))


def score_with_metric(metric: str, gt, samples) -> float:
    if metric == "min":
        return mcd_score(gt, samples)
    if metric == "mean":
        return mean_cd_score(gt, samples)
    if metric == "median":
        return median_cd_score(gt, samples)
    raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")


def make_encoder(space: str, model: InpainterModel | None = None):
    """Map a scoring space name to an encoder instance."""
    if space == "image":
        return IdentityEncoder()
    if space == "feature":
        if model is None:
            raise ConfigError("feature-space scoring needs a trained model")
        return TrunkEncoder(model)
    raise ConfigError(f"space must be 'image' or 'feature', got {space!r}")
