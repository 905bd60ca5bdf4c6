"""Patch decomposition and pluralistic completion sampling.

A patch splits into a center ground-truth region and its surroundings;
samplers produce M plausible normal completions of that center. Three
providers share one contract: the dropout inpainter (stochastic), a
deterministic single-completion wrapper, and an analytic Gaussian oracle
used by the theory lab. Sample i of a request always draws from the
sub-stream child(i), so results are independent of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .nn.model import InpainterModel, inpaint_forward, make_dropout_masks
from .rng import RandomStream


@dataclass(frozen=True)
class PatchTriple:
    """A window image, its center ground truth, and the masked surroundings."""

    full: np.ndarray          # (d_p, d_p)
    center: np.ndarray        # (d_m, d_m) ground-truth completion region
    surroundings: np.ndarray  # (d_p, d_p) with the center zeroed
    hole_mask: np.ndarray     # (d_p, d_p) binary, 1 inside the hole

    @property
    def patch_size(self) -> int:
        return self.full.shape[0]

    @property
    def mask_size(self) -> int:
        return self.center.shape[0]

    @property
    def center_offset(self) -> int:
        return (self.patch_size - self.mask_size) // 2

    def network_input(self, count: int = 1) -> np.ndarray:
        """(count, 2, d_p, d_p) input batch for the completion network."""
        x = np.stack([self.surroundings, self.hole_mask]).astype(np.float32)
        return np.broadcast_to(x, (count,) + x.shape).copy()


@dataclass(frozen=True)
class CompletionSet:
    completions: np.ndarray  # (M, d_m, d_m)
    provenance: str

    def __post_init__(self):
        if self.completions.ndim != 3 or self.completions.shape[0] < 1:
            raise ConfigError(f"completions must be (M, d_m, d_m), got {self.completions.shape}")
        if not np.isfinite(self.completions).all():
            raise ConfigError("completion set contains non-finite values")

    @property
    def count(self) -> int:
        return self.completions.shape[0]


def split_patch(image_patch: np.ndarray, mask_size: int) -> PatchTriple:
    """Decompose a square patch into (full, center, surroundings).

    The center hole is exactly centered, which requires patch and mask
    sizes to differ by an even, positive amount.
    """
    image_patch = np.asarray(image_patch)
    if image_patch.ndim != 2 or image_patch.shape[0] != image_patch.shape[1]:
        raise ConfigError(f"patch must be square 2-D, got shape {image_patch.shape}")
    d_p = image_patch.shape[0]
    if mask_size < 1:
        raise ConfigError(f"mask size must be >= 1, got {mask_size}")
    if mask_size >= d_p:
        raise ConfigError(f"mask size {mask_size} must be smaller than patch size {d_p}")
    if (d_p - mask_size) % 2 != 0:
        raise ConfigError(f"patch size {d_p} minus mask size {mask_size} must be even")
    off = (d_p - mask_size) // 2
    center = image_patch[off : off + mask_size, off : off + mask_size].copy()
    hole = np.zeros((d_p, d_p), dtype=image_patch.dtype)
    hole[off : off + mask_size, off : off + mask_size] = 1
    surroundings = image_patch * (1 - hole)
    return PatchTriple(full=image_patch.copy(), center=center,
                       surroundings=surroundings, hole_mask=hole)


def reassemble(triple: PatchTriple) -> np.ndarray:
    """Exact inverse of split_patch."""
    out = triple.surroundings.copy()
    off = triple.center_offset
    out[off : off + triple.mask_size, off : off + triple.mask_size] = triple.center
    return out


def crop_center(full_output: np.ndarray, patch_size: int, mask_size: int) -> np.ndarray:
    off = (patch_size - mask_size) // 2
    return full_output[..., off : off + mask_size, off : off + mask_size]


class DropoutCompletionSampler:
    """Stochastic completions from channel dropout on a trained network.

    Each of the M requested samples gets its own dropout-mask sub-stream,
    so the set is reproducible and exchangeable; the forward passes run as
    one batch of M inputs.
    """

    name = "dropout"

    def __init__(self, model: InpainterModel, p_drop: float = 0.5):
        if not 0.0 <= p_drop < 1.0:
            raise ConfigError(f"p_drop must be in [0, 1), got {p_drop}")
        self.model = model
        self.p_drop = p_drop

    def sample(self, triple: PatchTriple, count: int, stream: RandomStream) -> np.ndarray:
        x = triple.network_input(count)
        if self.p_drop == 0.0:
            out = inpaint_forward(self.model, x)
        else:
            masks = make_dropout_masks(self.model, self.p_drop,
                                       [stream.child(i) for i in range(count)])
            out = inpaint_forward(self.model, x, self.p_drop, dropout_masks=masks)
        return crop_center(out[:, 0], triple.patch_size, triple.mask_size)


class DeterministicCompletionSampler:
    """Single fixed completion (the M=1 baseline): dropout forced off."""

    name = "deterministic"

    def __init__(self, model: InpainterModel):
        self.model = model

    def sample(self, triple: PatchTriple, count: int, stream: RandomStream) -> np.ndarray:
        if count != 1:
            raise UsageError(f"deterministic sampler produces exactly one completion, asked for {count}")
        out = inpaint_forward(self.model, triple.network_input(1))
        return crop_center(out[:, 0], triple.patch_size, triple.mask_size)


class GaussianOracleSampler:
    """Isotropic Gaussian N(mean, stddev^2 I) over completion vectors.

    Stands in for an exactly known distribution of normal completions; used
    by the theory lab and by tests that need a closed-form sampler.
    """

    name = "gaussian-oracle"

    def __init__(self, mean, stddev: float, dim: int):
        if stddev < 0:
            raise ConfigError(f"stddev must be nonnegative, got {stddev}")
        mean = np.asarray(mean, dtype=np.float64)
        if mean.ndim == 0:
            mean = np.full(dim, float(mean))
        if mean.shape != (dim,):
            raise ConfigError(f"mean must be scalar or length-{dim}, got shape {mean.shape}")
        self.mean = mean
        self.stddev = float(stddev)
        self.dim = dim

    def sample_vectors(self, count: int, stream: RandomStream) -> np.ndarray:
        gen = stream.generator()
        return self.mean + self.stddev * gen.standard_normal((count, self.dim))

    def sample(self, triple: PatchTriple, count: int, stream: RandomStream) -> np.ndarray:
        d_m = triple.mask_size
        if self.dim != d_m * d_m:
            raise ConfigError(f"oracle dim {self.dim} does not match completion area {d_m * d_m}")
        return self.sample_vectors(count, stream).reshape(count, d_m, d_m)


def sample_completions(sampler, triple: PatchTriple, count: int,
                       stream: RandomStream) -> CompletionSet:
    """Draw `count` completions of the triple's center from the sampler."""
    if count < 1:
        raise ConfigError(f"completion count must be >= 1, got {count}")
    completions = sampler.sample(triple, count, stream)
    provenance = f"{sampler.name}:seed={stream.seed}:path={','.join(map(str, stream.path))}"
    return CompletionSet(completions=np.asarray(completions), provenance=provenance)
