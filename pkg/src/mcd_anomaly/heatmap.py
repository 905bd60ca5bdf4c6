"""Sliding-window anomaly heatmapping.

A fixed-size window rasters over the image with a constant stride; each
window's center region is scored against sampled completions, the scores
form a coarse grid anchored at window centers, and bicubic (Catmull-Rom)
interpolation upsamples that grid to image resolution.

Window scoring is embarrassingly parallel. Every window draws from the
sub-stream child(window_index), so the assembled grid is byte-identical
for any worker count and any scheduling order.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .imageio import save_normalized_gray16
from .rng import RandomStream
from .samplers import sample_completions, split_patch
from .scoring import METRICS, make_encoder, score_with_metric

HEATMAP_MAGIC = b"PHMF"
HEATMAP_VERSION = 1


@dataclass(frozen=True)
class ScoreConfig:
    """All inference hyperparameters for one heatmapping run."""

    patch_size: int = 64
    mask_size: int = 32
    stride: int = 8
    n_samples: int = 10
    p_drop: float = 0.5
    metric: str = "min"
    space: str = "image"
    seed: int = 1337

    def __post_init__(self):
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.mask_size >= self.patch_size:
            raise ConfigError("mask size must be smaller than patch size")
        if (self.patch_size - self.mask_size) % 2 != 0:
            raise ConfigError("patch size minus mask size must be even")
        if self.n_samples < 1:
            raise ConfigError(f"sample count must be >= 1, got {self.n_samples}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop must be in [0, 1), got {self.p_drop}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.space not in ("image", "feature"):
            raise ConfigError(f"space must be 'image' or 'feature', got {self.space!r}")


@dataclass(frozen=True)
class RasterGrid:
    origins: tuple[tuple[int, int], ...]  # (row, col) offsets in raster order
    rows: int
    cols: int

    def __len__(self) -> int:
        return len(self.origins)


@dataclass(frozen=True)
class AnomalyHeatmap:
    coarse: np.ndarray       # (rows, cols) scores at window centers
    full: np.ndarray         # image-sized upsampled map, >= 0
    image_dims: tuple[int, int]


def raster_windows(image_dims: tuple[int, int], patch_size: int, stride: int) -> RasterGrid:
    """Regular lattice of full-fit window origins starting at (0, 0).

    Windows never extend past the image; no snapped partial windows are
    appended at the far edges.
    """
    h, w = image_dims
    if h < patch_size:
        raise UsageError(f"image height {h} is smaller than window size {patch_size}")
    if w < patch_size:
        raise UsageError(f"image width {w} is smaller than window size {patch_size}")
    rows = (h - patch_size) // stride + 1
    cols = (w - patch_size) // stride + 1
    origins = tuple((r * stride, c * stride) for r in range(rows) for c in range(cols))
    return RasterGrid(origins=origins, rows=rows, cols=cols)


def score_window(image: np.ndarray, origin: tuple[int, int], config: ScoreConfig,
                 sampler, stream: RandomStream, encoder=None) -> float:
    """Score one window: metric over encoded distances of M completions."""
    r, c = origin
    window = np.asarray(image[r : r + config.patch_size, c : c + config.patch_size])
    if window.shape != (config.patch_size, config.patch_size):
        raise UsageError(f"window at {origin} does not fit inside image of shape {image.shape}")
    if encoder is None:
        encoder = make_encoder(config.space, getattr(sampler, "model", None))
    triple = split_patch(window, config.mask_size)
    completions = sample_completions(sampler, triple, config.n_samples, stream)
    gt_vec = encoder.encode(triple.center)
    sample_vecs = encoder.encode_batch(completions.completions)
    return score_with_metric(config.metric, gt_vec, sample_vecs)


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic kernel (a = -0.5), support |t| < 2."""
    at = np.abs(t)
    inner = (1.5 * at - 2.5) * at * at + 1.0
    outer = ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def _axis_weights(n_pixels: int, n_anchors: int, anchor0: float, spacing: float) -> np.ndarray:
    """(n_pixels, n_anchors) interpolation weights along one axis.

    Pixel p maps to anchor coordinate u = (p - anchor0) / spacing, clamped
    into [0, n_anchors - 1] so the map replicates edge behavior outside the
    outermost anchors; tap indices clamp likewise.
    """
    u = (np.arange(n_pixels) - anchor0) / spacing
    u = np.clip(u, 0.0, n_anchors - 1.0)
    base = np.floor(u).astype(int)
    frac = u - base
    weights = np.zeros((n_pixels, n_anchors))
    rows = np.arange(n_pixels)
    for tap in (-1, 0, 1, 2):
        idx = np.clip(base + tap, 0, n_anchors - 1)
        np.add.at(weights, (rows, idx), _catmull_rom(frac - tap))
    return weights


def assemble_and_upsample(scores, grid: RasterGrid, image_dims: tuple[int, int],
                          config: ScoreConfig) -> AnomalyHeatmap:
    """Arrange raster-order scores on the coarse lattice and upsample.

    Coarse cell (r, c) is anchored at pixel (r*stride + d_p/2, likewise for
    columns); the full map is the separable Catmull-Rom interpolation of
    the coarse grid, clamped below at zero.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size != len(grid):
        raise UsageError(f"got {scores.size} scores for a grid of {len(grid)} windows")
    if not np.isfinite(scores).all():
        raise UsageError("window scores contain non-finite values")
    coarse = scores.reshape(grid.rows, grid.cols)
    anchor0 = config.patch_size / 2.0
    w_rows = _axis_weights(image_dims[0], grid.rows, anchor0, config.stride)
    w_cols = _axis_weights(image_dims[1], grid.cols, anchor0, config.stride)
    full = w_rows @ coarse @ w_cols.T
    np.maximum(full, 0.0, out=full)
    return AnomalyHeatmap(coarse=coarse, full=full, image_dims=tuple(image_dims))


# Worker-process state for the scoring pool; populated once per worker by
# the pool initializer so tasks only carry window indices.
_POOL_STATE: dict = {}


def _init_pool(image, config, sampler, stream):
    _POOL_STATE["image"] = image
    _POOL_STATE["config"] = config
    _POOL_STATE["sampler"] = sampler
    _POOL_STATE["stream"] = stream
    _POOL_STATE["grid"] = raster_windows(image.shape, config.patch_size, config.stride)
    _POOL_STATE["encoder"] = make_encoder(config.space, getattr(sampler, "model", None))


def _score_chunk(indices: list[int]) -> list[tuple[int, float]]:
    st = _POOL_STATE
    return [
        (i, score_window(st["image"], st["grid"].origins[i], st["config"], st["sampler"],
                         st["stream"].child(i), st["encoder"]))
        for i in indices
    ]


def heatmap_image(image: np.ndarray, config: ScoreConfig, sampler,
                  stream: RandomStream | None = None, workers: int = 1) -> AnomalyHeatmap:
    """Full pipeline for one image: raster, score every window, assemble."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise UsageError(f"expected a 2-D grayscale image, got shape {image.shape}")
    grid = raster_windows(image.shape, config.patch_size, config.stride)
    if stream is None:
        stream = RandomStream(config.seed)

    scores = np.empty(len(grid), dtype=np.float64)
    if workers <= 1:
        encoder = make_encoder(config.space, getattr(sampler, "model", None))
        for i, origin in enumerate(grid.origins):
            scores[i] = score_window(image, origin, config, sampler, stream.child(i), encoder)
    else:
        indices = list(range(len(grid)))
        chunk = max(1, len(indices) // (workers * 4))
        chunks = [indices[i : i + chunk] for i in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_pool,
                                 initargs=(image, config, sampler, stream)) as pool:
            for pairs in pool.map(_score_chunk, chunks):
                for i, s in pairs:
                    scores[i] = s
    return assemble_and_upsample(scores, grid, image.shape, config)


def write_heatmap_binary(full_map: np.ndarray, path) -> None:
    """Exact float32 dump: magic, version, height, width, row-major data."""
    full_map = np.asarray(full_map)
    h, w = full_map.shape
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<III", HEATMAP_VERSION, h, w))
        fh.write(np.ascontiguousarray(full_map, dtype="<f4").tobytes())


def read_heatmap_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != HEATMAP_MAGIC:
        raise UsageError(f"{path}: bad magic {data[:4]!r}")
    version, h, w = struct.unpack_from("<III", data, 4)
    if version != HEATMAP_VERSION:
        raise UsageError(f"{path}: unsupported heatmap version {version}")
    expected = 16 + 4 * h * w
    if len(data) != expected:
        raise UsageError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).copy()


def write_heatmap_files(heatmap: AnomalyHeatmap, base_path) -> tuple[str, str]:
    """Emit the exact binary map and the viewable min-max PNG together."""
    binary_path = f"{base_path}.phmf"
    png_path = f"{base_path}.png"
    write_heatmap_binary(heatmap.full, binary_path)
    save_normalized_gray16(heatmap.full, png_path)
    return binary_path, png_path
