"""Deterministic synthetic corpus: band-limited textures plus injected
elliptical anomalies with ground-truth boxes.

Normal images are sums of random-orientation, random-phase sinusoids with
smoothed noise, rescaled into [-1, 1]. That keeps normal appearance highly
variable between images while leaving local structure predictable enough
to inpaint, which is the regime the completion-based scorer needs.
Anomalies re-texture an ellipse by resampling the image at frequency-
scaled coordinates and adding a contrast offset, so they are locally
texture-inconsistent rather than globally obvious.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import GenerationError, UsageError
from .evaluation import BoxAnnotation, write_boxes_csv
from .imageio import save_gray16
from .rng import RandomStream, as_generator

MANIFEST_VERSION = 1


# Smoothed-noise energy as a fraction of the mean sinusoid amplitude. Large
# enough that the center of a masked patch is genuinely multimodal given its
# surroundings (several plausible blob layouts), which is the regime where
# sampling several completions beats a single deterministic fill.
NOISE_AMP_FRACTION = 0.25


@dataclass(frozen=True)
class TextureParams:
    size: int = 256
    components: int = 4
    freq_range: tuple[float, float] = (4.0, 12.0)   # cycles per image
    amp_range: tuple[float, float] = (0.5, 1.0)
    noise_sigma: float = 2.0                        # smoothing radius, pixels
    seed: int = 1337


@dataclass(frozen=True)
class AnomalyParams:
    radius_range: tuple[int, int] = (6, 36)
    contrast_range: tuple[float, float] = (0.25, 0.55)   # offset magnitude, sign random
    freq_mult_range: tuple[float, float] = (1.6, 2.6)
    count_range: tuple[int, int] = (1, 2)


def gen_normal(params: TextureParams, rng) -> np.ndarray:
    """One normal texture image, affinely rescaled to span [-1, 1]."""
    gen = as_generator(rng)
    size = params.size
    coords = np.arange(size) / size
    yy = coords[:, None]
    xx = coords[None, :]
    img = np.zeros((size, size))
    for _ in range(params.components):
        freq = gen.uniform(*params.freq_range)
        theta = gen.uniform(0.0, np.pi)
        phase = gen.uniform(0.0, 2.0 * np.pi)
        amp = gen.uniform(*params.amp_range)
        img += amp * np.sin(2.0 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    noise = gaussian_filter(gen.standard_normal((size, size)), params.noise_sigma)
    std = noise.std()
    if std > 0:
        noise_scale = NOISE_AMP_FRACTION * (params.amp_range[0] + params.amp_range[1]) / 2.0
        img += noise_scale * (noise / std)
    lo, hi = img.min(), img.max()
    return 2.0 * (img - lo) / (hi - lo) - 1.0


def _bilinear(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = image.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def inject_anomaly(image: np.ndarray, params: AnomalyParams, rng,
                   image_id: str = "") -> tuple[np.ndarray, BoxAnnotation]:
    """Re-texture one or more random ellipses and return tight boxes.

    Inside each ellipse the image is resampled at coordinates scaled by the
    frequency multiplier about the ellipse center and shifted by a contrast
    offset; a multiplier of 1 with zero offset leaves pixels bit-equal.
    Pixels outside every ellipse are untouched.
    """
    gen = as_generator(rng)
    size = image.shape[0]
    out = image.copy()
    count = int(gen.integers(params.count_range[0], params.count_range[1] + 1))
    boxes = []
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        for _attempt in range(100):
            rx = int(gen.integers(params.radius_range[0], params.radius_range[1] + 1))
            ry = int(gen.integers(params.radius_range[0], params.radius_range[1] + 1))
            if 2 * rx + 1 > size or 2 * ry + 1 > size:
                continue
            cx = int(gen.integers(rx, size - rx))
            cy = int(gen.integers(ry, size - ry))
            break
        else:
            raise GenerationError(
                f"no feasible ellipse for radius range {params.radius_range} in {size}x{size} image"
            )
        mult = float(gen.uniform(*params.freq_mult_range))
        offset = float(gen.uniform(*params.contrast_range))
        if gen.random() < 0.5:
            offset = -offset
        inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        ys, xs = np.nonzero(inside)
        src_y = cy + mult * (ys - cy)
        src_x = cx + mult * (xs - cx)
        out[ys, xs] = np.clip(_bilinear(image, src_y, src_x) + offset, -1.0, 1.0)
        boxes.append((int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
    return out, BoxAnnotation(image_id=image_id, boxes=tuple(boxes))


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    role: str  # train | test
    seed: int


@dataclass(frozen=True)
class CorpusManifest:
    version: int
    master_seed: int
    params: dict
    entries: tuple[CorpusEntry, ...]

    def by_role(self, role: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.role == role]


def _entry_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, index])
    return int(ss.generate_state(1, np.uint64)[0])


def build_corpus(out_dir, n_train: int, n_test: int,
                 texture: TextureParams | None = None,
                 anomaly: AnomalyParams | None = None,
                 master_seed: int | None = None) -> CorpusManifest:
    """Generate and write the full corpus: anomaly-free training images,
    test images with at least one anomaly each, the boxes CSV, and a
    manifest whose per-entry seeds fully determine every file byte.
    """
    if n_train < 1 or n_test < 1:
        raise UsageError(f"need at least one train and one test image, got {n_train}/{n_test}")
    texture = texture or TextureParams()
    anomaly = anomaly or AnomalyParams()
    if anomaly.count_range[0] < 1:
        raise UsageError("test images must receive at least one anomaly")
    master_seed = texture.seed if master_seed is None else master_seed

    out_dir = Path(out_dir)
    (out_dir / "train").mkdir(parents=True, exist_ok=True)
    (out_dir / "test").mkdir(parents=True, exist_ok=True)

    entries: list[CorpusEntry] = []
    annotations: dict[str, BoxAnnotation] = {}
    for i in range(n_train):
        seed = _entry_seed(master_seed, i)
        image = gen_normal(texture, RandomStream(seed))
        rel = f"train/train_{i:04d}.png"
        save_gray16(image, out_dir / rel)
        entries.append(CorpusEntry(path=rel, role="train", seed=seed))
    for j in range(n_test):
        seed = _entry_seed(master_seed, n_train + j)
        stream = RandomStream(seed)
        image = gen_normal(texture, stream.child(0))
        image_id = f"test_{j:04d}"
        image, ann = inject_anomaly(image, anomaly, stream.child(1), image_id=image_id)
        rel = f"test/{image_id}.png"
        save_gray16(image, out_dir / rel)
        entries.append(CorpusEntry(path=rel, role="test", seed=seed))
        annotations[image_id] = ann

    write_boxes_csv(annotations, out_dir / "boxes.csv")
    # normalize params to plain JSON types so the in-memory manifest equals
    # its round-trip through manifest.json (tuples become lists)
    params = json.loads(json.dumps({"texture": asdict(texture), "anomaly": asdict(anomaly)}))
    manifest = CorpusManifest(
        version=MANIFEST_VERSION,
        master_seed=master_seed,
        params=params,
        entries=tuple(entries),
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def save_manifest(manifest: CorpusManifest, path) -> None:
    payload = {
        "version": manifest.version,
        "master_seed": manifest.master_seed,
        "params": manifest.params,
        "entries": [asdict(e) for e in manifest.entries],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> CorpusManifest:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != MANIFEST_VERSION:
        raise UsageError(f"{path}: unsupported manifest version {payload.get('version')}")
    return CorpusManifest(
        version=payload["version"],
        master_seed=payload["master_seed"],
        params=payload["params"],
        entries=tuple(CorpusEntry(**e) for e in payload["entries"]),
    )
