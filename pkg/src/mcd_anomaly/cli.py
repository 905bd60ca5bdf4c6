"""Command-line pipeline: corpus generation, training, heatmapping,
evaluation, and the theory sweep.

Exit codes: 0 on success, 1 on runtime/data errors, 2 on usage errors
(argparse). Option precedence is flags > --config JSON > built-in
defaults; every command is deterministic given identical inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluation, synthdata, theory
from .errors import (AnnotationError, CheckpointFormatError, ConfigError, GenerationError,
                     TrainingDivergedError, UndefinedMetricError, UsageError)
from .heatmap import ScoreConfig, heatmap_image, read_heatmap_binary, write_heatmap_files
from .imageio import load_gray16
from .nn.model import load_checkpoint, save_checkpoint
from .nn.train import TrainConfig, train_inpainter
from .rng import RandomStream
from .samplers import DeterministicCompletionSampler, DropoutCompletionSampler

DEFAULT_SEED = 1337

_ERRORS = (UsageError, ConfigError, AnnotationError, GenerationError, TrainingDivergedError,
           UndefinedMetricError, CheckpointFormatError, OSError, json.JSONDecodeError)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config file must hold a JSON object")
    return cfg


class _Options:
    """Flag > config-file > default resolution for one command."""

    def __init__(self, args: argparse.Namespace, defaults: dict):
        self.args = args
        self.config = _load_config(getattr(args, "config", None))
        self.defaults = defaults

    def __getattr__(self, key: str):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.config:
            return self.config[key]
        if key in self.defaults:
            return self.defaults[key]
        raise AttributeError(key)


def cmd_gen_data(args) -> int:
    opt = _Options(args, dict(n_train=1000, n_test=20, seed=DEFAULT_SEED, size=256,
                              components=4, freq_lo=4.0, freq_hi=12.0))
    texture = synthdata.TextureParams(size=int(opt.size), components=int(opt.components),
                                      freq_range=(float(opt.freq_lo), float(opt.freq_hi)),
                                      seed=int(opt.seed))
    manifest = synthdata.build_corpus(args.out, int(opt.n_train), int(opt.n_test),
                                      texture=texture, master_seed=int(opt.seed))
    print(f"wrote {len(manifest.entries)} images under {args.out}")
    return 0


def _train_patch_corpus(corpus_dir: Path, manifest, patch_size: int,
                        patches_per_image: int, stream: RandomStream) -> np.ndarray:
    patches = []
    gen = stream.generator()
    for entry in manifest.by_role("train"):
        image = load_gray16(corpus_dir / entry.path)
        if image.shape[0] < patch_size or image.shape[1] < patch_size:
            raise UsageError(f"{entry.path}: image smaller than patch size {patch_size}")
        for _ in range(patches_per_image):
            top = int(gen.integers(0, image.shape[0] - patch_size + 1))
            left = int(gen.integers(0, image.shape[1] - patch_size + 1))
            patches.append(image[top : top + patch_size, left : left + patch_size])
    return np.asarray(patches, dtype=np.float32)


def cmd_train(args) -> int:
    opt = _Options(args, dict(iters=1200, batch=16, lr=1e-3, patience=10,
                              patch_size=64, mask_size=32, patches_per_image=1,
                              seed=DEFAULT_SEED))
    corpus_dir = Path(args.corpus)
    manifest = synthdata.load_manifest(corpus_dir / "manifest.json")

    boxes_path = corpus_dir / "boxes.csv"
    if boxes_path.exists():
        annotated = set(evaluation.read_boxes_csv(boxes_path))
        train_ids = {Path(e.path).stem for e in manifest.by_role("train")}
        tainted = sorted(annotated & train_ids)
        if tainted:
            raise UsageError(
                f"refusing to train: manifest lists annotated (anomalous) images under "
                f"role=train: {tainted}"
            )
    if not manifest.by_role("train"):
        raise UsageError("corpus manifest has no role=train entries")

    stream = RandomStream(int(opt.seed))
    patches = _train_patch_corpus(corpus_dir, manifest, int(opt.patch_size),
                                  int(opt.patches_per_image), stream.child_named("crops"))
    config = TrainConfig(learning_rate=float(opt.lr), batch_size=int(opt.batch),
                         max_iters=int(opt.iters), patience=int(opt.patience),
                         seed=int(opt.seed))
    model, history = train_inpainter(patches, config, stream=stream.child_named("train"),
                                     mask_size=int(opt.mask_size))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_path)

    loss_csv = out_path.with_suffix(out_path.suffix + ".loss.csv")
    with open(loss_csv, "w") as fh:
        fh.write("iteration,masked_l1\n")
        for it, loss in history.evals:
            fh.write(f"{it},{loss:.6f}\n")
    if history.evals:
        print(f"trained {len(patches)} patches: eval L1 {history.initial_loss:.4f} -> "
              f"{history.final_loss:.4f} ({len(history.batch_losses)} iterations)")
    print(f"checkpoint written to {out_path}")
    return 0


def _collect_images(spec: list[str]) -> list[Path]:
    paths: list[Path] = []
    for item in spec:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.png")))
        elif p.exists():
            paths.append(p)
        else:
            raise UsageError(f"image path does not exist: {item}")
    if not paths:
        raise UsageError("no input images found")
    return paths


def _write_overlay(image: np.ndarray, heat: np.ndarray, path) -> None:
    gray = np.clip((image + 1.0) / 2.0, 0.0, 1.0)
    lo, hi = heat.min(), heat.max()
    norm = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
    rgb = np.stack([
        np.clip(gray * (1.0 - 0.6 * norm) + 0.9 * norm, 0.0, 1.0),
        gray * (1.0 - 0.6 * norm),
        gray * (1.0 - 0.6 * norm),
    ], axis=-1)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(path, format="PNG")


def cmd_heatmap(args) -> int:
    opt = _Options(args, dict(m=10, p_drop=0.5, metric="min", space="image", stride=8,
                              workers=1, seed=DEFAULT_SEED))
    model = load_checkpoint(args.model)
    m = int(opt.m)
    p_drop = 0.0 if m == 1 else float(opt.p_drop)
    config = ScoreConfig(patch_size=model.patch_size, mask_size=model.mask_size,
                         stride=int(opt.stride), n_samples=m, p_drop=p_drop,
                         metric=str(opt.metric), space=str(opt.space), seed=int(opt.seed))
    if m == 1:
        sampler = DeterministicCompletionSampler(model)
    else:
        sampler = DropoutCompletionSampler(model, p_drop)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_stream = RandomStream(config.seed)
    for path in _collect_images(args.images):
        image = load_gray16(path)
        stream = base_stream.child_named(path.stem)
        result = heatmap_image(image, config, sampler, stream=stream,
                               workers=int(opt.workers))
        write_heatmap_files(result, out_dir / path.stem)
        if args.plot_data:
            _write_overlay(image, result.full, out_dir / f"{path.stem}_overlay.png")
        print(f"{path.stem}: heatmap mean {result.full.mean():.4f} max {result.full.max():.4f}")
    return 0


def cmd_eval(args) -> int:
    heatmap_dir = Path(args.heatmaps)
    heatmaps = {p.stem: read_heatmap_binary(p) for p in sorted(heatmap_dir.glob("*.phmf"))}
    if not heatmaps:
        raise UsageError(f"no .phmf heatmaps found in {heatmap_dir}")
    annotations = evaluation.read_boxes_csv(args.boxes)
    report = evaluation.dataset_eval(heatmaps, annotations)
    evaluation.write_metrics_json(report, args.out)
    print(f"mean pixel AUC {report.mean_auc:.4f}, mean AP {report.mean_ap:.4f} "
          f"over {len(report.per_image)} images")
    return 0


def cmd_theory(args) -> int:
    opt = _Options(args, dict(mu_sep=3.0, sigma=1.0,
                              m_list=",".join(str(m) for m in theory.DEFAULT_M_SWEEP),
                              trials=100_000, seed=DEFAULT_SEED))
    m_list = [int(tok) for tok in str(opt.m_list).split(",") if tok.strip()]
    spec = theory.separation_spec(float(opt.mu_sep), float(opt.sigma))
    result = theory.sweep_m(spec, m_list, int(opt.trials),
                            stream=RandomStream(int(opt.seed)), with_semi_analytic=True)
    out_csv = Path(args.out)
    theory.write_sweep_csv(result, out_csv)
    theory.write_sweep_json(result, out_csv.with_suffix(".json"), spec, int(opt.trials))
    for m, a, e, sa in zip(result.m_values, result.auc, result.stderr, result.semi_auc):
        print(f"M={m:>4d}  auc={a:.4f}±{e:.4f}  semi={sa:.4f}  agree={abs(a - sa) <= 0.01}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcd-anomaly",
        description="Anomaly localization by pluralistic completion distance scoring",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--components", type=int)
    p.add_argument("--freq-lo", type=float, dest="freq_lo")
    p.add_argument("--freq-hi", type=float, dest="freq_hi")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the completion network on a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory (with manifest.json)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--mask-size", type=int, dest="mask_size")
    p.add_argument("--patches-per-image", type=int, dest="patches_per_image")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("heatmap", help="score images into anomaly heatmaps")
    p.add_argument("--model", required=True, help="trained checkpoint")
    p.add_argument("--images", required=True, nargs="+",
                   help="image files or a directory of PNGs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--m", type=int, help="completions per window (1 = deterministic)")
    p.add_argument("--p-drop", type=float, dest="p_drop")
    p.add_argument("--metric", choices=["min", "mean", "median"])
    p.add_argument("--space", choices=["image", "feature"])
    p.add_argument("--stride", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--plot-data", action="store_true", dest="plot_data",
                   help="also write heatmap-on-image overlay PNGs")
    p.add_argument("--config")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", help="evaluate heatmaps against box annotations")
    p.add_argument("--heatmaps", required=True, help="directory of .phmf files")
    p.add_argument("--boxes", required=True, help="annotation CSV")
    p.add_argument("--out", required=True, help="metrics JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theory", help="run the AUC convergence sweep")
    p.add_argument("--mu-sep", type=float, dest="mu_sep")
    p.add_argument("--sigma", type=float)
    p.add_argument("--m-list", dest="m_list")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="sweep CSV output path")
    p.add_argument("--config")
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
