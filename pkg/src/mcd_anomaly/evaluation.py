"""Pixel-level heatmap evaluation against bounding-box annotations.

Boxes label every pixel inside and along their rectangles as positive;
everything else is negative, background included. AUROC uses the
Mann-Whitney rank statistic with mid-rank tie handling, and average
precision processes equal scores as one threshold block. Rank work is
sort-based because full-resolution images have millions of pixels.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import AnnotationError, UndefinedMetricError, UsageError

BOXES_CSV_HEADER = ["image", "xmin", "ymin", "xmax", "ymax"]


@dataclass(frozen=True)
class BoxAnnotation:
    image_id: str
    boxes: tuple[tuple[int, int, int, int], ...]  # inclusive (xmin, ymin, xmax, ymax)

    def __post_init__(self):
        for box in self.boxes:
            xmin, ymin, xmax, ymax = box
            if xmin > xmax or ymin > ymax:
                raise AnnotationError(f"{self.image_id}: degenerate box {box}")
            if min(box) < 0:
                raise AnnotationError(f"{self.image_id}: negative coordinate in box {box}")


@dataclass(frozen=True)
class PixelLabels:
    mask: np.ndarray  # bool (H, W), True = positive
    n_pos: int
    n_neg: int


def boxes_to_labels(annotation: BoxAnnotation, dims: tuple[int, int]) -> PixelLabels:
    """Union of inclusive box rectangles as a positive-pixel mask."""
    h, w = dims
    mask = np.zeros((h, w), dtype=bool)
    for box in annotation.boxes:
        xmin, ymin, xmax, ymax = box
        if xmax >= w or ymax >= h:
            raise AnnotationError(
                f"{annotation.image_id}: box {box} exceeds image bounds {w}x{h}"
            )
        mask[ymin : ymax + 1, xmin : xmax + 1] = True
    n_pos = int(mask.sum())
    return PixelLabels(mask=mask, n_pos=n_pos, n_neg=h * w - n_pos)


def _midranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties at the mean of their block's positions."""
    n = scores.size
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    block_ends = np.r_[boundaries[1:], n]
    block_rank = (boundaries + 1 + block_ends) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(block_rank, block_ends - boundaries)
    return ranks


def pixel_auc(heatmap: np.ndarray, labels: PixelLabels) -> float:
    """Probability a positive pixel outranks a negative one (rank AUC)."""
    if labels.n_pos == 0 or labels.n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined with {labels.n_pos} positive / {labels.n_neg} negative pixels"
        )
    scores = np.asarray(heatmap, dtype=np.float64).ravel()
    flat = labels.mask.ravel()
    if scores.size != flat.size:
        raise UsageError(f"heatmap has {scores.size} pixels, labels have {flat.size}")
    ranks = _midranks(scores)
    r_pos = ranks[flat].sum()
    n_pos, n_neg = labels.n_pos, labels.n_neg
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(heatmap: np.ndarray, labels: PixelLabels) -> float:
    """Precision-recall summary: sum of precision-at-block times recall
    increment, descending over score thresholds, ties as one block.
    """
    if labels.n_pos == 0:
        raise UndefinedMetricError("average precision undefined with zero positive pixels")
    scores = np.asarray(heatmap, dtype=np.float64).ravel()
    flat = labels.mask.ravel()
    if scores.size != flat.size:
        raise UsageError(f"heatmap has {scores.size} pixels, labels have {flat.size}")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = flat[order]
    n = scores.size
    boundaries = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    block_ends = np.r_[boundaries[1:], n]
    tp_cum = np.cumsum(sorted_pos)[block_ends - 1]
    precision = tp_cum / block_ends
    recall = tp_cum / labels.n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


@dataclass(frozen=True)
class DatasetReport:
    per_image: tuple[dict, ...]
    mean_auc: float
    mean_ap: float


def dataset_eval(heatmaps: dict[str, np.ndarray],
                 annotations: dict[str, BoxAnnotation]) -> DatasetReport:
    """Per-image AUC/AP plus unweighted means; ids must pair up exactly."""
    missing_ann = sorted(set(heatmaps) - set(annotations))
    missing_map = sorted(set(annotations) - set(heatmaps))
    if missing_ann or missing_map:
        raise UsageError(
            "unmatched ids: "
            f"heatmaps without boxes {missing_ann}, boxes without heatmaps {missing_map}"
        )
    rows = []
    for image_id in sorted(heatmaps):
        heatmap = heatmaps[image_id]
        labels = boxes_to_labels(annotations[image_id], heatmap.shape)
        rows.append({
            "id": image_id,
            "auc": pixel_auc(heatmap, labels),
            "ap": average_precision(heatmap, labels),
            "n_pos": labels.n_pos,
            "n_neg": labels.n_neg,
        })
    mean_auc = float(np.mean([r["auc"] for r in rows]))
    mean_ap = float(np.mean([r["ap"] for r in rows]))
    return DatasetReport(per_image=tuple(rows), mean_auc=mean_auc, mean_ap=mean_ap)


def write_metrics_json(report: DatasetReport, path) -> None:
    payload = {
        "images": list(report.per_image),
        "mean_auc": report.mean_auc,
        "mean_ap": report.mean_ap,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_boxes_csv(path) -> dict[str, BoxAnnotation]:
    """Parse `image,xmin,ymin,xmax,ymax` rows (header required) into
    per-image annotations, one row per box.
    """
    by_image: dict[str, list[tuple[int, int, int, int]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AnnotationError(f"{path}: empty annotation file") from None
        if [h.strip() for h in header] != BOXES_CSV_HEADER:
            raise AnnotationError(
                f"{path}: expected header {','.join(BOXES_CSV_HEADER)}, got {','.join(header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise AnnotationError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            image_id = row[0].strip()
            try:
                coords = tuple(int(v) for v in row[1:])
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: non-integer coordinate") from exc
            by_image.setdefault(image_id, []).append(coords)  # type: ignore[arg-type]
    return {
        image_id: BoxAnnotation(image_id=image_id, boxes=tuple(boxes))
        for image_id, boxes in by_image.items()
    }


def write_boxes_csv(annotations: dict[str, BoxAnnotation], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOXES_CSV_HEADER)
        for image_id in sorted(annotations):
            for box in annotations[image_id].boxes:
                writer.writerow([image_id, *box])
