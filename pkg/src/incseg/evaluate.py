"""Pixel-level confusion matrices, IoU/precision/recall, and segment-quality runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classify import PredictedLabelMap, classify_batch, render
from .maskagg import AggregatedMask
from .prototypes import PrototypeBank, RegionEmbedding

__all__ = [
    "IGNORE_LABEL",
    "ConfusionMatrix",
    "EvalReport",
    "accumulate",
    "compute_report",
    "segment_quality",
    "format_report",
]

IGNORE_LABEL = 255


@dataclass
class ConfusionMatrix:
    """Pixel counts; rows index ground truth, columns index prediction."""

    n_classes: int
    counts: np.ndarray = field(default=None)  # (n_classes, n_classes) int64

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)


@dataclass
class EvalReport:
    per_class_iou: dict[int, float]
    per_class_precision: dict[int, float]
    per_class_recall: dict[int, float]
    miou: float
    macro_precision: float
    macro_recall: float
    evaluated_classes: set[int]


def _as_labels(maybe_map) -> np.ndarray:
    if isinstance(maybe_map, PredictedLabelMap):
        return maybe_map.labels
    return np.asarray(maybe_map)


def accumulate(cm: ConfusionMatrix, pred, gt) -> ConfusionMatrix:
    """Add one image's pixels to ``cm``; ignore-label pixels touch nothing.

    Commutative and associative across images, so per-image accumulation in
    any order gives the same matrix as one pass over concatenated pixels.
    """
    pred = _as_labels(pred)
    gt = _as_labels(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    keep = gt != IGNORE_LABEL
    gt_kept = gt[keep].astype(np.int64)
    pred_kept = pred[keep].astype(np.int64)
    n = cm.n_classes
    if gt_kept.size:
        if gt_kept.min() < 0 or gt_kept.max() >= n:
            raise ValueError(f"ground-truth class id out of range [0, {n})")
        if pred_kept.min() < 0 or pred_kept.max() >= n:
            raise ValueError(f"predicted class id out of range [0, {n})")
        flat = np.bincount(gt_kept * n + pred_kept, minlength=n * n)
        cm.counts += flat.reshape(n, n)
    return cm


def compute_report(cm: ConfusionMatrix, include_bg: bool = True) -> EvalReport:
    """Per-class IoU/precision/recall plus unweighted macro averages.

    A class that never appears in ground truth or prediction is left out of
    the means entirely. Ratios with an empty denominator score 0 (the class
    is still evaluated because it appeared on the other side).
    """
    counts = cm.counts
    if counts.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0).astype(np.float64) - tp
    fn = counts.sum(axis=1).astype(np.float64) - tp

    evaluated = [
        c
        for c in range(cm.n_classes)
        if (tp[c] + fp[c] + fn[c]) > 0 and (include_bg or c != 0)
    ]
    if not evaluated:
        raise ValueError("no classes to evaluate")

    def ratio(num: float, den: float) -> float:
        return num / den if den > 0 else 0.0

    iou = {c: ratio(tp[c], tp[c] + fp[c] + fn[c]) for c in evaluated}
    precision = {c: ratio(tp[c], tp[c] + fp[c]) for c in evaluated}
    recall = {c: ratio(tp[c], tp[c] + fn[c]) for c in evaluated}
    return EvalReport(
        per_class_iou=iou,
        per_class_precision=precision,
        per_class_recall=recall,
        miou=float(np.mean([iou[c] for c in evaluated])),
        macro_precision=float(np.mean([precision[c] for c in evaluated])),
        macro_recall=float(np.mean([recall[c] for c in evaluated])),
        evaluated_classes=set(evaluated),
    )


def segment_quality(
    segment_maps: dict[str, AggregatedMask],
    embeddings: dict[str, list[RegionEmbedding]],
    gt_maps: dict[str, np.ndarray],
    bank: PrototypeBank,
    tau_sim: float,
    n_classes: int | None = None,
    include_bg: bool = True,
) -> EvalReport:
    """Score a segment source end to end through the prototype classifier.

    Any region-proposal source (generator output, aggregated maps, oracle
    segments) can be compared on equal footing: its regions are classified
    against ``bank``, painted into label maps, and evaluated against ground
    truth pixel by pixel.
    """
    if set(segment_maps) != set(gt_maps) or set(segment_maps) != set(embeddings):
        raise ValueError("segment, embedding, and ground-truth image ids are misaligned")
    if n_classes is None:
        max_id = max(bank.classes, default=0)
        for gt in gt_maps.values():
            valid = gt[gt != IGNORE_LABEL]
            if valid.size:
                max_id = max(max_id, int(valid.max()))
        n_classes = max_id + 1
    cm = ConfusionMatrix(n_classes)
    for image_id in sorted(segment_maps):
        agg = segment_maps[image_id]
        embs = embeddings[image_id]
        region_ids = {e.region_id for e in embs}
        present = set(np.unique(agg.labels)) - {0}
        if region_ids != present:
            raise ValueError(
                f"{image_id}: embedding region ids {sorted(region_ids)} do not match "
                f"map regions {sorted(present)}"
            )
        preds = classify_batch(embs, bank, tau_sim)
        accumulate(cm, render(agg, preds), gt_maps[image_id])
    return compute_report(cm, include_bg=include_bg)


def format_report(report: EvalReport, class_names: dict[int, str] | None = None) -> str:
    """Readable table plus machine lines (`id<TAB>iou<TAB>precision<TAB>recall`)."""
    names = class_names or {}
    lines = []
    header = f"{'class':>8}  {'name':<16} {'iou':>8} {'precision':>10} {'recall':>8}"
    lines.append(header)
    lines.append("-" * len(header))
    for c in sorted(report.evaluated_classes):
        lines.append(
            f"{c:>8}  {names.get(c, ''):<16} {report.per_class_iou[c]:>8.4f} "
            f"{report.per_class_precision[c]:>10.4f} {report.per_class_recall[c]:>8.4f}"
        )
    lines.append("")
    for c in sorted(report.evaluated_classes):
        lines.append(
            f"{c}\t{report.per_class_iou[c]:.4f}\t{report.per_class_precision[c]:.4f}"
            f"\t{report.per_class_recall[c]:.4f}"
        )
    lines.append(
        f"summary\tmiou={report.miou:.4f}\tprecision={report.macro_precision:.4f}"
        f"\trecall={report.macro_recall:.4f}"
    )
    return "\n".join(lines) + "\n"
