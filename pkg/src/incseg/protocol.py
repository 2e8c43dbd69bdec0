"""Class-incremental protocol: split parsing, region supervision, step runs.

A run walks an ordered partition of the class set. At every step only the
regions whose ground-truth class belongs to that step's subset are visible;
each new class is registered into the prototype bank, the bank is snapshotted
byte-for-byte, and (optionally) the whole dataset is evaluated over the
classes seen so far, with not-yet-seen classes remapped to background.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classify import classify_batch, render
from .errors import FormatError
from .evaluate import IGNORE_LABEL, ConfusionMatrix, EvalReport, accumulate, compute_report
from .maskagg import AggregatedMask
from .prototypes import (
    DEFAULT_K,
    DEFAULT_VARIANCE_THRESHOLD,
    UNKNOWN_CLASS,
    PrototypeBank,
    RegionEmbedding,
)

__all__ = [
    "UNASSIGNED",
    "TaskProtocol",
    "RegionLabel",
    "ImageRecord",
    "RunConfig",
    "StepSnapshot",
    "parse_split",
    "label_regions",
    "run_protocol",
    "backward_transfer_report",
    "BackwardTransferRow",
    "format_backward_transfer",
    "write_region_labels",
    "read_region_labels",
]

UNASSIGNED = -1

_SPLIT_RE = re.compile(r"^(\d+)-(\d+)$")


@dataclass
class TaskProtocol:
    """Ordered disjoint class subsets derived from init-inc notation."""

    class_order: list[int]
    init: int
    inc: int
    steps: list[list[int]]

    @property
    def n_steps(self) -> int:
        return len(self.steps)


def parse_split(spec: str, n_classes: int) -> TaskProtocol:
    """Parse ``"<init>-<inc>"`` into class subsets over ids 1..n_classes.

    The first step takes ``init`` classes in canonical dataset order, every
    later step takes ``inc`` more until the class list is exhausted (the last
    step may be smaller).
    """
    m = _SPLIT_RE.match(spec.strip())
    if not m:
        raise ValueError(f"malformed split {spec!r}, expected '<init>-<inc>'")
    init, inc = int(m.group(1)), int(m.group(2))
    if init < 1 or inc < 1:
        raise ValueError(f"split counts must be positive, got {spec!r}")
    if init > n_classes:
        raise ValueError(f"init {init} exceeds {n_classes} classes")
    class_order = list(range(1, n_classes + 1))
    steps = [class_order[:init]]
    for start in range(init, n_classes, inc):
        steps.append(class_order[start : start + inc])
    return TaskProtocol(class_order=class_order, init=init, inc=inc, steps=steps)


@dataclass
class RegionLabel:
    image_id: str
    region_id: int
    gt_class: int  # UNASSIGNED when no class dominates the region
    overlap_fraction: float


def label_regions(
    agg: AggregatedMask, gt: np.ndarray, theta_overlap: float = 0.5
) -> list[RegionLabel]:
    """Attach a ground-truth class to each region by majority pixel overlap.

    A region gets the non-background class covering the largest share of its
    pixels, provided that share reaches ``theta_overlap``; otherwise it stays
    unassigned. Background and ignore pixels never label a region but do
    count toward its size.
    """
    gt = np.asarray(gt)
    if gt.shape != agg.labels.shape:
        raise FormatError(
            f"ground truth shape {gt.shape} does not match label map {agg.labels.shape}"
        )
    out = []
    n_regions = int(agg.labels.max(initial=0))
    for rid in range(1, n_regions + 1):
        inside = agg.labels == rid
        total = int(np.count_nonzero(inside))
        counts = np.bincount(gt[inside].astype(np.int64))
        counts[0] = 0  # background is never a candidate
        if counts.size > IGNORE_LABEL:
            counts[IGNORE_LABEL] = 0
        best_class = int(np.argmax(counts))  # ties resolve to the lowest id
        fraction = counts[best_class] / total
        if counts[best_class] == 0:
            out.append(RegionLabel(agg.image_id, rid, UNASSIGNED, 0.0))
        elif fraction >= theta_overlap:
            out.append(RegionLabel(agg.image_id, rid, best_class, float(fraction)))
        else:
            out.append(RegionLabel(agg.image_id, rid, UNASSIGNED, float(fraction)))
    return out


@dataclass
class ImageRecord:
    """Everything the protocol needs for one image."""

    image_id: str
    agg: AggregatedMask
    embeddings: list[RegionEmbedding]
    gt: np.ndarray


@dataclass
class RunConfig:
    tau_sim: float = 0.5
    variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD
    k: int = DEFAULT_K
    seed: int = 0
    theta_overlap: float = 0.5
    evaluate: bool = True
    class_names: dict[int, str] = field(default_factory=dict)


@dataclass
class StepSnapshot:
    step: int
    bank_bytes: bytes
    registered: list[int]
    report: Optional[EvalReport]
    # Instrumentation: classes of the embeddings consumed at this step. Must
    # always be a subset of the step's class set (data isolation).
    used_classes: set[int] = field(default_factory=set)
    n_embeddings_used: int = 0
    pred_maps: dict[str, np.ndarray] = field(default_factory=dict)


def _gather_class_embeddings(
    dataset: list[ImageRecord],
    labels: dict[tuple[str, int], int],
    class_id: int,
) -> list[RegionEmbedding]:
    # Canonical order (image id, then region id) keeps float summation
    # identical no matter how the class set was partitioned into steps.
    out = []
    for rec in sorted(dataset, key=lambda r: r.image_id):
        for emb in sorted(rec.embeddings, key=lambda e: e.region_id):
            if labels.get((rec.image_id, emb.region_id)) == class_id:
                out.append(emb)
    return out


def run_protocol(
    protocol: TaskProtocol, dataset: list[ImageRecord], config: RunConfig
) -> list[StepSnapshot]:
    """Run every step of the protocol and snapshot the bank after each.

    Per-class k-means seeds are derived from ``config.seed`` and the class id
    alone, so the resulting bank depends only on which classes exist, never
    on how they were grouped into steps.
    """
    from .formats import save_bank  # local import; formats depends on this package's types

    if not dataset:
        raise ValueError("dataset is empty")
    ids = [rec.image_id for rec in dataset]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in dataset")

    valid_gt = np.array(protocol.class_order + [0, IGNORE_LABEL])
    labels: dict[tuple[str, int], int] = {}
    for rec in dataset:
        if not np.isin(rec.gt, valid_gt).all():
            bad = sorted(set(np.unique(rec.gt)) - set(valid_gt.tolist()))
            raise ValueError(f"{rec.image_id}: ground truth contains unknown class ids {bad}")
        for lab in label_regions(rec.agg, rec.gt, config.theta_overlap):
            labels[(lab.image_id, lab.region_id)] = lab.gt_class

    dim = 0
    for rec in dataset:
        if rec.embeddings:
            dim = rec.embeddings[0].vector.shape[0]
            break
    if dim == 0:
        raise ValueError("dataset contains no embeddings")

    n_classes = max(protocol.class_order) + 1
    bank = PrototypeBank(dim)
    snapshots: list[StepSnapshot] = []
    seen: set[int] = set()
    for step, step_classes in enumerate(protocol.steps):
        used: set[int] = set()
        n_used = 0
        for class_id in step_classes:
            embs = _gather_class_embeddings(dataset, labels, class_id)
            if not embs:
                raise ValueError(
                    f"step {step}: class {class_id} has no labeled regions in the dataset"
                )
            bank.register_class(
                class_id,
                config.class_names.get(class_id, str(class_id)),
                embs,
                variance_threshold=config.variance_threshold,
                k=config.k,
                seed=config.seed + class_id,
                step=step,
            )
            used.update(e.gt_class for e in embs if e.gt_class != UNKNOWN_CLASS)
            used.add(class_id)
            n_used += len(embs)
        seen.update(step_classes)

        report = None
        pred_maps: dict[str, np.ndarray] = {}
        if config.evaluate:
            cm = ConfusionMatrix(n_classes)
            keep = np.zeros(max(n_classes, IGNORE_LABEL + 1), dtype=bool)
            keep[list(seen)] = True
            keep[0] = True
            keep[IGNORE_LABEL] = True
            for rec in sorted(dataset, key=lambda r: r.image_id):
                preds = classify_batch(rec.embeddings, bank, config.tau_sim)
                pred_map = render(rec.agg, preds)
                gt_eval = np.where(keep[rec.gt], rec.gt, 0)
                accumulate(cm, pred_map, gt_eval)
                pred_maps[rec.image_id] = pred_map.labels
            report = compute_report(cm, include_bg=True)

        snapshots.append(
            StepSnapshot(
                step=step,
                bank_bytes=save_bank(bank),
                registered=list(step_classes),
                report=report,
                used_classes=used,
                n_embeddings_used=n_used,
                pred_maps=pred_maps,
            )
        )
    return snapshots


@dataclass
class BackwardTransferRow:
    class_id: int
    introduced_at: int
    iou_at_introduction: float
    iou_final: float
    delta: float

    @property
    def positive(self) -> bool:
        return self.delta > 0


def backward_transfer_report(snapshots: list[StepSnapshot]) -> list[BackwardTransferRow]:
    """Per-class IoU change between a class's introduction step and the end.

    Positive deltas mean later classes sharpened the argmax competition in
    favor of the earlier class.
    """
    scored = [s for s in snapshots if s.report is not None]
    if len(scored) < 2:
        raise ValueError("need at least two evaluated snapshots")
    final = scored[-1]
    introduced: dict[int, int] = {}
    for snap in snapshots:
        for cid in snap.registered:
            introduced.setdefault(cid, snap.step)
    by_step = {s.step: s for s in scored}
    rows = []
    for cid in sorted(introduced):
        intro_step = introduced[cid]
        if intro_step >= final.step:
            continue
        if intro_step not in by_step:
            raise ValueError(f"no evaluated snapshot for step {intro_step}")
        intro_report = by_step[intro_step].report
        if cid not in intro_report.per_class_iou or cid not in final.report.per_class_iou:
            raise ValueError(f"class {cid} missing from an evaluation report")
        then = intro_report.per_class_iou[cid]
        now = final.report.per_class_iou[cid]
        rows.append(
            BackwardTransferRow(
                class_id=cid,
                introduced_at=intro_step,
                iou_at_introduction=then,
                iou_final=now,
                delta=now - then,
            )
        )
    return rows


def format_backward_transfer(rows: list[BackwardTransferRow]) -> str:
    header = f"{'class':>8} {'step':>6} {'iou@intro':>10} {'iou@final':>10} {'delta':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        flag = "  +" if r.positive else ""
        lines.append(
            f"{r.class_id:>8} {r.introduced_at:>6} {r.iou_at_introduction:>10.4f} "
            f"{r.iou_final:>10.4f} {r.delta:>+9.4f}{flag}"
        )
    return "\n".join(lines) + "\n"


# ------------------------------------------------------- region label files

def write_region_labels(labels: list[RegionLabel]) -> str:
    """Tab-separated text: image_id, region_id, class (-1 unassigned), overlap."""
    lines = [
        f"{l.image_id}\t{l.region_id}\t{l.gt_class}\t{l.overlap_fraction:.9g}" for l in labels
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def read_region_labels(text: str) -> list[RegionLabel]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"line {lineno}: expected 4 tab-separated fields")
        try:
            out.append(
                RegionLabel(
                    image_id=fields[0],
                    region_id=int(fields[1]),
                    gt_class=int(fields[2]),
                    overlap_fraction=float(fields[3]),
                )
            )
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    return out
