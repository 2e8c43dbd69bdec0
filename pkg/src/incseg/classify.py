"""Thresholded nearest-prototype classification of region embeddings.

A region is assigned the class whose (sub-)prototype has the highest cosine
similarity to its embedding, unless that best score stays below the
similarity threshold, in which case the region falls back to background.
The fallback is what keeps regions of not-yet-seen classes from being
hallucinated into the current label set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateInputError
from .maskagg import AggregatedMask
from .prototypes import PrototypeBank, RegionEmbedding

__all__ = [
    "BG_CLASS",
    "Prediction",
    "PredictedLabelMap",
    "classify",
    "classify_batch",
    "render",
]

BG_CLASS = 0

DEFAULT_TAU_SIM = 0.5


@dataclass
class Prediction:
    image_id: str
    region_id: int
    predicted_class: int  # BG_CLASS when best_similarity < tau_sim
    best_similarity: float
    runner_up_class: Optional[int] = None


@dataclass
class PredictedLabelMap:
    """Per-pixel class ids; background and unassigned pixels are BG_CLASS."""

    image_id: str
    labels: np.ndarray  # (H, W) int32


def classify(z: RegionEmbedding, bank: PrototypeBank, tau_sim: float = DEFAULT_TAU_SIM) -> Prediction:
    """Assign ``z`` the best-matching class, or background below ``tau_sim``.

    Similarity is the dot product of the unit-normalized embedding with each
    stored unit prototype (i.e. cosine, so any positive rescaling of ``z``
    gives the same answer). Argmax ties go to the lowest class id, then the
    lowest sub-prototype index; the threshold is inclusive (>= keeps the
    class).
    """
    if len(bank) == 0:
        raise ValueError("prototype bank is empty")
    vec = np.asarray(z.vector, dtype=np.float64)
    if vec.shape != (bank.dim,):
        raise ValueError(f"embedding dim {vec.shape} does not match bank dim ({bank.dim},)")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise DegenerateInputError("cannot classify a zero embedding")
    vec = vec / norm

    best_class = None
    best_sim = -np.inf
    runner_class = None
    runner_sim = -np.inf
    for class_id in sorted(bank.classes):
        sims = bank.classes[class_id].prototypes.astype(np.float64) @ vec
        class_best = float(sims.max())
        if class_best > best_sim:
            runner_class, runner_sim = best_class, best_sim
            best_class, best_sim = class_id, class_best
        elif class_best > runner_sim:
            runner_class, runner_sim = class_id, class_best

    predicted = best_class if best_sim >= tau_sim else BG_CLASS
    return Prediction(
        image_id=z.image_id,
        region_id=z.region_id,
        predicted_class=predicted,
        best_similarity=best_sim,
        runner_up_class=runner_class,
    )


def classify_batch(
    embeddings: list[RegionEmbedding], bank: PrototypeBank, tau_sim: float = DEFAULT_TAU_SIM
) -> list[Prediction]:
    """Elementwise :func:`classify`; output order matches input order."""
    out = []
    for i, emb in enumerate(embeddings):
        try:
            out.append(classify(emb, bank, tau_sim))
        except ValueError as exc:
            raise type(exc)(f"record {i}: {exc}") from exc
    return out


def render(agg: AggregatedMask, preds: list[Prediction]) -> PredictedLabelMap:
    """Paint each region's predicted class over its pixels.

    Regions without a prediction, and pixels unassigned in the aggregated
    mask, come out as background.
    """
    n_regions = int(agg.labels.max(initial=0))
    lut = np.full(n_regions + 1, BG_CLASS, dtype=np.int32)
    seen = set()
    for p in preds:
        if p.region_id in seen:
            raise ValueError(f"duplicate prediction for region {p.region_id}")
        if not 1 <= p.region_id <= n_regions:
            raise ValueError(f"prediction references unknown region {p.region_id}")
        seen.add(p.region_id)
        lut[p.region_id] = p.predicted_class
    return PredictedLabelMap(image_id=agg.image_id, labels=lut[agg.labels])
