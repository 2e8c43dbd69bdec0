"""Consolidation of class-agnostic binary masks into object-level label maps.

A mask generator emits many overlapping, part-level masks per image. This
module filters out near-full-image masks, orders the rest by area, and paints
them largest-first into a single integer label map where every pixel belongs
to at most one region. Regions are then available as tight-bbox proposals and
background-zeroed image crops for downstream embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

__all__ = [
    "RawMask",
    "RawMaskSet",
    "AggregatedMask",
    "RegionProposal",
    "RoiPatch",
    "filter_by_area",
    "sort_by_area",
    "aggregate",
    "extract_regions",
    "crop_rois",
]


@dataclass
class RawMask:
    """One binary mask plus its area metadata (area == number of 1-pixels)."""

    pixels: np.ndarray  # (H, W) uint8, 1 = foreground
    area: int

    @classmethod
    def from_pixels(cls, pixels: np.ndarray) -> "RawMask":
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(pixels=pixels, area=int(np.count_nonzero(pixels)))


@dataclass
class RawMaskSet:
    """All masks generated for one image, in generator output order."""

    image_id: str
    height: int
    width: int
    masks: list[RawMask] = field(default_factory=list)


@dataclass
class AggregatedMask:
    """Non-overlapping region label map; 0 = unassigned, 1..K = region ids."""

    image_id: str
    labels: np.ndarray  # (H, W) int32


@dataclass
class RegionProposal:
    region_id: int
    bbox: tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max), inclusive
    pixel_count: int


@dataclass
class RoiPatch:
    """Image crop over a region's bbox with non-region pixels zero-filled."""

    region_id: int
    pixels: np.ndarray  # (h, w, 3)


def _check_dims(masks: RawMaskSet) -> None:
    shape = (masks.height, masks.width)
    for i, m in enumerate(masks.masks):
        if m.pixels.shape != shape:
            raise FormatError(
                f"mask {i} has shape {m.pixels.shape}, set header says {shape}"
            )


def filter_by_area(masks: RawMaskSet, tau_area: float) -> RawMaskSet:
    """Drop masks that cover at least ``tau_area`` of the image.

    Keeps exactly the masks with ``area < tau_area * H * W``, preserving the
    input order. Near-full-image masks rarely correspond to single objects.
    """
    if not 0.0 < tau_area <= 1.0:
        raise ValueError(f"tau_area must be in (0, 1], got {tau_area}")
    _check_dims(masks)
    limit = tau_area * masks.height * masks.width
    kept = [m for m in masks.masks if m.area < limit]
    return RawMaskSet(masks.image_id, masks.height, masks.width, kept)


def sort_by_area(masks: RawMaskSet) -> RawMaskSet:
    """Order masks by descending area; equal areas keep their input order."""
    ordered = sorted(masks.masks, key=lambda m: -m.area)
    return RawMaskSet(masks.image_id, masks.height, masks.width, ordered)


def aggregate(masks: RawMaskSet, tau_area: float = 0.9, min_pixels: int = 1) -> AggregatedMask:
    """Paint filtered masks largest-first into one non-overlapping label map.

    Each mask claims only the pixels still unassigned when its turn comes. A
    mask that would contribute fewer than ``min_pixels`` new pixels (default
    1, i.e. any fully occluded mask) is skipped without consuming a label, so
    region ids stay contiguous 1..K.
    """
    ordered = sort_by_area(filter_by_area(masks, tau_area))
    labels = np.zeros((masks.height, masks.width), dtype=np.int32)
    next_id = 1
    for m in ordered.masks:
        fresh = (m.pixels != 0) & (labels == 0)
        if int(np.count_nonzero(fresh)) >= max(min_pixels, 1):
            labels[fresh] = next_id
            next_id += 1
    return AggregatedMask(masks.image_id, labels)


def extract_regions(agg: AggregatedMask) -> list[RegionProposal]:
    """Return one proposal per region id, ascending, with tight bboxes."""
    labels = agg.labels
    n_regions = int(labels.max(initial=0))
    proposals = []
    for rid in range(1, n_regions + 1):
        rows, cols = np.nonzero(labels == rid)
        if rows.size == 0:
            raise ValueError(f"label map is not contiguous: region {rid} has no pixels")
        bbox = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
        proposals.append(RegionProposal(region_id=rid, bbox=bbox, pixel_count=rows.size))
    return proposals


def crop_rois(image: np.ndarray, agg: AggregatedMask) -> list[RoiPatch]:
    """Crop each region's bbox from ``image``, zero-filling non-region pixels."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.shape[:2] != agg.labels.shape:
        raise FormatError(
            f"image shape {image.shape[:2]} does not match label map {agg.labels.shape}"
        )
    patches = []
    for prop in extract_regions(agg):
        r0, c0, r1, c1 = prop.bbox
        crop = image[r0 : r1 + 1, c0 : c1 + 1].copy()
        region = agg.labels[r0 : r1 + 1, c0 : c1 + 1] == prop.region_id
        crop[~region] = 0
        patches.append(RoiPatch(region_id=prop.region_id, pixels=crop))
    return patches
