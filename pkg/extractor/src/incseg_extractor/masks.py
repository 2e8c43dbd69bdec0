"""Class-agnostic mask generation backends.

Two interchangeable sources of binary region masks:

* ``sam``: the promptless automatic mask generator of a segment-anything
  model. Needs torch plus a checkpoint file; imports lazily so the package
  works without the model stack installed.
* ``felzenszwalb``: a classical graph-based over-segmentation. Training-free
  and fully deterministic; the default when no checkpoint is available and
  the backend used by the test suite.

Both return one binary mask per proposed region; consolidation into a single
non-overlapping map is the engine's job downstream.
"""

from __future__ import annotations

import numpy as np


class MaskBackendError(RuntimeError):
    pass


def generate_masks_felzenszwalb(
    image: np.ndarray, scale: float = 200.0, sigma: float = 0.6, min_size: int = 30
) -> list[np.ndarray]:
    """Graph-based segmentation; one mask per segment, largest first."""
    from skimage.segmentation import felzenszwalb

    segments = felzenszwalb(image, scale=scale, sigma=sigma, min_size=min_size)
    masks = []
    for seg_id in np.unique(segments):
        mask = segments == seg_id
        masks.append(mask)
    masks.sort(key=lambda m: -int(np.count_nonzero(m)))
    return masks


def generate_masks_sam(
    image: np.ndarray,
    checkpoint: str,
    model_type: str = "vit_h",
    device: str = "cpu",
    points_per_side: int = 32,
) -> list[np.ndarray]:
    """Run the automatic mask generator, preserving its output order."""
    try:
        import torch  # noqa: F401
        from segment_anything import SamAutomaticMaskGenerator, sam_model_registry
    except ImportError as exc:
        raise MaskBackendError(
            "the 'sam' backend needs torch and segment-anything installed "
            "(pip install 'incseg-extractor[models]' segment-anything)"
        ) from exc
    try:
        sam = sam_model_registry[model_type](checkpoint=checkpoint)
    except (FileNotFoundError, KeyError) as exc:
        raise MaskBackendError(f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
    sam.to(device)
    generator = SamAutomaticMaskGenerator(sam, points_per_side=points_per_side)
    return [record["segmentation"].astype(bool) for record in generator.generate(image)]


BACKENDS = {
    "felzenszwalb": generate_masks_felzenszwalb,
    "sam": generate_masks_sam,
}


def generate_masks(image: np.ndarray, backend: str = "felzenszwalb", **kwargs) -> list[np.ndarray]:
    if backend not in BACKENDS:
        raise MaskBackendError(f"unknown mask backend {backend!r}, have {sorted(BACKENDS)}")
    return BACKENDS[backend](image, **kwargs)
