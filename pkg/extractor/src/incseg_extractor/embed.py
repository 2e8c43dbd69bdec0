"""Region-of-interest embedding backends.

RoIs are cut from the image the same way the engine defines them: the tight
bbox of each region in the aggregated label map, with pixels outside the
region zero-filled. The crop (plus its validity mask) goes to one of two
embedders:

* ``swin``: frozen torchvision Swin-B features, globally average-pooled to
  a 1024-d vector. Needs torch/torchvision and a local weights file.
* ``histogram``: a deterministic 512-d color histogram (8x8x8 RGB bins over
  region pixels only). No models, no downloads; identical regions map to
  identical vectors. The default and the test-suite backend.

Every backend L2-normalizes its output.
"""

from __future__ import annotations

import numpy as np


class EmbedBackendError(RuntimeError):
    pass


def extract_rois(image: np.ndarray, labels: np.ndarray) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Per region id: (region_id, zero-filled bbox crop, in-region mask)."""
    if image.shape[:2] != labels.shape:
        raise ValueError(f"image {image.shape[:2]} and label map {labels.shape} disagree")
    rois = []
    for rid in range(1, int(labels.max(initial=0)) + 1):
        rows, cols = np.nonzero(labels == rid)
        if rows.size == 0:
            raise ValueError(f"label map skips region id {rid}")
        r0, r1 = int(rows.min()), int(rows.max())
        c0, c1 = int(cols.min()), int(cols.max())
        crop = image[r0 : r1 + 1, c0 : c1 + 1].copy()
        inside = labels[r0 : r1 + 1, c0 : c1 + 1] == rid
        crop[~inside] = 0
        rois.append((rid, crop, inside))
    return rois


def _l2(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # an all-black region still needs a valid direction; use a fixed one
        out = np.zeros(vec.shape, dtype=np.float64)
        out[0] = 1.0
        return out
    return vec / norm


class HistogramEmbedder:
    """8x8x8 RGB histogram over region pixels, unit-normalized. dim = 512."""

    dim = 512
    bins = 8

    def __call__(self, crop: np.ndarray, inside: np.ndarray) -> np.ndarray:
        pixels = crop[inside].reshape(-1, 3).astype(np.int64)
        quantized = pixels * self.bins // 256
        flat = (quantized[:, 0] * self.bins + quantized[:, 1]) * self.bins + quantized[:, 2]
        hist = np.bincount(flat, minlength=self.dim).astype(np.float64)
        return _l2(hist)


class SwinEmbedder:
    """Frozen Swin-B backbone, ImageNet preprocessing, pooled features. dim = 1024."""

    dim = 1024

    def __init__(self, weights_path: str, device: str = "cpu", input_size: int = 224):
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise EmbedBackendError(
                "the 'swin' backend needs torch and torchvision "
                "(pip install 'incseg-extractor[models]')"
            ) from exc
        self._torch = torch
        model = torchvision.models.swin_b(weights=None)
        try:
            state = torch.load(weights_path, map_location=device, weights_only=True)
        except (FileNotFoundError, OSError) as exc:
            raise EmbedBackendError(f"cannot load weights {weights_path!r}: {exc}") from exc
        model.load_state_dict(state)
        model.head = torch.nn.Identity()  # pooled 1024-d features
        model.eval().to(device)
        self._model = model
        self._device = device
        self._size = input_size
        self._mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
        self._std = np.array([0.229, 0.224, 0.225], dtype=np.float32)

    def __call__(self, crop: np.ndarray, inside: np.ndarray) -> np.ndarray:
        from PIL import Image

        torch = self._torch
        resized = np.asarray(
            Image.fromarray(crop.astype(np.uint8)).resize((self._size, self._size), Image.BILINEAR),
            dtype=np.float32,
        )
        tensor = (resized / 255.0 - self._mean) / self._std
        batch = torch.from_numpy(tensor.transpose(2, 0, 1)[None]).to(self._device)
        with torch.no_grad():
            features = self._model(batch)[0].cpu().numpy().astype(np.float64)
        return _l2(features)


def build_embedder(backend: str, weights_path: str | None = None, device: str = "cpu"):
    if backend == "histogram":
        return HistogramEmbedder()
    if backend == "swin":
        if not weights_path:
            raise EmbedBackendError("the 'swin' backend needs --weights pointing at a local file")
        return SwinEmbedder(weights_path, device=device)
    raise EmbedBackendError(f"unknown embedding backend {backend!r}")
