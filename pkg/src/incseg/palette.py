"""Fixed color palette for rendering label maps as images."""

from __future__ import annotations

import numpy as np

__all__ = ["color_palette", "colorize"]


def color_palette(n: int = 256) -> np.ndarray:
    """The standard bit-interleaved segmentation palette (background black).

    Entry i spreads the bits of i across the three channels, which is the
    convention most pixel-labeling datasets render with.
    """
    palette = np.zeros((n, 3), dtype=np.uint8)
    for i in range(n):
        cid = i
        r = g = b = 0
        for shift in range(8):
            r |= ((cid >> 0) & 1) << (7 - shift)
            g |= ((cid >> 1) & 1) << (7 - shift)
            b |= ((cid >> 2) & 1) << (7 - shift)
            cid >>= 3
        palette[i] = (r, g, b)
    return palette


def colorize(labels: np.ndarray) -> np.ndarray:
    """Map a label map to an (H, W, 3) uint8 image; ids wrap past 255."""
    return color_palette()[np.asarray(labels) % 256]
