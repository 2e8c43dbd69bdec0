"""Extraction front end: turns images into the engine's SMSK/SEMB files."""

from .embed import HistogramEmbedder, SwinEmbedder, build_embedder, extract_rois
from .formats import (
    decode_label_map,
    encode_embedding_file,
    encode_label_map,
    encode_mask_file,
)
from .masks import generate_masks

__version__ = "0.1.0"
