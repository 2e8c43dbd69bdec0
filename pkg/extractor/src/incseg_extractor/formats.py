"""Writers for the engine's binary inputs and a reader for its label maps.

Implemented against the wire layout, not against the engine's code, so the
two sides cross-check each other:

  SMSK  'SMSK' | u32 version=1 | u32 H | u32 W | u32 N
        per mask: u64 area | u32 rle_len | rle_len x u32 runs
        (alternating 0/1 run lengths, starting with a 0-run, row-major)
  SEMB  'SEMB' | u32 version=1 | u32 count | u32 dim
        per record: u16 id_len | utf-8 image id | u32 region_id |
                    i32 gt_class (-1 unknown) | dim x f32
  SAGG  'SAGG' | u32 version=1 | u32 H | u32 W | H*W x u16 row-major
"""

from __future__ import annotations

import struct

import numpy as np

VERSION = 1


def encode_mask_file(height: int, width: int, masks: list[np.ndarray]) -> bytes:
    """Pack binary masks (bool/0-1 arrays) into an SMSK payload."""
    parts = [b"SMSK", struct.pack("<IIII", VERSION, height, width, len(masks))]
    for mask in masks:
        flat = np.ascontiguousarray(mask, dtype=np.uint8).reshape(-1)
        if flat.size != height * width:
            raise ValueError(f"mask size {flat.size} != {height}x{width}")
        change = np.flatnonzero(np.diff(flat)) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds)
        if flat[0] != 0:
            runs = np.concatenate(([0], runs))
        area = int(np.count_nonzero(flat))
        parts.append(struct.pack("<QI", area, runs.size))
        parts.append(runs.astype("<u4").tobytes())
    return b"".join(parts)


def encode_embedding_file(records: list[tuple[str, int, int, np.ndarray]], dim: int) -> bytes:
    """Pack (image_id, region_id, gt_class, vector) records into SEMB bytes."""
    parts = [b"SEMB", struct.pack("<III", VERSION, len(records), dim)]
    for image_id, region_id, gt_class, vector in records:
        vec = np.ascontiguousarray(vector, dtype="<f4")
        if vec.shape != (dim,):
            raise ValueError(f"vector shape {vec.shape} != ({dim},)")
        encoded = image_id.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<Ii", region_id, gt_class))
        parts.append(vec.tobytes())
    return b"".join(parts)


def decode_label_map(data: bytes) -> np.ndarray:
    """Unpack an SAGG label map into an (H, W) int array."""
    if data[:4] != b"SAGG":
        raise ValueError(f"bad magic {data[:4]!r}")
    version, h, w = struct.unpack("<III", data[4:16])
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    body = data[16 : 16 + 2 * h * w]
    if len(body) != 2 * h * w or len(data) != 16 + 2 * h * w:
        raise ValueError("label map payload has the wrong size")
    return np.frombuffer(body, dtype="<u2").reshape(h, w).astype(np.int32)


def encode_label_map(labels: np.ndarray) -> bytes:
    """Pack an (H, W) integer map into SAGG bytes (used for ground truth)."""
    labels = np.asarray(labels)
    h, w = labels.shape
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise ValueError("labels out of u16 range")
    return b"SAGG" + struct.pack("<III", VERSION, h, w) + labels.astype("<u2").tobytes()
