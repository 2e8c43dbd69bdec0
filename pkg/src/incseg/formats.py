"""Binary and text codecs for every artifact that crosses a process boundary.

Four little-endian binary containers tie the pipeline stages together:

  SMSK  raw binary masks with area metadata, RLE-compressed
        'SMSK' | u32 version=1 | u32 H | u32 W | u32 N
        per mask: u64 area | u32 rle_len | rle_len x u32 run lengths
        (runs alternate 0s/1s starting with a 0-run, row-major order)
  SAGG  integer label map (region ids, class ids, or ground truth)
        'SAGG' | u32 version=1 | u32 H | u32 W | H*W x u16 labels row-major
  SEMB  region embeddings
        'SEMB' | u32 version=1 | u32 count | u32 dim
        per record: u16 id_len | utf-8 image id | u32 region_id |
                    i32 gt_class (-1 = unknown) | dim x f32
  SPRO  prototype bank
        'SPRO' | u32 version=1 | u32 dim | u32 n_classes
        per class: u32 class_id | u16 name_len | utf-8 name |
                   u32 registered_at_step | f32 variance_score |
                   u32 n_prototypes | n_prototypes x dim x f32

Writers always emit canonical bytes, so write -> read -> write is the
identity on the byte level.
"""

from __future__ import annotations

import struct

import numpy as np

from .classify import Prediction
from .errors import FormatError
from .maskagg import AggregatedMask, RawMask, RawMaskSet
from .prototypes import ClassPrototypes, PrototypeBank, RegionEmbedding

__all__ = [
    "write_mask_set",
    "read_mask_set",
    "write_label_map",
    "read_label_map",
    "write_embeddings",
    "read_embeddings",
    "save_bank",
    "load_bank",
    "write_predictions",
    "read_predictions",
]

MAGIC_SMSK = b"SMSK"
MAGIC_SAGG = b"SAGG"
MAGIC_SEMB = b"SEMB"
MAGIC_SPRO = b"SPRO"
FORMAT_VERSION = 1

_U16_MAX = 0xFFFF
_U32_MAX = 0xFFFFFFFF


class _Reader:
    """Cursor over immutable bytes; every read checks for truncation."""

    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes):
        self._buf = buf
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._buf):
            raise FormatError(
                f"truncated payload: wanted {n} bytes at offset {self._pos}, "
                f"have {len(self._buf) - self._pos}"
            )
        out = self._buf[self._pos : self._pos + n]
        self._pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def done(self) -> bool:
        return self._pos == len(self._buf)


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")


def _expect_end(r: _Reader, what: str) -> None:
    if not r.done():
        raise FormatError(f"trailing bytes after {what}")


# ---------------------------------------------------------------- SMSK

def _rle_encode(flat: np.ndarray) -> np.ndarray:
    # Canonical runs: first entry is the leading 0-run (may be 0), every
    # later entry is strictly positive, runs sum to the pixel count.
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds)
    if flat[0] != 0:
        runs = np.concatenate(([0], runs))
    return runs.astype("<u4")


def _rle_decode(runs: np.ndarray, n_pixels: int) -> np.ndarray:
    if int(runs.sum()) != n_pixels:
        raise FormatError(f"RLE runs sum to {int(runs.sum())}, expected {n_pixels} pixels")
    values = np.zeros(runs.size, dtype=np.uint8)
    values[1::2] = 1
    return np.repeat(values, runs)


def write_mask_set(masks: RawMaskSet) -> bytes:
    h, w = masks.height, masks.width
    if h < 1 or w < 1:
        raise FormatError(f"grid dimensions must be >= 1, got {h}x{w}")
    if len(masks.masks) > _U32_MAX:
        raise FormatError("too many masks")
    parts = [MAGIC_SMSK, struct.pack("<IIII", FORMAT_VERSION, h, w, len(masks.masks))]
    for i, m in enumerate(masks.masks):
        if m.pixels.shape != (h, w):
            raise FormatError(f"mask {i} shape {m.pixels.shape} != header {h}x{w}")
        flat = np.ascontiguousarray(m.pixels, dtype=np.uint8).reshape(-1)
        if m.area != int(np.count_nonzero(flat)):
            raise FormatError(
                f"mask {i} area metadata {m.area} != {int(np.count_nonzero(flat))} foreground pixels"
            )
        runs = _rle_encode(flat)
        parts.append(struct.pack("<QI", m.area, runs.size))
        parts.append(runs.tobytes())
    return b"".join(parts)


def read_mask_set(data: bytes, image_id: str = "") -> RawMaskSet:
    r = _Reader(data)
    _check_header(r, MAGIC_SMSK)
    h, w, n = r.u32(), r.u32(), r.u32()
    if h < 1 or w < 1:
        raise FormatError(f"grid dimensions must be >= 1, got {h}x{w}")
    out = []
    for i in range(n):
        area = r.u64()
        rle_len = r.u32()
        runs = np.frombuffer(r.take(4 * rle_len), dtype="<u4")
        pixels = _rle_decode(runs, h * w).reshape(h, w)
        if area != int(np.count_nonzero(pixels)):
            raise FormatError(f"mask {i}: area metadata {area} disagrees with RLE content")
        out.append(RawMask(pixels=pixels, area=area))
    _expect_end(r, "mask set")
    return RawMaskSet(image_id=image_id, height=h, width=w, masks=out)


# ---------------------------------------------------------------- SAGG

def write_label_map(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
        raise FormatError(f"label map must be 2-D and non-empty, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > _U16_MAX:
        raise FormatError("labels out of u16 range")
    h, w = labels.shape
    header = MAGIC_SAGG + struct.pack("<III", FORMAT_VERSION, h, w)
    return header + np.ascontiguousarray(labels, dtype="<u2").tobytes()


def read_label_map(data: bytes) -> np.ndarray:
    r = _Reader(data)
    _check_header(r, MAGIC_SAGG)
    h, w = r.u32(), r.u32()
    if h < 1 or w < 1:
        raise FormatError(f"grid dimensions must be >= 1, got {h}x{w}")
    labels = np.frombuffer(r.take(2 * h * w), dtype="<u2").reshape(h, w)
    _expect_end(r, "label map")
    return labels.astype(np.int32)


def write_aggregated_mask(agg: AggregatedMask) -> bytes:
    return write_label_map(agg.labels)


# ---------------------------------------------------------------- SEMB

def write_embeddings(embeddings: list[RegionEmbedding], dim: int) -> bytes:
    parts = [MAGIC_SEMB, struct.pack("<III", FORMAT_VERSION, len(embeddings), dim)]
    for i, e in enumerate(embeddings):
        vec = np.asarray(e.vector)
        if vec.shape != (dim,):
            raise FormatError(f"record {i}: vector shape {vec.shape} != ({dim},)")
        encoded = e.image_id.encode("utf-8")
        if len(encoded) > _U16_MAX:
            raise FormatError(f"record {i}: image id longer than {_U16_MAX} bytes")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<Ii", e.region_id, e.gt_class))
        parts.append(np.ascontiguousarray(vec, dtype="<f4").tobytes())
    return b"".join(parts)


def read_embeddings(data: bytes) -> list[RegionEmbedding]:
    r = _Reader(data)
    _check_header(r, MAGIC_SEMB)
    count, dim = r.u32(), r.u32()
    out = []
    for _ in range(count):
        id_len = r.u16()
        image_id = r.take(id_len).decode("utf-8")
        region_id = r.u32()
        gt_class = r.i32()
        vec = np.frombuffer(r.take(4 * dim), dtype="<f4").copy()
        out.append(
            RegionEmbedding(image_id=image_id, region_id=region_id, vector=vec, gt_class=gt_class)
        )
    _expect_end(r, "embeddings")
    return out


def embedding_dim(data: bytes) -> int:
    """Read just the dimension field from an embeddings payload."""
    r = _Reader(data)
    _check_header(r, MAGIC_SEMB)
    r.u32()
    return r.u32()


# ---------------------------------------------------------------- SPRO

def save_bank(bank: PrototypeBank) -> bytes:
    parts = [MAGIC_SPRO, struct.pack("<III", FORMAT_VERSION, bank.dim, len(bank.classes))]
    for class_id, entry in bank.classes.items():
        encoded = entry.class_name.encode("utf-8")
        if len(encoded) > _U16_MAX:
            raise FormatError(f"class {class_id}: name longer than {_U16_MAX} bytes")
        protos = np.ascontiguousarray(entry.prototypes, dtype="<f4")
        if protos.ndim != 2 or protos.shape[1] != bank.dim:
            raise FormatError(f"class {class_id}: prototype shape {protos.shape}")
        parts.append(struct.pack("<IH", class_id, len(encoded)))
        parts.append(encoded)
        parts.append(
            struct.pack("<IfI", entry.registered_at_step, entry.variance_score, protos.shape[0])
        )
        parts.append(protos.tobytes())
    return b"".join(parts)


def load_bank(data: bytes) -> PrototypeBank:
    # The step log is rebuilt from per-class records: classes are stored in
    # registration order and each carries its registration step.
    r = _Reader(data)
    _check_header(r, MAGIC_SPRO)
    dim, n_classes = r.u32(), r.u32()
    bank = PrototypeBank(dim)
    for _ in range(n_classes):
        class_id = r.u32()
        name = r.take(r.u16()).decode("utf-8")
        step = r.u32()
        score = r.f32()
        n_protos = r.u32()
        protos = np.frombuffer(r.take(4 * n_protos * dim), dtype="<f4").reshape(n_protos, dim).copy()
        protos.setflags(write=False)
        if class_id in bank.classes:
            raise FormatError(f"duplicate class {class_id} in bank payload")
        bank.classes[class_id] = ClassPrototypes(
            class_id=class_id,
            class_name=name,
            prototypes=protos,
            registered_at_step=step,
            variance_score=score,
        )
        bank.step_log.append((step, class_id))
    _expect_end(r, "prototype bank")
    return bank


# ------------------------------------------------------------- text files

def write_predictions(preds: list[Prediction]) -> str:
    """One tab-separated record per line, similarities at 9 significant digits."""
    lines = [
        f"{p.image_id}\t{p.region_id}\t{p.predicted_class}\t{p.best_similarity:.9g}"
        for p in preds
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def read_predictions(text: str) -> list[Prediction]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"line {lineno}: expected 4 tab-separated fields")
        try:
            out.append(
                Prediction(
                    image_id=fields[0],
                    region_id=int(fields[1]),
                    predicted_class=int(fields[2]),
                    best_similarity=float(fields[3]),
                )
            )
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    return out
