"""Command-line entry points: images -> SMSK masks, images + SAGG -> SEMB."""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .embed import EmbedBackendError, build_embedder, extract_rois
from .formats import decode_label_map, encode_embedding_file, encode_mask_file
from .masks import MaskBackendError, generate_masks

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _list_images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_masks(args) -> int:
    out_dir = Path(args.out)
    try:
        images = _list_images(Path(args.images))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    backend_kwargs = {}
    if args.backend == "sam":
        backend_kwargs = {"checkpoint": args.sam_checkpoint, "device": args.device}
    elif args.backend == "felzenszwalb":
        backend_kwargs = {"scale": args.scale, "sigma": args.sigma, "min_size": args.min_size}
    failures = 0
    for path in images:
        try:
            image = _load_image(path)
            masks = generate_masks(image, backend=args.backend, **backend_kwargs)
            payload = encode_mask_file(image.shape[0], image.shape[1], masks)
            _atomic_write(out_dir / f"{path.stem}.smsk", payload)
        except (MaskBackendError, ValueError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
    if images and not failures:
        meta = [f"backend = {args.backend}"]
        meta += [f"{key} = {value}" for key, value in sorted(backend_kwargs.items())]
        _atomic_write(out_dir / "extraction.meta", ("\n".join(meta) + "\n").encode("utf-8"))
    return 1 if failures else 0


def cmd_embeddings(args) -> int:
    out_dir = Path(args.out)
    agg_dir = Path(args.agg)
    try:
        images = _list_images(Path(args.images))
        embedder = build_embedder(args.backend, weights_path=args.weights, device=args.device)
    except (FileNotFoundError, EmbedBackendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    failures = 0
    for path in images:
        agg_path = agg_dir / f"{path.stem}.sagg"
        try:
            if not agg_path.is_file():
                raise FileNotFoundError(f"no label map {agg_path} for {path.name}")
            image = _load_image(path)
            labels = decode_label_map(agg_path.read_bytes())
            records = []
            for rid, crop, inside in extract_rois(image, labels):
                vector = embedder(crop, inside)
                records.append((path.stem, rid, -1, vector.astype(np.float32)))
            payload = encode_embedding_file(records, embedder.dim)
            _atomic_write(out_dir / f"{path.stem}.semb", payload)
        except (EmbedBackendError, ValueError, OSError) as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            failures += 1
    if images and not failures:
        meta = [
            f"backend = {args.backend}",
            f"dim = {embedder.dim}",
            f"weights = {args.weights or ''}",
        ]
        _atomic_write(out_dir / "extraction.meta", ("\n".join(meta) + "\n").encode("utf-8"))
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incseg-extract",
        description="Produce SMSK mask files and SEMB embedding files for the incseg engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("masks", help="segment images into class-agnostic binary masks")
    p.add_argument("--images", required=True, help="input image directory")
    p.add_argument("--out", required=True, help="output directory for .smsk files")
    p.add_argument("--backend", choices=["felzenszwalb", "sam"], default="felzenszwalb")
    p.add_argument("--sam-checkpoint", dest="sam_checkpoint", default=None,
                   help="checkpoint file for the sam backend")
    p.add_argument("--device", default="cpu")
    p.add_argument("--scale", type=float, default=200.0, help="felzenszwalb scale (default 200)")
    p.add_argument("--sigma", type=float, default=0.6, help="felzenszwalb smoothing (default 0.6)")
    p.add_argument("--min-size", type=int, default=30, dest="min_size",
                   help="felzenszwalb minimum segment size (default 30)")
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("embeddings", help="embed RoIs from aggregated label maps")
    p.add_argument("--images", required=True, help="input image directory")
    p.add_argument("--agg", required=True, help="directory of aggregated .sagg maps")
    p.add_argument("--out", required=True, help="output directory for .semb files")
    p.add_argument("--backend", choices=["histogram", "swin"], default="histogram")
    p.add_argument("--weights", default=None, help="local weights file for the swin backend")
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_embeddings)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
