"""Command-line orchestration of the pipeline stages.

Stage boundaries are files, so any stage (in particular mask and embedding
extraction, which need model inference) can be swapped out by anything that
speaks the same formats. Outputs are written atomically: a temp file in the
target directory, then a rename.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from . import formats
from .errors import FormatError
from .evaluate import (
    IGNORE_LABEL,
    ConfusionMatrix,
    accumulate,
    compute_report,
    format_report,
)
from .maskagg import aggregate
from .palette import colorize
from .protocol import (
    UNASSIGNED,
    ImageRecord,
    RunConfig,
    backward_transfer_report,
    format_backward_transfer,
    parse_split,
    read_region_labels,
    run_protocol,
)
from .prototypes import PrototypeBank

SMSK_SUFFIX = ".smsk"
SAGG_SUFFIX = ".sagg"
SEMB_SUFFIX = ".semb"
SPRO_SUFFIX = ".spro"


@dataclass
class PipelineConfig:
    """Knobs for a full protocol run, with the recommended defaults."""

    split: str = "15-5"
    tau_area: float = 0.9
    tau_sim: float = 0.5
    variance_threshold: float = 0.4
    k: int = 5
    seed: int = 0
    theta_overlap: float = 0.5
    min_pixels: int = 1
    masks_dir: str = ""
    embeddings_dir: str = ""
    gt_dir: str = ""

    def validate(self) -> None:
        if not 0.0 < self.tau_area <= 1.0:
            raise ValueError(f"tau_area must be in (0, 1], got {self.tau_area}")
        if not -1.0 <= self.tau_sim <= 1.0:
            raise ValueError(f"tau_sim must be in [-1, 1], got {self.tau_sim}")
        if self.variance_threshold < 0.0:
            raise ValueError("variance_threshold must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.theta_overlap <= 1.0:
            raise ValueError(f"theta_overlap must be in [0, 1], got {self.theta_overlap}")


def parse_config(path: Path) -> PipelineConfig:
    """Read a `key = value` text config; relative paths resolve next to it."""
    cfg = PipelineConfig()
    known = {f.name: f.type for f in fields(PipelineConfig)}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
        if key.endswith("_dir"):
            setattr(cfg, key, str((path.parent / value).resolve()))
        elif key in ("k", "seed", "min_pixels"):
            setattr(cfg, key, int(value))
        elif key == "split":
            cfg.split = value
        else:
            setattr(cfg, key, float(value))
    cfg.validate()
    return cfg


def atomic_write(path: Path, data: bytes) -> None:
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


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _list_inputs(directory: Path, suffix: str) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix == suffix)


# ------------------------------------------------------------ subcommands

def cmd_aggregate(args) -> int:
    masks_dir = Path(args.masks)
    out_dir = Path(args.out)
    try:
        inputs = _list_inputs(masks_dir, SMSK_SUFFIX)
    except FileNotFoundError as exc:
        return _fail(str(exc))

    def process(path: Path) -> str | None:
        try:
            mask_set = formats.read_mask_set(path.read_bytes(), image_id=path.stem)
            agg = aggregate(mask_set, tau_area=args.tau_area, min_pixels=args.min_pixels)
            atomic_write(out_dir / f"{path.stem}{SAGG_SUFFIX}", formats.write_label_map(agg.labels))
            return None
        except (FormatError, ValueError, OSError) as exc:
            return f"{path}: {exc}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            errors = [e for e in pool.map(process, inputs) if e]
    else:
        errors = [e for e in map(process, inputs) if e]
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return 1 if errors else 0


def cmd_prototypes(args) -> int:
    try:
        payload = Path(args.embeddings).read_bytes()
        embeddings = formats.read_embeddings(payload)
        dim = formats.embedding_dim(payload)
        labels = read_region_labels(Path(args.labels).read_text())
    except (FormatError, OSError) as exc:
        return _fail(str(exc))

    by_region = {(l.image_id, l.region_id): l.gt_class for l in labels}
    by_class: dict[int, list] = {}
    for emb in sorted(embeddings, key=lambda e: (e.image_id, e.region_id)):
        cid = by_region.get((emb.image_id, emb.region_id), UNASSIGNED)
        if cid != UNASSIGNED:
            by_class.setdefault(cid, []).append(emb)
    if not by_class:
        return _fail("no labeled regions; nothing to register")

    bank = PrototypeBank(dim)
    try:
        for cid in sorted(by_class):
            bank.register_class(
                cid,
                str(cid),
                by_class[cid],
                variance_threshold=args.variance_threshold,
                k=args.k,
                seed=args.seed + cid,
                step=0,
            )
    except ValueError as exc:
        return _fail(str(exc))
    atomic_write(Path(args.bank), formats.save_bank(bank))
    return 0


def cmd_classify(args) -> int:
    from .classify import classify_batch

    try:
        bank = formats.load_bank(Path(args.bank).read_bytes())
        embeddings = formats.read_embeddings(Path(args.embeddings).read_bytes())
        preds = classify_batch(embeddings, bank, args.tau_sim)
    except (FormatError, ValueError, OSError) as exc:
        return _fail(str(exc))
    atomic_write(Path(args.out), formats.write_predictions(preds).encode("utf-8"))
    return 0


def cmd_evaluate(args) -> int:
    try:
        pred_files = {p.stem: p for p in _list_inputs(Path(args.pred), SAGG_SUFFIX)}
        gt_files = {p.stem: p for p in _list_inputs(Path(args.gt), SAGG_SUFFIX)}
    except FileNotFoundError as exc:
        return _fail(str(exc))
    missing = sorted(set(pred_files) ^ set(gt_files))
    if missing:
        return _fail(f"prediction/ground-truth stems do not match: {missing}")
    if not pred_files:
        return _fail("no label maps to evaluate")

    try:
        pairs = {
            stem: (
                formats.read_label_map(pred_files[stem].read_bytes()),
                formats.read_label_map(gt_files[stem].read_bytes()),
            )
            for stem in sorted(pred_files)
        }
        n_classes = 1
        for pred, gt in pairs.values():
            n_classes = max(n_classes, int(pred.max()) + 1)
            valid = gt[gt != IGNORE_LABEL]
            if valid.size:
                n_classes = max(n_classes, int(valid.max()) + 1)
        cm = ConfusionMatrix(n_classes)
        for stem in sorted(pairs):
            pred, gt = pairs[stem]
            accumulate(cm, pred, gt)
        report = compute_report(cm, include_bg=not args.exclude_bg)
    except (FormatError, ValueError) as exc:
        return _fail(str(exc))
    sys.stdout.write(format_report(report))
    return 0


def cmd_protocol(args) -> int:
    out_dir = Path(args.out)
    try:
        cfg = parse_config(Path(args.config))
    except (FormatError, ValueError, OSError) as exc:
        return _fail(str(exc))

    try:
        mask_files = _list_inputs(Path(cfg.masks_dir), SMSK_SUFFIX)
        if not mask_files:
            return _fail(f"no {SMSK_SUFFIX} files in {cfg.masks_dir}")
        dataset = []
        n_fg = 0
        for path in mask_files:
            stem = path.stem
            emb_path = Path(cfg.embeddings_dir) / f"{stem}{SEMB_SUFFIX}"
            gt_path = Path(cfg.gt_dir) / f"{stem}{SAGG_SUFFIX}"
            if not emb_path.is_file():
                return _fail(f"missing embeddings file {emb_path}")
            if not gt_path.is_file():
                return _fail(f"missing ground-truth file {gt_path}")
            mask_set = formats.read_mask_set(path.read_bytes(), image_id=stem)
            agg = aggregate(mask_set, tau_area=cfg.tau_area, min_pixels=cfg.min_pixels)
            embeddings = formats.read_embeddings(emb_path.read_bytes())
            gt = formats.read_label_map(gt_path.read_bytes())
            valid = gt[gt != IGNORE_LABEL]
            if valid.size:
                n_fg = max(n_fg, int(valid.max()))
            dataset.append(ImageRecord(stem, agg, embeddings, gt))
        if n_fg < 1:
            return _fail("ground truth contains no foreground classes")
        protocol = parse_split(cfg.split, n_fg)
        run_cfg = RunConfig(
            tau_sim=cfg.tau_sim,
            variance_threshold=cfg.variance_threshold,
            k=cfg.k,
            seed=cfg.seed,
            theta_overlap=cfg.theta_overlap,
        )
        snapshots = run_protocol(protocol, dataset, run_cfg)
    except (FormatError, ValueError, OSError) as exc:
        return _fail(str(exc))

    try:
        for snap in snapshots:
            atomic_write(out_dir / f"step_{snap.step:03d}_bank{SPRO_SUFFIX}", snap.bank_bytes)
            if snap.report is not None:
                atomic_write(
                    out_dir / f"step_{snap.step:03d}_report.txt",
                    format_report(snap.report).encode("utf-8"),
                )
        final = snapshots[-1]
        for image_id, labels in final.pred_maps.items():
            atomic_write(
                out_dir / "pred_final" / f"{image_id}{SAGG_SUFFIX}",
                formats.write_label_map(labels),
            )
        summary = [f"steps: {len(snapshots)}", f"split: {cfg.split}"]
        if final.report is not None:
            summary.append(f"final miou: {final.report.miou:.4f}")
        if len(snapshots) >= 2 and final.report is not None:
            rows = backward_transfer_report(snapshots)
            summary.append("")
            summary.append(format_backward_transfer(rows).rstrip("\n"))
        atomic_write(out_dir / "summary.txt", ("\n".join(summary) + "\n").encode("utf-8"))
    except (FormatError, ValueError, OSError) as exc:
        return _fail(str(exc))
    print("\n".join(summary))
    return 0


def cmd_render(args) -> int:
    from PIL import Image

    try:
        labels = formats.read_label_map(Path(getattr(args, "in")).read_bytes())
    except (FormatError, OSError) as exc:
        return _fail(str(exc))
    image = Image.fromarray(colorize(labels), mode="RGB")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out.parent, prefix=f".{out.name}.", suffix=".tmp")
    os.close(fd)
    try:
        image.save(tmp, format="PNG")
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incseg",
        description="Training-free class-incremental semantic segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="consolidate raw mask files into label maps")
    p.add_argument("--masks", required=True, help="directory of .smsk files")
    p.add_argument("--out", required=True, help="output directory for .sagg files")
    p.add_argument("--tau-area", type=float, default=0.9, dest="tau_area",
                   help="drop masks covering at least this image fraction (default 0.9)")
    p.add_argument("--min-pixels", type=int, default=1, dest="min_pixels",
                   help="minimum new pixels for a mask to claim a region (default 1)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("prototypes", help="register class prototypes from labeled embeddings")
    p.add_argument("--embeddings", required=True, help=".semb file")
    p.add_argument("--labels", required=True, help="region label .tsv file")
    p.add_argument("--bank", required=True, help="output .spro bank file")
    p.add_argument("--variance-threshold", type=float, default=0.4, dest="variance_threshold",
                   help="sub-cluster classes above this variance score (default 0.4)")
    p.add_argument("--k", type=int, default=5, help="sub-prototypes per clustered class (default 5)")
    p.add_argument("--seed", type=int, default=0, help="clustering seed (default 0)")
    p.set_defaults(func=cmd_prototypes)

    p = sub.add_parser("classify", help="classify embeddings against a bank")
    p.add_argument("--bank", required=True, help=".spro bank file")
    p.add_argument("--embeddings", required=True, help=".semb file")
    p.add_argument("--tau-sim", type=float, default=0.5, dest="tau_sim",
                   help="background fallback threshold (default 0.5)")
    p.add_argument("--out", required=True, help="output predictions .tsv")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted .sagg maps")
    p.add_argument("--gt", required=True, help="directory of ground-truth .sagg maps")
    p.add_argument("--exclude-bg", action="store_true", dest="exclude_bg",
                   help="leave background out of the means")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("protocol", help="run a full class-incremental protocol from a config")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("render", help="colorize a label map as a PNG")
    p.add_argument("--in", required=True, help="input .sagg file")
    p.add_argument("--out", required=True, help="output .png file")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
