"""``berrycount`` command line front end.

Subcommands
-----------
labelgen   annotation PNGs (4-color RGB or 16-bit instance ids) -> class masks
detect     tile, classify, stitch, label and filter each image
eval       score a detect run against dot annotations, grouped per image label
synth      write synthetic scenes with exact ground truth
plot-data  (manual, detected) count pairs and fitted line as CSV

Every command takes ``--config FILE`` (``key = value`` lines) and ``--set
key=value`` overrides; dedicated flags exist for the common keys. The resolved
configuration is written to ``resolved_config.txt`` in the output directory.

Exit codes
----------
0  success
1  unexpected internal error
2  configuration error (bad key, value out of range, bad usage)
3  I/O error (missing or unreadable file or directory)
4  validation error (input violates a declared format or invariant)
5  synthetic scene generation failed
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .annotation import instances_from_color_annotation, load_color_annotation, load_dots, save_dots
from .classify import make_backend
from .components import components_to_csv, label_components
from .config import PipelineConfig, load_config
from .errors import BerryCountError, ConfigError, GenerationError, UndefinedFitError, ValidationError
from .labelgen import generate_labels
from .masks import (read_class_png, read_instance_png, write_class_png, write_color_png,
                    write_instance_png)
from .metrics import REPORT_CSV_COLUMNS, build_eval_report, count_regression, eval_report_rows
from .pipeline import Detection, detect_image, evaluate_detection, render_overlay
from .postfilter import FILTER_NAMES, ablation, apply_filters, write_ablation_csv
from .synth import SceneConfig, generate_scene, scene_sidecar

logger = logging.getLogger("berrycount")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_GENERATION = 5

EXIT_CODES = {
    "ok": EXIT_OK,
    "internal": EXIT_INTERNAL,
    "config": EXIT_CONFIG,
    "io": EXIT_IO,
    "validation": EXIT_VALIDATION,
    "generation": EXIT_GENERATION,
}

STITCHED_SUFFIX = "_stitched.png"
# labelgen color previews; skipped when a directory is read as class masks
PREVIEW_SUFFIX = "_color.png"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, GenerationError):
        return EXIT_GENERATION
    if isinstance(exc, OSError):
        # includes Pillow's UnidentifiedImageError
        return EXIT_IO
    return EXIT_INTERNAL


# --------------------------------------------------------------------------- #
# Config plumbing
# --------------------------------------------------------------------------- #
# flag dest -> config key
_FLAG_KEYS = {
    "edge_thickness": "edge_thickness_px",
    "patch_w": "patch_w",
    "patch_h": "patch_h",
    "overlap": "overlap",
    "min_component_px": "min_component_px",
    "axis_ratio_min": "axis_ratio_min",
    "area_ratio_min": "area_ratio_min",
    "edge_surround_min": "edge_surround_min",
    "radius_mode": "radius_mode",
    "backend": "backend",
    "flip_probability": "flip_probability",
    "false_blob_rate": "false_blob_rate",
    "seed": "seed",
    "marker_tolerance": "marker_tolerance_px",
    "group": "group",
    "groups_file": "groups_file",
    "workers": "workers",
}


def _add_config_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="key = value configuration file")
    g.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    g.add_argument("--edge-thickness", type=int, help="edge band thickness in pixels")
    g.add_argument("--patch-w", type=int)
    g.add_argument("--patch-h", type=int)
    g.add_argument("--overlap", type=float, help="patch overlap fraction in [0, 1)")
    g.add_argument("--min-component-px", type=int)
    g.add_argument("--axis-ratio-min", type=float)
    g.add_argument("--area-ratio-min", type=float)
    g.add_argument("--edge-surround-min", type=float)
    g.add_argument("--radius-mode", choices=("semi", "full"))
    g.add_argument("--filters", help="comma separated subset of axis,area,edge, or 'none'")
    g.add_argument("--backend", choices=("oracle", "noisy_oracle", "mask_file"))
    g.add_argument("--flip-probability", type=float)
    g.add_argument("--false-blob-rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--marker-tolerance", type=int, choices=(0, 1))
    g.add_argument("--group", help="group label for images not listed in the groups file")
    g.add_argument("--groups-file", help="CSV of image_id,group")
    g.add_argument("--workers", type=int)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "filters", None) is not None:
        names = [] if args.filters.strip() == "none" else [n.strip() for n in args.filters.split(",") if n.strip()]
        bad = set(names) - set(FILTER_NAMES)
        if bad:
            raise ConfigError(f"unknown filter(s) {sorted(bad)}; choose from {FILTER_NAMES}")
        for n in FILTER_NAMES:
            overrides[f"use_{n}"] = n in names
    if args.config is not None and not args.config.is_file():
        raise FileNotFoundError(f"config file not found: {args.config}")
    return load_config(args.config, **overrides)


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {path}")
    return path


def _pngs(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png" and p.is_file())


def _load_groups(cfg: PipelineConfig) -> dict[str, str]:
    if not cfg.groups_file:
        return {}
    groups = {}
    with open(cfg.groups_file, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip() or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValidationError(f"{cfg.groups_file}:{lineno}: expected 'image_id,group'")
            groups[row[0].strip()] = row[1].strip()
    return groups


# --------------------------------------------------------------------------- #
# labelgen
# --------------------------------------------------------------------------- #
def _read_annotation(path: Path, fmt: str, cfg: PipelineConfig):
    if fmt == "auto":
        with Image.open(path) as im:
            fmt = "color" if im.mode in ("RGB", "RGBA", "P") else "instance"
    if fmt == "color":
        img = load_color_annotation(path, cfg.palette_colors, cfg.background_rgb)
        return instances_from_color_annotation(img)
    inst = read_instance_png(path)
    inst.validate()
    return inst


def cmd_labelgen(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    src = _require_dir(args.input, "annotation")
    out = _out_dir(args.output)
    cfg.write(out)
    files = _pngs(src)
    if not files:
        logger.warning("no PNG annotations found in %s", src)
        return EXIT_OK
    failures: list[tuple[Path, BaseException]] = []
    for path in files:
        try:
            inst = _read_annotation(path, args.format, cfg)
            mask = generate_labels(inst, cfg.labelgen)
            write_class_png(mask, out / f"{path.stem}.png")
            write_color_png(mask, out / f"{path.stem}{PREVIEW_SUFFIX}")
            if args.write_instances:
                write_instance_png(inst, out / f"{path.stem}_instances.png")
        except (BerryCountError, OSError, UnidentifiedImageError) as exc:
            logger.error("%s: %s", path, exc)
            failures.append((path, exc))
    logger.info("labelgen: %d ok, %d failed", len(files) - len(failures), len(failures))
    if failures:
        return exit_code_for(failures[0][1])
    return EXIT_OK


# --------------------------------------------------------------------------- #
# detect
# --------------------------------------------------------------------------- #
def _reference_masks(directory: Path, ids: Sequence[str]) -> dict:
    refs = {}
    for image_id in ids:
        path = directory / f"{image_id}.png"
        if not path.is_file():
            raise FileNotFoundError(f"reference mask not found: {path}")
        refs[image_id] = read_class_png(path)
    return refs


def _write_detection(det: Detection, out: Path, cfg: PipelineConfig,
                     image_dir: Path | None, dots_dir: Path | None) -> None:
    write_class_png(det.stitched, out / f"{det.image_id}{STITCHED_SUFFIX}")
    extra = {c.id: {"kept": 1, "rejected_by": ""} for c in det.kept}
    for rej in det.rejected:
        extra[rej.component.id] = {"kept": 0, "rejected_by": "+".join(sorted(rej.reasons))}
    components_to_csv(det.components, out / f"{det.image_id}_components.csv", extra)
    write_ablation_csv(ablation(det.components, cfg.filters), out / f"{det.image_id}_ablation.csv")

    base = None
    if image_dir is not None and (image_dir / f"{det.image_id}.png").is_file():
        with Image.open(image_dir / f"{det.image_id}.png") as im:
            base = np.array(im.convert("L"))
    dots = None
    if dots_dir is not None and (dots_dir / f"{det.image_id}.csv").is_file():
        h, w = det.shape
        dots = load_dots(dots_dir / f"{det.image_id}.csv", (w, h))
    overlay = render_overlay(det, base, dots, cfg.marker_tolerance_px)
    Image.fromarray(overlay).save(out / f"{det.image_id}_overlay.png", format="PNG")


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    src = _require_dir(args.source, "source mask")
    out = _out_dir(args.output)
    ids = args.images.split(",") if args.images else [
        p.stem for p in _pngs(src) if not p.name.endswith(PREVIEW_SUFFIX)]
    if not ids:
        logger.warning("no images found in %s", src)
        cfg.write(out)
        return EXIT_OK
    if cfg.backend == "mask_file":
        backend = make_backend("mask_file", directory=src)
        for image_id in ids:
            backend.load(image_id)
    else:
        backend = make_backend(cfg.backend, references=_reference_masks(src, ids),
                               flip_probability=cfg.flip_probability,
                               false_blob_rate=cfg.false_blob_rate, seed=cfg.seed)
    cfg.write(out)

    # parallelise over images when there are several, otherwise over patches
    patch_workers = cfg.workers if len(ids) == 1 else 1

    def run(image_id: str) -> None:
        det = detect_image(backend, image_id, cfg, workers=patch_workers)
        _write_detection(det, out, cfg, args.image_dir, args.dots_dir)

    if cfg.workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, ids))
    else:
        for image_id in ids:
            run(image_id)
    logger.info("detect: %d image(s) written to %s", len(ids), out)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# eval
# --------------------------------------------------------------------------- #
def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    det_dir = _require_dir(args.detections, "detection")
    dots_dir = _require_dir(args.dots_dir, "dot annotation")
    out = _out_dir(args.output)
    groups = _load_groups(cfg)
    stitched = sorted(det_dir.glob(f"*{STITCHED_SUFFIX}"))
    if not stitched:
        raise FileNotFoundError(f"no *{STITCHED_SUFFIX} files in {det_dir}")

    evals = []
    for path in stitched:
        image_id = path.name[: -len(STITCHED_SUFFIX)]
        mask = read_class_png(path)
        comps = label_components(mask, cfg.components)
        kept, rejected = apply_filters(comps, cfg.filters)
        det = Detection(image_id, mask, comps, kept, rejected)
        h, w = mask.shape
        dots = load_dots(dots_dir / f"{image_id}.csv", (w, h))
        truth = None
        if args.truth_dir is not None:
            truth = read_class_png(args.truth_dir / f"{image_id}.png")
            if truth.shape != mask.shape:
                raise ValidationError(f"{image_id}: truth mask {truth.shape} != prediction {mask.shape}")
        evals.append(evaluate_detection(det, dots, cfg, groups.get(image_id, cfg.group), truth))

    report = build_eval_report(evals)
    cfg.write(out)
    (out / "eval_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    with open(out / "eval_report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(REPORT_CSV_COLUMNS), lineterminator="\n")
        writer.writeheader()
        for row in eval_report_rows(report):
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    overall = report["overall"]["post_filter"]
    logger.info("eval: %d image(s), detection %s%%, misclassified %s%%", len(evals),
                overall["correct_detection_pct"], overall["misclassified_pct"])
    return EXIT_OK


# --------------------------------------------------------------------------- #
# synth
# --------------------------------------------------------------------------- #
def _int_pair(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from None
    return lo, hi


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args.output)
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    dirs = {name: _out_dir(out / name) for name in ("instances", "labels", "dots", "images", "meta")}
    cfg.write(out)
    for i in range(args.count):
        seed = cfg.seed + i
        scene_cfg = SceneConfig(
            image_w=args.image_w, image_h=args.image_h, n_clusters=args.n_clusters,
            berries_per_cluster=args.berries_per_cluster, radius_px=args.radius,
            cluster_spread_px=args.cluster_spread, touch_probability=args.touch_probability,
            seed=seed, min_core_px=args.min_core_px, core_edge_px=cfg.edge_thickness_px,
        )
        scene = generate_scene(scene_cfg)
        image_id = f"scene_{seed:05d}"
        write_instance_png(scene.instances, dirs["instances"] / f"{image_id}.png")
        write_class_png(generate_labels(scene.instances, cfg.labelgen), dirs["labels"] / f"{image_id}.png")
        save_dots(scene.dots, dirs["dots"] / f"{image_id}.csv")
        Image.fromarray(scene.image).save(dirs["images"] / f"{image_id}.png", format="PNG")
        (dirs["meta"] / f"{image_id}.json").write_text(scene_sidecar(scene_cfg, scene), encoding="utf-8")
    logger.info("synth: %d scene(s) written to %s", args.count, out)
    return EXIT_OK


# --------------------------------------------------------------------------- #
# plot-data
# --------------------------------------------------------------------------- #
def cmd_plot_data(args: argparse.Namespace) -> int:
    if not args.report.is_file():
        raise FileNotFoundError(f"report not found: {args.report}")
    try:
        report = json.loads(args.report.read_text(encoding="utf-8"))
        images = report["images"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{args.report}: not an evaluation report ({exc})") from None
    out = _out_dir(args.output)

    by_group: dict[str, list[tuple[int, int]]] = {}
    with open(out / "count_pairs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "group", "manual", "detected"])
        for img in images:
            for manual, detected in img["count_pairs"]:
                writer.writerow([img["image_id"], img["group"], manual, detected])
                by_group.setdefault(img["group"], []).append((manual, detected))
    by_group["ALL"] = [p for g in sorted(by_group) for p in by_group[g]]

    with open(out / "count_fit.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "n_pairs", "slope", "intercept", "r_squared"])
        for group in sorted(g for g in by_group if g != "ALL") + ["ALL"]:
            pairs = by_group[group]
            try:
                fit = count_regression(pairs)
                writer.writerow([group, len(pairs), repr(fit.slope), repr(fit.intercept), repr(fit.r_squared)])
            except UndefinedFitError as exc:
                logger.warning("group %s: %s", group, exc)
                writer.writerow([group, len(pairs), "", "", ""])
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Entry point
# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="berrycount", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("labelgen", help="annotations -> three-class masks")
    p.add_argument("input", type=Path, help="directory of annotation PNGs")
    p.add_argument("output", type=Path)
    p.add_argument("--format", choices=("auto", "color", "instance"), default="auto",
                   help="annotation format; auto picks color for RGB images")
    p.add_argument("--write-instances", action="store_true", help="also write decoded instance PNGs")
    _add_config_args(p)
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("detect", help="tile, classify, stitch and filter")
    p.add_argument("source", type=Path,
                   help="directory of <image_id>.png class masks (references or stored predictions)")
    p.add_argument("output", type=Path)
    p.add_argument("--images", help="comma separated image ids (default: every PNG in source)")
    p.add_argument("--image-dir", type=Path, help="grayscale images used as overlay background")
    p.add_argument("--dots-dir", type=Path, help="dot CSVs; missed markers are boxed in the overlay")
    _add_config_args(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against dot annotations")
    p.add_argument("detections", type=Path, help="output directory of a detect run")
    p.add_argument("dots_dir", type=Path, help="directory of <image_id>.csv dot files")
    p.add_argument("output", type=Path)
    p.add_argument("--truth-dir", type=Path, help="reference class masks, enables IoU")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("output", type=Path)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--image-w", type=int, default=512)
    p.add_argument("--image-h", type=int, default=384)
    p.add_argument("--n-clusters", type=int, default=3)
    p.add_argument("--berries-per-cluster", type=_int_pair, default=(5, 15), metavar="LO,HI")
    p.add_argument("--radius", type=_int_pair, default=(6, 12), metavar="LO,HI")
    p.add_argument("--cluster-spread", type=float, default=30.0)
    p.add_argument("--touch-probability", type=float, default=0.5)
    p.add_argument("--min-core-px", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot-data", help="count pairs and fitted line as CSV")
    p.add_argument("report", type=Path, help="eval_report.json")
    p.add_argument("output", type=Path)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else
                                              logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = exit_code_for(exc)
        if code == EXIT_INTERNAL:
            logger.exception("internal error")
        else:
            logger.error("%s", exc)
        return code


if __name__ == "__main__":
    sys.exit(main())
