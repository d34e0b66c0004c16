"""End-to-end workflow for one image: tile, classify, stitch, label, filter, score."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .annotation import DotAnnotations
from .classify import ClassifierBackend
from .components import BerryComponent, label_components
from .config import PipelineConfig
from .masks import ClassMask
from .metrics import ImageEval, count_pairs, detection_eval, iou_counts, match_markers
from .postfilter import Rejection, apply_filters
from .tiling import PatchGrid, PatchStack, plan_grid, stitch_majority

logger = logging.getLogger(__name__)

KEPT_COLOR = (0, 200, 0)
REJECTED_COLOR = (0, 0, 0)
MARKER_COLOR = (255, 0, 255)
CANVAS_LEVEL = 128


@dataclass
class Detection:
    image_id: str
    stitched: ClassMask
    components: list[BerryComponent]
    kept: list[BerryComponent]
    rejected: list[Rejection]

    @property
    def shape(self) -> tuple[int, int]:
        return self.stitched.shape


def classify_image(backend: ClassifierBackend, image_id: str, grid: PatchGrid,
                   workers: int = 1) -> PatchStack:
    """Run the backend on every placement; output order follows the grid."""
    size = (grid.patch_w, grid.patch_h)

    def run(placement):
        return backend.classify_patch(image_id, placement, size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            patches = list(pool.map(run, grid.placements))
    else:
        patches = [run(p) for p in grid.placements]
    return PatchStack.from_list(grid, patches)


def postprocess(stitched: ClassMask, cfg: PipelineConfig):
    comps = label_components(stitched, cfg.components)
    kept, rejected = apply_filters(comps, cfg.filters)
    return comps, kept, rejected


def detect_image(backend: ClassifierBackend, image_id: str, cfg: PipelineConfig | None = None,
                 workers: int | None = None) -> Detection:
    cfg = cfg or PipelineConfig()
    h, w = backend.image_shape(image_id)
    grid = plan_grid(w, h, cfg.patch_w, cfg.patch_h, cfg.overlap)
    stack = classify_image(backend, image_id, grid, workers or cfg.workers)
    stitched = stitch_majority(stack)
    comps, kept, rejected = postprocess(stitched, cfg)
    logger.info("%s: %d candidates, %d kept", image_id, len(comps), len(kept))
    return Detection(image_id, stitched, comps, kept, rejected)


def evaluate_detection(det: Detection, dots: DotAnnotations, cfg: PipelineConfig | None = None,
                       group: str = "default", truth: ClassMask | None = None) -> ImageEval:
    """Score pre- and post-filter components against markers for one image."""
    cfg = cfg or PipelineConfig()
    h, w = det.shape
    dots.check_bounds(w, h)
    tol = cfg.marker_tolerance_px
    ev = ImageEval(
        image_id=det.image_id,
        group=group,
        pre_filter=detection_eval(det.components, dots, det.shape, tol),
        post_filter=detection_eval(det.kept, dots, det.shape, tol),
        count_pairs=count_pairs(det.kept, dots, det.shape, cfg.patch_w, cfg.patch_h),
    )
    if truth is not None:
        inter, union = iou_counts(det.stitched, truth)
        ev.iou_intersections = inter.tolist()
        ev.iou_unions = union.tolist()
    return ev


def render_overlay(det: Detection, base: np.ndarray | None = None,
                   dots: DotAnnotations | None = None, tolerance_px: int = 0) -> np.ndarray:
    """RGB overlay: kept components green, rejected black, missed markers boxed."""
    h, w = det.shape
    if base is None:
        rgb = np.full((h, w, 3), CANVAS_LEVEL, dtype=np.uint8)
    else:
        base = np.asarray(base, dtype=np.uint8)
        rgb = np.repeat(base[..., None], 3, axis=2) if base.ndim == 2 else base[..., :3].copy()
    for c in det.kept:
        rgb[c.ys, c.xs] = KEPT_COLOR
    for rej in det.rejected:
        rgb[rej.component.ys, rej.component.xs] = REJECTED_COLOR
    if dots is not None and len(dots):
        hits = match_markers(det.kept, dots, det.shape, tolerance_px)
        im = Image.fromarray(rgb)
        draw = ImageDraw.Draw(im)
        for (x, y), hit in zip(dots.markers, hits):
            draw.point((x, y), fill=MARKER_COLOR)
            if not hit:
                draw.rectangle((x - 4, y - 4, x + 4, y + 4), outline=MARKER_COLOR)
        rgb = np.array(im)
    return rgb
