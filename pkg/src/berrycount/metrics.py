"""Evaluation: per-class IoU, marker-based detection scores, count regression."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .annotation import DotAnnotations
from .components import BerryComponent, component_label_image
from .errors import UndefinedFitError, ValidationError
from .masks import ClassMask, Label

__all__ = [
    "IoUReport",
    "iou",
    "iou_counts",
    "DetectionReport",
    "detection_eval",
    "match_markers",
    "CountRegression",
    "count_regression",
    "count_pairs",
    "ImageEval",
    "build_eval_report",
    "eval_report_rows",
]


# --------------------------------------------------------------------------- #
# IoU
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class IoUReport:
    iou_background: float
    iou_berry: float
    iou_edge: float

    @property
    def iou_average(self) -> float:
        return (self.iou_background + self.iou_berry + self.iou_edge) / 3.0

    @classmethod
    def from_counts(cls, intersections, unions) -> "IoUReport":
        vals = [1.0 if u == 0 else i / u for i, u in zip(intersections, unions)]
        return cls(*vals)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["iou_average"] = self.iou_average
        return d


def iou_counts(pred: ClassMask, truth: ClassMask) -> tuple[np.ndarray, np.ndarray]:
    """Per-class intersection and union pixel counts, indexed by ``Label``."""
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    p = pred.labels.ravel().astype(np.int64)
    t = truth.labels.ravel().astype(np.int64)
    confusion = np.bincount(3 * t + p, minlength=9).reshape(3, 3)
    inter = np.diag(confusion)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    return inter, union


def iou(pred: ClassMask | Sequence[ClassMask], truth: ClassMask | Sequence[ClassMask]) -> IoUReport:
    """Per-class IoU. Sequences of masks are pooled before dividing.

    A class absent from both prediction and truth scores 1.0.
    """
    if isinstance(pred, ClassMask):
        pred, truth = [pred], [truth]
    if len(pred) != len(truth):
        raise ValidationError("prediction and truth lists differ in length")
    inter = np.zeros(3, dtype=np.int64)
    union = np.zeros(3, dtype=np.int64)
    for p, t in zip(pred, truth):
        i, u = iou_counts(p, t)
        inter += i
        union += u
    return IoUReport.from_counts(inter, union)


# --------------------------------------------------------------------------- #
# Marker-based detection
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class DetectionReport:
    n_markers: int
    n_detected: int
    n_components: int
    n_misclassified: int
    undersegmented_components: int

    @property
    def correct_detection_pct(self) -> float | None:
        return None if self.n_markers == 0 else 100.0 * self.n_detected / self.n_markers

    @property
    def misclassified_pct(self) -> float | None:
        return None if self.n_components == 0 else 100.0 * self.n_misclassified / self.n_components

    def __add__(self, other: "DetectionReport") -> "DetectionReport":
        return DetectionReport(
            self.n_markers + other.n_markers,
            self.n_detected + other.n_detected,
            self.n_components + other.n_components,
            self.n_misclassified + other.n_misclassified,
            self.undersegmented_components + other.undersegmented_components,
        )

    @classmethod
    def empty(cls) -> "DetectionReport":
        return cls(0, 0, 0, 0, 0)

    @classmethod
    def combine(cls, reports: Iterable["DetectionReport"]) -> "DetectionReport":
        total = cls.empty()
        for r in reports:
            total = total + r
        return total

    def as_dict(self) -> dict:
        d = asdict(self)
        d["correct_detection_pct"] = self.correct_detection_pct
        d["misclassified_pct"] = self.misclassified_pct
        return d


# neighbour scan order for the tolerance mode: the pixel itself, then its
# 4-neighbours, then diagonals
_TOLERANCE_OFFSETS = ((0, 0), (0, -1), (-1, 0), (1, 0), (0, 1), (-1, -1), (1, -1), (-1, 1), (1, 1))


def match_markers(comps: Sequence[BerryComponent], dots: DotAnnotations,
                  shape: tuple[int, int] | None = None, tolerance_px: int = 0) -> list[int]:
    """Component id hit by each marker (0 = none), in marker order.

    With ``tolerance_px=1`` a marker that misses every component is matched to
    the first component found among its 8 neighbours.
    """
    if tolerance_px not in (0, 1):
        raise ValidationError("tolerance_px must be 0 or 1")
    markers = dots.as_array()
    if shape is None:
        hmax = max([int(c.ys.max()) for c in comps] + [int(m[1]) for m in markers] + [0]) + 1
        wmax = max([int(c.xs.max()) for c in comps] + [int(m[0]) for m in markers] + [0]) + 1
        shape = (hmax, wmax)
    h, w = shape
    if len(markers) and (markers[:, 0].max() >= w or markers[:, 1].max() >= h):
        raise ValidationError("marker outside image bounds")
    lab = component_label_image(comps, shape)
    offsets = _TOLERANCE_OFFSETS if tolerance_px else _TOLERANCE_OFFSETS[:1]
    hits = []
    for x, y in markers.tolist():
        hit = 0
        for dx, dy in offsets:
            xx, yy = x + dx, y + dy
            if 0 <= xx < w and 0 <= yy < h and lab[yy, xx]:
                hit = int(lab[yy, xx])
                break
        hits.append(hit)
    return hits


def detection_eval(comps: Sequence[BerryComponent], dots: DotAnnotations,
                   shape: tuple[int, int] | None = None, tolerance_px: int = 0) -> DetectionReport:
    """Score components against dot markers.

    A marker is detected when its pixel belongs to a component. A component
    holding no marker is misclassified; one holding two or more markers is
    counted as undersegmented.
    """
    hits = match_markers(comps, dots, shape, tolerance_px)
    per_comp = np.bincount(np.asarray(hits, dtype=np.int64),
                           minlength=max([c.id for c in comps] + [0]) + 1)
    ids = np.array([c.id for c in comps], dtype=np.int64)
    counts = per_comp[ids] if len(ids) else np.zeros(0, dtype=np.int64)
    return DetectionReport(
        n_markers=len(hits),
        n_detected=sum(1 for h in hits if h),
        n_components=len(comps),
        n_misclassified=int((counts == 0).sum()),
        undersegmented_components=int((counts >= 2).sum()),
    )


# --------------------------------------------------------------------------- #
# Count regression
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class CountRegression:
    pairs: tuple[tuple[float, float], ...]
    slope: float
    intercept: float
    r_squared: float

    def as_dict(self) -> dict:
        return {"n_pairs": len(self.pairs), "slope": self.slope,
                "intercept": self.intercept, "r_squared": self.r_squared}


def count_regression(pairs: Iterable[tuple[float, float]]) -> CountRegression:
    """OLS line ``detected = slope * manual + intercept`` and its R^2.

    R^2 is ``1 - SS_res / SS_tot``. When the detected counts are all equal the
    fit is exact and R^2 is reported as 1.0.

    Raises
    ------
    UndefinedFitError
        Fewer than two pairs, or all manual counts identical.
    """
    pairs = tuple((float(m), float(d)) for m, d in pairs)
    if len(pairs) < 2:
        raise UndefinedFitError(f"need at least 2 count pairs, got {len(pairs)}")
    arr = np.array(pairs)
    x, y = arr[:, 0], arr[:, 1]
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise UndefinedFitError("all manual counts are identical; slope undefined")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return CountRegression(pairs, slope, intercept, r2)


def count_pairs(comps: Sequence[BerryComponent], dots: DotAnnotations, shape: tuple[int, int],
                patch_w: int = 512, patch_h: int = 384) -> list[tuple[int, int]]:
    """(manual, detected) berry counts per non-overlapping patch.

    Only whole patches are used (remainder strips at the right and bottom are
    dropped). Markers are counted by position, components by the pixel that
    contains their rounded centroid.
    """
    h, w = shape
    nx, ny = w // patch_w, h // patch_h
    if nx == 0 or ny == 0:
        return []
    manual = np.zeros((ny, nx), dtype=np.int64)
    detected = np.zeros((ny, nx), dtype=np.int64)
    for x, y in dots.markers:
        tx, ty = x // patch_w, y // patch_h
        if tx < nx and ty < ny:
            manual[ty, tx] += 1
    for c in comps:
        cx = math.floor(c.centroid[0] + 0.5)
        cy = math.floor(c.centroid[1] + 0.5)
        tx, ty = cx // patch_w, cy // patch_h
        if tx < nx and ty < ny:
            detected[ty, tx] += 1
    return list(zip(manual.ravel().tolist(), detected.ravel().tolist()))


# --------------------------------------------------------------------------- #
# Report assembly
# --------------------------------------------------------------------------- #
@dataclass
class ImageEval:
    image_id: str
    group: str
    pre_filter: DetectionReport
    post_filter: DetectionReport
    count_pairs: list[tuple[int, int]] = field(default_factory=list)
    iou_intersections: list[int] | None = None
    iou_unions: list[int] | None = None

    def as_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "group": self.group,
            "pre_filter": self.pre_filter.as_dict(),
            "post_filter": self.post_filter.as_dict(),
            "count_pairs": [list(p) for p in self.count_pairs],
            "iou": None,
        }
        if self.iou_intersections is not None:
            d["iou"] = IoUReport.from_counts(self.iou_intersections, self.iou_unions).as_dict()
        return d


def _summarise(name: str, evals: Sequence[ImageEval]) -> dict:
    pre = DetectionReport.combine(e.pre_filter for e in evals)
    post = DetectionReport.combine(e.post_filter for e in evals)
    pairs = [p for e in evals for p in e.count_pairs]
    out = {
        "group": name,
        "n_images": len(evals),
        "pre_filter": pre.as_dict(),
        "post_filter": post.as_dict(),
        "iou": None,
        "count_regression": None,
    }
    with_iou = [e for e in evals if e.iou_intersections is not None]
    if with_iou:
        inter = np.sum([e.iou_intersections for e in with_iou], axis=0)
        union = np.sum([e.iou_unions for e in with_iou], axis=0)
        out["iou"] = IoUReport.from_counts(inter, union).as_dict()
    try:
        out["count_regression"] = count_regression(pairs).as_dict()
    except UndefinedFitError as exc:
        out["count_regression_error"] = str(exc)
    return out


def build_eval_report(evals: Sequence[ImageEval]) -> dict:
    """JSON-ready evaluation report (see ``schemas/eval_report.schema.json``)."""
    evals = sorted(evals, key=lambda e: e.image_id)
    groups = sorted({e.group for e in evals})
    return {
        "schema_version": 1,
        "images": [e.as_dict() for e in evals],
        "groups": [_summarise(g, [e for e in evals if e.group == g]) for g in groups],
        "overall": _summarise("ALL", evals),
    }


REPORT_CSV_COLUMNS = (
    "group", "stage", "n_images", "n_markers", "n_detected", "n_components", "n_misclassified",
    "undersegmented_components", "correct_detection_pct", "misclassified_pct",
    "iou_background", "iou_berry", "iou_edge", "iou_average",
    "slope", "intercept", "r_squared",
)


def eval_report_rows(report: dict) -> list[dict]:
    """Flatten a report into one row per (group, filter stage)."""
    rows = []
    for summary in report["groups"] + [report["overall"]]:
        for stage in ("pre_filter", "post_filter"):
            row = {"group": summary["group"], "stage": stage, "n_images": summary["n_images"]}
            row.update(summary[stage])
            row.update(summary["iou"] or {})
            row.update(summary["count_regression"] or {})
            row.pop("n_pairs", None)
            rows.append({k: row.get(k) for k in REPORT_CSV_COLUMNS})
    return rows
