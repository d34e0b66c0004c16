"""
Berry candidates from a class mask.

Candidates are the 4-connected regions of BERRY pixels with at least
``min_component_px`` pixels; EDGE and BACKGROUND pixels never join a
component. Each candidate carries the descriptors used by the post-filters:

* equivalent-ellipse semi-axes from the second central moments (every pixel a
  unit mass at its center; semi-axis = 2 * sqrt(eigenvalue));
* the fraction of its outer 8-neighbour ring that is labeled EDGE.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .masks import FOUR_CONNECTED, ClassMask, Label

__all__ = [
    "ComponentConfig",
    "BerryComponent",
    "label_components",
    "compute_axes",
    "ellipse_semi_axes",
    "edge_surround",
    "components_to_csv",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("id", "area_px", "centroid_x", "centroid_y", "major_semi_axis",
               "minor_semi_axis", "edge_surround_fraction")

_RING = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ComponentConfig:
    min_component_px: int = 25

    def __post_init__(self):
        if int(self.min_component_px) != self.min_component_px or self.min_component_px < 1:
            raise ConfigError(f"min_component_px must be an integer >= 1, got {self.min_component_px}")


@dataclass(frozen=True, eq=False)
class BerryComponent:
    id: int
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    centroid: tuple[float, float] = (0.0, 0.0)
    major_semi_axis_px: float = 0.0
    minor_semi_axis_px: float = 0.0
    edge_surround_fraction: float = 0.0

    @property
    def area_px(self) -> int:
        return int(self.xs.size)

    @property
    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))

    @property
    def axis_ratio(self) -> float:
        if self.major_semi_axis_px <= 0:
            return 0.0
        return self.minor_semi_axis_px / self.major_semi_axis_px

    def bbox(self) -> tuple[int, int, int, int]:
        """(x_min, y_min, x_max, y_max), inclusive."""
        return int(self.xs.min()), int(self.ys.min()), int(self.xs.max()), int(self.ys.max())

    def as_row(self) -> dict:
        return {
            "id": self.id,
            "area_px": self.area_px,
            "centroid_x": self.centroid[0],
            "centroid_y": self.centroid[1],
            "major_semi_axis": self.major_semi_axis_px,
            "minor_semi_axis": self.minor_semi_axis_px,
            "edge_surround_fraction": self.edge_surround_fraction,
        }


def ellipse_semi_axes(xs, ys) -> tuple[float, float]:
    """Semi-axes of the ellipse sharing the pixel set's second central moments."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 2:
        return 0.0, 0.0
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    mxx = float(np.mean(dx * dx))
    myy = float(np.mean(dy * dy))
    mxy = float(np.mean(dx * dy))
    # closed-form eigenvalues of [[mxx, mxy], [mxy, myy]]
    half_trace = 0.5 * (mxx + myy)
    disc = np.hypot(0.5 * (mxx - myy), mxy)
    lam1 = half_trace + disc
    lam2 = max(half_trace - disc, 0.0)
    return 2.0 * np.sqrt(lam1), 2.0 * np.sqrt(lam2)


def compute_axes(comp: BerryComponent) -> tuple[float, float]:
    """(major, minor) semi-axes of ``comp``; a single pixel gives (0, 0)."""
    return ellipse_semi_axes(comp.xs, comp.ys)


def _edge_fraction(local_comp: np.ndarray, local_labels: np.ndarray) -> float:
    ring = ndimage.binary_dilation(local_comp, structure=_RING) & ~local_comp
    n_ring = int(ring.sum())
    if n_ring == 0:
        return 0.0
    return int((local_labels[ring] == Label.EDGE).sum()) / n_ring


def _local_window(xs, ys, shape) -> tuple[slice, slice]:
    h, w = shape
    return (slice(max(int(ys.min()) - 1, 0), min(int(ys.max()) + 2, h)),
            slice(max(int(xs.min()) - 1, 0), min(int(xs.max()) + 2, w)))


def edge_surround(comp: BerryComponent, mask: ClassMask) -> float:
    """Share of the component's outer ring (clipped to the image) labeled EDGE.

    The ring is every pixel outside the component that is 8-adjacent to it.
    An empty ring, which only happens when the component fills the image,
    yields 0.
    """
    win = _local_window(comp.xs, comp.ys, mask.shape)
    local = np.zeros((win[0].stop - win[0].start, win[1].stop - win[1].start), dtype=bool)
    local[comp.ys - win[0].start, comp.xs - win[1].start] = True
    return _edge_fraction(local, mask.labels[win])


def label_components(mask: ClassMask, cfg: ComponentConfig | None = None) -> list[BerryComponent]:
    """4-connected BERRY regions of at least ``cfg.min_component_px`` pixels.

    Ids are dense from 1 in raster order of each region's first pixel.
    """
    cfg = cfg or ComponentConfig()
    labels = mask.labels
    lab, n = ndimage.label(labels == Label.BERRY, structure=FOUR_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(lab)
    # raster order of first pixel, independent of how ndimage numbers regions;
    # the first pixel sits on the top row of the bounding box
    first = {}
    for k in range(1, n + 1):
        if sizes[k] < cfg.min_component_px:
            continue
        rows, cols = slices[k - 1]
        top = lab[rows.start, cols]
        first[k] = rows.start * labels.shape[1] + cols.start + int(np.argmax(top == k))
    order = sorted(first, key=first.__getitem__)

    comps = []
    for new_id, k in enumerate(order, start=1):
        sl = slices[k - 1]
        win = (slice(max(sl[0].start - 1, 0), min(sl[0].stop + 1, labels.shape[0])),
               slice(max(sl[1].start - 1, 0), min(sl[1].stop + 1, labels.shape[1])))
        local = lab[win] == k
        ly, lx = np.nonzero(local)
        xs = (lx + win[1].start).astype(np.int64)
        ys = (ly + win[0].start).astype(np.int64)
        major, minor = ellipse_semi_axes(xs, ys)
        comps.append(BerryComponent(
            id=new_id,
            xs=xs,
            ys=ys,
            centroid=(float(xs.mean()), float(ys.mean())),
            major_semi_axis_px=float(major),
            minor_semi_axis_px=float(minor),
            edge_surround_fraction=_edge_fraction(local, labels[win]),
        ))
    return comps


def component_label_image(comps: Iterable[BerryComponent], shape: tuple[int, int]) -> np.ndarray:
    """Paint component ids into an ``int32`` image (0 where no component)."""
    out = np.zeros(shape, dtype=np.int32)
    for c in comps:
        out[c.ys, c.xs] = c.id
    return out


def components_to_csv(comps: Iterable[BerryComponent], path: str | Path,
                      extra: dict[int, dict] | None = None) -> None:
    """Write one row per component; ``extra`` maps id -> additional trailing columns."""
    comps = list(comps)
    extra = extra or {}
    extra_cols: list[str] = []
    for row in extra.values():
        for key in row:
            if key not in extra_cols:
                extra_cols.append(key)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(CSV_COLUMNS) + extra_cols)
        for c in comps:
            row = c.as_row()
            values = [row[k] for k in CSV_COLUMNS]
            values = [f"{v:.6f}" if isinstance(v, float) else v for v in values]
            writer.writerow(values + [extra.get(c.id, {}).get(k, "") for k in extra_cols])
