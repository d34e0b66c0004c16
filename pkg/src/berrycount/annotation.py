"""
Annotation ingestion.

Two formats are supported:

* four-color instance images: every berry is painted with one of four
  colors so that touching berries never share a color; everything else is
  painted with a background color;
* dot annotations: one ``x,y`` marker per berry, stored as a headerless CSV
  with zero-based integer coordinates (x = column, y = row, pixel-index
  convention, i.e. the marker names the pixel it sits on).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import AnnotationError, ConfigError, ValidationError
from .masks import FOUR_CONNECTED, InstanceMask, raster_relabel

__all__ = [
    "ColorAnnotationImage",
    "DotAnnotations",
    "instances_from_color_annotation",
    "render_color_annotation",
    "load_color_annotation",
    "load_dots",
    "save_dots",
]

Color = tuple[int, int, int]

DEFAULT_PALETTE: tuple[Color, ...] = ((255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0))
DEFAULT_BACKGROUND: Color = (0, 0, 0)


@dataclass(frozen=True, eq=False)
class ColorAnnotationImage:
    rgb: np.ndarray
    palette: tuple[Color, ...] = DEFAULT_PALETTE
    background: Color = DEFAULT_BACKGROUND

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValidationError(f"color annotation must be HxWx3, got {rgb.shape}")
        palette = tuple(tuple(int(v) for v in c) for c in self.palette)
        background = tuple(int(v) for v in self.background)
        if len(palette) != 4:
            raise ConfigError(f"palette must list exactly 4 berry colors, got {len(palette)}")
        if len(set(palette)) != 4:
            raise ConfigError("palette colors must be distinct")
        if background in palette:
            raise ConfigError("background color must differ from the berry colors")
        object.__setattr__(self, "rgb", rgb.astype(np.uint8))
        object.__setattr__(self, "palette", palette)
        object.__setattr__(self, "background", background)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


def _pack(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.uint32)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


def instances_from_color_annotation(img: ColorAnnotationImage) -> InstanceMask:
    """Split a four-color annotation into instances.

    Each maximal 4-connected region of one berry color becomes one instance.
    Same-colored touching berries therefore merge; the annotation format
    forbids that case and no attempt is made to split them.

    Raises
    ------
    AnnotationError
        If any pixel has a color outside the palette and background.
    """
    packed = _pack(img.rgb)
    codes = np.array([_pack(np.array(c)) for c in img.palette])
    bg = int(_pack(np.array(img.background)))

    known = np.isin(packed, codes) | (packed == bg)
    if not known.all():
        y, x = (int(v) for v in np.argwhere(~known)[0])
        color = tuple(int(v) for v in img.rgb[y, x])
        raise AnnotationError(
            f"pixel (x={x}, y={y}) has color {color} outside the palette", pixel=(x, y))

    combined = np.zeros(packed.shape, dtype=np.int64)
    offset = 0
    for code in codes:
        lab, n = ndimage.label(packed == code, structure=FOUR_CONNECTED)
        combined[lab > 0] = lab[lab > 0] + offset
        offset += n
    ids, _ = raster_relabel(combined)
    return InstanceMask(ids)


def instance_adjacency(inst: InstanceMask) -> dict[int, set[int]]:
    """Pairs of distinct instances sharing a 4-adjacent pixel pair."""
    ids = inst.ids
    neighbours: dict[int, set[int]] = {int(k): set() for k in inst.instance_ids}
    for a, b in ((ids[:, :-1], ids[:, 1:]), (ids[:-1, :], ids[1:, :])):
        sel = (a != b) & (a > 0) & (b > 0)
        for p, q in set(zip(a[sel].tolist(), b[sel].tolist())):
            neighbours[p].add(q)
            neighbours[q].add(p)
    return neighbours


def four_coloring(inst: InstanceMask) -> dict[int, int]:
    """Assign one of four colors per instance so 4-adjacent instances differ.

    Uses DSatur greedy ordering, which handles blob adjacency graphs met in
    practice but is not a complete 4-coloring algorithm; ``ValidationError``
    is raised if it runs out of colors.
    """
    neighbours = instance_adjacency(inst)
    colors: dict[int, int] = {}
    uncolored = set(neighbours)
    while uncolored:
        node = max(uncolored, key=lambda k: (
            len({colors[n] for n in neighbours[k] if n in colors}), len(neighbours[k]), -k))
        used = {colors[n] for n in neighbours[node] if n in colors}
        free = [c for c in range(4) if c not in used]
        if not free:
            raise ValidationError(f"could not 4-color instance {node}")
        colors[node] = free[0]
        uncolored.remove(node)
    return colors


def render_color_annotation(inst: InstanceMask,
                            palette: Sequence[Color] = DEFAULT_PALETTE,
                            background: Color = DEFAULT_BACKGROUND) -> ColorAnnotationImage:
    """Paint an instance mask in the four-color annotation format."""
    colors = four_coloring(inst)
    lut = np.zeros((int(inst.ids.max(initial=0)) + 1, 3), dtype=np.uint8)
    lut[0] = background
    for k, c in colors.items():
        lut[k] = palette[c]
    return ColorAnnotationImage(lut[inst.ids], tuple(palette), background)


def load_color_annotation(path: str | Path,
                          palette: Sequence[Color] = DEFAULT_PALETTE,
                          background: Color = DEFAULT_BACKGROUND) -> ColorAnnotationImage:
    with Image.open(path) as im:
        rgb = np.array(im.convert("RGB"))
    return ColorAnnotationImage(rgb, tuple(palette), background)


# --------------------------------------------------------------------------- #
# Dot annotations
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class DotAnnotations:
    markers: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        markers = tuple((int(x), int(y)) for x, y in self.markers)
        seen = set()
        for m in markers:
            if m in seen:
                raise ValidationError(f"duplicate marker at x={m[0]}, y={m[1]}")
            if m[0] < 0 or m[1] < 0:
                raise ValidationError(f"negative marker coordinate x={m[0]}, y={m[1]}")
            seen.add(m)
        object.__setattr__(self, "markers", markers)

    def __len__(self) -> int:
        return len(self.markers)

    def __iter__(self):
        return iter(self.markers)

    def check_bounds(self, width: int, height: int) -> None:
        for x, y in self.markers:
            if not (0 <= x < width and 0 <= y < height):
                raise ValidationError(
                    f"marker x={x}, y={y} outside image of size {width}x{height}")

    def as_array(self) -> np.ndarray:
        """Markers as an (N, 2) integer array of (x, y)."""
        return np.array(self.markers, dtype=np.int64).reshape(-1, 2)


def load_dots(path: str | Path, image_size: tuple[int, int] | None = None) -> DotAnnotations:
    """Read a dot CSV; ``image_size`` is (width, height) for bounds checking."""
    markers = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'x,y', got {row!r}")
            try:
                markers.append((int(row[0]), int(row[1])))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-integer coordinate in {row!r}") from None
    dots = DotAnnotations(tuple(markers))
    if image_size is not None:
        dots.check_bounds(*image_size)
    return dots


def save_dots(dots: DotAnnotations | Iterable[tuple[int, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for x, y in dots:
            writer.writerow([x, y])
