"""Core raster types: instance masks, three-class masks and their PNG formats."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError

# 4-connectivity structuring element used for every region computation.
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
MAX_INSTANCES = 65535

# Visual convention for colorized class masks (not parsed back).
CLASS_COLORS = np.array([[0, 0, 0], [0, 255, 0], [255, 0, 0]], dtype=np.uint8)


class Label(enum.IntEnum):
    BACKGROUND = 0
    BERRY = 1
    EDGE = 2


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Per-pixel berry instance ids; 0 is background, k >= 1 is berry k."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise ValidationError(f"instance mask must be 2-D, got shape {ids.shape}")
        if ids.size and (not np.issubdtype(ids.dtype, np.integer) or ids.min() < 0):
            raise ValidationError("instance ids must be non-negative integers")
        object.__setattr__(self, "ids", _readonly(ids.astype(np.int32)))

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def instance_ids(self) -> np.ndarray:
        u = np.unique(self.ids)
        return u[u != 0]

    @property
    def count(self) -> int:
        return len(self.instance_ids)

    def validate(self) -> None:
        """Check that every instance is a single 4-connected blob."""
        slices = ndimage.find_objects(self.ids)
        for idx, sl in enumerate(slices, start=1):
            if sl is None:
                continue
            _, n = ndimage.label(self.ids[sl] == idx, structure=FOUR_CONNECTED)
            if n != 1:
                raise ValidationError(
                    f"instance {idx} is split into {n} 4-connected pieces")


@dataclass(frozen=True, eq=False)
class ClassMask:
    """Per-pixel semantic labels drawn from ``Label``."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"class mask must be 2-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 2):
            bad = np.setdiff1d(np.unique(labels), [0, 1, 2])
            raise ValidationError(f"class mask contains values outside {{0,1,2}}: {bad[:5].tolist()}")
        object.__setattr__(self, "labels", _readonly(labels.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, ClassMask):
            return NotImplemented
        return self.labels.shape == other.labels.shape and bool(np.array_equal(self.labels, other.labels))

    def colorize(self) -> np.ndarray:
        return CLASS_COLORS[self.labels]


def raster_relabel(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Renumber positive labels densely 1..N in raster order of first pixel."""
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq > 0
    uniq, first = uniq[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(flat.max(initial=0)) + 1, dtype=np.int32)
    lut[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    return lut[labels], len(uniq)


# --------------------------------------------------------------------------- #
# PNG I/O
# --------------------------------------------------------------------------- #
def read_instance_png(path: str | Path) -> InstanceMask:
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I", "L"):
            raise ValidationError(f"{path}: expected 16-bit grayscale instance PNG, got mode {im.mode}")
        arr = np.array(im)
    return InstanceMask(arr.astype(np.int32))


def write_instance_png(mask: InstanceMask, path: str | Path) -> None:
    if mask.ids.size and mask.ids.max() > MAX_INSTANCES:
        raise ValidationError(f"instance id exceeds {MAX_INSTANCES}")
    Image.fromarray(mask.ids.astype(np.uint16)).save(path, format="PNG")


def read_class_png(path: str | Path) -> ClassMask:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise ValidationError(f"{path}: expected 8-bit grayscale class PNG, got mode {im.mode}")
        arr = np.array(im)
    return ClassMask(arr)


def write_class_png(mask: ClassMask, path: str | Path) -> None:
    Image.fromarray(mask.labels).save(path, format="PNG")


def write_color_png(mask: ClassMask, path: str | Path) -> None:
    Image.fromarray(mask.colorize()).save(path, format="PNG")
