"""Instance mask -> three-class (background / berry / edge) label mask.

Every instance receives an inner edge band: a pixel of instance k is EDGE when
some pixel within chessboard distance ``edge_thickness_px`` does not belong to
k (pixels beyond the image border count as not belonging). The remaining
instance pixels are BERRY. Because the band is computed against *everything*
that is not the instance, touching berries get edges on both sides and their
cores never touch, even diagonally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .masks import ClassMask, InstanceMask, Label

__all__ = ["LabelGenConfig", "generate_labels", "berry_core_exists", "berry_core_mask"]


@dataclass(frozen=True)
class LabelGenConfig:
    edge_thickness_px: int = 2

    def __post_init__(self):
        if int(self.edge_thickness_px) != self.edge_thickness_px or self.edge_thickness_px < 1:
            raise ConfigError(f"edge_thickness_px must be an integer >= 1, got {self.edge_thickness_px}")


def berry_core_mask(ids: np.ndarray, thickness: int) -> np.ndarray:
    """Boolean mask of pixels whose whole (2t+1)^2 window carries their own id."""
    size = 2 * thickness + 1
    lo = ndimage.minimum_filter(ids, size=size, mode="constant", cval=0)
    hi = ndimage.maximum_filter(ids, size=size, mode="constant", cval=0)
    return (ids > 0) & (lo == ids) & (hi == ids)


def generate_labels(inst: InstanceMask, cfg: LabelGenConfig | None = None) -> ClassMask:
    cfg = cfg or LabelGenConfig()
    ids = inst.ids
    labels = np.where(ids > 0, np.uint8(Label.EDGE), np.uint8(Label.BACKGROUND))
    labels[berry_core_mask(ids, cfg.edge_thickness_px)] = Label.BERRY
    return ClassMask(labels)


def berry_core_exists(inst: InstanceMask, cfg: LabelGenConfig | None, instance_id: int) -> bool:
    """True iff instance ``instance_id`` keeps at least one BERRY pixel."""
    cfg = cfg or LabelGenConfig()
    sel = inst.ids == instance_id
    if instance_id <= 0 or not sel.any():
        raise KeyError(f"instance id {instance_id} not present")
    # crop to the instance with enough margin that the window never sees past it
    ys, xs = np.nonzero(sel)
    t = cfg.edge_thickness_px
    h, w = sel.shape
    y0, y1 = max(ys.min() - t, 0), min(ys.max() + t + 1, h)
    x0, x1 = max(xs.min() - t, 0), min(xs.max() + t + 1, w)
    local = sel[y0:y1, x0:x1].astype(np.int32)
    return bool(berry_core_mask(local, t).any())
