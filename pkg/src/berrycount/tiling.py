"""Overlapping patch grid, patch extraction and majority-vote stitching."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError
from .masks import ClassMask, Label

__all__ = ["PatchGrid", "PatchStack", "plan_grid", "extract", "stitch_majority", "vote_counts"]

# Tie precedence, strongest first: EDGE > BERRY > BACKGROUND.
_PRECEDENCE = (Label.EDGE, Label.BERRY, Label.BACKGROUND)


@dataclass(frozen=True)
class PatchGrid:
    image_w: int
    image_h: int
    patch_w: int
    patch_h: int
    stride_x: int
    stride_y: int
    placements: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.patch_w > self.image_w or self.patch_h > self.image_h:
            raise ConfigError(
                f"patch {self.patch_w}x{self.patch_h} larger than image {self.image_w}x{self.image_h}")
        if list(self.placements) != sorted(set(self.placements), key=lambda p: (p[1], p[0])):
            raise ValidationError("placements must be unique and sorted row-major")
        for x0, y0 in self.placements:
            if not (0 <= x0 <= self.image_w - self.patch_w and 0 <= y0 <= self.image_h - self.patch_h):
                raise ValidationError(f"placement ({x0},{y0}) leaves the image")

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.image_h, self.image_w

    def __len__(self) -> int:
        return len(self.placements)

    def window(self, index: int) -> tuple[slice, slice]:
        x0, y0 = self.placements[index]
        return slice(y0, y0 + self.patch_h), slice(x0, x0 + self.patch_w)

    def coverage(self) -> np.ndarray:
        """Number of patches covering each pixel."""
        cov = np.zeros(self.image_shape, dtype=np.int32)
        for i in range(len(self)):
            cov[self.window(i)] += 1
        return cov


def _axis_origins(image: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, image - patch + 1, stride))
    if origins[-1] + patch < image:
        origins.append(image - patch)
    return origins


def plan_grid(image_w: int, image_h: int, patch_w: int = 512, patch_h: int = 384,
              overlap_fraction: float = 0.5) -> PatchGrid:
    """Sliding-window layout with the final window in each axis clamped to the border.

    The stride is ``round(patch * (1 - overlap))`` (halves round up). Origins
    run 0, stride, 2*stride, ... and, when the last regular window stops short
    of the border, one extra window is placed flush with it. No padding is
    ever introduced.
    """
    if not 0 <= overlap_fraction < 1:
        raise ConfigError(f"overlap_fraction must lie in [0, 1), got {overlap_fraction}")
    if min(image_w, image_h, patch_w, patch_h) < 1:
        raise ConfigError("image and patch dimensions must be positive")
    if patch_w > image_w or patch_h > image_h:
        raise ConfigError(f"patch {patch_w}x{patch_h} larger than image {image_w}x{image_h}")
    stride_x = math.floor(patch_w * (1 - overlap_fraction) + 0.5)
    stride_y = math.floor(patch_h * (1 - overlap_fraction) + 0.5)
    if stride_x < 1 or stride_y < 1:
        raise ConfigError(f"overlap {overlap_fraction} gives a degenerate stride")
    xs = _axis_origins(image_w, patch_w, stride_x)
    ys = _axis_origins(image_h, patch_h, stride_y)
    placements = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(image_w, image_h, patch_w, patch_h, stride_x, stride_y, placements)


@dataclass(frozen=True, eq=False)
class PatchStack:
    """Per-placement crops, stored as one ``(n, patch_h, patch_w, ...)`` array."""

    grid: PatchGrid
    patches: np.ndarray

    def __post_init__(self):
        patches = np.asarray(self.patches)
        if patches.shape[0] != len(self.grid):
            raise ValidationError(
                f"{patches.shape[0]} patches for {len(self.grid)} placements")
        if patches.shape[1:3] != (self.grid.patch_h, self.grid.patch_w):
            raise ValidationError(
                f"patch shape {patches.shape[1:3]} != grid patch "
                f"{(self.grid.patch_h, self.grid.patch_w)}")
        object.__setattr__(self, "patches", patches)

    @classmethod
    def from_list(cls, grid: PatchGrid, patches: Sequence) -> "PatchStack":
        arrs = [p.labels if isinstance(p, ClassMask) else np.asarray(p) for p in patches]
        return cls(grid, np.stack(arrs) if arrs else np.zeros((0, grid.patch_h, grid.patch_w)))

    def __len__(self) -> int:
        return self.patches.shape[0]


def extract(data, grid: PatchGrid) -> PatchStack:
    """Crop ``data`` (ClassMask, 2-D mask or HxWxC image) at every placement."""
    arr = data.labels if isinstance(data, ClassMask) else np.asarray(data)
    if arr.shape[:2] != grid.image_shape:
        raise ValidationError(f"input shape {arr.shape[:2]} does not match grid {grid.image_shape}")
    patches = np.stack([arr[grid.window(i)] for i in range(len(grid))])
    return PatchStack(grid, patches)


def vote_counts(stack: PatchStack) -> np.ndarray:
    """Per-pixel vote tallies, shape ``(3, H, W)`` indexed by ``Label``."""
    grid = stack.grid
    votes = np.zeros((3,) + grid.image_shape, dtype=np.uint16)
    for i in range(len(stack)):
        win = grid.window(i)
        patch = stack.patches[i]
        for c in Label:
            votes[(c,) + win] += patch == c
    return votes


def stitch_majority(stack: PatchStack) -> ClassMask:
    """Per-pixel plurality over all covering patches.

    Ties resolve EDGE > BERRY > BACKGROUND. Tallies are integer sums, so the
    result does not depend on the order of patches in the stack.
    """
    votes = vote_counts(stack)
    ordered = votes[list(_PRECEDENCE)]
    # argmax returns the first maximum, i.e. the class with highest precedence
    winner = np.argmax(ordered, axis=0)
    lut = np.array([int(c) for c in _PRECEDENCE], dtype=np.uint8)
    return ClassMask(lut[winner])
