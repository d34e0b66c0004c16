"""Pluggable per-patch pixel classifiers.

The segmentation network itself is not part of this package. Three backends
stand in for it:

``OracleBackend``
    crops of a reference ClassMask (perfect classifier);
``NoisyOracleBackend``
    reference crops corrupted by label flips and spurious blobs, seeded per
    (seed, image, placement) so the result never depends on scheduling;
``MaskFileBackend``
    crops of full-image predictions written by an external tool as
    ``<image_id>.png`` 8-bit class masks.
"""
from __future__ import annotations

import enum
import threading
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ValidationError
from .masks import ClassMask, Label, read_class_png

__all__ = [
    "BackendKind",
    "ClassifierBackend",
    "OracleBackend",
    "NoisyOracleBackend",
    "MaskFileBackend",
    "classify_patch",
    "make_backend",
]

BLOB_RADIUS_RANGE = (3, 8)


class BackendKind(str, enum.Enum):
    ORACLE = "oracle"
    NOISY_ORACLE = "noisy_oracle"
    MASK_FILE = "mask_file"


class ClassifierBackend:
    kind: BackendKind

    def image_shape(self, image_id: str) -> tuple[int, int]:
        raise NotImplementedError

    def classify_patch(self, image_id: str, placement: tuple[int, int],
                       patch_size: tuple[int, int]) -> ClassMask:
        raise NotImplementedError

    def _crop(self, full: ClassMask, image_id, placement, patch_size) -> np.ndarray:
        x0, y0 = placement
        pw, ph = patch_size
        h, w = full.shape
        if x0 < 0 or y0 < 0 or x0 + pw > w or y0 + ph > h:
            raise ValidationError(
                f"placement ({x0},{y0}) size {pw}x{ph} outside image {image_id!r} of {w}x{h}")
        return full.labels[y0:y0 + ph, x0:x0 + pw]


class OracleBackend(ClassifierBackend):
    kind = BackendKind.ORACLE

    def __init__(self, references: Mapping[str, ClassMask]):
        self.references = dict(references)

    def reference(self, image_id: str) -> ClassMask:
        try:
            return self.references[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def image_shape(self, image_id):
        return self.reference(image_id).shape

    def classify_patch(self, image_id, placement, patch_size):
        return ClassMask(self._crop(self.reference(image_id), image_id, placement, patch_size))


def _image_key(image_id: str) -> int:
    return zlib.crc32(image_id.encode("utf-8"))


def stamp_blob(labels: np.ndarray, cx: int, cy: int, radius: int,
               arc_start: float = 0.0, arc_fraction: float = 1.0) -> None:
    """Paint a BERRY disc with an EDGE ring over part of its 8-neighbour border.

    The ring pixels whose angle around the center falls in
    ``[arc_start, arc_start + 2*pi*arc_fraction)`` become EDGE; the rest of the
    ring keeps its label. Everything is clipped to ``labels``.
    """
    h, w = labels.shape
    r_out = radius + 2
    y0, y1 = max(cy - r_out, 0), min(cy + r_out + 1, h)
    x0, x1 = max(cx - r_out, 0), min(cx + r_out + 1, w)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    ring = ndimage.binary_dilation(disc, structure=np.ones((3, 3), dtype=bool)) & ~disc
    angle = np.mod(np.arctan2(yy - cy, xx - cx) - arc_start, 2 * np.pi)
    ring &= angle < 2 * np.pi * arc_fraction
    region = labels[y0:y1, x0:x1]
    region[ring] = Label.EDGE
    region[disc] = Label.BERRY


class NoisyOracleBackend(OracleBackend):
    """Oracle crops with reproducible corruption.

    Parameters
    ----------
    references : mapping of image id to ClassMask
    flip_probability : float
        Per-pixel chance of replacing the label by one of the other two
        classes (chosen uniformly).
    false_blob_rate : float
        Mean of the Poisson number of spurious discs per patch. Each disc has
        an integer radius drawn uniformly from 3..8, is painted BERRY and is
        ringed by one pixel of EDGE. The ring is clipped to the patch.
    seed : int
        Mandatory; combined with the image id and placement.
    """

    kind = BackendKind.NOISY_ORACLE

    def __init__(self, references, flip_probability: float = 0.0,
                 false_blob_rate: float = 0.0, seed: int | None = None):
        super().__init__(references)
        if seed is None:
            raise ConfigError("NoisyOracleBackend requires an explicit seed")
        if not 0.0 <= flip_probability <= 1.0:
            raise ConfigError(f"flip_probability must be in [0, 1], got {flip_probability}")
        if false_blob_rate < 0:
            raise ConfigError(f"false_blob_rate must be >= 0, got {false_blob_rate}")
        self.flip_probability = float(flip_probability)
        self.false_blob_rate = float(false_blob_rate)
        self.seed = int(seed)

    def rng_for(self, image_id: str, placement: tuple[int, int]) -> np.random.Generator:
        x0, y0 = placement
        return np.random.default_rng([self.seed, _image_key(image_id), int(x0), int(y0)])

    def classify_patch(self, image_id, placement, patch_size):
        labels = self._crop(self.reference(image_id), image_id, placement, patch_size).copy()
        rng = self.rng_for(image_id, placement)
        # fixed draw order keeps outputs stable when either knob is zero
        flips = rng.random(labels.shape) < self.flip_probability
        shift = rng.integers(1, 3, size=labels.shape, dtype=np.uint8)
        labels[flips] = (labels[flips] + shift[flips]) % 3
        n_blobs = rng.poisson(self.false_blob_rate) if self.false_blob_rate > 0 else 0
        ph, pw = labels.shape
        for _ in range(n_blobs):
            r = int(rng.integers(BLOB_RADIUS_RANGE[0], BLOB_RADIUS_RANGE[1] + 1))
            cx = int(rng.integers(0, pw))
            cy = int(rng.integers(0, ph))
            arc_start = float(rng.uniform(0.0, 2 * np.pi))
            arc_fraction = float(rng.uniform(0.0, 1.0))
            stamp_blob(labels, cx, cy, r, arc_start, arc_fraction)
        return ClassMask(labels)


class MaskFileBackend(ClassifierBackend):
    """Crops of precomputed full-image predictions in ``directory/<image_id>.png``."""

    kind = BackendKind.MASK_FILE

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._cache: dict[str, ClassMask] = {}
        self._lock = threading.Lock()

    def image_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.png"))

    def load(self, image_id: str) -> ClassMask:
        with self._lock:
            if image_id not in self._cache:
                path = self.directory / f"{image_id}.png"
                if not path.is_file():
                    raise FileNotFoundError(f"prediction mask not found: {path}")
                self._cache[image_id] = read_class_png(path)
            return self._cache[image_id]

    def image_shape(self, image_id):
        return self.load(image_id).shape

    def classify_patch(self, image_id, placement, patch_size):
        return ClassMask(self._crop(self.load(image_id), image_id, placement, patch_size))


def classify_patch(backend: ClassifierBackend, image_id: str, placement: tuple[int, int],
                   patch_size: tuple[int, int]) -> ClassMask:
    """Classify one ``patch_size = (w, h)`` window with origin ``placement = (x0, y0)``."""
    return backend.classify_patch(image_id, placement, patch_size)


def make_backend(kind: str | BackendKind, *, references: Mapping[str, ClassMask] | None = None,
                 directory: str | Path | None = None, flip_probability: float = 0.0,
                 false_blob_rate: float = 0.0, seed: int | None = None) -> ClassifierBackend:
    kind = BackendKind(kind)
    if kind is BackendKind.MASK_FILE:
        if directory is None:
            raise ConfigError("mask_file backend needs a directory")
        return MaskFileBackend(directory)
    if references is None:
        raise ConfigError(f"{kind.value} backend needs reference masks")
    if kind is BackendKind.ORACLE:
        return OracleBackend(references)
    return NoisyOracleBackend(references, flip_probability, false_blob_rate, seed)
