"""Synthetic berry scenes with exact ground truth.

Berries are digital discs grouped in clusters. Each berry is either placed
touching/overlapping an earlier berry of its cluster (with probability
``touch_probability``, compact bunches) or scattered around the cluster
center with a guaranteed gap to every other berry (loose bunches). Later
discs occlude earlier ones.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .annotation import DotAnnotations
from .errors import ConfigError, GenerationError
from .labelgen import berry_core_mask
from .masks import FOUR_CONNECTED, ClassMask, InstanceMask, raster_relabel

__all__ = [
    "SceneConfig",
    "Scene",
    "generate_scene",
    "scene_sidecar",
    "Augment",
    "augment",
    "random_augment",
    "hflip_mask",
    "hflip_dots",
]

# touching placements use centre distance u * (r1 + r2) with u drawn from this range
TOUCH_OVERLAP = (0.75, 1.0)
# scattered placements keep centres at least r1 + r2 + SEPARATION_GAP apart,
# enough that the two digital discs are never 8-adjacent
SEPARATION_GAP = 3.0

BACKGROUND_LEVEL = 20


@dataclass(frozen=True)
class SceneConfig:
    image_w: int = 512
    image_h: int = 384
    n_clusters: int = 3
    berries_per_cluster: tuple[int, int] = (5, 15)
    radius_px: tuple[int, int] = (6, 12)
    cluster_spread_px: float = 30.0
    touch_probability: float = 0.5
    seed: int | None = None
    min_visible_px: int = 25
    # when set, every berry must keep a core of this many pixels under an
    # inner edge band of ``core_edge_px``; placements that break it are redrawn
    min_core_px: int | None = None
    core_edge_px: int = 2
    max_retries: int = 200

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("SceneConfig.seed is mandatory")
        object.__setattr__(self, "berries_per_cluster", tuple(int(v) for v in self.berries_per_cluster))
        object.__setattr__(self, "radius_px", tuple(int(v) for v in self.radius_px))
        lo, hi = self.berries_per_cluster
        if lo < 0 or hi < lo:
            raise ConfigError(f"berries_per_cluster range invalid: {self.berries_per_cluster}")
        rlo, rhi = self.radius_px
        if rlo < 2 or rhi < rlo:
            raise ConfigError(f"radius_px range invalid (radii must be >= 2): {self.radius_px}")
        if self.image_w < 1 or self.image_h < 1:
            raise ConfigError("image dimensions must be positive")
        if self.n_clusters < 0:
            raise ConfigError("n_clusters must be >= 0")
        if not 0.0 <= self.touch_probability <= 1.0:
            raise ConfigError(f"touch_probability must be in [0, 1], got {self.touch_probability}")
        if self.cluster_spread_px < 0:
            raise ConfigError("cluster_spread_px must be >= 0")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")
        if self.core_edge_px < 1:
            raise ConfigError("core_edge_px must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["berries_per_cluster"] = list(self.berries_per_cluster)
        d["radius_px"] = list(self.radius_px)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        d = dict(d)
        for key in ("berries_per_cluster", "radius_px"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class Scene(NamedTuple):
    instances: InstanceMask
    dots: DotAnnotations
    image: np.ndarray


def _disc_window(cx, cy, r, shape):
    h, w = shape
    y0, y1 = max(cy - r, 0), min(cy + r + 1, h)
    x0, x1 = max(cx - r, 0), min(cx + r + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return (slice(y0, y1), slice(x0, x1)), inside


class _Placer:
    """Sequential painter's-order disc placement with constraint checks."""

    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.ids = np.zeros((cfg.image_h, cfg.image_w), dtype=np.int32)
        self.discs: list[tuple[int, int, int]] = []  # (cx, cy, r), index = id - 1

    def _in_bounds(self, cx, cy, r) -> bool:
        return r <= cx <= self.cfg.image_w - 1 - r and r <= cy <= self.cfg.image_h - 1 - r

    def _separated(self, cx, cy, r) -> bool:
        for ox, oy, orad in self.discs:
            if math.hypot(cx - ox, cy - oy) < r + orad + SEPARATION_GAP:
                return False
        return True

    def _check(self, cx, cy, r) -> str | None:
        """Name of the violated constraint, or None if the disc may be painted."""
        cfg = self.cfg
        win, inside = _disc_window(cx, cy, r, self.ids.shape)
        covered = self.ids[win][inside]
        affected = set(np.unique(covered[covered > 0]).tolist())
        new_id = len(self.discs) + 1
        # local region spanning the new disc and every berry it touches
        boxes = [(cx - r, cy - r, cx + r, cy + r)]
        boxes += [(self.discs[k - 1][0] - self.discs[k - 1][2], self.discs[k - 1][1] - self.discs[k - 1][2],
                   self.discs[k - 1][0] + self.discs[k - 1][2], self.discs[k - 1][1] + self.discs[k - 1][2])
                  for k in affected]
        pad = cfg.core_edge_px + 1
        x0 = max(min(b[0] for b in boxes) - pad, 0)
        y0 = max(min(b[1] for b in boxes) - pad, 0)
        x1 = min(max(b[2] for b in boxes) + pad + 1, cfg.image_w)
        y1 = min(max(b[3] for b in boxes) + pad + 1, cfg.image_h)
        local = self.ids[y0:y1, x0:x1].copy()
        lwin = (slice(win[0].start - y0, win[0].stop - y0), slice(win[1].start - x0, win[1].stop - x0))
        local[lwin][inside] = new_id
        for k in affected:
            visible = int((local == k).sum())
            if visible < cfg.min_visible_px:
                return f"occlusion would leave berry {k} with {visible} px visible"
            _, pieces = ndimage.label(local == k, structure=FOUR_CONNECTED)
            if pieces > 1:
                return f"occlusion would split berry {k} into {pieces} pieces"
        if cfg.min_core_px is not None:
            core = berry_core_mask(local, cfg.core_edge_px)
            for k in affected | {new_id}:
                n_core = int((core & (local == k)).sum())
                if n_core < cfg.min_core_px:
                    return f"berry core below min_core_px={cfg.min_core_px} ({n_core} px)"
                _, pieces = ndimage.label(core & (local == k), structure=FOUR_CONNECTED)
                if pieces > 1:
                    return f"berry {k} core would split into {pieces} pieces"
        return None

    def place(self, cx, cy, r) -> None:
        win, inside = _disc_window(cx, cy, r, self.ids.shape)
        self.discs.append((cx, cy, r))
        self.ids[win][inside] = len(self.discs)

    def add_berry(self, cluster_center, cluster_members: list[int]) -> int:
        cfg, rng = self.cfg, self.rng
        r = int(rng.integers(cfg.radius_px[0], cfg.radius_px[1] + 1))
        touching = bool(cluster_members) and rng.random() < cfg.touch_probability
        last = "no attempt"
        for _ in range(cfg.max_retries):
            if touching:
                anchor = cluster_members[int(rng.integers(len(cluster_members)))]
                ax, ay, ar = self.discs[anchor - 1]
                theta = rng.uniform(0.0, 2.0 * math.pi)
                dist = rng.uniform(*TOUCH_OVERLAP) * (r + ar)
                cx = int(round(ax + dist * math.cos(theta)))
                cy = int(round(ay + dist * math.sin(theta)))
            else:
                off = rng.normal(0.0, cfg.cluster_spread_px, size=2)
                cx = int(round(cluster_center[0] + off[0]))
                cy = int(round(cluster_center[1] + off[1]))
            if not self._in_bounds(cx, cy, r):
                last = "disc must lie fully inside the image"
                continue
            if not touching and not self._separated(cx, cy, r):
                last = "scattered berry must keep a gap to all other berries"
                continue
            problem = self._check(cx, cy, r)
            if problem is not None:
                last = problem
                continue
            self.place(cx, cy, r)
            return len(self.discs)
        raise GenerationError(
            f"could not place berry {len(self.discs) + 1} (radius {r}) after "
            f"{cfg.max_retries} retries; last violated constraint: {last}")


def _dot_for(mask: np.ndarray, origin: tuple[int, int], core_edge_px: int) -> tuple[int, int]:
    """Marker for one instance: its rounded centroid, or its deepest pixel when
    the centroid falls outside the instance or inside its edge band."""
    ys, xs = np.nonzero(mask)
    cy, cx = ys.mean(), xs.mean()
    padded = np.pad(mask, 1)
    depth = ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1]
    ry, rx = math.floor(cy + 0.5), math.floor(cx + 0.5)
    if mask[ry, rx] and depth[ry, rx] > core_edge_px:
        y, x = ry, rx
    else:
        best = depth.max()
        cand_y, cand_x = np.nonzero(depth == best)
        d2 = (cand_y - cy) ** 2 + (cand_x - cx) ** 2
        i = int(np.lexsort((cand_x, cand_y, d2))[0])
        y, x = int(cand_y[i]), int(cand_x[i])
    return int(x + origin[0]), int(y + origin[1])


def _render(ids: np.ndarray, discs: list[tuple[int, int, int]], id_map: np.ndarray) -> np.ndarray:
    """Shaded discs on a dark background (cosmetic only)."""
    img = np.full(ids.shape, BACKGROUND_LEVEL, dtype=np.float64)
    if discs:
        arr = np.array(discs, dtype=np.float64)
        yy, xx = np.indices(ids.shape)
        sel = id_map > 0
        k = id_map[sel] - 1
        d = np.hypot(xx[sel] - arr[k, 0], yy[sel] - arr[k, 1]) / arr[k, 2]
        img[sel] = 70.0 + 160.0 * np.sqrt(np.clip(1.0 - d * d, 0.0, 1.0))
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate_scene(cfg: SceneConfig) -> Scene:
    """Instance mask, dot markers and grayscale rendering for one seed."""
    # cluster layout and placement use separate streams so the planned berry
    # count depends only on the seed, not on touch_probability
    plan_rng = np.random.default_rng([cfg.seed, 0])
    placer = _Placer(cfg, np.random.default_rng([cfg.seed, 1]))
    margin = cfg.radius_px[1]
    if cfg.n_clusters and (cfg.image_w <= 2 * margin or cfg.image_h <= 2 * margin):
        raise GenerationError(
            f"image {cfg.image_w}x{cfg.image_h} too small for radius {cfg.radius_px[1]}")
    # keep cluster centres one spread away from the border when the image allows,
    # otherwise scattered berries around border clusters mostly fall outside
    mx = min(margin + cfg.cluster_spread_px, (cfg.image_w - 1) / 2)
    my = min(margin + cfg.cluster_spread_px, (cfg.image_h - 1) / 2)
    plan = []
    for _ in range(cfg.n_clusters):
        center = (plan_rng.uniform(mx, cfg.image_w - 1 - mx), plan_rng.uniform(my, cfg.image_h - 1 - my))
        plan.append((center, int(plan_rng.integers(cfg.berries_per_cluster[0], cfg.berries_per_cluster[1] + 1))))
    for center, n in plan:
        members: list[int] = []
        for _ in range(n):
            members.append(placer.add_berry(center, members))

    ids = placer.ids
    # drop berries occluded below the visibility threshold
    sizes = np.bincount(ids.ravel(), minlength=len(placer.discs) + 1)
    small = np.flatnonzero(sizes < cfg.min_visible_px)
    ids = np.where(np.isin(ids, small[small > 0]), 0, ids)
    disc_ids = ids  # ids still index ``placer.discs``
    ids, n = raster_relabel(ids)

    dots = []
    slices = ndimage.find_objects(ids)
    for k, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        dots.append(_dot_for(ids[sl] == k, (sl[1].start, sl[0].start), cfg.core_edge_px))
    image = _render(ids, placer.discs, disc_ids)
    return Scene(InstanceMask(ids), DotAnnotations(tuple(dots)), image)


def scene_sidecar(cfg: SceneConfig, scene: Scene) -> str:
    """JSON sidecar with the generating config and the true berry count."""
    return json.dumps({"config": cfg.to_dict(), "true_berry_count": len(scene.dots),
                       "image_w": cfg.image_w, "image_h": cfg.image_h}, indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------- #
# Augmentations
# --------------------------------------------------------------------------- #
class Augment(str, enum.Enum):
    HFLIP = "hflip"
    BLUR = "blur"
    GAMMA = "gamma"


BLUR_KERNELS = (3, 5, 7)
GAMMA_RANGE = (0.8, 1.2)


def augment(image: np.ndarray, mode: Augment | str, param: float | None = None) -> np.ndarray:
    """Apply one augmentation.

    ``BLUR`` takes an odd kernel size from 3, 5, 7 (box filter, reflected
    borders). ``GAMMA`` maps normalized intensity v to v**g for g in
    [0.8, 1.2]; uint8 images are normalized by 255, float images are taken to
    be in [0, 1].
    """
    mode = Augment(mode)
    image = np.asarray(image)
    if mode is Augment.HFLIP:
        return image[:, ::-1].copy()
    if mode is Augment.BLUR:
        if param is None or int(param) != param or int(param) not in BLUR_KERNELS:
            raise ConfigError(f"blur kernel must be one of {BLUR_KERNELS}, got {param}")
        k = int(param)
        size = (k, k) + (1,) * (image.ndim - 2)
        out = ndimage.uniform_filter(image.astype(np.float64), size=size, mode="reflect")
        if np.issubdtype(image.dtype, np.integer):
            return np.clip(np.round(out), np.iinfo(image.dtype).min, np.iinfo(image.dtype).max).astype(image.dtype)
        return out.astype(image.dtype)
    if param is None or not GAMMA_RANGE[0] <= param <= GAMMA_RANGE[1]:
        raise ConfigError(f"gamma must lie in {GAMMA_RANGE}, got {param}")
    if image.dtype == np.uint8:
        v = image.astype(np.float64) / 255.0
        return np.round(255.0 * v ** param).astype(np.uint8)
    return (np.clip(image, 0.0, 1.0) ** param).astype(image.dtype)


def random_augment(image: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, list[tuple[str, float | None]]]:
    """Randomly flip, blur and gamma-shift; returns the image and the applied steps."""
    steps: list[tuple[str, float | None]] = []
    if rng.random() < 0.5:
        image = augment(image, Augment.HFLIP)
        steps.append((Augment.HFLIP.value, None))
    k = int(rng.choice(BLUR_KERNELS))
    image = augment(image, Augment.BLUR, k)
    steps.append((Augment.BLUR.value, k))
    g = float(rng.uniform(*GAMMA_RANGE))
    image = augment(image, Augment.GAMMA, g)
    steps.append((Augment.GAMMA.value, g))
    return image, steps


def hflip_mask(mask):
    """Mirror an InstanceMask, ClassMask or plain array left-right."""
    if isinstance(mask, InstanceMask):
        return InstanceMask(mask.ids[:, ::-1])
    if isinstance(mask, ClassMask):
        return ClassMask(mask.labels[:, ::-1])
    return np.asarray(mask)[:, ::-1].copy()


def hflip_dots(dots: DotAnnotations, width: int) -> DotAnnotations:
    return DotAnnotations(tuple((width - 1 - x, y) for x, y in dots.markers))
