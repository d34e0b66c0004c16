"""Roundness and edge-surround filters for berry candidates.

Three independent rules, combined as a conjunction:

axis
    minor / major semi-axis ratio must reach ``axis_ratio_min``;
area
    with r the mean of the two semi-axes, the pixel area must reach
    ``area_ratio_min * pi * r**2``;
edge
    the EDGE share of the outer ring must reach ``edge_surround_min``.

All comparisons are inclusive. ``radius_mode="full"`` takes r as the mean of
the *full* axis lengths instead, for sensitivity studies only.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .components import BerryComponent
from .errors import ConfigError

__all__ = [
    "FilterConfig",
    "Rejection",
    "axis_filter",
    "area_filter",
    "edge_filter",
    "apply_filters",
    "ablation",
    "write_ablation_csv",
    "FILTER_NAMES",
]

FILTER_NAMES = ("axis", "area", "edge")
_REL_TOL = 1e-12


def _at_least(value: float, threshold: float) -> bool:
    return value >= threshold or math.isclose(value, threshold, rel_tol=_REL_TOL, abs_tol=1e-15)


@dataclass(frozen=True)
class FilterConfig:
    axis_ratio_min: float = 0.3
    area_ratio_min: float = 0.3
    edge_surround_min: float = 0.4
    use_axis: bool = True
    use_area: bool = True
    use_edge: bool = True
    radius_mode: str = "semi"

    def __post_init__(self):
        for name in ("axis_ratio_min", "area_ratio_min", "edge_surround_min"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.radius_mode not in ("semi", "full"):
            raise ConfigError(f"radius_mode must be 'semi' or 'full', got {self.radius_mode!r}")

    @property
    def enabled(self) -> tuple[str, ...]:
        flags = (self.use_axis, self.use_area, self.use_edge)
        return tuple(n for n, on in zip(FILTER_NAMES, flags) if on)

    def with_filters(self, names: Sequence[str]) -> "FilterConfig":
        names = set(names)
        unknown = names - set(FILTER_NAMES)
        if unknown:
            raise ConfigError(f"unknown filter(s): {sorted(unknown)}")
        return replace(self, use_axis="axis" in names, use_area="area" in names,
                       use_edge="edge" in names)


@dataclass(frozen=True)
class Rejection:
    component: BerryComponent
    reasons: frozenset[str]


def axis_filter(comp: BerryComponent, cfg: FilterConfig) -> bool:
    major = comp.major_semi_axis_px
    if major <= 0:
        return False
    return _at_least(comp.minor_semi_axis_px / major, cfg.axis_ratio_min)


def circle_radius(comp: BerryComponent, radius_mode: str = "semi") -> float:
    r = 0.5 * (comp.minor_semi_axis_px + comp.major_semi_axis_px)
    return 2.0 * r if radius_mode == "full" else r


def area_filter(comp: BerryComponent, cfg: FilterConfig) -> bool:
    r = circle_radius(comp, cfg.radius_mode)
    return _at_least(comp.area_px, cfg.area_ratio_min * math.pi * r * r)


def edge_filter(comp: BerryComponent, cfg: FilterConfig) -> bool:
    return _at_least(comp.edge_surround_fraction, cfg.edge_surround_min)


_PREDICATES = {"axis": axis_filter, "area": area_filter, "edge": edge_filter}


def apply_filters(comps: Sequence[BerryComponent], cfg: FilterConfig | None = None
                  ) -> tuple[list[BerryComponent], list[Rejection]]:
    """Split ``comps`` into kept and rejected; every failing filter is recorded."""
    cfg = cfg or FilterConfig()
    kept, rejected = [], []
    for comp in comps:
        failed = frozenset(n for n in cfg.enabled if not _PREDICATES[n](comp, cfg))
        if failed:
            rejected.append(Rejection(comp, failed))
        else:
            kept.append(comp)
    return kept, rejected


# progressive filter sets, as in the usual ablation layout
ABLATION_STEPS: tuple[tuple[str, ...], ...] = ((), ("axis",), ("axis", "area"), ("axis", "area", "edge"))


def ablation(comps: Sequence[BerryComponent], cfg: FilterConfig | None = None,
             steps: Sequence[Sequence[str]] = ABLATION_STEPS) -> list[dict]:
    cfg = cfg or FilterConfig()
    rows = []
    for step in steps:
        kept, rejected = apply_filters(comps, cfg.with_filters(step))
        rows.append({"filters": "+".join(step) or "none", "kept": len(kept), "rejected": len(rejected)})
    return rows


def write_ablation_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["filters", "kept", "rejected"],
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
