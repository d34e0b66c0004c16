"""Pipeline configuration: a flat ``key = value`` text file plus CLI overrides.

Lines starting with ``#`` or ``;`` are comments. Unknown keys are an error.
Every run writes the fully resolved configuration next to its outputs.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .components import ComponentConfig
from .errors import ConfigError
from .labelgen import LabelGenConfig
from .postfilter import FilterConfig

__all__ = ["PipelineConfig", "load_config", "RESOLVED_CONFIG_NAME"]

RESOLVED_CONFIG_NAME = "resolved_config.txt"
_SECTION = "pipeline"

# execution-only settings left out of the resolved copy so outputs do not
# depend on how many workers produced them
_EXECUTION_KEYS = {"workers"}


@dataclass(frozen=True)
class PipelineConfig:
    edge_thickness_px: int = 2
    patch_w: int = 512
    patch_h: int = 384
    overlap: float = 0.5
    min_component_px: int = 25
    axis_ratio_min: float = 0.3
    area_ratio_min: float = 0.3
    edge_surround_min: float = 0.4
    use_axis: bool = True
    use_area: bool = True
    use_edge: bool = True
    radius_mode: str = "semi"
    backend: str = "oracle"
    flip_probability: float = 0.0
    false_blob_rate: float = 0.0
    seed: int = 0
    marker_tolerance_px: int = 0
    group: str = "default"
    groups_file: str = ""
    palette: str = "255,0,0;0,255,0;0,0,255;255,255,0"
    background_color: str = "0,0,0"
    workers: int = 1

    def __post_init__(self):
        # delegate range checks to the owning modules
        self.labelgen
        self.components
        self.filters
        if not 0 <= self.overlap < 1:
            raise ConfigError(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.patch_w < 1 or self.patch_h < 1:
            raise ConfigError("patch dimensions must be positive")
        if self.backend not in ("oracle", "noisy_oracle", "mask_file"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if not 0 <= self.flip_probability <= 1:
            raise ConfigError("flip_probability must lie in [0, 1]")
        if self.false_blob_rate < 0:
            raise ConfigError("false_blob_rate must be >= 0")
        if self.marker_tolerance_px not in (0, 1):
            raise ConfigError("marker_tolerance_px must be 0 or 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.palette_colors
        self.background_rgb

    @property
    def labelgen(self) -> LabelGenConfig:
        return LabelGenConfig(self.edge_thickness_px)

    @property
    def components(self) -> ComponentConfig:
        return ComponentConfig(self.min_component_px)

    @property
    def filters(self) -> FilterConfig:
        return FilterConfig(self.axis_ratio_min, self.area_ratio_min, self.edge_surround_min,
                            self.use_axis, self.use_area, self.use_edge, self.radius_mode)

    @property
    def palette_colors(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(_parse_color(c) for c in self.palette.split(";") if c.strip())

    @property
    def background_rgb(self) -> tuple[int, int, int]:
        return _parse_color(self.background_color)

    def updated(self, **overrides: Any) -> "PipelineConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(clean) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return replace(self, **{k: _coerce(k, v) for k, v in clean.items()})

    def to_text(self) -> str:
        lines = ["# resolved pipeline configuration"]
        for f in fields(self):
            if f.name in _EXECUTION_KEYS:
                continue
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / RESOLVED_CONFIG_NAME
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def _parse_color(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"invalid color {text!r}; expected 'r,g,b'") from None
    if len(parts) != 3 or not all(0 <= p <= 255 for p in parts):
        raise ConfigError(f"invalid color {text!r}; expected 'r,g,b' with values 0-255")
    return parts


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _TYPES[key]
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if kind == "bool":
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None
    return value


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        text = Path(path).read_text(encoding="utf-8")
        try:
            parser.read_string(f"[{_SECTION}]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        values.update(parser[_SECTION])
    cfg = PipelineConfig()
    return cfg.updated(**values).updated(**overrides)
