"""Run configuration, loaded from a single YAML file."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .board import BoardGeometry
from .geometry import CameraIntrinsics, GeometryError
from .lidar import ExtractionConfig, ExtractionError, RoiBox


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    intrinsics: CameraIntrinsics
    board: BoardGeometry = BoardGeometry()
    image_size: tuple = (1920, 1200)
    roi: Optional[RoiBox] = None
    range_offset_m: float = 0.0  # e.g. -0.030 for a VLP-16, +0.105 for a Baraja Spectrum-Scan
    extraction: ExtractionConfig = ExtractionConfig()
    seed: int = 0
    k_sets: int = 50
    kappa_warn: float = 50.0
    kappa_prefilter: Optional[float] = None
    board_error_weight: float = 1.0
    z_threshold: float = 2.0
    refine: bool = False
    camera_refine: bool = True
    depth_colour_range: tuple = (3.0, 20.0)
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            d[f.name] = _plain(v)
        return d

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return "sha256:" + hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Config":
        d = {k: v for k, v in kw.items() if v is not None}
        return Config(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **d})


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


def _build(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    conv = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**conv)


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    data = dict(data)
    known = {f.name for f in fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "intrinsics" not in data:
        raise ConfigError("config needs an 'intrinsics' block")
    try:
        data["intrinsics"] = _build(CameraIntrinsics, data["intrinsics"], "intrinsics")
        data["board"] = _build(BoardGeometry, data.get("board"), "board")
        data["extraction"] = _build(ExtractionConfig, data.get("extraction"), "extraction")
        if data.get("roi") is not None:
            data["roi"] = _build(RoiBox, data["roi"], "roi")
        for key in ("image_size", "depth_colour_range"):
            if key in data:
                data[key] = tuple(data[key])
        cfg = Config(**data)
    except (TypeError, GeometryError, ExtractionError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.k_sets < 1:
        raise ConfigError("k_sets must be positive")
    if cfg.z_threshold <= 0:
        raise ConfigError("z_threshold must be positive")
    return cfg


def load_config(path) -> Config:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
