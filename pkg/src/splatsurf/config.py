"""Pipeline configuration: plain-text INI files with one section per stage,
CLI overrides, and stable hashing for the run manifest."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


@dataclass
class SceneConfig:
    source: str = "analytic"  # "analytic" or "splat"
    analytic_scene: str = ""
    splat_ply: str = ""
    camera_file: str = ""
    output_dir: str = "out"


@dataclass
class RigConfig:
    baseline_fraction: float = 0.07


@dataclass
class StereoConfig:
    max_disparity: str = "auto"  # "auto" = ceil(fx/2) capped at 256
    p1: int = 8
    p2: int = 96
    num_paths: int = 8
    lr_threshold: float = 1.0
    uniqueness_ratio: float = 0.95


@dataclass
class FusionConfig:
    voxel_size: str = "auto"  # "auto" = longest axis / grid_resolution
    grid_resolution: int = 128
    truncation: str = "auto"  # "auto" = max(4 * voxel, far-gate error bound)
    min_triangles: int = 100
    weight_cap: float = 128.0
    apply_object_masks: bool = False
    save_volume: bool = False


@dataclass
class SegmentationConfig:
    enabled: bool = False
    initial_mask: str = ""
    dilation_radius: int = 10
    num_seeds: int = 5
    refiner: str = "identity"  # "identity" or "external"
    refiner_cmd: str = ""


@dataclass
class EvalConfig:
    tau: str = "auto"  # "auto" = 2 * voxel_size of the fuse stage
    radius_small: float = 0.0025
    radius_large: float = 0.005
    sample_points: int = 200000
    gt_cloud: str = ""  # PLY path; empty with an analytic scene = oracle depth
    gt_stride: int = 2  # pixel stride when building the oracle cloud
    icp: bool = True
    icp_max_points: int = 20000  # strided subsample for the alignment fit


@dataclass
class RunConfig:
    threads: int = 1
    seed: int = 0


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    stereo: StereoConfig = field(default_factory=StereoConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        if self.scene.source not in ("analytic", "splat"):
            raise ConfigError(f"scene.source must be analytic or splat, got {self.scene.source!r}")
        has_analytic = bool(self.scene.analytic_scene)
        has_splat = bool(self.scene.splat_ply)
        if has_analytic == has_splat:
            raise ConfigError("exactly one of scene.analytic_scene / scene.splat_ply must be set")
        if self.scene.source == "analytic" and not has_analytic:
            raise ConfigError("scene.source=analytic requires scene.analytic_scene")
        if self.scene.source == "splat" and not has_splat:
            raise ConfigError("scene.source=splat requires scene.splat_ply")
        if not self.scene.camera_file:
            raise ConfigError("scene.camera_file is required")
        if not (0 < self.rig.baseline_fraction <= 0.07):
            raise ConfigError("rig.baseline_fraction must be in (0, 0.07]")
        if self.run.threads < 1:
            raise ConfigError("run.threads must be >= 1")
        if self.segmentation.refiner not in ("identity", "external"):
            raise ConfigError("segmentation.refiner must be identity or external")

    def hash(self) -> str:
        """Stable hash of everything semantic (thread count excluded)."""
        blob = asdict(self)
        blob["run"] = {k: v for k, v in blob["run"].items() if k != "threads"}
        return hashlib.sha256(
            json.dumps(blob, sort_keys=True).encode("utf-8")
        ).hexdigest()


_SECTIONS = {
    "scene": SceneConfig,
    "rig": RigConfig,
    "stereo": StereoConfig,
    "fusion": FusionConfig,
    "segmentation": SegmentationConfig,
    "eval": EvalConfig,
    "run": RunConfig,
}


def _coerce(raw: str, target_type: type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Build the config from an INI file plus ``section.key=value`` overrides.

    Overrides win over file values, which win over defaults.
    """
    config = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section_name, section in parser.items():
            if section_name == "DEFAULT":
                continue
            if section_name not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section_name}]")
            target = getattr(config, section_name)
            known = {f.name: f.type for f in fields(target)}
            for key, raw in section.items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
                current = getattr(target, key)
                setattr(target, key, _coerce(raw, type(current)))
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        section_name, key = dotted.split(".", 1)
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown config section {section_name!r}")
        target = getattr(config, section_name)
        if not hasattr(target, key):
            raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
        setattr(target, key, _coerce(raw, type(getattr(target, key))))
    return config


def save_config(path: str | Path, config: PipelineConfig) -> None:
    parser = configparser.ConfigParser()
    for name in _SECTIONS:
        parser[name] = {k: str(v) for k, v in asdict(getattr(config, name)).items()}
    with open(path, "w") as f:
        parser.write(f)
