"""Run configuration: one JSON document covering dataset synthesis, fitting,
diffusion training, sampling, extraction, and evaluation.

Defaults follow the full-scale training recipe wherever one is stated
(schedule, optimizer, token architecture); sizes that only matter for scale
(denoiser width/depth, sampling counts, epochs) default to desk-scale values
and are overridable in the file.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .diffusion import DiffusionTrainConfig
from .field_mlp import FieldMLPConfig, FitConfig


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "procedural"  # "procedural" | "dir"
    mesh_dir: str | None = None  # used when source == "dir"
    family: str = "ellipsoid"  # procedural family: sphere|ellipsoid|box|torus|pulsating_sphere
    count: int = 8
    axis_lo: float = 0.25  # semi-axis / radius range for procedural families
    axis_hi: float = 0.35
    subdivisions: int = 2
    n_uniform: int = 20_000  # full-scale setting: 100_000
    n_near: int = 20_000  # full-scale setting: 100_000
    near_sigma: float = 0.01
    n_per_frame: int = 12_000  # 4D; full-scale setting: 200_000
    n_frames: int = 16
    eval_grid: int = 32  # held-out IoU grid resolution (per frame for 4D)


@dataclass(frozen=True)
class DenoiserSettings:
    hidden_size: int = 256  # full-scale setting: 2880
    layers: int = 6  # full-scale: 12
    heads: int = 8  # full-scale: 16
    freq_base: float = 10000.0


@dataclass(frozen=True)
class ScheduleConfig:
    timesteps: int = 500
    beta_start: float = 1e-4
    beta_end: float = 2e-2


@dataclass(frozen=True)
class SampleConfig:
    count: int = 8  # de-duplicated samples kept (2x this many are drawn)
    dedupe_threshold: float = 0.02  # Chamfer, normalized units
    trajectory: tuple[int, ...] = ()  # iteration counts to snapshot, e.g. (0, 100, 250, 500)


@dataclass(frozen=True)
class ExtractConfig:
    resolution: int = 64
    frames: int = 16  # 4D only


@dataclass(frozen=True)
class MetricConfig:
    points_per_cloud: int = 2048


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "3d"  # "3d" | "4d"
    run_dir: str = "runs/demo"
    seed: int = 0
    jobs: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    mlp: FieldMLPConfig = field(default_factory=FieldMLPConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    denoiser: DenoiserSettings = field(default_factory=DenoiserSettings)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: DiffusionTrainConfig = field(default_factory=DiffusionTrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.mode not in ("3d", "4d"):
            raise ValueError(f"mode must be '3d' or '4d', got {self.mode!r}")
        expected_dim = 3 if self.mode == "3d" else 4
        if self.mlp.input_dim != expected_dim:
            raise ValueError(f"mode {self.mode} requires mlp.input_dim == {expected_dim}")


_SECTIONS = {
    "dataset": DatasetConfig,
    "mlp": FieldMLPConfig,
    "fit": FitConfig,
    "denoiser": DenoiserSettings,
    "schedule": ScheduleConfig,
    "train": DiffusionTrainConfig,
    "sample": SampleConfig,
    "extract": ExtractConfig,
    "metrics": MetricConfig,
}


def default_config(mode: str = "3d") -> PipelineConfig:
    mlp = FieldMLPConfig(input_dim=3 if mode == "3d" else 4)
    dataset = DatasetConfig() if mode == "3d" else DatasetConfig(family="pulsating_sphere",
                                                                count=4)
    return PipelineConfig(mode=mode, mlp=mlp, dataset=dataset)


def to_dict(config: PipelineConfig) -> dict:
    d = dataclasses.asdict(config)
    d["sample"]["trajectory"] = list(config.sample.trajectory)
    return d


def from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            section = dict(d.pop(name))
            if name == "sample" and "trajectory" in section:
                section["trajectory"] = tuple(int(s) for s in section["trajectory"])
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = set(section) - known
            if unknown:
                raise ValueError(f"unknown keys in config section {name!r}: "
                                 f"{sorted(unknown)}")
            kwargs[name] = cls(**section)
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs.update(d)
    return PipelineConfig(**kwargs)


def to_json(config: PipelineConfig) -> str:
    return json.dumps(to_dict(config), indent=2, sort_keys=True)


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        return from_dict(json.load(f))


def save_config(config: PipelineConfig, path):
    with open(path, "w") as f:
        f.write(to_json(config) + "\n")
