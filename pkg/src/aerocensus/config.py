"""Pipeline configuration: nested dataclasses, strict YAML loading, seed fan-out.

Every module parameter defaults to the published recipe values (512 patches,
1350x1353 resize target, 112 grid cells capped at 50 per neighborhood, batch
size 16, patience 5, the {32,64}x{50,100,200} cluster grid, and so on).
Unknown keys are rejected with the YAML line number; every run writes a
resolved snapshot sufficient to reproduce it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class PathsConfig:
    data_root: str = "data"
    out_root: str = "runs"


@dataclass
class SurveyConfig:
    endpoint: str = "https://api.census.gov/data/{year}/acs/acs5"
    fixture: str | None = None
    year: int = 2021
    state_fips: str = "99"
    county_fips: str = "001"
    timeout: float = 60.0
    retries: int = 3


@dataclass
class IngestConfig:
    tiles_dir: str | None = None  # default: <data_root>/tiles
    boundaries: str | None = None  # default: <data_root>/boundaries.geojson
    bands: str = "rgb"
    workers: int = 0


@dataclass
class CropConfig:
    patch_size: int = 512
    keep_threshold: float = 0.5
    resize_height: int = 1350
    resize_width: int = 1353
    grid_cell: int = 112
    grid_cap: int = 50


@dataclass
class SplitConfig:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    supervised_group_by: str = "item"
    semisup_group_by: str = "neighborhood"


@dataclass
class SynthConfig:
    enabled: bool = False
    n_hoods: int = 64
    density_range: tuple[float, float] = (2.0, 15_000.0)
    hood_px_range: tuple[int, int] = (90, 200)
    building_px_range: tuple[int, int] = (4, 11)
    persons_per_building: float = 4.0
    noise: float = 0.08
    income_range: tuple[float, float] = (20_000.0, 250_001.0)
    gsd: float = 0.6
    tile_grid: tuple[int, int] = (2, 2)
    fixed_density: float | None = None


@dataclass
class SupervisedTrainConfig:
    targets: tuple[str, ...] = ("density", "income", "education")
    mode: str = "resizing"
    backbone_weights: str = "imagenet"
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-2
    patience: int = 5
    max_epochs: int = 60
    dropout: float = 0.30
    in_channels: int = 3
    normalize_labels: bool = False


@dataclass
class BovwTrainConfig:
    targets: tuple[str, ...] = ("density", "income", "education")
    methods: tuple[str, ...] = ("kmeans", "dec")
    d_z_grid: tuple[int, ...] = (32, 64)
    k_grid: tuple[int, ...] = (50, 100, 200)
    dec_extra_k: tuple[int, ...] = (20,)
    feature_modes: tuple[str, ...] = ("frequency", "distance")
    rf_n_estimators: tuple[int, ...] = (50, 100, 200)
    rf_max_depth: tuple[int | None, ...] = (4, 8, None)
    rf_min_samples_leaf: tuple[int, ...] = (1,)
    distance_weight: float = 0.1
    ae_epochs: int = 40
    dec_epochs: int = 20
    batch_size: int = 32

    def rf_grid(self) -> dict:
        return {
            "n_estimators": tuple(self.rf_n_estimators),
            "max_depth": tuple(None if d in (None, "none", -1) else d for d in self.rf_max_depth),
            "min_samples_leaf": tuple(self.rf_min_samples_leaf),
        }


@dataclass
class EvaluateConfig:
    split: str = "test"


@dataclass
class ExplainConfig:
    n_background: int = 32
    n_attribution: int = 100
    saliency_grid: tuple[int, int] = (4, 4)
    saliency_permutations: int = 8
    n_saliency_patches: int = 10
    cluster_sheet_n: int = 16
    n_cluster_sheets: int = 2


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    survey: SurveyConfig = field(default_factory=SurveyConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    supervised: SupervisedTrainConfig = field(default_factory=SupervisedTrainConfig)
    bovw: BovwTrainConfig = field(default_factory=BovwTrainConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)


_LINES_KEY = "__lines__"


class _MarkedLoader(yaml.SafeLoader):
    """SafeLoader that records the line number of every mapping key."""


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=deep)
    lines = {}
    for key_node, _ in node.value:
        if hasattr(key_node, "value"):
            lines[key_node.value] = key_node.start_mark.line + 1
    mapping[_LINES_KEY] = lines
    return mapping


_MarkedLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _build(cls, data: dict, path: str, source: str):
    lines = data.pop(_LINES_KEY, {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            where = f"{source}:{lines[key]}: " if key in lines else f"{source}: "
            raise ConfigError(f"{where}unknown config key {path + key!r}")
        ftype = fields[key].type
        if dataclasses.is_dataclass(_SECTION_TYPES.get(key)) and isinstance(value, dict):
            kwargs[key] = _build(_SECTION_TYPES[key], value, f"{path}{key}.", source)
        elif isinstance(value, dict):
            where = f"{source}:{lines[key]}: " if key in lines else f"{source}: "
            raise ConfigError(f"{where}config key {path + key!r} does not take a mapping")
        elif isinstance(value, list):
            kwargs[key] = tuple(_strip_lines(v) for v in value)
        else:
            kwargs[key] = value
        _ = ftype
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{source}: bad section {path.rstrip('.') or 'root'!r}: {exc}") from exc


def _strip_lines(value):
    if isinstance(value, dict):
        value.pop(_LINES_KEY, None)
        return {k: _strip_lines(v) for k, v in value.items()}
    if isinstance(value, list):
        return tuple(_strip_lines(v) for v in value)
    return value


_SECTION_TYPES = {
    "paths": PathsConfig,
    "survey": SurveyConfig,
    "ingest": IngestConfig,
    "crop": CropConfig,
    "split": SplitConfig,
    "synth": SynthConfig,
    "supervised": SupervisedTrainConfig,
    "bovw": BovwTrainConfig,
    "evaluate": EvaluateConfig,
    "explain": ExplainConfig,
}


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a YAML config file.

    Syntax errors and unknown keys carry line numbers so they can be fixed
    without guesswork.
    """
    path = Path(path)
    try:
        raw = yaml.load(path.read_text(), Loader=_MarkedLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}{line}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return _build(PipelineConfig, raw, "", str(path))


def config_to_dict(config: PipelineConfig) -> dict:
    def walk(value):
        if dataclasses.is_dataclass(value):
            return {f.name: walk(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [walk(v) for v in value]
        return value

    return walk(config)


def config_hash(config: PipelineConfig) -> str:
    """Stable content hash naming the run directory."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:10]


def write_resolved_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=True))


def stage_seed(seed: int, stage: str) -> int:
    """Fan one global seed out to a stable per-stage seed."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:7], "big")
