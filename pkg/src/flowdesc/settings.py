import hashlib
import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, Union

import dotenv
import yaml
from pydantic import BaseModel, Extra, ValidationError, validator
from pydantic.utils import deep_update

from flowdesc.exceptions import ConfigError

PREFIX = "flowdesc"


class StrictModel(BaseModel):
    class Config:
        extra = Extra.forbid
        use_enum_values = False
        validate_assignment = True


class ObjectKind(str, Enum):
    DRILL = "drill"
    HULK = "hulk"


class BackgroundKind(str, Enum):
    FLAT = "flat"
    CLUTTER = "clutter"


class MotionMode(str, Enum):
    RANDOM_WALK = "random-walk"
    CONSTANT = "constant"


class MaskSource(str, Enum):
    GROUND_TRUTH = "ground-truth"
    FILE = "file"
    MOTION = "motion"


class FlowBackend(str, Enum):
    CLASSICAL = "classical"
    FILE = "file"
    GROUND_TRUTH = "ground-truth"


class ClassicalMethod(str, Enum):
    LUCAS_KANADE = "lucas-kanade"
    FARNEBACK = "farneback"


class NormKind(str, Enum):
    GROUP = "group"
    BATCH = "batch"
    NONE = "none"


class LossAveraging(str, Enum):
    SEPARATE = "separate"
    JOINT = "joint"
    ACTIVE = "active"


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class EvalDomain(str, Enum):
    FULL = "full"
    MASK = "mask"
    BOTH = "both"


class EvalSplit(str, Enum):
    TRAIN = "train"
    TEST = "test"
    ALL = "all"


class MotionSettings(StrictModel):
    mode: MotionMode = MotionMode.RANDOM_WALK
    max_translation_px: float = 3.0
    max_rotation_deg: float = 3.0
    max_scale_step: float = 0.005
    max_perspective_step: float = 0.0
    scale_range: List[float] = [0.85, 1.15]
    translation_limit: float = 0.2
    rotation_deg_per_frame: float = 2.0
    translation_px_per_frame: List[float] = [0.0, 0.0]
    scale_per_frame: float = 1.0
    gain_min: float = 0.7
    gain_max: float = 1.3
    max_gain_step: float = 0.03

    @validator("gain_min", "gain_max")
    def gain_in_range(cls, value: float) -> float:
        if not 0.3 <= value <= 1.7:
            raise ValueError("brightness gain must lie in [0.3, 1.7]")
        return value

    @validator("scale_range", "translation_px_per_frame")
    def two_values(cls, value: List[float]) -> List[float]:
        if len(value) != 2:
            raise ValueError("expected exactly two values")
        return value


class SynthSettings(StrictModel):
    height: int = 256
    width: int = 256
    n_frames: int = 200
    object_kind: ObjectKind = ObjectKind.DRILL
    object_scale: float = 0.45
    backgrounds: List[BackgroundKind] = [BackgroundKind.FLAT, BackgroundKind.CLUTTER]
    motion: MotionSettings = MotionSettings()

    @validator("n_frames")
    def enough_frames(cls, value: int) -> int:
        if value < 2:
            raise ValueError("a sequence needs at least 2 frames")
        return value

    @validator("backgrounds")
    def some_background(cls, value: List[BackgroundKind]) -> List[BackgroundKind]:
        if not value:
            raise ValueError("at least one background is required")
        return value


class SegmentSettings(StrictModel):
    source: MaskSource = MaskSource.GROUND_TRUTH
    mask_dir: Optional[str] = None
    motion_threshold_px: float = 0.5

    @validator("motion_threshold_px")
    def non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("threshold must be >= 0")
        return value


class FlowSettings(StrictModel):
    backend: FlowBackend = FlowBackend.CLASSICAL
    method: ClassicalMethod = ClassicalMethod.LUCAS_KANADE
    pyramid_levels: int = 3
    window: int = 9
    iterations: int = 5
    fb_check: bool = True
    fb_tau: float = 1.5
    flow_dir: Optional[str] = None
    apply_mask: bool = False
    cache: bool = True


class SampleSettings(StrictModel):
    n_matches: int = 2500
    n_neg: int = 128
    seed: Optional[int] = None
    exclusion_radius_px: int = 1
    bilinear_lookup: bool = False

    @validator("n_matches", "n_neg")
    def positive_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value


class AugmentSettings(StrictModel):
    flip: bool = True
    flip_prob: float = 0.5


class NetworkConfig(StrictModel):
    descriptor_dim: int = 3
    encoder_channels: List[int] = [16, 32, 64]
    encoder_blocks: List[int] = [2, 2, 2]
    stage_strides: Optional[List[int]] = None
    stem_stride: int = 1
    decoder_stages: int = 3
    use_skip_connections: bool = True
    norm: NormKind = NormKind.GROUP
    input_height: Optional[int] = None
    input_width: Optional[int] = None
    seed: Optional[int] = None
    pretrained_encoder: Optional[str] = None

    @validator("descriptor_dim")
    def dim_at_least_two(cls, value: int) -> int:
        if value < 2:
            raise ValueError("descriptor_dim must be >= 2")
        return value


class LossConfig(StrictModel):
    margin: float = 0.5
    averaging: LossAveraging = LossAveraging.SEPARATE

    @validator("margin")
    def positive_margin(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("margin must be > 0")
        return value


class TrainConfig(StrictModel):
    epochs: int = 10
    learning_rate: float = 1e-4
    optimizer: OptimizerKind = OptimizerKind.ADAM
    momentum: float = 0.9
    weight_decay: float = 0.0
    cosine_decay: bool = False
    batch: int = 1
    shuffle: bool = True
    train_fraction: float = 0.5
    checkpoint_dir: Optional[str] = None
    log_every: int = 10

    @validator("epochs", "batch")
    def at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("learning_rate")
    def non_negative_rate(cls, value: float) -> float:
        # zero is accepted for no-op update runs
        if value < 0:
            raise ValueError("learning_rate must be >= 0")
        return value


class EvalSettings(StrictModel):
    tests: List[str] = ["1", "2", "3", "4"]
    domain: EvalDomain = EvalDomain.FULL
    split: EvalSplit = EvalSplit.TEST
    n_pairs: int = 100
    sample_rate: float = 1.0
    pixel_samples: Optional[int] = None
    n_image_pairs: int = 10
    histogram_bins: int = 101
    max_keypoints: int = 200
    keypoint_hist_max_px: float = 40.0
    keypoint_hist_bins: int = 20
    baseline_patch_radius: int = 8
    query_chunk: int = 512
    descriptor_cache_frames: int = 4
    write_visualizations: bool = True

    @validator("sample_rate")
    def rate_in_unit_interval(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("sample_rate must be in (0, 1]")
        return value

    @validator("descriptor_cache_frames")
    def keeps_one_map(cls, value: int) -> int:
        if value < 1:
            raise ValueError("descriptor_cache_frames must be >= 1")
        return value

    @validator("baseline_patch_radius")
    def radius_multiple_of_four(cls, value: int) -> int:
        if value < 4 or value % 4:
            raise ValueError("baseline_patch_radius must be a positive multiple of 4")
        return value


class TrackSettings(StrictModel):
    clip: int = 0
    reference_frame: int = 0
    n_frames: Optional[int] = None
    mask_restricted: bool = True
    patch_side: int = 5


class Settings(StrictModel):
    seed: int = 0
    dataset_dir: str = "data/desk"
    output_dir: str = "runs/desk"
    workers: int = 1
    deterministic: bool = True
    synth: SynthSettings = SynthSettings()
    segment: SegmentSettings = SegmentSettings()
    flow: FlowSettings = FlowSettings()
    sample: SampleSettings = SampleSettings()
    augment: AugmentSettings = AugmentSettings()
    network: NetworkConfig = NetworkConfig()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalSettings = EvalSettings()
    track: TrackSettings = TrackSettings()

    @property
    def effective_workers(self) -> int:
        return 1 if self.deterministic else max(1, self.workers)


PipelineConfig = Settings


def _list_settings(model: Type[BaseModel]) -> List:
    setting_names = []
    for field_name, field_value in model.__fields__.items():
        field_list = [field_name]
        if isinstance(field_value.type_, type) and issubclass(field_value.type_, BaseModel):
            inner_fields = _list_settings(field_value.type_)
            inner_fields = [field_list + inner for inner in inner_fields]
            setting_names += inner_fields
        else:
            setting_names.append(field_list)

    return setting_names


def _put_by_path(settings_dict: dict, path: List[str], value: Any) -> None:
    if len(path) == 1:
        settings_dict[path[0]] = value
    else:
        current_dict = settings_dict.get(path[0], {})
        _put_by_path(current_dict, path[1:], value)
        settings_dict[path[0]] = current_dict


def _get_by_path(settings_dict: dict, path: List[str], default_value: Any = None) -> Any:
    if len(path) == 1:
        return settings_dict.get(path[0], default_value)
    else:
        inner_dict = settings_dict.get(path[0], {})
        return _get_by_path(inner_dict, path[1:], default_value)


def _decode_value(raw: str) -> Any:
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def _normalize_keys(data: Any) -> Any:
    if isinstance(data, dict):
        return {str(key).replace("-", "_"): _normalize_keys(value) for key, value in data.items()}
    return data


def _load_env(path_list: List[List[str]], env_file: Union[str, Path] = ".env") -> dict:
    dotenv.load_dotenv(env_file)
    settings: Dict[str, Any] = {}
    for path in path_list:
        env_name = "_".join([PREFIX] + path).upper()
        env_variable = os.getenv(env_name)
        if env_variable is not None:
            _put_by_path(settings, path, _decode_value(env_variable))

    return settings


def _load_file(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    if path is None:
        return {}
    filename = Path(path)
    if not filename.exists():
        raise ConfigError(f"Config file not found: {filename}", ["pass --config pointing to a JSON or YAML file"])

    try:
        file_settings = yaml.safe_load(filename.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config file {filename} is not valid JSON/YAML: {exc}")
    if file_settings is None:
        return {}
    if not isinstance(file_settings, dict):
        raise ConfigError(f"Config file {filename} must contain a mapping at the top level")
    return _normalize_keys(file_settings)


def _load_overrides(overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    settings: Dict[str, Any] = {}
    for dotted, value in (overrides or {}).items():
        decoded = _decode_value(value) if isinstance(value, str) else value
        _put_by_path(settings, dotted.replace("-", "_").split("."), decoded)
    return settings


def load_settings(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    env_file: Union[str, Path] = ".env",
) -> Settings:
    settings_path_list = _list_settings(Settings)
    settings: Dict[str, Any] = {}
    settings = deep_update(settings, _load_file(config_path))
    settings = deep_update(settings, _load_env(settings_path_list, env_file))
    settings = deep_update(settings, _load_overrides(overrides))
    try:
        return Settings(**settings)
    except ValidationError as exc:
        field_errors = [f"{'.'.join(str(part) for part in e['loc'])} - {e['msg']}" for e in exc.errors()]
        raise ConfigError("Invalid configuration", field_errors) from exc


def config_hash(settings: BaseModel) -> str:
    canonical = json.dumps(json.loads(settings.json()), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
