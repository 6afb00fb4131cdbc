from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class WireModel(BaseModel):
    class Config:
        allow_population_by_field_name = True


class ClipScriptModel(WireModel):
    clip: int
    background: str
    homographies: List[List[List[float]]]
    gains: List[float]
    backgrounds: List[int]


class MotionScriptFileModel(WireModel):
    height: int
    width: int
    object_kind: str
    base_placement: List[List[float]]
    clips: List[ClipScriptModel]


class ClipModel(WireModel):
    clip: int
    background: str
    n_frames: int


class DatasetManifestModel(WireModel):
    dataset_id: str
    height: int
    width: int
    object_kind: str
    seed: int
    clips: List[ClipModel]
    config: Dict[str, Any] = {}


class StepRecordModel(WireModel):
    kind: str = "step"
    epoch: int
    step: int
    pair: str
    total: float
    match: float
    non_match: float
    n_matches: int
    flipped: Optional[str] = None


class SkipRecordModel(WireModel):
    kind: str = "skip"
    epoch: int
    pair: str
    reason: str


class EpochRecordModel(WireModel):
    kind: str = "epoch"
    epoch: int
    steps: int
    skipped: int
    mean_total: float
    mean_match: float
    mean_non_match: float
    wall_time_s: float


class ReportMetadataModel(WireModel):
    checkpoint_id: Optional[str] = None
    dataset_id: str
    describer: str
    domain: str
    seed: int
    config_hash: str


class PairResultModel(WireModel):
    source: str
    target: str
    mean_percentile: float
    n_pixels: int


class ConsecutiveResultModel(WireModel):
    describer: str
    pairs: List[PairResultModel]
    mean: float
    std: float
    cumulative_bins: List[float]
    cumulative_fraction: List[float]


class CrossCellModel(WireModel):
    background: str
    splits: str
    mean_percentile: float
    n_pairs: int


class CrossResultModel(WireModel):
    describer: str
    cells: List[CrossCellModel]


class PixelHistogramModel(WireModel):
    describer: str
    source: str
    target: str
    bin_edges: List[float]
    counts: List[int]
    cumulative_fraction: List[float]
    n_pixels: int


class KeypointRowModel(WireModel):
    x: float
    y: float
    baseline_error_px: float
    network_error_px: float


class KeypointResultModel(WireModel):
    source: str
    target: str
    rows: List[KeypointRowModel]
    bin_edges: List[float]
    baseline_counts: List[int]
    network_counts: List[int]
    baseline_median_px: float
    network_median_px: float


class ResultSectionsModel(WireModel):
    consecutive: List[ConsecutiveResultModel] = Field(default_factory=list)
    cross: List[CrossResultModel] = Field(default_factory=list)
    pixelwise: List[PixelHistogramModel] = Field(default_factory=list)
    keypoints: List[KeypointResultModel] = Field(default_factory=list)


class EvalReportModel(ResultSectionsModel):
    """The top-level sections hold the full-image results whenever `mask` holds the mask-restricted ones."""

    metadata: ReportMetadataModel
    mask: Optional[ResultSectionsModel] = None
