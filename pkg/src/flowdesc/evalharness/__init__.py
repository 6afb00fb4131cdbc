from flowdesc.evalharness.baseline import BaselineField, compute_baseline, interior_mask, support_radius
from flowdesc.evalharness.describers import BaselineDescriber, Describer, NetworkDescriber, OracleDescriber
from flowdesc.evalharness.keypoints import detect_keypoints
from flowdesc.evalharness.metrics import (
    DistanceRow,
    batch_percentiles,
    cumulative_histogram,
    distance_row,
    false_positive_percentile,
    nearest_pixels,
)
from flowdesc.evalharness.protocols import (
    eval_consecutive,
    eval_cross,
    eval_keypoints,
    eval_pixelwise_histogram,
    square_patch,
    track_points,
)
from flowdesc.evalharness.runner import run_evaluation

__all__ = [
    "BaselineDescriber",
    "BaselineField",
    "Describer",
    "DistanceRow",
    "NetworkDescriber",
    "OracleDescriber",
    "batch_percentiles",
    "compute_baseline",
    "cumulative_histogram",
    "detect_keypoints",
    "distance_row",
    "eval_consecutive",
    "eval_cross",
    "eval_keypoints",
    "eval_pixelwise_histogram",
    "false_positive_percentile",
    "interior_mask",
    "nearest_pixels",
    "run_evaluation",
    "square_patch",
    "support_radius",
    "track_points",
]
