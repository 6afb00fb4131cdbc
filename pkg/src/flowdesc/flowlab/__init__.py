from flowdesc.flowlab.correspondence import CorrespondenceMap, flow_to_correspondence, sample_flow
from flowdesc.flowlab.flow import (
    FlowField,
    estimate_flow,
    farneback_flow,
    flow_from_ground_truth,
    flow_to_rgb,
    lucas_kanade_flow,
)
from flowdesc.flowlab.sampling import FlipAxis, MatchSet, PixelCoord, augment_flip, sample_matches

__all__ = [
    "CorrespondenceMap",
    "FlipAxis",
    "FlowField",
    "MatchSet",
    "PixelCoord",
    "augment_flip",
    "estimate_flow",
    "farneback_flow",
    "flow_from_ground_truth",
    "flow_to_correspondence",
    "flow_to_rgb",
    "lucas_kanade_flow",
    "sample_flow",
    "sample_matches",
]
