from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING, List, NamedTuple, Tuple

import numpy as np

from flowdesc.exceptions import NegativeSamplingError, NoCorrespondenceError
from flowdesc.flowlab.correspondence import CorrespondenceMap
from flowdesc.frames import ImageFrame, round_coords

if TYPE_CHECKING:
    from flowdesc.segment import ForegroundMask

MAX_REJECTION_ROUNDS = 200


class PixelCoord(NamedTuple):
    x: float
    y: float


class FlipAxis(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass
class MatchSet:
    """Positive pixel pairs and, per positive, negative target pixels.

    `sources` and `targets` are N x 2 arrays of (x, y); `negatives` is N x K x 2.
    """

    sources: np.ndarray
    targets: np.ndarray
    negatives: np.ndarray
    seed: int
    image_shape: Tuple[int, int]

    @property
    def n_matches(self) -> int:
        return int(self.sources.shape[0])

    @property
    def n_neg_per_match(self) -> int:
        return int(self.negatives.shape[1])

    def pairs(self) -> List[Tuple[PixelCoord, PixelCoord]]:
        return [(PixelCoord(*a), PixelCoord(*b)) for a, b in zip(self.sources.tolist(), self.targets.tolist())]

    def flipped(self, axis: FlipAxis) -> "MatchSet":
        height, width = self.image_shape
        column, extent = (0, width) if axis == FlipAxis.HORIZONTAL else (1, height)
        targets = self.targets.copy()
        negatives = self.negatives.copy()
        targets[:, column] = (extent - 1) - targets[:, column]
        negatives[..., column] = (extent - 1) - negatives[..., column]
        return replace(self, targets=targets, negatives=negatives)


def _draw_negatives(
    rng: np.random.Generator,
    candidates: np.ndarray,
    positives: np.ndarray,
    n_neg: int,
    width: int,
    exclusion_radius: int,
) -> np.ndarray:
    n = positives.shape[0]
    picks = rng.choice(candidates, size=(n, n_neg), replace=True)

    def rejected(flat: np.ndarray) -> np.ndarray:
        xy = np.stack([flat % width, flat // width], axis=-1)
        return np.abs(xy - positives[:, None, :]).max(axis=-1) < exclusion_radius

    bad = rejected(picks)
    for _ in range(MAX_REJECTION_ROUNDS):
        if not bad.any():
            break
        picks[bad] = rng.choice(candidates, size=int(bad.sum()), replace=True)
        bad = rejected(picks)
    else:
        if bad.any():
            raise NegativeSamplingError("Mask B has no pixels outside the exclusion radius of some positives")

    return np.stack([picks % width, picks // width], axis=-1).astype(np.float64)


def sample_matches(
    corr: CorrespondenceMap,
    mask_b: "ForegroundMask",
    n_matches: int,
    n_neg: int,
    seed: int,
    exclusion_radius: int = 1,
) -> MatchSet:
    if n_matches < 1 or n_neg < 1:
        raise ValueError("n_matches and n_neg must be >= 1")
    height, width = corr.shape
    valid_index = np.flatnonzero(corr.valid)
    if valid_index.size == 0:
        raise NoCorrespondenceError("Correspondence map has no valid pixels")
    candidates = np.flatnonzero(mask_b.data)
    if candidates.size < 2:
        raise NegativeSamplingError(f"Mask B has {candidates.size} pixel(s); at least 2 are needed for negatives")

    rng = np.random.default_rng(seed)
    chosen = rng.choice(valid_index, size=min(n_matches, valid_index.size), replace=False)
    sources = np.stack([chosen % width, chosen // width], axis=-1).astype(np.float64)
    targets = corr.target.reshape(-1, 2)[chosen].astype(np.float64)
    negatives = _draw_negatives(rng, candidates, round_coords(targets), n_neg, width, exclusion_radius)
    return MatchSet(sources, targets, negatives, seed, (height, width))


def augment_flip(
    frame_b: ImageFrame, mask_b: "ForegroundMask", matches: MatchSet, axis: FlipAxis
) -> Tuple[ImageFrame, "ForegroundMask", MatchSet]:
    axis = FlipAxis(axis)
    horizontal = axis == FlipAxis.HORIZONTAL
    flipped_frame = np.ascontiguousarray(frame_b[:, ::-1] if horizontal else frame_b[::-1, :])
    return flipped_frame, mask_b.flipped(horizontal), matches.flipped(axis)
