import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from flowdesc.exceptions import EmptyMaskError, MaskShapeError
from flowdesc.flowlab.flow import FlowField
from flowdesc.formats.images import read_plane, write_png
from flowdesc.frames import in_bounds, round_coords

logger = logging.getLogger(__name__)

# 4-connectivity for component analysis
CONNECTIVITY = ndimage.generate_binary_structure(2, 1)
FILE_THRESHOLD = 127


class MaskProvenance(Enum):
    GROUND_TRUTH = "ground-truth"
    FILE = "file"
    MOTION = "motion"


@dataclass
class ForegroundMask:
    data: np.ndarray
    provenance: MaskProvenance = MaskProvenance.GROUND_TRUTH

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise MaskShapeError(f"Mask must be a 2-D plane, got shape {self.data.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape  # type: ignore

    @property
    def count(self) -> int:
        return int(self.data.sum())

    @property
    def is_empty(self) -> bool:
        return not self.data.any()

    def flipped(self, horizontal: bool) -> "ForegroundMask":
        return ForegroundMask(self.data[:, ::-1] if horizontal else self.data[::-1, :], self.provenance)


def load_mask(
    path: Union[str, Path],
    expected_shape: Optional[Tuple[int, int]] = None,
    provenance: MaskProvenance = MaskProvenance.FILE,
) -> ForegroundMask:
    plane = read_plane(path)
    if expected_shape is not None and plane.shape != tuple(expected_shape):
        raise MaskShapeError(f"Mask {path} has shape {plane.shape}, frame has {tuple(expected_shape)}")
    mask = ForegroundMask(plane > FILE_THRESHOLD, provenance)
    if mask.is_empty:
        logger.warning(f"Mask {path} is empty; the frame will be skipped for training.")
    return mask


def save_mask(mask: ForegroundMask, path: Union[str, Path]) -> None:
    write_png(path, mask.data)


def largest_component(plane: np.ndarray) -> np.ndarray:
    labels, n_components = ndimage.label(plane, structure=CONNECTIVITY)
    if n_components == 0:
        return np.zeros_like(plane, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    # ties resolve to the lowest label, i.e. the first component in raster order
    return labels == (int(np.argmax(sizes)) + 1)


def motion_mask(flow: FlowField, threshold_px: float) -> ForegroundMask:
    if threshold_px < 0:
        raise ValueError("threshold_px must be >= 0")
    moving = flow.magnitude() > threshold_px
    if not moving.any():
        raise EmptyMaskError(f"No pixel moves more than {threshold_px} px; cannot derive a motion mask.")
    return ForegroundMask(largest_component(moving), MaskProvenance.MOTION)


def warp_mask(mask: ForegroundMask, flow: FlowField) -> ForegroundMask:
    """Carry a source-frame mask into the target frame by pushing each foreground pixel along its flow vector.

    Forward splatting leaves pinholes where the object stretches; a 3x3 closing fills them.
    """
    if mask.shape != flow.shape:
        raise MaskShapeError(f"Mask {mask.shape} and flow {flow.shape} differ in shape")
    height, width = mask.shape
    ys, xs = np.nonzero(mask.data)
    tx = round_coords(xs + flow.data[ys, xs, 0])
    ty = round_coords(ys + flow.data[ys, xs, 1])
    keep = in_bounds(tx, ty, height, width)
    warped = np.zeros(mask.shape, dtype=bool)
    warped[ty[keep], tx[keep]] = True
    warped = ndimage.binary_closing(warped, structure=np.ones((3, 3), dtype=bool)) | warped
    if not warped.any():
        raise EmptyMaskError("The warped mask left the frame")
    return ForegroundMask(warped, MaskProvenance.MOTION)
