from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np
from scipy import ndimage

from flowdesc.exceptions import GeometryError
from flowdesc.flowlab.flow import FlowField
from flowdesc.frames import in_bounds, pixel_grid, round_coords

if TYPE_CHECKING:
    from flowdesc.segment import ForegroundMask

DEFAULT_FB_TAU = 1.5


@dataclass
class CorrespondenceMap:
    target: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape  # type: ignore

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


def sample_flow(flow: FlowField, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup of a flow field at continuous coordinates."""
    coords = [ys.ravel(), xs.ravel()]
    dx = ndimage.map_coordinates(flow.data[..., 0], coords, order=1, mode="nearest")
    dy = ndimage.map_coordinates(flow.data[..., 1], coords, order=1, mode="nearest")
    return np.stack([dx, dy], axis=-1).reshape(xs.shape + (2,))


def flow_to_correspondence(
    flow: FlowField,
    mask_a: "ForegroundMask",
    mask_b: "ForegroundMask",
    fb_check: Optional[FlowField] = None,
    fb_tau: float = DEFAULT_FB_TAU,
) -> CorrespondenceMap:
    height, width = flow.shape
    for name, shape in (("mask A", mask_a.shape), ("mask B", mask_b.shape)):
        if shape != (height, width):
            raise GeometryError(f"{name} has shape {shape}, flow has {(height, width)}")
    if fb_check is not None and fb_check.shape != (height, width):
        raise GeometryError(f"Backward flow has shape {fb_check.shape}, flow has {(height, width)}")

    xs, ys = pixel_grid(height, width)
    target = np.stack([xs + flow.data[..., 0], ys + flow.data[..., 1]], axis=-1)
    inside = in_bounds(target[..., 0], target[..., 1], height, width)

    on_target = np.zeros((height, width), dtype=bool)
    rx = round_coords(target[..., 0][inside])
    ry = round_coords(target[..., 1][inside])
    on_target[inside] = mask_b.data[ry, rx]
    valid = mask_a.data & inside & on_target

    if fb_check is not None and valid.any():
        backward = sample_flow(fb_check, target[..., 0][valid], target[..., 1][valid])
        residual = np.hypot(flow.data[..., 0][valid] + backward[:, 0], flow.data[..., 1][valid] + backward[:, 1])
        consistent = np.zeros_like(valid)
        consistent[valid] = residual < fb_tau
        valid &= consistent

    return CorrespondenceMap(target, valid)
