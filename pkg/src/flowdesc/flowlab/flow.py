import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Tuple, Union

import cv2
import numpy as np
from scipy import ndimage

from flowdesc.exceptions import FlowFileError, GeometryError
from flowdesc.formats.binary import read_flo
from flowdesc.frames import ImageFrame, pixel_grid, to_gray
from flowdesc.settings import ClassicalMethod, FlowBackend, FlowSettings

if TYPE_CHECKING:
    from flowdesc.segment import ForegroundMask
    from flowdesc.synthgen import GroundTruthMap

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-6


@dataclass
class FlowField:
    data: np.ndarray
    backend: str = FlowBackend.CLASSICAL.value

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise GeometryError(f"Flow must be H x W x 2, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("Flow contains non-finite displacements")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[..., 0], self.data[..., 1])


def _gaussian_pyramid(image: np.ndarray, levels: int) -> List[np.ndarray]:
    pyramid = [image]
    for _ in range(levels - 1):
        if min(pyramid[-1].shape) < 16:
            break
        pyramid.append(ndimage.gaussian_filter(pyramid[-1], 1.0)[::2, ::2])
    return pyramid


def _resize_flow(flow: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    height, width = shape
    scale_y = height / flow.shape[0]
    scale_x = width / flow.shape[1]
    resized = cv2.resize(flow.astype(np.float32), (width, height), interpolation=cv2.INTER_LINEAR).astype(np.float64)
    resized[..., 0] *= scale_x
    resized[..., 1] *= scale_y
    return resized


def lucas_kanade_flow(
    gray_a: np.ndarray, gray_b: np.ndarray, pyramid_levels: int = 3, window: int = 9, iterations: int = 5
) -> np.ndarray:
    """Coarse-to-fine dense patch flow: per-pixel 2x2 normal equations over a square window."""
    pyramid_a = _gaussian_pyramid(gray_a, pyramid_levels)
    pyramid_b = _gaussian_pyramid(gray_b, pyramid_levels)
    flow = np.zeros(pyramid_a[-1].shape + (2,))

    for level in reversed(range(len(pyramid_a))):
        a = pyramid_a[level]
        b = pyramid_b[level]
        if flow.shape[:2] != a.shape:
            flow = _resize_flow(flow, a.shape)

        ix = ndimage.sobel(a, axis=1, mode="nearest") / 8.0
        iy = ndimage.sobel(a, axis=0, mode="nearest") / 8.0
        sxx = ndimage.uniform_filter(ix * ix, window)
        sxy = ndimage.uniform_filter(ix * iy, window)
        syy = ndimage.uniform_filter(iy * iy, window)
        det = sxx * syy - sxy * sxy
        min_eig = 0.5 * (sxx + syy - np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy))
        solvable = min_eig > MIN_EIGENVALUE
        safe_det = np.where(solvable, det, 1.0)

        xs, ys = pixel_grid(*a.shape)
        for _ in range(iterations):
            warped = ndimage.map_coordinates(b, [ys + flow[..., 1], xs + flow[..., 0]], order=1, mode="nearest")
            it = warped - a
            bx = ndimage.uniform_filter(ix * it, window)
            by = ndimage.uniform_filter(iy * it, window)
            flow[..., 0] += np.where(solvable, -(syy * bx - sxy * by) / safe_det, 0.0)
            flow[..., 1] += np.where(solvable, -(sxx * by - sxy * bx) / safe_det, 0.0)

    return flow


def farneback_flow(
    gray_a: np.ndarray, gray_b: np.ndarray, pyramid_levels: int = 3, window: int = 9, iterations: int = 5
) -> np.ndarray:
    prev = np.round(np.clip(gray_a, 0, 1) * 255).astype(np.uint8)
    nxt = np.round(np.clip(gray_b, 0, 1) * 255).astype(np.uint8)
    flow = cv2.calcOpticalFlowFarneback(prev, nxt, None, 0.5, pyramid_levels, window, iterations, 5, 1.1, 0)
    return flow.astype(np.float64)


def flow_from_ground_truth(gt: "GroundTruthMap") -> FlowField:
    xs, ys = pixel_grid(*gt.shape)
    defined = np.isfinite(gt.mapping).all(axis=2)
    data = np.zeros(gt.shape + (2,))
    data[..., 0] = np.where(defined, gt.mapping[..., 0] - xs, 0.0)
    data[..., 1] = np.where(defined, gt.mapping[..., 1] - ys, 0.0)
    return FlowField(data, FlowBackend.GROUND_TRUTH.value)


def estimate_flow(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    backend: FlowBackend,
    settings: Optional[FlowSettings] = None,
    *,
    flow_path: Optional[Union[str, Path]] = None,
    ground_truth: Optional["GroundTruthMap"] = None,
    masks: Optional[Tuple["ForegroundMask", "ForegroundMask"]] = None,
) -> FlowField:
    settings = settings or FlowSettings()
    backend = FlowBackend(backend)
    if frame_a.shape != frame_b.shape:
        raise GeometryError(f"Frames differ in size: {frame_a.shape} vs {frame_b.shape}")
    shape = frame_a.shape[:2]

    if backend == FlowBackend.FILE:
        if flow_path is None:
            raise FlowFileError("The file flow backend needs a flow file path")
        flow = FlowField(read_flo(flow_path), backend.value)
    elif backend == FlowBackend.GROUND_TRUTH:
        if ground_truth is None:
            raise FlowFileError("The ground-truth flow backend needs a ground-truth map")
        flow = flow_from_ground_truth(ground_truth)
    else:
        gray_a = to_gray(frame_a)
        gray_b = to_gray(frame_b)
        if settings.apply_mask and masks is not None:
            gray_a = gray_a * masks[0].data
            gray_b = gray_b * masks[1].data
        estimator = lucas_kanade_flow if settings.method == ClassicalMethod.LUCAS_KANADE else farneback_flow
        data = estimator(gray_a, gray_b, settings.pyramid_levels, settings.window, settings.iterations)
        flow = FlowField(data, backend.value)

    if flow.shape != shape:
        raise GeometryError(f"Flow has shape {flow.shape}, frames have {shape}")
    return flow


def flow_to_rgb(flow: FlowField, max_magnitude: Optional[float] = None) -> np.ndarray:
    magnitude = flow.magnitude()
    angle = np.arctan2(flow.data[..., 1], flow.data[..., 0])
    scale = max_magnitude or max(float(magnitude.max()), 1e-9)
    hsv = np.zeros(flow.shape + (3,), dtype=np.uint8)
    hsv[..., 0] = np.round((np.degrees(angle) % 360.0) / 2.0).astype(np.uint8) % 180
    hsv[..., 1] = 255
    hsv[..., 2] = np.round(np.clip(magnitude / scale, 0, 1) * 255).astype(np.uint8)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float32) / 255.0
