"""Dense SIFT-like baseline: 4x4 spatial cells of 8-bin gradient orientation histograms at every pixel.

Orientation votes are split linearly between the two nearest bins and spatially with a tent
kernel one cell wide, which together give trilinear binning. No dominant-orientation alignment
is done, so descriptors are not rotation invariant.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from flowdesc.frames import ImageFrame, to_gray

N_CELLS = 4
N_ORIENTATIONS = 8
CLIP_VALUE = 0.2
GRADIENT_SIGMA = 0.8
MIN_NORM = 1e-12


@dataclass
class BaselineField:
    descriptors: np.ndarray
    valid: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.descriptors.shape[-1])


def support_radius(patch_radius: int) -> int:
    """Pixels needed on each side of a pixel for its outermost cells to be fully inside the image."""
    cell = patch_radius // 2
    return (3 * cell) // 2 + cell


def interior_mask(shape: tuple, patch_radius: int) -> np.ndarray:
    height, width = shape
    border = support_radius(patch_radius)
    mask = np.zeros((height, width), dtype=bool)
    if height > 2 * border and width > 2 * border:
        mask[border : height - border, border : width - border] = True
    return mask


def _tent(cell: int) -> np.ndarray:
    offsets = np.arange(-cell + 1, cell)
    return 1.0 - np.abs(offsets) / cell


def _shift(plane: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = plane[y + dy, x + dx], zero outside."""
    height, width = plane.shape
    out = np.zeros_like(plane)
    ys = slice(max(0, -dy), min(height, height - dy))
    xs = slice(max(0, -dx), min(width, width - dx))
    out[ys, xs] = plane[max(0, dy) : min(height, height + dy), max(0, dx) : min(width, width + dx)]
    return out


def compute_baseline(frame: ImageFrame, patch_radius: int = 8) -> BaselineField:
    if patch_radius < 4 or patch_radius % 4:
        raise ValueError("patch_radius must be a positive multiple of 4")
    gray = to_gray(frame)
    gx = ndimage.gaussian_filter(gray, GRADIENT_SIGMA, order=(0, 1), mode="nearest")
    gy = ndimage.gaussian_filter(gray, GRADIENT_SIGMA, order=(1, 0), mode="nearest")
    magnitude = np.hypot(gx, gy)
    position = (np.arctan2(gy, gx) % (2.0 * math.pi)) / (2.0 * math.pi / N_ORIENTATIONS)
    low = np.floor(position).astype(np.int64) % N_ORIENTATIONS
    frac = position - np.floor(position)

    cell = patch_radius // 2
    tent = _tent(cell)
    planes = []
    for k in range(N_ORIENTATIONS):
        votes = magnitude * np.where(low == k, 1.0 - frac, 0.0) + magnitude * np.where(
            (low + 1) % N_ORIENTATIONS == k, frac, 0.0
        )
        votes = ndimage.convolve1d(votes, tent, axis=0, mode="constant")
        planes.append(ndimage.convolve1d(votes, tent, axis=1, mode="constant"))

    # cell centers sit at (i - 1.5) * cell from the pixel, integers because cell is even
    centers = [int((i - 1.5) * cell) for i in range(N_CELLS)]
    sigma = float(patch_radius)
    height, width = gray.shape
    descriptors = np.empty((height, width, N_CELLS * N_CELLS * N_ORIENTATIONS), dtype=np.float64)
    channel = 0
    for dy in centers:
        for dx in centers:
            weight = math.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
            for plane in planes:
                descriptors[..., channel] = weight * _shift(plane, dy, dx)
                channel += 1

    norm = np.linalg.norm(descriptors, axis=-1, keepdims=True)
    valid = norm[..., 0] > MIN_NORM
    descriptors = np.where(norm > MIN_NORM, descriptors / np.maximum(norm, MIN_NORM), 0.0)
    descriptors = np.minimum(descriptors, CLIP_VALUE)
    norm = np.linalg.norm(descriptors, axis=-1, keepdims=True)
    descriptors = np.where(norm > MIN_NORM, descriptors / np.maximum(norm, MIN_NORM), 0.0)
    return BaselineField(descriptors.astype(np.float32), valid & interior_mask(gray.shape, patch_radius))
