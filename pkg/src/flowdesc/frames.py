from typing import NamedTuple, Tuple

import numpy as np

# H x W x 3 float32 image with values in [0, 1]
ImageFrame = np.ndarray


class FrameKey(NamedTuple):
    clip: int
    index: int

    @property
    def name(self) -> str:
        return f"c{self.clip:02d}_f{self.index:04d}"


def check_frame(frame: ImageFrame) -> ImageFrame:
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"Expected an H x W x 3 frame, got shape {frame.shape}")
    return frame


def to_gray(frame: ImageFrame) -> np.ndarray:
    if frame.ndim == 2:
        return frame.astype(np.float64)
    weights = np.array([0.299, 0.587, 0.114])
    return check_frame(frame).astype(np.float64) @ weights


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Integer (x, y) coordinate planes, both H x W, float64."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def round_coords(values: np.ndarray) -> np.ndarray:
    # half-up rounding, identical everywhere a continuous coordinate meets the pixel grid
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def in_bounds(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    return np.isfinite(xs) & np.isfinite(ys) & (xs >= 0) & (ys >= 0) & (xs <= width - 1) & (ys <= height - 1)
