from pathlib import Path
from typing import Union

import cv2
import numpy as np

from flowdesc.exceptions import FormatError

PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 3]


def to_uint8(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image
    if image.dtype == np.bool_:
        return image.astype(np.uint8) * 255
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path: Union[str, Path], image: np.ndarray) -> None:
    """Write an RGB frame (H x W x 3) or a single-channel plane (H x W) as 8-bit PNG."""
    data = to_uint8(image)
    if data.ndim == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), data, PNG_PARAMS):
        raise OSError(f"Unable to write image {path}")


def _read(path: Union[str, Path], flags: int) -> np.ndarray:
    if not Path(path).exists():
        raise FileNotFoundError(f"Image not found: {path}")
    data = cv2.imread(str(path), flags)
    if data is None:
        raise FormatError(f"Unable to decode image {path}")
    return data


def read_frame(path: Union[str, Path]) -> np.ndarray:
    data = _read(path, cv2.IMREAD_COLOR)
    return cv2.cvtColor(data, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def read_plane(path: Union[str, Path]) -> np.ndarray:
    data = _read(path, cv2.IMREAD_UNCHANGED)
    if data.ndim != 2:
        raise FormatError(f"Expected a single-channel image in {path}, got shape {data.shape}")
    if data.dtype != np.uint8:
        raise FormatError(f"Expected an 8-bit image in {path}, got {data.dtype}")
    return data
