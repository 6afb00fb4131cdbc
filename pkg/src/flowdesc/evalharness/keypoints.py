from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from flowdesc.exceptions import EvaluationError

SIGMA0 = 1.6
SCALES_PER_OCTAVE = 3
N_OCTAVES = 3
CONTRAST_THRESHOLD = 0.01
EDGE_RATIO = 10.0
MIN_OCTAVE_SIZE = 16


def _octave_extrema(image: np.ndarray) -> List[Tuple[float, int, int]]:
    k = 2.0 ** (1.0 / SCALES_PER_OCTAVE)
    blurred = [ndimage.gaussian_filter(image, SIGMA0 * k**i, mode="nearest") for i in range(SCALES_PER_OCTAVE + 3)]
    dog = np.stack([b - a for a, b in zip(blurred, blurred[1:])])

    is_max = dog == ndimage.maximum_filter(dog, size=3, mode="nearest")
    is_min = dog == ndimage.minimum_filter(dog, size=3, mode="nearest")
    strong = np.abs(dog) > CONTRAST_THRESHOLD
    candidates = (is_max | is_min) & strong
    candidates[0] = candidates[-1] = False
    candidates[:, [0, -1], :] = False
    candidates[:, :, [0, -1]] = False

    found = []
    for scale, y, x in zip(*np.nonzero(candidates)):
        plane = dog[scale]
        dxx = plane[y, x + 1] + plane[y, x - 1] - 2.0 * plane[y, x]
        dyy = plane[y + 1, x] + plane[y - 1, x] - 2.0 * plane[y, x]
        dxy = 0.25 * (plane[y + 1, x + 1] - plane[y + 1, x - 1] - plane[y - 1, x + 1] + plane[y - 1, x - 1])
        trace, det = dxx + dyy, dxx * dyy - dxy * dxy
        # principal curvature ratio test rejects responses along edges
        if det <= 0 or trace * trace * EDGE_RATIO >= (EDGE_RATIO + 1.0) ** 2 * det:
            continue
        found.append((float(abs(plane[y, x])), int(y), int(x)))
    return found


def detect_keypoints(
    gray: np.ndarray, mask: Optional[np.ndarray] = None, max_keypoints: int = 200, n_octaves: int = N_OCTAVES
) -> np.ndarray:
    """Difference-of-Gaussians extrema as N x 2 integer (x, y), strongest first, without orientation."""
    image = gray.astype(np.float64)
    scored = {}
    for octave in range(n_octaves):
        if min(image.shape) < MIN_OCTAVE_SIZE:
            break
        factor = 2**octave
        for response, y, x in _octave_extrema(image):
            key = (y * factor, x * factor)
            if mask is not None and not mask[key]:
                continue
            scored[key] = max(response, scored.get(key, 0.0))
        image = ndimage.gaussian_filter(image, 1.0, mode="nearest")[::2, ::2]

    ordered = sorted(scored.items(), key=lambda item: (-item[1], item[0]))[:max_keypoints]
    if not ordered:
        raise EvaluationError("No keypoints detected on the foreground")
    return np.array([[x, y] for (y, x), _ in ordered], dtype=np.int64)
