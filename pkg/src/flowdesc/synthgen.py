"""Synthetic monocular sequences of a textured object under known projective motion.

Every frame carries the homography mapping object-texture coordinates to frame pixels,
so masks and pixel correspondence between any two frames are exact.
"""
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from flowdesc.exceptions import DegenerateTransformError, ObjectOutOfFrameError
from flowdesc.formats.binary import write_gtm
from flowdesc.formats.images import write_png
from flowdesc.formats.models import ClipModel, ClipScriptModel, DatasetManifestModel, MotionScriptFileModel
from flowdesc.frames import FrameKey, ImageFrame, in_bounds, pixel_grid, round_coords
from flowdesc.segment import ForegroundMask, MaskProvenance, save_mask
from flowdesc.settings import BackgroundKind, MotionMode, MotionSettings, ObjectKind, SynthSettings
from flowdesc.utils import make_rng

logger = logging.getLogger(__name__)

MIN_DETERMINANT = 1e-9
MASK_THRESHOLD = 0.5
GAIN_RANGE = (0.3, 1.7)

FRAMES_DIR = "frames"
MASKS_DIR = "masks"
GT_DIR = "gt"
MOTION_FILE = "motion.json"
MANIFEST_FILE = "dataset.json"


class Homography:
    """3x3 projective transform on homogeneous (x, y, 1) pixel coordinates."""

    def __init__(self, matrix: Union[np.ndarray, Sequence[Sequence[float]]]) -> None:
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.shape != (3, 3) or not np.isfinite(matrix).all():
            raise DegenerateTransformError(f"Homography must be a finite 3x3 matrix, got shape {matrix.shape}")
        if abs(matrix[2, 2]) < MIN_DETERMINANT:
            raise DegenerateTransformError("Homography has a vanishing bottom-right entry")
        matrix = matrix / matrix[2, 2]
        if abs(np.linalg.det(matrix)) <= MIN_DETERMINANT:
            raise DegenerateTransformError(f"Homography is not invertible (det={np.linalg.det(matrix):.3e})")
        self.matrix = matrix

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Homography) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self) -> str:
        return f"Homography({self.matrix.tolist()})"

    def apply(self, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m = self.matrix
        w = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
        return (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / w, (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / w


def warp_points(homography: Homography, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    xs, ys = homography.apply(points[..., 0], points[..., 1])
    return np.stack([xs, ys], axis=-1)


def invert_homography(homography: Homography) -> Homography:
    return homography.inverse()


def _translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def compose_homography(
    rotation_deg: float,
    scale: float,
    translation: Sequence[float] = (0.0, 0.0),
    perspective: Sequence[float] = (0.0, 0.0),
    *,
    frame_size: Tuple[int, int],
) -> Homography:
    """Similarity plus perspective about the image center of a (height, width) frame."""
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    cx, cy = frame_size[1] / 2.0, frame_size[0] / 2.0
    theta = math.radians(rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    similarity = np.array([[scale * cos_t, -scale * sin_t, 0.0], [scale * sin_t, scale * cos_t, 0.0], [0, 0, 1.0]])
    projective = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [perspective[0], perspective[1], 1.0]])
    matrix = (
        _translation(cx + translation[0], cy + translation[1]) @ projective @ similarity @ _translation(-cx, -cy)
    )
    return Homography(matrix)


@dataclass
class TexturedObject:
    texture: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        if self.texture.ndim != 3 or self.texture.shape[2] != 3:
            raise ValueError(f"Texture must be H x W x 3, got {self.texture.shape}")
        if self.alpha.shape != self.texture.shape[:2]:
            raise ValueError(f"Alpha {self.alpha.shape} does not match texture {self.texture.shape[:2]}")
        if not (self.alpha > 0).any():
            raise ValueError("Alpha matte has no foreground pixel")


@dataclass
class MotionScript:
    homographies: List[Homography]
    gains: List[float]
    backgrounds: List[int]

    def __post_init__(self) -> None:
        if len(self.homographies) < 2:
            raise DegenerateTransformError("A motion script needs at least 2 frames")
        if not len(self.homographies) == len(self.gains) == len(self.backgrounds):
            raise ValueError("Motion script sequences differ in length")
        for gain in self.gains:
            if not GAIN_RANGE[0] <= gain <= GAIN_RANGE[1]:
                raise ValueError(f"Brightness gain {gain} outside {GAIN_RANGE}")

    def __len__(self) -> int:
        return len(self.homographies)


@dataclass
class GroundTruthMap:
    """Per-pixel target coordinate for every source foreground pixel (NaN elsewhere)."""

    source: str
    target: str
    mapping: np.ndarray
    visible: np.ndarray = field(repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.visible.shape  # type: ignore


def _smooth_noise(rng: np.random.Generator, shape: Tuple[int, int], sigma: float) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    span = noise.max() - noise.min()
    return (noise - noise.min()) / (span if span > 0 else 1.0)


def _colorize(plane: np.ndarray, low: Sequence[float], high: Sequence[float]) -> np.ndarray:
    return np.asarray(low)[None, None, :] + plane[..., None] * (np.asarray(high) - np.asarray(low))[None, None, :]


def make_object(kind: ObjectKind, size: int, rng: np.random.Generator) -> TexturedObject:
    """Procedural stand-ins: `drill` is elongated and weakly textured, `hulk` compact and richly textured."""
    kind = ObjectKind(kind)
    if kind == ObjectKind.DRILL:
        height, width = max(8, int(size * 0.6)), max(12, size)
        xs, ys = pixel_grid(height, width)
        alpha = np.zeros((height, width), dtype=np.float32)
        alpha[: int(height * 0.45), int(width * 0.12) :] = 1.0
        alpha[int(height * 0.12) : int(height * 0.33), : int(width * 0.12)] = 1.0
        alpha[int(height * 0.4) :, int(width * 0.55) : int(width * 0.78)] = 1.0
        shading = 0.55 * xs / width + 0.45 * ys / height
        texture = _colorize(shading, (0.1, 0.35, 0.15), (0.35, 0.8, 0.3))
        texture += 0.12 * (_smooth_noise(rng, (height, width), size / 10.0)[..., None] - 0.5)
        texture[:, int(width * 0.5) : int(width * 0.53)] *= 0.4
        # a few dark screws, the only sharp detail on the body
        for _ in range(4):
            cy, cx = rng.uniform(0.05, 0.4) * height, rng.uniform(0.2, 0.95) * width
            texture[(xs - cx) ** 2 + (ys - cy) ** 2 < (size * 0.03) ** 2] = rng.uniform(0.0, 0.3, 3)
    else:
        height = width = max(12, size)
        xs, ys = pixel_grid(height, width)
        ellipse = ((xs - width / 2) / (width * 0.42)) ** 2 + ((ys - height / 2) / (height * 0.48)) ** 2
        alpha = (ellipse <= 1.0).astype(np.float32)
        octaves = ((0.5, size / 8.0), (0.3, 2.5), (0.2, 1.0))
        detail = sum(weight * _smooth_noise(rng, (height, width), sigma) for weight, sigma in octaves)
        texture = np.stack(
            [_smooth_noise(rng, (height, width), size / 6.0) * 0.4 + detail * 0.6 for _ in range(3)], axis=-1
        )
    return TexturedObject(np.clip(texture, 0.0, 1.0).astype(np.float32), alpha)


def make_background(kind: BackgroundKind, height: int, width: int, rng: np.random.Generator) -> ImageFrame:
    kind = BackgroundKind(kind)
    xs, ys = pixel_grid(height, width)
    if kind == BackgroundKind.FLAT:
        base = 0.5 + 0.1 * (xs / width) - 0.05 * (ys / height)
        background = _colorize(base, (0.2, 0.2, 0.25), (0.9, 0.85, 0.8))
        background += 0.03 * (_smooth_noise(rng, (height, width), 12.0)[..., None] - 0.5)
    else:
        background = _colorize(_smooth_noise(rng, (height, width), 3.0), (0.1, 0.1, 0.1), (0.7, 0.6, 0.5))
        for _ in range(max(8, (height * width) // 1500)):
            color = rng.uniform(0.0, 1.0, 3)
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            if rng.random() < 0.5:
                half_w, half_h = rng.uniform(2, width / 10), rng.uniform(2, height / 10)
                shape = (np.abs(xs - cx) <= half_w) & (np.abs(ys - cy) <= half_h)
            else:
                shape = (xs - cx) ** 2 + (ys - cy) ** 2 <= rng.uniform(2, min(height, width) / 12) ** 2
            background[shape] = color
    return np.clip(background, 0.0, 1.0).astype(np.float32)


def render_frame(
    obj: TexturedObject, background: ImageFrame, homography: Homography, gain: float
) -> Tuple[ImageFrame, ForegroundMask]:
    height, width = background.shape[:2]
    xs, ys = pixel_grid(height, width)
    sx, sy = homography.inverse().apply(xs, ys)
    coords = [sy, sx]
    alpha = ndimage.map_coordinates(obj.alpha, coords, order=1, mode="constant", cval=0.0)
    mask = alpha > MASK_THRESHOLD
    if not mask.any():
        raise ObjectOutOfFrameError("Object is warped fully out of the frame")

    texture = np.stack(
        [ndimage.map_coordinates(obj.texture[..., c], coords, order=1, mode="constant", cval=0.0) for c in range(3)],
        axis=-1,
    )
    weight = np.clip(alpha, 0.0, 1.0)[..., None]
    frame = weight * np.clip(texture * gain, 0.0, 1.0) + (1.0 - weight) * background
    return frame.astype(np.float32), ForegroundMask(mask, MaskProvenance.GROUND_TRUTH)


def ground_truth_map(
    homography_s: Homography,
    homography_t: Homography,
    mask_s: ForegroundMask,
    mask_t: Optional[ForegroundMask] = None,
    source: str = "s",
    target: str = "t",
) -> GroundTruthMap:
    height, width = mask_s.shape
    transfer = homography_t @ homography_s.inverse()
    xs, ys = pixel_grid(height, width)
    tx, ty = transfer.apply(xs, ys)
    mapping = np.stack([np.where(mask_s.data, tx, np.nan), np.where(mask_s.data, ty, np.nan)], axis=-1)

    visible = mask_s.data & in_bounds(mapping[..., 0], mapping[..., 1], height, width)
    if mask_t is not None:
        on_target = np.zeros_like(visible)
        on_target[visible] = mask_t.data[round_coords(ty[visible]), round_coords(tx[visible])]
        visible &= on_target
    return GroundTruthMap(source, target, mapping, visible)


def _reflect(value: float, low: float, high: float) -> float:
    if value > high:
        return high - (value - high)
    if value < low:
        return low + (low - value)
    return value


def make_motion_script(
    motion: MotionSettings,
    n_frames: int,
    frame_size: Tuple[int, int],
    placement: Homography,
    rng: np.random.Generator,
    background: int = 0,
) -> MotionScript:
    limit = motion.translation_limit * min(frame_size)
    gain_low, gain_high = motion.gain_min, motion.gain_max
    angle, scale = 0.0, 1.0
    translation = np.zeros(2)
    perspective = np.zeros(2)
    gain = float(np.clip(1.0, gain_low, gain_high))

    homographies: List[Homography] = []
    gains: List[float] = []
    for index in range(n_frames):
        if index > 0:
            if motion.mode == MotionMode.CONSTANT:
                angle += motion.rotation_deg_per_frame
                translation = translation + np.asarray(motion.translation_px_per_frame)
                scale *= motion.scale_per_frame
            else:
                angle += rng.uniform(-motion.max_rotation_deg, motion.max_rotation_deg)
                step = rng.uniform(-motion.max_translation_px, motion.max_translation_px, 2)
                translation = np.array([_reflect(v, -limit, limit) for v in translation + step])
                scale_step = 1.0 + rng.uniform(-motion.max_scale_step, motion.max_scale_step)
                scale = _reflect(scale * scale_step, motion.scale_range[0], motion.scale_range[1])
                perspective = perspective + rng.uniform(-motion.max_perspective_step, motion.max_perspective_step, 2)
                gain = _reflect(gain + rng.uniform(-motion.max_gain_step, motion.max_gain_step), gain_low, gain_high)
        frame_motion = compose_homography(angle, scale, translation, perspective, frame_size=frame_size)
        homographies.append(frame_motion @ placement)
        gains.append(float(gain))
    return MotionScript(homographies, gains, [background] * n_frames)


def _placement(obj: TexturedObject, frame_size: Tuple[int, int]) -> Homography:
    height, width = frame_size
    obj_height, obj_width = obj.alpha.shape
    return Homography(_translation((width - obj_width) / 2.0, (height - obj_height) / 2.0))


def generate_sequence(
    config: SynthSettings, output_dir: Union[str, Path], seed: int = 0, workers: int = 1
) -> Path:
    """Render one clip per configured background and write frames, masks, ground truth and scripts."""
    root = Path(output_dir)
    for sub in (FRAMES_DIR, MASKS_DIR, GT_DIR):
        (root / sub).mkdir(parents=True, exist_ok=True)

    frame_size = (config.height, config.width)
    obj = make_object(config.object_kind, int(config.object_scale * min(frame_size)), make_rng(seed, 1))
    placement = _placement(obj, frame_size)
    backgrounds = {
        kind: make_background(kind, config.height, config.width, make_rng(seed, 2, index))
        for index, kind in enumerate(BackgroundKind)
    }

    clip_scripts: List[ClipScriptModel] = []
    clips: List[ClipModel] = []
    for clip, kind in enumerate(config.backgrounds):
        background_id = list(BackgroundKind).index(kind)
        script = make_motion_script(
            config.motion, config.n_frames, frame_size, placement, make_rng(seed, 3, clip), background_id
        )
        logger.info(f"Rendering clip {clip} ({kind.value} background, {len(script)} frames) into {root}")

        def render(index: int) -> Tuple[ImageFrame, ForegroundMask]:
            return render_frame(obj, backgrounds[kind], script.homographies[index], script.gains[index])

        with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
            rendered = list(executor.map(render, range(len(script))))

        for index, (frame, mask) in enumerate(rendered):
            key = FrameKey(clip, index)
            write_png(root / FRAMES_DIR / f"{key.name}.png", frame)
            save_mask(mask, root / MASKS_DIR / f"{key.name}.png")

        for index in range(len(script) - 1):
            source, target = FrameKey(clip, index), FrameKey(clip, index + 1)
            gt = ground_truth_map(
                script.homographies[index],
                script.homographies[index + 1],
                rendered[index][1],
                rendered[index + 1][1],
                source.name,
                target.name,
            )
            write_gtm(root / GT_DIR / f"{source.name}_{target.name}.gtm", gt.mapping, gt.visible)

        clip_scripts.append(
            ClipScriptModel(
                clip=clip,
                background=kind.value,
                homographies=[h.matrix.tolist() for h in script.homographies],
                gains=script.gains,
                backgrounds=script.backgrounds,
            )
        )
        clips.append(ClipModel(clip=clip, background=kind.value, n_frames=len(script)))

    motion_file = MotionScriptFileModel(
        height=config.height,
        width=config.width,
        object_kind=config.object_kind.value,
        base_placement=placement.matrix.tolist(),
        clips=clip_scripts,
    )
    (root / MOTION_FILE).write_text(motion_file.json(indent=1))

    config_echo = json.loads(config.json())
    dataset_id = hashlib.sha256(json.dumps([config_echo, seed], sort_keys=True).encode()).hexdigest()[:16]
    manifest = DatasetManifestModel(
        dataset_id=dataset_id,
        height=config.height,
        width=config.width,
        object_kind=config.object_kind.value,
        seed=seed,
        clips=clips,
        config=config_echo,
    )
    (root / MANIFEST_FILE).write_text(manifest.json(indent=1))
    return root
