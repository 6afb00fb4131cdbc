import hashlib
import logging
import re
from functools import cached_property
from pathlib import Path
from threading import RLock
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from flowdesc.exceptions import EvaluationError, FormatError
from flowdesc.formats.binary import read_gtm
from flowdesc.formats.images import read_frame
from flowdesc.formats.models import DatasetManifestModel, MotionScriptFileModel
from flowdesc.frames import FrameKey, ImageFrame
from flowdesc.segment import ForegroundMask, MaskProvenance, load_mask
from flowdesc.settings import EvalSplit, MaskSource, SegmentSettings
from flowdesc.synthgen import (
    FRAMES_DIR,
    GT_DIR,
    MANIFEST_FILE,
    MASKS_DIR,
    MOTION_FILE,
    GroundTruthMap,
    Homography,
    ground_truth_map,
)
from flowdesc.utils import file_digest

logger = logging.getLogger(__name__)

FRAME_NAME = re.compile(r"^c(\d+)_f(\d+)$")


def parse_frame_name(stem: str, fallback_index: int) -> FrameKey:
    match = FRAME_NAME.match(stem)
    if match is None:
        return FrameKey(0, fallback_index)
    return FrameKey(int(match.group(1)), int(match.group(2)))


class FrameDataset:
    """A directory of frames with optional masks, ground truth and motion scripts.

    Synthetic datasets carry everything; real videos only need `frames/`.
    """

    def __init__(self, root: Union[str, Path], segment: Optional[SegmentSettings] = None) -> None:
        self.root = Path(root)
        self.segment = segment or SegmentSettings()
        frame_dir = self.root / FRAMES_DIR
        if not frame_dir.is_dir():
            raise FileNotFoundError(f"Dataset has no {FRAMES_DIR}/ directory: {self.root}")

        paths = sorted(frame_dir.glob("*.png"))
        if not paths:
            raise FormatError(f"No PNG frames found in {frame_dir}")
        self._paths: Dict[FrameKey, Path] = {}
        for position, path in enumerate(paths):
            self._paths[parse_frame_name(path.stem, position)] = path
        self.keys: List[FrameKey] = sorted(self._paths)

        self.manifest: Optional[DatasetManifestModel] = None
        if (self.root / MANIFEST_FILE).exists():
            self.manifest = DatasetManifestModel.parse_file(self.root / MANIFEST_FILE)
        self._homographies: Dict[FrameKey, Homography] = {}
        self._backgrounds: Dict[int, str] = {}
        if (self.root / MOTION_FILE).exists():
            script = MotionScriptFileModel.parse_file(self.root / MOTION_FILE)
            for clip in script.clips:
                self._backgrounds[clip.clip] = clip.background
                for index, matrix in enumerate(clip.homographies):
                    self._homographies[FrameKey(clip.clip, index)] = Homography(np.array(matrix))

        self._frames: Dict[FrameKey, ImageFrame] = {}
        self._masks: Dict[FrameKey, ForegroundMask] = {}
        self._lock = RLock()

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def dataset_id(self) -> str:
        return self.manifest.dataset_id if self.manifest else self.root.name

    @cached_property
    def content_digest(self) -> str:
        """Digest over every frame file, so two datasets share it only when their frames are identical."""
        digest = hashlib.sha256()
        for key in self.keys:
            digest.update(f"{key.name}:{file_digest(self._paths[key])};".encode())
        return digest.hexdigest()[:16]

    @property
    def clips(self) -> List[int]:
        return sorted({key.clip for key in self.keys})

    def clip_keys(self, clip: int) -> List[FrameKey]:
        return [key for key in self.keys if key.clip == clip]

    def background(self, key: FrameKey) -> str:
        return self._backgrounds.get(key.clip, f"clip{key.clip}")

    @property
    def has_motion(self) -> bool:
        return bool(self._homographies)

    def homography(self, key: FrameKey) -> Homography:
        if key not in self._homographies:
            raise EvaluationError(f"No motion script entry for frame {key.name}")
        return self._homographies[key]

    def frame(self, key: FrameKey) -> ImageFrame:
        with self._lock:
            if key not in self._frames:
                self._frames[key] = read_frame(self._paths[key])
            return self._frames[key]

    @property
    def frame_shape(self) -> Tuple[int, int]:
        return self.frame(self.keys[0]).shape[:2]  # type: ignore

    def mask(self, key: FrameKey) -> ForegroundMask:
        """Mask from the configured file source; motion masks are derived from flow by the caller."""
        with self._lock:
            if key not in self._masks:
                if self.segment.source == MaskSource.FILE and self.segment.mask_dir:
                    path, provenance = Path(self.segment.mask_dir) / f"{key.name}.png", MaskProvenance.FILE
                else:
                    path, provenance = self.root / MASKS_DIR / f"{key.name}.png", MaskProvenance.GROUND_TRUTH
                if path.exists():
                    self._masks[key] = load_mask(path, self.frame_shape, provenance)
                else:
                    logger.warning(f"No mask for {key.name}; using the full frame")
                    self._masks[key] = ForegroundMask(np.ones(self.frame_shape, dtype=bool), provenance)
            return self._masks[key]

    def ground_truth(self, source: FrameKey, target: FrameKey) -> GroundTruthMap:
        stored = self.root / GT_DIR / f"{source.name}_{target.name}.gtm"
        if stored.exists():
            mapping, visible, _ = read_gtm(stored)
            return GroundTruthMap(source.name, target.name, mapping.astype(np.float64), visible)
        if not self.has_motion:
            raise EvaluationError(f"No ground truth available for {source.name} -> {target.name}")
        return ground_truth_map(
            self.homography(source),
            self.homography(target),
            self.mask(source),
            self.mask(target),
            source.name,
            target.name,
        )

    def split(self, split: EvalSplit, train_fraction: float = 0.5) -> List[FrameKey]:
        split = EvalSplit(split)
        if split == EvalSplit.ALL:
            return list(self.keys)
        selected = []
        for clip in self.clips:
            keys = self.clip_keys(clip)
            cut = int(round(len(keys) * train_fraction))
            selected += keys[:cut] if split == EvalSplit.TRAIN else keys[cut:]
        return selected

    def consecutive_pairs(
        self, split: EvalSplit = EvalSplit.ALL, train_fraction: float = 0.5
    ) -> List[Tuple[FrameKey, FrameKey]]:
        keys = set(self.split(split, train_fraction))
        pairs = []
        for clip in self.clips:
            clip_keys = [key for key in self.clip_keys(clip) if key in keys]
            pairs += [(a, b) for a, b in zip(clip_keys, clip_keys[1:]) if b.index == a.index + 1]
        return pairs
