import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from pathlib import Path
from typing import List, Tuple

import numpy as np

from flowdesc.dataset import FrameDataset
from flowdesc.descnet import DescriptorMap, DescriptorNet, forward
from flowdesc.evalharness.baseline import compute_baseline
from flowdesc.frames import FrameKey, pixel_grid

logger = logging.getLogger(__name__)

# far from every texture coordinate, so background never beats a true match
ORACLE_BACKGROUND = -1000.0

DEFAULT_CACHE_FRAMES = 4


class Describer(ABC):
    """Turns a dataset frame into a dense descriptor map; every evaluation test runs against this contract."""

    name = "describer"

    def __init__(self, cache_frames: int = DEFAULT_CACHE_FRAMES) -> None:
        if cache_frames < 1:
            raise ValueError("A describer keeps at least one descriptor map")
        self.cache_frames = cache_frames
        self._cache: OrderedDict[Tuple[Path, FrameKey], DescriptorMap] = OrderedDict()

    def describe(self, dataset: FrameDataset, key: FrameKey) -> DescriptorMap:
        """Descriptor map of one frame; the `cache_frames` most recently used maps are kept."""
        entry = (dataset.root, key)
        if entry in self._cache:
            self._cache.move_to_end(entry)
            return self._cache[entry]
        descriptors = self._describe(dataset, key)
        self._cache[entry] = descriptors
        while len(self._cache) > self.cache_frames:
            self._cache.popitem(last=False)
        return descriptors

    @property
    def cached_keys(self) -> List[FrameKey]:
        return [key for _, key in self._cache]

    @abstractmethod
    def _describe(self, dataset: FrameDataset, key: FrameKey) -> DescriptorMap:
        ...


class NetworkDescriber(Describer):
    name = "network"

    def __init__(self, net: DescriptorNet, cache_frames: int = DEFAULT_CACHE_FRAMES) -> None:
        super().__init__(cache_frames)
        self.net = net

    def _describe(self, dataset: FrameDataset, key: FrameKey) -> DescriptorMap:
        return forward(self.net, dataset.frame(key), key.name)


class BaselineDescriber(Describer):
    name = "baseline"

    def __init__(self, patch_radius: int = 8, cache_frames: int = DEFAULT_CACHE_FRAMES) -> None:
        super().__init__(cache_frames)
        self.patch_radius = patch_radius

    def _describe(self, dataset: FrameDataset, key: FrameKey) -> DescriptorMap:
        return DescriptorMap(compute_baseline(dataset.frame(key), self.patch_radius).descriptors, key.name)


class OracleDescriber(Describer):
    """Object pixels described by their exact texture coordinate, background by one far constant."""

    name = "oracle"

    def _describe(self, dataset: FrameDataset, key: FrameKey) -> DescriptorMap:
        height, width = dataset.frame_shape
        xs, ys = pixel_grid(height, width)
        tx, ty = dataset.homography(key).inverse().apply(xs, ys)
        mask = dataset.mask(key).data
        data = np.stack([np.where(mask, tx, ORACLE_BACKGROUND), np.where(mask, ty, ORACLE_BACKGROUND)], axis=-1)
        return DescriptorMap(data, key.name)
