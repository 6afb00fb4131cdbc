import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from flowdesc.dataset import FrameDataset
from flowdesc.evalharness.baseline import interior_mask
from flowdesc.evalharness.describers import Describer
from flowdesc.evalharness.keypoints import detect_keypoints
from flowdesc.evalharness.metrics import batch_percentiles, cumulative_histogram, nearest_pixels
from flowdesc.exceptions import EvaluationError, GeometryError
from flowdesc.formats.images import to_uint8, write_png
from flowdesc.formats.models import (
    ConsecutiveResultModel,
    CrossCellModel,
    CrossResultModel,
    KeypointResultModel,
    KeypointRowModel,
    PairResultModel,
    PixelHistogramModel,
)
from flowdesc.frames import FrameKey, round_coords, to_gray
from flowdesc.settings import EvalDomain, EvalSplit, Settings
from flowdesc.utils import make_rng

logger = logging.getLogger(__name__)

CROSS_SPLITS = (
    (EvalSplit.TRAIN, EvalSplit.TRAIN, "Train-Train"),
    (EvalSplit.TRAIN, EvalSplit.TEST, "Train-Test"),
    (EvalSplit.TEST, EvalSplit.TEST, "Test-Test"),
)
CROSS_BACKGROUNDS = ("same", "different")
MAX_DRAWS_PER_PAIR = 50

FramePair = Tuple[FrameKey, FrameKey]


@dataclass
class PairQueries:
    """Query pixels of A and their rounded true matches in B, shared by every describer."""

    source: FrameKey
    target: FrameKey
    sources: np.ndarray
    targets: np.ndarray
    exact_targets: np.ndarray
    domain: np.ndarray

    @property
    def n_pixels(self) -> int:
        return int(self.sources.shape[0])


def evaluation_domain(dataset: FrameDataset, key: FrameKey, settings: Settings) -> np.ndarray:
    """Candidate pixels of an image: the interior both describers support, optionally cut to the mask.

    `both` is split into two passes by run_evaluation; called directly it means the full image.
    """
    domain = interior_mask(dataset.frame_shape, settings.eval.baseline_patch_radius)
    if settings.eval.domain == EvalDomain.MASK:
        domain &= dataset.mask(key).data
    return domain


def pair_queries(
    dataset: FrameDataset,
    source: FrameKey,
    target: FrameKey,
    settings: Settings,
    max_pixels: Optional[int] = None,
    seed: int = 0,
) -> PairQueries:
    gt = dataset.ground_truth(source, target)
    domain_b = evaluation_domain(dataset, target, settings)
    usable = gt.visible & interior_mask(dataset.frame_shape, settings.eval.baseline_patch_radius)
    ys, xs = np.nonzero(usable)
    exact = gt.mapping[ys, xs]
    rounded = np.stack([round_coords(exact[:, 0]), round_coords(exact[:, 1])], axis=-1)
    keep = domain_b[rounded[:, 1], rounded[:, 0]]
    sources = np.stack([xs, ys], axis=-1)[keep]
    rounded, exact = rounded[keep], exact[keep]

    if max_pixels is not None and sources.shape[0] > max_pixels:
        chosen = np.sort(make_rng(seed).choice(sources.shape[0], size=max_pixels, replace=False))
        sources, rounded, exact = sources[chosen], rounded[chosen], exact[chosen]
    return PairQueries(source, target, sources.astype(np.int64), rounded.astype(np.int64), exact, domain_b)


def pair_percentiles(
    dataset: FrameDataset, describer: Describer, queries: PairQueries, settings: Settings
) -> np.ndarray:
    desc_a = describer.describe(dataset, queries.source).data
    desc_b = describer.describe(dataset, queries.target).data
    return batch_percentiles(
        desc_a,
        desc_b,
        queries.sources,
        queries.targets,
        queries.domain,
        chunk=settings.eval.query_chunk,
        workers=settings.effective_workers,
    )


def strided_pairs(dataset: FrameDataset, settings: Settings) -> List[FramePair]:
    """Consecutive pairs of the evaluation split after keeping every round(1 / sample_rate)-th frame."""
    stride = max(1, int(round(1.0 / settings.eval.sample_rate)))
    keys = set(dataset.split(settings.eval.split, settings.train.train_fraction))
    pairs: List[FramePair] = []
    for clip in dataset.clips:
        sampled = [key for key in dataset.clip_keys(clip) if key in keys][::stride]
        pairs += list(zip(sampled, sampled[1:]))
    return pairs


def eval_consecutive(
    dataset: FrameDataset, describers: Sequence[Describer], settings: Settings
) -> List[ConsecutiveResultModel]:
    pairs = strided_pairs(dataset, settings)
    if len(pairs) < settings.eval.n_pairs:
        logger.warning(f"Only {len(pairs)} frame pairs available, {settings.eval.n_pairs} requested")
    pairs = pairs[: settings.eval.n_pairs]
    if not pairs:
        raise EvaluationError("No consecutive frame pairs to evaluate")

    per_describer: Dict[str, List[PairResultModel]] = {describer.name: [] for describer in describers}
    for index, (source, target) in enumerate(pairs):
        queries = pair_queries(dataset, source, target, settings, settings.eval.pixel_samples, settings.seed + index)
        if queries.n_pixels == 0:
            logger.warning(f"No visible pixels to evaluate on {source.name}->{target.name}")
            continue
        for describer in describers:
            percentiles = pair_percentiles(dataset, describer, queries, settings)
            per_describer[describer.name].append(
                PairResultModel(
                    source=source.name,
                    target=target.name,
                    mean_percentile=float(percentiles.mean()),
                    n_pixels=queries.n_pixels,
                )
            )

    results = []
    for describer in describers:
        rows = per_describer[describer.name]
        if not rows:
            raise EvaluationError("No frame pair had evaluable pixels")
        means = np.array([row.mean_percentile for row in rows])
        edges, _, cumulative = cumulative_histogram(means, settings.eval.histogram_bins)
        results.append(
            ConsecutiveResultModel(
                describer=describer.name,
                pairs=rows,
                mean=float(means.mean()),
                std=float(means.std()),
                cumulative_bins=edges[1:].tolist(),
                cumulative_fraction=cumulative.tolist(),
            )
        )
        logger.info(f"Consecutive pairs, {describer.name}: {means.mean():.2f} +- {means.std():.2f} percentile")
    return results


def _draw_cross_pair(
    rng: np.random.Generator, dataset: FrameDataset, keys_a: List[FrameKey], keys_b: List[FrameKey], same: bool
) -> Optional[FramePair]:
    for _ in range(MAX_DRAWS_PER_PAIR):
        a = keys_a[int(rng.integers(len(keys_a)))]
        b = keys_b[int(rng.integers(len(keys_b)))]
        if a != b and (dataset.background(a) == dataset.background(b)) == same:
            return a, b
    return None


def eval_cross(
    dataset: FrameDataset, describers: Sequence[Describer], settings: Settings
) -> List[CrossResultModel]:
    """Mean percentile per {same, different background} x {train, test}^2 cell over sampled image pairs."""
    splits = {
        split: dataset.split(split, settings.train.train_fraction) for split in (EvalSplit.TRAIN, EvalSplit.TEST)
    }
    if not splits[EvalSplit.TRAIN] or not splits[EvalSplit.TEST]:
        raise EvaluationError("Both the train and the test split must hold frames")

    cells: Dict[str, List[CrossCellModel]] = {describer.name: [] for describer in describers}
    for cell_index, (background, (split_a, split_b, label)) in enumerate(
        (background, splits_) for background in CROSS_BACKGROUNDS for splits_ in CROSS_SPLITS
    ):
        rng = make_rng(settings.seed, 2, cell_index)
        sums: Dict[str, List[float]] = {describer.name: [] for describer in describers}
        attempts = 0
        max_attempts = MAX_DRAWS_PER_PAIR * settings.eval.n_image_pairs
        while len(next(iter(sums.values()))) < settings.eval.n_image_pairs and attempts < max_attempts:
            attempts += 1
            pair = _draw_cross_pair(rng, dataset, splits[split_a], splits[split_b], background == "same")
            if pair is None:
                break
            queries = pair_queries(
                dataset, pair[0], pair[1], settings, settings.eval.pixel_samples, int(rng.integers(2**31))
            )
            if queries.n_pixels == 0:
                continue
            for describer in describers:
                sums[describer.name].append(float(pair_percentiles(dataset, describer, queries, settings).mean()))

        if not next(iter(sums.values())):
            raise EvaluationError(f"Cross-condition cell {background}/{label} has no evaluable image pair")
        for describer in describers:
            values = sums[describer.name]
            cells[describer.name].append(
                CrossCellModel(
                    background=background, splits=label, mean_percentile=float(np.mean(values)), n_pairs=len(values)
                )
            )
    return [CrossResultModel(describer=describer.name, cells=cells[describer.name]) for describer in describers]


def default_pair(dataset: FrameDataset, settings: Settings) -> FramePair:
    pairs = dataset.consecutive_pairs(settings.eval.split, settings.train.train_fraction)
    if not pairs:
        raise EvaluationError("The evaluation split holds no consecutive frame pair")
    return pairs[0]


def eval_pixelwise_histogram(
    dataset: FrameDataset, describers: Sequence[Describer], pair: FramePair, settings: Settings
) -> List[PixelHistogramModel]:
    queries = pair_queries(dataset, pair[0], pair[1], settings, settings.eval.pixel_samples, settings.seed)
    results = []
    for describer in describers:
        percentiles = pair_percentiles(dataset, describer, queries, settings)
        edges, counts, cumulative = cumulative_histogram(percentiles, settings.eval.histogram_bins)
        results.append(
            PixelHistogramModel(
                describer=describer.name,
                source=pair[0].name,
                target=pair[1].name,
                bin_edges=edges.tolist(),
                counts=counts.tolist(),
                cumulative_fraction=cumulative.tolist(),
                n_pixels=queries.n_pixels,
            )
        )
    return results


def eval_keypoints(
    dataset: FrameDataset, network: Describer, baseline: Describer, pair: FramePair, settings: Settings
) -> KeypointResultModel:
    """Nearest-neighbour error at DoG keypoints of A, for both describers on the same keypoint set."""
    source, target = pair
    queries = pair_queries(dataset, source, target, settings)
    if queries.n_pixels == 0:
        raise EvaluationError(f"No evaluable pixels on {source.name}->{target.name}")
    height, width = dataset.frame_shape
    evaluable = np.zeros((height, width), dtype=bool)
    evaluable[queries.sources[:, 1], queries.sources[:, 0]] = True
    exact = np.full((height, width, 2), np.nan)
    exact[queries.sources[:, 1], queries.sources[:, 0]] = queries.exact_targets

    keypoints = detect_keypoints(to_gray(dataset.frame(source)), evaluable, settings.eval.max_keypoints)
    truth = exact[keypoints[:, 1], keypoints[:, 0]]
    errors = {}
    for describer in (baseline, network):
        found = nearest_pixels(
            describer.describe(dataset, source).data,
            describer.describe(dataset, target).data,
            keypoints,
            queries.domain,
        )
        errors[describer.name] = np.hypot(found[:, 0] - truth[:, 0], found[:, 1] - truth[:, 1])

    edges = np.linspace(0.0, settings.eval.keypoint_hist_max_px, settings.eval.keypoint_hist_bins + 1)
    upper = settings.eval.keypoint_hist_max_px
    baseline_errors, network_errors = errors[baseline.name], errors[network.name]
    rows = [
        KeypointRowModel(x=float(x), y=float(y), baseline_error_px=float(b), network_error_px=float(n))
        for (x, y), b, n in zip(keypoints.tolist(), baseline_errors, network_errors)
    ]
    logger.info(
        f"Keypoints on {source.name}: {len(rows)} points, median error "
        f"{baseline.name} {np.median(baseline_errors):.2f} px, {network.name} {np.median(network_errors):.2f} px"
    )
    return KeypointResultModel(
        source=source.name,
        target=target.name,
        rows=rows,
        bin_edges=edges.tolist(),
        baseline_counts=np.histogram(np.clip(baseline_errors, 0, upper), bins=edges)[0].tolist(),
        network_counts=np.histogram(np.clip(network_errors, 0, upper), bins=edges)[0].tolist(),
        baseline_median_px=float(np.median(baseline_errors)),
        network_median_px=float(np.median(network_errors)),
    )


def square_patch(center: Sequence[int], side: int = 5) -> np.ndarray:
    """side x side grid of (x, y) pixels centred on `center`, raster order."""
    half = side // 2
    offsets = np.arange(side) - half
    ys, xs = np.meshgrid(offsets + int(center[1]), offsets + int(center[0]), indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.int64)


@dataclass
class TrackResult:
    frames: List[str]
    trajectories: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.trajectories.shape[1])


def _point_colors(n_points: int) -> List[Tuple[int, int, int]]:
    hues = np.linspace(0, 179, max(n_points, 1), endpoint=False).astype(np.uint8)
    hsv = np.stack([hues, np.full_like(hues, 255), np.full_like(hues, 255)], axis=-1)[None]
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)[0]
    return [(int(r), int(g), int(b)) for r, g, b in rgb]


def track_points(
    dataset: FrameDataset,
    describer: Describer,
    seed_points: np.ndarray,
    reference: FrameKey,
    n_frames: Optional[int] = None,
    mask_restricted: bool = True,
    output_dir: Optional[Union[str, Path]] = None,
) -> TrackResult:
    """Follow seed pixels of the reference frame through later frames of its clip by nearest descriptor."""
    height, width = dataset.frame_shape
    seeds = np.asarray(seed_points, dtype=np.int64).reshape(-1, 2)
    if seeds.size == 0:
        raise GeometryError("No seed points given")
    if (seeds[:, 0] < 0).any() or (seeds[:, 0] >= width).any() or (seeds[:, 1] < 0).any() or (
        seeds[:, 1] >= height
    ).any():
        raise GeometryError(f"Seed points must lie inside the {height}x{width} reference frame")

    keys = [key for key in dataset.clip_keys(reference.clip) if key.index >= reference.index]
    if n_frames is not None:
        keys = keys[:n_frames]
    reference_descriptors = describer.describe(dataset, reference).data
    trajectories = np.zeros((len(keys), len(seeds), 2), dtype=np.int64)
    for position, key in enumerate(keys):
        if key == reference:
            trajectories[position] = seeds
            continue
        domain = dataset.mask(key).data if mask_restricted else np.ones((height, width), dtype=bool)
        if not domain.any():
            domain = np.ones((height, width), dtype=bool)
        trajectories[position] = nearest_pixels(
            reference_descriptors, describer.describe(dataset, key).data, seeds, domain
        )

    result = TrackResult([key.name for key in keys], trajectories)
    if output_dir is not None:
        write_tracks(dataset, keys, result, Path(output_dir))
    return result


def write_tracks(dataset: FrameDataset, keys: List[FrameKey], result: TrackResult, output_dir: Path) -> None:
    colors = _point_colors(result.n_points)
    for position, key in enumerate(keys):
        overlay = np.ascontiguousarray(to_uint8(dataset.frame(key)))
        for point, (x, y) in enumerate(result.trajectories[position].tolist()):
            cv2.circle(overlay, (int(x), int(y)), 2, colors[point], -1)
        write_png(output_dir / "overlays" / f"{key.name}.png", overlay)

    output_dir.mkdir(parents=True, exist_ok=True)
    with open(output_dir / "trajectories.csv", "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(["frame", "point", "x", "y"])
        for frame, positions in zip(result.frames, result.trajectories.tolist()):
            for point, (x, y) in enumerate(positions):
                writer.writerow([frame, point, x, y])
