"""False-positive percentile: the share of candidate pixels strictly closer to a query than its true match."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from flowdesc.exceptions import EvaluationError
from flowdesc.flowlab.sampling import PixelCoord
from flowdesc.frames import round_coords
from flowdesc.settings import EvalDomain


@dataclass
class DistanceRow:
    query: PixelCoord
    distances: np.ndarray
    domain: np.ndarray
    tag: EvalDomain = EvalDomain.FULL

    def __post_init__(self) -> None:
        if self.distances.shape != self.domain.shape:
            raise EvaluationError(f"Distance plane {self.distances.shape} and domain {self.domain.shape} differ")


def distance_row(
    query: PixelCoord,
    descriptor: np.ndarray,
    target: np.ndarray,
    domain: np.ndarray,
    tag: EvalDomain = EvalDomain.FULL,
) -> DistanceRow:
    distances = np.linalg.norm(target.astype(np.float64) - descriptor.astype(np.float64), axis=-1)
    return DistanceRow(query, distances, domain, tag)


def false_positive_percentile(row: DistanceRow, gt: PixelCoord) -> float:
    height, width = row.domain.shape
    x, y = int(round_coords(gt[0])), int(round_coords(gt[1]))
    if not (0 <= x < width and 0 <= y < height) or not row.domain[y, x]:
        raise EvaluationError(f"Ground-truth pixel {tuple(gt)} lies outside the evaluation domain")
    reference = row.distances[y, x]
    candidates = row.distances[row.domain]
    return 100.0 * np.count_nonzero(candidates < reference) / candidates.size


def batch_percentiles(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    sources: np.ndarray,
    targets: np.ndarray,
    domain: np.ndarray,
    chunk: int = 512,
    workers: int = 1,
) -> np.ndarray:
    """Percentiles for many queries at once.

    `sources` and `targets` are N x 2 integer (x, y) pixels; every target must lie in `domain`.
    Squared distances share one formula for the reference and the candidates, so ranks are exact
    with respect to each other.
    """
    height, width = domain.shape
    flat_domain = np.flatnonzero(domain)
    if flat_domain.size == 0:
        raise EvaluationError("Evaluation domain is empty")
    column = np.full(height * width, -1, dtype=np.int64)
    column[flat_domain] = np.arange(flat_domain.size)
    gt_columns = column[targets[:, 1] * width + targets[:, 0]]
    if (gt_columns < 0).any():
        raise EvaluationError("Some ground-truth pixels lie outside the evaluation domain")

    candidates = desc_b.reshape(-1, desc_b.shape[-1])[flat_domain].astype(np.float64)
    # centering keeps the expanded squared distance well conditioned
    offset = candidates.mean(axis=0)
    candidates = candidates - offset
    candidate_sq = np.einsum("md,md->m", candidates, candidates)
    queries = desc_a[sources[:, 1], sources[:, 0]].astype(np.float64) - offset

    def run(bounds: Tuple[int, int]) -> np.ndarray:
        start, stop = bounds
        block = queries[start:stop]
        sq = np.einsum("nd,nd->n", block, block)[:, None] + candidate_sq[None, :] - 2.0 * block @ candidates.T
        reference = sq[np.arange(stop - start), gt_columns[start:stop]][:, None]
        return 100.0 * np.count_nonzero(sq < reference, axis=1) / flat_domain.size

    spans: List[Tuple[int, int]] = [(s, min(s + chunk, len(queries))) for s in range(0, len(queries), chunk)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        parts = list(executor.map(run, spans))
    return np.concatenate(parts) if parts else np.zeros(0)


def nearest_pixels(desc_a: np.ndarray, desc_b: np.ndarray, sources: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """(x, y) of the nearest descriptor in B for every source pixel of A; ties resolve to raster order."""
    width = domain.shape[1]
    flat_domain = np.flatnonzero(domain)
    if flat_domain.size == 0:
        raise EvaluationError("Evaluation domain is empty")
    candidates = desc_b.reshape(-1, desc_b.shape[-1])[flat_domain].astype(np.float64)
    queries = desc_a[sources[:, 1], sources[:, 0]].astype(np.float64)
    flat = np.array(
        [flat_domain[np.argmin(((candidates - query) ** 2).sum(axis=1))] for query in queries], dtype=np.int64
    )
    return np.stack([flat % width, flat // width], axis=-1).reshape(-1, 2)


def cumulative_histogram(
    values: np.ndarray, bins: int, upper: float = 100.0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edges, per-bin counts and cumulative fraction of values over [0, upper]."""
    edges = np.linspace(0.0, upper, bins)
    counts, _ = np.histogram(np.clip(values, 0.0, upper), bins=edges)
    total = max(int(counts.sum()), 1)
    return edges, counts, np.cumsum(counts) / total
