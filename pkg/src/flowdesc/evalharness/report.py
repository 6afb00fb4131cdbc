import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from flowdesc.formats.models import EvalReportModel, ResultSectionsModel

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
MASK_PREFIX = "mask_"


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(header)
        writer.writerows(rows)


def _write_tables(sections: ResultSectionsModel, output_dir: Path, prefix: str = "") -> List[Path]:
    written: List[Path] = []
    if sections.consecutive:
        written.append(output_dir / f"{prefix}test1_pairs.csv")
        _write_csv(
            written[-1],
            ["describer", "source", "target", "mean_percentile", "n_pixels"],
            (
                [result.describer, pair.source, pair.target, f"{pair.mean_percentile:.6f}", pair.n_pixels]
                for result in sections.consecutive
                for pair in result.pairs
            ),
        )
        written.append(output_dir / f"{prefix}test1_summary.csv")
        _write_csv(
            written[-1],
            ["describer", "n_pairs", "mean", "std"],
            ([r.describer, len(r.pairs), f"{r.mean:.6f}", f"{r.std:.6f}"] for r in sections.consecutive),
        )
        written.append(output_dir / f"{prefix}test1_cumulative.csv")
        _write_csv(
            written[-1],
            ["describer", "percentile", "fraction"],
            (
                [result.describer, f"{edge:.4f}", f"{fraction:.6f}"]
                for result in sections.consecutive
                for edge, fraction in zip(result.cumulative_bins, result.cumulative_fraction)
            ),
        )

    if sections.cross:
        written.append(output_dir / f"{prefix}test2_table.csv")
        _write_csv(
            written[-1],
            ["describer", "background", "splits", "mean_percentile", "n_pairs"],
            (
                [result.describer, cell.background, cell.splits, f"{cell.mean_percentile:.6f}", cell.n_pairs]
                for result in sections.cross
                for cell in result.cells
            ),
        )

    if sections.pixelwise:
        written.append(output_dir / f"{prefix}test3_histogram.csv")
        _write_csv(
            written[-1],
            ["describer", "bin_low", "bin_high", "count", "cumulative_fraction"],
            (
                [result.describer, f"{low:.4f}", f"{high:.4f}", count, f"{fraction:.6f}"]
                for result in sections.pixelwise
                for low, high, count, fraction in zip(
                    result.bin_edges, result.bin_edges[1:], result.counts, result.cumulative_fraction
                )
            ),
        )

    for index, keypoints in enumerate(sections.keypoints):
        suffix = "" if index == 0 else f"_{index}"
        written.append(output_dir / f"{prefix}test4_keypoints{suffix}.csv")
        _write_csv(
            written[-1],
            ["x", "y", "baseline_error_px", "network_error_px"],
            ([row.x, row.y, f"{row.baseline_error_px:.4f}", f"{row.network_error_px:.4f}"] for row in keypoints.rows),
        )
        written.append(output_dir / f"{prefix}test4_histogram{suffix}.csv")
        edges = keypoints.bin_edges
        _write_csv(
            written[-1],
            ["bin_low", "bin_high", "baseline_count", "network_count"],
            (
                [f"{low:.3f}", f"{high:.3f}", b, n]
                for low, high, b, n in zip(edges, edges[1:], keypoints.baseline_counts, keypoints.network_counts)
            ),
        )

    return written


def write_report(report: EvalReportModel, output_dir: Union[str, Path]) -> List[Path]:
    """report.json plus one CSV per table; contents depend only on the inputs, never on wall-clock time."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = [output_dir / REPORT_FILE]
    written[0].write_text(report.json(indent=2) + "\n")
    written.extend(_write_tables(report, output_dir))
    if report.mask is not None:
        written.extend(_write_tables(report.mask, output_dir, MASK_PREFIX))
    logger.info(f"Wrote {len(written)} report file(s) to {output_dir}")
    return written
