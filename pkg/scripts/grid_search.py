"""Train and evaluate once per point of a parameter grid.

The grid file maps dotted config keys to value lists, e.g.

    loss.margin: [0.25, 0.5, 1.0]
    sample.n_neg: [64, 128]

Each combination trains into <output>/<index>/ and runs the consecutive-pair test;
a summary.csv collects the mean false-positive percentile per combination.
"""
import argparse
import csv
import itertools
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from flowdesc.dataset import FrameDataset
from flowdesc.descnet import load_network
from flowdesc.evalharness.runner import run_evaluation
from flowdesc.run_logging import configure_logging
from flowdesc.settings import load_settings
from flowdesc.trainer import train

logger = logging.getLogger("grid_search")


def expand_grid(grid: Dict[str, List[Any]]) -> List[Dict[str, Any]]:
    keys = sorted(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[key] for key in keys))]


def run_grid(config: Optional[str], grid_path: str, output: Path) -> Path:
    grid = yaml.safe_load(Path(grid_path).read_text()) or {}
    combinations = expand_grid({key: value if isinstance(value, list) else [value] for key, value in grid.items()})
    rows = []
    for index, overrides in enumerate(combinations):
        run_dir = output / f"{index:03d}"
        settings = load_settings(config, overrides)
        logger.info(f"Grid point {index + 1}/{len(combinations)}: {overrides}")
        dataset = FrameDataset(settings.dataset_dir, settings.segment)
        checkpoint, _ = train(dataset, settings, run_dir)
        report = run_evaluation(dataset, settings, load_network(checkpoint)[0], checkpoint, ["1"], run_dir / "eval")
        network = next(result for result in report.consecutive if result.describer == "network")
        rows.append({"index": index, **overrides, "mean_percentile": network.mean, "std": network.std})

    summary = output / "summary.csv"
    output.mkdir(parents=True, exist_ok=True)
    with open(summary, "w", newline="") as stream:
        writer = csv.DictWriter(stream, fieldnames=list(rows[0]) if rows else ["index"])
        writer.writeheader()
        writer.writerows(rows)
    return summary


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="base experiment config")
    parser.add_argument("--grid", required=True, help="YAML/JSON mapping of dotted keys to value lists")
    parser.add_argument("--output", default="runs/grid")
    args = parser.parse_args(argv)
    configure_logging()
    print(run_grid(args.config, args.grid, Path(args.output)))


if __name__ == "__main__":
    main()
