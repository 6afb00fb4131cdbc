import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from flowdesc import __version__
from flowdesc.dataset import FrameDataset
from flowdesc.descnet import load_network
from flowdesc.evalharness.describers import BaselineDescriber, Describer, NetworkDescriber, OracleDescriber
from flowdesc.evalharness.protocols import square_patch, track_points
from flowdesc.evalharness.runner import run_evaluation
from flowdesc.exceptions import ConfigError, FlowdescError
from flowdesc.flowlab.flow import estimate_flow, flow_to_rgb
from flowdesc.formats.binary import convert_middlebury, write_flo
from flowdesc.formats.images import write_png
from flowdesc.frames import FrameKey
from flowdesc.run_logging import configure_logging
from flowdesc.settings import EvalDomain, FlowBackend, Settings, load_settings
from flowdesc.synthgen import generate_sequence
from flowdesc.trainer import FLOW_DIR, resume, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
SCHEMA_HINT = (
    "Config files are JSON or YAML mappings with the sections seed, dataset_dir, output_dir, workers, deterministic, "
    "synth, segment, flow, sample, augment, network, loss, train, eval and track; unknown keys are rejected."
)


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"Override {pair!r} is not of the form section.key=value")
        overrides[key.strip()] = value
    return overrides


def _settings(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> Settings:
    overrides = _parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    overrides.update(extra or {})
    return load_settings(args.config, overrides)


def _dataset(args: argparse.Namespace, settings: Settings) -> FrameDataset:
    return FrameDataset(getattr(args, "dataset", None) or settings.dataset_dir, settings.segment)


def cmd_gen(args: argparse.Namespace) -> str:
    settings = _settings(args)
    output = Path(args.output or settings.dataset_dir)
    generate_sequence(settings.synth, output, settings.seed, settings.effective_workers)
    return f"Dataset written to {output}"


def cmd_flow(args: argparse.Namespace) -> str:
    if args.convert:
        source, target = args.convert
        height, width = convert_middlebury(source, target)
        return f"Converted {height}x{width} flow {source} -> {target}"

    settings = _settings(args)
    if settings.flow.backend == FlowBackend.FILE:
        raise ConfigError("The flow command computes flow; choose the classical or ground-truth backend")
    dataset = _dataset(args, settings)
    output = Path(args.output) if args.output else dataset.root / FLOW_DIR
    pairs = dataset.consecutive_pairs()
    if args.backward:
        pairs += [(target, source) for source, target in pairs]
    for source, target in pairs:
        ground_truth = None
        if settings.flow.backend == FlowBackend.GROUND_TRUTH:
            ground_truth = dataset.ground_truth(source, target)
        masks = (dataset.mask(source), dataset.mask(target)) if settings.flow.apply_mask else None
        flow = estimate_flow(
            dataset.frame(source),
            dataset.frame(target),
            settings.flow.backend,
            settings.flow,
            ground_truth=ground_truth,
            masks=masks,
        )
        write_flo(output / f"{source.name}_{target.name}.flo", flow.data)
        if args.visualize:
            write_png(output / "rgb" / f"{source.name}_{target.name}.png", flow_to_rgb(flow))
    return f"Wrote {len(pairs)} flow field(s) to {output}"


def cmd_train(args: argparse.Namespace) -> str:
    extra = {"train.epochs": args.epochs} if args.epochs is not None else {}
    settings = _settings(args, extra)
    dataset = _dataset(args, settings)
    run_dir = Path(args.output or settings.output_dir)
    if args.resume:
        last, log = resume(args.resume, dataset, settings, run_dir)
    else:
        last, log = train(dataset, settings, run_dir)
    means = log.epoch_means()
    final = f", final mean loss {means[-1]:.4f}" if means else ""
    return f"Trained {len(log.epochs)} epoch(s){final}; checkpoint {last}"


def cmd_eval(args: argparse.Namespace) -> str:
    extra: Dict[str, Any] = {}
    if args.domain:
        extra["eval.domain"] = args.domain
    if args.pixel_samples is not None:
        extra["eval.pixel_samples"] = args.pixel_samples
    settings = _settings(args, extra)
    dataset = _dataset(args, settings)
    net = load_network(args.checkpoint)[0] if args.checkpoint else None
    output = Path(args.output or Path(settings.output_dir) / "eval")
    report = run_evaluation(dataset, settings, net, args.checkpoint, args.test, output, args.oracle)
    summary = [f"{r.describer} {r.mean:.2f}" for r in report.consecutive]
    return f"Report written to {output}" + (f" (test 1 mean percentile: {', '.join(summary)})" if summary else "")


def _read_points(path: str) -> np.ndarray:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"Unable to read points file {path}: {exc}")
    if isinstance(data, dict) and "patch" in data:
        return square_patch(data["patch"], int(data.get("side", 5)))
    try:
        points = np.array(data, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError(f"Points file {path} must hold a list of [x, y] pairs or a {{patch: [x, y]}} mapping")
    if points.ndim != 2 or points.shape[1] != 2 or not len(points) or not np.isfinite(points).all():
        raise ConfigError(f"Points file {path} must hold a non-empty list of [x, y] pairs")
    if (points != np.round(points)).any():
        raise ConfigError(f"Points in {path} must be integer pixel coordinates")
    return points.astype(np.int64)


def cmd_track(args: argparse.Namespace) -> str:
    settings = _settings(args)
    dataset = _dataset(args, settings)
    points = _read_points(args.points) if args.points else square_patch(args.patch, settings.track.patch_side)
    height, width = dataset.frame_shape
    if (points < 0).any() or (points[:, 0] >= width).any() or (points[:, 1] >= height).any():
        raise ConfigError(f"Seed points must lie inside the {height}x{width} frames")

    describer: Describer
    if args.describer == "network":
        if not args.checkpoint:
            raise ConfigError("Tracking with the network needs --checkpoint")
        describer = NetworkDescriber(load_network(args.checkpoint)[0], settings.eval.descriptor_cache_frames)
    elif args.describer == "oracle":
        describer = OracleDescriber(settings.eval.descriptor_cache_frames)
    else:
        describer = BaselineDescriber(settings.eval.baseline_patch_radius, settings.eval.descriptor_cache_frames)

    track = settings.track
    reference = FrameKey(track.clip, track.reference_frame)
    if reference not in dataset.keys:
        raise ConfigError(f"Reference frame {reference.name} is not in {dataset.root}")
    output = Path(args.output or Path(settings.output_dir) / "track")
    result = track_points(dataset, describer, points, reference, track.n_frames, track.mask_restricted, output)
    return f"Tracked {result.n_points} point(s) over {len(result.frames)} frame(s); overlays in {output}"


def _point(raw: str) -> List[int]:
    try:
        x, y = (int(part) for part in raw.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y integers, got {raw!r}")
    return [x, y]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML experiment config")
    common.add_argument("--seed", type=int, help="global seed override")
    common.add_argument("--workers", type=int, help="worker threads (pinned to 1 in deterministic mode)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override, repeatable")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="flowdesc", description="Dense descriptors learned from video flow")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[common], help="render a synthetic dataset")
    gen.add_argument("--output", help="dataset directory (default: dataset_dir)")
    gen.set_defaults(handler=cmd_gen)

    flow = commands.add_parser("flow", parents=[common], help="precompute flow fields or convert flow files")
    flow.add_argument("--dataset", help="dataset directory (default: dataset_dir)")
    flow.add_argument("--output", help="flow directory (default: <dataset>/flow)")
    flow.add_argument("--backward", action="store_true", help="also write backward flow")
    flow.add_argument("--visualize", action="store_true", help="write color-wheel PNGs next to the flow files")
    flow.add_argument("--convert", nargs=2, metavar=("SRC", "DST"), help="convert a Middlebury .flo file to FLO1")
    flow.set_defaults(handler=cmd_flow)

    train_cmd = commands.add_parser("train", parents=[common], help="train the descriptor network")
    train_cmd.add_argument("--dataset", help="dataset directory (default: dataset_dir)")
    train_cmd.add_argument("--output", help="run directory (default: output_dir)")
    train_cmd.add_argument("--epochs", type=int, help="total number of epochs")
    train_cmd.add_argument("--resume", help="checkpoint to continue from")
    train_cmd.set_defaults(handler=cmd_train)

    eval_cmd = commands.add_parser("eval", parents=[common], help="run the evaluation tests")
    eval_cmd.add_argument("--dataset", help="dataset directory (default: dataset_dir)")
    eval_cmd.add_argument("--checkpoint", help="network checkpoint; without it only the baseline is evaluated")
    eval_cmd.add_argument("--test", action="append", choices=["1", "2", "3", "4", "all"], help="repeatable")
    eval_cmd.add_argument("--domain", choices=[domain.value for domain in EvalDomain])
    eval_cmd.add_argument("--pixel-samples", type=int, help="query pixels per image pair")
    eval_cmd.add_argument("--oracle", action="store_true", help="also evaluate the ground-truth oracle describer")
    eval_cmd.add_argument("--output", help="report directory (default: <output_dir>/eval)")
    eval_cmd.set_defaults(handler=cmd_eval)

    track = commands.add_parser("track", parents=[common], help="track points through a clip")
    track.add_argument("--dataset", help="dataset directory (default: dataset_dir)")
    track.add_argument("--checkpoint", help="network checkpoint")
    track.add_argument("--describer", default="network", choices=["network", "baseline", "oracle"])
    seeds = track.add_mutually_exclusive_group(required=True)
    seeds.add_argument("--points", help="JSON/YAML list of [x, y] pixels, or {patch: [x, y], side: 5}")
    seeds.add_argument("--patch", type=_point, metavar="X,Y", help="seed a square patch centred on X,Y")
    track.add_argument("--output", help="overlay directory (default: <output_dir>/track)")
    track.set_defaults(handler=cmd_track)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        summary = args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(SCHEMA_HINT, file=sys.stderr)
        return EXIT_USAGE
    except (FlowdescError, OSError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(summary)
    return EXIT_OK
