import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from flowdesc.dataset import FrameDataset
from flowdesc.descnet import DescriptorNet, descriptor_to_rgb
from flowdesc.evalharness.describers import BaselineDescriber, Describer, NetworkDescriber, OracleDescriber
from flowdesc.evalharness.protocols import (
    default_pair,
    eval_consecutive,
    eval_cross,
    eval_keypoints,
    eval_pixelwise_histogram,
)
from flowdesc.evalharness.report import write_report
from flowdesc.exceptions import ConfigError
from flowdesc.formats.images import write_png
from flowdesc.formats.models import EvalReportModel, ReportMetadataModel, ResultSectionsModel
from flowdesc.settings import EvalDomain, Settings, config_hash
from flowdesc.utils import file_digest

logger = logging.getLogger(__name__)

ALL_TESTS = ("1", "2", "3", "4")
VISUALIZATION_DIR = "visualizations"


def normalize_tests(tests: Sequence[str]) -> List[str]:
    selected = set()
    for test in tests:
        if test == "all":
            selected.update(ALL_TESTS)
        elif test in ALL_TESTS:
            selected.add(test)
        else:
            raise ConfigError(f"Unknown evaluation test {test!r}", [f"choose from {', '.join(ALL_TESTS)} or all"])
    return sorted(selected)


def make_describers(
    net: Optional[DescriptorNet], settings: Settings, include_oracle: bool = False
) -> List[Describer]:
    cache_frames = settings.eval.descriptor_cache_frames
    describers: List[Describer] = []
    if net is not None:
        describers.append(NetworkDescriber(net, cache_frames))
    describers.append(BaselineDescriber(settings.eval.baseline_patch_radius, cache_frames))
    if include_oracle:
        describers.append(OracleDescriber(cache_frames))
    return describers


def write_visualizations(dataset: FrameDataset, describer: Describer, settings: Settings, output_dir: Path) -> None:
    source, target = default_pair(dataset, settings)
    for key in (source, target):
        rgb = descriptor_to_rgb(describer.describe(dataset, key))
        write_png(output_dir / VISUALIZATION_DIR / f"{describer.name}_{key.name}.png", rgb)


def _with_domain(settings: Settings, domain: EvalDomain) -> Settings:
    return settings.copy(update={"eval": settings.eval.copy(update={"domain": domain})})


def _run_tests(
    dataset: FrameDataset,
    describers: List[Describer],
    settings: Settings,
    selected: Sequence[str],
    with_network: bool,
) -> ResultSectionsModel:
    sections = ResultSectionsModel()
    if "1" in selected:
        sections.consecutive = eval_consecutive(dataset, describers, settings)
    if "2" in selected:
        sections.cross = eval_cross(dataset, describers, settings)
    if "3" in selected:
        sections.pixelwise = eval_pixelwise_histogram(dataset, describers, default_pair(dataset, settings), settings)
    if "4" in selected:
        if not with_network:
            raise ConfigError("The keypoint test compares the network with the baseline", ["pass a checkpoint"])
        sections.keypoints = [
            eval_keypoints(dataset, describers[0], describers[1], default_pair(dataset, settings), settings)
        ]
    return sections


def run_evaluation(
    dataset: FrameDataset,
    settings: Settings,
    net: Optional[DescriptorNet] = None,
    checkpoint: Optional[Union[str, Path]] = None,
    tests: Optional[Sequence[str]] = None,
    output_dir: Optional[Union[str, Path]] = None,
    include_oracle: bool = False,
) -> EvalReportModel:
    """Run the selected tests against the network (when given), the baseline and optionally the oracle.

    With `eval.domain: both` the tests run twice over the same descriptor maps: the full-image results go to the
    top-level sections and the mask-restricted ones to `report.mask`.
    """
    selected = normalize_tests(tests or settings.eval.tests)
    describers = make_describers(net, settings, include_oracle)
    metadata = ReportMetadataModel(
        checkpoint_id=file_digest(checkpoint) if checkpoint is not None else None,
        dataset_id=dataset.dataset_id,
        describer=",".join(describer.name for describer in describers),
        domain=settings.eval.domain.value,
        seed=settings.seed,
        config_hash=config_hash(settings),
    )
    logger.info(f"Evaluating {metadata.describer} on {dataset.root} with test(s) {', '.join(selected)}")

    with_network = net is not None
    if settings.eval.domain == EvalDomain.BOTH:
        full = _run_tests(dataset, describers, _with_domain(settings, EvalDomain.FULL), selected, with_network)
        logger.info("Repeating the evaluation on the mask-restricted domain")
        mask = _run_tests(dataset, describers, _with_domain(settings, EvalDomain.MASK), selected, with_network)
        report = EvalReportModel(metadata=metadata, mask=mask, **dict(full))
    else:
        sections = _run_tests(dataset, describers, settings, selected, with_network)
        report = EvalReportModel(metadata=metadata, **dict(sections))

    if output_dir is not None:
        output_dir = Path(output_dir)
        write_report(report, output_dir)
        if settings.eval.write_visualizations and net is not None:
            write_visualizations(dataset, describers[0], settings, output_dir)
    return report
