import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch

from flowdesc.dataset import FrameDataset
from flowdesc.descnet import (
    Checkpoint,
    DescriptorNet,
    contrastive_loss,
    frame_to_tensor,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from flowdesc.exceptions import (
    ConfigMismatchError,
    EmptyMaskError,
    FlowFileError,
    NegativeSamplingError,
    NoCorrespondenceError,
    TrainingError,
)
from flowdesc.flowlab.cache import FlowCache
from flowdesc.flowlab.correspondence import CorrespondenceMap, flow_to_correspondence
from flowdesc.flowlab.flow import FlowField, estimate_flow
from flowdesc.flowlab.sampling import FlipAxis, augment_flip, sample_matches
from flowdesc.formats.models import EpochRecordModel, SkipRecordModel, StepRecordModel
from flowdesc.frames import FrameKey, ImageFrame
from flowdesc.run_logging import JsonLinesHandler
from flowdesc.segment import ForegroundMask, motion_mask, warp_mask
from flowdesc.settings import EvalSplit, FlowBackend, MaskSource, NetworkConfig, OptimizerKind, Settings
from flowdesc.utils import derive_seed, make_rng

logger = logging.getLogger(__name__)
record_logger = logging.getLogger(f"{__name__}.records")

TRAIN_LOG_FILE = "train_log.jsonl"
LAST_CHECKPOINT = "last.dnc"
FLOW_CACHE_DIR = "flow_cache"
FLOW_DIR = "flow"


@dataclass
class TrainLog:
    steps: List[StepRecordModel] = field(default_factory=list)
    skips: List[SkipRecordModel] = field(default_factory=list)
    epochs: List[EpochRecordModel] = field(default_factory=list)

    @property
    def wall_time_s(self) -> float:
        return sum(epoch.wall_time_s for epoch in self.epochs)

    def epoch_means(self) -> List[float]:
        return [epoch.mean_total for epoch in self.epochs]


@dataclass
class PreparedPair:
    index: int
    source: FrameKey
    target: FrameKey
    frame_a: ImageFrame
    frame_b: ImageFrame
    mask_b: ForegroundMask
    correspondence: CorrespondenceMap

    @property
    def name(self) -> str:
        return f"{self.source.name}->{self.target.name}"


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.dnc"


def _network_signature(config: NetworkConfig) -> str:
    return json.dumps(json.loads(config.json(exclude={"pretrained_encoder"})), sort_keys=True)


class Trainer:
    """Owns the network, the optimizer and the prepared frame pairs of one training run."""

    def __init__(self, dataset: FrameDataset, settings: Settings, run_dir: Union[str, Path]) -> None:
        self.dataset = dataset
        self.settings = settings
        self.run_dir = Path(run_dir)
        self.checkpoint_dir = Path(settings.train.checkpoint_dir or self.run_dir / "checkpoints")
        self.epoch = 0
        self.step = 0

        height, width = dataset.frame_shape
        network = settings.network
        if (network.input_height, network.input_width) != (None, None) and (
            network.input_height != height or network.input_width != width
        ):
            raise ConfigMismatchError(
                f"Network expects {network.input_height}x{network.input_width} inputs, "
                f"dataset frames are {height}x{width}"
            )

        if settings.deterministic:
            torch.use_deterministic_algorithms(True)
        self.net: DescriptorNet = init_network(network, settings.seed)
        self.optimizer = self._make_optimizer()
        self.flow_cache = FlowCache(
            self.run_dir / FLOW_CACHE_DIR, settings.flow, dataset.content_digest, settings.flow.cache
        )
        self.pairs = dataset.consecutive_pairs(EvalSplit.TRAIN, settings.train.train_fraction)
        if not self.pairs:
            raise TrainingError("The training split holds no consecutive frame pairs")
        self._prepared: Optional[List[Union[PreparedPair, SkipRecordModel]]] = None

    def _make_optimizer(self) -> torch.optim.Optimizer:
        train = self.settings.train
        if train.optimizer == OptimizerKind.SGD:
            return torch.optim.SGD(
                self.net.parameters(), lr=train.learning_rate, momentum=train.momentum, weight_decay=train.weight_decay
            )
        return torch.optim.Adam(self.net.parameters(), lr=train.learning_rate, weight_decay=train.weight_decay)

    @property
    def sample_seed(self) -> int:
        sample_seed = self.settings.sample.seed
        return self.settings.seed if sample_seed is None else sample_seed

    def _flow(self, source: FrameKey, target: FrameKey) -> FlowField:
        settings = self.settings.flow
        frame_a, frame_b = self.dataset.frame(source), self.dataset.frame(target)
        if settings.backend == FlowBackend.GROUND_TRUTH:
            return estimate_flow(
                frame_a, frame_b, settings.backend, settings, ground_truth=self.dataset.ground_truth(source, target)
            )
        if settings.backend == FlowBackend.FILE:
            flow_dir = Path(settings.flow_dir) if settings.flow_dir else self.dataset.root / FLOW_DIR
            flow_path = flow_dir / f"{source.name}_{target.name}.flo"
            return estimate_flow(frame_a, frame_b, settings.backend, settings, flow_path=flow_path)

        masks = None
        if settings.apply_mask and self.settings.segment.source != MaskSource.MOTION:
            masks = (self.dataset.mask(source), self.dataset.mask(target))
        return self.flow_cache.get_or_compute(
            source, target, lambda: estimate_flow(frame_a, frame_b, settings.backend, settings, masks=masks)
        )

    def _backward_flow(self, source: FrameKey, target: FrameKey) -> Optional[FlowField]:
        if not self.settings.flow.fb_check or self.settings.flow.backend == FlowBackend.GROUND_TRUTH:
            return None
        try:
            return self._flow(target, source)
        except FlowFileError:
            logger.warning(f"No backward flow for {source.name}->{target.name}; forward-backward check disabled")
            return None

    def _masks(
        self, source: FrameKey, target: FrameKey, flow: FlowField, backward: Optional[FlowField]
    ) -> Tuple[ForegroundMask, ForegroundMask]:
        if self.settings.segment.source != MaskSource.MOTION:
            return self.dataset.mask(source), self.dataset.mask(target)
        threshold = self.settings.segment.motion_threshold_px
        mask_a = motion_mask(flow, threshold)
        if backward is not None:
            return mask_a, motion_mask(backward, threshold)
        logger.debug(f"No backward flow for {source.name}->{target.name}; warping the motion mask forward")
        return mask_a, warp_mask(mask_a, flow)

    def _prepare_pair(self, index: int) -> Union[PreparedPair, SkipRecordModel]:
        source, target = self.pairs[index]
        name = f"{source.name}->{target.name}"
        try:
            flow = self._flow(source, target)
            backward = self._backward_flow(source, target)
            mask_a, mask_b = self._masks(source, target, flow, backward)
            if mask_a.is_empty or mask_b.is_empty:
                raise EmptyMaskError(f"empty mask on {name}")
            corr = flow_to_correspondence(flow, mask_a, mask_b, backward, self.settings.flow.fb_tau)
            if corr.n_valid == 0:
                raise NoCorrespondenceError(f"no valid correspondences on {name}")
        except (EmptyMaskError, NoCorrespondenceError) as exc:
            return SkipRecordModel(epoch=-1, pair=name, reason=str(exc))
        return PreparedPair(
            index, source, target, self.dataset.frame(source), self.dataset.frame(target), mask_b, corr
        )

    def prepare(self) -> List[Union[PreparedPair, SkipRecordModel]]:
        """Flow, masks and correspondence maps for every training pair, computed once per run."""
        if self._prepared is None:
            workers = self.settings.effective_workers
            logger.info(f"Preparing {len(self.pairs)} training pairs with {workers} worker(s)")
            with ThreadPoolExecutor(max_workers=workers) as executor:
                self._prepared = list(executor.map(self._prepare_pair, range(len(self.pairs))))
        return self._prepared

    def _learning_rate(self, epoch: int) -> float:
        train = self.settings.train
        if not train.cosine_decay:
            return train.learning_rate
        return train.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / train.epochs))

    def epoch_order(self, epoch: int) -> List[int]:
        order = np.arange(len(self.pairs))
        if self.settings.train.shuffle:
            make_rng(self.settings.seed, epoch, 0x5F).shuffle(order)
        return order.tolist()

    def train_step(self, pair: PreparedPair, epoch: int) -> StepRecordModel:
        """Sample matches, optionally flip image B, and accumulate the loss gradient of one frame pair."""
        settings = self.settings
        pair_seed = derive_seed(self.sample_seed, epoch, pair.index)
        matches = sample_matches(
            pair.correspondence,
            pair.mask_b,
            settings.sample.n_matches,
            settings.sample.n_neg,
            pair_seed,
            settings.sample.exclusion_radius_px,
        )

        frame_b, flipped = pair.frame_b, None
        rng = make_rng(pair_seed, 1)
        if settings.augment.flip and rng.random() < settings.augment.flip_prob:
            axis = FlipAxis.HORIZONTAL if rng.random() < 0.5 else FlipAxis.VERTICAL
            frame_b, _, matches = augment_flip(frame_b, pair.mask_b, matches, axis)
            flipped = axis.value

        self.net.train()
        out = self.net(torch.cat([frame_to_tensor(pair.frame_a), frame_to_tensor(frame_b)]))
        f_a = out[0].permute(1, 2, 0)
        f_b = out[1].permute(1, 2, 0)
        terms = contrastive_loss(f_a, f_b, matches, settings.loss, settings.sample.bilinear_lookup)
        (terms.total / settings.train.batch).backward()

        self.step += 1
        return StepRecordModel(
            epoch=epoch,
            step=self.step,
            pair=pair.name,
            total=float(terms.total.item()),
            match=float(terms.match.item()),
            non_match=float(terms.non_match.item()),
            n_matches=matches.n_matches,
            flipped=flipped,
        )

    def run_epoch(self, epoch: int, log: TrainLog) -> EpochRecordModel:
        started = time.perf_counter()
        for group in self.optimizer.param_groups:
            group["lr"] = self._learning_rate(epoch)
        prepared = self.prepare()
        steps: List[StepRecordModel] = []
        skipped = 0
        pending = 0
        self.optimizer.zero_grad()
        for position in self.epoch_order(epoch):
            item = prepared[position]
            if isinstance(item, SkipRecordModel):
                skip = item.copy(update={"epoch": epoch})
            else:
                try:
                    record = self.train_step(item, epoch)
                except NegativeSamplingError as exc:
                    skip = SkipRecordModel(epoch=epoch, pair=item.name, reason=str(exc))
                else:
                    steps.append(record)
                    record_logger.info(record.pair, extra={"record": record})
                    if record.step % self.settings.train.log_every == 0:
                        logger.debug(f"epoch {epoch} step {record.step}: loss {record.total:.5f}")
                    pending += 1
                    if pending == self.settings.train.batch:
                        self.optimizer.step()
                        self.optimizer.zero_grad()
                        pending = 0
                    continue
            skipped += 1
            log.skips.append(skip)
            record_logger.info(skip.pair, extra={"record": skip})
            logger.warning(f"Skipping pair {skip.pair}: {skip.reason}")
        if pending:
            self.optimizer.step()
            self.optimizer.zero_grad()

        if not steps:
            raise TrainingError(f"Every training pair was skipped in epoch {epoch}")
        log.steps += steps
        summary = EpochRecordModel(
            epoch=epoch,
            steps=len(steps),
            skipped=skipped,
            mean_total=float(np.mean([s.total for s in steps])),
            mean_match=float(np.mean([s.match for s in steps])),
            mean_non_match=float(np.mean([s.non_match for s in steps])),
            wall_time_s=round(time.perf_counter() - started, 3),
        )
        log.epochs.append(summary)
        record_logger.info("epoch", extra={"record": summary})
        logger.info(f"Epoch {epoch}: {summary.steps} steps, {skipped} skipped, mean loss {summary.mean_total:.5f}")
        return summary

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        target = Path(path) if path else self.checkpoint_dir / LAST_CHECKPOINT
        return save_checkpoint(
            target,
            self.net,
            self.optimizer,
            step=self.step,
            cursor={"seed": self.settings.seed, "epoch": self.epoch},
            extra={"dataset_id": self.dataset.dataset_id},
        )

    def restore(self, checkpoint: Checkpoint) -> None:
        if _network_signature(checkpoint.config) != _network_signature(self.settings.network):
            raise ConfigMismatchError("Checkpoint network config differs from the configured network")
        if checkpoint.cursor.get("seed", self.settings.seed) != self.settings.seed:
            stored = checkpoint.cursor.get("seed")
            raise ConfigMismatchError(f"Checkpoint was trained with seed {stored}, not {self.settings.seed}")
        checkpoint.apply_to(self.net)
        if checkpoint.optimizer is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer)
        self.step = checkpoint.step
        self.epoch = int(checkpoint.cursor.get("epoch", 0))

    def fit(self, epochs: Optional[int] = None) -> Tuple[Path, TrainLog]:
        """Train until `epochs` epochs are complete in total, saving a checkpoint after each."""
        until = self.settings.train.epochs if epochs is None else epochs
        log = TrainLog()
        handler = JsonLinesHandler(self.run_dir / TRAIN_LOG_FILE, truncate=self.epoch == 0)
        record_logger.setLevel(logging.INFO)
        record_logger.propagate = False
        record_logger.addHandler(handler)
        try:
            while self.epoch < until:
                self.run_epoch(self.epoch, log)
                self.epoch += 1
                self.save(self.checkpoint_dir / checkpoint_name(self.epoch))
        finally:
            record_logger.removeHandler(handler)
            handler.close()
        return self.save(), log


def train(dataset: FrameDataset, settings: Settings, run_dir: Union[str, Path]) -> Tuple[Path, TrainLog]:
    trainer = Trainer(dataset, settings, run_dir)
    logger.info(f"Training on {len(trainer.pairs)} pairs for {settings.train.epochs} epoch(s)")
    return trainer.fit()


def resume(
    checkpoint: Union[str, Path], dataset: FrameDataset, settings: Settings, run_dir: Union[str, Path]
) -> Tuple[Path, TrainLog]:
    """Continue a run from its stored epoch up to `train.epochs` epochs in total."""
    trainer = Trainer(dataset, settings, run_dir)
    trainer.restore(load_checkpoint(checkpoint))
    logger.info(f"Resuming from epoch {trainer.epoch} (step {trainer.step}) towards {settings.train.epochs} epoch(s)")
    return trainer.fit()
