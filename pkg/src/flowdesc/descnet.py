"""Fully convolutional descriptor network and the pixelwise contrastive loss."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from flowdesc.exceptions import ConfigMismatchError, FormatError, GeometryError, NoCorrespondenceError
from flowdesc.flowlab.sampling import MatchSet, PixelCoord
from flowdesc.formats.binary import read_container, write_container
from flowdesc.frames import ImageFrame, check_frame, round_coords
from flowdesc.settings import LossAveraging, LossConfig, NetworkConfig, NormKind

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
DISTANCE_EPS = 1e-24
CHECKPOINT_FORMAT = "flowdesc-checkpoint"
ENCODER_PREFIXES = ("stem.", "stages.")


def _norm(kind: NormKind, channels: int) -> nn.Module:
    if kind == NormKind.BATCH:
        return nn.BatchNorm2d(channels)
    if kind == NormKind.GROUP:
        return nn.GroupNorm(math.gcd(8, channels), channels)
    return nn.Identity()


class BasicBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, norm: NormKind) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(norm, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.norm2 = _norm(norm, out_channels)
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False), _norm(norm, out_channels)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class DescriptorNet(nn.Module):
    """Residual encoder, transposed-convolution decoder with additive lateral skips, L2-normalized output."""

    def __init__(self, config: NetworkConfig) -> None:
        super().__init__()
        self.config = config
        channels = config.encoder_channels
        if not channels or len(channels) != len(config.encoder_blocks):
            raise GeometryError("encoder_channels and encoder_blocks must be non-empty and of equal length")
        strides = config.stage_strides or [1] + [2] * (len(channels) - 1)
        if len(strides) != len(channels) or any(s not in (1, 2) for s in strides):
            raise GeometryError(f"stage_strides must hold one stride (1 or 2) per stage, got {strides}")
        if config.stem_stride not in (1, 2, 4):
            raise GeometryError(f"stem_stride must be 1, 2 or 4, got {config.stem_stride}")

        stem: List[nn.Module] = [
            nn.Conv2d(3, channels[0], 3, stride=min(config.stem_stride, 2), padding=1, bias=False),
            _norm(config.norm, channels[0]),
            nn.ReLU(inplace=True),
        ]
        if config.stem_stride == 4:
            stem.append(nn.MaxPool2d(3, stride=2, padding=1))
        self.stem = nn.Sequential(*stem)

        # (stride, channels) of every encoder feature that can feed a lateral skip
        features: List[Tuple[int, int]] = [(config.stem_stride, channels[0])]
        stages = []
        total_stride = config.stem_stride
        in_channels = channels[0]
        for out_channels, n_blocks, stride in zip(channels, config.encoder_blocks, strides):
            blocks = [BasicBlock(in_channels, out_channels, stride, config.norm)]
            blocks += [BasicBlock(out_channels, out_channels, 1, config.norm) for _ in range(max(0, n_blocks - 1))]
            stages.append(nn.Sequential(*blocks))
            total_stride *= stride
            features.append((total_stride, out_channels))
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)
        self.total_stride = total_stride

        n_upsample = int(round(math.log2(total_stride)))
        if config.decoder_stages < n_upsample:
            raise GeometryError(
                f"decoder_stages={config.decoder_stages} cannot restore a total stride of {total_stride} "
                f"({n_upsample} upsampling stages needed)"
            )

        self._skip_sources: List[Optional[int]] = []
        decoder = []
        laterals = []
        current_stride = total_stride
        for stage in range(config.decoder_stages):
            if stage < n_upsample:
                current_stride //= 2
            matching = [i for i, (s, _) in enumerate(features) if s == current_stride]
            out_channels = features[matching[-1]][1] if matching else channels[0]
            if stage < n_upsample:
                layer: nn.Module = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1, bias=False)
            else:
                layer = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
            decoder.append(nn.Sequential(layer, _norm(config.norm, out_channels), nn.ReLU(inplace=True)))
            source = matching[-1] if matching and config.use_skip_connections and stage < n_upsample else None
            self._skip_sources.append(source)
            laterals.append(
                nn.Conv2d(features[source][1], out_channels, 1) if source is not None else nn.Identity()
            )
            in_channels = out_channels
        self.decoder = nn.ModuleList(decoder)
        self.laterals = nn.ModuleList(laterals)
        self.head = nn.Conv2d(in_channels, config.descriptor_dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        height, width = x.shape[-2:]
        if height % self.total_stride or width % self.total_stride:
            raise GeometryError(f"Input {height}x{width} is not divisible by the total stride {self.total_stride}")
        x = (x - 0.5) * 2.0
        out = self.stem(x)
        features = [out]
        for stage in self.stages:
            out = stage(out)
            features.append(out)
        for layer, lateral, source in zip(self.decoder, self.laterals, self._skip_sources):
            out = layer(out)
            if source is not None:
                out = out + lateral(features[source])
        out = self.head(out)
        return out / (out.norm(dim=1, keepdim=True) + NORM_EPS)


@dataclass
class DescriptorMap:
    data: np.ndarray
    frame_id: str = ""

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def dim(self) -> int:
        return int(self.data.shape[2])


class LossTerms(NamedTuple):
    total: torch.Tensor
    match: torch.Tensor
    non_match: torch.Tensor


def _initialize(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def init_network(config: NetworkConfig, seed: int = 0) -> DescriptorNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed if config.seed is not None else seed)
        net = DescriptorNet(config)
        net.apply(_initialize)
    if config.pretrained_encoder:
        load_encoder_weights(net, config.pretrained_encoder)
    return net


def frame_to_tensor(frame: ImageFrame) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(check_frame(frame), dtype=np.float32)).permute(2, 0, 1)[None]


def forward(net: DescriptorNet, frame: ImageFrame, frame_id: str = "") -> DescriptorMap:
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            out = net(frame_to_tensor(frame))
    finally:
        net.train(was_training)
    return DescriptorMap(out[0].permute(1, 2, 0).numpy().astype(np.float32), frame_id)


def _lookup(descriptors: DescriptorMap, coord: PixelCoord) -> np.ndarray:
    height, width = descriptors.shape
    x, y = int(round_coords(coord[0])), int(round_coords(coord[1]))
    if not (0 <= x < width and 0 <= y < height):
        raise GeometryError(f"Pixel {tuple(coord)} is outside a {height}x{width} descriptor map")
    return descriptors.data[y, x].astype(np.float64)


def descriptor_distance(f_a: DescriptorMap, u_a: PixelCoord, f_b: DescriptorMap, u_b: PixelCoord) -> float:
    return float(np.linalg.norm(_lookup(f_a, u_a) - _lookup(f_b, u_b)))


def _gather(descriptors: torch.Tensor, coords: torch.Tensor, bilinear: bool) -> torch.Tensor:
    """Descriptors (H x W x D) at (..., 2) pixel coordinates; nearest-pixel rounding unless bilinear."""
    height, width, dim = descriptors.shape
    flat = descriptors.reshape(-1, dim)
    xs, ys = coords[..., 0], coords[..., 1]
    if not bilinear:
        ix = torch.floor(xs + 0.5).long().clamp(0, width - 1)
        iy = torch.floor(ys + 0.5).long().clamp(0, height - 1)
        return flat[iy * width + ix]

    x0 = torch.floor(xs).clamp(0, width - 1)
    y0 = torch.floor(ys).clamp(0, height - 1)
    x1 = (x0 + 1).clamp(max=width - 1)
    y1 = (y0 + 1).clamp(max=height - 1)
    wx = (xs - x0).clamp(0, 1)[..., None].to(descriptors.dtype)
    wy = (ys - y0).clamp(0, 1)[..., None].to(descriptors.dtype)

    def at(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return flat[y.long() * width + x.long()]

    top = at(x0, y0) * (1 - wx) + at(x1, y0) * wx
    bottom = at(x0, y1) * (1 - wx) + at(x1, y1) * wx
    return top * (1 - wy) + bottom * wy


def contrastive_loss(
    f_a: torch.Tensor,
    f_b: torch.Tensor,
    matches: MatchSet,
    config: Optional[LossConfig] = None,
    bilinear: bool = False,
) -> LossTerms:
    """Squared distance over positives plus squared hinge over negatives; f_a and f_b are H x W x D."""
    config = config or LossConfig()
    if matches.n_matches == 0:
        raise NoCorrespondenceError("Cannot compute a loss over an empty match set")

    sources = torch.as_tensor(matches.sources, dtype=torch.float64)
    targets = torch.as_tensor(matches.targets, dtype=torch.float64)
    negatives = torch.as_tensor(matches.negatives, dtype=torch.float64)

    desc_a = _gather(f_a, sources, bilinear)
    desc_b = _gather(f_b, targets, bilinear)
    match_sq = (desc_a - desc_b).pow(2).sum(dim=-1)

    desc_neg = _gather(f_b, negatives, bilinear)
    neg_sq = (desc_a[:, None, :] - desc_neg).pow(2).sum(dim=-1)
    hinge = F.relu(config.margin - torch.sqrt(neg_sq.clamp(min=DISTANCE_EPS))).pow(2)

    averaging = LossAveraging(config.averaging)
    if averaging == LossAveraging.JOINT:
        count = match_sq.numel() + hinge.numel()
        match_term = match_sq.sum() / count
        non_match_term = hinge.sum() / count
    elif averaging == LossAveraging.ACTIVE:
        match_term = match_sq.mean()
        n_active = int((hinge > 0).sum().item())
        non_match_term = hinge.sum() / max(1, n_active)
    else:
        match_term = match_sq.mean()
        non_match_term = hinge.mean()
    return LossTerms(match_term + non_match_term, match_term, non_match_term)


def descriptor_to_rgb(descriptors: DescriptorMap) -> np.ndarray:
    """Min-max scaled RGB rendering; D > 3 is projected on its first three principal components."""
    data = descriptors.data.reshape(-1, descriptors.dim).astype(np.float64)
    if descriptors.dim > 3:
        centered = data - data.mean(axis=0)
        _, _, components = np.linalg.svd(centered, full_matrices=False)
        data = centered @ components[:3].T
    elif descriptors.dim == 2:
        data = np.concatenate([data, np.full((data.shape[0], 1), 0.5)], axis=1)
    low, high = data.min(axis=0), data.max(axis=0)
    scaled = (data - low) / np.where(high - low > 0, high - low, 1.0)
    return scaled.reshape(descriptors.shape + (3,)).astype(np.float32)


@dataclass
class Checkpoint:
    config: NetworkConfig
    parameters: Dict[str, np.ndarray]
    step: int = 0
    cursor: Dict[str, Any] = field(default_factory=dict)
    optimizer: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def apply_to(self, net: DescriptorNet) -> None:
        state = net.state_dict()
        missing = sorted(set(state) - set(self.parameters))
        if missing:
            raise ConfigMismatchError(f"Checkpoint lacks parameters: {missing[:5]}")
        for name, tensor in state.items():
            blob = self.parameters[name]
            if tuple(blob.shape) != tuple(tensor.shape):
                raise ConfigMismatchError(f"Parameter {name} has shape {blob.shape}, network expects {tensor.shape}")
            state[name] = torch.from_numpy(blob.copy()).to(tensor.dtype)
        net.load_state_dict(state)


def _split_optimizer_state(state: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    blobs: Dict[str, np.ndarray] = {}
    scalars: Dict[str, Dict[str, Any]] = {}
    for index, entries in state["state"].items():
        for name, value in entries.items():
            if torch.is_tensor(value):
                blobs[f"optim.{index}.{name}"] = value.detach().cpu().numpy()
            else:
                scalars.setdefault(str(index), {})[name] = value
    return {"param_groups": state["param_groups"], "scalars": scalars}, blobs


def _join_optimizer_state(meta: Dict[str, Any], blobs: Dict[str, np.ndarray]) -> Dict[str, Any]:
    state: Dict[int, Dict[str, Any]] = {}
    for name, blob in blobs.items():
        _, index, key = name.split(".", 2)
        state.setdefault(int(index), {})[key] = torch.from_numpy(blob.copy())
    for index, entries in meta.get("scalars", {}).items():
        state.setdefault(int(index), {}).update(entries)
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(
    path: Union[str, Path],
    net: DescriptorNet,
    optimizer: Optional[torch.optim.Optimizer] = None,
    step: int = 0,
    cursor: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    blobs: Dict[str, np.ndarray] = {}
    for name, tensor in net.state_dict().items():
        blobs[f"param.{name}"] = tensor.detach().cpu().numpy()
    header: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "config": json.loads(net.config.json()),
        "step": step,
        "cursor": cursor or {},
        "extra": extra or {},
        "optimizer": None,
    }
    if optimizer is not None:
        meta, optimizer_blobs = _split_optimizer_state(optimizer.state_dict())
        header["optimizer"] = meta
        blobs.update(optimizer_blobs)
    write_container(path, header, blobs)
    return Path(path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    header, blobs = read_container(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path} is not a descriptor-network checkpoint")
    parameters = {name[len("param.") :]: blob for name, blob in blobs.items() if name.startswith("param.")}
    optimizer = None
    if header.get("optimizer") is not None:
        optimizer_blobs = {name: blob for name, blob in blobs.items() if name.startswith("optim.")}
        optimizer = _join_optimizer_state(header["optimizer"], optimizer_blobs)
    return Checkpoint(
        config=NetworkConfig.parse_obj(header["config"]),
        parameters=parameters,
        step=int(header.get("step", 0)),
        cursor=header.get("cursor", {}),
        optimizer=optimizer,
        extra=header.get("extra", {}),
    )


def load_network(path: Union[str, Path]) -> Tuple[DescriptorNet, Checkpoint]:
    checkpoint = load_checkpoint(path)
    config = checkpoint.config.copy(update={"pretrained_encoder": None})
    net = DescriptorNet(config)
    checkpoint.apply_to(net)
    return net, checkpoint


def load_encoder_weights(net: DescriptorNet, path: Union[str, Path]) -> List[str]:
    """Copy stem and encoder-stage weights from a checkpoint; decoder and head stay as initialized."""
    checkpoint = load_checkpoint(path)
    state = net.state_dict()
    loaded = []
    for name, blob in checkpoint.parameters.items():
        if not name.startswith(ENCODER_PREFIXES) or name not in state:
            continue
        if tuple(blob.shape) != tuple(state[name].shape):
            raise ConfigMismatchError(f"Encoder weight {name} has shape {blob.shape}, expected {state[name].shape}")
        state[name] = torch.from_numpy(blob.copy()).to(state[name].dtype)
        loaded.append(name)
    net.load_state_dict(state)
    logger.info(f"Loaded {len(loaded)} encoder tensors from {path}")
    return loaded
