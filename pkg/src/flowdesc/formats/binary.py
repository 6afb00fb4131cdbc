"""Binary containers: ground-truth maps (GTM1), flow fields (FLO1), checkpoints (DNC1).

All integers are little-endian, all real payloads are row-major float32.
"""
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from flowdesc.exceptions import FlowFileError, FormatError

GTM_MAGIC = b"GTM1"
FLO_MAGIC = b"FLO1"
DNC_MAGIC = b"DNC1"
DNC_VERSION = 1
MIDDLEBURY_TAG = 202021.25

GTM_HEADER = struct.Struct("<4sIII")
FLO_HEADER = struct.Struct("<4sII")
DNC_HEADER = struct.Struct("<4sIQ")

GTM_FLAG_VISIBILITY = 1

PathLike = Union[str, Path]


def write_gtm(path: PathLike, mapping: np.ndarray, visible: np.ndarray, flags: int = GTM_FLAG_VISIBILITY) -> None:
    height, width = visible.shape
    if mapping.shape != (height, width, 2):
        raise FormatError(f"Mapping shape {mapping.shape} does not match visibility {visible.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as stream:
        stream.write(GTM_HEADER.pack(GTM_MAGIC, height, width, flags))
        stream.write(np.ascontiguousarray(mapping, dtype="<f4").tobytes())
        stream.write(np.ascontiguousarray(visible, dtype=np.uint8).tobytes())


def read_gtm(path: PathLike) -> Tuple[np.ndarray, np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < GTM_HEADER.size:
        raise FormatError(f"{path}: truncated ground-truth header")
    magic, height, width, flags = GTM_HEADER.unpack_from(raw)
    if magic != GTM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {GTM_MAGIC!r}")
    n_map = height * width * 2 * 4
    expected = GTM_HEADER.size + n_map + height * width
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    mapping = np.frombuffer(raw, dtype="<f4", count=height * width * 2, offset=GTM_HEADER.size)
    visible = np.frombuffer(raw, dtype=np.uint8, count=height * width, offset=GTM_HEADER.size + n_map)
    return mapping.reshape(height, width, 2).astype(np.float32), visible.reshape(height, width) > 0, flags


def write_flo(path: PathLike, flow: np.ndarray) -> None:
    height, width, channels = flow.shape
    if channels != 2:
        raise FormatError(f"Flow must have 2 channels, got {channels}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as stream:
        stream.write(FLO_HEADER.pack(FLO_MAGIC, height, width))
        stream.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo(path: PathLike) -> np.ndarray:
    if not Path(path).exists():
        raise FlowFileError(f"Flow file not found: {path}")
    raw = Path(path).read_bytes()
    if len(raw) < FLO_HEADER.size:
        raise FormatError(f"{path}: truncated flow header")
    magic, height, width = FLO_HEADER.unpack_from(raw)
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC!r}")
    expected = FLO_HEADER.size + height * width * 2 * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    flow = np.frombuffer(raw, dtype="<f4", count=height * width * 2, offset=FLO_HEADER.size)
    return flow.reshape(height, width, 2).astype(np.float64)


def read_middlebury(path: PathLike) -> np.ndarray:
    """Read the `.flo` interchange layout written by most learned-flow tools."""
    if not Path(path).exists():
        raise FlowFileError(f"Flow file not found: {path}")
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated .flo header")
    (tag,) = struct.unpack_from("<f", raw, 0)
    if tag != MIDDLEBURY_TAG:
        raise FormatError(f"{path}: not a .flo file (tag {tag})")
    width, height = struct.unpack_from("<ii", raw, 4)
    expected = 12 + width * height * 2 * 4
    if width <= 0 or height <= 0 or len(raw) != expected:
        raise FormatError(f"{path}: inconsistent .flo size ({width}x{height}, {len(raw)} bytes)")
    flow = np.frombuffer(raw, dtype="<f4", count=width * height * 2, offset=12)
    return flow.reshape(height, width, 2).astype(np.float64)


def convert_middlebury(source: PathLike, target: PathLike) -> Tuple[int, int]:
    flow = read_middlebury(source)
    write_flo(target, flow)
    return flow.shape[0], flow.shape[1]


def write_container(path: PathLike, header: Mapping[str, Any], blobs: Mapping[str, np.ndarray]) -> None:
    """Write a DNC1 container: magic, version, JSON header length, JSON header, float32 blobs."""
    entries = []
    payloads = []
    offset = 0
    for name, array in blobs.items():
        data = np.ascontiguousarray(array, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": data.nbytes})
        payloads.append(data.tobytes())
        offset += data.nbytes

    full_header = dict(header)
    full_header["blobs"] = entries
    encoded = json.dumps(full_header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    tmp_path = Path(str(path) + ".tmp")
    with open(tmp_path, "wb") as stream:
        stream.write(DNC_HEADER.pack(DNC_MAGIC, DNC_VERSION, len(encoded)))
        stream.write(encoded)
        for payload in payloads:
            stream.write(payload)
    tmp_path.replace(path)


def read_container(path: PathLike) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    raw = Path(path).read_bytes()
    if len(raw) < DNC_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, header_len = DNC_HEADER.unpack_from(raw)
    if magic != DNC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DNC_MAGIC!r}")
    if version != DNC_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = DNC_HEADER.size
    header = json.loads(raw[start : start + header_len].decode())
    data_start = start + header_len
    blobs: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header.get("blobs", []):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        array = np.frombuffer(raw, dtype="<f4", count=count, offset=data_start + entry["offset"])
        blobs[entry["name"]] = array.reshape(entry["shape"]).astype(np.float32)
    return header, blobs
