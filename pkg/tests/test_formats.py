import struct
from pathlib import Path

import numpy as np
import pytest

from flowdesc.exceptions import FlowFileError, FormatError
from flowdesc.formats.binary import (
    GTM_HEADER,
    MIDDLEBURY_TAG,
    convert_middlebury,
    read_container,
    read_flo,
    read_gtm,
    write_container,
    write_flo,
    write_gtm,
)
from flowdesc.formats.images import read_frame, read_plane, to_uint8, write_png
from flowdesc.formats.models import EvalReportModel, ReportMetadataModel


def test_gtm_layout(tmp_path: Path) -> None:
    mapping = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
    visible = np.array([[True, False, True], [False, True, False]])
    write_gtm(tmp_path / "pair.gtm", mapping, visible)
    raw = (tmp_path / "pair.gtm").read_bytes()

    assert raw[:4] == b"GTM1"
    assert GTM_HEADER.unpack_from(raw)[1:] == (2, 3, 1)
    assert len(raw) == GTM_HEADER.size + 2 * 3 * 2 * 4 + 2 * 3
    loaded, loaded_visible, flags = read_gtm(tmp_path / "pair.gtm")
    assert np.array_equal(loaded, mapping)
    assert np.array_equal(loaded_visible, visible)
    assert flags == 1


def test_gtm_rejects_wrong_magic(tmp_path: Path) -> None:
    (tmp_path / "bad.gtm").write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(FormatError):
        read_gtm(tmp_path / "bad.gtm")


def test_flo_truncated_payload(tmp_path: Path) -> None:
    write_flo(tmp_path / "flow.flo", np.ones((4, 5, 2)))
    raw = (tmp_path / "flow.flo").read_bytes()
    (tmp_path / "short.flo").write_bytes(raw[:-4])

    assert read_flo(tmp_path / "flow.flo").shape == (4, 5, 2)
    with pytest.raises(FormatError):
        read_flo(tmp_path / "short.flo")


def test_missing_flow_file(tmp_path: Path) -> None:
    with pytest.raises(FlowFileError):
        read_flo(tmp_path / "absent.flo")


def test_convert_middlebury(tmp_path: Path) -> None:
    flow = np.stack([np.full((3, 4), 1.5), np.full((3, 4), -2.0)], axis=-1).astype("<f4")
    with open(tmp_path / "in.flo", "wb") as stream:
        stream.write(struct.pack("<fii", MIDDLEBURY_TAG, 4, 3))
        stream.write(flow.tobytes())

    assert convert_middlebury(tmp_path / "in.flo", tmp_path / "out.flo") == (3, 4)
    assert np.array_equal(read_flo(tmp_path / "out.flo"), flow.astype(np.float64))


def test_middlebury_rejects_other_tags(tmp_path: Path) -> None:
    (tmp_path / "in.flo").write_bytes(struct.pack("<fii", 1.0, 1, 1) + bytes(8))
    with pytest.raises(FormatError):
        convert_middlebury(tmp_path / "in.flo", tmp_path / "out.flo")


def test_container_keeps_header_and_blob_order(tmp_path: Path) -> None:
    blobs = {"b": np.ones((2, 2)), "a": np.arange(3, dtype=np.float32)}
    write_container(tmp_path / "net.dnc", {"format": "test", "step": 4}, blobs)
    header, loaded = read_container(tmp_path / "net.dnc")

    assert header["step"] == 4
    assert list(loaded) == ["b", "a"]
    assert np.array_equal(loaded["a"], [0.0, 1.0, 2.0])
    assert not (tmp_path / "net.dnc.tmp").exists()


def test_container_version_check(tmp_path: Path) -> None:
    write_container(tmp_path / "net.dnc", {}, {})
    raw = bytearray((tmp_path / "net.dnc").read_bytes())
    raw[4] = 9
    (tmp_path / "net.dnc").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_container(tmp_path / "net.dnc")


def test_png_frame_round_trip_is_quantized(tmp_path: Path) -> None:
    frame = np.zeros((4, 4, 3), dtype=np.float32)
    frame[..., 0] = 1.0
    frame[0, 0] = [0.5, 0.25, 0.0]
    write_png(tmp_path / "frame.png", frame)
    loaded = read_frame(tmp_path / "frame.png")

    assert loaded.shape == (4, 4, 3)
    assert np.allclose(loaded, to_uint8(frame) / 255.0)


def test_read_plane_rejects_color(tmp_path: Path) -> None:
    write_png(tmp_path / "color.png", np.zeros((2, 2, 3), dtype=np.float32))
    with pytest.raises(FormatError):
        read_plane(tmp_path / "color.png")


def test_report_model_defaults() -> None:
    metadata = ReportMetadataModel(dataset_id="d", describer="baseline", domain="full", seed=0, config_hash="h")
    report = EvalReportModel(metadata=metadata)

    assert report.consecutive == [] and report.keypoints == []
    assert EvalReportModel.parse_raw(report.json()) == report
