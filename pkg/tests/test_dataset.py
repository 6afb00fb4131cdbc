import shutil
from pathlib import Path

import numpy as np
import pytest

from flowdesc.dataset import FrameDataset, parse_frame_name
from flowdesc.exceptions import EvaluationError
from flowdesc.formats.images import write_png
from flowdesc.frames import FrameKey
from flowdesc.settings import EvalSplit, MaskSource, SegmentSettings
from flowdesc.synthgen import ground_truth_map


@pytest.mark.parametrize(
    "stem, expected", (("c01_f0042", FrameKey(1, 42)), ("frame_0003", FrameKey(0, 7)), ("c1_f2", FrameKey(1, 2)))
)
def test_parse_frame_name(stem: str, expected: FrameKey) -> None:
    assert parse_frame_name(stem, 7) == expected


def test_dataset_index(dataset: FrameDataset) -> None:
    assert len(dataset) == 16
    assert dataset.clips == [0, 1]
    assert dataset.frame_shape == (64, 64)
    assert dataset.background(FrameKey(1, 0)) == "clutter"
    assert dataset.dataset_id == dataset.manifest.dataset_id  # type: ignore


def test_split_by_clip(dataset: FrameDataset) -> None:
    train = dataset.split(EvalSplit.TRAIN, 0.5)
    test = dataset.split(EvalSplit.TEST, 0.5)

    assert [key.index for key in train if key.clip == 0] == [0, 1, 2, 3]
    assert not set(train) & set(test)
    assert len(train) + len(test) == len(dataset)


def test_consecutive_pairs_stay_in_split(dataset: FrameDataset) -> None:
    pairs = dataset.consecutive_pairs(EvalSplit.TRAIN, 0.5)
    assert len(pairs) == 2 * 3
    assert all(b.index == a.index + 1 and a.clip == b.clip for a, b in pairs)


def test_stored_and_computed_ground_truth_agree(dataset: FrameDataset) -> None:
    source, target = FrameKey(0, 1), FrameKey(0, 2)
    stored = dataset.ground_truth(source, target)
    computed = ground_truth_map(
        dataset.homography(source), dataset.homography(target), dataset.mask(source), dataset.mask(target)
    )

    assert np.array_equal(stored.visible, computed.visible)
    assert np.array_equal(stored.mapping[stored.visible], computed.mapping[computed.visible])


def test_cross_clip_ground_truth(dataset: FrameDataset) -> None:
    within = dataset.ground_truth(FrameKey(0, 1), FrameKey(0, 2))
    across = dataset.ground_truth(FrameKey(0, 1), FrameKey(1, 2))

    # both clips share the object and its motion, only the background differs
    assert np.array_equal(within.visible, across.visible)
    assert np.array_equal(within.mapping[within.visible], across.mapping[across.visible])


def test_ground_truth_needs_motion(tmp_path: Path, synthetic_root: Path) -> None:
    shutil.copytree(synthetic_root / "frames", tmp_path / "frames")
    bare = FrameDataset(tmp_path)

    assert not bare.has_motion
    with pytest.raises(EvaluationError):
        bare.ground_truth(FrameKey(0, 0), FrameKey(0, 5))


def test_missing_mask_falls_back_to_full_frame(tmp_path: Path, synthetic_root: Path) -> None:
    shutil.copytree(synthetic_root / "frames", tmp_path / "frames")
    mask = FrameDataset(tmp_path).mask(FrameKey(0, 0))
    assert mask.data.all()


def test_file_mask_source(tmp_path: Path, synthetic_root: Path) -> None:
    plane = np.zeros((64, 64), dtype=np.uint8)
    plane[10:20, 10:20] = 255
    write_png(tmp_path / "c00_f0000.png", plane)
    segment = SegmentSettings(source=MaskSource.FILE, mask_dir=str(tmp_path))

    assert FrameDataset(synthetic_root, segment).mask(FrameKey(0, 0)).count == 100


def test_missing_frames_directory(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        FrameDataset(tmp_path)


def test_content_digest_follows_the_frames(tmp_path: Path, synthetic_root: Path, dataset: FrameDataset) -> None:
    shutil.copytree(synthetic_root / "frames", tmp_path / "copy" / "frames")
    assert FrameDataset(tmp_path / "copy").content_digest == dataset.content_digest

    shutil.copytree(synthetic_root / "frames", tmp_path / "edited" / "frames")
    last = sorted((tmp_path / "edited" / "frames").glob("*.png"))[-1]
    write_png(last, np.zeros((64, 64, 3), dtype=np.uint8))
    assert FrameDataset(tmp_path / "edited").content_digest != dataset.content_digest
