from pathlib import Path
from typing import Tuple

import pytest

from flowdesc.dataset import FrameDataset
from flowdesc.settings import (
    EvalSettings,
    FlowSettings,
    MotionSettings,
    NetworkConfig,
    SampleSettings,
    Settings,
    SynthSettings,
    TrainConfig,
    load_settings,
)
from flowdesc.synthgen import generate_sequence
from flowdesc.trainer import train


@pytest.fixture(scope="session")
def small_settings() -> Settings:
    """64x64 clips of a textured object sliding one pixel right per frame, so every true match is integral."""
    return Settings(
        seed=3,
        synth=SynthSettings(
            height=64,
            width=64,
            n_frames=8,
            object_kind="hulk",
            backgrounds=["flat", "clutter"],
            motion=MotionSettings(mode="constant", rotation_deg_per_frame=0.0, translation_px_per_frame=[1.0, 0.0]),
        ),
        flow=FlowSettings(backend="ground-truth", fb_check=False),
        sample=SampleSettings(n_matches=200, n_neg=16),
        network=NetworkConfig(encoder_channels=[8, 16], encoder_blocks=[1, 1], decoder_stages=1),
        train=TrainConfig(epochs=2, learning_rate=1e-3),
        eval=EvalSettings(n_pairs=3, n_image_pairs=2, max_keypoints=30, histogram_bins=21),
    )


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory: pytest.TempPathFactory, small_settings: Settings) -> Path:
    root = tmp_path_factory.mktemp("synthetic")
    return generate_sequence(small_settings.synth, root, small_settings.seed)


@pytest.fixture
def dataset(synthetic_root: Path, small_settings: Settings) -> FrameDataset:
    return FrameDataset(synthetic_root, small_settings.segment)


@pytest.fixture(scope="session")
def desk_settings() -> Settings:
    return load_settings(Path(__file__).parents[1] / "configs" / "desk.json")


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory: pytest.TempPathFactory, desk_settings: Settings) -> Tuple[FrameDataset, Path]:
    """The desk dataset and the last checkpoint of a full desk training run, shared by the slow tests."""
    root = tmp_path_factory.mktemp("desk")
    data = generate_sequence(desk_settings.synth, root / "data", desk_settings.seed)
    dataset = FrameDataset(data, desk_settings.segment)
    last, _ = train(dataset, desk_settings, root / "run")
    return dataset, last
