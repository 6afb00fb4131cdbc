import filecmp
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from flowdesc.exceptions import DegenerateTransformError, ObjectOutOfFrameError
from flowdesc.formats.binary import read_gtm
from flowdesc.segment import ForegroundMask, load_mask
from flowdesc.settings import BackgroundKind, MotionSettings, ObjectKind, Settings, SynthSettings
from flowdesc.synthgen import (
    Homography,
    TexturedObject,
    compose_homography,
    generate_sequence,
    ground_truth_map,
    invert_homography,
    make_background,
    make_motion_script,
    make_object,
    render_frame,
    warp_points,
)
from flowdesc.utils import make_rng


def _square_object(size: int = 10) -> TexturedObject:
    texture = np.zeros((size, size, 3), dtype=np.float32)
    texture[..., 0] = np.linspace(0.1, 0.9, size)[None, :]
    texture[..., 1] = np.linspace(0.1, 0.9, size)[:, None]
    return TexturedObject(texture, np.ones((size, size), dtype=np.float32))


def test_identity_homography_is_neutral() -> None:
    points = np.array([[0.0, 0.0], [3.5, 7.25], [63.0, 10.0]])
    assert np.array_equal(warp_points(Homography.identity(), points), points)


def test_singular_homography_rejected() -> None:
    with pytest.raises(DegenerateTransformError):
        Homography([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])


def test_homography_is_normalized() -> None:
    homography = Homography(np.diag([2.0, 2.0, 2.0]))
    assert homography == Homography.identity()


def test_inverse_round_trip() -> None:
    homography = compose_homography(12.0, 1.1, (3.0, -2.0), (1e-4, 0.0), frame_size=(64, 64))
    points = np.array([[10.0, 20.0], [40.0, 33.0]])
    back = warp_points(invert_homography(homography), warp_points(homography, points))
    assert np.allclose(back, points, atol=1e-9)


def test_compose_rotates_about_center() -> None:
    homography = compose_homography(90.0, 1.0, frame_size=(64, 64))
    assert np.allclose(warp_points(homography, np.array([32.0, 32.0])), [32.0, 32.0])
    assert np.allclose(warp_points(homography, np.array([42.0, 32.0])), [32.0, 42.0])



def test_compose_uses_the_center_of_a_wide_frame() -> None:
    homography = compose_homography(30.0, 1.2, (0.0, 0.0), (0.0, 0.0), frame_size=(48, 80))
    assert np.allclose(warp_points(homography, np.array([40.0, 24.0])), [40.0, 24.0])
    assert not np.allclose(warp_points(homography, np.array([0.0, 0.0])), [0.0, 0.0])

    with pytest.raises(TypeError):
        compose_homography(30.0, 1.2)  # type: ignore[call-arg]


def test_compose_rejects_non_positive_scale() -> None:
    with pytest.raises(ValueError):
        compose_homography(0.0, 0.0, frame_size=(8, 8))


def test_render_identity_reproduces_texture() -> None:
    obj = _square_object()
    background = np.full((16, 16, 3), 0.5, dtype=np.float32)
    frame, mask = render_frame(obj, background, Homography.identity(), 1.0)

    assert np.allclose(frame[:10, :10], obj.texture)
    assert np.allclose(frame[12:, 12:], 0.5)
    assert mask.count == 100


def test_render_out_of_frame() -> None:
    background = np.zeros((16, 16, 3), dtype=np.float32)
    far = Homography([[1.0, 0.0, 500.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ObjectOutOfFrameError):
        render_frame(_square_object(), background, far, 1.0)


def test_translation_ground_truth() -> None:
    mask = np.zeros((16, 16), dtype=bool)
    mask[2:6, 2:6] = True
    source = Homography.identity()
    target = Homography([[1.0, 0.0, 3.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    gt = ground_truth_map(source, target, ForegroundMask(mask), ForegroundMask(np.roll(mask, 3, axis=1)))

    assert np.array_equal(gt.mapping[4, 4], [7.0, 4.0])
    assert np.isnan(gt.mapping[0, 0]).all()
    assert gt.visible.sum() == 16


def test_ground_truth_marks_occluded_targets_invisible() -> None:
    mask = np.zeros((16, 16), dtype=bool)
    mask[2:6, 2:6] = True
    shift = Homography([[1.0, 0.0, 3.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    gt = ground_truth_map(Homography.identity(), shift, ForegroundMask(mask), ForegroundMask(mask))
    # only the overlap of the shifted square with the unshifted target mask stays visible
    assert gt.visible.sum() == 4


def test_ground_truth_out_of_bounds_invisible() -> None:
    mask = np.zeros((8, 8), dtype=bool)
    mask[:, 6:] = True
    shift = Homography([[1.0, 0.0, 4.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    gt = ground_truth_map(Homography.identity(), shift, ForegroundMask(mask))
    assert not gt.visible.any()


@pytest.mark.parametrize("kind", list(ObjectKind))
def test_make_object(kind: ObjectKind) -> None:
    obj = make_object(kind, 32, make_rng(0))
    assert obj.texture.shape[:2] == obj.alpha.shape
    assert (obj.alpha > 0).any()
    assert 0.0 <= obj.texture.min() and obj.texture.max() <= 1.0


@pytest.mark.parametrize("kind", list(BackgroundKind))
def test_make_background(kind: BackgroundKind) -> None:
    background = make_background(kind, 24, 32, make_rng(1))
    assert background.shape == (24, 32, 3)
    assert background.dtype == np.float32


def test_constant_motion_script() -> None:
    motion = MotionSettings(mode="constant", rotation_deg_per_frame=0.0, translation_px_per_frame=[2.0, 1.0])
    script = make_motion_script(motion, 4, (64, 64), Homography.identity(), make_rng(0))

    assert len(script) == 4
    assert np.allclose(script.homographies[3].matrix[:2, 2], [6.0, 3.0])
    assert script.gains == [1.0] * 4


def test_random_walk_stays_bounded() -> None:
    motion = MotionSettings(max_translation_px=5.0, translation_limit=0.1)
    script = make_motion_script(motion, 50, (64, 64), Homography.identity(), make_rng(2))

    for homography in script.homographies:
        centre = warp_points(homography, np.array([32.0, 32.0]))
        assert np.all(np.abs(centre - 32.0) < 0.1 * 64 * 1.2 + 8.0)
    assert all(motion.gain_min <= gain <= motion.gain_max for gain in script.gains)


def test_generate_sequence_layout(synthetic_root: Path, small_settings: Settings) -> None:
    for sub in ("frames", "masks", "gt"):
        assert (synthetic_root / sub).is_dir()
    n_frames = small_settings.synth.n_frames
    assert len(list((synthetic_root / "frames").glob("*.png"))) == 2 * n_frames
    assert len(list((synthetic_root / "gt").glob("*.gtm"))) == 2 * (n_frames - 1)
    manifest = json.loads((synthetic_root / "dataset.json").read_text())
    assert [clip["background"] for clip in manifest["clips"]] == ["flat", "clutter"]


def test_generated_ground_truth_matches_translation(synthetic_root: Path) -> None:
    mapping, visible, _ = read_gtm(synthetic_root / "gt" / "c00_f0002_c00_f0003.gtm")
    ys, xs = np.nonzero(visible)

    assert visible.any()
    assert np.array_equal(mapping[ys, xs, 0], xs + 1.0)
    assert np.array_equal(mapping[ys, xs, 1], ys.astype(np.float32))


def test_generate_sequence_is_deterministic(tmp_path: Path) -> None:
    config = SynthSettings(height=32, width=32, n_frames=3, backgrounds=["clutter"])
    first = generate_sequence(config, tmp_path / "a", seed=7)
    second = generate_sequence(config, tmp_path / "b", seed=7, workers=3)

    comparison = filecmp.dircmp(first / "frames", second / "frames")
    assert not comparison.diff_files and not comparison.left_only
    assert (first / "dataset.json").read_text() == (second / "dataset.json").read_text()
    assert (first / "gt" / "c00_f0000_c00_f0001.gtm").read_bytes() == (
        second / "gt" / "c00_f0000_c00_f0001.gtm"
    ).read_bytes()


def _full_mask(size: int = 64) -> ForegroundMask:
    return ForegroundMask(np.ones((size, size), dtype=bool))


def _lookup(mapping: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear lookup of a dense mapping at real-valued (x, y) points; exact for affine motion."""
    coords = [points[:, 1], points[:, 0]]
    return np.stack([ndimage.map_coordinates(mapping[..., c], coords, order=1) for c in range(2)], axis=-1)


POSES = (
    compose_homography(10.0, 1.05, (3.0, -2.0), frame_size=(64, 64)),
    compose_homography(-5.0, 0.97, (-1.0, 4.0), frame_size=(64, 64)),
    compose_homography(20.0, 1.0, (2.0, 2.0), frame_size=(64, 64)),
)


def test_ground_truth_composes_across_three_frames() -> None:
    pose_s, pose_t, pose_v = POSES
    st = ground_truth_map(pose_s, pose_t, _full_mask())
    tv = ground_truth_map(pose_t, pose_v, _full_mask())
    sv = ground_truth_map(pose_s, pose_v, _full_mask())

    ys, xs = np.nonzero(st.visible & sv.visible)
    through_t = st.mapping[ys, xs]
    inside = ((through_t >= 0) & (through_t <= 63)).all(axis=1)
    assert inside.sum() > 1000

    composed = _lookup(tv.mapping, through_t[inside])
    assert np.abs(composed - sv.mapping[ys[inside], xs[inside]]).max() < 1e-5


def test_ground_truth_inverse_returns_the_start_pixel() -> None:
    pose_s, pose_t, _ = POSES
    st = ground_truth_map(pose_s, pose_t, _full_mask())
    ts = ground_truth_map(pose_t, pose_s, _full_mask())

    ys, xs = np.nonzero(st.visible)
    targets = st.mapping[ys, xs]
    inside = ((targets >= 0) & (targets <= 63)).all(axis=1)
    back = _lookup(ts.mapping, targets[inside])
    assert np.abs(back - np.stack([xs[inside], ys[inside]], axis=-1)).max() < 1e-5


def test_rotation_ground_truth_equals_the_rotation_difference() -> None:
    start = compose_homography(10.0, 1.0, frame_size=(64, 64))
    gt = ground_truth_map(start, compose_homography(25.0, 1.0, frame_size=(64, 64)), _full_mask())
    ys, xs = np.nonzero(gt.visible)
    direct = warp_points(compose_homography(15.0, 1.0, frame_size=(64, 64)), np.stack([xs, ys], axis=-1))
    assert np.abs(gt.mapping[ys, xs] - direct).max() < 1e-6


def test_mask_area_is_conserved_under_rigid_motion() -> None:
    obj = make_object(ObjectKind.HULK, 48, make_rng(4))
    background = make_background(BackgroundKind.FLAT, 96, 96, make_rng(5))
    placement = Homography([[1.0, 0.0, 24.0], [0.0, 1.0, 24.0], [0.0, 0.0, 1.0]])
    motion = MotionSettings(max_scale_step=0.0, translation_limit=0.1)
    script = make_motion_script(motion, 12, (96, 96), placement, make_rng(6))

    counts = [render_frame(obj, background, pose, 1.0)[1].count for pose in script.homographies]
    changes = [abs(b - a) / a for a, b in zip(counts, counts[1:])]
    assert max(changes) < 0.02


def _principal_angle(mask: np.ndarray) -> float:
    ys, xs = np.nonzero(mask)
    cov = np.cov(np.stack([xs, ys]).astype(np.float64))
    return float(np.degrees(0.5 * np.arctan2(2.0 * cov[0, 1], cov[0, 0] - cov[1, 1])))


def test_constant_rotation_turns_the_object(tmp_path: Path) -> None:
    motion = MotionSettings(mode="constant", rotation_deg_per_frame=2.0, translation_px_per_frame=[0.0, 0.0])
    config = SynthSettings(height=96, width=96, n_frames=50, backgrounds=["flat"], motion=motion)
    root = generate_sequence(config, tmp_path, seed=1)

    masks = [load_mask(root / "masks" / f"c00_f{index:04d}.png", (96, 96)).data for index in (0, 25)]
    turned = (_principal_angle(masks[1]) - _principal_angle(masks[0]) + 90.0) % 180.0 - 90.0
    assert turned == pytest.approx(50.0, abs=1.0)
