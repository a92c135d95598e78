import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from endorender.data_io import (AnalyticSceneSpec, AugmentationSpec, Dataset, FrameRecord, export_augmented,
                                generate_analytic_scene, load_dataset, perturb_pose, read_depth_png,
                                save_dataset, split_frames, write_depth_png)
from endorender.errors import DatasetError
from endorender.geometry import Intrinsics, Pose
from endorender.lighting import SpotlightParams
from endorender.model import ConstantScene
from endorender.renderer import render_image

from conftest import small_spec


def frames_with_ids(ids):
    return [FrameRecord(np.zeros((2, 2, 3), np.uint8), np.ones((2, 2)), Pose.identity(), i) for i in ids]


# ---------------------------------------------------------------- split


@pytest.mark.parametrize("n, test_ids", [(18, [8, 17]), (9, [8]), (27, [8, 17, 26])])
def test_split_examples(n, test_ids):
    fr = split_frames(frames_with_ids(range(n)))
    assert [f.frame_id for f in fr if f.split == "test"] == test_ids
    assert sum(f.split == "train" for f in fr) == n - len(test_ids)


def test_split_small_warns(caplog):
    with caplog.at_level(logging.WARNING):
        fr = split_frames(frames_with_ids(range(5)))
    assert all(f.split == "train" for f in fr)
    assert "only 5 frames" in caplog.text


@settings(max_examples=50)
@given(ids=st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=60, unique=True))
def test_split_is_deterministic_partition(ids):
    a = split_frames(frames_with_ids(ids))
    b = split_frames(frames_with_ids(list(reversed(ids))))
    assert [(f.frame_id, f.split) for f in a] == [(f.frame_id, f.split) for f in b]
    assert sorted(f.frame_id for f in a) == sorted(ids)
    assert all(f.split in ("train", "test") for f in a)
    assert sum(f.split == "test" for f in a) == len(ids) // 9


# ---------------------------------------------------------------- depth PNGs and loading


def test_depth_scale_rule(tmp_path):
    raw = np.array([[65535, 0], [1, 1000]], dtype=np.uint16)
    Image.fromarray(raw).save(tmp_path / "d.png")
    d = read_depth_png(tmp_path / "d.png", 2.5e-5)
    assert d[0, 0] == pytest.approx(65535 * 2.5e-5) and d[0, 1] == 0.0


def test_depth_overflow(tmp_path):
    with pytest.raises(DatasetError):
        write_depth_png(tmp_path / "d.png", np.full((2, 2), 7.0), 1e-4)


@pytest.fixture(scope="module")
def saved(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    ds = generate_analytic_scene(small_spec(), root)
    return ds, root


def test_round_trip(saved):
    ds, root = saved
    back = load_dataset(root)
    assert back.intrinsics == ds.intrinsics and len(back.frames) == len(ds.frames)
    for a, b in zip(ds.frames, back.frames):
        assert a.frame_id == b.frame_id and a.split == b.split
        assert np.array_equal(a.image, b.image)
        assert np.abs(a.depth - b.depth).max() <= ds.depth_scale
        assert np.abs(a.pose.matrix() - b.pose.matrix()).max() <= 1e-6
    assert back.truth == json.loads(json.dumps(ds.truth))


def test_load_accepts_manifest_path(saved):
    _, root = saved
    assert len(load_dataset(root / "manifest.json").frames) == 10


def copy_dataset(saved, tmp_path):
    ds, _ = saved
    save_dataset(ds, tmp_path)
    return json.loads((tmp_path / "manifest.json").read_text())


def test_load_empty_manifest(saved, tmp_path):
    meta = copy_dataset(saved, tmp_path)
    meta["frames"] = []
    (tmp_path / "manifest.json").write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="no frames"):
        load_dataset(tmp_path)


def test_load_missing_file_names_frame(saved, tmp_path):
    copy_dataset(saved, tmp_path)
    (tmp_path / "depth" / "0003.png").unlink()
    with pytest.raises(DatasetError, match="frame 3"):
        load_dataset(tmp_path)


def test_load_bad_rotation_names_frame(saved, tmp_path):
    copy_dataset(saved, tmp_path)
    T = np.eye(4)
    T[0, 0] = 1.01
    np.savetxt(tmp_path / "poses" / "0005.txt", T)
    with pytest.raises(DatasetError, match="frame 5"):
        load_dataset(tmp_path)


def test_load_dimension_mismatch(saved, tmp_path):
    copy_dataset(saved, tmp_path)
    Image.fromarray(np.zeros((5, 5, 3), np.uint8)).save(tmp_path / "images" / "0002.png")
    with pytest.raises(DatasetError, match="frame 2"):
        load_dataset(tmp_path)


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_load_assigns_split_when_absent(saved, tmp_path):
    meta = copy_dataset(saved, tmp_path)
    for e in meta["frames"]:
        e.pop("split")
    (tmp_path / "manifest.json").write_text(json.dumps(meta))
    ds = load_dataset(tmp_path)
    assert [f.frame_id for f in ds.split("test")] == [8]


# ---------------------------------------------------------------- analytic fixtures


def test_plane_fronto_parallel_constant_depth():
    spec = AnalyticSceneSpec(kind="plane", n_views=1, width=24, height=24, focal=30.0, distance=0.1,
                             base_color=(0.5, 0.5, 0.5), depth_scale=1e-5)
    ds = generate_analytic_scene(spec)
    fr = ds.frames[0]
    assert np.allclose(fr.depth, 0.1, atol=1e-5)
    img = fr.image[fr.depth > 0].astype(int)
    assert np.all(img[:, 0] == img[:, 1]) and np.all(img[:, 1] == img[:, 2])


def test_sphere_nearest_at_center():
    ds = generate_analytic_scene(small_spec(n_views=2))
    K = ds.intrinsics
    for fr in ds.frames:
        d = np.where(fr.depth > 0, fr.depth, np.inf)
        j, i = np.unravel_index(np.argmin(d), d.shape)
        assert abs(i - K.cx) <= 1 and abs(j - K.cy) <= 1


def test_fixture_images_use_truth_renderer():
    spec = small_spec(n_views=2)
    ds = generate_analytic_scene(spec)
    truth = ConstantScene(spec.base_color, spec.roughness, spec.metallic, spec.light)
    for fr in ds.frames:
        assert np.array_equal(render_image(fr.pose, fr.depth, ds.intrinsics, truth).image, fr.image)


# ---------------------------------------------------------------- augmentation


def truth_scene(ds):
    s = ds.truth["scene"]
    return ConstantScene(tuple(s["base_color"]), s["roughness"], s["metallic"], SpotlightParams(**s["light"]))


def test_augmentation_spec_validation():
    with pytest.raises(ValueError):
        AugmentationSpec(albedo_scale=(1.2, 0.8))
    with pytest.raises(ValueError):
        AugmentationSpec(samples_per_frame=-1)


def test_augmentation_spec_from_json(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"samples_per_frame": 3, "L0_scale": [0.5, 0.5]}))
    spec = AugmentationSpec.from_json(tmp_path / "a.json")
    assert spec.samples_per_frame == 3 and spec.L0_scale == (0.5, 0.5)


def test_perturb_pose_stays_valid():
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert perturb_pose(Pose.identity(), AugmentationSpec(rotation_deg_std=20.0), rng).is_valid(1e-9)


IDENTITY = dict(rotation_deg_std=0.0, translation_std=0.0, albedo_scale=(1.0, 1.0), L0_scale=(1.0, 1.0),
                exclude_training_poses=False)


def test_identity_augmentation_reproduces_renders(saved, tmp_path):
    ds, _ = saved
    scene = truth_scene(ds)
    rep = export_augmented(scene, ds, AugmentationSpec(samples_per_frame=1, **IDENTITY), tmp_path,
                           np.random.default_rng(0))
    assert rep.written == len(ds.frames) and rep.skipped_sparse == rep.skipped_excluded == 0
    out = load_dataset(tmp_path)
    for a, b in zip(ds.frames, out.frames):
        assert np.array_equal(render_image(a.pose, a.depth, ds.intrinsics, scene).image, b.image)
        assert np.abs(a.depth - b.depth).max() <= ds.depth_scale


def test_L0_half_halves_radiance(saved, tmp_path):
    ds, _ = saved
    scene = truth_scene(ds)
    kw = dict(IDENTITY, rotation_deg_std=2.0, translation_std=0.01, samples_per_frame=2, save_radiance=True)
    export_augmented(scene, ds, AugmentationSpec(**kw), tmp_path / "a", np.random.default_rng(5))
    kw["L0_scale"] = (0.5, 0.5)
    export_augmented(scene, ds, AugmentationSpec(**kw), tmp_path / "b", np.random.default_rng(5))
    files = sorted((tmp_path / "a" / "radiance").glob("*.npy"))
    assert files
    for f in files:
        a, b = np.load(f), np.load(tmp_path / "b" / "radiance" / f.name)
        assert np.abs(b - 0.5 * a).max() < 1e-9


def test_exclusion_skips_training_poses(saved, tmp_path):
    ds, _ = saved
    spec = AugmentationSpec(**dict(IDENTITY, exclude_training_poses=True, samples_per_frame=2))
    rep = export_augmented(truth_scene(ds), ds, spec, tmp_path, np.random.default_rng(0))
    n_train = len(ds.split("train"))
    assert rep.skipped_excluded == 2 * n_train
    assert rep.written == 2 * (len(ds.frames) - n_train)
    train_poses = [f.pose for f in ds.split("train")]
    for fr in load_dataset(tmp_path).frames:
        assert not any(fr.pose.allclose(p, 1e-9) for p in train_poses)


def test_sparse_splats_skipped(saved, tmp_path):
    ds, _ = saved
    spec = AugmentationSpec(rotation_deg_std=60.0, translation_std=0.0, samples_per_frame=3,
                            min_valid_fraction=0.99, exclude_training_poses=False)
    rep = export_augmented(truth_scene(ds), ds, spec, tmp_path, np.random.default_rng(1))
    assert rep.skipped_sparse > 0
    assert rep.written + rep.skipped_sparse == 3 * len(ds.frames)
    meta = json.loads((tmp_path / "manifest.json").read_text())
    assert meta["skipped"]["sparse"] == rep.skipped_sparse


@pytest.mark.slow
def test_export_count_matches_frames_times_samples(tmp_path):
    """765 base frames with 24 samples each give the ~18k sample export size."""
    K = Intrinsics(4.0, 4.0, 1.5, 1.5, 4, 4)
    img = np.zeros((4, 4, 3), np.uint8)
    frames = [FrameRecord(img, np.full((4, 4), 0.05), Pose(np.eye(3), np.array([0.0, 0.0, 1e-4 * k])), k)
              for k in range(765)]
    split_frames(frames)
    ds = Dataset(frames, K)
    spec = AugmentationSpec(rotation_deg_std=0.5, translation_std=1e-4, samples_per_frame=24,
                            splat_neighbors=0, min_valid_fraction=0.0)
    rep = export_augmented(ConstantScene(), ds, spec, tmp_path, np.random.default_rng(0))
    assert rep.written + rep.skipped_sparse + rep.skipped_excluded == 765 * 24 == 18360
    assert rep.written == 18360
