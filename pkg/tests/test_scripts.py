import importlib.util
from pathlib import Path

import numpy as np
from PIL import Image

from endorender.data_io import load_dataset
from endorender.geometry import fit_scene_bounds, look_at, normalize_point, unproject_depth

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def load_script(name):
    spec = importlib.util.spec_from_file_location(name, SCRIPTS / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def fake_c3vd(root: Path, n=12, w=16, h=12):
    rng = np.random.default_rng(0)
    lines = []
    for k in range(n):
        Image.fromarray(rng.integers(0, 255, (h, w, 3), dtype=np.uint8)).save(root / f"{k:04d}_color.png")
        Image.fromarray(rng.integers(1000, 30000, (h, w)).astype(np.uint16)).save(root / f"{k:04d}_depth.tiff")
        pose = look_at(np.array([0.0, 0.0, -50.0 - k]), np.zeros(3))
        lines.append(",".join(f"{v:.17g}" for v in pose.matrix().T.ravel()))
    (root / "pose.txt").write_text("\n".join(lines) + "\n")
    return [look_at(np.array([0.0, 0.0, -50.0 - k]), np.zeros(3)) for k in range(n)]


def test_convert_c3vd_layout(tmp_path):
    src, out = tmp_path / "seq", tmp_path / "out"
    src.mkdir()
    poses = fake_c3vd(src)
    conv = load_script("convert_c3vd")
    assert conv.main([str(src), str(out), "--fx", "10", "--fy", "10", "--cx", "7.5", "--cy", "5.5"]) == 0
    ds = load_dataset(out)
    assert len(ds.frames) == 12 and [f.frame_id for f in ds.split("test")] == [8]
    raw = np.asarray(Image.open(src / "0003_depth.tiff")).astype(np.float64)
    assert np.allclose(ds.frames[3].depth, raw * 0.1 / 65535)
    assert np.allclose(ds.frames[3].pose.t, poses[3].t * 1e-3)
    assert np.allclose(ds.frames[3].pose.R, poses[3].R)
    # normalized training points land in the unit cube
    b = fit_scene_bounds(ds.split("train"), ds.intrinsics)
    for fr in ds.split("train"):
        u = normalize_point(unproject_depth(fr.depth, ds.intrinsics, fr.pose)[fr.depth > 0], b)
        assert u.min() >= 0 and u.max() <= 1


def test_convert_c3vd_pose_count_mismatch(tmp_path):
    src = tmp_path / "seq"
    src.mkdir()
    fake_c3vd(src, n=3)
    (src / "pose.txt").write_text("")
    assert load_script("convert_c3vd").main([str(src), str(tmp_path / "o"), "--fx", "1", "--fy", "1",
                                             "--cx", "0", "--cy", "0"]) == 1
