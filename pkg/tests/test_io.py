import numpy as np
import pytest

from splatfuse.errors import MissingAsset, ParseError
from splatfuse.io import (format_pose_line, load_scene, read_image, read_mask, read_ply,
                          read_poses, save_scene, write_image, write_ply)
from splatfuse.pointcloud import PointCloud
from splatfuse.scene import Camera, Frame


def _scene_dir(tmp_path, rng, stamps=(5.0, 3.0)):
    frames = []
    for i, s in enumerate(stamps):
        cam = Camera.look_at([0.3 * i, 0, -3], [0, 0, 0], fx=12, width=12, height=10)
        frames.append(Frame(cam, 0.0, rng.uniform(size=(10, 12, 3)),
                            rng.integers(0, 2, (10, 12)), name=f"{i:04d}.png", stamp=s))
    static = PointCloud(rng.uniform(-1, 1, (10, 3)), rng.uniform(0, 1, (10, 3)))
    dyn = [PointCloud(rng.uniform(-1, 1, (4, 3)), rng.uniform(0, 1, (4, 3)), i)
           for i in range(len(stamps))]
    save_scene(tmp_path, frames, static, dyn)
    return frames, static


def test_ply_binary_roundtrip(tmp_path, rng):
    c = PointCloud(rng.uniform(-5, 5, (25, 3)).astype(np.float32), rng.integers(0, 256, (25, 3)) / 255)
    write_ply(tmp_path / "a.ply", c)
    back = read_ply(tmp_path / "a.ply")
    assert np.array_equal(back.points, c.points) and np.allclose(back.colors, c.colors)


def test_ply_ascii(tmp_path):
    text = ("ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\n"
            "property float y\nproperty float z\nproperty uchar red\nproperty uchar green\n"
            "property uchar blue\nend_header\n0 0 1 255 0 0\n1 2 3 0 0 255\n")
    (tmp_path / "a.ply").write_text(text)
    c = read_ply(tmp_path / "a.ply")
    assert np.array_equal(c.points, [[0, 0, 1], [1, 2, 3]])
    assert np.array_equal(c.colors, [[1, 0, 0], [0, 0, 1]])


def test_ply_error_reports_line(tmp_path):
    text = ("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
            "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n0 0 1 255 0 0\n1 two 3 0 0 255\n")
    (tmp_path / "a.ply").write_text(text)
    with pytest.raises(ParseError) as err:
        read_ply(tmp_path / "a.ply")
    assert err.value.line == 12


def test_pose_line_roundtrip(tmp_path, rng):
    cam = Camera.look_at(rng.normal(size=3) - [0, 0, 4], [0, 0, 0], fx=30, width=40, height=30)
    (tmp_path / "poses.txt").write_text("# comment\n" + format_pose_line("a.png", 1.5, cam) + "\n")
    (name, stamp, intr, R, t, line), = read_poses(tmp_path / "poses.txt")
    assert (name, stamp, line) == ("a.png", 1.5, 2)
    assert np.array_equal(R, cam.R) and np.array_equal(t, cam.t)
    (tmp_path / "poses.txt").write_text("a.png 1 2 3\n")
    with pytest.raises(ParseError):
        read_poses(tmp_path / "poses.txt")


def test_image_and_mask_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (6, 7, 3)) / 255
    write_image(tmp_path / "x.png", img)
    assert np.allclose(read_image(tmp_path / "x.png"), img, atol=1e-12)
    m = rng.integers(0, 2, (6, 7))
    write_image(tmp_path / "m.png", m.astype(float))
    assert np.array_equal(read_mask(tmp_path / "m.png"), m)


def test_load_scene(tmp_path, rng):
    frames, _ = _scene_dir(tmp_path, rng)
    scene = load_scene(tmp_path)
    assert len(scene.frames) == 2 and len(scene.static_gaussians) == 10
    assert [f.t for f in scene.frames] == [0.0, 1.0]  # stamps {3, 5}, sorted
    assert [f.stamp for f in scene.frames] == [3.0, 5.0]
    assert scene.frames[0].name == "0001.png"
    assert np.array_equal(scene.frames[0].ref_mask, frames[1].ref_mask)


def test_missing_image(tmp_path, rng):
    _scene_dir(tmp_path, rng)
    (tmp_path / "images" / "0001.png").unlink()
    with pytest.raises(MissingAsset):
        load_scene(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(MissingAsset):
        load_scene(tmp_path / "nowhere")
