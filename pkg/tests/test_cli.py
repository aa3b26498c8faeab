import json

import pytest

from splatfuse.cli import RunManifest, main
from splatfuse.io import read_image, save_scene
from splatfuse.synthetic import moving_world

TINY = ["--set", "hash_levels=2", "--set", "hash_table_size=1024", "--set",
        "decoder_hidden=[8, 8]", "--set", "joint_iterations=6", "--set", "mask_iterations=3"]


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    w = moving_world(views=3, size=24)
    static, dyn = w.clouds()
    save_scene(root, w.frames(), static, dyn)
    return root


@pytest.fixture(scope="module")
def trained(scene_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--scene", str(scene_dir), "--out", str(out), *TINY]) == 0
    return out


@pytest.mark.parametrize("cmd", ["project", "train", "render", "eval", "shift", "selftest"])
def test_help_exits_zero(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_two():
    for argv in (["render", "--bogus"], [], ["frobnicate"]):
        with pytest.raises(SystemExit) as e:
            main(argv)
        assert e.value.code == 2


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    assert "6/6 suites passed" in capsys.readouterr().out


def test_train_outputs(trained):
    names = {p.name for p in trained.iterdir()}
    assert {"ckpt_000009.bin", "metrics.csv", "config.toml", "manifest.json"} <= names
    rows = (trained / "metrics.csv").read_text().splitlines()
    assert rows[0] == "iteration,l1,ssim,psnr_train" and len(rows) == 7
    m = RunManifest.from_json((trained / "manifest.json").read_text())
    assert m.command == "train" and m.config["hash_levels"] == 2 and len(m.input_hash) == 64


def test_rerun_is_byte_identical(scene_dir, trained, tmp_path):
    assert main(["train", "--scene", str(scene_dir), "--out", str(tmp_path), *TINY]) == 0
    for name in ("ckpt_000009.bin", "metrics.csv", "config.toml"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_render_and_eval(scene_dir, trained, tmp_path):
    prefix = tmp_path / "r" / "f1"
    assert main(["render", "--scene", str(scene_dir), "--checkpoint",
                 str(trained / "ckpt_000009.bin"), "--frame", "1", "--out", str(prefix)]) == 0
    for suffix in ("_color.png", "_mask_value.png", "_mask.png", "_manifest.json"):
        assert (tmp_path / "r" / ("f1" + suffix)).exists()
    assert read_image(tmp_path / "r" / "f1_color.png").shape == (24, 24, 3)
    report = tmp_path / "rep.json"
    img = scene_dir / "images"
    assert main(["eval", "--pred", str(img), "--gt", str(img), "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["mean"]["psnr"] == "inf" and data["mean"]["ssim"] == pytest.approx(1.0)


def test_project(scene_dir, tmp_path):
    out = tmp_path / "p.png"
    assert main(["fuse-project", "--scene", str(scene_dir), "--frame", "0", "--shift-meters",
                 "0.3", "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "p_coverage.png").exists()
    assert read_image(out).sum() > 0


def test_shift_and_errors(scene_dir, trained, tmp_path, capsys):
    ck = str(trained / "ckpt_000009.bin")
    base = ["shift", "--checkpoint", ck, "--scene", str(scene_dir), "--step-meters", "0.2",
            "--stages", "1", "--out", str(tmp_path / "s"), *TINY, "--set", "stage_iterations=2"]
    assert main(base) == 0
    assert (tmp_path / "s" / "stage_01" / "refined" / "0002.png").exists()
    assert main(base[:-2] + ["--refiner", "nope"]) == 1
    missing = list(base)
    missing[2] = str(tmp_path / "none.bin")
    assert main(missing) == 1
    assert "error" in capsys.readouterr().err


def test_manifest_roundtrip():
    m = RunManifest("train", ["a", "b"], {"seed": 1}, 1, "ab", "t0", "t1", ["x"])
    assert RunManifest.from_json(m.to_json()) == m
