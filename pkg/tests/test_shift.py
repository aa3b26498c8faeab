import numpy as np
import pytest

from splatfuse.config import TrainConfig
from splatfuse.errors import RefinerFailure, UnknownRefiner
from splatfuse.scene import Camera
from splatfuse.shift import (BlurDegradeRefiner, IdentityRefiner, OracleRefiner, ShiftSchedule,
                             builtin_refiners, run_progressive, shift_pose)
from splatfuse.synthetic import street_world
from splatfuse.trainer import Trainer


def test_shift_pose_examples(rng):
    cam = Camera.look_at(rng.normal(size=3) - [0, 0, 3], [0, 0, 0], fx=10, width=9, height=9)
    assert shift_pose(cam, 0.0) == cam
    ident = Camera(10.0, 10.0, 4.0, 4.0, 9, 9)
    assert np.allclose(shift_pose(ident, 3.5).center, [3.5, 0, 0], atol=1e-15)
    back = shift_pose(shift_pose(cam, 0.7), -0.7)
    assert np.abs(back.t - cam.t).max() <= 1e-12 and np.array_equal(back.R, cam.R)
    moved = shift_pose(cam, 0.7).center - cam.center
    assert np.allclose(moved, 0.7 * cam.R[0])


def test_schedule_invariants():
    s = ShiftSchedule(0.5, 3, 10)
    assert s.offsets() == [0.5, 1.0, 1.5] and s.target_offset == 1.5
    for bad in ((0.0, 2), (-1.0, 2), (0.5, 0)):
        with pytest.raises(ValueError):
            ShiftSchedule(*bad)


def test_refiners(rng):
    img = rng.uniform(size=(20, 24, 3))
    cam = Camera(10.0, 10.0, 4.0, 4.0, 9, 9)
    assert np.array_equal(IdentityRefiner().refine(img, None, None, cam, 0.0), img)
    blurred = BlurDegradeRefiner(2.0).refine(img, None, None, cam, 0.0)
    assert abs(blurred.mean() - img.mean()) <= 1e-3 and blurred.std() < img.std()
    oracle = OracleRefiner()
    gt = rng.uniform(size=img.shape)
    oracle.register(cam, 0.25, gt)
    assert np.array_equal(oracle.refine(img, None, None, cam, 0.25), gt)
    with pytest.raises(RefinerFailure):
        oracle.refine(img, None, None, cam, 0.5)


def test_builtin_names():
    assert builtin_refiners("identity").name == "identity"
    assert builtin_refiners("blur-degrade", sigma=1).sigma == 1.0
    with pytest.raises(UnknownRefiner):
        builtin_refiners("diffusion")


@pytest.fixture(scope="module")
def world():
    return street_world(views=3, size=24)


def _trainer(world):
    scene = world.scene(rng=1)
    tr = Trainer(scene, TrainConfig(hash_levels=2, hash_table_size=2**10, decoder_hidden=[8, 8]))
    tr.train_joint_phase(5)
    return scene, tr


def test_progressive_liveness(world, tmp_path):
    scene, tr = _trainer(world)
    sched = ShiftSchedule(0.2, 2, 4)
    res = run_progressive(scene, None, None, sched, IdentityRefiner(), tr.config, tmp_path,
                          trainer=tr)
    assert len(res.stages) == 2
    assert [len(s.frames) for s in res.stages] == [3, 3]
    assert len(res.extra_frames) == 3 * 2 and len(tr.extra_frames) == 6
    assert res.checkpoint.iteration == 5 + 2 * 4
    for k in (1, 2):
        d = tmp_path / f"stage_{k:02d}"
        for sub in ("renders", "masks", "pseudo", "refined"):
            assert sorted(p.name for p in (d / sub).iterdir()) == ["0000.png", "0001.png",
                                                                    "0002.png"]
        assert (d / f"ckpt_{5 + 4 * k:06d}.bin").exists()
    # identity refinement: extra frames are the raw clipped renders
    f = res.stages[0].frames[0]
    assert f.camera == shift_pose(scene.frames[0].camera, 0.2)


def test_extra_frames_alternate(world):
    scene, tr = _trainer(world)
    run_progressive(scene, None, None, ShiftSchedule(0.2, 1, 6), IdentityRefiner(), tr.config,
                    trainer=tr)
    assert [h.extra for h in tr.history[-6:]] == [False, True] * 3


class _FailSecond:
    name, single_threaded = "fail", True

    def __init__(self):
        self.calls = 0

    def refine(self, degraded, pseudo, mask, pose, t):
        self.calls += 1
        if self.calls > 3:
            raise RuntimeError("model crashed")
        return degraded


def test_failure_keeps_last_checkpoint(world):
    scene, tr = _trainer(world)
    with pytest.raises(RefinerFailure) as err:
        run_progressive(scene, None, None, ShiftSchedule(0.2, 2, 3), _FailSecond(), tr.config,
                        trainer=tr)
    assert err.value.stage == 2
    assert err.value.checkpoint is not None and err.value.checkpoint.iteration == 8


def test_bad_refiner_output(world):
    class Bright:
        name, single_threaded = "bright", False

        def refine(self, degraded, *_):
            return degraded + 2.0

    scene, tr = _trainer(world)
    with pytest.raises(RefinerFailure):
        run_progressive(scene, None, None, ShiftSchedule(0.2, 1, 1), Bright(), tr.config,
                        trainer=tr)


def test_threaded_refinement_matches_serial(world):
    out = []
    for workers in (1, 3):
        scene, tr = _trainer(world)
        res = run_progressive(scene, None, None, ShiftSchedule(0.2, 1, 3),
                              BlurDegradeRefiner(1.0), tr.config, trainer=tr, workers=workers)
        out.append(res.checkpoint)
    assert out[0] == out[1]
