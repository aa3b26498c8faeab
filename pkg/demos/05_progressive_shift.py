"""Extrapolating sideways: progressive shifting with identity vs oracle refinement."""

import numpy as np

from splatfuse import ShiftSchedule, TrainConfig, Trainer, builtin_refiners, run_progressive
from splatfuse.losses import psnr
from splatfuse.shift import shift_pose
from splatfuse.synthetic import street_world

world = street_world()
schedule = ShiftSchedule(lateral_step=0.5, num_stages=2, stage_iterations=500)


def base():
    scene = world.scene(rng=1)
    tr = Trainer(scene, TrainConfig(seed=0))
    tr.train_joint_phase(2000)
    return scene, tr


def at_target(tr, scene):
    vals = []
    for f in scene.frames:
        cam = shift_pose(f.camera, schedule.target_offset)
        vals.append(psnr(np.clip(tr.render(cam, f.t).color, 0, 1), world.render(cam, f.t)))
    return np.mean(vals)


scene, tr = base()
print(f"base model at +{schedule.target_offset}m: {at_target(tr, scene):.2f} dB")

for name, kwargs in [("identity", {}), ("oracle", {"source": world.render})]:
    scene, tr = base()
    res = run_progressive(scene, None, None, schedule, builtin_refiners(name, **kwargs),
                          tr.config, out_dir=f"demo_out/shift_{name}", trainer=tr)
    print(f"{name:8s} -> {at_target(tr, scene):.2f} dB, {len(res.extra_frames)} extra frames")
