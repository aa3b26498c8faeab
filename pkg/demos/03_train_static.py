"""Fitting a small static scene from its point cloud."""

import time
from pathlib import Path

import numpy as np

from splatfuse import TrainConfig, Trainer, save_checkpoint
from splatfuse.io import write_image
from splatfuse.losses import psnr
from splatfuse.synthetic import static_world

world = static_world(n=50, views=8, size=64)
scene = world.scene(rng=0)
print(len(scene.static_gaussians), "Gaussians,", len(scene.frames), "views")

trainer = Trainer(scene, TrainConfig(seed=0))
t0 = time.perf_counter()
for block in range(4):
    trainer.train_joint_phase(250)
    recent = [h.psnr_train for h in trainer.history[-50:]]
    print(f"iter {trainer.iteration:5d}  train PSNR {np.mean(recent):6.2f} dB"
          f"  ({time.perf_counter() - t0:.0f}s)")

f = scene.frames[3]
pred = np.clip(trainer.render(f.camera, f.t).color, 0, 1)
print("view 3 PSNR:", round(psnr(pred, f.image), 2))

out = Path("demo_out")
write_image(out / "static_pred.png", pred)
write_image(out / "static_gt.png", f.image)
save_checkpoint(out / "static.bin", trainer.checkpoint())
