"""Rendering a handful of Gaussians and reading the dynamic-mask channel."""

import math
from pathlib import Path

import numpy as np

from splatfuse import Camera, GaussianSet, binarize_mask, rasterize
from splatfuse.io import write_image

out_dir = Path("demo_out")

# Two Gaussians stacked on the optical axis, each half opaque at the centre pixel.
# Both carry a dynamic logit d = 1.
cam = Camera(10.0, 10.0, 4.0, 4.0, 9, 9)
gs = GaussianSet(
    mu=np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]]),
    log_scale=np.full((2, 3), -1.0),
    rot=np.tile([1.0, 0.0, 0.0, 0.0], (2, 1)),
    opacity_logit=np.zeros(2),              # sigmoid(0) = 0.5
    color=np.array([[[1.0, 0.2, 0.2]], [[0.2, 0.2, 1.0]]]),
    dyn_logit=np.ones(2),
)
out = rasterize(gs, cam)

# front weight 0.5, back weight 0.5 * (1 - 0.5); the mask is sigmoid of the weighted sum
print("mask at centre   ", out.mask_value[4, 4])
print("sigmoid(0.75)    ", 1 / (1 + math.exp(-0.75)))
print("colour at centre ", out.color[4, 4])
print("binary mask row 4", binarize_mask(out.mask_value)[4])

# Static Gaussians (d = 0) leave the mask at exactly 0.5, so they never count as dynamic.
gs.dyn_logit[:] = 0.0
print("all static ->", np.unique(rasterize(gs, cam).mask_value))

# A bigger random scene, rendered and saved.
rng = np.random.default_rng(0)
n = 60
scene = GaussianSet(
    np.c_[rng.uniform(-1, 1, (n, 2)), rng.uniform(3, 5, n)],
    rng.uniform(-2.5, -1.5, (n, 3)),
    rng.normal(size=(n, 4)),
    rng.uniform(0, 3, n),
    rng.uniform(0, 1, (n, 1, 3)),
    np.where(rng.uniform(size=n) < 0.3, 4.0, -4.0),
)
big = Camera.look_at([0.0, 0.0, -0.5], [0.0, 0.0, 4.0], fx=60, width=96, height=96)
render = rasterize(scene, big, (0.05, 0.05, 0.1))
write_image(out_dir / "random_color.png", render.color)
write_image(out_dir / "random_mask.png", render.mask_value)
print("dynamic pixel fraction", binarize_mask(render.mask_value).mean())
print("wrote", sorted(p.name for p in out_dir.iterdir()))
