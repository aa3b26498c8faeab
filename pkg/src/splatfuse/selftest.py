"""Quick oracle and gradient suites behind the ``selftest`` command."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import gradcheck
from .hashgrid import HashGrid4D, encode, interpolation_weights
from .losses import ssim
from .oracles import naive_encode, naive_pseudo_image, naive_render, ssim_reference
from .pointcloud import PointCloud, project_pseudo_image
from .rasterizer import rasterize
from .scene import Camera, GaussianSet


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rasterizer_oracle(seeds=3):
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(s)
        gs = gradcheck.random_gaussians(int(rng.integers(5, 40)), rng, sh_degree=0)
        cam = Camera(30.0, 30.0, 15.5, 15.5, 32, 32)
        out = rasterize(gs, cam, (0.1, 0.2, 0.3))
        c, m, a = naive_render(gs, cam, (0.1, 0.2, 0.3))
        worst = max(worst, np.abs(out.color - c).max(), np.abs(out.mask_value - m).max())
    return worst <= 1e-5, f"max deviation {worst:.2e}"


def _mask_closed_form():
    cam = Camera(10.0, 10.0, 4.0, 4.0, 9, 9)
    empty = rasterize(GaussianSet.empty(dynamic=True), cam).mask_value
    two = GaussianSet(np.array([[0.0, 0, 2.0], [0.0, 0, 3.0]]), np.full((2, 3), -1.0),
                      np.tile([1.0, 0, 0, 0], (2, 1)), np.zeros(2), np.full((2, 1, 3), 0.5),
                      np.ones(2))
    v = rasterize(two, cam).mask_value[4, 4]
    expect = 1.0 / (1.0 + math.exp(-0.75))
    ok = bool(np.all(empty == 0.5)) and abs(v - expect) <= 1e-12
    return ok, f"empty={empty[0, 0]}, two-Gaussian error {abs(v - expect):.1e}"


def _encoder_oracle(n=200):
    rng = np.random.default_rng(0)
    grid = HashGrid4D.create([-1, -1, -1], [1, 1, 1], rng=rng, init_range=1.0)
    mu = rng.uniform(-1, 1, (n, 3))
    t = rng.uniform(0, 1, n)
    fast = encode(grid, mu, t)
    worst = max(np.abs(fast[i] - naive_encode(grid, mu[i], t[i])).max() for i in range(n))
    pou = max(abs(interpolation_weights(grid, mu, t, k)[0].sum(1) - 1).max()
              for k in range(grid.levels))
    return worst <= 1e-6 and pou <= 1e-12, f"max deviation {worst:.1e}, weight-sum error {pou:.1e}"


def _gradients(seeds=2):
    worst = {}
    for s in range(seeds):
        for k, v in gradcheck.gradient_suite(s).items():
            worst[k] = max(worst.get(k, 0.0), v)
    name = max(worst, key=worst.get)
    return max(worst.values()) <= 1e-3, f"{len(worst)} classes, worst {name} {worst[name]:.1e}"


def _ssim_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=(2, 16, 16, 3))
    v, _ = ssim(a, b)
    ref = ssim_reference(a, b)
    return abs(v - ref) <= 1e-10, f"deviation {abs(v - ref):.1e}"


def _pseudo_oracle():
    rng = np.random.default_rng(0)
    pts = np.c_[rng.uniform(-1, 1, (150, 2)), rng.uniform(1.5, 4, 150)]
    cloud = PointCloud(pts, rng.uniform(0, 1, (150, 3)))
    cam = Camera(12.0, 12.0, 9.5, 9.5, 20, 20)
    p, c = project_pseudo_image(cloud, cam, 1.0)
    rp, rc = naive_pseudo_image(cloud.points, cloud.colors, cam, 1.0)
    ok = np.array_equal(c, rc) and np.array_equal(p, rp)
    return ok, "coverage and colours identical" if ok else "mismatch vs brute force"


SUITES = [
    ("rasterizer vs per-pixel compositor", _rasterizer_oracle),
    ("dynamic mask closed form", _mask_closed_form),
    ("hash encoder vs 16-corner enumeration", _encoder_oracle),
    ("ssim vs windowed reference", _ssim_oracle),
    ("pseudo-image vs brute force", _pseudo_oracle),
    ("analytic vs finite-difference gradients", _gradients),
]


def run_selftest():
    results = []
    for name, fn in SUITES:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing suite is a failed suite
            ok, detail = False, f"raised {exc!r}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
