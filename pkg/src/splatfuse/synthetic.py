"""Synthetic worlds with known ground truth, used by the tests, acceptance suite and demos.

A world is a set of ground-truth Gaussians (static plus linearly moving dynamic
ones) and a list of cameras/times. Ground-truth images and masks are rendered
with the production rasterizer; the point clouds handed to the reconstruction
are the Gaussian centres, optionally jittered or subsampled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pointcloud import PointCloud
from .rasterizer import compose, rasterize
from .scene import Camera, Frame, GaussianSet, Scene
from .trainer import init_gaussians


@dataclass
class SyntheticWorld:
    static: GaussianSet
    dynamic: GaussianSet
    velocity: np.ndarray          # (Nd, 3) world units per unit of normalized time
    cameras: list
    times: list
    canonical_time: float = 0.5
    background: tuple = (0.0, 0.0, 0.0)
    time_range: tuple = (0.0, 1.0)
    extra: dict = field(default_factory=dict)

    def dynamic_at(self, t):
        dyn = self.dynamic.copy()
        dyn.mu = dyn.mu + self.velocity * (t - self.canonical_time)
        return dyn

    def gaussians_at(self, t):
        return compose(self.static, self.dynamic_at(t))

    def render(self, cam: Camera, t):
        gs, _ = self.gaussians_at(t)
        return np.clip(rasterize(gs, cam, self.background).color, 0.0, 1.0)

    def gt_mask(self, cam: Camera, t):
        """1 where dynamic Gaussians carry more than half of the composited weight."""
        gs, is_dyn = self.gaussians_at(t)
        gs.dyn_logit = is_dyn.astype(gs.dtype)
        out = rasterize(gs, cam, self.background)
        m = np.clip(out.mask_value, 1e-300, 1 - 1e-16)
        dyn_weight = np.log(m / (1 - m))
        return (dyn_weight > 0.5).astype(np.uint8)

    def frames(self, with_masks=True):
        out = []
        for i, (cam, t) in enumerate(zip(self.cameras, self.times)):
            out.append(Frame(cam, float(t), self.render(cam, t),
                             self.gt_mask(cam, t) if with_masks and len(self.dynamic) else None,
                             name=f"{i:04d}.png", stamp=self.stamp(t)))
        return out

    def stamp(self, t):
        t0, t1 = self.time_range
        return t0 + t * (t1 - t0)

    def clouds(self, rng=None, jitter=0.0, color_noise=0.0, keep_fraction=1.0):
        """Static cloud and one dynamic cloud per frame (dynamic centres at frame time)."""
        rng = np.random.default_rng(rng)

        def cloud(points, colors, frame_index=None):
            n = len(points)
            idx = np.arange(n)
            if keep_fraction < 1.0:
                k = max(1, int(round(keep_fraction * n)))
                idx = np.sort(rng.choice(n, k, replace=False))
            pts = points[idx] + rng.normal(0, jitter, (len(idx), 3)) if jitter else points[idx]
            col = colors[idx]
            if color_noise:
                col = col + rng.normal(0, color_noise, col.shape)
            return PointCloud(pts, np.clip(col, 0, 1), frame_index)

        static = cloud(self.static.mu, np.clip(self.static.color[:, 0], 0, 1))
        dyn = []
        if len(self.dynamic):
            for i, t in enumerate(self.times):
                d = self.dynamic_at(t)
                dyn.append(cloud(d.mu, np.clip(d.color[:, 0], 0, 1), i))
        return static, dyn

    def scene(self, rng=None, jitter=0.0, color_noise=0.0, keep_fraction=1.0, with_masks=True,
              sh_degree=0):
        frames = self.frames(with_masks)
        static, dyn = self.clouds(rng, jitter, color_noise, keep_fraction)
        sg, dg = init_gaussians(static, dyn, stamps=[f.stamp for f in frames],
                                sh_degree=sh_degree)
        return Scene(sg, dg, frames, self.time_range, static, dyn)


def _gaussians(mu, scale, colors, opacity, rng, dynamic=False, aniso=0.0):
    n = len(mu)
    log_scale = np.log(scale)[:, None] + rng.uniform(-aniso, aniso, (n, 3))
    rot = rng.normal(size=(n, 4)) if aniso else np.tile([1.0, 0, 0, 0], (n, 1))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(mu, log_scale, rot, np.log(opacity / (1 - opacity)), colors[:, None, :],
                       np.ones(n) if dynamic else None)


def orbit_cameras(n, radius, size, fx, height=0.0, arc=np.pi / 3, target=(0.0, 0.0, 0.0)):
    cams = []
    for a in np.linspace(-arc / 2, arc / 2, n):
        eye = np.array([radius * np.sin(a), height, -radius * np.cos(a)])
        cams.append(Camera.look_at(eye, target, fx=fx, width=size, height=size))
    return cams


def static_world(n=50, views=8, size=64, seed=0):
    """Opaque-ish blobs in a slab in front of an arc of cameras; nothing moves."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform([-1.2, -1.2, -0.4], [1.2, 1.2, 0.4], (n, 3))
    scale = rng.uniform(0.15, 0.3, n)
    colors = rng.uniform(0.1, 0.95, (n, 3))
    opacity = rng.uniform(0.6, 0.95, n)
    static = _gaussians(mu, scale, colors, opacity, rng, aniso=0.3)
    cams = orbit_cameras(views, 4.0, size, fx=0.9 * size)
    return SyntheticWorld(static, GaussianSet.empty(dynamic=True), np.zeros((0, 3)), cams,
                          [0.0] * views)


def mask_world(n_static=80, views=8, size=48, seed=0, spacing=0.2, speed=0.0):
    """A flat disc of 20 dynamic Gaussians in front of a static backdrop.

    The disc is a centre point plus rings of 6 and 13 points, ``spacing`` apart.
    Ground-truth scales are 1.5x the spacing, which puts the silhouette just
    inside the footprint the initialised Gaussians (3-NN scale, opacity 0.1)
    can cover; the mask phase freezes geometry, so it can only carve, not grow.
    """
    rng = np.random.default_rng(seed)
    smu = np.c_[rng.uniform(-2.0, 2.0, (n_static, 2)), rng.uniform(1.0, 1.6, n_static)]
    static = _gaussians(smu, rng.uniform(0.25, 0.4, n_static),
                        rng.uniform(0.1, 0.9, (n_static, 3)), rng.uniform(0.7, 0.95, n_static),
                        rng)
    a6 = np.arange(6) * np.pi / 3
    a13 = np.arange(13) * 2 * np.pi / 13
    xy = np.r_[[[0.0, 0.0]], np.c_[np.cos(a6), np.sin(a6)], 2 * np.c_[np.cos(a13), np.sin(a13)]]
    dmu = np.c_[spacing * xy, np.zeros(len(xy))]
    n_dyn = len(dmu)
    dynamic = _gaussians(dmu, np.full(n_dyn, 1.5 * spacing),
                         rng.uniform(0.1, 0.9, (n_dyn, 3)), np.full(n_dyn, 0.9), rng,
                         dynamic=True)
    velocity = np.tile([speed, 0.0, 0.0], (n_dyn, 1))
    fx = 1.5 * size
    cams = orbit_cameras(views, 4.0, size, fx=fx, arc=np.pi / 4)
    times = list(np.linspace(0, 1, views))
    world = SyntheticWorld(static, dynamic, velocity, cams, times)
    world.extra["held_out"] = (Camera.look_at([0.35, -0.2, -3.9], [0, 0, 0], fx=fx,
                                              width=size, height=size), 0.37)
    return world


def moving_world(views=8, size=64, seed=0, n_static=60, speed=1.2):
    """One dynamic Gaussian moving linearly in front of a static backdrop, fixed camera.

    The backdrop sits just behind the mover so that the 3-NN initial scale of the
    single dynamic point is of the same order as its true size.
    """
    rng = np.random.default_rng(seed)
    smu = np.c_[rng.uniform(-2.0, 2.0, (n_static, 2)), rng.uniform(0.5, 1.0, n_static)]
    static = _gaussians(smu, rng.uniform(0.3, 0.5, n_static),
                        rng.uniform(0.1, 0.6, (n_static, 3)), rng.uniform(0.7, 0.95, n_static),
                        rng)
    dynamic = _gaussians(np.array([[0.0, 0.0, 0.0]]), np.array([0.25]),
                         np.array([[0.95, 0.9, 0.2]]), np.array([0.95]), rng, dynamic=True)
    velocity = np.array([[speed, 0.3 * speed, 0.0]])
    cam = Camera.look_at([0, 0, -4.0], [0, 0, 0], fx=0.9 * size, width=size, height=size)
    times = list(np.linspace(0, 1, views))
    return SyntheticWorld(static, dynamic, velocity, [cam] * views, times)


def street_world(views=8, size=48, seed=0, n_ground=60, n_objects=40):
    """A forward-moving camera rig over a textured ground with roadside blobs.

    Content to the side of the driving line is seen obliquely (or not at all)
    from the original trajectory, so laterally shifted views extrapolate.
    """
    rng = np.random.default_rng(seed)
    gx = rng.uniform(-4.0, 4.0, n_ground)
    gz = rng.uniform(1.0, 9.0, n_ground)
    ground = np.c_[gx, np.full(n_ground, 1.0), gz]
    g = _gaussians(ground, rng.uniform(0.35, 0.5, n_ground),
                   rng.uniform(0.1, 0.9, (n_ground, 3)), rng.uniform(0.8, 0.95, n_ground), rng)
    ox = np.where(rng.uniform(size=n_objects) < 0.5, -1, 1) * rng.uniform(1.0, 3.5, n_objects)
    obj = np.c_[ox, rng.uniform(-0.6, 0.8, n_objects), rng.uniform(2.0, 9.0, n_objects)]
    o = _gaussians(obj, rng.uniform(0.2, 0.35, n_objects),
                   rng.uniform(0.1, 0.95, (n_objects, 3)), rng.uniform(0.8, 0.95, n_objects),
                   rng, aniso=0.3)
    static = GaussianSet.concat([g, o])
    cams = []
    for i in range(views):
        z0 = -1.5 + 0.25 * i
        cams.append(Camera.look_at([0.0, 0.0, z0], [0.0, 0.2, z0 + 5.0], fx=0.8 * size,
                                   width=size, height=size))
    return SyntheticWorld(static, GaussianSet.empty(dynamic=True), np.zeros((0, 3)), cams,
                          list(np.linspace(0, 1, views)))
