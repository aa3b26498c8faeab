"""Fusing static and per-frame dynamic point clouds, and z-buffered pseudo-images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UnknownFrame
from .scene import Camera, Z_NEAR

DEFAULT_SPLAT_RADIUS = 1.0


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray
    frame_index: Optional[int] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, np.float64).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("points and colors differ in length")
        if len(self.points) < 1:
            raise ValueError("a point cloud needs at least one point")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise ValueError("colors must lie in [0, 1]")

    def __len__(self):
        return len(self.points)


def fuse(static_cloud: PointCloud, dynamic_clouds, frame) -> PointCloud:
    """Static points followed by the dynamic points recorded for ``frame``."""
    if not dynamic_clouds:
        return static_cloud
    for cloud in dynamic_clouds:
        if cloud.frame_index == frame:
            return PointCloud(np.concatenate([static_cloud.points, cloud.points]),
                              np.concatenate([static_cloud.colors, cloud.colors]))
    known = sorted(c.frame_index for c in dynamic_clouds)
    raise UnknownFrame(f"no dynamic cloud for frame {frame}; available: {known}")


def _disc_offsets(radius):
    r = int(np.floor(radius))
    dv, du = np.mgrid[-r:r + 1, -r:r + 1]
    keep = du**2 + dv**2 <= radius * radius
    return du[keep], dv[keep]


def project_pseudo_image(cloud: PointCloud, cam: Camera, splat_radius=DEFAULT_SPLAT_RADIUS):
    """Z-buffered disc splatting of ``cloud`` into ``cam``.

    Each point paints the pixels whose centres lie within ``splat_radius`` of the
    pixel its centre projects into; the nearest point wins, lower index on ties.
    Returns ``(pseudo H x W x 3, coverage H x W uint8)``.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    H, W = cam.height, cam.width
    pseudo = np.zeros((H, W, 3))
    coverage = np.zeros((H, W), np.uint8)
    pc = cam.world_to_cam(cloud.points)
    front = np.nonzero(pc[:, 2] > Z_NEAR)[0]
    if len(front) == 0:
        return pseudo, coverage
    x, y, z = pc[front, 0], pc[front, 1], pc[front, 2]
    cu = np.floor(cam.fx * x / z + cam.cx + 0.5).astype(np.int64)
    cv = np.floor(cam.fy * y / z + cam.cy + 0.5).astype(np.int64)
    du, dv = _disc_offsets(splat_radius)
    pu = (cu[:, None] + du[None, :]).ravel()
    pv = (cv[:, None] + dv[None, :]).ravel()
    owner = np.repeat(front, len(du))
    depth = np.repeat(z, len(du))
    inb = (pu >= 0) & (pu < W) & (pv >= 0) & (pv < H)
    pu, pv, owner, depth = pu[inb], pv[inb], owner[inb], depth[inb]
    if len(pu) == 0:
        return pseudo, coverage
    pix = pv * W + pu
    order = np.lexsort((owner, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    pseudo.reshape(-1, 3)[pix[win]] = cloud.colors[owner[win]]
    coverage.reshape(-1)[pix[win]] = 1
    return pseudo, coverage
