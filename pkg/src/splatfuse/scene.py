"""Core scene types, camera math and EWA projection of 3D Gaussians.

Conventions
-----------
* Poses are world-to-camera: ``x_cam = R @ x_world + t``; right-handed with
  +x right, +y down and +z forward.
* Pixel ``(row, col)`` has its centre at image coordinates ``(u, v) = (col, row)``.
* Quaternions are ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import BehindCamera

Z_NEAR = 0.01
COV2D_FLOOR = 0.3


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def normalize_quat(q):
    q = np.asarray(q)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q):
    """Rotation matrices for (..., 4) quaternions; the input is normalized first."""
    q = normalize_quat(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_grad_to_quat(q, dR):
    """Pull a gradient w.r.t. ``quat_to_rotmat(q)`` back to the raw quaternion ``q``.

    Includes the Jacobian of the normalization step.
    """
    q = np.asarray(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn[..., 0], qn[..., 1], qn[..., 2], qn[..., 3]
    g = dR
    gw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    gx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0]
              - 2 * x * g[..., 1, 1] - w * g[..., 1, 2] + z * g[..., 2, 0]
              + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    gy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2]
              + x * g[..., 1, 0] + z * g[..., 1, 2] - w * g[..., 2, 0]
              + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    gz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2]
              + w * g[..., 1, 0] - 2 * z * g[..., 1, 1] + y * g[..., 1, 2]
              + x * g[..., 2, 0] + y * g[..., 2, 1])
    gqn = np.stack([gw, gx, gy, gz], axis=-1)
    return normalize_backward(qn, norm, gqn)


def normalize_backward(unit, norm, grad_unit):
    """Gradient through ``v -> v / |v|`` given the unit vector and the norm."""
    radial = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - radial * unit) / norm


# ---------------------------------------------------------------------------
# camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")

    @property
    def center(self):
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    @property
    def shape(self):
        return (self.height, self.width)

    def world_to_cam(self, points):
        return np.asarray(points) @ self.R.T + self.t

    def with_pose(self, R, t):
        return replace(self, R=R, t=t)

    def key(self):
        """Hashable identity of the camera, used for lookups."""
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                tuple(np.round(self.R, 12).ravel()), tuple(np.round(self.t, 12)))

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height) == (
            other.fx, other.fy, other.cx, other.cy, other.width, other.height
        ) and np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    __hash__ = None

    @classmethod
    def look_at(cls, eye, target, up=(0.0, -1.0, 0.0), *, fx, fy=None, width, height,
                cx=None, cy=None):
        """World-to-camera camera at ``eye`` looking at ``target`` (+y is image-down)."""
        eye = np.asarray(eye, float)
        forward = np.asarray(target, float) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, float))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        fy = fx if fy is None else fy
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
        return cls(fx, fy, cx, cy, width, height, R, -R @ eye)


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------

def num_sh_coeffs(degree):
    return (degree + 1) ** 2


@dataclass
class Gaussian:
    """A single anisotropic Gaussian primitive."""

    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: float
    color: np.ndarray
    dyn_logit: Optional[float] = None

    @property
    def opacity(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))

    @property
    def is_dynamic(self):
        return self.dyn_logit is not None


@dataclass
class GaussianSet:
    """Struct-of-arrays container for N Gaussians.

    ``color`` has shape (N, n_coeffs, 3); coefficient 0 holds plain RGB and the
    remaining ones are real spherical-harmonics coefficients. ``dyn_logit`` is
    ``None`` for a static set.
    """

    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    dyn_logit: Optional[np.ndarray] = None

    PARAMS = ("mu", "log_scale", "rot", "opacity_logit", "color", "dyn_logit")

    def __post_init__(self):
        self.mu = np.asarray(self.mu)
        dtype = self.mu.dtype if np.issubdtype(self.mu.dtype, np.floating) else np.float64
        self.mu = self.mu.astype(dtype, copy=False).reshape(-1, 3)
        n = len(self.mu)
        self.log_scale = np.asarray(self.log_scale, dtype).reshape(n, 3)
        self.rot = np.asarray(self.rot, dtype).reshape(n, 4)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype).reshape(n)
        color = np.asarray(self.color, dtype)
        if color.ndim != 3:
            color = color.reshape(n, color.shape[-1] // 3, 3)
        self.color = color
        if self.dyn_logit is not None:
            self.dyn_logit = np.asarray(self.dyn_logit, dtype).reshape(n)

    def __len__(self):
        return len(self.mu)

    @property
    def dtype(self):
        return self.mu.dtype

    @property
    def sh_degree(self):
        return int(round(np.sqrt(self.color.shape[1]))) - 1

    @property
    def is_dynamic(self):
        return self.dyn_logit is not None

    @property
    def opacity(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Gaussian(
                self.mu[i].copy(), self.log_scale[i].copy(), self.rot[i].copy(),
                float(self.opacity_logit[i]), self.color[i].reshape(-1).copy(),
                None if self.dyn_logit is None else float(self.dyn_logit[i]),
            )
        return GaussianSet(
            self.mu[i], self.log_scale[i], self.rot[i], self.opacity_logit[i],
            self.color[i], None if self.dyn_logit is None else self.dyn_logit[i],
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def params(self):
        """Mapping of parameter name to array (``dyn_logit`` omitted when static)."""
        out = {name: getattr(self, name) for name in self.PARAMS[:-1]}
        if self.dyn_logit is not None:
            out["dyn_logit"] = self.dyn_logit
        return out

    def copy(self):
        return GaussianSet(**{k: v.copy() for k, v in self.params().items()})

    def astype(self, dtype):
        return GaussianSet(**{k: v.astype(dtype) for k, v in self.params().items()})

    @classmethod
    def empty(cls, sh_degree=0, dynamic=False, dtype=np.float64):
        k = num_sh_coeffs(sh_degree)
        return cls(np.zeros((0, 3), dtype), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, k, 3)), np.zeros(0) if dynamic else None)

    @classmethod
    def from_list(cls, gaussians: Sequence[Gaussian], dtype=np.float64):
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(dtype=dtype)
        dyn = [g.dyn_logit for g in gaussians]
        if any(d is None for d in dyn) and not all(d is None for d in dyn):
            raise ValueError("cannot mix static and dynamic Gaussians in one set")
        return cls(
            np.array([g.mu for g in gaussians], dtype),
            np.array([g.log_scale for g in gaussians], dtype),
            np.array([g.rot for g in gaussians], dtype),
            np.array([g.opacity_logit for g in gaussians], dtype),
            np.array([np.reshape(g.color, -1) for g in gaussians], dtype),
            None if dyn[0] is None else np.array(dyn, dtype),
        )

    @staticmethod
    def concat(sets):
        """Concatenate sets; static members get ``dyn_logit = 0`` when any set is dynamic."""
        sets = [s for s in sets if s is not None]
        any_dyn = any(s.is_dynamic for s in sets)
        out = {}
        for name in GaussianSet.PARAMS[:-1]:
            out[name] = np.concatenate([getattr(s, name) for s in sets])
        if any_dyn:
            out["dyn_logit"] = np.concatenate(
                [s.dyn_logit if s.is_dynamic else np.zeros(len(s), s.dtype) for s in sets])
        return GaussianSet(**out)


# ---------------------------------------------------------------------------
# frames and scenes
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    camera: Camera
    t: float
    image: np.ndarray
    ref_mask: Optional[np.ndarray] = None
    name: str = ""
    stamp: Optional[float] = None

    def __post_init__(self):
        h, w = self.camera.height, self.camera.width
        if self.image.shape[:2] != (h, w):
            raise ValueError(f"image shape {self.image.shape[:2]} != camera {(h, w)}")
        if self.ref_mask is not None:
            self.ref_mask = np.asarray(self.ref_mask)
            if self.ref_mask.shape != (h, w):
                raise ValueError("reference mask shape does not match camera")
            if not np.isin(self.ref_mask, (0, 1)).all():
                raise ValueError("reference mask must be binary")


@dataclass
class Scene:
    static_gaussians: GaussianSet
    dynamic_gaussians: GaussianSet
    frames: list
    time_range: tuple = (0.0, 1.0)
    static_cloud: object = None
    dynamic_clouds: list = field(default_factory=list)

    def all_gaussians(self):
        return GaussianSet.concat([self.static_gaussians, self.dynamic_gaussians])

    def normalize_time(self, stamp):
        t0, t1 = self.time_range
        if t1 == t0:
            return 0.0
        return (stamp - t0) / (t1 - t0)

    def extent(self):
        """Radius of the camera-centre cloud (x1.1), used to scale position steps."""
        centers = np.array([f.camera.center for f in self.frames])
        mid = centers.mean(axis=0)
        radius = np.linalg.norm(centers - mid, axis=1).max() if len(centers) else 0.0
        if radius < 1e-6:
            pts = self.all_gaussians().mu
            radius = np.linalg.norm(pts - pts.mean(0), axis=1).max() if len(pts) else 1.0
        return 1.1 * max(radius, 1e-6)

    def diameter(self):
        pts = self.all_gaussians().mu
        if len(pts) == 0:
            return 1.0
        centers = np.array([f.camera.center for f in self.frames]).reshape(-1, 3)
        allp = np.concatenate([pts, centers])
        return float(max(np.linalg.norm(allp.max(0) - allp.min(0)), 1e-6))


def normalize_stamps(stamps):
    stamps = np.asarray(stamps, dtype=np.float64)
    t0, t1 = float(stamps.min()), float(stamps.max())
    if t1 == t0:
        return np.zeros_like(stamps), (t0, t1)
    return (stamps - t0) / (t1 - t0), (t0, t1)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

@dataclass
class Projection:
    """Batched screen-space footprint of a GaussianSet, plus backward intermediates."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray  # (a, b, c) of the inverse covariance [[a, b], [b, c]]
    depth: np.ndarray
    visible: np.ndarray
    t_cam: np.ndarray
    J: np.ndarray
    W: np.ndarray
    rotmat: np.ndarray
    scale: np.ndarray
    cov3d: np.ndarray


def covariance3d(log_scale, rot):
    Rg = quat_to_rotmat(rot)
    s = np.exp(log_scale)
    M = Rg * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2), Rg, s


def project(gs: GaussianSet, cam: Camera, floor=COV2D_FLOOR, z_near=Z_NEAR) -> Projection:
    dtype = gs.dtype
    W = cam.R.astype(dtype)
    tc = gs.mu @ W.T + cam.t.astype(dtype)
    visible = tc[:, 2] > z_near
    z = np.where(visible, tc[:, 2], 1.0)
    x, y = tc[:, 0], tc[:, 1]
    n = len(gs)
    J = np.zeros((n, 2, 3), dtype)
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / z**2
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / z**2
    cov3d, Rg, s = covariance3d(gs.log_scale, gs.rot)
    T = J @ W
    cov2d = T @ cov3d @ np.swapaxes(T, -1, -2)
    cov2d[:, 0, 0] += floor
    cov2d[:, 1, 1] += floor
    A, B, C = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = A * C - B * B
    conic = np.stack([C / det, -B / det, A / det], axis=-1)
    mean2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=-1)
    return Projection(mean2d, cov2d, conic, tc[:, 2].copy(), visible, tc, J, W, Rg, s, cov3d)


def project_backward(gs: GaussianSet, cam: Camera, proj: Projection, g_mean2d, g_conic):
    """Gradients w.r.t. (mu, log_scale, rot) from gradients on mean2d and conic."""
    tc, J, W = proj.t_cam, proj.J, proj.W
    x, y, z = tc[:, 0], tc[:, 1], np.where(proj.visible, tc[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy

    # conic -> cov2d
    ga, gb, gc = g_conic[:, 0], g_conic[:, 1], g_conic[:, 2]
    Gi = np.empty_like(proj.cov2d)
    Gi[:, 0, 0] = ga
    Gi[:, 0, 1] = Gi[:, 1, 0] = 0.5 * gb
    Gi[:, 1, 1] = gc
    inv = np.empty_like(proj.cov2d)
    inv[:, 0, 0] = proj.conic[:, 0]
    inv[:, 0, 1] = inv[:, 1, 0] = proj.conic[:, 1]
    inv[:, 1, 1] = proj.conic[:, 2]
    G2 = -inv @ Gi @ inv

    # cov2d = T S3 T^T, T = J W
    T = J @ W
    Tt = np.swapaxes(T, -1, -2)
    G3 = Tt @ G2 @ T
    gT = 2.0 * G2 @ T @ proj.cov3d
    gJ = gT @ W.T

    gt = np.zeros_like(tc)
    gt[:, 0] += g_mean2d[:, 0] * fx / z - gJ[:, 0, 2] * fx / z**2
    gt[:, 1] += g_mean2d[:, 1] * fy / z - gJ[:, 1, 2] * fy / z**2
    gt[:, 2] += (-g_mean2d[:, 0] * fx * x / z**2 - g_mean2d[:, 1] * fy * y / z**2
                 - gJ[:, 0, 0] * fx / z**2 + gJ[:, 0, 2] * 2 * fx * x / z**3
                 - gJ[:, 1, 1] * fy / z**2 + gJ[:, 1, 2] * 2 * fy * y / z**3)
    g_mu = gt @ W

    # cov3d = M M^T, M = R diag(s)
    Rg, s = proj.rotmat, proj.scale
    M = Rg * s[:, None, :]
    gM = 2.0 * G3 @ M
    gR = gM * s[:, None, :]
    g_s = np.sum(gM * Rg, axis=1)
    g_log_scale = g_s * s
    g_rot = rotmat_grad_to_quat(gs.rot, gR)
    invisible = ~proj.visible
    g_mu[invisible] = 0
    g_log_scale[invisible] = 0
    g_rot[invisible] = 0
    return g_mu, g_log_scale, g_rot


def project_gaussian(g: Gaussian, cam: Camera, z_near=Z_NEAR):
    """Project one Gaussian; returns ``(mean2d, cov2d, depth)``."""
    gs = GaussianSet.from_list([g])
    proj = project(gs, cam, z_near=z_near)
    if not proj.visible[0]:
        raise BehindCamera(f"camera-space depth {proj.depth[0]:.4g} <= z_near {z_near}")
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])
