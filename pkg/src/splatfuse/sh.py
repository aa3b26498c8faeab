"""View-dependent colour from spherical-harmonics coefficients (degree <= 3).

Coefficient 0 is used as plain RGB (no DC scaling, no offset), so a degree-0
model is an ordinary per-Gaussian colour.
"""

import numpy as np

from .scene import normalize_backward

C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)


def sh_basis(dirs, degree):
    """Basis values (N, (degree+1)**2) and their derivatives (N, K, 3) w.r.t. the unit direction."""
    n = len(dirs)
    K = (degree + 1) ** 2
    B = np.zeros((n, K), dirs.dtype)
    dB = np.zeros((n, K, 3), dirs.dtype)
    B[:, 0] = 1.0
    if degree < 1:
        return B, dB
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    B[:, 1] = -C1 * y
    B[:, 2] = C1 * z
    B[:, 3] = -C1 * x
    dB[:, 1, 1] = -C1
    dB[:, 2, 2] = C1
    dB[:, 3, 0] = -C1
    if degree < 2:
        return B, dB
    xx, yy, zz = x * x, y * y, z * z
    B[:, 4] = C2[0] * x * y
    B[:, 5] = C2[1] * y * z
    B[:, 6] = C2[2] * (2 * zz - xx - yy)
    B[:, 7] = C2[3] * x * z
    B[:, 8] = C2[4] * (xx - yy)
    dB[:, 4] = np.stack([C2[0] * y, C2[0] * x, 0 * x], -1)
    dB[:, 5] = np.stack([0 * x, C2[1] * z, C2[1] * y], -1)
    dB[:, 6] = np.stack([-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z], -1)
    dB[:, 7] = np.stack([C2[3] * z, 0 * x, C2[3] * x], -1)
    dB[:, 8] = np.stack([2 * C2[4] * x, -2 * C2[4] * y, 0 * x], -1)
    if degree < 3:
        return B, dB
    B[:, 9] = C3[0] * y * (3 * xx - yy)
    B[:, 10] = C3[1] * x * y * z
    B[:, 11] = C3[2] * y * (4 * zz - xx - yy)
    B[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    B[:, 13] = C3[4] * x * (4 * zz - xx - yy)
    B[:, 14] = C3[5] * z * (xx - yy)
    B[:, 15] = C3[6] * x * (xx - 3 * yy)
    zero = 0 * x
    dB[:, 9] = np.stack([6 * C3[0] * x * y, C3[0] * (3 * xx - 3 * yy), zero], -1)
    dB[:, 10] = np.stack([C3[1] * y * z, C3[1] * x * z, C3[1] * x * y], -1)
    dB[:, 11] = np.stack([-2 * C3[2] * x * y, C3[2] * (4 * zz - xx - 3 * yy),
                          8 * C3[2] * y * z], -1)
    dB[:, 12] = np.stack([-6 * C3[3] * x * z, -6 * C3[3] * y * z,
                          C3[3] * (6 * zz - 3 * xx - 3 * yy)], -1)
    dB[:, 13] = np.stack([C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * x * y,
                          8 * C3[4] * x * z], -1)
    dB[:, 14] = np.stack([2 * C3[5] * x * z, -2 * C3[5] * y * z, C3[5] * (xx - yy)], -1)
    dB[:, 15] = np.stack([C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * x * y, zero], -1)
    return B, dB


def eval_colors(color, mu, cam_center):
    """Per-Gaussian RGB (clamped at 0) and the cache needed by :func:`eval_colors_backward`."""
    degree = int(round(np.sqrt(color.shape[1]))) - 1
    if degree == 0:
        raw = color[:, 0, :]
        return np.maximum(raw, 0.0), (degree, raw > 0, None, None, None, None)
    v = mu - np.asarray(cam_center, mu.dtype)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    norm = np.maximum(norm, 1e-12)
    dirs = v / norm
    B, dB = sh_basis(dirs, degree)
    raw = np.einsum("nk,nkc->nc", B, color)
    return np.maximum(raw, 0.0), (degree, raw > 0, B, dB, dirs, norm)


def eval_colors_backward(color, cache, g_rgb):
    """Returns gradients w.r.t. the colour coefficients and the Gaussian centre."""
    degree, positive, B, dB, dirs, norm = cache
    g_raw = g_rgb * positive
    g_color = np.zeros_like(color)
    if degree == 0:
        g_color[:, 0, :] = g_raw
        return g_color, None
    g_color[:] = B[:, :, None] * g_raw[:, None, :]
    g_B = np.einsum("nc,nkc->nk", g_raw, color)
    g_dir = np.einsum("nk,nkd->nd", g_B, dB)
    g_mu = normalize_backward(dirs, norm, g_dir)
    return g_color, g_mu
