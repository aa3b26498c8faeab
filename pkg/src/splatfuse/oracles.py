"""Slow, straight-line reference implementations used to cross-check the fast paths.

Nothing here shares code with the production modules beyond the data types;
they are deliberately written per-pixel / per-corner so that they are easy to
audit.
"""

import itertools
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .rasterizer import ALPHA_MAX, ALPHA_MIN, T_MIN


def _footprint(mu, log_scale, rot, cam, floor=0.3):
    w, x, y, z = rot
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    S = np.diag(np.exp(log_scale))
    cov3 = R @ S @ S @ R.T
    pc = cam.R @ mu + cam.t
    tx, ty, tz = pc
    J = np.array([[cam.fx / tz, 0.0, -cam.fx * tx / tz**2],
                  [0.0, cam.fy / tz, -cam.fy * ty / tz**2]])
    cov2 = J @ cam.R @ cov3 @ cam.R.T @ J.T + floor * np.eye(2)
    mean = np.array([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy])
    return mean, cov2, tz


def _naive_color(coef, mu, cam):
    if len(coef) == 1:
        return coef[0]
    if len(coef) != 4:
        raise NotImplementedError("reference colour covers SH degree <= 1")
    x, y, z = (mu - cam.center) / np.linalg.norm(mu - cam.center)
    c1 = 0.4886025119029199
    return coef[0] - c1 * y * coef[1] + c1 * z * coef[2] - c1 * x * coef[3]


def naive_render(gs, cam, background=(0.0, 0.0, 0.0), z_near=0.01):
    """Per-pixel compositor with one global depth sort; SH colours up to degree 1."""
    H, W = cam.height, cam.width
    prims = []
    for i in range(len(gs)):
        mean, cov2, depth = _footprint(gs.mu[i], gs.log_scale[i], gs.rot[i], cam)
        if depth <= z_near:
            continue
        opacity = 1.0 / (1.0 + math.exp(-gs.opacity_logit[i]))
        d = 0.0 if gs.dyn_logit is None else float(gs.dyn_logit[i])
        rgb = np.maximum(_naive_color(gs.color[i], gs.mu[i], cam), 0.0)
        prims.append((depth, i, mean, np.linalg.inv(cov2), opacity, d, rgb))
    prims.sort(key=lambda p: (p[0], p[1]))

    color = np.zeros((H, W, 3))
    mask = np.zeros((H, W))
    alpha_img = np.zeros((H, W))
    bg = np.asarray(background, float)
    for v in range(H):
        for u in range(W):
            T = 1.0
            c = np.zeros(3)
            s = 0.0
            for depth, i, mean, inv, opacity, d, rgb in prims:
                delta = np.array([u, v]) - mean
                alpha = min(ALPHA_MAX, opacity * math.exp(-0.5 * delta @ inv @ delta))
                if alpha < ALPHA_MIN:
                    continue
                if T * (1 - alpha) < T_MIN:
                    break
                c += rgb * alpha * T
                s += d * alpha * T
                T *= 1 - alpha
            color[v, u] = c + T * bg
            mask[v, u] = 1.0 / (1.0 + math.exp(-s))
            alpha_img[v, u] = 1.0 - T
    return color, mask, alpha_img


def naive_hash_index(corner, res, table_size):
    primes = (1, 2654435761, 805459861, 3674653429)
    if res ** 4 <= table_size:
        x, y, z, t = (int(c) for c in corner)
        return x + res * (y + res * (z + res * t))
    h = 0
    for c, p in zip(corner, primes):
        h ^= (int(c) * p) & 0xFFFFFFFFFFFFFFFF
    return h & (table_size - 1)


def naive_encode(grid, mu, t):
    """Enumerate the 16 corners of each level explicitly."""
    lo, hi = grid.box_min, grid.box_max
    p = [min(max((mu[a] - lo[a]) / (hi[a] - lo[a]), 0.0), 1.0) for a in range(3)]
    p.append(min(max(t, 0.0), 1.0))
    out = []
    for k in range(grid.levels):
        res = grid.resolutions[k]
        scaled = [pi * (res - 1) for pi in p]
        base = [min(int(math.floor(s)), res - 2) for s in scaled]
        frac = [s - b for s, b in zip(scaled, base)]
        feat = np.zeros(grid.features)
        for bits in itertools.product((0, 1), repeat=4):
            corner = [b + o for b, o in zip(base, bits)]
            weight = 1.0
            for f, o in zip(frac, bits):
                weight *= f if o else (1.0 - f)
            feat += weight * grid.tables[k, naive_hash_index(corner, res, grid.table_size)]
        out.append(feat)
    return np.concatenate(out)


def naive_pseudo_image(points, colors, cam, radius):
    """Brute force: for every pixel scan every point."""
    H, W = cam.height, cam.width
    pc = points @ cam.R.T + cam.t
    pseudo = np.zeros((H, W, 3))
    coverage = np.zeros((H, W), np.uint8)
    for v in range(H):
        for u in range(W):
            best = None
            for i, (x, y, z) in enumerate(pc):
                if z <= 0.01:
                    continue
                cu = int(np.floor(cam.fx * x / z + cam.cx + 0.5))
                cv = int(np.floor(cam.fy * y / z + cam.cy + 0.5))
                if (u - cu) ** 2 + (v - cv) ** 2 > radius * radius:
                    continue
                if best is None or z < best[0]:
                    best = (z, i)
            if best is not None:
                pseudo[v, u] = colors[best[1]]
                coverage[v, u] = 1
    return pseudo, coverage


def ssim_reference(a, b, window=11, sigma=1.5, c1=0.01**2, c2=0.03**2):
    """Direct windowed SSIM: explicit weighted sums at each valid window position."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    x = np.arange(window) - (window - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    g /= g.sum()
    w2 = np.outer(g, g)
    H, W, C = a.shape
    vals = []
    for ch in range(C):
        for i in range(H - window + 1):
            for j in range(W - window + 1):
                pa = a[i:i + window, j:j + window, ch]
                pb = b[i:i + window, j:j + window, ch]
                ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
                va = (w2 * pa * pa).sum() - ma * ma
                vb = (w2 * pb * pb).sum() - mb * mb
                cab = (w2 * pa * pb).sum() - ma * mb
                vals.append(((2 * ma * mb + c1) * (2 * cab + c2))
                            / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. array ``x``.

    ``x`` is perturbed in place (views are fine) and restored afterwards.
    """
    g = np.zeros(x.shape, dtype=float)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g
