"""Tile-based differentiable Gaussian splatting.

Besides colour, every pixel carries a dynamic value: the front-to-back
composite of the per-Gaussian dynamic logits squashed through a sigmoid.
Static Gaussians take part in the composite with a logit of exactly zero, so
they still attenuate dynamic evidence behind them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .scene import Camera, GaussianSet, project, project_backward
from .sh import eval_colors, eval_colors_backward

TILE_SIZE = 16
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def default_workers():
    try:
        return max(1, int(os.environ.get("SPLATFUSE_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class RenderStats:
    """Per-Gaussian bookkeeping for density control."""

    contrib: np.ndarray  # number of pixels each Gaussian contributed to
    visible: np.ndarray
    grad2d_norm: Optional[np.ndarray] = None  # filled in by the backward pass


@dataclass
class RenderOutput:
    color: np.ndarray
    mask_value: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    per_gaussian_stats: RenderStats
    _cache: object = field(default=None, repr=False)


@dataclass
class RenderGradients:
    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    dyn_logit: Optional[np.ndarray]
    mean2d: np.ndarray = None

    def as_dict(self):
        out = {k: getattr(self, k) for k in GaussianSet.PARAMS}
        if out["dyn_logit"] is None:
            del out["dyn_logit"]
        return out


@dataclass
class _Prepared:
    proj: object
    rgb: np.ndarray
    color_cache: tuple
    opacity: np.ndarray
    dyn: np.ndarray
    order: np.ndarray
    bbox: np.ndarray  # (N, 4): umin, umax, vmin, vmax
    tiles: list       # (v0, v1, u0, u1, ids)


def _prepare(gs: GaussianSet, cam: Camera, tile_size):
    dtype = gs.dtype
    proj = project(gs, cam)
    rgb, color_cache = eval_colors(gs.color, gs.mu, cam.center)
    opacity = sigmoid(gs.opacity_logit)
    dyn = gs.dyn_logit if gs.dyn_logit is not None else np.zeros(len(gs), dtype)

    # Outside this Mahalanobis radius alpha < 1/255, so culling there is exact.
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 2.0 * np.log(255.0 * opacity)
    r2 = np.where(np.isfinite(r2), r2, 0.0) * (1 + 1e-6)
    ext_u = np.sqrt(r2 * proj.cov2d[:, 0, 0])
    ext_v = np.sqrt(r2 * proj.cov2d[:, 1, 1])
    mu_, mv_ = proj.mean2d[:, 0], proj.mean2d[:, 1]
    bbox = np.stack([mu_ - ext_u, mu_ + ext_u, mv_ - ext_v, mv_ + ext_v], axis=-1)
    H, W = cam.height, cam.width
    active = (proj.visible & (r2 > 0) & (bbox[:, 1] >= 0) & (bbox[:, 0] <= W - 1)
              & (bbox[:, 3] >= 0) & (bbox[:, 2] <= H - 1))
    idx = np.nonzero(active)[0]
    order = idx[np.lexsort((idx, proj.depth[idx]))]

    tiles = []
    ob = bbox[order]
    for v0 in range(0, H, tile_size):
        v1 = min(v0 + tile_size, H)
        in_v = (ob[:, 3] >= v0) & (ob[:, 2] <= v1 - 1)
        for u0 in range(0, W, tile_size):
            u1 = min(u0 + tile_size, W)
            sel = in_v & (ob[:, 1] >= u0) & (ob[:, 0] <= u1 - 1)
            tiles.append((v0, v1, u0, u1, order[sel]))
    return _Prepared(proj, rgb, color_cache, opacity, dyn, order, bbox, tiles)


def _tile_forward(prep: _Prepared, tile, background):
    v0, v1, u0, u1, ids = tile
    vv, uu = np.mgrid[v0:v1, u0:u1]
    dtype = prep.rgb.dtype
    pu = uu.ravel().astype(dtype)
    pv = vv.ravel().astype(dtype)
    P = len(pu)
    if len(ids) == 0:
        color = np.broadcast_to(background, (P, 3)).astype(dtype)
        zeros = np.zeros(P, dtype)
        return dict(color=color, D=zeros, T_final=np.ones(P, dtype), depth=zeros, ids=ids)
    m = prep.proj.mean2d[ids]
    con = prep.proj.conic[ids]
    dx = pu[None, :] - m[:, 0:1]
    dy = pv[None, :] - m[:, 1:2]
    a, b, c = con[:, 0:1], con[:, 1:2], con[:, 2:3]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    e = np.exp(power)
    raw = prep.opacity[ids][:, None] * e
    alpha = np.minimum(raw, ALPHA_MAX)
    alpha = np.where(alpha >= ALPHA_MIN, alpha, 0.0)
    # Stop at the Gaussian that would push transmittance below T_MIN (it is excluded).
    t_incl = np.cumprod(1.0 - alpha, axis=0)
    alpha = alpha * (t_incl >= T_MIN)
    onem = 1.0 - alpha
    t_incl = np.cumprod(onem, axis=0)
    T_excl = np.empty_like(t_incl)
    T_excl[0] = 1.0
    T_excl[1:] = t_incl[:-1]
    T_final = t_incl[-1]
    w = alpha * T_excl
    color = w.T @ prep.rgb[ids] + T_final[:, None] * background[None, :]
    D = w.T @ prep.dyn[ids]
    wsum = w.sum(axis=0)
    wz = w.T @ prep.proj.depth[ids]
    depth = np.divide(wz, wsum, out=np.zeros_like(wz), where=wsum > 0)
    return dict(color=color, D=D, T_final=T_final, depth=depth, ids=ids, dx=dx, dy=dy,
                e=e, raw=raw, alpha=alpha, onem=onem, T_excl=T_excl, w=w)


def _map_tiles(fn, tiles, workers):
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(tiles) <= 1:
        return [fn(t) for t in tiles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tiles))


def rasterize(gaussians: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0), *,
              tile_size=TILE_SIZE, workers=None) -> RenderOutput:
    """Render colour, dynamic value, accumulated alpha and expected depth."""
    dtype = gaussians.dtype
    background = np.asarray(background, dtype).reshape(3)
    H, W = cam.height, cam.width
    prep = _prepare(gaussians, cam, tile_size)
    results = _map_tiles(lambda t: _tile_forward(prep, t, background), prep.tiles, workers)

    color = np.empty((H, W, 3), dtype)
    D = np.empty((H, W), dtype)
    T_final = np.empty((H, W), dtype)
    depth = np.empty((H, W), dtype)
    contrib = np.zeros(len(gaussians), np.int64)
    for (v0, v1, u0, u1, ids), r in zip(prep.tiles, results):
        shape = (v1 - v0, u1 - u0)
        color[v0:v1, u0:u1] = r["color"].reshape(shape + (3,))
        D[v0:v1, u0:u1] = r["D"].reshape(shape)
        T_final[v0:v1, u0:u1] = r["T_final"].reshape(shape)
        depth[v0:v1, u0:u1] = r["depth"].reshape(shape)
        if len(ids):
            contrib[ids] += np.count_nonzero(r["alpha"], axis=1)
    stats = RenderStats(contrib=contrib, visible=prep.proj.visible.copy())
    cache = (prep, results, D, background)
    return RenderOutput(color, sigmoid(D), 1.0 - T_final, depth, stats, cache)


def _tile_backward(prep, tile, r, g_color, g_D, bg):
    v0, v1, u0, u1, ids = tile
    if len(ids) == 0:
        return None
    gC = g_color[v0:v1, u0:u1].reshape(-1, 3)
    gD = g_D[v0:v1, u0:u1].ravel()
    rgb = prep.rgb[ids]
    dyn = prep.dyn[ids]
    w, alpha, onem, T_excl = r["w"], r["alpha"], r["onem"], r["T_excl"]
    gv = rgb @ gC.T + dyn[:, None] * gD[None, :]
    wg = w * gv
    suffix = np.cumsum(wg[::-1], axis=0)[::-1] - wg
    suffix += r["T_final"][None, :] * (gC @ bg)[None, :]
    live = (alpha > 0) & (r["raw"] < ALPHA_MAX)
    g_alpha = np.where(live, T_excl * gv - suffix / onem, 0.0)

    g_rgb = w @ gC
    g_dyn = w @ gD
    g_op = np.sum(g_alpha * r["e"], axis=1)
    g_pow = g_alpha * r["raw"]
    dx, dy = r["dx"], r["dy"]
    con = prep.proj.conic[ids]
    a, b, c = con[:, 0:1], con[:, 1:2], con[:, 2:3]
    g_mean = np.stack([np.sum(g_pow * (a * dx + b * dy), axis=1),
                       np.sum(g_pow * (b * dx + c * dy), axis=1)], axis=-1)
    g_con = np.stack([np.sum(g_pow * (-0.5 * dx * dx), axis=1),
                      np.sum(g_pow * (-dx * dy), axis=1),
                      np.sum(g_pow * (-0.5 * dy * dy), axis=1)], axis=-1)
    return ids, g_rgb, g_dyn, g_op, g_mean, g_con


def rasterize_backward(gaussians: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0),
                       grad_color=None, grad_mask=None, *, is_dynamic=None,
                       forward: Optional[RenderOutput] = None, tile_size=TILE_SIZE,
                       workers=None) -> RenderGradients:
    """Adjoint of :func:`rasterize` for upstream gradients on colour and dynamic value.

    ``is_dynamic`` marks which entries own a dynamic logit; the others get a zero
    ``dyn_logit`` gradient. Pass the result of a matching :func:`rasterize` call as
    ``forward`` to skip recomputing it.
    """
    if forward is None:
        forward = rasterize(gaussians, cam, background, tile_size=tile_size, workers=workers)
    prep, results, D, bg = forward._cache
    n = len(gaussians)
    dtype = gaussians.dtype
    H, W = cam.height, cam.width
    g_color = np.zeros((H, W, 3), dtype) if grad_color is None else np.asarray(grad_color, dtype)
    g_mask = np.zeros((H, W), dtype) if grad_mask is None else np.asarray(grad_mask, dtype)
    sD = sigmoid(D)
    g_D = g_mask * sD * (1.0 - sD)

    parts = _map_tiles(lambda tr: _tile_backward(prep, tr[0], tr[1], g_color, g_D, bg),
                       list(zip(prep.tiles, results)), workers)

    g_rgb = np.zeros((n, 3), dtype)
    g_dyn = np.zeros(n, dtype)
    g_op = np.zeros(n, dtype)
    g_mean = np.zeros((n, 2), dtype)
    g_con = np.zeros((n, 3), dtype)
    # Reduced in fixed tile order: bitwise identical for any worker count.
    for part in parts:
        if part is None:
            continue
        ids, a, b, c, d, e = part
        g_rgb[ids] += a
        g_dyn[ids] += b
        g_op[ids] += c
        g_mean[ids] += d
        g_con[ids] += e

    g_color_coef, g_mu_sh = eval_colors_backward(gaussians.color, prep.color_cache, g_rgb)
    g_mu, g_ls, g_rot = project_backward(gaussians, cam, prep.proj, g_mean, g_con)
    if g_mu_sh is not None:
        g_mu = g_mu + g_mu_sh
    g_ol = g_op * prep.opacity * (1.0 - prep.opacity)
    if gaussians.dyn_logit is None:
        g_dyn = None
    elif is_dynamic is not None:
        g_dyn = np.where(is_dynamic, g_dyn, 0.0)
    forward.per_gaussian_stats.grad2d_norm = np.linalg.norm(g_mean, axis=-1)
    return RenderGradients(g_mu, g_ls, g_rot, g_ol, g_color_coef, g_dyn, g_mean)


def compose(static: GaussianSet, dynamic: GaussianSet):
    """Concatenate static then dynamic Gaussians; returns the set and its dynamic flags."""
    gs = GaussianSet.concat([static, dynamic])
    if gs.dyn_logit is None:
        gs.dyn_logit = np.zeros(len(gs), gs.dtype)
    is_dynamic = np.zeros(len(gs), bool)
    is_dynamic[len(static):] = True
    return gs, is_dynamic


def binarize_mask(mask_value, threshold=0.5):
    """Binary dynamic mask: 1 where ``mask_value > threshold`` (strict)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(mask_value) > threshold).astype(np.uint8)
