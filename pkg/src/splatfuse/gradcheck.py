"""Analytic-versus-finite-difference gradient checks, one scenario per parameter class.

Errors are reported as ``max|analytic - fd| / max|fd|`` over all checked
entries of a class, which stays meaningful when single entries are near zero.
"""

from __future__ import annotations

import numpy as np

from .decoder import DeformationDecoder, deform, deform_backward
from .hashgrid import HashGrid4D, encode, encode_backward
from .losses import photometric_loss, ssim
from .oracles import central_difference
from .rasterizer import compose, rasterize, rasterize_backward
from .scene import Camera, GaussianSet

GAUSSIAN_CLASSES = ("mu", "log_scale", "rot", "opacity_logit", "color", "dyn_logit")


def rel_error(analytic, fd):
    analytic, fd = np.asarray(analytic, float), np.asarray(fd, float)
    scale = np.abs(fd).max()
    if scale == 0.0:
        return float(np.abs(analytic).max())
    return float(np.abs(analytic - fd).max() / scale)


def random_gaussians(n, rng, sh_degree=0, dynamic=True, depth=(2.5, 5.0), spread=0.9):
    k = (sh_degree + 1) ** 2
    mu = np.c_[rng.uniform(-spread, spread, (n, 2)), rng.uniform(*depth, n)]
    color = np.concatenate([rng.uniform(0.2, 0.9, (n, 1, 3)),
                            rng.normal(0, 0.2, (n, k - 1, 3))], axis=1)
    return GaussianSet(mu, rng.uniform(-2.2, -1.3, (n, 3)), rng.normal(size=(n, 4)),
                       rng.uniform(-0.5, 2.5, n), color,
                       rng.normal(size=n) if dynamic else None)


def small_camera(size=24, seed=None):
    rng = np.random.default_rng(seed)
    eye = np.r_[rng.uniform(-0.3, 0.3, 2), -0.5]
    return Camera.look_at(eye, [0.0, 0.0, 3.5], fx=0.9 * size, width=size, height=size)


def check_rasterizer(seed, n=8, size=24, sh_degree=1, h=1e-6):
    """Every Gaussian parameter class through a linear functional of colour and mask."""
    rng = np.random.default_rng(seed)
    gs = random_gaussians(n, rng, sh_degree)
    cam = small_camera(size, rng)
    bg = rng.uniform(0, 0.3, 3)
    w_col = rng.normal(size=(size, size, 3))
    w_mask = rng.normal(size=(size, size))

    def loss():
        out = rasterize(gs, cam, bg)
        return float((out.color * w_col).sum() + (out.mask_value * w_mask).sum())

    g = rasterize_backward(gs, cam, bg, w_col, w_mask)
    errs = {}
    for name in GAUSSIAN_CLASSES:
        fd = central_difference(loss, getattr(gs, name), h)
        errs[name] = rel_error(getattr(g, name), fd)
    return errs


def check_hashgrid(seed, n=6, h=1e-6):
    """Table entries, centre and time coordinates of the encoder."""
    rng = np.random.default_rng(seed)
    grid = HashGrid4D.create([-1, -1, -1], [1, 1, 1], levels=4, features=2,
                             table_size=2**10, rng=rng, init_range=1.0)
    mu = rng.uniform(-0.95, 0.95, (n, 3))
    t = rng.uniform(0.02, 0.98, n)
    up = rng.normal(size=(n, grid.dim))

    def loss():
        return float((encode(grid, mu, t) * up).sum())

    tg, gmu, gt = encode_backward(grid, mu, t, up)
    touched = np.argwhere(tg != 0)
    pick = touched[rng.choice(len(touched), min(40, len(touched)), replace=False)]
    fd_t, an_t = [], []
    for k, i, f in pick:
        view = grid.tables[k, i:i + 1, f:f + 1]
        fd_t.append(central_difference(loss, view, h)[0, 0])
        an_t.append(tg[k, i, f])
    return {"hash.tables": rel_error(an_t, fd_t),
            "hash.mu": rel_error(gmu, central_difference(loss, mu, h)),
            "hash.t": rel_error(gt, central_difference(loss, t, h))}


def check_decoder(seed, n_static=4, n_dynamic=5, size=16, h=1e-6):
    """Decoder weights and hash tables end to end: deform, rasterize, L1 + SSIM."""
    rng = np.random.default_rng(seed)
    static = random_gaussians(n_static, rng, dynamic=False)
    dyn = random_gaussians(n_dynamic, rng, dynamic=True)
    cam = small_camera(size, rng)
    grid = HashGrid4D.create([-1.5, -1.5, 2.0], [1.5, 1.5, 5.5], levels=2, features=2,
                             table_size=2**12, rng=rng, init_range=0.5)
    dec = DeformationDecoder.create(grid.dim, 3, hidden=(8, 8), rng=rng)
    for k in dec.head_w:  # non-zero heads so every path carries gradient
        dec.head_w[k][:] = rng.normal(0, 0.05, dec.head_w[k].shape)
        dec.head_b[k][:] = rng.normal(0, 0.05, dec.head_b[k].shape)
    t = float(rng.uniform(0.1, 0.9))
    target = rng.uniform(0, 1, (size, size, 3))

    def loss():
        gs, _ = compose(static, deform(dec, grid, dyn, t))
        report, _ = photometric_loss(rasterize(gs, cam).color, target)
        return report.total

    d_gs, cache = deform(dec, grid, dyn, t, return_cache=True)
    gs, is_dyn = compose(static, d_gs)
    out = rasterize(gs, cam)
    _, g_img = photometric_loss(out.color, target)
    rg = rasterize_backward(gs, cam, (0, 0, 0), g_img, None, is_dynamic=is_dyn, forward=out)
    up = {k: getattr(rg, k)[n_static:] for k in ("mu", "log_scale", "rot", "opacity_logit",
                                                 "color")}
    dec_g, table_g, canon = deform_backward(dec, grid, cache, up)

    errs = {}
    params = dec.named_params()
    for name in ("trunk0.w", "trunk1.b", "head.mu.w", "head.rot.w", "head.color.b"):
        errs[f"decoder.{name}"] = rel_error(dec_g[name], central_difference(loss, params[name], h))
    touched = np.argwhere(table_g != 0)
    pick = touched[rng.choice(len(touched), min(30, len(touched)), replace=False)]
    fd_t = [central_difference(loss, grid.tables[k, i:i + 1, f:f + 1], h)[0, 0]
            for k, i, f in pick]
    errs["decoder.hash.tables"] = rel_error([table_g[k, i, f] for k, i, f in pick], fd_t)
    errs["decoder.canonical.mu"] = rel_error(canon["mu"], central_difference(loss, dyn.mu, h))
    return errs


def check_ssim(seed, size=16, h=1e-6):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(size, size, 3))
    b = rng.uniform(size=(size, size, 3))
    _, g = ssim(a, b)
    return {"ssim.input": rel_error(g, central_difference(lambda: ssim(a, b)[0], a, h))}


def gradient_suite(seed):
    """All parameter classes for one seed: ``name -> relative error``."""
    errs = {}
    errs.update(check_rasterizer(seed))
    errs.update(check_hashgrid(seed))
    errs.update(check_decoder(seed))
    errs.update(check_ssim(seed))
    return errs
