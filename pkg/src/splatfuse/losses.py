"""Photometric / mask losses with analytic gradients, and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, TooSmall

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2
BCE_EPS = 1e-7


def _check(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"shape {pred.shape} != {gt.shape}")
    return pred, gt


@dataclass
class LossReport:
    l1: float
    ssim: float
    total: float
    lambda_ssim: float
    bce: Optional[float] = None
    weight_bce: float = 1.0


def l1_loss(pred, gt):
    pred, gt = _check(pred, gt)
    diff = pred - gt
    n = diff.size
    return float(np.abs(diff).sum() / n), np.sign(diff) / n


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    return g / g.sum()


def _filter(x, g):
    """Valid separable correlation over the first two axes."""
    y = sliding_window_view(x, len(g), axis=0) @ g
    return sliding_window_view(y, len(g), axis=1) @ g


def _filter_adjoint(y, g):
    k = len(g) - 1
    pad = [(k, k), (k, k)] + [(0, 0)] * (y.ndim - 2)
    return _filter(np.pad(y, pad), g[::-1])


def ssim(pred, gt, *, window=SSIM_WINDOW, sigma=SSIM_SIGMA, return_map=False):
    """Mean SSIM over valid window positions and channels, with gradient w.r.t. ``pred``."""
    x, y = _check(pred, gt)
    if x.shape[0] < window or x.shape[1] < window:
        raise TooSmall(f"images must be at least {window}x{window}, got {x.shape[:2]}")
    g = gaussian_window(window, sigma)
    mx, my = _filter(x, g), _filter(y, g)
    exx, eyy, exy = _filter(x * x, g), _filter(y * y, g), _filter(x * y, g)
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    A1 = 2 * mx * my + C1
    A2 = 2 * cxy + C2
    B1 = mx * mx + my * my + C1
    B2 = vx + vy + C2
    smap = (A1 * A2) / (B1 * B2)
    n = smap.size
    value = float(smap.mean())

    # d S / d (mx, exx, exy) at each window position, then scatter back.
    # S = A1 A2 / (B1 B2); vx and cxy also depend on mx.
    dA1 = 2 * my
    dA2 = -2 * my
    dB1 = 2 * mx
    dB2 = -2 * mx
    dS_dmx = (dA1 * A2 + A1 * dA2) / (B1 * B2) - smap * (dB1 / B1 + dB2 / B2)
    dS_dexx = -smap / B2
    dS_dexy = 2 * A1 / (B1 * B2)
    grad = (_filter_adjoint(dS_dmx, g) + 2 * x * _filter_adjoint(dS_dexx, g)
            + y * _filter_adjoint(dS_dexy, g)) / n
    if return_map:
        return value, grad, smap
    return value, grad


def bce_mask_loss(mask_value, ref_mask, eps=BCE_EPS):
    p, m = _check(mask_value, ref_mask)
    m = m.astype(p.dtype if np.issubdtype(p.dtype, np.floating) else np.float64)
    pc = np.clip(p, eps, 1 - eps)
    n = pc.size
    value = -np.sum(m * np.log(pc) + (1 - m) * np.log1p(-pc)) / n
    inside = (p >= eps) & (p <= 1 - eps)
    grad = np.where(inside, (pc - m) / (pc * (1 - pc)), 0.0) / n
    return float(value), grad


def mse(pred, gt):
    pred, gt = _check(pred, gt)
    return float(np.mean((np.asarray(pred, np.float64) - gt) ** 2))


def psnr(pred, gt):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; ``math.inf`` when identical."""
    err = mse(pred, gt)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def photometric_loss(pred, gt, lambda_ssim=0.2):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)`` with its gradient."""
    l1, g_l1 = l1_loss(pred, gt)
    s, g_s = ssim(pred, gt)
    total = (1 - lambda_ssim) * l1 + lambda_ssim * (1 - s)
    grad = (1 - lambda_ssim) * g_l1 - lambda_ssim * g_s
    return LossReport(l1, s, total, lambda_ssim), grad
