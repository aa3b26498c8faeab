"""Multi-resolution hashed feature grid over (x, y, z, t).

Each level ``k`` has ``N_k = floor(N0 * b**k)`` vertices per axis spanning the
normalized domain ``[0, 1]^4``. A query is mapped to level coordinates, the 16
surrounding vertices are looked up (dense row-major indexing when the level
fits in the table, prime-XOR hashing otherwise) and blended with quadrilinear
weights. Levels are concatenated in order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PRIMES = np.array([1, 2654435761, 805459861, 3674653429], dtype=np.uint64)
# bit pattern of the 16 corners, shape (16, 4)
CORNERS = ((np.arange(16)[:, None] >> np.arange(4)[None, :]) & 1).astype(np.int64)


@dataclass
class HashGrid4D:
    levels: int
    features: int
    table_size: int
    base_resolution: int
    growth_factor: float
    box_min: np.ndarray
    box_max: np.ndarray
    tables: np.ndarray  # (levels, table_size, features)

    def __post_init__(self):
        if self.levels < 1 or self.features < 1:
            raise ValueError("levels and features must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")
        if self.base_resolution < 2:
            raise ValueError("base_resolution must be >= 2")
        self.box_min = np.asarray(self.box_min, np.float64).reshape(3)
        self.box_max = np.asarray(self.box_max, np.float64).reshape(3)
        if np.any(self.box_max <= self.box_min):
            raise ValueError("empty domain box")
        shape = (self.levels, self.table_size, self.features)
        if self.tables.shape != shape:
            raise ValueError(f"tables must have shape {shape}")

    @classmethod
    def create(cls, box_min, box_max, levels=8, features=2, table_size=2**15,
               base_resolution=8, growth_factor=1.5, rng=None, init_range=1e-4,
               dtype=np.float64):
        rng = np.random.default_rng(rng)
        tables = rng.uniform(-init_range, init_range,
                             (levels, table_size, features)).astype(dtype)
        return cls(levels, features, table_size, base_resolution, growth_factor,
                   box_min, box_max, tables)

    @property
    def resolutions(self):
        return [int(np.floor(self.base_resolution * self.growth_factor**k))
                for k in range(self.levels)]

    @property
    def dim(self):
        return self.levels * self.features

    def is_dense(self, level):
        return self.resolutions[level] ** 4 <= self.table_size

    def copy(self):
        return HashGrid4D(self.levels, self.features, self.table_size, self.base_resolution,
                          self.growth_factor, self.box_min.copy(), self.box_max.copy(),
                          self.tables.copy())


def hash_index(corner, level, grid: HashGrid4D):
    """Table index of integer vertex coordinates ``corner`` (..., 4) at ``level``."""
    corner = np.asarray(corner, dtype=np.int64)
    res = grid.resolutions[level]
    if grid.is_dense(level):
        x, y, z, t = corner[..., 0], corner[..., 1], corner[..., 2], corner[..., 3]
        return x + res * (y + res * (z + res * t))
    c = corner.astype(np.uint64)
    h = c[..., 0] * PRIMES[0]
    for a in range(1, 4):
        h = h ^ (c[..., a] * PRIMES[a])
    return (h & np.uint64(grid.table_size - 1)).astype(np.int64)


def _normalize(grid, mu, t):
    mu = np.atleast_2d(mu)
    t = np.atleast_1d(t).astype(mu.dtype)
    extent = grid.box_max - grid.box_min
    raw = np.concatenate([(mu - grid.box_min) / extent, t[:, None]], axis=1)
    p = np.clip(raw, 0.0, 1.0)
    inside = (raw >= 0.0) & (raw <= 1.0)
    return p, inside, extent


def _level_corners(grid, p, level):
    res = grid.resolutions[level]
    scaled = p * (res - 1)
    base = np.minimum(np.floor(scaled).astype(np.int64), res - 2)
    frac = scaled - base
    corners = base[:, None, :] + CORNERS[None, :, :]  # (N, 16, 4)
    idx = hash_index(corners, level, grid)
    # per-axis factors: frac for bit 1, 1 - frac for bit 0
    fac = np.where(CORNERS[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return idx, fac, res


def interpolation_weights(grid, mu, t, level):
    """Quadrilinear corner weights (N, 16) and table indices (N, 16) at one level."""
    p, _, _ = _normalize(grid, mu, t)
    idx, fac, _ = _level_corners(grid, p, level)
    return np.prod(fac, axis=-1), idx


def encode(grid: HashGrid4D, mu, t):
    """Embedding (N, levels*features) for centres ``mu`` (N, 3) at times ``t`` (N,)."""
    p, _, _ = _normalize(grid, mu, t)
    feats = []
    for k in range(grid.levels):
        idx, fac, _ = _level_corners(grid, p, k)
        w = np.prod(fac, axis=-1)
        feats.append(np.einsum("nc,ncf->nf", w, grid.tables[k][idx]))
    return np.concatenate(feats, axis=1)


def encode_backward(grid: HashGrid4D, mu, t, upstream, table_grad=None):
    """Gradients w.r.t. the tables (dense, same shape), the centres and the times.

    ``table_grad`` may be passed in to accumulate into an existing buffer.
    """
    p, inside, extent = _normalize(grid, mu, t)
    upstream = np.atleast_2d(upstream)
    n = len(p)
    if table_grad is None:
        table_grad = np.zeros_like(grid.tables)
    g_p = np.zeros((n, 4), p.dtype)
    F = grid.features
    for k in range(grid.levels):
        idx, fac, res = _level_corners(grid, p, k)
        w = np.prod(fac, axis=-1)
        up = upstream[:, k * F:(k + 1) * F]
        np.add.at(table_grad[k], idx.ravel(), (w[:, :, None] * up[:, None, :]).reshape(-1, F))
        feat_dot = np.einsum("ncf,nf->nc", grid.tables[k][idx], up)  # (N, 16)
        sign = np.where(CORNERS == 1, 1.0, -1.0)  # d fac / d frac
        for a in range(4):
            others = np.prod(np.delete(fac, a, axis=-1), axis=-1)
            g_p[:, a] += np.sum(feat_dot * others * sign[None, :, a], axis=1) * (res - 1)
    g_p = g_p * inside
    g_mu = g_p[:, :3] / extent
    g_t = g_p[:, 3]
    return table_grad, g_mu, g_t
