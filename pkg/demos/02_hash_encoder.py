"""The 4D hash grid: levels, dense vs hashed tables, and smooth interpolation."""

import numpy as np

from splatfuse import HashGrid4D, encode
from splatfuse.hashgrid import hash_index, interpolation_weights

grid = HashGrid4D.create([-1, -1, -1], [1, 1, 1], rng=0, init_range=1.0)
print("vertices per axis:", grid.resolutions)
for k, res in enumerate(grid.resolutions):
    print(f"  level {k}: {res**4:>9} vertices -> {'dense' if grid.is_dense(k) else 'hashed'}")
print("embedding width:", grid.dim)

# Weights of the 16 surrounding vertices always sum to one.
rng = np.random.default_rng(1)
mu, t = rng.uniform(-1, 1, (5, 3)), rng.uniform(0, 1, 5)
w, idx = interpolation_weights(grid, mu, t, level=3)
print("weight sums:", w.sum(axis=1))

# Sliding along time changes the features continuously.
ts = np.linspace(0, 1, 9)
track = encode(grid, np.zeros((9, 3)), ts)
print("level-0 features along t:")
print(np.round(track[:, :2], 4))

# Collisions on the finest level stay spread out.
k = grid.levels - 1
corners = rng.integers(0, grid.resolutions[k], (50_000, 4))
load = np.bincount(hash_index(corners, k, grid), minlength=grid.table_size)
print(f"finest level bucket load: max {load.max()}, mean {load.mean():.2f}")
