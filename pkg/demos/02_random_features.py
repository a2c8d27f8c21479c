#!/usr/bin/env python3
"""Softmax attention through complex random Fourier features.

exp(q.k) for unit vectors is a Gaussian kernel times a constant, and the
Gaussian kernel has an unbiased estimate as an average of complex exponentials.
Each feature is a unit-modulus phase, so moving from one query to the next is a
diagonal rotation of the state.
"""
# %%
import numpy as np

from linrot import rff
from linrot.numerics import Rng

rng = Rng(0, "demo/rff")
T, d = 32, 8
q, k, v = (rng.child(n).normal((T, d)) for n in "qkv")
q /= np.linalg.norm(q, axis=1, keepdims=True)
k /= np.linalg.norm(k, axis=1, keepdims=True)

# %% [markdown]
# Direct evaluation (explicit feature maps) and the recurrent form agree.

# %%
ens = rff.make_ensemble(2048, d, 1.0, seed=0)
direct = rff.rff_attention_direct(q, k, v, ens)
recurrent, _ = rff.rff_attention_recurrent(q, k, v, ens)
print("direct vs recurrent:", np.max(np.abs(direct - recurrent)))

# %% [markdown]
# Error against exact softmax attention shrinks like D^{-1/2}.

# %%
counts = [100, 1000, 10000]
errs = rff.softmax_errors(counts, seeds=range(5))
for D, row in zip(counts, errs):
    print(f"D={D:>6}: mean max-abs error {row.mean():.4f} (seeds {np.round(row, 4)})")
print("ratio D=1e2 / D=1e4:", errs[0].mean() / errs[2].mean(), "(sqrt(100) = 10)")

# %% [markdown]
# The best feature scale for a pair of unit vectors at angle theta is
# tan(theta / 2). The large-D error curve has its minimum there.

# %%
grid = np.arange(1e-3, 3.0, 1e-3)
for theta in (np.pi / 6, np.pi / 3, np.pi / 2, 2 * np.pi / 3):
    s = grid[np.argmin(rff.analytic_limit_error(grid, np.cos(theta)))]
    print(f"theta={theta:.3f}: argmin {s:.3f}, tan(theta/2) {rff.optimal_sigma(theta):.3f}")
