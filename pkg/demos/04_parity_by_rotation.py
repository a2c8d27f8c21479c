#!/usr/bin/env python3
"""Why a selective rotation solves parity, and how it fails to extrapolate.

Turn a 2-d state by pi on every 1 and leave it alone on every 0. The state
then points one way for even counts and the opposite way for odd counts, at
any length. A learned angle is never exactly pi; a small error delta grows
linearly with the number of ones, so accuracy decays with length.
"""
# %%
import numpy as np

from linrot import recurrence as R, tasks

spec = tasks.TaskSpec("parity", 2, 64, 64, 1024)


def rotation_parity(bits, flip_angle):
    # one rotated pair; only the first key is written, so it fixes the phase reference
    B, T = bits.shape
    step = np.where(bits == 1, flip_angle, 0.0)[..., None]
    acc = np.cumsum(step, axis=1)
    k = np.zeros((B, T, 2))
    k[:, 0, 0] = 1.0
    q = np.zeros((B, T, 2))
    q[..., 0] = 1.0
    v = np.ones((B, T, 1))
    out, _ = R.scan(q, k, v, R.TransitionSpec("selective-rotation", angles=acc))
    # the first token is rotated too, so fold its own flip back out of the reference
    sign = np.where(bits[:, :1] == 1, -1.0, 1.0)
    return (out[..., 0] * sign < 0).astype(int)


# %%
for length in (64, 256, 1024):
    batch = tasks.generate(spec, 64, length, seed=1)
    acc = {}
    for delta in (0.0, 0.01, 0.03):
        pred = rotation_parity(batch.inputs, np.pi + delta)
        acc[delta] = (pred == batch.targets).mean()
    print(f"length {length:>5}: " + ", ".join(f"delta={d:<4} acc {a:.3f}" for d, a in acc.items()))

# %% [markdown]
# With an error of delta per flip, the phase after n ones is n * delta, and
# the sign read-out breaks once n * delta passes pi / 2. Roughly half the bits
# are ones, so the break-even length is about pi / delta.

# %%
for delta in (0.01, 0.03):
    print(f"delta={delta}: expected break-even length ~ {np.pi / delta:.0f}")
