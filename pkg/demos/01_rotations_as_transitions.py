#!/usr/bin/env python3
"""Rotations inside a linear-attention recurrence.

The state update is S_t = S_{t-1} A_t + v_t k_t^T with read-out o_t = S_t q_t.
When A_t is a block rotation, the whole scan equals an identity scan on
rotated queries and keys, which is how RoPE and its input-dependent variant
fit into a recurrent model.
"""
# %%
import numpy as np

from linrot import posenc, recurrence as R
from linrot.numerics import Rng

rng = Rng(0, "demo/rotations")
T, dk, dv = 12, 8, 4
q, k, v = (rng.child(n).normal((T, d)) for n, d in (("q", dk), ("k", dk), ("v", dv)))

# %% [markdown]
# Fixed-frequency RoPE as a transition: every step turns pair n by temps[n].

# %%
temps = posenc.make_schedule("rope-exponential", dk, 1e-2)
fixed = R.fixed_rotation(T, temps)
out_scan, _ = R.scan(q, k, v, fixed)
qr, kr = posenc.rope_apply(q, k, np.arange(1, T + 1), temps)
out_rope, _ = R.scan(qr, kr, v, R.TransitionSpec("identity"))
print("fixed rotation vs rotated identity scan:", np.max(np.abs(out_scan - out_rope)))

# %% [markdown]
# Selective rotation: the per-step angle depends on the input. The trick still
# holds with the accumulated angle in place of position times frequency.

# %%
step = rng.child("angles").uniform((T, dk // 2), -np.pi, np.pi)
acc = np.cumsum(step, axis=0)
sel = R.TransitionSpec("selective-rotation", angles=acc)
out_sel, _ = R.scan(q, k, v, sel)
out_trick, _ = R.scan(posenc.rotate_pairs(q, acc), posenc.rotate_pairs(k, acc), v, R.TransitionSpec("identity"))
print("selective rotation vs rotated identity scan:", np.max(np.abs(out_sel - out_trick)))

# %% [markdown]
# Adding a decay gate keeps the trick only when both channels of a pair share
# the decay. The chunked scan agrees with the sequential one.

# %%
pair = rng.child("decay").uniform((T, dk // 2), 0.7, 0.99)
decay = np.repeat(pair, 2, axis=-1)
both = R.compose_with_posenc(decay, acc)
seq, _ = R.scan(q, k, v, both)
chk, _ = R.chunked_scan(q, k, v, both, chunk=4)
mat = R.attention_outputs(q, k, v, both)
print("sequential vs chunked:", np.max(np.abs(seq - chk)))
print("sequential vs attention matrix:", np.max(np.abs(seq - mat)))

# %%
try:
    R.compose_with_posenc(rng.child("bad").uniform((T, dk), 0.7, 0.99), acc)
except Exception as e:
    print("untied decay rejected:", e)
