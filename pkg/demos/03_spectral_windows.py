#!/usr/bin/env python3
"""A rotating state as a spectrum analyzer.

A diagonal state with poles on the unit circle accumulates a sliding DFT of
its input. Decay moves the poles inward, which at read-out acts like a taper
(window) over past samples and trades resolution for lower leakage.
"""
# %%
import numpy as np

from linrot import spectral
from linrot.numerics import Rng

N, tone_bins = 64, 7.3

# %% [markdown]
# Off-grid tone, three windows. Peak bin and peak-to-largest-sidelobe ratio.

# %%
rows, metrics = spectral.spectral_demo(tone_bins, N, alpha=4.0)
for m in metrics:
    print(f"{m['window']:>12} alpha={m['alpha']:<4} peak bin {m['peak_bin']} sidelobe ratio {m['sidelobe_ratio']:.4f}")

# %%
rect = np.array([mag for w, b, mag in rows if w == "rectangular"])
hann = np.array([mag for w, b, mag in rows if w == "hann"])
print("bins 0..15, rectangular:", np.round(rect[:16] / rect.max(), 3))
print("bins 0..15, hann:       ", np.round(hann[:16] / hann.max(), 3))

# %% [markdown]
# A purely imaginary (undecayed) diagonal SSM reproduces the DFT read-out.

# %%
r = Rng(0, "demo/spectral")
q, k = r.child("q").normal((N,)), r.child("k").normal((N,))
x = spectral.tone(tone_bins, N)
ssm = spectral.ssm_as_analyzer(q, k, x, 0.0, N)
dft = spectral.dft_readout(q, k, x, N)
print("SSM vs DFT read-out:", np.max(np.abs(ssm - dft)))

# %% [markdown]
# With decay alpha the poles sit at radius exp(-alpha / N).

# %%
for alpha in (0.0, 4.0):
    radius = np.abs(spectral.analyzer_poles(N, alpha))
    print(f"alpha={alpha}: pole radius {radius.max():.6f}, exp(-alpha/N) {np.exp(-alpha / N):.6f}")
