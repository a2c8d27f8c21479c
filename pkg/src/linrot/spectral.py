"""Windowed DFTs and diagonal complex SSMs read as spectrum analyzers.

A diagonal recurrence ``h_{n,t} = lambda_n h_{n,t-1} + k_n v_t`` with
``lambda_n = exp(-alpha_n / N + 2 pi i n / N)`` accumulates, after undoing the
phase of the current step, the DFT coefficient of bin ``n`` of the inputs seen
so far. With ``alpha = 0`` the implicit window is rectangular and off-grid tones
leak into neighbouring bins; ``alpha > 0`` weights each input by
``exp(-alpha (t - tau) / N)``, a one-sided exponential taper.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WINDOW_KINDS = ("rectangular", "hann", "poisson", "exponential")


@dataclass(frozen=True)
class Window:
    """Taper over a sample extent.

    ``poisson`` is the two-sided exponential ``exp(-alpha |tau - c| / N)``
    centred on the extent. ``exponential`` is the one-sided
    ``exp(-alpha (L - 1 - tau) / N)`` that weights recent samples most, which
    is what a decaying SSM applies at read-out time.
    """

    kind: str = "rectangular"
    N: int = 64
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window {self.kind!r}; choose from {WINDOW_KINDS}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    def weights(self, length: int | None = None) -> np.ndarray:
        L = self.N if length is None else length
        tau = np.arange(L, dtype=np.float64)
        if self.kind == "rectangular":
            return np.ones(L)
        if self.kind == "hann":
            if L == 1:
                return np.ones(1)
            return 0.5 * (1.0 - np.cos(2.0 * np.pi * tau / (L - 1)))
        if self.kind == "poisson":
            return np.exp(-self.alpha * np.abs(tau - (L - 1) / 2.0) / self.N)
        return np.exp(-self.alpha * (L - 1 - tau) / self.N)


@dataclass(frozen=True)
class Spectrum:
    coefficients: np.ndarray  # complex, (N,)

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)

    def __len__(self):
        return len(self.coefficients)


def dft_matrix(N: int, length: int) -> np.ndarray:
    n = np.arange(N)[:, None]
    tau = np.arange(length)[None, :]
    return np.exp(-2j * np.pi * n * tau / N)


def windowed_dft(signal, window: Window) -> Spectrum:
    """``X_n = sum_tau exp(-2 pi i n tau / N) v_tau w_tau`` for n = 0..N-1 (naive O(N L))."""
    v = np.asarray(signal)
    w = window.weights(len(v))
    return Spectrum(dft_matrix(window.N, len(v)) @ (v * w))


def leakage_metrics(spectrum: Spectrum, true_frequency: float, one_sided: bool = True) -> tuple[int, float]:
    """``(peak_bin_error, sidelobe_ratio)``.

    The sidelobe ratio is the largest magnitude more than one bin from the peak
    divided by the peak magnitude. For real signals the spectrum is mirrored,
    so by default only bins ``0..N/2`` are inspected.
    """
    mag = spectrum.magnitudes
    if mag.size == 0:
        raise ValueError("empty spectrum")
    if one_sided:
        mag = mag[: len(mag) // 2 + 1]
    peak = int(np.argmax(mag))
    far = np.abs(np.arange(len(mag)) - peak) > 1
    top = mag[peak]
    side = float(mag[far].max()) if far.any() else 0.0
    ratio = side / top if top > 0 else 0.0
    return abs(peak - int(round(true_frequency))), ratio


def analyzer_poles(N: int, alphas) -> np.ndarray:
    n = np.arange(N)
    return np.exp(-np.asarray(alphas, dtype=np.float64) / N + 2j * np.pi * n / N)


def ssm_as_analyzer(q, k, v_seq, alphas, N: int, return_states: bool = False):
    """Run the diagonal complex SSM and read out ``Re sum_n q_n exp(-2 pi i n t / N) h_{n,t}``.

    Parameters
    ----------
    q, k : (N,) real read-in and read-out weights
    v_seq : (T,) scalar input
    alphas : scalar or (N,) real decay rates (0 gives a pure rotation)
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v_seq, dtype=np.float64)
    lam = analyzer_poles(N, np.broadcast_to(alphas, (N,)))
    n = np.arange(N)
    h = np.zeros(N, dtype=np.complex128)
    out = np.empty(len(v))
    states = np.empty((len(v), N), dtype=np.complex128)
    for t, vt in enumerate(v):
        h = lam * h + k * vt
        states[t] = h
        out[t] = np.real(np.sum(q * np.exp(-2j * np.pi * n * t / N) * h))
    return (out, states) if return_states else out


def dft_readout(q, k, v_seq, N: int, window: Window | None = None) -> np.ndarray:
    """Oracle for :func:`ssm_as_analyzer`: ``Re sum_n q_n k_n X_n(t)`` with X the DFT of v_0..v_t."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v_seq, dtype=np.float64)
    window = window or Window("rectangular", N)
    out = np.empty(len(v))
    for t in range(len(v)):
        X = windowed_dft(v[: t + 1], window).coefficients
        out[t] = np.real(np.sum(q * k * X))
    return out


def tone(frequency_bins: float, N: int, length: int | None = None) -> np.ndarray:
    tau = np.arange(N if length is None else length)
    return np.cos(2.0 * np.pi * frequency_bins * tau / N)


def spectral_demo(tone_bins: float = 7.3, N: int = 64, alpha: float = 4.0) -> tuple[list[tuple], list[dict]]:
    """Spectra of an off-grid tone under rectangular, Hann and Poisson windows.

    Returns ``(rows, metrics)``: rows are ``(window_kind, bin, magnitude)`` and
    metrics hold one dict per window with the peak bin and sidelobe ratio.
    """
    v = tone(tone_bins, N)
    rows: list[tuple] = []
    metrics: list[dict] = []
    for win in (Window("rectangular", N), Window("hann", N), Window("poisson", N, alpha)):
        spec = windowed_dft(v, win)
        for b, m in enumerate(spec.magnitudes):
            rows.append((win.kind, b, float(m)))
        err, ratio = leakage_metrics(spec, tone_bins)
        peak = int(np.argmax(spec.magnitudes[: N // 2 + 1]))
        metrics.append({"window": win.kind, "alpha": win.alpha, "peak_bin": peak, "peak_bin_error": err, "sidelobe_ratio": ratio})
    return rows, metrics
