"""Wall-clock micro-benchmarks of the recurrence execution paths.

Timings are per token, median over repetitions. Before timing, the chunked
scan is checked against the sequential one on the same inputs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import recurrence
from .numerics.rng import Rng

MODES = ("scan-sequential", "scan-chunked", "attention-matrix")
CSV_HEADER = ("mode", "T", "d", "reps", "seconds_per_token", "seconds_total")


class EquivalenceGateError(AssertionError):
    pass


@dataclass(frozen=True)
class Timing:
    mode: str
    T: int
    d: int
    reps: int
    seconds_per_token: float
    seconds_total: float

    def row(self) -> tuple:
        return (self.mode, self.T, self.d, self.reps, f"{self.seconds_per_token:.6e}", f"{self.seconds_total:.6e}")


def _inputs(T: int, d: int, seed: int):
    r = Rng(seed, f"bench/{T}/{d}")
    q = r.child("q").normal((T, d)) / np.sqrt(d)
    k = r.child("k").normal((T, d)) / np.sqrt(d)
    v = r.child("v").normal((T, d))
    angles = np.cumsum(r.child("angles").uniform((T, d // 2), -0.5, 0.5), axis=0)
    return q, k, v, recurrence.TransitionSpec("selective-rotation", angles=angles)


def _runner(mode: str):
    if mode == "scan-sequential":
        return lambda q, k, v, tr: recurrence.scan(q, k, v, tr)[0]
    if mode == "scan-chunked":
        return lambda q, k, v, tr: recurrence.chunked_scan(q, k, v, tr, chunk=64)[0]
    if mode == "attention-matrix":
        return recurrence.structured_attention_outputs
    raise ValueError(f"unknown bench mode {mode!r}; choose from {MODES}")


def equivalence_gate(T: int, d: int, seed: int = 0, tol: float = 1e-12) -> float:
    """Max-abs difference between chunked and sequential scans; raises above ``tol``."""
    q, k, v, tr = _inputs(T, d, seed)
    seq = recurrence.scan(q, k, v, tr)[0]
    chk = recurrence.chunked_scan(q, k, v, tr, chunk=64)[0]
    err = float(np.max(np.abs(seq - chk)))
    if not err <= tol:
        raise EquivalenceGateError(f"chunked scan deviates from sequential by {err:.3e} at T={T}, d={d}")
    return err


def time_mode(mode: str, T: int, d: int = 16, reps: int = 3, seed: int = 0, gate: bool = True) -> Timing:
    if T < 1 or d < 2 or d % 2:
        raise ValueError("need T >= 1 and an even d >= 2")
    fn = _runner(mode)
    if gate and mode == "scan-chunked":
        equivalence_gate(T, d, seed)
    q, k, v, tr = _inputs(T, d, seed)
    times = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        fn(q, k, v, tr)
        times.append(time.perf_counter() - t0)
    total = float(np.median(times))
    return Timing(mode, T, d, reps, max(total, 1e-12) / T, total)


def loglog_slope(timings: list[Timing]) -> float:
    """Least-squares slope of log(total time) against log(T)."""
    T = np.log([t.T for t in timings])
    y = np.log([t.seconds_total for t in timings])
    return float(np.polyfit(T, y, 1)[0])


def complexity_probe(lengths=(256, 512, 1024, 2048, 4096, 8192), d: int = 16, reps: int = 3, seed: int = 0) -> dict:
    """Timings for every mode over ``lengths`` plus each mode's log-log slope."""
    rows: list[Timing] = []
    slopes = {}
    for mode in MODES:
        got = [time_mode(mode, T, d, reps, seed) for T in lengths]
        rows.extend(got)
        slopes[mode] = loglog_slope(got)
    return {"timings": rows, "slopes": slopes}
