"""Numerical certification suites.

Each suite returns a list of :class:`Check` records holding the measured
value, the tolerance it is compared against and a pass flag. :func:`run`
bundles them into a JSON-ready report.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import model as M
from . import posenc, recurrence, rff, spectral
from .numerics import autodiff as ad
from .numerics.rng import Rng

SCHEMA_VERSION = 1
SUITES = ("equivalence", "rff", "theorem", "spectral", "gradients", "householder")


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tolerance: float
    passed: bool
    relation: str = "<="
    seconds: float = 0.0
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _check(suite, name, measured, tolerance, relation="<=", detail="") -> Check:
    measured = float(measured)
    ok = {"<=": measured <= tolerance, "<": measured < tolerance, ">=": measured >= tolerance}[relation]
    return Check(suite, name, measured, float(tolerance), bool(ok and np.isfinite(measured)), relation, detail=detail)


# ------------------------------------------------------------- equivalence


def _random_streams(seed: int, T: int, dk: int, dv: int):
    r = Rng(seed, "verify/equivalence")
    q = r.child("q").normal((T, dk))
    k = r.child("k").normal((T, dk))
    v = r.child("v").normal((T, dv))
    steps = r.child("angles").uniform((T, dk // 2), -np.pi, np.pi)
    decay = r.child("decay").uniform((T, dk // 2), 0.5, 1.0)
    beta = r.child("beta").uniform((T,), 0.0, 1.0)
    return q, k, v, np.cumsum(steps, axis=0), np.repeat(decay, 2, axis=1), beta


def _transition(kind: str, T, dk, angles, decay, beta, temps):
    if kind == "identity":
        return recurrence.TransitionSpec("identity")
    if kind == "decay":
        return recurrence.TransitionSpec("decay", decay=decay)
    if kind == "fixed-rotation":
        return recurrence.fixed_rotation(T, temps)
    if kind == "selective-rotation":
        return recurrence.TransitionSpec("selective-rotation", angles=angles)
    if kind == "decay-and-rotation":
        return recurrence.compose_with_posenc(decay, angles)
    return recurrence.TransitionSpec("delta-rule", beta=beta)


def suite_equivalence(seeds: int = 20, angle_fault: float = 0.0) -> list[Check]:
    """Rotation scan vs the rotated-q/k identity scan, and scan vs explicit scores for every kind.

    ``angle_fault`` adds ``fault * t`` to the angles seen by the rotation scan
    only (a corrupted rotation), which must make the first check fail.
    """
    trick, chunk = 0.0, 0.0
    per_kind = {kind: 0.0 for kind in recurrence.KINDS}
    for seed in range(seeds):
        shape = Rng(seed, "verify/shape")
        T = int(shape.integers(1, 129, ()))
        dk = 2 * int(shape.integers(1, 33, ()))
        dv = int(shape.integers(1, 17, ()))
        q, k, v, angles, decay, beta = _random_streams(seed, T, dk, dv)
        corrupted = angles + angle_fault * np.arange(1, T + 1)[:, None]
        rot = recurrence.scan(q, k, v, recurrence.TransitionSpec("selective-rotation", angles=corrupted))[0]
        qr, kr = posenc.rotate_pairs(q, angles), posenc.rotate_pairs(k, angles)
        ident = recurrence.scan(qr, kr, v, recurrence.TransitionSpec("identity"))[0]
        trick = max(trick, np.max(np.abs(rot - ident)))
        temps = posenc.make_schedule("rope-exponential", dk, 1e-4)
        for kind in recurrence.KINDS:
            kk = k / np.linalg.norm(k, axis=1, keepdims=True) if kind == "delta-rule" else k
            spec = _transition(kind, T, dk, angles, decay, beta, temps)
            a = recurrence.scan(q, kk, v, spec)[0]
            b = recurrence.attention_outputs(q, kk, v, spec)
            per_kind[kind] = max(per_kind[kind], np.max(np.abs(a - b)))
            if kind != "delta-rule":
                c = recurrence.chunked_scan(q, kk, v, spec, chunk=16)[0]
                chunk = max(chunk, np.max(np.abs(a - c)))
    out = [_check("equivalence", "rope-trick", trick, 1e-10, detail=f"{seeds} seeds, T<=128, head_dim<=64")]
    out += [_check("equivalence", f"scan-vs-scores/{kind}", err, 1e-10) for kind, err in per_kind.items()]
    out.append(_check("equivalence", "chunked-vs-sequential", chunk, 1e-10))
    return out


# --------------------------------------------------------------------- rff


def suite_rff(seeds: int = 10, tables: dict | None = None) -> list[Check]:
    worst = 0.0
    for seed in range(seeds):
        r = Rng(seed, "verify/rff")
        q = r.child("q").normal((32, 8))
        k = r.child("k").normal((32, 8))
        v = r.child("v").normal((32, 8))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        k /= np.linalg.norm(k, axis=1, keepdims=True)
        ens = rff.make_ensemble(2048, 8, 1.0, seed)
        direct = rff.rff_attention_direct(q, k, v, ens)
        recur, _ = rff.rff_attention_recurrent(q, k, v, ens)
        worst = max(worst, np.max(np.abs(direct - recur)))
    counts = [100, 1000, 10000]
    per_seed = rff.softmax_errors(counts, seeds=range(5))
    errs = per_seed.mean(axis=1)
    if tables is not None:
        rows = [(D, s, f"{per_seed[i, s]:.10g}") for i, D in enumerate(counts) for s in range(per_seed.shape[1])]
        tables["rff-convergence"] = (("num_features", "seed", "abs_error"), rows)
    ratio = errs[0] / errs[2]
    return [
        _check("rff", "direct-vs-recurrent", worst, 1e-8, detail=f"T=32 d=8 D=2048, {seeds} seeds"),
        _check("rff", "softmax-error@D=1e4", errs[2], 0.05, "<", detail=f"errors at D=1e2,1e3,1e4: {np.round(errs, 4).tolist()}"),
        _check("rff", "error-ratio>=5", ratio, 5.0, ">="),
        _check("rff", "error-ratio<=20", ratio, 20.0),
    ]


# ----------------------------------------------------------------- theorem

THETAS = (np.pi / 6, np.pi / 3, np.pi / 2, 2 * np.pi / 3)


def suite_theorem(trials: int = 500, num_features: int = 2048, tables: dict | None = None) -> list[Check]:
    out, rows = [], []
    fine = np.arange(1e-3, 4.0, 1e-3)
    coarse = np.round(np.arange(0.05, 3.0 + 1e-9, 0.05), 10)
    for theta in THETAS:
        target = rff.optimal_sigma(theta)
        label = f"theta={theta:.4f}"
        s_fine = fine[np.argmin(rff.analytic_limit_error(fine, np.cos(theta)))]
        out.append(_check("theorem", f"analytic-argmin/{label}", abs(s_fine - target), 1e-3, detail=f"argmin {s_fine:.4f} vs tan(theta/2) {target:.4f}"))
        mc = rff.monte_carlo_error(theta, coarse, num_features, trials)
        s_mc = coarse[np.argmin(mc)]
        rows.extend((f"{theta:.10g}", f"{s:g}", f"{e:.10g}") for s, e in zip(coarse, mc))
        out.append(_check("theorem", f"monte-carlo-argmin/{label}", abs(s_mc - target), 2 * 0.05 + 1e-9, detail=f"argmin {s_mc:.2f} vs {target:.4f}"))
    if tables is not None:
        tables["theorem-mse"] = (("theta", "sigma", "mse"), rows)
    return out


# ---------------------------------------------------------------- spectral


def suite_spectral(tone_bins: float = 7.3, N: int = 64, alpha: float = 4.0) -> list[Check]:
    _, metrics = spectral.spectral_demo(tone_bins, N, alpha)
    by = {m["window"]: m for m in metrics}
    out = [_check("spectral", f"peak-bin-error/{w}", m["peak_bin_error"], 0) for w, m in by.items()]
    rect = by["rectangular"]["sidelobe_ratio"]
    out.append(_check("spectral", "hann-sidelobes<rect", by["hann"]["sidelobe_ratio"], rect, "<"))
    out.append(_check("spectral", f"poisson(alpha={alpha:g})-sidelobes<rect", by["poisson"]["sidelobe_ratio"], rect, "<"))
    r = Rng(0, "verify/spectral")
    q, k = r.child("q").normal((N,)), r.child("k").normal((N,))
    v = spectral.tone(tone_bins, N)
    ssm = spectral.ssm_as_analyzer(q, k, v, 0.0, N)
    dft = spectral.dft_readout(q, k, v, N)
    out.append(_check("spectral", "imaginary-ssm-vs-dft", np.max(np.abs(ssm - dft)), 1e-10))
    return out


# --------------------------------------------------------------- gradients


def gradient_report(config: M.ModelConfig | None = None, T: int = 8, batch: int = 2, seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Worst relative gradient error per parameter of a small model.

    A step of 1e-5 balances truncation against cancellation for gradients
    near the 1e-6 absolute floor; 1e-6 lets rounding noise reach 1e-4.
    """
    config = config or M.ModelConfig(
        vocab_size=5, model_dim=16, num_heads=2, num_layers=1, mixer="gla", posenc="selective-rope",
        phase_gate=True, bias=True, weight_norm=True, precision="f64",
    )
    model = M.Model(config, seed=seed)
    r = Rng(seed, "verify/gradients")
    tokens = r.integers(0, config.vocab_size, (batch, T))
    targets = r.child("targets").integers(0, config.vocab_size, (batch, T))
    mask = np.ones((batch, T), dtype=bool)
    tape = model.tape_params()
    leaves = [v for v in tape.values() if isinstance(v, ad.Var)]

    def fn():
        return M.loss(model.forward(tokens, tape), targets, mask)

    return {p.name: ad.gradcheck(fn, [p], step=step) for p in leaves}


def suite_gradients() -> list[Check]:
    report = gradient_report()
    worst = max(report, key=report.get)
    out = [_check("gradients", f"param/{name}", err, 1e-4) for name, err in report.items()]
    out.append(_check("gradients", "all-parameters", report[worst], 1e-4, detail=f"worst: {worst}"))
    return out


# ------------------------------------------------------------- householder


def suite_householder(count: int = 100, seed: int = 0) -> list[Check]:
    thetas = Rng(seed, "verify/householder").uniform((count,), -np.pi, np.pi)
    worst = 0.0
    for th in thetas:
        prod, rot = posenc.householder_rotation_check(float(th))
        worst = max(worst, np.max(np.abs(prod - rot)))
    return [_check("householder", "reflection-pair-vs-rotation", worst, 1e-12, detail=f"{count} random angles")]


# -------------------------------------------------------------------- runner

_RUNNERS = {
    "equivalence": suite_equivalence,
    "rff": suite_rff,
    "theorem": suite_theorem,
    "spectral": suite_spectral,
    "gradients": suite_gradients,
    "householder": suite_householder,
}


def run(suite: str = "all", angle_fault: float = 0.0, tables: dict | None = None) -> dict:
    """Run one suite (or ``all``) and return the report dict.

    If ``tables`` is a dict, suites with tabular output add ``name -> (header, rows)`` to it.
    """
    names = SUITES if suite == "all" else (suite,)
    for n in names:
        if n not in _RUNNERS:
            raise ValueError(f"unknown suite {n!r}; choose from {SUITES + ('all',)}")
    checks: list[Check] = []
    timings = {}
    for n in names:
        t0 = time.perf_counter()
        if n == "equivalence":
            got = _RUNNERS[n](angle_fault=angle_fault)
        elif n in ("rff", "theorem"):
            got = _RUNNERS[n](tables=tables)
        else:
            got = _RUNNERS[n]()
        timings[n] = time.perf_counter() - t0
        for c in got:
            c.seconds = timings[n]
        checks.extend(got)
    return {
        "schema_version": SCHEMA_VERSION,
        "suite": suite,
        "angle_fault": angle_fault,
        "passed": all(c.passed for c in checks),
        "seconds": timings,
        "checks": [c.to_dict() for c in checks],
    }
