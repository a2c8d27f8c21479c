"""Random Fourier features for the exponential kernel.

With ``phi_w(x) = exp(|x|^2/2 + i w^T x)`` and ``w ~ N(0, I)``,
``E[Re(phi_w(q) conj(phi_w(k)))] = exp(q^T k)``. Averaging over ``D`` draws
gives an unbiased estimate of the unnormalized softmax score, and the sum over
keys can be run as a recurrence whose transition is a diagonal rotation
``exp(i Omega (q_t - q_{t-1}))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.rng import Rng, sample_gaussian
from .numerics.tensor import ComplexPair, ContractError

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class RffEnsemble:
    omega: np.ndarray  # (D, d)
    sigma: float
    seed: int

    @property
    def num_features(self) -> int:
        return self.omega.shape[0]


def make_ensemble(num_features: int, dim: int, sigma: float = 1.0, seed: int = 0) -> RffEnsemble:
    omega = sample_gaussian(Rng(seed, "rff"), (num_features, dim), sigma)
    return RffEnsemble(omega, float(sigma), int(seed))


def _envelope(x: np.ndarray) -> np.ndarray:
    half_sq = 0.5 * np.sum(x * x, axis=-1, keepdims=True)
    if np.any(half_sq > _EXP_LIMIT):
        raise ContractError("exp(|x|^2/2) overflows; L2-normalize queries and keys first")
    return np.exp(half_sq)


def feature_map(x, ensemble: RffEnsemble) -> ComplexPair:
    """Entry j is ``exp(|x|^2/2) * (cos w_j^T x, sin w_j^T x)``; shape (..., D)."""
    x = np.asarray(x, dtype=np.float64)
    env = _envelope(x)
    phase = x @ ensemble.omega.T
    return ComplexPair(env * np.cos(phase), env * np.sin(phase))


def kernel_estimate(q, k, ensemble: RffEnsemble) -> float:
    """``(1/D) sum_j Re(phi_j(q) conj(phi_j(k)))``, unbiased for exp(q^T k) at sigma = 1."""
    prod = feature_map(q, ensemble) * feature_map(k, ensemble).conj()
    return float(np.mean(prod.re))


def _score_matrix(q, k, ensemble: RffEnsemble) -> np.ndarray:
    fq = feature_map(q, ensemble)
    fk = feature_map(k, ensemble)
    # Re(a conj(b)) = a.re b.re + a.im b.im
    return (fq.re @ fk.re.T + fq.im @ fk.im.T) / ensemble.num_features


def _require_unit(x: np.ndarray, what: str, tol: float = 1e-6):
    dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
    if np.any(dev > tol):
        raise ContractError(f"{what} rows must be L2-normalized (worst deviation {float(dev.max()):.3g})")


def rff_attention_direct(q, k, v, ensemble: RffEnsemble, normalize: bool = False) -> np.ndarray:
    """Causal attention with RFF-estimated scores; (T, d) inputs."""
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    scores = np.tril(_score_matrix(q, k, ensemble))
    out = scores @ v
    if normalize:
        out = out / scores.sum(axis=1, keepdims=True)
    return out


@dataclass
class RffState:
    S: ComplexPair  # (dv, D)
    z: ComplexPair  # (D,)


def rotation_diagonal(q_t, q_prev, ensemble: RffEnsemble) -> ComplexPair:
    """Diagonal of ``exp(i Omega (q_t - q_prev))``; every entry has modulus one."""
    phase = ensemble.omega @ (np.asarray(q_t) - np.asarray(q_prev))
    return ComplexPair(np.cos(phase), np.sin(phase))


def rff_attention_recurrent(q, k, v, ensemble: RffEnsemble, normalize: bool = False):
    """Recurrent form of :func:`rff_attention_direct`.

    ``S_t = S_{t-1} R_t + v_t (phi(q_t) * conj(phi(k_t)))^T`` with
    ``R_t = diag(exp(i Omega (q_t - q_{t-1})))`` and ``q_0 = 0``; the output is
    ``(1/D) Re(S_t 1)``. Queries must share a common (unit) norm, which is what
    lets the rotation carry ``phi(q_tau)`` forward to ``phi(q_t)``.
    """
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    _require_unit(q, "query")
    T = q.shape[0]
    D = ensemble.num_features
    S = ComplexPair(np.zeros((v.shape[1], D)), np.zeros((v.shape[1], D)))
    z = ComplexPair(np.zeros(D), np.zeros(D))
    out = np.empty((T, v.shape[1]))
    fq = feature_map(q, ensemble)
    fk = feature_map(k, ensemble)
    write = fq * fk.conj()
    q_prev = np.zeros(q.shape[1])
    for t in range(T):
        r = rotation_diagonal(q[t], q_prev, ensemble)
        w = ComplexPair(write.re[t], write.im[t])
        S = S * r + ComplexPair(np.outer(v[t], w.re), np.outer(v[t], w.im))
        z = z * r + w
        num = S.re.sum(axis=1) / D
        out[t] = num / (z.re.sum() / D) if normalize else num
        q_prev = q[t]
    return out, RffState(S, z)


def softmax_attention(q, k, v) -> np.ndarray:
    """Exact causal softmax attention without temperature."""
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    s = q @ k.T
    T = s.shape[0]
    s = np.where(np.tril(np.ones((T, T), dtype=bool)), s, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    w = np.exp(s)
    return (w / w.sum(axis=1, keepdims=True)) @ v


# ---------------------------------------------------------------- theorem


def optimal_sigma(theta: float) -> float:
    """Feature scale minimizing the large-D error for unit q, k at angle ``theta``."""
    if not 0.0 <= theta < np.pi:
        raise ValueError(f"theta must lie in [0, pi), got {theta}")
    return float(np.tan(theta / 2.0))


def analytic_limit_error(sigma, xi):
    """Large-D error objective ``e^{2 - 2 s^2 (1+xi)} - 2 e^{(1 - s^2)(1+xi)}`` (constants dropped)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(np.abs(np.asarray(xi)) > 1.0):
        raise ValueError("xi must lie in [-1, 1]")
    a = 1.0 + xi
    return np.exp(2.0 - 2.0 * sigma**2 * a) - 2.0 * np.exp((1.0 - sigma**2) * a)


def unit_pair(theta: float, dim: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Random unit vectors q, k in R^dim with angle ``theta`` between them."""
    basis, _ = np.linalg.qr(rng.normal((dim, 2)))
    e1, e2 = basis[:, 0], basis[:, 1]
    return e1, np.cos(theta) * e1 + np.sin(theta) * e2


def monte_carlo_error(theta: float, sigmas, num_features: int = 2048, trials: int = 500, dim: int = 8, seed: int = 0):
    """Empirical squared error of the feature-product estimate of exp(q^T k), per sigma.

    The estimate is ``(1/D) sum_j phi_j(q) phi_j(k)`` with the plain (not
    conjugated) product, whose real part is ``e cos(w^T (q + k))`` for unit
    q, k. The same standard-normal draws are reused for every sigma.
    """
    rng = Rng(seed, f"theorem/{theta:.6f}")
    q, k = unit_pair(theta, dim, rng.child("pair"))
    z = rng.child("omega").normal((trials, num_features, dim))
    proj = z @ (q + k)  # (trials, D)
    target = np.exp(q @ k)
    env = np.exp(0.5 * (q @ q + k @ k))
    errs = []
    for s in np.asarray(sigmas, dtype=np.float64):
        est = env * np.mean(np.cos(s * proj), axis=1)
        errs.append(np.mean((est - target) ** 2))
    return np.array(errs)


def softmax_errors(feature_counts, seeds, T: int = 16, dim: int = 8, dv: int = 8, data_seed: int = 0) -> np.ndarray:
    """Max-abs error of normalized RFF attention against exact softmax, shape (len(feature_counts), len(seeds))."""
    rng = Rng(data_seed, "softmax-data")
    q = rng.child("q").normal((T, dim))
    k = rng.child("k").normal((T, dim))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    v = rng.child("v").normal((T, dv))
    exact = softmax_attention(q, k, v)
    seeds = list(seeds)
    out = np.empty((len(feature_counts), len(seeds)))
    for i, D in enumerate(feature_counts):
        for j, s in enumerate(seeds):
            approx = rff_attention_direct(q, k, v, make_ensemble(D, dim, 1.0, s), normalize=True)
            out[i, j] = np.max(np.abs(approx - exact))
    return out


def softmax_convergence(feature_counts, seeds, T: int = 16, dim: int = 8, dv: int = 8, data_seed: int = 0):
    """:func:`softmax_errors` averaged over ensemble seeds; aligned with ``feature_counts``."""
    return softmax_errors(feature_counts, seeds, T, dim, dv, data_seed).mean(axis=1)
