"""Gated linear attention as a matrix-state recurrence.

The state evolves as ``S_t = S_{t-1} A_t + w_t v_t k_t^T`` and is read out as
``o_t = S_t q_t``, where ``A_t`` is the per-step transition and ``w_t`` is 1
except for the delta rule (``w_t = beta_t``). Unrolling gives attention scores

    Att[t, tau] = w_tau * k_tau^T (A_{tau+1} ... A_t) q_t,

so the write step itself is never transformed.

Three execution paths share these semantics: :func:`scan` (sequential),
:func:`chunked_scan` (blockwise, diagonal and rotary transitions) and
:func:`attention_matrix` (explicit O(T^2) scores, used as the oracle).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.tensor import ContractError, DimensionError, NonFiniteError
from .posenc import rotate_pairs, rotation_blocks

KINDS = ("identity", "decay", "fixed-rotation", "selective-rotation", "decay-and-rotation", "delta-rule")


@dataclass(frozen=True)
class TransitionSpec:
    """Per-step transition family and its streams.

    decay : (..., T, dk) entries in (0, 1), for ``decay`` and ``decay-and-rotation``
    angles : (..., T, dk/2) accumulated angles, for the rotation kinds
    beta : (..., T) write strengths in [0, 1], for ``delta-rule``
    """

    kind: str
    decay: np.ndarray | None = None
    angles: np.ndarray | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transition kind {self.kind!r}; choose from {KINDS}")
        needs = {
            "decay": ("decay",),
            "fixed-rotation": ("angles",),
            "selective-rotation": ("angles",),
            "decay-and-rotation": ("decay", "angles"),
            "delta-rule": ("beta",),
        }.get(self.kind, ())
        for name in needs:
            if getattr(self, name) is None:
                raise ContractError(f"{self.kind} transition needs a {name} stream")
        if self.decay is not None:
            d = np.asarray(self.decay)
            if np.any(d <= 0) or np.any(d >= 1.0 + 1e-15) or not np.all(np.isfinite(d)):
                raise ContractError("decay entries must lie in (0, 1]")
        if self.beta is not None:
            b = np.asarray(self.beta)
            if np.any(b < 0) or np.any(b > 1):
                raise ContractError("beta must lie in [0, 1]")

    @property
    def rotates(self) -> bool:
        return self.angles is not None

    def step_angles(self) -> np.ndarray:
        """Per-step rotation angles (differences of the accumulated track)."""
        a = np.asarray(self.angles)
        return np.diff(a, axis=-2, prepend=np.zeros_like(a[..., :1, :]))


@dataclass
class ScanState:
    S: np.ndarray
    z: np.ndarray | None = None


def fixed_rotation(T: int, temps: np.ndarray) -> TransitionSpec:
    """Constant per-step angles ``temps``: ordinary RoPE as a transition."""
    angles = np.arange(1, T + 1)[:, None] * np.asarray(temps, dtype=np.float64)[None, :]
    return TransitionSpec("fixed-rotation", angles=angles)


def compose_with_posenc(decay: np.ndarray, angles: np.ndarray) -> TransitionSpec:
    """Decay followed by rotation, ``A_t = Lambda_t R_t``.

    Both channels of a rotated pair must share one decay value, otherwise the
    two factors do not commute and the rotated-query shortcut breaks.
    """
    decay = np.asarray(decay)
    angles = np.asarray(angles)
    if decay.shape[-1] % 2 or decay.shape[:-1] != angles.shape[:-1] or decay.shape[-1] != 2 * angles.shape[-1]:
        raise DimensionError(f"decay {decay.shape} and angles {angles.shape} are not aligned")
    if not np.array_equal(decay[..., 0::2], decay[..., 1::2]):
        raise ContractError("decay must be equal on both channels of every rotated pair")
    return TransitionSpec("decay-and-rotation", decay=decay, angles=angles)


# -------------------------------------------------------------- sequential


def _check_inputs(q, k, v, spec: TransitionSpec):
    q, k, v = (np.asarray(x, dtype=np.float64) for x in (q, k, v))
    if q.shape != k.shape:
        raise DimensionError(f"q {q.shape} and k {k.shape} differ")
    if v.shape[:-1] != q.shape[:-1]:
        raise DimensionError(f"v {v.shape} does not align with q {q.shape}")
    T, dk = q.shape[-2:]
    if spec.decay is not None and np.shape(spec.decay)[-2:] != (T, dk):
        raise DimensionError(f"decay stream {np.shape(spec.decay)} != {(T, dk)}")
    if spec.angles is not None:
        if dk % 2:
            raise DimensionError(f"rotations need an even key dim, got {dk}")
        if np.shape(spec.angles)[-2:] != (T, dk // 2):
            raise DimensionError(f"angle track {np.shape(spec.angles)} != {(T, dk // 2)}")
    if spec.beta is not None and np.shape(spec.beta)[-1] != T:
        raise DimensionError(f"beta stream {np.shape(spec.beta)} has wrong length for T={T}")
    return q, k, v


def _apply_transition(S: np.ndarray, spec: TransitionSpec, t: int, dangle, k_t) -> np.ndarray:
    """Right-multiply the state (..., dv, dk) by A_t."""
    if spec.decay is not None:
        S = S * np.asarray(spec.decay)[..., None, t, :]
    if dangle is not None:
        c = np.cos(dangle[..., None, t, :])
        s = np.sin(dangle[..., None, t, :])
        e, o = S[..., 0::2], S[..., 1::2]
        out = np.empty_like(S)
        out[..., 0::2] = e * c + o * s
        out[..., 1::2] = o * c - e * s
        S = out
    if spec.kind == "delta-rule":
        b = np.asarray(spec.beta)[..., t, None, None]
        Sk = np.einsum("...ij,...j->...i", S, k_t)
        S = S - b * Sk[..., :, None] * k_t[..., None, :]
    return S


def scan(q, k, v, transition: TransitionSpec, normalize: bool = False):
    """Sequential recurrence.

    Parameters
    ----------
    q, k : (..., T, dk)
    v : (..., T, dv)
    transition : TransitionSpec
    normalize : divide each output by ``z_t^T q_t`` with ``z`` following the same recurrence

    Returns
    -------
    outputs : (..., T, dv)
    state : final :class:`ScanState`
    """
    q, k, v = _check_inputs(q, k, v, transition)
    T, dk = q.shape[-2:]
    dv = v.shape[-1]
    lead = q.shape[:-2]
    if normalize:
        v = np.concatenate([v, np.ones(v.shape[:-1] + (1,))], axis=-1)
    S = np.zeros(lead + (v.shape[-1], dk))
    out = np.empty(lead + (T, v.shape[-1]))
    dangle = transition.step_angles() if transition.rotates else None
    weights = np.asarray(transition.beta) if transition.kind == "delta-rule" else None
    for t in range(T):
        k_t = k[..., t, :]
        S = _apply_transition(S, transition, t, dangle, k_t)
        w_v = v[..., t, :] if weights is None else weights[..., t, None] * v[..., t, :]
        S = S + w_v[..., :, None] * k_t[..., None, :]
        if not np.isfinite(S.sum()):
            raise NonFiniteError(f"scan state became non-finite at timestep {t}")
        out[..., t, :] = np.einsum("...ij,...j->...i", S, q[..., t, :])
    if normalize:
        return out[..., :dv] / out[..., dv:], ScanState(S[..., :dv, :], S[..., dv, :])
    return out, ScanState(S)


def delta_scan(q, k, v, beta, tol: float = 1e-6):
    """Delta-rule recurrence ``S_t = S_{t-1}(I - b k k^T) + b v k^T``; keys must be unit length."""
    k = np.asarray(k, dtype=np.float64)
    norms = np.linalg.norm(k, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ContractError(f"delta rule needs unit keys; worst norm deviation {worst:.3g}")
    out, _ = scan(q, k, v, TransitionSpec("delta-rule", beta=np.asarray(beta, dtype=np.float64)))
    return out


# ----------------------------------------------------------------- chunked


def _rope_trick(q, k, spec: TransitionSpec):
    if spec.rotates:
        a = np.asarray(spec.angles)
        return rotate_pairs(q, a), rotate_pairs(k, a)
    return q, k


def chunked_scan(q, k, v, transition: TransitionSpec, normalize: bool = False, chunk: int = 32):
    """Blockwise scan with the same outputs as :func:`scan`.

    Rotations are folded into q and k up front; the remaining diagonal decay is
    handled with within-chunk log-space cumulative sums, so no ratio of tiny
    products is ever formed. Delta-rule transitions fall back to :func:`scan`.
    """
    if transition.kind == "delta-rule":
        return scan(q, k, v, transition, normalize)
    q, k, v = _check_inputs(q, k, v, transition)
    T, dk = q.shape[-2:]
    dv = v.shape[-1]
    lead = q.shape[:-2]
    if normalize:
        v = np.concatenate([v, np.ones(v.shape[:-1] + (1,))], axis=-1)
    qr, kr = _rope_trick(q, k, transition)
    logd = np.log(np.asarray(transition.decay)) if transition.decay is not None else None
    S = np.zeros(lead + (v.shape[-1], dk))
    out = np.empty(lead + (T, v.shape[-1]))
    for start in range(0, T, chunk):
        sl = slice(start, min(start + chunk, T))
        qc, kc, vc = qr[..., sl, :], kr[..., sl, :], v[..., sl, :]
        n = qc.shape[-2]
        causal = np.tril(np.ones((n, n), dtype=bool))
        if logd is None:
            att = np.where(causal, qc @ np.swapaxes(kc, -1, -2), 0.0)
            out[..., sl, :] = qc @ np.swapaxes(S, -1, -2) + att @ vc
            S = S + np.swapaxes(vc, -1, -2) @ kc
            continue
        L = np.cumsum(logd[..., sl, :], axis=-2)  # inclusive
        # Att[t, tau] = sum_j q[t, j] k[tau, j] exp(L[t, j] - L[tau, j])
        diff = L[..., :, None, :] - L[..., None, :, :]
        gain = np.exp(np.where(causal[..., None], diff, -np.inf))
        att = np.einsum("...tj,...sj,...tsj->...ts", qc, kc, gain)
        inter = (qc * np.exp(L)) @ np.swapaxes(S, -1, -2)
        out[..., sl, :] = inter + att @ vc
        tail = np.exp(L[..., -1:, :] - L)  # decay from tau to chunk end
        S = S * np.exp(L[..., -1, None, :]) + np.swapaxes(vc, -1, -2) @ (kc * tail)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NonFiniteError(f"chunked scan output non-finite at timestep {int(bad[-2])}")
    if normalize:
        return out[..., :dv] / out[..., dv:], ScanState(S[..., :dv, :], S[..., dv, :])
    return out, ScanState(S)


# ------------------------------------------------------------------ oracle


def transition_matrices(transition: TransitionSpec, q, k) -> np.ndarray:
    """Dense per-step matrices A_t, shape (T, dk, dk), for unbatched inputs."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    T, dk = q.shape
    A = np.broadcast_to(np.eye(dk), (T, dk, dk)).copy()
    if transition.decay is not None:
        A = np.asarray(transition.decay)[:, :, None] * A  # diag(decay) @ A
    if transition.rotates:
        blocks = rotation_blocks(transition.step_angles())  # (T, dk/2, 2, 2)
        R = np.zeros((T, dk, dk))
        for n in range(dk // 2):
            R[:, 2 * n : 2 * n + 2, 2 * n : 2 * n + 2] = blocks[:, n]
        # k^T R(a_{tau+1}) ... R(a_t) q = k^T R(theta_t - theta_tau) q
        A = A @ R
    if transition.kind == "delta-rule":
        A = np.eye(dk)[None] - np.asarray(transition.beta)[:, None, None] * np.einsum("ti,tj->tij", k, k)
    return A


def attention_matrix(q, k, transition: TransitionSpec) -> np.ndarray:
    """Explicit scores ``Att[t, tau] = w_tau k_tau^T (A_{tau+1} ... A_t) q_t``.

    Works on unbatched (T, d) inputs. Each key row is carried forward through
    the dense transition matrices, so this shares no code with :func:`scan`.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != 2 or q.shape != k.shape:
        raise DimensionError(f"attention_matrix takes unbatched q, k of equal shape, got {q.shape}, {k.shape}")
    _check_inputs(q, k, np.zeros(q.shape[:-1] + (1,)), transition)
    T, dk = q.shape
    A = transition_matrices(transition, q, k)
    w = np.asarray(transition.beta) if transition.kind == "delta-rule" else np.ones(T)
    att = np.zeros((T, T))
    rows = np.zeros((0, dk))
    for t in range(T):
        rows = np.vstack([rows @ A[t], w[t] * k[t][None, :]])
        att[t, : t + 1] = rows @ q[t]
    return att


def attention_outputs(q, k, v, transition: TransitionSpec, normalize: bool = False) -> np.ndarray:
    """``o_t = sum_tau Att[t, tau] v_tau`` from the explicit score matrix."""
    att = attention_matrix(q, k, transition)
    out = att @ np.asarray(v, dtype=np.float64)
    if normalize:
        out = out / att.sum(axis=1, keepdims=True)
    return out


def structured_attention_outputs(q, k, v, transition: TransitionSpec, block: int = 512) -> np.ndarray:
    """O(T^2) outputs for rotary and identity transitions, materializing scores in row blocks.

    Used by the benchmark, where the dense oracle would be far too slow.
    """
    if transition.decay is not None or transition.kind == "delta-rule":
        raise ContractError("structured attention supports identity and rotation transitions only")
    q, k, v = _check_inputs(q, k, v, transition)
    qr, kr = _rope_trick(q, k, transition)
    T = q.shape[-2]
    out = np.empty(q.shape[:-1] + (v.shape[-1],))
    cols = np.arange(T)
    for start in range(0, T, block):
        stop = min(start + block, T)
        scores = qr[..., start:stop, :] @ np.swapaxes(kr, -1, -2)
        scores = np.where(cols[None, :] <= np.arange(start, stop)[:, None], scores, 0.0)
        out[..., start:stop, :] = scores @ v
    return out
