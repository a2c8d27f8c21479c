"""Rotary positional encodings: fixed RoPE and input-dependent (selective) RoPE.

Vectors are split into interleaved pairs ``(x[2n], x[2n+1])`` and each pair is
rotated as a complex number. The selective variant produces per-step angles
from the query stream, accumulates them over time, and rotates queries and keys
by the accumulated angle. Running the identity-transition scan on the rotated
vectors is then the same as running a rotation-transition scan on the raw ones.

Functions accept plain arrays or autodiff :class:`~linrot.numerics.autodiff.Var`
objects; the model module uses the latter during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import autodiff as ad
from .numerics.rng import Rng
from .numerics.tensor import ContractError, DimensionError

SCHEDULE_KINDS = ("rope-exponential", "tan-half-angle")


@dataclass(frozen=True)
class TemperatureSchedule:
    kind: str = "rope-exponential"
    dim: int = 16
    eps: float = 1e-4

    def values(self) -> np.ndarray:
        return make_schedule(self.kind, self.dim, self.eps)


def make_schedule(kind: str, dim: int, eps: float) -> np.ndarray:
    """Per-pair temperatures, length ``dim // 2``.

    ``rope-exponential`` gives ``eps ** (n / (dim/2))``, the usual RoPE
    frequencies with base ``1/eps``. ``tan-half-angle`` gives ``tan(phi/2)``
    with ``phi`` evenly spaced on ``[0, (1 - eps) * pi]``.
    """
    if dim <= 0 or dim % 2:
        raise DimensionError(f"schedule dim must be even and positive, got {dim}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    half = dim // 2
    if kind == "rope-exponential":
        return eps ** (np.arange(half) / half)
    if kind == "tan-half-angle":
        phi = np.linspace(0.0, (1.0 - eps) * np.pi, half)
        return np.tan(phi / 2.0)
    raise ValueError(f"unknown schedule kind {kind!r}; choose from {SCHEDULE_KINDS}")


# --------------------------------------------------------------- rotations


def rotate_pairs(x, angles):
    """Rotate interleaved pairs of the last axis of ``x`` by ``angles``.

    ``angles`` has the shape of ``x`` with the last axis halved (broadcasting
    allowed). Works on arrays and tape variables alike.
    """
    xs = ad.value(x).shape
    if xs[-1] % 2:
        raise DimensionError(f"rotary encodings need an even last dim, got {xs}")
    c, s = ad.cos(angles), ad.sin(angles)
    xe, xo = x[..., 0::2], x[..., 1::2]
    re = ad.sub(ad.mul(xe, c), ad.mul(xo, s))
    im = ad.add(ad.mul(xe, s), ad.mul(xo, c))
    out = ad.stack([re, im], axis=-1)
    return ad.reshape(out, xs)


def rotation_blocks(angles: np.ndarray) -> np.ndarray:
    """2x2 rotation matrices, shape ``angles.shape + (2, 2)``."""
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rope_apply(q, k, positions, temps):
    """Fixed-frequency RoPE.

    Parameters
    ----------
    q, k : arrays of shape (..., T, d) with even d
    positions : integer array of shape (T,)
    temps : array of shape (d/2,), the rotation frequency of each pair
    """
    positions = np.asarray(positions)
    if positions.dtype.kind not in "iu":
        raise ContractError(f"positions must be integers, got dtype {positions.dtype}")
    theta = positions[:, None].astype(np.float64) * np.asarray(temps)[None, :]
    return rotate_pairs(q, theta), rotate_pairs(k, theta)


def selective_rope_apply(q, k, angles):
    """Rotate the t-th query and key by the accumulated angle at t.

    ``q``, ``k`` have shape (..., T, H, dh) and ``angles`` (..., T, H, dh/2).
    """
    tq, ta = ad.value(q).shape[-3], ad.value(angles).shape[-3]
    if tq != ta:
        raise DimensionError(f"angle track has {ta} steps but the sequence has {tq}")
    return rotate_pairs(q, angles), rotate_pairs(k, angles)


# ---------------------------------------------------------- selective RoPE


@dataclass(frozen=True)
class SelectiveRopeConfig:
    head_dim: int = 16
    num_heads: int = 1
    conv_width: int = 4
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    phase_gate: bool = True
    bias: bool = True
    weight_norm: bool = True
    temperatures_learnable: bool = False
    # multiplies the initial angle projection; larger values start with larger per-step angles
    angle_init_scale: float = 1.0

    def __post_init__(self):
        if self.angle_init_scale <= 0:
            raise ValueError("angle_init_scale must be positive")
        if self.head_dim <= 0 or self.head_dim % 2:
            raise DimensionError(f"head_dim must be even and positive, got {self.head_dim}")
        if self.num_heads <= 0 or self.conv_width <= 0:
            raise ValueError("num_heads and conv_width must be positive")
        if self.schedule.dim != self.head_dim:
            raise DimensionError(f"schedule dim {self.schedule.dim} != head_dim {self.head_dim}")


def init_selective_rope(config: SelectiveRopeConfig, model_dim: int, rng: Rng, conv_preset: str | None = None) -> dict:
    """Fresh parameters for the angle path.

    Keys: ``w_omega`` (H, dh, dh/2) or its weight-norm split ``w_omega_dir`` and
    ``w_omega_scale`` (H, dh/2); ``conv`` (W, H*dh/2); ``gate_w`` (model_dim, H)
    and ``gate_b`` (H,) when the phase gate is on; ``bias`` (H,) when enabled;
    ``temps`` (dh/2,).

    ``conv_preset="difference"`` initializes every channel to the stencil
    ``[1, -1]`` (x_t - x_{t-1}) instead of random weights.
    """
    H, dh = config.num_heads, config.head_dim
    half = dh // 2
    p: dict[str, np.ndarray] = {}
    w = rng.child("w_omega").normal((H, dh, half)) / np.sqrt(dh)
    if config.weight_norm:
        p["w_omega_dir"] = w
        p["w_omega_scale"] = config.angle_init_scale * np.linalg.norm(w, axis=1)
    else:
        p["w_omega"] = config.angle_init_scale * w
    if conv_preset == "difference":
        kern = np.zeros((config.conv_width, H * half))
        kern[0] = 1.0
        if config.conv_width > 1:
            kern[1] = -1.0
    elif conv_preset is None:
        kern = rng.child("conv").normal((config.conv_width, H * half)) / np.sqrt(config.conv_width)
    else:
        raise ValueError(f"unknown conv preset {conv_preset!r}")
    p["conv"] = kern
    if config.phase_gate:
        p["gate_w"] = rng.child("gate").normal((model_dim, H)) / np.sqrt(model_dim)
        p["gate_b"] = np.zeros(H)
    if config.bias:
        p["bias"] = np.zeros(H)
    p["temps"] = config.schedule.values()
    return p


def effective_omega(params: dict, config: SelectiveRopeConfig):
    """Angle projection (H, dh, dh/2); with weight norm each output column is scale * dir / |dir|."""
    if config.weight_norm:
        d = params["w_omega_dir"]
        H, _, half = ad.value(d).shape
        norm = ad.reshape(ad.sqrt_sumsq(d, axis=1), (H, 1, half))
        scale = ad.reshape(params["w_omega_scale"], (H, 1, half))
        return ad.mul(ad.div(d, norm), scale)
    return params["w_omega"]


def step_angles(q_stream, params: dict, config: SelectiveRopeConfig, x_stream=None):
    """Per-step angles before accumulation, shape (..., T, H, dh/2).

    ``q_stream`` has shape (..., T, H, dh). ``x_stream`` (..., T, model_dim)
    drives the phase gate and is required when the gate is enabled.
    """
    qs = ad.value(q_stream).shape
    H, dh = config.num_heads, config.head_dim
    half = dh // 2
    if qs[-2:] != (H, dh):
        raise DimensionError(f"query stream trailing dims {qs[-2:]} != (heads, head_dim) = {(H, dh)}")
    W = effective_omega(params, config)
    if ad.value(W).shape != (H, dh, half):
        raise DimensionError(f"angle projection has shape {ad.value(W).shape}, expected {(H, dh, half)}")
    # (..., T, H, 1, dh) @ (H, dh, half) -> (..., T, H, 1, half)
    q5 = ad.reshape(q_stream, qs[:-1] + (1, dh))
    omega = ad.matmul(q5, W)
    lead = qs[:-2]
    omega = ad.reshape(omega, lead + (H * half,))
    kern = params["conv"]
    if ad.value(kern).shape[1:] != (H * half,):
        raise DimensionError(f"conv kernel {ad.value(kern).shape} does not match {H * half} angle channels")
    omega = ad.causal_conv1d(omega, kern)
    omega = ad.reshape(omega, lead + (H, half))
    if config.phase_gate:
        if x_stream is None:
            raise ContractError("the phase gate needs the block input stream")
        gate = ad.sigmoid(ad.add(ad.matmul(ad.l2norm(x_stream), params["gate_w"]), params["gate_b"]))
        omega = ad.mul(omega, ad.reshape(gate, ad.value(gate).shape + (1,)))
    temps = params["temps"]
    if not config.temperatures_learnable:
        temps = ad.value(temps)
    return ad.mul(omega, temps)


def selective_angles(q_stream, params: dict, config: SelectiveRopeConfig, x_stream=None, wrap: bool = False):
    """Accumulated angles (the running prefix sum of :func:`step_angles`) along time.

    With ``wrap`` the result is reduced to [-pi, pi); rotations are unchanged
    since they are 2*pi periodic.
    """
    steps = step_angles(q_stream, params, config, x_stream)
    track = ad.cumsum(steps, axis=-3)
    return ad.wrap_angle(track) if wrap else track


def positional_bias(scores, bias):
    """Add a per-head scalar to every causal score.

    ``scores`` has shape (..., H, T, T) with entry [t, tau] the score of query t
    against key tau; only entries with tau <= t are shifted.
    """
    sv = ad.value(scores)
    T = sv.shape[-1]
    causal = np.tril(np.ones((T, T)))
    b = ad.reshape(bias, ad.value(bias).shape + (1, 1))
    return ad.add(scores, ad.mul(b, causal))


# ------------------------------------------------------------- householder


def householder(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return np.eye(len(u)) - 2.0 * np.outer(u, u) / np.dot(u, u)


def householder_rotation_check(theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Two reflections composing to a plane rotation by ``theta``.

    The first reflection negates e1; the second reflects across
    ``(cos theta/2, sin theta/2)``. Returns ``(product, rotation)``.
    """
    first = householder(np.array([1.0, 0.0]))
    second = householder(np.array([np.cos(theta / 2.0), np.sin(theta / 2.0)]))
    return second @ first, rotation_blocks(np.asarray(theta))
