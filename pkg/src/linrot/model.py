"""Small token models built from the recurrence and rotary-encoding pieces.

Block layout: RMS norm -> token mixer -> residual -> RMS norm -> MLP -> residual,
then a final norm and a linear readout. The mixer projects to per-head
queries, keys and values, optionally rotates them (fixed or selective RoPE),
and runs one of: plain linear attention, gated linear attention (diagonal
decay), the delta rule, or causal softmax attention.
"""
from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import posenc
from .numerics import autodiff as ad
from .numerics.rng import Rng
from .numerics.tensor import ContractError, DimensionError, NonFiniteError

MIXERS = ("linear-attn", "gla", "delta", "softmax")
POSENCS = ("nope", "rope", "selective-rope")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 2
    model_dim: int = 64
    num_heads: int = 4
    num_layers: int = 1
    mixer: str = "gla"
    posenc: str = "nope"
    mlp: bool = True
    mlp_ratio: int = 4
    short_conv_width: int = 0
    # gated linear attention decay: sigmoid(W x / gate_scale) ** (1 / gate_temperature)
    gate_scale: float = 1.0
    gate_temperature: float = 1.0
    rope_eps: float = 1e-4
    # selective RoPE
    conv_width: int = 4
    schedule: str = "rope-exponential"
    schedule_eps: float = 1e-4
    phase_gate: bool = True
    bias: bool = True
    weight_norm: bool = True
    temperatures_learnable: bool = False
    conv_preset: str = "random"
    angle_init_scale: float = 1.0
    precision: str = "f64"

    def __post_init__(self):
        if self.mixer not in MIXERS:
            raise ValueError(f"unknown mixer {self.mixer!r}; choose from {MIXERS}")
        if self.posenc not in POSENCS:
            raise ValueError(f"unknown posenc {self.posenc!r}; choose from {POSENCS}")
        if self.model_dim % self.num_heads:
            raise DimensionError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.posenc != "nope" and self.head_dim % 2:
            raise DimensionError(f"rotary encodings need an even head_dim, got {self.head_dim}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.conv_preset not in ("random", "difference"):
            raise ValueError(f"conv_preset must be random or difference, got {self.conv_preset!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def selective_rope(self) -> posenc.SelectiveRopeConfig:
        return posenc.SelectiveRopeConfig(
            head_dim=self.head_dim,
            num_heads=self.num_heads,
            conv_width=self.conv_width,
            schedule=posenc.TemperatureSchedule(self.schedule, self.head_dim, self.schedule_eps),
            phase_gate=self.phase_gate,
            bias=self.bias,
            weight_norm=self.weight_norm,
            temperatures_learnable=self.temperatures_learnable,
            angle_init_scale=self.angle_init_scale,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _normal(rng: Rng, shape, fan_in: int) -> np.ndarray:
    return rng.normal(shape) / np.sqrt(fan_in)


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Scaled-normal projections (std 1/sqrt(fan_in)), unit-variance embeddings, zero biases, unit norm scales."""
    root = Rng(seed, "init")
    D, H, dh, V = config.model_dim, config.num_heads, config.head_dim, config.vocab_size
    p: dict[str, np.ndarray] = {"embed": root.child("embed").normal((V, D))}
    for i in range(config.num_layers):
        r = root.child(f"layer{i}")
        pre = f"L{i}."
        p[pre + "norm1"] = np.ones(D)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + name] = _normal(r.child(name), (D, D), D)
        if config.short_conv_width > 0:
            for name in ("conv_q", "conv_k", "conv_v"):
                kern = np.zeros((config.short_conv_width, D))
                kern[0] = 1.0
                p[pre + name] = kern + 0.1 * r.child(name).normal(kern.shape)
        if config.mixer == "gla":
            p[pre + "wg"] = _normal(r.child("wg"), (D, H * dh // 2), D)
            p[pre + "bg"] = np.zeros(H * dh // 2)
        if config.mixer == "delta":
            p[pre + "wbeta"] = _normal(r.child("wbeta"), (D, H), D)
            p[pre + "bbeta"] = np.zeros(H)
        if config.posenc == "selective-rope":
            preset = None if config.conv_preset == "random" else config.conv_preset
            sr = posenc.init_selective_rope(config.selective_rope(), D, r.child("srope"), preset)
            for name, val in sr.items():
                p[pre + "srope." + name] = val
        if config.mlp:
            hid = config.mlp_ratio * D
            p[pre + "norm2"] = np.ones(D)
            p[pre + "w1"] = _normal(r.child("w1"), (D, hid), D)
            p[pre + "w2"] = _normal(r.child("w2"), (hid, D), hid)
    p["norm_f"] = np.ones(D)
    p["readout"] = _normal(root.child("readout"), (D, V), D)
    return {k: v.astype(config.dtype) for k, v in p.items()}


class Model:
    """A config plus a named parameter map."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def forward(self, tokens, params=None):
        """Logits (B, T, V). ``params`` may map names to tape variables."""
        return forward(self.config, self.params if params is None else params, tokens)

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if is_trainable(self.config, n)]

    def num_parameters(self) -> int:
        return int(sum(self.params[n].size for n in self.trainable_names()))

    def tape_params(self) -> dict:
        """Parameters as tape leaves; frozen buffers stay plain arrays."""
        return {n: ad.param(v, n) if is_trainable(self.config, n) else v for n, v in self.params.items()}


def is_trainable(config: ModelConfig, name: str) -> bool:
    """Frozen rotary temperatures are buffers, everything else is trained."""
    return not (name.endswith("srope.temps") and not config.temperatures_learnable)


# ------------------------------------------------------------------ forward


def _split_heads(x, B, T, H, dh):
    return ad.reshape(x, (B, T, H, dh))


def _srope_params(params, pre: str) -> dict:
    n = len(pre + "srope.")
    return {k[n:]: v for k, v in params.items() if k.startswith(pre + "srope.")}


def softmax_mixer(q, k, v, bias=None):
    """Causal softmax attention with 1/sqrt(d) scaling; inputs (..., T, d).

    ``bias`` (H,) is added to every causal score (q, k laid out as (B, H, T, d)).
    """
    d = ad.value(q).shape[-1]
    T = ad.value(q).shape[-2]
    scores = ad.mul(ad.matmul(q, ad.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d))
    if bias is not None:
        scores = posenc.positional_bias(scores, bias)
    mask = np.triu(np.full((T, T), -1e30, dtype=ad.value(scores).dtype), k=1)
    weights = ad.softmax(ad.add(scores, mask), axis=-1)
    return ad.matmul(weights, v)


def _mixer(config: ModelConfig, params, pre: str, h, tokens_shape):
    B, T = tokens_shape
    D, H, dh = config.model_dim, config.num_heads, config.head_dim
    dt = config.dtype
    q = ad.matmul(h, params[pre + "wq"])
    k = ad.matmul(h, params[pre + "wk"])
    v = ad.matmul(h, params[pre + "wv"])
    if config.short_conv_width > 0:
        q = ad.causal_conv1d(q, params[pre + "conv_q"])
        k = ad.causal_conv1d(k, params[pre + "conv_k"])
        v = ad.causal_conv1d(v, params[pre + "conv_v"])
    q, k, v = (_split_heads(x, B, T, H, dh) for x in (q, k, v))
    if config.posenc == "selective-rope" or config.mixer in ("softmax", "delta"):
        q = ad.l2norm(q)
        k = ad.l2norm(k)
    if config.posenc == "rope":
        temps = posenc.make_schedule("rope-exponential", dh, config.rope_eps)
        theta = (np.arange(1, T + 1)[:, None] * temps[None, :]).astype(dt)[:, None, :]
        q, k = posenc.selective_rope_apply(q, k, np.broadcast_to(theta, (T, H, dh // 2)))
    bias = None
    if config.posenc == "selective-rope":
        sr_cfg = config.selective_rope()
        sp = _srope_params(params, pre)
        if not config.temperatures_learnable:
            sp["temps"] = ad.value(sp["temps"]).astype(dt)
        angles = posenc.selective_angles(q, sp, sr_cfg, x_stream=h, wrap=True)
        q, k = posenc.selective_rope_apply(q, k, angles)
        if sr_cfg.bias:
            bias = sp["bias"]
    # heads first: (B, H, T, dh)
    q, k, v = (ad.transpose(x, (0, 2, 1, 3)) for x in (q, k, v))
    if config.mixer == "softmax":
        o = softmax_mixer(q, k, v, bias)
    else:
        if config.mixer == "gla":
            z = ad.matmul(h, params[pre + "wg"])
            z = ad.add(z, params[pre + "bg"])
            if config.gate_scale != 1.0:
                z = ad.mul(z, 1.0 / config.gate_scale)
            logd = ad.neg(ad.softplus(ad.neg(z)))  # log sigmoid
            if config.gate_temperature != 1.0:
                logd = ad.mul(logd, 1.0 / config.gate_temperature)
            logd = ad.maximum(logd, -10.0)
            half = ad.reshape(logd, (B, T, H, dh // 2, 1))
            logd = ad.reshape(ad.concat([half, half], axis=-1), (B, T, H, dh))
            logd = ad.transpose(logd, (0, 2, 1, 3))
            o = ad.diag_scan(q, k, v, logd)
        elif config.mixer == "linear-attn":
            o = ad.diag_scan(q, k, v, np.zeros((1, 1, 1, dh), dtype=dt))
        else:
            beta = ad.sigmoid(ad.add(ad.matmul(h, params[pre + "wbeta"]), params[pre + "bbeta"]))
            o = ad.delta_rule(q, k, v, ad.transpose(beta, (0, 2, 1)))
        if bias is not None:
            o = ad.add(o, ad.mul(ad.reshape(bias, (1, H, 1, 1)), ad.cumsum(v, axis=2)))
    o = ad.rmsnorm(o)
    o = ad.reshape(ad.transpose(o, (0, 2, 1, 3)), (B, T, D))
    return ad.matmul(o, params[pre + "wo"])


def forward(config: ModelConfig, params, tokens):
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ContractError(f"token ids must lie in [0, {config.vocab_size})")
    x = ad.getitem(params["embed"], tokens)
    for i in range(config.num_layers):
        pre = f"L{i}."
        h = ad.mul(ad.rmsnorm(x), params[pre + "norm1"])
        x = ad.add(x, _mixer(config, params, pre, h, tokens.shape))
        if config.mlp:
            h = ad.mul(ad.rmsnorm(x), params[pre + "norm2"])
            x = ad.add(x, ad.matmul(ad.silu(ad.matmul(h, params[pre + "w1"])), params[pre + "w2"]))
        if not np.all(np.isfinite(ad.value(x))):
            raise NonFiniteError(f"non-finite activations after layer {i}")
    x = ad.mul(ad.rmsnorm(x), params["norm_f"])
    return ad.matmul(x, params["readout"])


def loss(logits, targets, mask):
    """Mean cross-entropy over positions where ``mask`` is set."""
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("loss mask selects no positions")
    lsm = ad.log_softmax(logits, axis=-1)
    picked = ad.take_along_axis(lsm, targets[..., None].astype(np.int64), axis=-1)
    weights = (mask[..., None] / count).astype(ad.value(picked).dtype)
    return ad.neg(ad.sum(ad.mul(picked, weights)))


# --------------------------------------------------------------- checkpoint

_MAGIC = b"LROTCKPT"
_VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 0, np.dtype("float32"): 1, np.dtype("int64"): 2}


def save_checkpoint(path, params: dict[str, np.ndarray], config: ModelConfig | None = None):
    """Flat named-tensor archive: header, config JSON, then (name, dtype, shape, LE payload) records."""
    buf = io.BytesIO()
    meta = json.dumps(config.to_dict() if config else {}, sort_keys=True).encode()
    buf.write(_MAGIC)
    buf.write(struct.pack("<III", _VERSION, len(params), len(meta)))
    buf.write(meta)
    for name in sorted(params):
        arr = np.asarray(params[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ContractError(f"cannot store dtype {arr.dtype} for {name}")
        enc = name.encode()
        buf.write(struct.pack("<HBB", len(enc), code, arr.ndim))
        buf.write(enc)
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ContractError(f"{path} is not a checkpoint (bad magic)")
    version, count, meta_len = struct.unpack_from("<III", data, 8)
    if version != _VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    pos = 20
    meta = json.loads(data[pos : pos + meta_len])
    pos += meta_len
    params = {}
    for _ in range(count):
        name_len, code, ndim = struct.unpack_from("<HBB", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode()
        pos += name_len
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        params[name] = np.frombuffer(data[pos : pos + n], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        pos += n
    return params, (ModelConfig(**meta) if meta else None)
