"""Dense array primitives shared by the verification paths and the autodiff engine.

Arrays are plain :class:`numpy.ndarray` objects. Every function here is pure and
never mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class NonFiniteError(FloatingPointError):
    """An operation produced inf/nan where finite values are required."""


def _first_bad(x: np.ndarray) -> tuple[int, ...]:
    bad = np.argwhere(~np.isfinite(x))
    return tuple(int(i) for i in bad[0])


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what}: non-finite value at index {_first_bad(x)}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs arrays, got shapes {a.shape} and {b.shape}")
    inner_a = a.shape[-1]
    inner_b = b.shape[-2] if b.ndim > 1 else b.shape[0]
    if inner_a != inner_b:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def exp(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = np.exp(x)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"exp overflow at index {_first_bad(out)}")
    return out


def l2norm_rows(x: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Scale each vector along the last axis to unit Euclidean length."""
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True) + eps)
    return x / norm


_ELEMENTWISE = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "sigmoid": sigmoid,
    "exp": exp,
    "sin": np.sin,
    "cos": np.cos,
    "l2norm-rows": l2norm_rows,
    "softplus": softplus,
}


def elementwise(op: str, *inputs: np.ndarray) -> np.ndarray:
    """Apply one of the registered pointwise operations.

    ``add`` and ``mul`` broadcast under numpy rules; the unary ops take one input.
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(_ELEMENTWISE)}") from None
    arrays = [np.asarray(x) for x in inputs]
    if op in ("add", "mul"):
        if len(arrays) != 2:
            raise ContractError(f"{op} takes two inputs, got {len(arrays)}")
        try:
            np.broadcast_shapes(arrays[0].shape, arrays[1].shape)
        except ValueError:
            raise DimensionError(f"{op}: shapes {arrays[0].shape} and {arrays[1].shape} do not broadcast") from None
    elif len(arrays) != 1:
        raise ContractError(f"{op} takes one input, got {len(arrays)}")
    return fn(*arrays)


def cumsum(x: np.ndarray, axis: int = 0) -> np.ndarray:
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return np.cumsum(x, axis=axis)


def causal_conv1d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Depthwise causal convolution along the time axis.

    Parameters
    ----------
    x : array of shape (..., T, C)
    kernel : array of shape (W, C)
        ``kernel[j]`` weights the input ``j`` steps back, so ``[1]`` is the
        identity, ``[0, 1]`` a one-step delay and ``[1, -1]`` the first
        difference ``x[t] - x[t-1]``.

    Returns
    -------
    array of shape (..., T, C) with zero left padding.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] < 1:
        raise DimensionError(f"kernel must be (W, C) with W >= 1, got {kernel.shape}")
    if x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"kernel channels {kernel.shape[1]} != input channels, input shape {x.shape}")
    T = x.shape[-2]
    out = np.zeros(x.shape, dtype=np.result_type(x, kernel))
    for lag in range(min(kernel.shape[0], T)):
        if lag == 0:
            out += kernel[0] * x
        else:
            out[..., lag:, :] += kernel[lag] * x[..., : T - lag, :]
    return out


@dataclass(frozen=True)
class ComplexPair:
    """Complex array stored as separate real and imaginary parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if np.shape(self.re) != np.shape(self.im):
            raise DimensionError(f"re/im shapes differ: {np.shape(self.re)} vs {np.shape(self.im)}")

    @classmethod
    def from_complex(cls, z: np.ndarray) -> "ComplexPair":
        z = np.asarray(z)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.re)

    def conj(self) -> "ComplexPair":
        return ComplexPair(self.re, -self.im)

    def __mul__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re * other.re - self.im * other.im, self.re * other.im + self.im * other.re)

    def __add__(self, other: "ComplexPair") -> "ComplexPair":
        return ComplexPair(self.re + other.re, self.im + other.im)

    def abs(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    def interleave(self) -> np.ndarray:
        """Realify: real parts at even indices, imaginary at odd indices of the last axis."""
        out = np.empty(self.shape[:-1] + (2 * self.shape[-1],), dtype=np.result_type(self.re, self.im))
        out[..., 0::2] = self.re
        out[..., 1::2] = self.im
        return out

    @classmethod
    def deinterleave(cls, x: np.ndarray) -> "ComplexPair":
        x = np.asarray(x)
        if x.shape[-1] % 2:
            raise DimensionError(f"last dim must be even to split into pairs, got {x.shape}")
        return cls(x[..., 0::2].copy(), x[..., 1::2].copy())
