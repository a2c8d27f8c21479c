"""Array primitives, seeded randomness and a small reverse-mode tape."""
from .rng import Rng, sample_gaussian
from .tensor import (
    ComplexPair,
    ContractError,
    DimensionError,
    NonFiniteError,
    causal_conv1d,
    check_finite,
    cumsum,
    elementwise,
    matmul,
)

__all__ = [
    "ComplexPair",
    "ContractError",
    "DimensionError",
    "NonFiniteError",
    "Rng",
    "causal_conv1d",
    "check_finite",
    "cumsum",
    "elementwise",
    "matmul",
    "sample_gaussian",
]
