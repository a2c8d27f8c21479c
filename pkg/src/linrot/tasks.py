"""Synthetic sequence tasks: parity, A3 composition, multi-query associative recall, copying.

Every generator is a pure function of ``(spec, batch_size, length, seed)``.
Batches carry next-token style targets and a mask of supervised positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.rng import Rng
from .numerics.tensor import ContractError

TASK_KINDS = ("parity", "a3", "mqar", "copy")

COPY_ALPHABET = 26
COPY_TOKEN = 26
PAD_TOKEN = 27


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "parity"
    vocab_size: int = 2
    train_min_len: int = 64
    train_max_len: int = 64
    eval_max_len: int = 256
    num_kv: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task {self.kind!r}; choose from {TASK_KINDS}")
        if not 1 <= self.train_min_len <= self.train_max_len:
            raise ValueError("need 1 <= train_min_len <= train_max_len")
        if self.eval_max_len <= self.train_max_len:
            raise ValueError("eval_max_len must exceed train_max_len (extrapolation is evaluated beyond training)")
        if self.kind == "parity" and self.vocab_size != 2:
            raise ValueError("parity uses a binary alphabet")
        if self.kind == "a3" and self.vocab_size != 3:
            raise ValueError("a3 uses the three rotations {0, 1, 2}")
        if self.kind == "copy" and self.vocab_size != COPY_ALPHABET + 2:
            raise ValueError(f"copy uses {COPY_ALPHABET} symbols plus <copy> and <pad> ({COPY_ALPHABET + 2} ids)")
        if self.kind == "mqar" and self.vocab_size < 2 * self.num_kv + 2:
            raise ValueError("mqar vocabulary too small for the requested number of keys")

    @property
    def model_vocab(self) -> int:
        return self.vocab_size


@dataclass(frozen=True)
class LabeledBatch:
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not (self.inputs.shape == self.targets.shape == self.mask.shape):
            raise ContractError("inputs, targets and mask must share a shape")

    def __len__(self):
        return self.inputs.shape[0]


def gen_parity(batch_size: int, length: int, rng: Rng) -> LabeledBatch:
    x = rng.integers(0, 2, (batch_size, length))
    return LabeledBatch(x, np.cumsum(x, axis=1) % 2, np.ones_like(x, dtype=bool))


def gen_a3(batch_size: int, length: int, rng: Rng) -> LabeledBatch:
    """Elements of A3 as powers of the 3-cycle; the running product is a sum mod 3."""
    x = rng.integers(0, 3, (batch_size, length))
    return LabeledBatch(x, np.cumsum(x, axis=1) % 3, np.ones_like(x, dtype=bool))


def gen_mqar(batch_size: int, length: int, rng: Rng, vocab_size: int = 64, num_kv: int = 8) -> LabeledBatch:
    """Key-value bindings first, then every key queried once at random later slots.

    Token 0 is filler, keys come from ``[1, V/2)`` and values from ``[V/2, V)``.
    A query occupies two slots: the key, then its value. The target for the
    key position is the value; only those positions are supervised. Rows whose
    keys collide are redrawn.
    """
    half = vocab_size // 2
    tail = length - 2 * num_kv
    if tail < 2 * num_kv:
        raise ContractError(f"length {length} too short for {num_kv} bindings plus queries")
    inputs = np.zeros((batch_size, length), dtype=np.int64)
    targets = np.zeros_like(inputs)
    mask = np.zeros((batch_size, length), dtype=bool)
    slots = tail // 2
    for b in range(batch_size):
        while True:
            keys = rng.integers(1, half, (num_kv,))
            if len(np.unique(keys)) == num_kv:
                break
        vals = rng.integers(half, vocab_size, (num_kv,))
        inputs[b, 0 : 2 * num_kv : 2] = keys
        inputs[b, 1 : 2 * num_kv : 2] = vals
        order = rng.permutation(num_kv)
        chosen = np.sort(rng.permutation(slots)[:num_kv])
        for slot, j in zip(chosen, order):
            pos = 2 * num_kv + 2 * slot
            inputs[b, pos] = keys[j]
            inputs[b, pos + 1] = vals[j]
            targets[b, pos] = vals[j]
            mask[b, pos] = True
    return LabeledBatch(inputs, targets, mask)


def gen_copy(batch_size: int, payload_len: int, rng: Rng) -> LabeledBatch:
    """``payload <copy> payload`` with next-token targets over the copied region.

    Position ``L`` holds ``<copy>`` and must predict ``payload[0]``; position
    ``L + j`` holds ``payload[j-1]`` and must predict ``payload[j]``. The mask
    therefore covers exactly ``L`` positions. The final slot is padding.
    """
    L = payload_len
    if L < 1:
        raise ContractError("payload length must be at least 1")
    payload = rng.integers(0, COPY_ALPHABET, (batch_size, L))
    inputs = np.full((batch_size, 2 * L + 1), PAD_TOKEN, dtype=np.int64)
    inputs[:, :L] = payload
    inputs[:, L] = COPY_TOKEN
    inputs[:, L + 1 :] = payload
    targets = np.full_like(inputs, PAD_TOKEN)
    targets[:, L : 2 * L] = payload
    mask = np.zeros(inputs.shape, dtype=bool)
    mask[:, L : 2 * L] = True
    return LabeledBatch(inputs, targets, mask)


def generate(spec: TaskSpec, batch_size: int, length: int, seed: int) -> LabeledBatch:
    """One batch at ``length`` (payload length for copy), a pure function of its arguments."""
    rng = Rng(seed, f"task/{spec.kind}/{spec.seed}/{length}")
    if length < 1:
        raise ContractError("length must be positive")
    if spec.kind == "parity":
        return gen_parity(batch_size, length, rng)
    if spec.kind == "a3":
        return gen_a3(batch_size, length, rng)
    if spec.kind == "mqar":
        return gen_mqar(batch_size, length, rng, spec.vocab_size, spec.num_kv)
    if length > spec.eval_max_len:
        raise ContractError(f"payload length {length} exceeds the configured maximum {spec.eval_max_len}")
    return gen_copy(batch_size, length, rng)


def train_batch(spec: TaskSpec, batch_size: int, step: int, seed: int, mixed: bool = True) -> LabeledBatch:
    """Fresh training batch for ``step``; lengths drawn from the training range, or the maximum if not ``mixed``."""
    rng = Rng(seed, f"train-length/{step}")
    length = int(rng.integers(spec.train_min_len, spec.train_max_len + 1, ()))
    if not mixed:
        length = spec.train_max_len
    return generate(spec, batch_size, length, seed * 1_000_003 + step)
