"""Fixed-point fully connected layer on the digital side of the ADC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FixedPointFormat:
    operand_bits: int

    def __post_init__(self):
        if not 2 <= self.operand_bits <= 16:
            raise ValueError(f"operand width must lie in [2, 16], got {self.operand_bits}")

    @property
    def product_bits(self) -> int:
        return 2 * self.operand_bits

    @property
    def accumulator_bits(self) -> int:
        return 3 * self.operand_bits

    @property
    def acc_min(self) -> int:
        return -(1 << (self.accumulator_bits - 1))

    @property
    def acc_max(self) -> int:
        return (1 << (self.accumulator_bits - 1)) - 1

    @property
    def safe_terms(self) -> int:
        """Dot-product length that can never overflow the accumulator."""
        return 1 << self.operand_bits


@dataclass(frozen=True)
class FcResult:
    scores: np.ndarray
    multiplies: int
    adds: int
    saturations: int


def _check_codes(arr: np.ndarray, bits: int, what: str) -> None:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise ValueError(f"{what} codes exceed the {bits}-bit signed range")


def _saturating_dot(products: np.ndarray, fmt: FixedPointFormat) -> tuple[int, int]:
    acc = 0
    sat = 0
    for p in products.tolist():
        acc += p
        if acc > fmt.acc_max:
            acc, sat = fmt.acc_max, sat + 1
        elif acc < fmt.acc_min:
            acc, sat = fmt.acc_min, sat + 1
    return acc, sat


def fc_eval(inputs, weights, fmt: FixedPointFormat) -> FcResult:
    """Integer dot products of ``weights`` (out x in) with ``inputs``.

    Operands are signed integer codes. Products are exact in 2Nb bits; the
    running sum lives in a 3Nb-bit register that saturates at the rails,
    and every saturation is counted.
    """
    x = np.asarray(inputs)
    w = np.asarray(weights)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"fc shapes disagree: weights {w.shape}, inputs {x.shape}")
    if not (np.issubdtype(x.dtype, np.integer) and np.issubdtype(w.dtype, np.integer)):
        raise TypeError("fc_eval operates on integer codes")
    x = x.astype(np.int64)
    w = w.astype(np.int64)
    _check_codes(x, fmt.operand_bits, "input")
    _check_codes(w, fmt.operand_bits, "weight")
    products = w * x[None, :]
    running = np.cumsum(products, axis=1)
    scores = running[:, -1].copy() if running.shape[1] else np.zeros(w.shape[0], dtype=np.int64)
    saturations = 0
    overflowing = np.nonzero((running > fmt.acc_max).any(axis=1) | (running < fmt.acc_min).any(axis=1))[0]
    for r in overflowing:
        scores[r], n = _saturating_dot(products[r], fmt)
        saturations += n
    n_out, n_in = w.shape
    return FcResult(scores, multiplies=n_out * n_in, adds=n_out * max(n_in - 1, 0), saturations=saturations)


def argmax(scores) -> int:
    """Index of the largest score; ties resolve to the lowest index."""
    s = np.asarray(scores)
    if s.size == 0:
        raise ValueError("argmax of an empty score vector")
    return int(np.argmax(s))
