"""Fixed-point codec over power-of-two rings.

Ring elements live in ``uint64`` arrays regardless of the logical width; every
write is masked back to the width so a 32-bit ring and a 64-bit ring share one
code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_BITS = (8, 16, 32, 64)


@dataclass(frozen=True)
class FxpType:
    """Fixed-point encoding ``FXP_bits^frac``: value ``v`` is stored as round(v * 2**frac)."""

    bits: int
    frac: int

    def __post_init__(self):
        if self.bits not in SUPPORTED_BITS:
            raise ValueError(f"unsupported ring width {self.bits}")
        if not 0 <= self.frac < self.bits - 1:
            raise ValueError(f"fraction bits {self.frac} out of range for {self.bits}-bit ring")

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.frac

    @property
    def max_value(self) -> float:
        return (2 ** (self.bits - 1) - 1) / 2 ** self.frac

    def __str__(self):
        return f"FXP_{self.bits}^{self.frac}"

    @classmethod
    def parse(cls, text: str) -> "FxpType":
        """Inverse of ``str``: ``"FXP_32^8"`` -> ``FxpType(32, 8)``."""
        body = text.strip()
        if not body.startswith("FXP_") or "^" not in body:
            raise ValueError(f"not a fixed-point type: {text!r}")
        bits, frac = body[4:].split("^")
        return cls(int(bits), int(frac))


LOW = FxpType(32, 8)
HIGH = FxpType(64, 18)


def mask_of(bits: int) -> np.uint64:
    return np.uint64((1 << bits) - 1)


def wrap(a, bits: int) -> np.ndarray:
    """Reduce ``a`` (any integer array or scalar) into the ``bits``-bit ring as uint64."""
    a = np.asarray(a)
    if a.dtype != np.uint64:
        if a.dtype.kind == "O":
            a = np.vectorize(lambda v: int(v) % (1 << 64), otypes=[np.uint64])(a)
        else:
            a = a.astype(np.int64).astype(np.uint64)
    if bits == 64:
        return a
    return a & mask_of(bits)


def const(value: int, bits: int) -> np.uint64:
    """A Python integer as a ring scalar (negative values wrap)."""
    return np.uint64(int(value) % (1 << bits))


def to_signed(a: np.ndarray, bits: int) -> np.ndarray:
    """Two's-complement interpretation of ring words as int64."""
    a = np.asarray(a, dtype=np.uint64)
    if bits == 64:
        return a.view(np.int64)
    s = a.astype(np.int64)
    return np.where(s >= (1 << (bits - 1)), s - (1 << bits), s)


def msb_of(a: np.ndarray, bits: int) -> np.ndarray:
    return ((np.asarray(a, dtype=np.uint64) >> np.uint64(bits - 1)) & np.uint64(1)).astype(np.uint64)


@dataclass(frozen=True, eq=False)
class RingTensor:
    """Tensor of ``bits``-bit two's-complement integers with wrap-around arithmetic."""

    data: np.ndarray
    bits: int

    def __post_init__(self):
        object.__setattr__(self, "data", wrap(self.data, self.bits))

    @classmethod
    def from_signed(cls, values, bits: int) -> "RingTensor":
        return cls(np.asarray(values, dtype=np.int64).astype(np.uint64), bits)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def signed(self) -> np.ndarray:
        return to_signed(self.data, self.bits)

    def _check(self, other):
        if isinstance(other, RingTensor):
            if other.bits != self.bits:
                raise ValueError(f"ring width mismatch: {self.bits} vs {other.bits}")
            return other.data
        return wrap(other, self.bits)

    def __add__(self, other):
        return RingTensor(self.data + self._check(other), self.bits)

    def __sub__(self, other):
        return RingTensor(self.data - self._check(other), self.bits)

    def __mul__(self, other):
        return RingTensor(self.data * self._check(other), self.bits)

    def __matmul__(self, other):
        return RingTensor(np.matmul(self.data, self._check(other)), self.bits)

    def __neg__(self):
        return RingTensor(np.uint64(0) - self.data, self.bits)

    def __lshift__(self, k: int):
        return RingTensor(self.data << np.uint64(k), self.bits)

    def __eq__(self, other):
        return isinstance(other, RingTensor) and self.bits == other.bits and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"RingTensor(bits={self.bits}, shape={self.shape}, signed={self.signed()!r})"


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode(values, t: FxpType, return_saturated: bool = False):
    """Quantize reals to ``t``: round to nearest (ties away from zero), saturate, then wrap.

    With ``return_saturated=True`` the number of clipped entries is returned as well.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("encode expects finite values")
    scaled = round_half_away(v * 2.0 ** t.frac)
    lo, hi = -(2 ** (t.bits - 1)), 2 ** (t.bits - 1) - 1
    over = scaled > hi
    under = scaled < lo
    # float64 cannot hold 2**63 - 1; clip below it and patch the saturated words afterwards
    ints = np.clip(scaled, lo, 2.0 ** 62).astype(np.int64)
    ints = np.where(over, np.int64(hi), ints)
    ints = np.where(under, np.int64(lo), ints)
    out = RingTensor.from_signed(ints, t.bits)
    if return_saturated:
        return out, int(np.count_nonzero(over | under))
    return out


def decode(x: RingTensor, t: FxpType) -> np.ndarray:
    if x.bits != t.bits:
        raise ValueError(f"cannot decode a {x.bits}-bit tensor as {t}")
    return x.signed().astype(np.float64) / 2.0 ** t.frac


def plain_trunc(x: RingTensor, shift: int) -> RingTensor:
    """Deterministic arithmetic right shift (floor division by ``2**shift``)."""
    if not 0 <= shift < x.bits:
        raise ValueError(f"shift {shift} out of range for {x.bits}-bit ring")
    return RingTensor.from_signed(x.signed() >> shift, x.bits)
