"""Secure non-linear functions over mixed fixed-point types.

All functions take the calling party first and work on its shares.  Linear
steps are local; every product is followed by a probabilistic truncation.
"""
from __future__ import annotations

import numpy as np

from .fxp import HIGH, LOW, FxpType, const
from .rss import (
    BoolShare,
    Party,
    RssShare,
    and_bits,
    bit_decompose,
    bit_inject,
    less_than,
    less_than_const,
    msb,
    mul,
    mul_trunc,
    select,
    trunc,
)
from .typecast import downcast, trunc_downcast, upcast

GELU_QUAD = (0.125, 0.25, 0.5)
GELU_F0 = (-0.011034134030615728, -0.11807612951181953, -0.42226581151983866, -0.5054031199708174)
GELU_F1_EVEN = (0.0018067462606141187, -0.037688200365904236, 0.3603292692789629)
GELU_F1_LINEAR = 0.5
GELU_F1_CONST = 0.008526321541038084
GELU_LOW, GELU_MID, GELU_HIGH = -4.0, -1.95, 3.0

EXP_THRESHOLD = -14.0
EXP_SQUARINGS = 5
EXP_INTERNAL_FRAC = 28

RECIP_SEED = (48 / 17, 32 / 17)  # minimax line for 1/x on [0.5, 1)
RSQRT_SEED = (2.13277254, 1.21872717)  # minimax line for 1/sqrt(x) on [0.25, 1)
RECIP_ITERS = 3
RSQRT_ITERS = 3
NORM_HEADROOM = 16  # integer bits covered by recip/rsqrt normalization

# A local downcast loses the fraction (mean 0.5 ulp of the target) plus a share
# carry of mean 1 ulp; adding this offset at the source precision centres it.
UNBIASED_OFFSET = 1.5


def encode_int(value: float, t: FxpType) -> int:
    v = value * 2.0 ** t.frac
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


def add_public(x: RssShare, value: float) -> RssShare:
    return x.add_const(const(encode_int(value, x.ftype), x.bits))


def mul_public(p: Party, x: RssShare, value: float) -> RssShare:
    return trunc(p, x.scalar_mul(encode_int(value, x.ftype)), x.ftype.frac)


def downcast_offset(x: RssShare, target: FxpType, offset_ulps: float) -> RssShare:
    """Downcast after adding ``offset_ulps`` target ulps (exact at the source precision)."""
    raw = int(round(offset_ulps * 2 ** (x.ftype.frac - target.frac)))
    return downcast(x.add_const(const(raw, x.bits)), target)


def gelu_quad(p: Party, x: RssShare) -> RssShare:
    """``0.125 x^2 + 0.25 x + 0.5`` with integer coefficients and a single truncation.

    The inner affine term stays at doubled scale so the only rounding happens
    after the product.  Valid while ``|x (0.125 x + 0.25)| < 2**(l - 2 - 3f)``.
    """
    t = x.ftype
    a, b, c = (encode_int(v, t) for v in GELU_QUAD)
    with p.phase("gelu_quad"):
        inner = x.scalar_mul(a).add_const(const(b << t.frac, t.bits))
        y = trunc(p, mul(p, x, inner), 2 * t.frac)
        return y.add_const(const(c, t.bits))


def _horner(p: Party, x: RssShare, coeffs) -> RssShare:
    acc = add_public(mul_public(p, x, coeffs[0]), coeffs[1])
    for c in coeffs[2:]:
        acc = add_public(mul_trunc(p, acc, x), c)
    return acc


def gelu_poly(p: Party, x: RssShare) -> RssShare:
    """Four-piece GeLU: 0 | cubic | degree-6 even + 0.5x | identity.

    All pieces are evaluated; three comparisons run in one batch and the pieces
    are combined as ``f1 + b3 (x - f1) + b2 (f0 - f1) - b1 f0`` where
    ``b1 = [x < -4]``, ``b2 = [x < -1.95]``, ``b3 = [x > 3]``.
    """
    t = x.ftype
    with p.phase("gelu_poly"):
        probes = RssShare.concat([
            add_public(x, -GELU_LOW)[None],
            add_public(x, -GELU_MID)[None],
            add_public(-x, GELU_HIGH)[None],
        ])
        bits = msb(p, probes)
        x2 = mul_trunc(p, x, x)
        f0 = _horner(p, x, GELU_F0)
        even = _horner(p, x2, GELU_F1_EVEN)
        f1 = add_public(mul_trunc(p, even, x2) + trunc(p, x, 1), GELU_F1_CONST)
        flags = bit_inject(p, bits, t)
        terms = RssShare.concat([(x - f1)[None], (f0 - f1)[None], (-f0)[None]])
        weighted = mul(p, flags[[2, 1, 0]], terms)
        return f1 + weighted[0] + weighted[1] + weighted[2]


def exp_neg(p: Party, x: RssShare, threshold: float = EXP_THRESHOLD, squarings: int = EXP_SQUARINGS,
            internal_frac: int | None = None, below: BoolShare | None = None) -> RssShare:
    """``(1 + x/2^t)^(2^t)`` for ``x >= threshold`` and 0 below, for non-positive ``x``.

    Squarings run at ``internal_frac`` fraction bits; the division by ``2^t`` is an
    exact left shift into that precision, and the last squaring truncates straight
    back to the input type.  ``below`` may carry a precomputed ``x < threshold``
    bit (e.g. from a cheaper comparison in a smaller ring).
    """
    t = x.ftype
    fi = internal_frac if internal_frac is not None else (EXP_INTERNAL_FRAC if t.bits == 64 else t.frac + squarings)
    up = fi - t.frac - squarings
    if up < 0 or 2 * fi > t.bits - 3:
        raise ValueError(f"internal precision {fi} incompatible with {t}")
    with p.phase("exp"):
        if below is None:
            below = less_than_const(p, x, threshold)
        y = x.lshift(up).add_const(const(1 << fi, t.bits))
        for i in range(squarings):
            last = i == squarings - 1
            y = trunc(p, mul(p, y, y), fi + (fi - t.frac if last else 0))
        y = y.with_type(t)
        gate = bit_inject(p, below, t)
        return y - mul(p, gate, y)


def max_vec(p: Party, x: RssShare) -> RssShare:
    """Maximum over the last axis by a tournament of compare-and-select layers."""
    with p.phase("max"):
        cur = x
        while cur.shape[-1] > 1:
            n = cur.shape[-1]
            half = n // 2
            a, b = cur[..., 0:2 * half:2], cur[..., 1:2 * half:2]
            c = less_than(p, a, b)
            best = select(p, c, b, a)
            if n % 2:
                best = RssShare.concat([best, cur[..., n - 1:]], axis=-1)
            cur = best
        return cur[..., 0]


def _const_bits(p: Party, shape, value: int) -> BoolShare:
    bits = np.full(shape, value, dtype=np.uint8)
    zeros = np.zeros(shape, dtype=np.uint8)
    return BoolShare(p.id, bits if p.id == 0 else zeros, bits if p.id == 2 else zeros)


def _leading_one(p: Party, x: RssShare, nbits: int) -> RssShare:
    """Arithmetic one-hot (raw 0/1, lanes LSB first) of the highest set bit of positive ``x``."""
    lanes = bit_decompose(p, x, nbits)
    # clear[i]: no bit set at or above i (suffix AND of the negated bits)
    clear = lanes.xor_const(np.uint8(1))
    d = 1
    while d < nbits:
        shifted = BoolShare.concat([clear[..., d:], _const_bits(p, x.shape + (d,), 1)])
        clear = and_bits(p, clear, shifted)
        d *= 2
    above = BoolShare.concat([clear[..., 1:], _const_bits(p, x.shape + (1,), 1)])
    # clear is monotone in i, so "set at i but clear above" is a plain XOR
    return bit_inject(p, clear ^ above, x.ftype)


def _weighted_lanes(onehot: RssShare, weights) -> RssShare:
    return onehot.scalar_mul(np.asarray(weights, dtype=np.int64)).sum(axis=-1)


def norm_bits(t: FxpType) -> int:
    return t.frac + NORM_HEADROOM


def recip(p: Party, x: RssShare, iters: int = RECIP_ITERS) -> RssShare:
    """``1/x`` for positive ``x`` below ``2**NORM_HEADROOM``.

    ``x`` is scaled by a secret power of two into ``[0.5, 1)``, a linear seed is
    refined by Newton steps ``y <- y (2 - x y)``, and the result is rescaled.
    """
    t = x.ftype
    f, nb = t.frac, norm_bits(t)
    with p.phase("recip"):
        onehot = _leading_one(p, x, nb)
        scale = _weighted_lanes(onehot, [1 << (nb - 1 - k) for k in range(nb)])
        xn = trunc(p, mul(p, x, scale), nb - f)
        a, b = RECIP_SEED
        y = add_public(mul_public(p, xn, -b), a)
        for _ in range(iters):
            e = mul_trunc(p, xn, y)
            y = mul_trunc(p, y, add_public(-e, 2.0))
        return trunc(p, mul(p, y, scale), nb - f)


def _rsqrt_tables(t: FxpType):
    f, nb = t.frac, norm_bits(t)
    norm, out = [], []
    shift_out = (nb + 1 - f + 1) // 2
    for k in range(nb):
        m = k + 1
        m2 = m if (m - f) % 2 == 0 else m + 1
        norm.append(1 << (nb + 1 - m2))
        out.append(1 << ((f - m2) // 2 + shift_out))
    return norm, out, nb + 1 - f, shift_out


def rsqrt(p: Party, x: RssShare, iters: int = RSQRT_ITERS) -> RssShare:
    """``1/sqrt(x)`` for positive ``x``: normalize into ``[0.25, 1)`` by an even
    power of two, linear seed, Newton steps ``y <- y (3 - x y^2) / 2``."""
    t = x.ftype
    norm, out, norm_shift, out_shift = _rsqrt_tables(t)
    with p.phase("rsqrt"):
        onehot = _leading_one(p, x, norm_bits(t))
        c_norm = _weighted_lanes(onehot, norm)
        c_out = _weighted_lanes(onehot, out)
        xn = trunc(p, mul(p, x, c_norm), norm_shift)
        a, b = RSQRT_SEED
        y = add_public(mul_public(p, xn, -b), a)
        for _ in range(iters):
            y2 = mul_trunc(p, y, y)
            e = mul_trunc(p, xn, y2)
            y = trunc(p, mul(p, y, add_public(-e, 3.0)), t.frac + 1)
        return trunc(p, mul(p, y, c_out), out_shift)


def softmax(p: Party, x: RssShare, compute: FxpType = HIGH) -> RssShare:
    """Softmax over the last axis.

    Max-normalization and the exp clamp test run at the input type; exp, sum
    and division run at ``compute``.  When the types differ the input is upcast
    and the final product is truncated straight to the input scale and reduced
    into its ring, so outputs are stochastically rounded and never negative.
    """
    src = x.ftype
    with p.phase("softmax"):
        m = max_vec(p, x)
        d = x - m[..., None].broadcast_to(x.shape)
        below = None
        if src != compute:
            below = less_than_const(p, d, EXP_THRESHOLD)
            d = upcast(p, d, compute)
        e = exp_neg(p, d, below=below)
        r = recip(p, e.sum(axis=-1))
        prod = mul(p, e, r[..., None].broadcast_to(e.shape))
        if src != compute:
            return trunc_downcast(p, prod, 2 * compute.frac - src.frac, src)
        return trunc(p, prod, compute.frac)


def layernorm(p: Party, x: RssShare, g: RssShare, b: RssShare, eps: float = 1e-5,
              compute: FxpType = HIGH) -> RssShare:
    """``(x - mean) / sqrt(var + eps) * g + b`` over the last axis at ``compute`` precision.

    ``g`` and ``b`` must already be at ``compute``.
    """
    src = x.ftype
    n = x.shape[-1]
    with p.phase("layernorm"):
        if src != compute:
            x = upcast(p, x, compute)
        mu = mul_public(p, x.sum(axis=-1), 1.0 / n)
        d = x - mu[..., None].broadcast_to(x.shape)
        # squares accumulate at doubled scale; one truncation per row
        var = mul_public(p, trunc(p, mul(p, d, d).sum(axis=-1), compute.frac), 1.0 / n)
        eps_raw = max(encode_int(eps, compute), 1)
        r = rsqrt(p, var.add_const(const(eps_raw, compute.bits)))
        nrm = mul_trunc(p, d, r[..., None].broadcast_to(d.shape))
        # bias joins at the doubled scale so a single truncation finishes the layer
        acc = mul(p, nrm, g.broadcast_to(nrm.shape)) + b.broadcast_to(nrm.shape).lshift(compute.frac)
        if src != compute:
            return trunc_downcast(p, acc, 2 * compute.frac - src.frac, src)
        return trunc(p, acc, compute.frac)
