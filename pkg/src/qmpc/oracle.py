"""Plaintext references for the secure operators.

Two kinds of reference live here:

* a fixed-point oracle that repeats every secure computation step for step on
  cleartext ring elements, with deterministic truncation and downcast;
* a float reference giving the mathematically intended result, used to judge
  approximation quality.

The oracle is the arbiter in secure-equivalence tests.  It has two rounding
modes:

``"expected"`` (default)
    truncation rounds to nearest and a local downcast subtracts the expected
    one-ulp share carry.  Secure truncation is stochastic rounding, so this is
    the deterministic value closest to the secure result on average and errors
    do not drift when they accumulate.
``"floor"``
    truncation is an arithmetic right shift and downcast is exact, i.e. the
    plain integer pipeline.

Per-op tolerances for secure-vs-oracle comparisons are in :data:`SLACK_ULPS`.
"""
from __future__ import annotations

import contextvars
from contextlib import contextmanager
from math import erf

import numpy as np

from . import nonlinear as nl
from .fxp import HIGH, FxpType, RingTensor, plain_trunc, to_signed
from .typecast import check_downcast, check_upcast

MODES = ("expected", "floor")
_MODE = contextvars.ContextVar("oracle_rounding", default="expected")


@contextmanager
def rounding(mode: str):
    """Evaluate the oracle under rounding ``mode`` inside the ``with`` block."""
    if mode not in MODES:
        raise ValueError(f"rounding mode must be one of {MODES}")
    token = _MODE.set(mode)
    try:
        yield
    finally:
        _MODE.reset(token)


def trunc(x: RingTensor, shift: int) -> RingTensor:
    """Deterministic stand-in for secure truncation under the current mode."""
    if shift == 0 or _MODE.get() == "floor":
        return plain_trunc(x, shift)
    return RingTensor.from_signed((x.signed() + (1 << (shift - 1))) >> shift, x.bits)

# Worst-case |secure - oracle| in output ulps over random inputs (see
# ``measure_slack``), with headroom.  Polynomial pieces amplify each 1-ulp
# truncation slip by the powers of x they are later multiplied with, hence the
# wide gelu_poly entry at 18 fraction bits.  recip and rsqrt rescale by a
# secret power of two, so they are bounded relatively (``SLACK_REL``) on top of
# an ulp floor.
SLACK_ULPS = {
    "matmul": 1,
    "mul": 1,
    "scale": 1,
    "add": 0,
    "sub": 0,
    "sum": 0,
    "max": 0,
    "upcast": 0,
    "downcast": 2,
    "gelu_quad": 1,
    "gelu_poly": 128,
    "exp": 2,
    "recip": 4,
    "rsqrt": 4,
    "softmax": 2,
    "layernorm": 4,
}
SLACK_REL = {"recip": 2.0 ** -12, "rsqrt": 2.0 ** -12}


# ---------------------------------------------------------------------------
# ring-level helpers
# ---------------------------------------------------------------------------


def _raw(value: float, t: FxpType) -> int:
    return nl.encode_int(value, t)


def _add_const(x: RingTensor, c: int) -> RingTensor:
    return x + RingTensor.from_signed(np.int64(c), x.bits)


def mul_trunc(a: RingTensor, b: RingTensor, t: FxpType) -> RingTensor:
    return trunc(a * b, t.frac)


def mul_public(x: RingTensor, value: float, t: FxpType) -> RingTensor:
    return trunc(x * RingTensor.from_signed(np.int64(_raw(value, t)), t.bits), t.frac)


def less_than_const(x: RingTensor, value: float, t: FxpType) -> np.ndarray:
    raw = int(np.round(value * 2 ** t.frac))
    return x.signed() < raw


def upcast(x: RingTensor, src: FxpType, dst: FxpType) -> RingTensor:
    check_upcast(src, dst)
    return RingTensor.from_signed(x.signed() << (dst.frac - src.frac), dst.bits)


def downcast(x: RingTensor, src: FxpType, dst: FxpType, offset_ulps: float = 0.0) -> RingTensor:
    """Counterpart of the share-wise downcast: arithmetic shift and wrap, less the
    expected one-ulp carry in ``"expected"`` mode."""
    check_downcast(src, dst)
    shift = src.frac - dst.frac
    if offset_ulps:
        x = _add_const(x, int(round(offset_ulps * 2 ** shift)))
    carry = 1 if _MODE.get() == "expected" else 0
    return RingTensor.from_signed((x.signed() >> shift) - carry, dst.bits)


def trunc_downcast(x: RingTensor, shift: int, dst: FxpType) -> RingTensor:
    return RingTensor(trunc(x, shift).data, dst.bits)


# ---------------------------------------------------------------------------
# non-linear functions, mirroring ``nonlinear``
# ---------------------------------------------------------------------------


def gelu_quad(x: RingTensor, t: FxpType) -> RingTensor:
    a, b, c = (_raw(v, t) for v in nl.GELU_QUAD)
    inner = _add_const(x * RingTensor.from_signed(np.int64(a), t.bits), b << t.frac)
    return _add_const(trunc(x * inner, 2 * t.frac), c)


def _horner(x: RingTensor, coeffs, t: FxpType) -> RingTensor:
    acc = _add_const(mul_public(x, coeffs[0], t), _raw(coeffs[1], t))
    for c in coeffs[2:]:
        acc = _add_const(mul_trunc(acc, x, t), _raw(c, t))
    return acc


def gelu_poly(x: RingTensor, t: FxpType) -> RingTensor:
    s = x.signed()
    b1 = s + _raw(-nl.GELU_LOW, t) < 0
    b2 = s + _raw(-nl.GELU_MID, t) < 0
    b3 = -s + _raw(nl.GELU_HIGH, t) < 0
    x2 = mul_trunc(x, x, t)
    f0 = _horner(x, nl.GELU_F0, t)
    even = _horner(x2, nl.GELU_F1_EVEN, t)
    f1 = _add_const(mul_trunc(even, x2, t) + trunc(x, 1), _raw(nl.GELU_F1_CONST, t))
    bit = lambda b: RingTensor.from_signed(b.astype(np.int64), t.bits)  # noqa: E731
    return f1 + bit(b3) * (x - f1) + bit(b2) * (f0 - f1) - bit(b1) * f0


def exp_neg(x: RingTensor, t: FxpType, threshold: float = nl.EXP_THRESHOLD,
            squarings: int = nl.EXP_SQUARINGS) -> RingTensor:
    fi = nl.EXP_INTERNAL_FRAC if t.bits == 64 else t.frac + squarings
    up = fi - t.frac - squarings
    below = less_than_const(x, threshold, t)
    y = _add_const(x << up, 1 << fi)
    for i in range(squarings):
        last = i == squarings - 1
        y = trunc(y * y, fi + (fi - t.frac if last else 0))
    return RingTensor(np.where(below, np.uint64(0), y.data), t.bits)


def max_vec(x: RingTensor) -> RingTensor:
    return RingTensor.from_signed(x.signed().max(axis=-1), x.bits)


def _leading_index(x: RingTensor, nbits: int) -> np.ndarray:
    """Index of the highest set bit among the low ``nbits`` bits (0 when none)."""
    low = (x.data & np.uint64((1 << nbits) - 1)).astype(np.int64)
    idx = np.zeros(low.shape, dtype=np.int64)
    nz = low > 0
    idx[nz] = np.floor(np.log2(low[nz].astype(np.float64))).astype(np.int64)
    # float log2 can round up right below a power of two
    fix = nz & ((np.int64(1) << idx) > low)
    idx[fix] -= 1
    return idx


def _onehot_weight(x: RingTensor, nbits: int, table) -> RingTensor:
    idx = _leading_index(x, nbits)
    table = np.asarray(table, dtype=np.uint64)
    present = (x.data & np.uint64((1 << nbits) - 1)) > 0
    return RingTensor(np.where(present, table[idx], np.uint64(0)), x.bits)


def recip(x: RingTensor, t: FxpType, iters: int = nl.RECIP_ITERS) -> RingTensor:
    f, nb = t.frac, nl.norm_bits(t)
    scale = _onehot_weight(x, nb, [1 << (nb - 1 - k) for k in range(nb)])
    xn = trunc(x * scale, nb - f)
    a, b = nl.RECIP_SEED
    y = _add_const(mul_public(xn, -b, t), _raw(a, t))
    two = _raw(2.0, t)
    for _ in range(iters):
        e = mul_trunc(xn, y, t)
        y = mul_trunc(y, _add_const(-e, two), t)
    return trunc(y * scale, nb - f)


def rsqrt(x: RingTensor, t: FxpType, iters: int = nl.RSQRT_ITERS) -> RingTensor:
    norm, out, norm_shift, out_shift = nl._rsqrt_tables(t)
    nb = nl.norm_bits(t)
    c_norm = _onehot_weight(x, nb, norm)
    c_out = _onehot_weight(x, nb, out)
    xn = trunc(x * c_norm, norm_shift)
    a, b = nl.RSQRT_SEED
    y = _add_const(mul_public(xn, -b, t), _raw(a, t))
    three = _raw(3.0, t)
    for _ in range(iters):
        y2 = mul_trunc(y, y, t)
        e = mul_trunc(xn, y2, t)
        y = trunc(y * _add_const(-e, three), t.frac + 1)
    return trunc(y * c_out, out_shift)


def _sum_last(x: RingTensor) -> RingTensor:
    return RingTensor(x.data.sum(axis=-1, dtype=np.uint64), x.bits)


def _bcast(x: RingTensor, shape) -> RingTensor:
    return RingTensor(np.broadcast_to(x.data[..., None], shape), x.bits)


def softmax(x: RingTensor, t: FxpType, compute: FxpType = HIGH) -> RingTensor:
    d = x - _bcast(max_vec(x), x.shape)
    if t != compute:
        d = upcast(d, t, compute)
    e = exp_neg(d, compute)
    r = recip(_sum_last(e), compute)
    prod = e * _bcast(r, e.shape)
    if t != compute:
        return trunc_downcast(prod, 2 * compute.frac - t.frac, t)
    return trunc(prod, compute.frac)


def layernorm(x: RingTensor, g: RingTensor, b: RingTensor, t: FxpType, eps: float = 1e-5,
              compute: FxpType = HIGH) -> RingTensor:
    n = x.shape[-1]
    if t != compute:
        x = upcast(x, t, compute)
    mu = mul_public(_sum_last(x), 1.0 / n, compute)
    d = x - _bcast(mu, x.shape)
    var = mul_public(trunc(_sum_last(d * d), compute.frac), 1.0 / n, compute)
    r = rsqrt(_add_const(var, max(_raw(eps, compute), 1)), compute)
    nrm = mul_trunc(d, _bcast(r, d.shape), compute)
    gb = RingTensor(np.broadcast_to(g.data, nrm.shape), compute.bits)
    bb = RingTensor(np.broadcast_to(b.data, nrm.shape), compute.bits)
    acc = nrm * gb + (bb << compute.frac)
    if t != compute:
        return trunc_downcast(acc, 2 * compute.frac - t.frac, t)
    return trunc(acc, compute.frac)


# ---------------------------------------------------------------------------
# dispatch by op kind
# ---------------------------------------------------------------------------


def fxp_oracle(op: str, inputs, types, **attrs) -> RingTensor:
    """Evaluate ``op`` on cleartext ring tensors.

    ``types`` holds the input type(s); a single ``FxpType`` applies to every
    input.  Casts take the target as ``attrs["target"]``; softmax and layernorm
    accept ``compute``.  Layernorm expects ``g`` and ``b`` at ``compute``.
    """
    if isinstance(inputs, RingTensor):
        inputs = [inputs]
    inputs = list(inputs)
    t = types if isinstance(types, FxpType) else types[0]
    if op == "matmul":
        return trunc(inputs[0] @ inputs[1], t.frac)
    if op == "mul":
        return mul_trunc(inputs[0], inputs[1], t)
    if op == "scale":
        return mul_public(inputs[0], attrs["value"], t)
    if op == "add":
        return inputs[0] + inputs[1]
    if op == "sub":
        return inputs[0] - inputs[1]
    if op == "max":
        return max_vec(inputs[0])
    if op == "sum":
        return _sum_last(inputs[0])
    if op == "upcast":
        return upcast(inputs[0], t, attrs["target"])
    if op == "downcast":
        return downcast(inputs[0], t, attrs["target"], attrs.get("offset", 0.0))
    if op == "gelu_quad":
        return gelu_quad(inputs[0], t)
    if op == "gelu_poly":
        return gelu_poly(inputs[0], t)
    if op == "exp":
        return exp_neg(inputs[0], t)
    if op == "recip":
        return recip(inputs[0], t)
    if op == "rsqrt":
        return rsqrt(inputs[0], t)
    if op == "softmax":
        return softmax(inputs[0], t, attrs.get("compute", HIGH))
    if op == "layernorm":
        return layernorm(*inputs[:3], t, attrs.get("eps", 1e-5), attrs.get("compute", HIGH))
    raise ValueError(f"oracle has no op {op!r}")


# ---------------------------------------------------------------------------
# float reference and metrics
# ---------------------------------------------------------------------------

_erf = np.vectorize(erf, otypes=[np.float64])


def exp_approx(x, threshold: float = nl.EXP_THRESHOLD, squarings: int = nl.EXP_SQUARINGS) -> np.ndarray:
    """The exponential approximation ``(1 + x/2^t)^(2^t)`` with its clamp, in float64."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < threshold, 0.0, (1.0 + x / 2 ** squarings) ** (2 ** squarings))


def float_ref(op: str, inputs, **attrs) -> np.ndarray:
    """Mathematically intended result of ``op`` on real inputs."""
    if not isinstance(inputs, (list, tuple)):
        inputs = [inputs]
    xs = [np.asarray(v, dtype=np.float64) for v in inputs]
    x = xs[0]
    if op == "matmul":
        return x @ xs[1]
    if op == "mul":
        return x * xs[1]
    if op == "scale":
        return x * attrs["value"]
    if op == "add":
        return x + xs[1]
    if op == "sub":
        return x - xs[1]
    if op == "max":
        return x.max(axis=-1)
    if op == "sum":
        return x.sum(axis=-1)
    if op in ("upcast", "downcast"):
        return x
    if op == "gelu":
        return 0.5 * x * (1.0 + _erf(x / np.sqrt(2.0)))
    if op == "gelu_quad":
        a, b, c = nl.GELU_QUAD
        return a * x * x + b * x + c
    if op == "gelu_poly":
        f0 = np.polyval(nl.GELU_F0, x)
        e = nl.GELU_F1_EVEN
        f1 = e[0] * x ** 6 + e[1] * x ** 4 + e[2] * x ** 2 + nl.GELU_F1_LINEAR * x + nl.GELU_F1_CONST
        return np.select([x < nl.GELU_LOW, x < nl.GELU_MID, x <= nl.GELU_HIGH], [0.0, f0, f1], x)
    if op == "exp":
        return np.exp(x)
    if op == "recip":
        return 1.0 / x
    if op == "rsqrt":
        return 1.0 / np.sqrt(x)
    if op == "softmax":
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if op == "layernorm":
        g = xs[1] if len(xs) > 1 else 1.0
        b = xs[2] if len(xs) > 2 else 0.0
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + attrs.get("eps", 1e-5)) * g + b
    raise ValueError(f"no float reference for {op!r}")


def metrics(a, b) -> dict:
    """Error summary between two arrays: max and mean absolute error and max relative error."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    if diff.size == 0:
        return {"max_abs": 0.0, "mean_abs": 0.0, "rel": 0.0}
    denom = np.maximum(np.abs(b), np.finfo(np.float64).tiny)
    return {
        "max_abs": float(diff.max()),
        "mean_abs": float(diff.mean()),
        "rel": float((diff / denom).max()),
    }


def ulp_diff(a: RingTensor, b: RingTensor) -> np.ndarray:
    """Signed difference ``a - b`` in raw ulps, taken around the ring."""
    if a.bits != b.bits:
        raise ValueError("ulp_diff needs equal widths")
    return to_signed((a - b).data, a.bits)


def within_slack(op: str, got: RingTensor, want: RingTensor, scale: float = 1.0) -> bool:
    """Whether a secure result is within the documented slack of the oracle.

    ``scale`` multiplies the allowance, e.g. by the number of chained ops.
    """
    diff = np.abs(ulp_diff(got, want).astype(np.float64))
    allow = np.full(diff.shape, SLACK_ULPS[op] * scale)
    if op in SLACK_REL:
        allow = np.maximum(allow, SLACK_REL[op] * scale * np.abs(want.signed().astype(np.float64)))
    return bool(np.all(diff <= allow))


def measure_slack(op: str, secure_fn, sample, trials: int = 1) -> int:
    """Largest |secure - oracle| in ulps over ``trials`` draws.

    ``sample()`` returns ``(inputs, types, attrs)`` as accepted by :func:`fxp_oracle`;
    ``secure_fn(inputs, types, attrs)`` returns the reconstructed secure result.
    """
    worst = 0
    for _ in range(trials):
        inputs, types, attrs = sample()
        want = fxp_oracle(op, inputs, types, **attrs)
        got = secure_fn(inputs, types, attrs)
        worst = max(worst, int(np.abs(ulp_diff(got, want)).max(initial=0)))
    return worst

