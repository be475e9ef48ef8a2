"""Share conversion between fixed-point types living in different rings.

``downcast`` is local: every share is shifted right and reduced into the
smaller ring, at the cost of a carry error of at most two ulps.  ``upcast``
is interactive: P2 deals a mask ``r`` over the larger ring, P0/P1 open
``x + r`` in the small ring and repair the single possible wrap using the
top bit of ``r``, which is valid because a bias of ``2**(l-2)`` keeps the
masked input's top bit clear.
"""
from __future__ import annotations

import numpy as np

from .fxp import FxpType, const, msb_of, wrap
from .rss import Party, RssShare, _two_of_two_to_rss, reveal, trunc


class CastError(ValueError):
    """Source and target types do not satisfy the cast's parameter constraints."""


def check_downcast(src: FxpType, dst: FxpType):
    shift = src.frac - dst.frac
    if not (src.bits > dst.bits and src.frac > dst.frac):
        raise CastError(f"downcast needs a smaller ring and fewer fraction bits: {src} -> {dst}")
    if src.bits - shift < dst.bits:
        raise CastError(f"{src} -> {dst}: wrap term survives since {src.bits} - {shift} < {dst.bits}")


def check_upcast(src: FxpType, dst: FxpType):
    if not (src.bits < dst.bits and src.frac < dst.frac):
        raise CastError(f"upcast needs a larger ring and more fraction bits: {src} -> {dst}")


def downcast(x: RssShare, target: FxpType) -> RssShare:
    """Local cast to a smaller ring: ``x_i >> (f - f') mod 2**l'`` on every share."""
    check_downcast(x.ftype, target)
    shift = np.uint64(x.ftype.frac - target.frac)
    return RssShare(x.party, wrap(x.lo >> shift, target.bits), wrap(x.hi >> shift, target.bits), target)


def trunc_downcast(p: Party, x: RssShare, shift: int, target: FxpType) -> RssShare:
    """Truncate by ``shift`` bits and move the result into ``target``'s smaller ring.

    Used where a product is about to be cast down anyway: truncating straight to
    the target scale and reducing every share modulo ``2**l'`` replaces the
    local downcast and its carry error by the truncation's stochastic rounding,
    at the cost of the truncation alone.  ``x.frac - shift`` must equal
    ``target.frac`` and the result must fit the target ring.
    """
    src = x.ftype
    if target.bits >= src.bits:
        raise CastError(f"trunc_downcast needs a smaller target ring: {src} -> {target}")
    y = trunc(p, x, shift)
    return RssShare(y.party, wrap(y.lo, target.bits), wrap(y.hi, target.bits), target)


def upcast_bits_per_element(src: FxpType, dst: FxpType) -> int:
    """Total bits on the wire per element for :func:`upcast` as implemented.

    Round 1: P2 sends P1 its share of ``r`` (``l'`` bits) and of ``r_msb``; the latter
    only enters multiplied by ``2**l``, so it travels modulo ``2**(l' - l)``.
    P0's shares come from the PRF seed it shares with P2.
    Round 2: P0 and P1 exchange their shares of ``x + r`` (2 words of ``l`` bits).
    Round 3: P0 and P1 exchange the padded output shares (2 words of ``l'`` bits).
    """
    return dst.bits + (dst.bits - src.bits) + 2 * src.bits + 2 * dst.bits


def upcast(p: Party, x: RssShare, target: FxpType, check: bool = False) -> RssShare:
    """Exact cast to a larger ring with more fraction bits; three rounds.

    The input must decode into ``[-2**(l-2-f), 2**(l-2-f))``.  With ``check=True``
    the parties additionally open input and output and raise on disagreement
    (debugging only: it reveals the value).
    """
    src = x.ftype
    check_upcast(src, target)
    l, big = src.bits, target.bits
    shape = x.shape
    bias = 1 << (l - 2)
    top = np.uint64(l - 1)
    with p.phase("upcast"):
        xb = x.add_const(const(bias, l))
        if p.id == 2:
            r = p.private(shape, l)
            r_top = (r >> top) & np.uint64(1)
            r0 = p.keys.draw(0, shape, big)
            t0 = p.keys.draw(0, shape, big - l)
            p.send(1, wrap(r - r0, big), big)
            p.send(1, wrap(r_top - t0, big - l), big - l)
            p.barrier()
            p.barrier()
            out = _two_of_two_to_rss(p, None, shape, target)
        else:
            if p.id == 0:
                r_big = p.keys.draw(2, shape, big)
                top_big = p.keys.draw(2, shape, big - l)
                p.barrier()
                x_hat = wrap(xb.lo + xb.hi, l)
            else:
                r_big = p.recv(2, shape, big)
                top_big = p.recv(2, shape, big - l)
                p.barrier()
                x_hat = xb.hi
            # the ring-l sharing of r is the ring-l' sharing reduced mod 2**l
            y_own = wrap(x_hat + wrap(r_big, l), l)
            other = 1 - p.id
            p.send(other, y_own, l)
            y = wrap(y_own + p.recv(other, shape, l), l)
            p.barrier()
            p.record_opening(y)
            not_top = np.uint64(1) - msb_of(y, l)
            wrap_bit = wrap(top_big * not_top, big)
            part = wrap(wrap_bit << np.uint64(l), big) - r_big
            if p.id == 0:
                part = part + y
            out = _two_of_two_to_rss(p, wrap(part, big), shape, target)
        out = out.add_const(const(-bias, big)).lshift(target.frac - src.frac)
    if check:
        before = reveal(p, x).signed()
        after = reveal(p, out).signed()
        if not np.array_equal(before << (target.frac - src.frac), after):
            raise ArithmeticError("upcast mismatch: input outside the bias-trick range?")
    return out
