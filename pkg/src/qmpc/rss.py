"""2-out-of-3 replicated secret sharing among three simulated parties.

Party ``i`` holds the pair ``(x_i, x_{i+1})`` of an additive sharing
``x = x_0 + x_1 + x_2 mod 2**l``.  Protocol functions take the calling
:class:`Party` first and run identically on all three parties (one thread
each); :meth:`Runtime.run` spawns the threads and gathers results.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass

import numpy as np

from .fxp import FxpType, RingTensor, const, msb_of, wrap
from .transport import Fabric, ProtocolAbort, pack, unpack


class IntegrityError(ValueError):
    """Shares handed to reconstruction do not follow the replication pattern."""


def _as_ring(c, bits: int):
    if isinstance(c, (int, np.integer)):
        return const(int(c), bits)
    a = np.asarray(c)
    return wrap(a if a.dtype == np.uint64 else a.astype(np.int64), bits)


def _pair(i: int, j: int) -> tuple:
    return (min(i, j), max(i, j))


class PrfKeySet:
    """Pairwise PRF streams held by one party (Philox in counter mode, 128-bit keys).

    Party ``i`` holds the seeds it shares with ``i+1`` and ``i-1``.  Both holders of a
    seed draw in the same order, so their counters stay in lockstep.
    """

    def __init__(self, party: int, seeds: dict):
        self.party = party
        self._gens = {}
        self.counters = {}
        for other in ((party + 1) % 3, (party + 2) % 3):
            key = _pair(party, other)
            self._gens[key] = np.random.Philox(key=seeds[key])
            self.counters[key] = 0

    def _raw(self, other: int, n: int) -> np.ndarray:
        key = _pair(self.party, other)
        self.counters[key] += n
        return self._gens[key].random_raw(n).astype(np.uint64)

    def draw(self, other: int, shape, bits: int) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return wrap(self._raw(other, n).reshape(shape), bits)

    def draw_bits(self, other: int, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        words = self._raw(other, (n + 63) // 64)
        return np.unpackbits(words.view(np.uint8))[:n].reshape(shape)

    def zero_share(self, shape, bits: int) -> np.ndarray:
        nxt, prv = (self.party + 1) % 3, (self.party + 2) % 3
        return wrap(self.draw(nxt, shape, bits) - self.draw(prv, shape, bits), bits)

    def zero_bits(self, shape) -> np.ndarray:
        nxt, prv = (self.party + 1) % 3, (self.party + 2) % 3
        return self.draw_bits(nxt, shape) ^ self.draw_bits(prv, shape)


class Party:
    """One party's runtime: identity, PRF keys, channel endpoints and private randomness."""

    def __init__(self, pid: int, fabric: Fabric, seeds: dict, private_seed: int, record_openings=False):
        self.id = pid
        self.next = (pid + 1) % 3
        self.prev = (pid + 2) % 3
        self.fabric = fabric
        self.keys = PrfKeySet(pid, seeds)
        self.rng = np.random.Philox(key=private_seed)
        self._phases = []
        self.openings = [] if record_openings else None

    @contextlib.contextmanager
    def phase(self, name: str):
        self._phases.append(name)
        try:
            yield
        finally:
            self._phases.pop()

    @property
    def phase_name(self) -> str:
        return "/".join(self._phases)

    def private(self, shape, bits: int) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return wrap(self.rng.random_raw(n).astype(np.uint64).reshape(shape), bits)

    def send(self, to: int, arr: np.ndarray, bits: int):
        self.fabric.send(self.id, to, pack(arr, bits), self.phase_name)

    def recv(self, frm: int, shape, bits: int) -> np.ndarray:
        return unpack(self.fabric.recv(self.id, frm), bits, shape)

    def barrier(self):
        self.fabric.barrier()

    def record_opening(self, values: np.ndarray):
        if self.openings is not None:
            self.openings.append(np.array(values, copy=True))


@dataclass(frozen=True, eq=False)
class RssShare:
    """Party ``party``'s view ``(x_i, x_{i+1})`` of a replicated sharing typed ``ftype``."""

    party: int
    lo: np.ndarray
    hi: np.ndarray
    ftype: FxpType

    @property
    def bits(self) -> int:
        return self.ftype.bits

    @property
    def shape(self):
        return self.lo.shape

    def _new(self, lo, hi, ftype=None):
        t = ftype or self.ftype
        return RssShare(self.party, wrap(lo, t.bits), wrap(hi, t.bits), t)

    def _other(self, other):
        if not isinstance(other, RssShare):
            raise TypeError("expected an RssShare; use add_const for public values")
        if other.ftype.bits != self.ftype.bits:
            raise ValueError(f"type mismatch: {self.ftype} vs {other.ftype}")
        return other

    def __add__(self, other):
        other = self._other(other)
        return self._new(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other):
        other = self._other(other)
        return self._new(self.lo - other.lo, self.hi - other.hi)

    def __neg__(self):
        return self._new(np.uint64(0) - self.lo, np.uint64(0) - self.hi)

    def scalar_mul(self, c) -> "RssShare":
        """Multiply by a public integer (or integer array); scale is unchanged."""
        c = _as_ring(c, self.bits)
        return self._new(self.lo * c, self.hi * c)

    def add_const(self, c) -> "RssShare":
        """Add a public ring value; it lands in the ``x_0`` component only."""
        c = _as_ring(c, self.bits)
        lo, hi = self.lo, self.hi
        if self.party == 0:
            lo = lo + c
        elif self.party == 2:
            hi = hi + c
        else:
            lo = lo + np.zeros_like(c)
            hi = hi + np.zeros_like(c)
        return self._new(lo, hi)

    def lshift(self, k: int) -> "RssShare":
        return self._new(self.lo << np.uint64(k), self.hi << np.uint64(k))

    def with_type(self, ftype: FxpType) -> "RssShare":
        if ftype.bits != self.bits:
            raise ValueError("with_type cannot change the ring width")
        return RssShare(self.party, self.lo, self.hi, ftype)

    # shape plumbing, all local
    def reshape(self, *shape):
        return RssShare(self.party, self.lo.reshape(*shape), self.hi.reshape(*shape), self.ftype)

    def transpose(self, *axes):
        return RssShare(self.party, np.transpose(self.lo, *axes), np.transpose(self.hi, *axes), self.ftype)

    def __getitem__(self, idx):
        return RssShare(self.party, self.lo[idx], self.hi[idx], self.ftype)

    def sum(self, axis=None, keepdims=False):
        return self._new(self.lo.sum(axis=axis, keepdims=keepdims, dtype=np.uint64),
                         self.hi.sum(axis=axis, keepdims=keepdims, dtype=np.uint64))

    def broadcast_to(self, shape):
        return RssShare(self.party, np.broadcast_to(self.lo, shape), np.broadcast_to(self.hi, shape), self.ftype)

    @staticmethod
    def concat(shares, axis=0):
        first = shares[0]
        return RssShare(first.party, np.concatenate([s.lo for s in shares], axis),
                        np.concatenate([s.hi for s in shares], axis), first.ftype)

    @staticmethod
    def zeros(party: int, shape, ftype: FxpType):
        z = np.zeros(shape, dtype=np.uint64)
        return RssShare(party, z, z.copy(), ftype)


@dataclass(frozen=True, eq=False)
class BoolShare:
    """Replicated XOR sharing of bit tensors; ``lo``/``hi`` are uint8 arrays of 0/1."""

    party: int
    lo: np.ndarray
    hi: np.ndarray

    @property
    def shape(self):
        return self.lo.shape

    def __xor__(self, other):
        return BoolShare(self.party, self.lo ^ other.lo, self.hi ^ other.hi)

    def xor_const(self, c):
        c = np.asarray(c, dtype=np.uint8)
        lo, hi = self.lo, self.hi
        if self.party == 0:
            lo = lo ^ c
        elif self.party == 2:
            hi = hi ^ c
        return BoolShare(self.party, lo, hi)

    def __getitem__(self, idx):
        return BoolShare(self.party, self.lo[idx], self.hi[idx])

    @staticmethod
    def concat(shares, axis=-1):
        return BoolShare(shares[0].party, np.concatenate([s.lo for s in shares], axis),
                         np.concatenate([s.hi for s in shares], axis))


class Sharing(tuple):
    """The three parties' shares of one value, as seen by the host."""

    @property
    def ftype(self):
        return self[0].ftype

    @property
    def shape(self):
        return self[0].shape


class Runtime:
    """Host for the three party runtimes.

    ``seed`` fixes every PRF key and the client's sharing randomness, so two
    runtimes built with the same seed produce identical transcripts.
    """

    def __init__(self, seed: int = 0, record_openings: bool = False, timeout: float | None = 600.0):
        ss = np.random.SeedSequence(seed)
        pair_ss, party_ss, client_ss = ss.spawn(3)
        pair_keys = pair_ss.generate_state(6, dtype=np.uint64)
        seeds = {
            (0, 1): [int(pair_keys[0]), int(pair_keys[1])],
            (1, 2): [int(pair_keys[2]), int(pair_keys[3])],
            (0, 2): [int(pair_keys[4]), int(pair_keys[5])],
        }
        private = party_ss.generate_state(6, dtype=np.uint64)
        self.fabric = Fabric(timeout=timeout)
        self.parties = [
            Party(i, self.fabric, seeds, [int(private[2 * i]), int(private[2 * i + 1])], record_openings)
            for i in range(3)
        ]
        self.client = np.random.Philox(key=[int(v) for v in client_ss.generate_state(2, dtype=np.uint64)])

    @property
    def stats(self):
        return self.fabric.stats

    def share(self, secret: RingTensor, t: FxpType) -> Sharing:
        if secret.bits != t.bits:
            raise ValueError(f"secret width {secret.bits} does not match {t}")
        n = secret.size
        x0 = wrap(self.client.random_raw(n).astype(np.uint64).reshape(secret.shape), t.bits)
        x1 = wrap(self.client.random_raw(n).astype(np.uint64).reshape(secret.shape), t.bits)
        x2 = wrap(secret.data - x0 - x1, t.bits)
        comps = (x0, x1, x2)
        return Sharing(RssShare(i, comps[i], comps[(i + 1) % 3], t) for i in range(3))

    def share_bits(self, bits: np.ndarray) -> Sharing:
        bits = np.asarray(bits, dtype=np.uint8) & 1
        n = bits.size
        b0 = (self.client.random_raw(n) & 1).astype(np.uint8).reshape(bits.shape)
        b1 = (self.client.random_raw(n) & 1).astype(np.uint8).reshape(bits.shape)
        comps = (b0, b1, bits ^ b0 ^ b1)
        return Sharing(BoolShare(i, comps[i], comps[(i + 1) % 3]) for i in range(3))

    def run(self, fn, *args, **kwargs):
        """Run ``fn(party, *args)`` on all three parties concurrently.

        Any :class:`Sharing` argument is split so each party receives only its own
        share; results that are shares are gathered back into ``Sharing`` objects.
        """
        results = [None] * 3
        errors = [None] * 3

        def local(i, obj):
            if isinstance(obj, Sharing):
                return obj[i]
            if isinstance(obj, (list, tuple)) and not isinstance(obj, Sharing):
                return type(obj)(local(i, o) for o in obj)
            if isinstance(obj, dict):
                return {k: local(i, v) for k, v in obj.items()}
            return obj

        def target(i):
            try:
                results[i] = fn(self.parties[i], *local(i, args), **local(i, kwargs))
            except BaseException as exc:  # propagate to the host, unblock the others
                errors[i] = exc
                self.fabric.close()

        threads = [threading.Thread(target=target, args=(i,), name=f"party-{i}") for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        real = [e for e in errors if e is not None and not isinstance(e, ProtocolAbort)]
        if real:
            raise real[0]
        if any(errors):
            raise next(e for e in errors if e is not None)
        return _gather(results)

    def reconstruct(self, shares: Sharing) -> RingTensor:
        """Host-side opening with a replication-consistency check."""
        s = sorted(shares, key=lambda sh: sh.party)
        if isinstance(s[0], BoolShare):
            for i in range(3):
                if not np.array_equal(s[i].hi, s[(i + 1) % 3].lo):
                    raise IntegrityError(f"party {i} and {(i + 1) % 3} disagree on a replicated share")
            return s[0].lo ^ s[1].lo ^ s[2].lo
        bits = s[0].bits
        for i in range(3):
            if not np.array_equal(wrap(s[i].hi, bits), wrap(s[(i + 1) % 3].lo, bits)):
                raise IntegrityError(f"party {i} and {(i + 1) % 3} disagree on a replicated share")
        return RingTensor(s[0].lo + s[1].lo + s[2].lo, bits)

    def open(self, shares: Sharing) -> np.ndarray:
        from .fxp import decode

        return decode(self.reconstruct(shares), shares.ftype)


def _gather(results):
    first = results[0]
    if isinstance(first, (RssShare, BoolShare)):
        return Sharing(results)
    if isinstance(first, tuple):
        return tuple(_gather([r[k] for r in results]) for k in range(len(first)))
    if isinstance(first, list):
        return [_gather([r[k] for r in results]) for k in range(len(first))]
    if isinstance(first, dict):
        return {k: _gather([r[k] for r in results]) for k in first}
    return results


# ---------------------------------------------------------------------------
# interactive arithmetic
# ---------------------------------------------------------------------------


def _reshare(p: Party, z: np.ndarray, ftype: FxpType) -> RssShare:
    """Turn additive ``z_i`` (one per party) into a fresh replicated sharing: 1 round."""
    bits = ftype.bits
    z = wrap(z + p.keys.zero_share(z.shape, bits), bits)
    p.send(p.prev, z, bits)
    hi = p.recv(p.next, z.shape, bits)
    p.barrier()
    return RssShare(p.id, z, hi, ftype)


def reveal(p: Party, x: RssShare) -> RingTensor:
    """Open ``x`` to all parties; each party sends its ``x_i`` to party ``i+1``."""
    with p.phase("reveal"):
        p.send(p.next, x.lo, x.bits)
        missing = p.recv(p.prev, x.shape, x.bits)
        p.barrier()
    return RingTensor(x.lo + x.hi + missing, x.bits)


def mul(p: Party, a: RssShare, b: RssShare) -> RssShare:
    """Element-wise product at integer level (scale doubles; follow with :func:`trunc`)."""
    if a.bits != b.bits:
        raise ValueError(f"type mismatch: {a.ftype} vs {b.ftype}")
    with p.phase("mul"):
        z = a.lo * b.lo + a.hi * b.lo + a.lo * b.hi
        return _reshare(p, np.asarray(z), a.ftype)


def matmul(p: Party, a: RssShare, b: RssShare) -> RssShare:
    """Matrix product; inner products accumulate in the full ring before resharing."""
    if a.bits != b.bits:
        raise ValueError(f"type mismatch: {a.ftype} vs {b.ftype}")
    if a.shape[-1] != b.shape[-2 if len(b.shape) > 1 else 0]:
        raise ValueError(f"shape mismatch {a.shape} @ {b.shape}")
    with p.phase("mul"):
        z = np.matmul(a.lo, b.lo + b.hi) + np.matmul(a.hi, b.lo)
        return _reshare(p, z, a.ftype)


def _two_of_two_to_rss(p: Party, y: np.ndarray | None, shape, ftype: FxpType) -> RssShare:
    """P0 holds ``y_0``, P1 holds ``y_1``; re-randomize into RSS with PRF pads: 1 round."""
    bits = ftype.bits
    if p.id == 0:
        z0 = p.keys.draw(2, shape, bits)
        m0 = wrap(y - z0, bits)
        p.send(1, m0, bits)
        m1 = p.recv(1, shape, bits)
        p.barrier()
        return RssShare(0, z0, wrap(m0 + m1, bits), ftype)
    if p.id == 1:
        z2 = p.keys.draw(2, shape, bits)
        m1 = wrap(y - z2, bits)
        p.send(0, m1, bits)
        m0 = p.recv(0, shape, bits)
        p.barrier()
        return RssShare(1, wrap(m0 + m1, bits), z2, ftype)
    z0 = p.keys.draw(0, shape, bits)
    z2 = p.keys.draw(1, shape, bits)
    p.barrier()
    return RssShare(2, z2, z0, ftype)


def trunc(p: Party, x: RssShare, shift: int) -> RssShare:
    """Probabilistic truncation by ``shift`` bits with P2 as dealer.

    Requires the raw ring value in ``[-2**(l-2), 2**(l-2))``.  The result is
    ``floor(x / 2**shift)`` or one more (stochastic rounding); multiples of
    ``2**shift`` are exact.  Two rounds, ``5 * l + shift`` bits per element:
    the dealt wrap term is a multiple of ``2**(l - shift)``, so its shares
    travel modulo ``2**shift``.
    """
    bits = x.bits
    if not 0 < shift < bits - 2:
        raise ValueError(f"shift {shift} out of range for {bits}-bit ring")
    shape = x.shape
    bias = 1 << (bits - 2)
    sh = np.uint64(shift)
    with p.phase("trunc"):
        if p.id == 2:
            r0 = p.keys.draw(0, shape, bits)
            r1 = p.keys.draw(1, shape, bits)
            r = wrap(r0 + r1, bits)
            hi_part = r >> sh
            u0 = p.keys.draw(0, shape, bits)
            w0 = p.keys.draw(0, shape, shift)
            p.send(1, wrap(hi_part - u0, bits), bits)
            p.send(1, wrap(msb_of(r, bits) - w0, shift), shift)
            p.barrier()
            return _two_of_two_to_rss(p, None, shape, x.ftype)

        xb = x.add_const(const(bias, bits))
        if p.id == 0:
            r_own = p.keys.draw(2, shape, bits)
            u_own = p.keys.draw(2, shape, bits)
            w_own = p.keys.draw(2, shape, shift)
            c_own = wrap(xb.lo + xb.hi + r_own, bits)
            p.send(1, c_own, bits)
            c_other = p.recv(1, shape, bits)
        else:
            r_own = p.keys.draw(2, shape, bits)
            c_own = wrap(xb.hi + r_own, bits)
            p.send(0, c_own, bits)
            u_own = p.recv(2, shape, bits)
            w_own = p.recv(2, shape, shift)
            c_other = p.recv(0, shape, bits)
        p.barrier()
        c = wrap(c_own + c_other, bits)
        p.record_opening(c)
        keep = np.uint64(1) - msb_of(c, bits)
        y = wrap(keep * (w_own << np.uint64(bits - shift)) - u_own, bits)
        if p.id == 0:
            y = wrap(y + (c >> sh) - const(bias >> shift, bits), bits)
        return _two_of_two_to_rss(p, y, shape, x.ftype)


def mul_trunc(p: Party, a: RssShare, b: RssShare) -> RssShare:
    """Fixed-point product: :func:`mul` followed by truncation by ``frac`` bits."""
    return trunc(p, mul(p, a, b), a.ftype.frac)


def matmul_trunc(p: Party, a: RssShare, b: RssShare) -> RssShare:
    return trunc(p, matmul(p, a, b), a.ftype.frac)


def mul_public(p: Party, x: RssShare, value: float) -> RssShare:
    """Multiply by a public real constant encoded at ``x``'s type, then truncate."""
    c = int(np.round(value * 2 ** x.ftype.frac))
    return trunc(p, x.scalar_mul(c), x.ftype.frac)


# ---------------------------------------------------------------------------
# boolean sharing, comparison and selection
# ---------------------------------------------------------------------------


def and_bits(p: Party, a: BoolShare, b: BoolShare) -> BoolShare:
    with p.phase("and"):
        z = (a.lo & b.lo) ^ (a.hi & b.lo) ^ (a.lo & b.hi) ^ p.keys.zero_bits(a.shape)
        p.send(p.prev, z, 1)
        hi = p.recv(p.next, z.shape, 1)
        p.barrier()
    return BoolShare(p.id, z.astype(np.uint8), hi.astype(np.uint8))


def _lanes(a: np.ndarray, nbits: int) -> np.ndarray:
    shifts = np.arange(nbits, dtype=np.uint64)
    return ((a[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def _addend_bits(p: Party, x: RssShare, nbits: int):
    """Boolean sharings of the two addends ``x_0 + x_1`` (known to P0) and ``x_2``.

    P0 masks its addend with a PRF pad shared with P2 and sends it to P1: 1 round.
    """
    bits = x.bits
    shape = x.shape + (nbits,)
    zeros = np.zeros(shape, dtype=np.uint8)
    if p.id == 0:
        pad = p.keys.draw_bits(2, shape)
        masked = _lanes(wrap(x.lo + x.hi, bits), nbits) ^ pad
        p.send(1, masked, 1)
        p.barrier()
        a = BoolShare(0, pad, masked)
        b = BoolShare(0, zeros, zeros)
    elif p.id == 1:
        masked = p.recv(0, shape, 1).astype(np.uint8)
        p.barrier()
        a = BoolShare(1, masked, zeros)
        b = BoolShare(1, zeros, _lanes(x.hi, nbits))
    else:
        pad = p.keys.draw_bits(0, shape)
        p.barrier()
        a = BoolShare(2, zeros, pad)
        b = BoolShare(2, _lanes(x.lo, nbits), zeros)
    return a, b


def msb(p: Party, x: RssShare) -> BoolShare:
    """Boolean sharing of the sign bit.

    The two addends are bit-decomposed and only the carry into the top bit is
    computed, by a log-depth parallel-prefix reduction over (generate, propagate)
    pairs.  Rounds: ``2 + ceil(log2(l - 1))``.
    """
    bits = x.bits
    with p.phase("msb"):
        a, b = _addend_bits(p, x, bits)
        width = bits - 1
        g = and_bits(p, a[..., :width], b[..., :width])
        prop = a[..., :width] ^ b[..., :width]
        size = 1 << (width - 1).bit_length()
        if size > width:
            pad = np.zeros(x.shape + (size - width,), dtype=np.uint8)
            padding = BoolShare(p.id, pad, pad)
            g = BoolShare.concat([padding, g])
            prop = BoolShare.concat([padding, prop])
        while g.shape[-1] > 1:
            g_lo, g_hi = g[..., 0::2], g[..., 1::2]
            p_lo, p_hi = prop[..., 0::2], prop[..., 1::2]
            half = g_hi.shape[-1]
            if half > 1:
                both = and_bits(p, BoolShare.concat([p_hi, p_hi]), BoolShare.concat([g_lo, p_lo]))
                g = g_hi ^ both[..., :half]
                prop = both[..., half:]
            else:
                g = g_hi ^ and_bits(p, p_hi, g_lo)
        carry = g[..., 0]
        return a[..., bits - 1] ^ b[..., bits - 1] ^ carry


def bit_decompose(p: Party, x: RssShare, nbits: int) -> BoolShare:
    """Low ``nbits`` bits of ``x`` as boolean shares via a Kogge-Stone adder.

    Output lanes run least-significant first; rounds ``2 + ceil(log2 nbits)``.
    """
    with p.phase("a2b"):
        a, b = _addend_bits(p, x, nbits)
        prop0 = a ^ b
        g = and_bits(p, a, b)
        prop = prop0
        d = 1
        while d < nbits:
            zeros = np.zeros(x.shape + (d,), dtype=np.uint8)
            shift0 = BoolShare(p.id, zeros, zeros)
            g_sh = BoolShare.concat([shift0, g[..., : nbits - d]])
            p_sh = BoolShare.concat([shift0, prop[..., : nbits - d]])
            if 2 * d < nbits:
                both = and_bits(p, BoolShare.concat([prop, prop]), BoolShare.concat([g_sh, p_sh]))
                g = g ^ both[..., :nbits]
                prop = both[..., nbits:]
            else:
                g = g ^ and_bits(p, prop, g_sh)
            d *= 2
        zeros = np.zeros(x.shape + (1,), dtype=np.uint8)
        carries = BoolShare.concat([BoolShare(p.id, zeros, zeros), g[..., : nbits - 1]])
        return prop0 ^ carries


def bit_inject(p: Party, c: BoolShare, ftype: FxpType) -> RssShare:
    """Arithmetic sharing (raw 0/1 integers) of a boolean-shared bit: 2 rounds.

    P0 knows ``c_0 ^ c_1`` and inputs it; ``c_2`` already sits in the third
    arithmetic component; one multiplication XORs them.
    """
    bits = ftype.bits
    shape = c.shape
    zeros = np.zeros(shape, dtype=np.uint64)
    with p.phase("b2a"):
        if p.id == 0:
            known = (c.lo ^ c.hi).astype(np.uint64)
            pad = p.keys.draw(2, shape, bits)
            masked = wrap(known - pad, bits)
            p.send(1, masked, bits)
            p.barrier()
            t = RssShare(0, pad, masked, ftype)
            c2 = RssShare(0, zeros, zeros, ftype)
        elif p.id == 1:
            masked = p.recv(0, shape, bits)
            p.barrier()
            t = RssShare(1, masked, zeros, ftype)
            c2 = RssShare(1, zeros, c.hi.astype(np.uint64), ftype)
        else:
            pad = p.keys.draw(0, shape, bits)
            p.barrier()
            t = RssShare(2, zeros, pad, ftype)
            c2 = RssShare(2, c.lo.astype(np.uint64), zeros, ftype)
        both = mul(p, t, c2)
        return t + c2 - both.scalar_mul(2)


def less_than(p: Party, a: RssShare, b: RssShare) -> BoolShare:
    """``a < b`` as a shared bit, valid while ``|a - b| < 2**(l-1)``."""
    with p.phase("cmp"):
        return msb(p, a - b)


def less_than_const(p: Party, a: RssShare, c: float) -> BoolShare:
    """``a < c`` for a public real ``c`` encoded at ``a``'s type."""
    raw = int(np.round(c * 2 ** a.ftype.frac))
    with p.phase("cmp"):
        return msb(p, a.add_const(const(-raw, a.bits)))


def greater_than_const(p: Party, a: RssShare, c: float) -> BoolShare:
    raw = int(np.round(c * 2 ** a.ftype.frac))
    with p.phase("cmp"):
        return msb(p, (-a).add_const(const(raw, a.bits)))


def select(p: Party, c: BoolShare, a: RssShare, b: RssShare) -> RssShare:
    """``a`` where ``c`` is 1, else ``b``; computed as ``b + c * (a - b)``."""
    with p.phase("select"):
        ci = bit_inject(p, c, a.ftype)
        diff = a - b
        if ci.shape != diff.shape:
            ci = ci.broadcast_to(diff.shape)
        return b + mul(p, ci, diff)
