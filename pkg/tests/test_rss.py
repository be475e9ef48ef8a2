import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmpc import oracle
from qmpc.fxp import HIGH, LOW, FxpType, RingTensor, decode, encode, plain_trunc
from qmpc.rss import (
    IntegrityError,
    PrfKeySet,
    RssShare,
    Runtime,
    Sharing,
    and_bits,
    bit_decompose,
    bit_inject,
    greater_than_const,
    less_than,
    less_than_const,
    matmul,
    matmul_trunc,
    msb,
    mul,
    mul_public,
    reveal,
    select,
    trunc,
)


@pytest.fixture
def rt():
    return Runtime(seed=7)


class TestSharing:
    def test_roundtrip(self, rt):
        x = encode(np.linspace(-3, 3, 11), LOW)
        s = rt.share(x, LOW)
        assert rt.reconstruct(s) == x
        assert [sh.party for sh in s] == [0, 1, 2]

    def test_each_pair_shares_one_component(self, rt):
        s = rt.share(encode([1.0, 2.0], HIGH), HIGH)
        for i in range(3):
            assert np.array_equal(s[i].hi, s[(i + 1) % 3].lo)

    def test_tampered_share_detected(self, rt):
        s = rt.share(encode([1.0], LOW), LOW)
        bad = RssShare(1, s[1].lo, s[1].hi + np.uint64(1), LOW)
        with pytest.raises(IntegrityError):
            rt.reconstruct(Sharing([s[0], bad, s[2]]))

    def test_width_mismatch_rejected(self, rt):
        with pytest.raises(ValueError):
            rt.share(encode([1.0], LOW), HIGH)

    def test_same_seed_same_transcript(self):
        x = encode(np.arange(8.0), LOW)
        outs = []
        for _ in range(2):
            r = Runtime(seed=3)
            outs.append(r.run(lambda p, a: mul_public(p, a, 0.5), r.share(x, LOW))[0].lo)
        assert np.array_equal(*outs)

    def test_prf_pairs_agree(self):
        seeds = {(0, 1): [1, 2], (1, 2): [3, 4], (0, 2): [5, 6]}
        k0, k1 = PrfKeySet(0, seeds), PrfKeySet(1, seeds)
        assert np.array_equal(k0.draw(1, (5,), 32), k1.draw(0, (5,), 32))

    def test_zero_shares_sum_to_zero(self):
        seeds = {(0, 1): [1, 2], (1, 2): [3, 4], (0, 2): [5, 6]}
        z = [PrfKeySet(i, seeds).zero_share((64,), 64) for i in range(3)]
        assert not np.any(z[0] + z[1] + z[2])

    def test_party_error_propagates(self, rt):
        def boom(p, x):
            if p.id == 1:
                raise RuntimeError("party 1 failed")
            return reveal(p, x)

        with pytest.raises(RuntimeError, match="party 1"):
            rt.run(boom, rt.share(encode([1.0], LOW), LOW))


class TestArithmetic:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 2 ** 64 - 1), min_size=1, max_size=16), st.sampled_from([LOW, HIGH]))
    def test_mul_exact(self, words, t):
        a = RingTensor(np.array(words, dtype=np.uint64), t.bits)
        b = RingTensor(np.array(words[::-1], dtype=np.uint64), t.bits)
        r = Runtime(seed=len(words))
        assert r.reconstruct(r.run(mul, r.share(a, t), r.share(b, t))) == a * b

    def test_mul_costs_one_round(self, rt):
        x = encode(np.ones(10), LOW)
        rt.run(mul, rt.share(x, LOW), rt.share(x, LOW))
        assert rt.stats.rounds == 1
        assert rt.stats.total_bytes == 3 * 10 * 4

    def test_matmul_exact_and_cost(self, rt):
        rng = np.random.default_rng(1)
        a = RingTensor(rng.integers(0, 2 ** 32, (4, 6), dtype=np.uint64), 32)
        b = RingTensor(rng.integers(0, 2 ** 32, (6, 3), dtype=np.uint64), 32)
        assert rt.reconstruct(rt.run(matmul, rt.share(a, LOW), rt.share(b, LOW))) == a @ b
        assert rt.stats.total_bytes == 3 * 4 * 3 * 4

    def test_matmul_shape_check(self, rt):
        a = rt.share(encode(np.ones((2, 3)), LOW), LOW)
        with pytest.raises(ValueError):
            rt.run(matmul, a, a)

    def test_reveal(self, rt):
        x = encode([1.5, -2.25], LOW)
        outs = rt.run(reveal, rt.share(x, LOW))
        assert all(o == x for o in outs)

    def test_public_ops_are_local(self, rt):
        x = encode([1.0, -2.0], LOW)
        out = rt.run(lambda p, a: (a.scalar_mul(3).add_const(256) - a).lshift(1), rt.share(x, LOW))
        assert rt.stats.total_bytes == 0
        assert decode(rt.reconstruct(out), LOW).tolist() == [6.0, -6.0]


class TestTrunc:
    @pytest.mark.parametrize("t", [LOW, HIGH])
    def test_floor_or_next(self, rt, t):
        rng = np.random.default_rng(2)
        raw = RingTensor.from_signed(rng.integers(-2 ** (t.bits - 3), 2 ** (t.bits - 3), 2000), t.bits)
        got = rt.reconstruct(rt.run(lambda p, x: trunc(p, x, t.frac), rt.share(raw, t)))
        d = oracle.ulp_diff(got, plain_trunc(raw, t.frac))
        assert set(np.unique(d)) <= {0, 1}

    def test_unbiased(self, rt):
        # x = 0.25 ulp after the shift: the rounded-up fraction should be ~1/4
        raw = RingTensor.from_signed(np.full(20000, 64), 32)
        got = rt.reconstruct(rt.run(lambda p, x: trunc(p, x, 8), rt.share(raw, LOW)))
        assert abs(got.signed().mean() - 0.25) < 0.02

    def test_exact_multiples(self, rt):
        raw = RingTensor.from_signed(np.arange(-50, 50) * 256, 32)
        got = rt.reconstruct(rt.run(lambda p, x: trunc(p, x, 8), rt.share(raw, LOW)))
        assert got.signed().tolist() == list(range(-50, 50))

    def test_cost(self, rt):
        n = 64
        rt.run(lambda p, x: trunc(p, x, 8), rt.share(encode(np.ones(n), LOW), LOW))
        assert rt.stats.rounds == 2
        assert rt.stats.total_bytes * 8 == n * (5 * 32 + 8)

    def test_bad_shift(self, rt):
        with pytest.raises(ValueError):
            rt.run(lambda p, x: trunc(p, x, 31), rt.share(encode([1.0], LOW), LOW))

    def test_mul_public_and_matmul_trunc(self, rt):
        x = np.array([[1.0, 2.0], [-0.5, 4.0]])
        sx = rt.share(encode(x, LOW), LOW)
        half = decode(rt.reconstruct(rt.run(lambda p, a: mul_public(p, a, 0.5), sx)), LOW)
        assert np.abs(half - x / 2).max() <= LOW.ulp
        sq = decode(rt.reconstruct(rt.run(matmul_trunc, sx, sx)), LOW)
        assert np.abs(sq - x @ x).max() <= LOW.ulp


class TestBoolean:
    def test_and_bits(self, rt):
        a = np.array([0, 0, 1, 1])
        b = np.array([0, 1, 0, 1])
        out = rt.reconstruct(rt.run(and_bits, rt.share_bits(a), rt.share_bits(b)))
        assert out.tolist() == [0, 0, 0, 1]

    @pytest.mark.parametrize("t", [FxpType(8, 2), FxpType(16, 6), LOW, HIGH])
    def test_msb_random(self, rt, t):
        raw = RingTensor(np.random.default_rng(4).integers(0, 2 ** 64, 500, dtype=np.uint64), t.bits)
        bits = rt.reconstruct(rt.run(msb, rt.share(raw, t)))
        assert np.array_equal(bits, raw.data >> np.uint64(t.bits - 1))

    def test_msb_rounds(self, rt):
        rt.run(msb, rt.share(encode(np.ones(4), LOW), LOW))
        assert rt.stats.rounds == 2 + 5

    def test_bit_decompose(self, rt):
        vals = np.array([0, 1, 5, 255, 1000], dtype=np.uint64)
        lanes = rt.reconstruct(rt.run(lambda p, x: bit_decompose(p, x, 12), rt.share(RingTensor(vals, 32), LOW)))
        want = (vals[:, None] >> np.arange(12, dtype=np.uint64)) & np.uint64(1)
        assert np.array_equal(lanes, want)

    def test_bit_inject(self, rt):
        bits = np.array([0, 1, 1, 0, 1])
        out = rt.reconstruct(rt.run(lambda p, c: bit_inject(p, c, HIGH), rt.share_bits(bits)))
        assert out.signed().tolist() == bits.tolist()


class TestComparison:
    def test_less_than_and_select(self, rt):
        a = np.array([1.0, -3.0, 2.5, 0.0])
        b = np.array([2.0, -4.0, 2.5, 0.1])
        sa, sb = rt.share(encode(a, LOW), LOW), rt.share(encode(b, LOW), LOW)
        lt = rt.reconstruct(rt.run(less_than, sa, sb))
        assert lt.tolist() == (a < b).astype(int).tolist()
        mx = rt.open(rt.run(lambda p, x, y: select(p, less_than(p, x, y), y, x), sa, sb))
        assert mx.tolist() == np.maximum(decode(encode(a, LOW), LOW), decode(encode(b, LOW), LOW)).tolist()

    def test_const_comparisons(self, rt):
        a = np.array([-15.0, -14.0, -13.99, 3.5])
        sa = rt.share(encode(a, HIGH), HIGH)
        lt, gt = rt.run(lambda p, x: (less_than_const(p, x, -14.0), greater_than_const(p, x, 3.0)), sa)
        assert rt.reconstruct(lt).tolist() == [1, 0, 0, 0]
        assert rt.reconstruct(gt).tolist() == [0, 0, 0, 1]
