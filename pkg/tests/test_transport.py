import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmpc.transport import LAN, WAN, CommStats, Fabric, NetworkConfig, ProtocolAbort, estimate_time, pack, unpack


class TestPacking:
    @given(st.integers(1, 63), st.lists(st.integers(0, 2 ** 64 - 1), min_size=1, max_size=40))
    def test_roundtrip_any_width(self, bits, words):
        a = np.array(words, dtype=np.uint64) & np.uint64((1 << bits) - 1)
        assert np.array_equal(unpack(pack(a, bits), bits, a.shape), a)

    @pytest.mark.parametrize("bits", [8, 16, 32, 64])
    def test_word_sizes(self, bits):
        a = np.arange(12, dtype=np.uint64).reshape(3, 4)
        payload = pack(a, bits)
        assert len(payload) == 12 * bits // 8
        assert np.array_equal(unpack(payload, bits, (3, 4)), a)

    def test_bit_packing_size(self):
        assert len(pack(np.ones(16, dtype=np.uint8), 1)) == 2
        assert len(pack(np.zeros(8, dtype=np.uint64), 10)) == 10

    def test_bad_width(self):
        with pytest.raises(ValueError):
            pack(np.zeros(1, dtype=np.uint64), 0)


class TestStats:
    def test_diff_and_json(self):
        a = CommStats()
        a.bytes_sent[(0, 1)] = 10
        a.messages[(0, 1)] = 1
        a.rounds = 2
        b = a.copy()
        b.bytes_sent[(1, 2)] += 5
        b.rounds += 1
        d = b - a
        assert dict(d.bytes_sent) == {(1, 2): 5} and d.rounds == 1
        back = CommStats.from_dict(a.to_dict())
        assert back.total_bytes == 10 and back.rounds == 2

    def test_phase_total_matches_segments(self):
        s = CommStats()
        s.phase_bytes["softmax/exp/mul"] = 4
        s.phase_bytes["exp"] = 1
        s.phase_bytes["expx"] = 100
        assert s.phase_total("exp") == 5

    def test_estimate_time(self):
        s = CommStats(rounds=10)
        s.bytes_sent[(0, 1)] = 5 * 10 ** 8
        assert estimate_time(s, LAN) == pytest.approx(10 * 0.4e-3 + 0.8)
        assert estimate_time(s, WAN) == pytest.approx(10 * 40e-3 + 10.0)

    def test_network_validation(self):
        with pytest.raises(ValueError):
            NetworkConfig(0, 1)


class TestFabric:
    def _run(self, fab, fns):
        errs = []

        def wrap(fn):
            try:
                fn()
            except Exception as e:  # noqa: BLE001
                errs.append(e)
                fab.close()

        ts = [threading.Thread(target=wrap, args=(f,)) for f in fns]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
        return errs

    def test_rounds_count_only_epochs_with_traffic(self):
        fab = Fabric(timeout=5)

        def party(i):
            def go():
                fab.send(i, (i + 1) % 3, b"abc", "x")
                fab.recv(i, (i + 2) % 3)
                fab.barrier()
                fab.barrier()  # silent epoch
            return go

        assert not self._run(fab, [party(i) for i in range(3)])
        assert fab.stats.rounds == 1
        assert fab.stats.total_bytes == 9
        assert fab.stats.phase_bytes["x"] == 9
        assert fab.pending() == 0

    def test_timeout_aborts(self):
        fab = Fabric(timeout=0.05)
        with pytest.raises(ProtocolAbort):
            fab.recv(0, 1)

    def test_invalid_channel(self):
        fab = Fabric()
        with pytest.raises(ValueError):
            fab.send(0, 0, b"")
