"""In-process three-party message fabric with exact byte and round accounting."""
from __future__ import annotations

import json
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

PARTIES = (0, 1, 2)


class ProtocolAbort(RuntimeError):
    """A channel was closed under a party, usually because another party failed."""


@dataclass
class CommStats:
    bytes_sent: dict = field(default_factory=lambda: defaultdict(int))
    messages: dict = field(default_factory=lambda: defaultdict(int))
    rounds: int = 0
    phase_bytes: dict = field(default_factory=lambda: defaultdict(int))

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent.values())

    def reset(self):
        self.bytes_sent.clear()
        self.messages.clear()
        self.phase_bytes.clear()
        self.rounds = 0

    def copy(self) -> "CommStats":
        out = CommStats()
        out.bytes_sent.update(self.bytes_sent)
        out.messages.update(self.messages)
        out.phase_bytes.update(self.phase_bytes)
        out.rounds = self.rounds
        return out

    def __sub__(self, other: "CommStats") -> "CommStats":
        out = CommStats(rounds=self.rounds - other.rounds)
        for src, dst in (("bytes_sent", out.bytes_sent), ("messages", out.messages), ("phase_bytes", out.phase_bytes)):
            mine, theirs = getattr(self, src), getattr(other, src)
            for k in set(mine) | set(theirs):
                d = mine.get(k, 0) - theirs.get(k, 0)
                if d:
                    dst[k] = d
        return out

    def phase_total(self, prefix: str) -> int:
        """Bytes sent under any phase whose path contains the segment ``prefix``."""
        return sum(b for name, b in self.phase_bytes.items() if prefix in name.split("/"))

    def to_dict(self) -> dict:
        pairs = {
            f"{i}->{j}": {"bytes": self.bytes_sent.get((i, j), 0), "messages": self.messages.get((i, j), 0)}
            for i in PARTIES
            for j in PARTIES
            if i != j
        }
        return {"pairs": pairs, "rounds": self.rounds}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "CommStats":
        out = cls(rounds=int(obj["rounds"]))
        for key, rec in obj["pairs"].items():
            i, j = (int(p) for p in key.split("->"))
            if rec["bytes"]:
                out.bytes_sent[(i, j)] = int(rec["bytes"])
            if rec["messages"]:
                out.messages[(i, j)] = int(rec["messages"])
        return out


@dataclass(frozen=True)
class NetworkConfig:
    bandwidth: float  # bits per second
    rtt: float  # seconds

    def __post_init__(self):
        if self.bandwidth <= 0 or self.rtt <= 0:
            raise ValueError("bandwidth and rtt must be positive")


LAN = NetworkConfig(bandwidth=5e9, rtt=0.4e-3)
WAN = NetworkConfig(bandwidth=400e6, rtt=40e-3)


def estimate_time(stats: CommStats, cfg: NetworkConfig) -> float:
    return stats.rounds * cfg.rtt + stats.total_bytes * 8 / cfg.bandwidth


_WORD = {8: "<u1", 16: "<u2", 32: "<u4", 64: "<u8"}


def _lanes(a: np.ndarray, bits: int) -> np.ndarray:
    shifts = np.arange(bits, dtype=np.uint64)
    return ((a.astype(np.uint64).ravel()[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def pack(arr: np.ndarray, bits: int) -> bytes:
    """Serialize ring words at their logical width.

    Byte-multiple widths use little-endian words; any other width is bit-packed
    (``bits=1`` puts eight lanes in a byte).
    """
    a = np.ascontiguousarray(arr)
    if bits in _WORD:
        return a.astype(_WORD[bits]).tobytes()
    if not 0 < bits < 64:
        raise ValueError(f"cannot pack {bits}-bit words")
    return np.packbits(_lanes(a, bits).ravel()).tobytes()


def unpack(payload: bytes, bits: int, shape) -> np.ndarray:
    n = int(np.prod(shape, dtype=np.int64))
    if bits in _WORD:
        return np.frombuffer(payload, dtype=_WORD[bits], count=n).astype(np.uint64).reshape(shape)
    flat = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:n * bits].reshape(n, bits)
    if bits == 1:
        return flat.reshape(shape)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (flat.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64).reshape(shape)


class Channel:
    """Unbounded FIFO between one ordered pair of parties."""

    def __init__(self):
        self._q = deque()
        self._cv = threading.Condition()
        self.closed = False

    def put(self, payload: bytes):
        with self._cv:
            if self.closed:
                raise ProtocolAbort("send on closed channel")
            self._q.append(payload)
            self._cv.notify()

    def get(self, timeout: float | None = None) -> bytes:
        with self._cv:
            while not self._q:
                if self.closed:
                    raise ProtocolAbort("receive on closed channel")
                if not self._cv.wait(timeout):
                    raise ProtocolAbort("receive timed out")
            return self._q.popleft()

    def close(self):
        with self._cv:
            self.closed = True
            self._cv.notify_all()


class Fabric:
    """Channels for all six ordered pairs plus the round barrier.

    A round is a barrier epoch during which at least one message was sent.
    Protocol code calls :meth:`barrier` from every party after each
    communication step; the three calls meet and the epoch closes.
    """

    def __init__(self, timeout: float | None = 600.0):
        self.channels = {(i, j): Channel() for i in PARTIES for j in PARTIES if i != j}
        self.stats = CommStats()
        self.timeout = timeout
        self._lock = threading.Lock()
        self._epoch_traffic = False
        self._barrier = threading.Barrier(3, action=self._close_epoch)
        self.received = defaultdict(int)

    def _close_epoch(self):
        if self._epoch_traffic:
            self.stats.rounds += 1
        self._epoch_traffic = False

    def send(self, src: int, dst: int, payload: bytes, phase: str = ""):
        if src == dst or src not in PARTIES or dst not in PARTIES:
            raise ValueError(f"invalid channel {src}->{dst}")
        self.channels[(src, dst)].put(payload)
        with self._lock:
            self.stats.bytes_sent[(src, dst)] += len(payload)
            self.stats.messages[(src, dst)] += 1
            self.stats.phase_bytes[phase] += len(payload)
            self._epoch_traffic = True

    def recv(self, at: int, src: int) -> bytes:
        if at == src:
            raise ValueError("a party cannot receive from itself")
        payload = self.channels[(src, at)].get(self.timeout)
        with self._lock:
            self.received[(src, at)] += len(payload)
        return payload

    def barrier(self):
        try:
            self._barrier.wait(self.timeout)
        except threading.BrokenBarrierError as exc:
            raise ProtocolAbort("barrier broken") from exc

    def close(self):
        for ch in self.channels.values():
            ch.close()
        self._barrier.abort()

    def pending(self) -> int:
        return sum(len(ch._q) for ch in self.channels.values())
