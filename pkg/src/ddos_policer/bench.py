"""Flow-table scalability microbenchmark.

The reference policer keeps one Python object per flow, which is fine for
simulation but says nothing about per-packet cost at millions of entries. The
benchmark therefore runs the same per-packet procedure over a packed table:
an open-addressing hash whose slots hold an 8-byte source key next to the
24-byte entry payload, compiled with numba. ``tests/test_bench.py`` checks it
against ``policer.process_packet`` packet by packet.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .model import ENTRY_KEY_BYTES, ENTRY_PAYLOAD_BYTES

log = logging.getLogger(__name__)

ENTRY_DTYPE = np.dtype([
    ("period_start", "<u4"),
    ("window", "<f4"),
    ("received", "<u4"),
    ("dropped", "<u4"),
    ("loss_rate", "<f8"),
])
assert ENTRY_DTYPE.itemsize == ENTRY_PAYLOAD_BYTES

EMPTY = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

ENQUEUED, DROPPED_BY_WINDOW, DROPPED_BY_QUEUE, DENIED = 0, 1, 2, 3

DEFAULT_SIZES = (10**6, 10**7)
MIN_PACKETS = 10**6
BATCH = 1024
HOT_FLOWS = 1000


@numba.njit(cache=True)
def _slot(keys, key, shift):
    mask = keys.size - 1
    i = (np.uint64(key) * _GOLDEN) >> np.uint64(shift)
    i = np.int64(i)
    while True:
        k = keys[i]
        if k == key or k == EMPTY:
            return i
        i = (i + 1) & mask


@numba.njit(cache=True)
def _insert(keys, entries, sources, start, window, shift):
    for j in range(sources.size):
        i = _slot(keys, np.uint64(sources[j]), shift)
        keys[i] = np.uint64(sources[j])
        entries[i].period_start = start[j]
        entries[i].window = window
        entries[i].received = 0
        entries[i].dropped = 0
        entries[i].loss_rate = 0.0


@numba.njit(cache=True)
def _police(keys, entries, shift, sources, arrivals, out, state, period, loss_weight, loss_threshold,
            bandwidth, fair_share):
    """Per-packet policing loop; ``state`` = [window_total, queue_occupancy, queue_capacity]."""
    for j in range(sources.size):
        key = np.uint64(sources[j])
        i = _slot(keys, key, shift)
        if keys[i] != key:
            out[j] = DENIED
            continue
        e = entries[i]
        t = arrivals[j]
        if t > np.int64(e.period_start) + period:
            recv = e.received
            recent = e.dropped / recv if recv else 0.0
            loss = loss_weight * e.loss_rate + (1.0 - loss_weight) * recent
            e.loss_rate = loss
            old = np.float64(e.window)
            if loss > loss_threshold and recv > fair_share:
                new = old / 2.0
            elif state[0] > 0.0:
                new = old / state[0] * bandwidth
            else:
                new = fair_share
            e.window = new
            state[0] += np.float64(e.window) - old
            e.period_start = t
            e.received = 0
            e.dropped = 0
        e.received += 1
        if e.received > e.window:
            e.dropped += 1
            out[j] = DROPPED_BY_WINDOW
        elif state[1] >= state[2]:
            e.dropped += 1
            out[j] = DROPPED_BY_QUEUE
        else:
            state[1] += 1.0
            out[j] = ENQUEUED


class PackedFlowTable:
    """Open-addressing flow table with 24-byte payloads, at most half full."""

    def __init__(self, capacity_hint: int):
        bits = max(4, math.ceil(math.log2(max(2, 2 * capacity_hint))))
        self.slots = 1 << bits
        self.shift = 64 - bits
        self.keys = np.full(self.slots, EMPTY, dtype=np.uint64)
        self.entries = np.zeros(self.slots, dtype=ENTRY_DTYPE)
        self.size = 0

    @staticmethod
    def bytes_needed(n: int) -> int:
        bits = max(4, math.ceil(math.log2(max(2, 2 * n))))
        return (1 << bits) * (ENTRY_KEY_BYTES + ENTRY_PAYLOAD_BYTES)

    @property
    def nbytes(self) -> int:
        return self.keys.nbytes + self.entries.nbytes

    def insert(self, sources: np.ndarray, period_start: np.ndarray, window: float) -> None:
        if self.size + len(sources) > self.slots // 2:
            raise ValueError("table would exceed its load factor")
        _insert(self.keys, self.entries, sources.astype(np.uint64), period_start.astype(np.uint32),
                np.float32(window), self.shift)
        self.size += len(sources)

    def lookup(self, source: int) -> Optional[np.void]:
        i = _slot(self.keys, np.uint64(source), self.shift)
        return self.entries[i] if self.keys[i] == source else None

    def police(self, sources: np.ndarray, arrivals: np.ndarray, state: np.ndarray, *, period: int,
               loss_weight: float, loss_threshold: float, bandwidth: float, fair_share: float) -> np.ndarray:
        out = np.empty(len(sources), dtype=np.uint8)
        _police(self.keys, self.entries, self.shift, sources, arrivals, out, state, int(period),
                float(loss_weight), float(loss_threshold), float(bandwidth), float(fair_share))
        return out


def synthetic_sources(n: int) -> np.ndarray:
    """``n`` distinct 32-bit addresses: an odd multiplier permutes Z/2^32."""
    return (np.arange(n, dtype=np.uint64) * np.uint64(2654435761)) & np.uint64(0xFFFFFFFF)


def available_memory() -> Optional[int]:
    try:
        return os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        return None


def preflight_bytes(n: int, packets: int) -> int:
    # table + addresses used to fill it + the packet stream (source, arrival, outcome)
    return PackedFlowTable.bytes_needed(n) + 8 * n + 17 * packets


@dataclass
class SizePoint:
    table_size: int
    packets: int
    median_ns: float
    p99_ns: float
    table_bytes: int
    container_bytes_per_entry: float
    outcomes: dict[str, int]


@dataclass
class BenchReport:
    table_sizes: list[int] = field(default_factory=list)
    points: list[SizePoint] = field(default_factory=list)
    skipped: dict[int, str] = field(default_factory=dict)
    bytes_per_entry: int = ENTRY_PAYLOAD_BYTES
    key_bytes: int = ENTRY_KEY_BYTES
    batch: int = BATCH

    def point(self, size: int) -> Optional[SizePoint]:
        return next((p for p in self.points if p.table_size == size), None)

    @property
    def median_ratio(self) -> Optional[float]:
        """Median latency of the largest measured size over the smallest."""
        if len(self.points) < 2:
            return None
        pts = sorted(self.points, key=lambda p: p.table_size)
        return pts[-1].median_ns / pts[0].median_ns

    @property
    def size_independent(self) -> Optional[bool]:
        r = self.median_ratio
        return None if r is None else r <= 2.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skipped"] = {str(k): v for k, v in self.skipped.items()}
        d["median_ratio"] = self.median_ratio
        d["size_independent"] = self.size_independent
        return d


def measure(n: int, packets: int = MIN_PACKETS, seed: int = 0, batch: int = BATCH) -> SizePoint:
    """Fill a table with ``n`` flows and police ``packets`` random packets through it."""
    rng = np.random.default_rng(seed)
    period = 500
    bandwidth = float(n) * 100.0
    fair = bandwidth / n
    table = PackedFlowTable(n)
    sources = synthetic_sources(n)
    table.insert(sources, rng.integers(0, period, n, dtype=np.uint32), fair)
    del sources

    # half the packets spread over all flows, 45% from a hot set that overruns
    # its windows, 5% from sources that were never admitted
    picks = rng.integers(0, n, packets)
    r = rng.random(packets)
    hot = r < 0.45
    picks[hot] = rng.integers(0, min(n, HOT_FLOWS), int(hot.sum()))
    unknown = r > 0.95
    picks[unknown] = rng.integers(n, 2 * n, int(unknown.sum()))
    stream = ((picks.astype(np.uint64) * np.uint64(2654435761)) & np.uint64(0xFFFFFFFF))
    # time runs forward across a few periods so rollovers are part of the mix
    arrivals = (np.arange(packets, dtype=np.int64) * (4 * period) // packets).astype(np.int64)
    state = np.array([bandwidth, 0.0, float(2**52)])
    params = dict(period=period, loss_weight=0.5, loss_threshold=0.05, bandwidth=bandwidth, fair_share=fair)

    table.police(stream[:batch], arrivals[:batch], state.copy(), **params)  # compile / warm up
    outcomes = np.empty(packets, dtype=np.uint8)
    lat = []
    for lo in range(0, packets, batch):
        hi = min(lo + batch, packets)
        t0 = time.perf_counter_ns()
        outcomes[lo:hi] = table.police(stream[lo:hi], arrivals[lo:hi], state, **params)
        lat.append((time.perf_counter_ns() - t0) / (hi - lo))
    lat = np.asarray(lat)
    counts = np.bincount(outcomes, minlength=4)
    return SizePoint(
        table_size=n,
        packets=packets,
        median_ns=float(np.median(lat)),
        p99_ns=float(np.percentile(lat, 99)),
        table_bytes=table.nbytes,
        container_bytes_per_entry=table.nbytes / n,
        outcomes={"enqueued": int(counts[ENQUEUED]), "dropped_by_window": int(counts[DROPPED_BY_WINDOW]),
                  "dropped_by_queue": int(counts[DROPPED_BY_QUEUE]), "denied": int(counts[DENIED])},
    )


def run_bench(sizes: Sequence[int] = DEFAULT_SIZES, packets: int = MIN_PACKETS, seed: int = 0) -> BenchReport:
    if packets < MIN_PACKETS:
        raise ValueError(f"need at least {MIN_PACKETS} packets per size point")
    report = BenchReport(table_sizes=[int(s) for s in sizes])
    avail = available_memory()
    for n in report.table_sizes:
        if n < 1:
            raise ValueError("table sizes must be positive")
        need = preflight_bytes(n, packets)
        log.info("table size %d: needs ~%.2f GB, %s available", n, need / 1e9,
                 "unknown" if avail is None else f"{avail / 1e9:.2f} GB")
        if avail is not None and need > 0.8 * avail:
            msg = f"needs ~{need / 1e9:.2f} GB, only {avail / 1e9:.2f} GB available"
            log.warning("skipping table size %d: %s", n, msg)
            report.skipped[n] = msg
            continue
        report.points.append(measure(n, packets, seed))
        avail = available_memory()
    return report
