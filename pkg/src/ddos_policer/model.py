"""Flow table, per-sender policing state and the shared packet/time types.

All traffic from one source address is aggregated into a single flow entry.
Time is measured in integer ticks; windows are counted in fixed 1500-byte
packets per detection period.
"""

from __future__ import annotations

import enum
import ipaddress
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

PACKET_SIZE = 1500  # bytes
PACKET_BITS = PACKET_SIZE * 8

# Value part of one entry: period start (u32), window (f32), received (u32),
# dropped (u32), smoothed loss (f64). The source address is the table key.
ENTRY_PAYLOAD = struct.Struct("<IfIId")
ENTRY_PAYLOAD_BYTES = ENTRY_PAYLOAD.size
ENTRY_KEY_BYTES = 8


class PacketKind(enum.Enum):
    REGULAR = "regular"
    SYN = "syn"
    UDP_SERVICE = "udp"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    source: int
    arrival: int
    kind: PacketKind = PacketKind.REGULAR
    service: Optional[str] = None
    size: int = PACKET_SIZE

    def __post_init__(self):
        if self.size != PACKET_SIZE:
            raise ValueError(f"packets are fixed at {PACKET_SIZE} bytes, got {self.size}")
        if self.kind is PacketKind.UDP_SERVICE and not self.service:
            raise ValueError("UDP service packets need a protocol tag")


@dataclass(slots=True)
class FlowEntry:
    """Policing state for one source.

    ``window`` may be fractional; a packet is dropped once ``received`` exceeds
    it, which for integer counts is the same as exceeding ``floor(window)``.
    """

    flow_id: int
    period_start: int = 0
    window: float = 0.0
    received: int = 0
    dropped: int = 0
    loss_rate: float = 0.0

    def pack(self) -> bytes:
        """Serialize the 24-byte value part of the entry (key excluded)."""
        return ENTRY_PAYLOAD.pack(
            self.period_start & 0xFFFFFFFF,
            self.window,
            min(self.received, 0xFFFFFFFF),
            min(self.dropped, 0xFFFFFFFF),
            self.loss_rate,
        )

    @classmethod
    def unpack(cls, flow_id: int, payload: bytes) -> "FlowEntry":
        start, window, received, dropped, loss = ENTRY_PAYLOAD.unpack(payload)
        return cls(flow_id, start, window, received, dropped, loss)


@dataclass
class PolicerParams:
    """Tunables of the congestion-accountability policer.

    ``bandwidth`` and ``fair_share`` are in packets per detection period.
    """

    period: int = 500
    loss_weight: float = 0.5
    loss_threshold: float = 0.05
    bandwidth: float = 1000.0
    fair_share: Optional[float] = None
    syn_budget_fraction: float = 0.05
    idle_eviction_periods: Optional[int] = 64

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        if self.fair_share is None:
            self.fair_share = self.bandwidth

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.loss_weight < 1:
            out.append(f"loss_weight must be in (0, 1), got {self.loss_weight}")
        if not 0 < self.loss_threshold < 1:
            out.append(f"loss_threshold must be in (0, 1), got {self.loss_threshold}")
        if self.period <= 0:
            out.append(f"period must be positive, got {self.period}")
        if self.bandwidth <= 0:
            out.append(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 <= self.syn_budget_fraction < 1:
            out.append(f"syn_budget_fraction must be in [0, 1), got {self.syn_budget_fraction}")
        if self.idle_eviction_periods is not None and self.idle_eviction_periods < 1:
            out.append("idle_eviction_periods must be >= 1 or null")
        return out


def packets_per_period(bits_per_second: float, period_seconds: float) -> int:
    """Convert a bandwidth into whole 1500-byte packets per detection period."""
    return math.floor(bits_per_second * period_seconds / PACKET_BITS)


class AdmissionError(LookupError):
    """Raised when a source outside the allowlist asks for a flow entry."""


class FairShareError(ValueError):
    pass


@dataclass
class FlowTable:
    allowlist: set[int] = field(default_factory=set)
    entries: dict[int, FlowEntry] = field(default_factory=dict)
    window_total: float = 0.0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, source: int) -> bool:
        return source in self.entries

    def get(self, source: int) -> Optional[FlowEntry]:
        return self.entries.get(source)

    def resum(self) -> float:
        return math.fsum(e.window for e in self.entries.values())

    def set_window(self, entry: FlowEntry, window: float) -> None:
        self.window_total += window - entry.window
        entry.window = window

    def remove(self, source: int, params: Optional[PolicerParams] = None) -> FlowEntry:
        entry = self.entries.pop(source)
        self.window_total -= entry.window
        if not self.entries:
            self.window_total = 0.0
        elif params is not None:
            recompute_fair_share(self, params)
        return entry

    def clear(self) -> None:
        self.entries.clear()
        self.window_total = 0.0

    def evict_idle(self, now: int, params: PolicerParams) -> list[int]:
        """Drop entries that saw no packet for ``idle_eviction_periods`` periods.

        A flow's last packet is never later than one period after its period
        start, so idleness is bounded from below by ``now - start - period``.
        """
        if params.idle_eviction_periods is None:
            return []
        horizon = (params.idle_eviction_periods + 1) * params.period
        stale = [f for f, e in self.entries.items() if now - e.period_start > horizon]
        for f in stale:
            self.remove(f)
        if stale and self.entries:
            recompute_fair_share(self, params)
        return stale


def recompute_fair_share(table: FlowTable, params: PolicerParams) -> float:
    """Set ``params.fair_share`` to bandwidth / N and return it.

    Existing windows are left alone; they converge through the proportional
    branch of later decisions.
    """
    n = len(table)
    if n == 0:
        raise FairShareError("fair share is undefined for an empty flow table")
    params.fair_share = params.bandwidth / n
    return params.fair_share


def admit_flow(table: FlowTable, source: int, params: PolicerParams, now: int) -> Optional[FlowEntry]:
    """Create the entry for a newly seen source.

    Returns None when the source already has an entry. Raises AdmissionError
    when the source is not on the allowlist.
    """
    if source not in table.allowlist:
        raise AdmissionError(f"source {format_source(source)} is not on the allowlist")
    if source in table.entries:
        return None
    entry = FlowEntry(source, period_start=now)
    table.entries[source] = entry
    fair = recompute_fair_share(table, params)
    table.set_window(entry, fair)
    return entry


def admit_flows(table: FlowTable, sources: Iterable[int], params: PolicerParams, now: int) -> list[FlowEntry]:
    """Admit a batch of sources that are known to be active at once.

    Used when policing switches on with an already observed population: N is
    counted first so every batch member starts at the same B/N window.
    """
    fresh = [s for s in dict.fromkeys(sources) if s in table.allowlist and s not in table.entries]
    if not fresh:
        return []
    entries = []
    for s in fresh:
        entry = FlowEntry(s, period_start=now)
        table.entries[s] = entry
        entries.append(entry)
    fair = recompute_fair_share(table, params)
    for entry in entries:
        table.set_window(entry, fair)
    return entries


def parse_source(text: str) -> int:
    """Parse a dotted-quad or plain 32-bit integer source identifier."""
    text = text.strip()
    if text.isdigit():
        value = int(text)
        if value > 0xFFFFFFFF:
            raise ValueError(f"source id {value} does not fit in 32 bits")
        return value
    return int(ipaddress.IPv4Address(text))


def format_source(source: int) -> str:
    return str(ipaddress.IPv4Address(source))


def load_allowlist(path: str | Path) -> set[int]:
    out = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.add(parse_source(line))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


class FifoQueue:
    """Bounded FIFO of packets stored as runs of ``[source, arrival, count]``.

    Consecutive packets from the same source and tick collapse into one run,
    so a burst of thousands of packets costs one list entry.
    """

    __slots__ = ("capacity", "runs", "occupancy", "accepted", "dropped")

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("queue capacity must be non-negative")
        self.capacity = int(capacity)
        self.runs: deque[list[int]] = deque()
        self.occupancy = 0
        self.accepted = 0
        self.dropped = 0

    def __len__(self) -> int:
        return self.occupancy

    @property
    def space(self) -> int:
        return self.capacity - self.occupancy

    @property
    def full(self) -> bool:
        return self.occupancy >= self.capacity

    def push(self, source: int, count: int, arrival: int = 0) -> int:
        """Append up to ``count`` packets; return how many fit."""
        n = min(count, self.capacity - self.occupancy)
        if n > 0:
            tail = self.runs[-1] if self.runs else None
            if tail is not None and tail[0] == source and tail[1] == arrival:
                tail[2] += n
            else:
                self.runs.append([source, arrival, n])
            self.occupancy += n
            self.accepted += n
        else:
            n = 0
        self.dropped += count - n
        return n

    def append(self, pkt: PacketRecord) -> bool:
        return self.push(pkt.source, 1, pkt.arrival) == 1

    def pop(self, count: int) -> list[tuple[int, int]]:
        """Remove up to ``count`` packets from the head as ``(source, n)`` runs."""
        out = []
        runs = self.runs
        while count > 0 and runs:
            head = runs[0]
            if head[2] <= count:
                runs.popleft()
                out.append((head[0], head[2]))
                count -= head[2]
                self.occupancy -= head[2]
            else:
                head[2] -= count
                out.append((head[0], count))
                self.occupancy -= count
                count = 0
        return out

    def pop_packets(self, count: int) -> list[PacketRecord]:
        out = []
        while count > 0 and self.runs:
            head = self.runs[0]
            take = min(count, head[2])
            out.extend(PacketRecord(head[0], head[1]) for _ in range(take))
            head[2] -= take
            if head[2] == 0:
                self.runs.popleft()
            self.occupancy -= take
            count -= take
        return out
