"""Congestion-accountability rate limiting.

Every admitted source gets a rate-limiting window: the number of packets it
may push into the shared service queue per detection period. At the first
packet of a new period the window is re-decided from the flow's receive and
drop counts. Flows that keep a high smoothed loss rate while sending above
the fair share get their window halved; everybody else gets a share of the
layer bandwidth proportional to their current window.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional, TextIO

from .model import (
    AdmissionError,
    FifoQueue,
    FlowEntry,
    FlowTable,
    PacketKind,
    PacketRecord,
    PolicerParams,
    admit_flow,
)


class Outcome(enum.Enum):
    ENQUEUED = "enqueued"
    DROPPED_BY_WINDOW = "dropped_by_window"
    DROPPED_BY_QUEUE = "dropped_by_queue"
    DENIED = "denied"
    SYN_QUEUED = "syn_queued"


class CongestionQueue(FifoQueue):
    """The shared FIFO service queue, drained at ``drain_rate`` packets/tick."""

    __slots__ = ("drain_rate", "_credit")

    def __init__(self, capacity: int, drain_rate: float):
        super().__init__(capacity)
        if drain_rate <= 0:
            raise ValueError("drain_rate must be positive")
        self.drain_rate = drain_rate
        self._credit = 0.0

    @classmethod
    def sized_for(cls, params: PolicerParams, tick_seconds: float, delay_seconds: float = 0.2) -> "CongestionQueue":
        """Queue drained at the layer bandwidth, buffering ``delay_seconds`` of it."""
        rate = params.bandwidth / params.period
        capacity = max(1, math.ceil(rate * delay_seconds / tick_seconds))
        return cls(capacity, rate)

    def drain_budget(self, ticks: int) -> int:
        self._credit += self.drain_rate * ticks
        n = math.floor(self._credit + 1e-9)
        self._credit -= n
        return n


def syn_queue_for(params: PolicerParams, tick_seconds: float, delay_seconds: float = 0.2) -> CongestionQueue:
    """Bounded queue for SYNs from unverified sources, served at a small slice of B."""
    rate = params.syn_budget_fraction * params.bandwidth / params.period
    capacity = max(1, math.ceil(rate * delay_seconds / tick_seconds))
    return CongestionQueue(capacity, max(rate, 1e-12))


@dataclass(frozen=True)
class DecisionOutcome:
    flow_id: int
    old_window: float
    new_window: float
    packet_loss: float
    halved: bool


def rate_limiting_decision(entry: FlowEntry, table: FlowTable, params: PolicerParams) -> DecisionOutcome:
    """Re-decide one flow's window from the period that just ended."""
    recent = entry.dropped / entry.received if entry.received else 0.0
    lam = params.loss_weight
    loss = lam * entry.loss_rate + (1.0 - lam) * recent
    entry.loss_rate = loss
    old = entry.window
    halved = loss > params.loss_threshold and entry.received > params.fair_share
    if halved:
        new = old / 2.0
    elif table.window_total > 0.0:
        new = old / table.window_total * params.bandwidth
    else:
        new = params.fair_share
    table.set_window(entry, new)
    return DecisionOutcome(entry.flow_id, old, new, loss, halved)


def rollover_period(entry: FlowEntry, table: FlowTable, params: PolicerParams, t0: int) -> DecisionOutcome:
    """Close the current period for ``entry`` at time ``t0``.

    Runs exactly one decision no matter how many idle periods went by.
    """
    if t0 <= entry.period_start + params.period:
        raise ValueError(f"t0={t0} does not start a new period (period start {entry.period_start})")
    decision = rate_limiting_decision(entry, table, params)
    entry.period_start = t0
    entry.received = 0
    entry.dropped = 0
    return decision


DecisionHook = Callable[[int, DecisionOutcome], None]


def _lookup(table, source, params, now, kind, syn_queue):
    """Entry for ``source`` or the outcome that stops its packet."""
    entry = table.entries.get(source)
    if entry is not None:
        return entry
    if source in table.allowlist:
        return admit_flow(table, source, params, now)
    if kind is PacketKind.SYN and syn_queue is not None:
        return Outcome.SYN_QUEUED
    return Outcome.DENIED


def process_packet(
    table: FlowTable,
    q: FifoQueue,
    pkt: PacketRecord,
    params: PolicerParams,
    syn_queue: Optional[FifoQueue] = None,
    on_decision: Optional[DecisionHook] = None,
) -> Outcome:
    """Police one arriving packet.

    A packet that opens a new detection period triggers the rollover first
    and is then counted in the new period.
    """
    found = _lookup(table, pkt.source, params, pkt.arrival, pkt.kind, syn_queue)
    if found is Outcome.DENIED:
        return found
    if found is Outcome.SYN_QUEUED:
        return Outcome.SYN_QUEUED if syn_queue.append(pkt) else Outcome.DROPPED_BY_QUEUE
    entry = found
    if pkt.arrival > entry.period_start + params.period:
        decision = rollover_period(entry, table, params, pkt.arrival)
        if on_decision is not None:
            on_decision(pkt.arrival, decision)
    entry.received += 1
    if entry.received > entry.window:
        entry.dropped += 1
        return Outcome.DROPPED_BY_WINDOW
    if not q.append(pkt):
        entry.dropped += 1
        return Outcome.DROPPED_BY_QUEUE
    return Outcome.ENQUEUED


@dataclass
class BurstResult:
    enqueued: int = 0
    window_dropped: int = 0
    queue_dropped: int = 0
    denied: int = 0
    syn_queued: int = 0


def process_burst(
    table: FlowTable,
    q: FifoQueue,
    source: int,
    count: int,
    now: int,
    params: PolicerParams,
    kind: PacketKind = PacketKind.REGULAR,
    syn_queue: Optional[FifoQueue] = None,
    on_decision: Optional[DecisionHook] = None,
) -> BurstResult:
    """Police ``count`` packets from one source arriving in the same tick.

    Gives the same counters and queue contents as ``count`` back-to-back
    calls to ``process_packet``.
    """
    res = BurstResult()
    if count <= 0:
        return res
    found = _lookup(table, source, params, now, kind, syn_queue)
    if found is Outcome.DENIED:
        res.denied = count
        return res
    if found is Outcome.SYN_QUEUED:
        res.syn_queued = syn_queue.push(source, count, now)
        res.queue_dropped = count - res.syn_queued
        return res
    entry = found
    if now > entry.period_start + params.period:
        decision = rollover_period(entry, table, params, now)
        if on_decision is not None:
            on_decision(now, decision)
    room = math.floor(entry.window) - entry.received
    ok = count if room >= count else max(room, 0)
    entry.received += count
    accepted = q.push(source, ok, now) if ok else 0
    res.enqueued = accepted
    res.window_dropped = count - ok
    res.queue_dropped = ok - accepted
    entry.dropped += count - accepted
    return res


def drain_queue(q: CongestionQueue, budget_ticks: int) -> list[PacketRecord]:
    """Serve ``q`` for ``budget_ticks`` ticks and return the delivered packets."""
    if budget_ticks < 1:
        raise ValueError("budget_ticks must be >= 1")
    return q.pop_packets(q.drain_budget(budget_ticks))


def promote_source(table: FlowTable, source: int, params: PolicerParams, now: int) -> Optional[FlowEntry]:
    """Accept a source whose handshake completed through the SYN queue."""
    table.allowlist.add(source)
    return admit_flow(table, source, params, now)


class DecisionLog:
    """CSV sink for rate-limiting decisions: ``t,flow,old_W,new_W,packetLoss,halved``."""

    header = ("t", "flow", "old_W", "new_W", "packetLoss", "halved")

    def __init__(self, stream: TextIO):
        self._w = csv.writer(stream)
        self._w.writerow(self.header)

    def __call__(self, t: int, d: DecisionOutcome) -> None:
        self._w.writerow((t, d.flow_id, repr(d.old_window), repr(d.new_window), repr(d.packet_loss), int(d.halved)))


__all__ = [
    "AdmissionError",
    "BurstResult",
    "CongestionQueue",
    "DecisionLog",
    "DecisionOutcome",
    "Outcome",
    "drain_queue",
    "process_burst",
    "process_packet",
    "promote_source",
    "rate_limiting_decision",
    "rollover_period",
    "syn_queue_for",
]
