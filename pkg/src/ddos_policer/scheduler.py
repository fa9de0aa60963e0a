"""Static flood filters, victim-defined rules and the weighted fair queuing link.

Packets are routed by an ordered rule list (first match wins) into named
queues, each with its own buffer. The link serves the queues in a
work-conserving weighted fashion: every backlogged queue is guaranteed its
weight times the link rate, within one packet, and capacity a queue cannot
use is shared among the others in proportion to their weights.
"""

from __future__ import annotations

import enum
import ipaddress
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import FifoQueue, PacketKind, PacketRecord

BLOCK = "__block__"

# Reflection/amplification services with their well-known UDP ports. Shipped as
# data so deployments can extend or trim the list.
AMPLIFICATION_SERVICES: dict[str, int] = {
    "ntp": 123,
    "dns": 53,
    "ssdp": 1900,
    "snmp": 161,
    "chargen": 19,
    "qotd": 17,
    "ripv1": 520,
}
SERVICE_BY_PORT = {port: name for name, port in AMPLIFICATION_SERVICES.items()}


class Action(enum.Enum):
    QUEUE = "queue"
    BLOCK = "block"


class Layer(enum.Enum):
    USER = "user"    # victim policies, always in force
    FLOOD = "flood"  # static amplification filters, only while defending
    DEFAULT = "default"


@dataclass(frozen=True)
class Match:
    services: frozenset[str] = frozenset()
    kinds: frozenset[PacketKind] = frozenset()
    networks: tuple[ipaddress.IPv4Network, ...] = ()
    sources: frozenset[int] = frozenset()

    @property
    def is_catch_all(self) -> bool:
        return not (self.services or self.kinds or self.networks or self.sources)

    def __call__(self, pkt: PacketRecord) -> bool:
        if self.services and pkt.service not in self.services:
            return False
        if self.kinds and pkt.kind not in self.kinds:
            return False
        if self.sources and pkt.source not in self.sources:
            return False
        if self.networks:
            addr = ipaddress.IPv4Address(pkt.source)
            if not any(addr in net for net in self.networks):
                return False
        return True

    @classmethod
    def from_dict(cls, d: dict) -> "Match":
        services = set()
        for s in d.get("services", []):
            if isinstance(s, int) or str(s).isdigit():
                s = SERVICE_BY_PORT.get(int(s), f"udp/{int(s)}")
            services.add(str(s).lower())
        return cls(
            services=frozenset(services),
            kinds=frozenset(PacketKind(k) for k in d.get("kinds", [])),
            networks=tuple(ipaddress.IPv4Network(n) for n in d.get("networks", [])),
            sources=frozenset(int(s) for s in d.get("sources", [])),
        )

    def to_dict(self) -> dict:
        out: dict = {}
        if self.services:
            out["services"] = sorted(self.services)
        if self.kinds:
            out["kinds"] = sorted(k.value for k in self.kinds)
        if self.networks:
            out["networks"] = [str(n) for n in self.networks]
        if self.sources:
            out["sources"] = sorted(self.sources)
        return out


@dataclass(frozen=True)
class ClassifierRule:
    match: Match
    target_queue: Optional[str]
    action: Action = Action.QUEUE
    layer: Layer = Layer.FLOOD

    def __post_init__(self):
        if self.action is Action.QUEUE and not self.target_queue:
            raise ValueError("queueing rules need a target queue")

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierRule":
        return cls(
            match=Match.from_dict(d.get("match", {})),
            target_queue=d.get("queue"),
            action=Action(d.get("action", "queue")),
            layer=Layer(d.get("layer", "flood")),
        )

    def to_dict(self) -> dict:
        out = {"match": self.match.to_dict(), "action": self.action.value, "layer": self.layer.value}
        if self.target_queue:
            out["queue"] = self.target_queue
        return out


def amplification_rules(queue: str = "udp", action: Action = Action.QUEUE,
                        services: Iterable[str] = AMPLIFICATION_SERVICES) -> list[ClassifierRule]:
    return [
        ClassifierRule(Match(services=frozenset({s})), queue if action is Action.QUEUE else None, action, Layer.FLOOD)
        for s in services
    ]


@dataclass
class QueueSpec:
    name: str
    weight: float
    buffer_capacity: Optional[int] = None
    dedicated: bool = False  # premium queue: summaries report its drops as a guarantee check

    @classmethod
    def from_dict(cls, d: dict) -> "QueueSpec":
        return cls(d["name"], float(d["weight"]), d.get("buffer_capacity"), bool(d.get("dedicated", False)))

    def to_dict(self) -> dict:
        return {"name": self.name, "weight": self.weight, "buffer_capacity": self.buffer_capacity,
                "dedicated": self.dedicated}


@dataclass
class SchedulerConfig:
    queues: list[QueueSpec]
    rules: list[ClassifierRule]
    link_capacity: float  # packets per tick
    policed_queue: Optional[str] = None

    def __post_init__(self):
        # victim rules take precedence over the flood filters
        order = {Layer.USER: 0, Layer.FLOOD: 1, Layer.DEFAULT: 2}
        self.rules = sorted(self.rules, key=lambda r: order[r.layer])

    @property
    def default_queue(self) -> Optional[str]:
        for rule in self.rules:
            if rule.match.is_catch_all and rule.action is Action.QUEUE:
                return rule.target_queue
        return None

    def queue(self, name: str) -> QueueSpec:
        for q in self.queues:
            if q.name == name:
                return q
        raise KeyError(name)

    def problems(self) -> list[str]:
        out = []
        names = [q.name for q in self.queues]
        if not self.queues:
            out.append("scheduler needs at least one queue")
        if len(set(names)) != len(names):
            out.append(f"QueueSpec names must be unique: {names}")
        total = math.fsum(q.weight for q in self.queues)
        if self.queues and abs(total - 1.0) > 1e-9:
            out.append(f"QueueSpec weights must sum to 1 (got {total:g})")
        for q in self.queues:
            if not 0 < q.weight <= 1:
                out.append(f"QueueSpec {q.name!r} weight {q.weight} outside (0, 1]")
            if q.buffer_capacity is not None and q.buffer_capacity < 1:
                out.append(f"QueueSpec {q.name!r} buffer_capacity must be >= 1")
        for r in self.rules:
            if r.action is Action.QUEUE and r.target_queue not in names:
                out.append(f"ClassifierRule targets unknown queue {r.target_queue!r}")
        if not self.rules or not (self.rules[-1].match.is_catch_all):
            out.append("ClassifierRule list must end with a catch-all default rule")
        if self.link_capacity < 1:
            out.append(f"link_capacity must be >= 1 packet/tick (got {self.link_capacity:g})")
        if self.policed_queue is not None and self.policed_queue not in names:
            out.append(f"policed_queue {self.policed_queue!r} is not a queue")
        return out

    def validate(self) -> "SchedulerConfig":
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))
        return self


def classify(rules: list[ClassifierRule], pkt: PacketRecord, active: bool = True) -> str:
    """Queue name for ``pkt``, or ``BLOCK``.

    While the defense is idle only victim rules and the default rule apply.
    """
    for rule in rules:
        if not active and rule.layer is Layer.FLOOD:
            continue
        if rule.match(pkt):
            return BLOCK if rule.action is Action.BLOCK else rule.target_queue
    raise LookupError("no rule matched; the rule list lacks a default")


class EnqueueResult(enum.Enum):
    ACCEPTED = "accepted"
    DROPPED_FULL = "dropped_full"


def enqueue(queue: FifoQueue, pkt: PacketRecord) -> EnqueueResult:
    return EnqueueResult.ACCEPTED if queue.append(pkt) else EnqueueResult.DROPPED_FULL


def default_buffer(weight: float, link_capacity: float, tick_seconds: float, delay_seconds: float = 0.2) -> int:
    """Buffer holding ``delay_seconds`` worth of the queue's weighted rate."""
    return max(1, math.ceil(weight * link_capacity * delay_seconds / tick_seconds))


@dataclass
class SchedulerState:
    queues: dict[str, FifoQueue]
    lag: dict[str, float] = field(default_factory=dict)
    link_credit: float = 0.0
    transmitted: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, config: SchedulerConfig, tick_seconds: float = 0.01) -> "SchedulerState":
        queues = {}
        for q in config.queues:
            cap = q.buffer_capacity or default_buffer(q.weight, config.link_capacity, tick_seconds)
            queues[q.name] = FifoQueue(cap)
        return cls(queues, {n: 0.0 for n in queues}, 0.0, {n: 0 for n in queues})

    @property
    def backlog(self) -> int:
        return sum(len(q) for q in self.queues.values())


def water_fill(capacity: float, weights: dict[str, float], demand: dict[str, float]) -> dict[str, float]:
    """Weighted max-min fair split of ``capacity`` over ``demand``."""
    alloc = {n: 0.0 for n in weights}
    active = {n for n in weights if demand.get(n, 0) > 0}
    remaining = capacity
    while active and remaining > 1e-12:
        wsum = sum(weights[n] for n in active)
        done = {n for n in active if demand[n] - alloc[n] <= remaining * weights[n] / wsum}
        if not done:
            for n in active:
                alloc[n] += remaining * weights[n] / wsum
            remaining = 0.0
            break
        for n in done:
            remaining -= demand[n] - alloc[n]
            alloc[n] = float(demand[n])
        active -= done
    return alloc


def schedule_tick(config: SchedulerConfig, state: SchedulerState) -> dict[str, int]:
    """Decide how many packets each queue transmits this tick.

    The tick's capacity is split as a weighted max-min fair fluid allocation
    over the current backlogs, so a backlogged queue is owed at least its
    weight times the link rate and capacity others cannot use is shared by
    weight. Whole packets cannot follow a fluid split exactly; what a queue was
    owed but not sent (or sent beyond what it was owed) carries over as lag
    while it stays backlogged, and packets go to the most-owed queue first.
    """
    state.link_credit += config.link_capacity
    capacity = math.floor(state.link_credit + 1e-9)
    state.link_credit -= capacity

    order = {q.name: i for i, q in enumerate(config.queues)}
    weight = {q.name: q.weight for q in config.queues}
    backlog = {n: len(q) for n, q in state.queues.items()}
    send = {n: 0 for n in backlog}
    fluid = water_fill(capacity, weight, backlog)
    owed = {n: state.lag.get(n, 0.0) + fluid[n] for n, b in backlog.items() if b > 0}

    left = min(capacity, sum(backlog.values()))
    # bulk: everything but the last packet owed
    for n, o in owed.items():
        give = min(backlog[n], max(0, math.floor(o) - 1), left)
        send[n] += give
        left -= give
    # the rest in chunks, most-owed queue first
    while left > 0:
        n = max((m for m in owed if send[m] < backlog[m]), key=lambda m: (owed[m] - send[m], -order[m]))
        give = min(left, backlog[n] - send[n], max(1, math.floor(owed[n] - send[n])))
        send[n] += give
        left -= give

    for n in backlog:
        state.lag[n] = owed[n] - send[n] if n in owed and send[n] < backlog[n] else 0.0
        state.transmitted[n] = state.transmitted.get(n, 0) + send[n]
    return send


def serve_tick(config: SchedulerConfig, state: SchedulerState) -> dict[str, list[tuple[int, int]]]:
    """Run ``schedule_tick`` and pop the chosen packets as ``(source, n)`` runs."""
    counts = schedule_tick(config, state)
    return {n: state.queues[n].pop(k) for n, k in counts.items() if k}
